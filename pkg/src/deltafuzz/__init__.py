"""Differential fuzzing of a reference tensor engine across fault-injected versions."""

from .analytics import Band, RootCause, Stage, Symptom, cohen_kappa, correlation_band, spearman
from .campaign import Campaign, CampaignConfig, init_pool
from .dsl import Program, parse, print_program, validate
from .mutation import MutationOperator, applicable_sites, pick_and_mutate
from .oracle import OracleConfig, compare, run_all, vote
from .tensor import DType, OpKind, StructureKind, TensorValue
from .versions import VersionRegistry, demo_registry, load_manifest

__version__ = "0.1.0"

__all__ = [
    "Band", "RootCause", "Stage", "Symptom", "cohen_kappa", "correlation_band", "spearman",
    "Campaign", "CampaignConfig", "init_pool", "Program", "parse", "print_program", "validate",
    "MutationOperator", "applicable_sites", "pick_and_mutate", "OracleConfig", "compare", "run_all", "vote",
    "DType", "OpKind", "StructureKind", "TensorValue", "VersionRegistry", "demo_registry", "load_manifest",
]
