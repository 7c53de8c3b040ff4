"""Command-line entry point.

Exit codes: 0 success with no bugs, 1 bugs found, 2 usage or input error,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any

import numpy as np

from . import analytics, coverage
from .campaign import Campaign, CampaignConfig, EmptyPool, load_checkpoint
from .dsl import ParseError, iter_seed_files, parse, parse_file, print_program, validate
from .mutation import applicable_sites, apply, pick_and_mutate
from .oracle import (OracleConfig, VerdictKind, classify_symptom, cluster_key, compare, default_step_budget,
                     outcome_to_json, run_all, verdict_to_json, vote)
from .tensor import TensorError
from .versions import ManifestError, demo_manifest_path, load_manifest

EXIT_OK, EXIT_BUGS, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3

DEMO_SEEDS = Path(__file__).parent / "data" / "seeds"


class UsageError(Exception):
    pass


def _emit(args, payload: dict, text: str) -> None:
    if args.format == "structured":
        print(json.dumps(payload, sort_keys=True, default=_jsonable))
    else:
        print(text)


def _jsonable(x: Any):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, (set, frozenset, tuple)):
        return list(x)
    return str(x)


# --- config merging ----------------------------------------------------------------

def _setting(args, name: str, default: Any = None) -> Any:
    """Flag value if given, else config-file value, else ``default``."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    cfg = getattr(args, "_config", {})
    for key in (name, name.replace("_", "-")):
        if key in cfg:
            return cfg[key]
    return default


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data


def _registry(args):
    path = _setting(args, "faults") or demo_manifest_path()
    try:
        manifest = load_manifest(path)
    except OSError as exc:
        raise UsageError(f"cannot read fault manifest: {exc}") from None
    except ManifestError as exc:
        raise UsageError(f"bad fault manifest {path}: {exc}") from None
    versions = _setting(args, "versions")
    if versions is None:
        select = None
    elif isinstance(versions, int) or (isinstance(versions, str) and versions.isdigit()):
        select = int(versions)
    else:
        select = [v.strip() for v in versions.split(",")] if isinstance(versions, str) else list(versions)
    try:
        reg = manifest.registry(select)
    except ManifestError as exc:
        raise UsageError(str(exc)) from None
    if len(reg) < 2:
        raise UsageError("need at least 2 versions")
    return reg


def _oracle(args) -> OracleConfig:
    try:
        return OracleConfig(float(_setting(args, "abs_tol", 1e-6)), float(_setting(args, "rel_tol", 1e-5)),
                            bool(_setting(args, "nan_equal", True)))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _step_budget(args) -> int:
    value = _setting(args, "step_budget")
    if value is None:
        try:
            return default_step_budget()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if int(value) <= 0:
        raise UsageError("--step-budget must be positive")
    return int(value)


# --- fuzz --------------------------------------------------------------------------

def cmd_fuzz(args) -> int:
    registry = _registry(args)
    seeds = Path(_setting(args, "seeds") or DEMO_SEEDS)
    if not seeds.is_dir():
        raise UsageError(f"seed directory {seeds} does not exist")
    iterations = _setting(args, "iterations")
    seconds = _setting(args, "seconds")
    if iterations is None and seconds is None:
        iterations = 1000
    try:
        cfg = CampaignConfig(seeds, int(_setting(args, "rng_seed", 0)),
                             int(iterations) if iterations is not None else None,
                             float(seconds) if seconds is not None else None,
                             _step_budget(args), _oracle(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    checkpoint = _setting(args, "checkpoint")
    try:
        if args.resume:
            if not checkpoint or not Path(checkpoint).exists():
                raise UsageError("--resume needs an existing --checkpoint file")
            campaign = load_checkpoint(checkpoint, cfg, registry)
        else:
            campaign = Campaign(cfg, registry)
    except EmptyPool as exc:
        raise UsageError(str(exc)) from None
    out = _setting(args, "out")
    summary_path = _setting(args, "summary") or (f"{out}.summary.json" if out else None)
    mode = "a" if args.resume else "w"
    stream = open(out, mode, encoding="utf-8", newline="\n") if out else None
    try:
        summary = campaign.run(stream, checkpoint=checkpoint, checkpoint_every=int(_setting(args, "checkpoint_every", 0)))
        if stream is not None:
            stream.write(json.dumps(summary.to_json(), sort_keys=True) + "\n")
    finally:
        if stream is not None:
            stream.close()
    payload = summary.to_json()
    if summary_path:
        Path(summary_path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    lines = [f"iterations      {summary.iterations}",
             f"pool            {summary.initial_pool} seeds -> {summary.pool_size} entries",
             f"reports         {summary.reports}",
             f"unique clusters {summary.unique_clusters}"]
    for c in summary.clusters:
        blamed, symptom, signature, faults = c["key"]
        lines.append(f"  #{c['id']:<3} {symptom:<22} blamed={','.join(blamed) or '-'} "
                     f"faults={','.join(faults) or '-'} x{c['count']}" + (f"  [{signature}]" if signature else ""))
    _emit(args, payload, "\n".join(lines))
    return EXIT_BUGS if summary.unique_clusters else EXIT_OK


# --- run ---------------------------------------------------------------------------

def _read_program(path: str):
    try:
        return parse_file(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    except ParseError as exc:
        raise UsageError(f"{path}:{exc}") from None


def cmd_run(args) -> int:
    program = _read_program(args.file)
    registry = _registry(args)
    cfg = _oracle(args)
    outcomes = run_all(program, registry, _step_budget(args))
    verdict = compare(outcomes, cfg)
    payload: dict[str, Any] = {"outcomes": {v: outcome_to_json(o) for v, o in outcomes.items()},
                               "verdict": verdict_to_json(verdict)}
    lines = [f"{v:<10} {_describe(o)}" for v, o in outcomes.items()]
    lines.append(f"verdict: {verdict.kind.value}")
    if verdict.kind is not VerdictKind.CONSISTENT:
        blame = vote(verdict, outcomes)
        symptom = classify_symptom(verdict)
        key = cluster_key(verdict, blame, outcomes, cfg)
        payload.update(blame=list(blame.blamed), resolution=blame.resolution.value,
                       symptom=symptom.name, cluster_key=key.to_json())
        lines.append(f"blame: {','.join(blame.blamed) or '-'} ({blame.resolution.value})")
        lines.append(f"symptom: {symptom.value}")
    _emit(args, payload, "\n".join(lines))
    return EXIT_BUGS if verdict.is_bug else EXIT_OK


def _describe(o) -> str:
    d = outcome_to_json(o)
    if d["kind"] == "Value":
        parts = []
        for name, t in o.values.items():
            parts.append(f"{name}={t.dtype.value}{list(t.shape)} {np.array2string(t.array(), precision=6, separator=',')}")
        return "Value " + "; ".join(p.replace("\n", "") for p in parts)
    if d["kind"] == "Crash":
        return f"Crash at stmt {d['stmt']}: {d['message']}"
    if d["kind"] == "Hang":
        return f"Hang at stmt {d['stmt']}"
    return f"StaticReject: {d['error']}"


# --- mutate ------------------------------------------------------------------------

def cmd_mutate(args) -> int:
    program = _read_program(args.file)
    try:
        typed = validate(program)
    except TensorError as exc:
        raise UsageError(f"{args.file}: program does not validate: {exc}") from None
    sites = applicable_sites(typed)
    if args.list:
        _emit(args, {"sites": [s.to_json() for s in sites]},
              "\n".join(f"{i:>4}  {s.describe()}" for i, s in enumerate(sites)) or "(no applicable sites)")
        return EXIT_OK
    if args.apply is not None:
        if not 0 <= args.apply < len(sites):
            raise UsageError(f"site index {args.apply} out of range (0..{len(sites) - 1})")
        mutant = apply(typed, sites[args.apply])
    else:
        if not sites:
            raise UsageError("program has no applicable mutation")
        mutant = pick_and_mutate(typed, np.random.default_rng(int(_setting(args, "rng_seed", 0))))
    text = print_program(mutant.program)
    _emit(args, {"program": text, "site": mutant.lineage[-1][1].to_json(),
                 "statically_valid": mutant.statically_valid, "error": mutant.error},
          text.rstrip("\n") + ("" if mutant.statically_valid else f"\n# statically ill: {mutant.error}"))
    return EXIT_OK


# --- stats -------------------------------------------------------------------------

def _lines(path: str) -> list[str]:
    try:
        return [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _numbers(path: str) -> list[float]:
    try:
        return [float(x) for x in _lines(path)]
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _records(path: str):
    try:
        return analytics.load_records(path)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def cmd_stats(args) -> int:
    try:
        if args.stats_cmd == "kappa":
            res = analytics.kappa_details(_lines(args.a), _lines(args.b))
            _emit(args, {"kappa": res.kappa, "observed": str(res.observed), "expected": str(res.expected),
                         "degenerate": res.degenerate},
                  f"kappa {res.kappa!r}" + (" (degenerate: constant labels)" if res.degenerate else ""))
        elif args.stats_cmd == "spearman":
            rho = analytics.spearman(_numbers(args.a), _numbers(args.b))
            band = analytics.correlation_band(rho)
            _emit(args, {"rho": rho, "band": band.name, "negative": rho < 0},
                  f"rho {rho!r} ({analytics.describe_correlation(rho)})")
        elif args.stats_cmd == "dist":
            rows = analytics.distribution(_records(args.records), args.axis)
            _emit(args, {"axis": args.axis, "rows": [asdict(r) for r in rows]}, analytics.format_distribution(rows))
        elif args.stats_cmd == "crosstab":
            tab = analytics.crosstab(_records(args.records), args.axis1, args.axis2)
            _emit(args, {"rows": list(tab.rows), "cols": list(tab.cols), "cells": [list(r) for r in tab.cells],
                         "row_totals": list(tab.row_totals), "col_totals": list(tab.col_totals), "total": tab.total},
                  analytics.format_crosstab(tab))
        else:
            titles = _lines(args.file)
            hits = [t for t in titles if analytics.is_bug_fixing_title(t)]
            _emit(args, {"matched": hits, "total": len(titles)}, "\n".join(hits))
    except (analytics.LengthMismatch, analytics.EmptyInput, analytics.DegenerateInput, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return EXIT_OK


# --- coverage ----------------------------------------------------------------------

def _corpus(spec: str) -> tuple[str, list]:
    label, _, path = spec.rpartition("=")
    d = Path(path)
    if not d.is_dir():
        raise UsageError(f"corpus directory {d} does not exist")
    programs = []
    for f in iter_seed_files(d):
        try:
            programs.append(parse_file(f))
        except ParseError as exc:
            raise UsageError(f"{f}:{exc}") from None
    return label or d.name, programs


def cmd_coverage(args) -> int:
    corpora = args.corpus or [str(DEMO_SEEDS)]
    if args.overlap and not 2 <= len(corpora) <= 3:
        raise UsageError(f"--overlap needs 2 or 3 corpora, got {len(corpora)}")
    registry = _registry(args)
    version = args.version or registry.ids[0]
    if version not in registry:
        raise UsageError(f"unknown version {version!r}; known: {', '.join(registry.ids)}")
    budget = _step_budget(args)
    kind = coverage.ElementKind(args.kind) if args.kind else None
    universe = coverage.universe()
    if kind is not None:
        universe = {k: e for k, e in universe.items() if e.kind is kind}
    sets = []
    for spec in corpora:
        label, programs = _corpus(spec)
        cov = coverage.collect(programs, version, registry, label, budget)
        sets.append(coverage.CoverageSet(label, frozenset(cov.covered & universe.keys())))
    if args.export:
        sys.stdout.write(coverage.export_lines(sets[0], universe))
        return EXIT_OK
    if args.overlap:
        regions = coverage.overlap(sets)
        labels = [s.label for s in sets]
        payload = {"sets": labels, "regions": [{"members": [labels[i] for i in k], "count": n}
                                               for k, n in regions.items()]}
        text = "\n".join(f"{coverage.region_name(k, labels):<40} {n}" for k, n in regions.items())
        _emit(args, payload, text)
        return EXIT_OK
    payload = {"tables": []}
    texts = []
    for s in sets:
        rows = coverage.coverage_table(s, universe)
        payload["tables"].append({"label": s.label, "rows": [asdict(r) for r in rows]})
        texts.append(coverage.format_table(rows, f"{s.label} ({version})"))
    _emit(args, payload, "\n\n".join(texts))
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=["text", "structured"], default="text")
    common.add_argument("--config", help="JSON file with default values for flags")

    engine = argparse.ArgumentParser(add_help=False)
    engine.add_argument("--faults", help="fault manifest (default: bundled demo)")
    engine.add_argument("--versions", help="number of versions or comma-separated ids")
    engine.add_argument("--abs-tol", type=float)
    engine.add_argument("--rel-tol", type=float)
    engine.add_argument("--nan-equal", action=argparse.BooleanOptionalAction, default=None)
    engine.add_argument("--step-budget", type=int)

    p = argparse.ArgumentParser(prog="deltafuzz", description="Cross-version differential fuzzing of a small tensor engine.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    f = sub.add_parser("fuzz", parents=[common, engine], help="run a fuzzing campaign")
    f.add_argument("--seeds", help="directory of .tft seed programs (default: bundled)")
    budget = f.add_mutually_exclusive_group()
    budget.add_argument("--iterations", type=int)
    budget.add_argument("--seconds", type=float)
    f.add_argument("--rng-seed", type=int)
    f.add_argument("--out", help="report stream (JSON lines)")
    f.add_argument("--summary", help="summary file (default: OUT.summary.json)")
    f.add_argument("--checkpoint", help="campaign state file, rewritten as the run progresses")
    f.add_argument("--checkpoint-every", type=int)
    f.add_argument("--resume", action="store_true", help="continue from --checkpoint")
    f.set_defaults(func=cmd_fuzz)

    r = sub.add_parser("run", parents=[common, engine], help="run one program on every version")
    r.add_argument("file")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("mutate", parents=[common], help="inspect or apply mutation sites")
    m.add_argument("file")
    g = m.add_mutually_exclusive_group()
    g.add_argument("--list", action="store_true")
    g.add_argument("--apply", type=int, metavar="SITE_INDEX")
    m.add_argument("--rng-seed", type=int)
    m.set_defaults(func=cmd_mutate)

    s = sub.add_parser("stats", help="bug-taxonomy analytics")
    ss = s.add_subparsers(dest="stats_cmd", required=True)
    for name, helptext in (("kappa", "Cohen's kappa of two label files"),
                           ("spearman", "Spearman's rho of two number files")):
        x = ss.add_parser(name, parents=[common], help=helptext)
        x.add_argument("a")
        x.add_argument("b")
    axes = sorted([*analytics.AXES, "framework"])
    x = ss.add_parser("dist", parents=[common], help="distribution along one axis")
    x.add_argument("records")
    x.add_argument("axis", choices=axes)
    x = ss.add_parser("crosstab", parents=[common], help="cross tabulation of two axes")
    x.add_argument("records")
    x.add_argument("axis1", choices=axes)
    x.add_argument("axis2", choices=axes)
    x = ss.add_parser("filter-titles", parents=[common], help="keep bug-fixing pull request titles")
    x.add_argument("file")
    s.set_defaults(func=cmd_stats)

    c = sub.add_parser("coverage", parents=[common, engine], help="coverage tables and overlaps")
    c.add_argument("--corpus", action="append", metavar="[LABEL=]DIR")
    c.add_argument("--version")
    mode = c.add_mutually_exclusive_group()
    mode.add_argument("--table", action="store_true", default=True)
    mode.add_argument("--overlap", action="store_true")
    mode.add_argument("--export", action="store_true", help="covered element ids of the first corpus")
    c.add_argument("--kind", choices=[k.value for k in coverage.ElementKind])
    c.set_defaults(func=cmd_coverage)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args._config = _load_config(getattr(args, "config", None))
        return args.func(args)
    except UsageError as exc:
        print(f"deltafuzz: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001
        logging.getLogger("deltafuzz").exception("internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
