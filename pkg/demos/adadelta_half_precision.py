"""An Adadelta step that runs on every version in float32, then crashes one
version after its gradient literal is mutated to float16."""

from deltafuzz import demo_registry, parse, print_program
from deltafuzz.mutation import MutationOperator, MutationSite, apply
from deltafuzz.oracle import classify_symptom, compare, run_all, vote
from deltafuzz.tensor import DType

SOURCE = """\
let w = tensor f32 [2,2] {0.5, -1.0, 2.0, 0.25}
let g = tensor f32 [2,2] {0.1, 0.2, -0.3, 0.4}
let u = adadelta_update(w, g; learning_rate=1.0, rho=0.95, epsilon=1e-08)
observe u
"""

registry = demo_registry()


def judge(program):
    outcomes = run_all(program, registry)
    verdict = compare(outcomes)
    print(print_program(program))
    for vid, outcome in outcomes.items():
        print(f"  {vid}: {type(outcome).__name__}")
    print("  verdict:", verdict.kind.value)
    if verdict.is_bug:
        blame = vote(verdict, outcomes)
        print("  symptom:", classify_symptom(verdict).value)
        print("  blamed:", ", ".join(blame.blamed), f"({blame.resolution.value})")
    print()


seed = parse(SOURCE)
judge(seed)

mutant = apply(seed, MutationSite(1, MutationOperator.TensorType, DType.F16))
judge(mutant.program)
