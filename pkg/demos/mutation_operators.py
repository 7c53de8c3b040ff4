"""Walk through the five mutation operators on a small program."""

import numpy as np

from deltafuzz import parse
from deltafuzz.dsl import format_stmt
from deltafuzz.mutation import MutationOperator, applicable_sites, apply, pick_and_mutate, rotate

program = parse("""\
let a = tensor f32 [3,4] {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}
let s = softmax(a; axis=1)
observe s
""")

sites = applicable_sites(program)
print(f"{len(sites)} applicable sites")
for op in MutationOperator:
    mine = [s for s in sites if s.operator is op]
    print(f"  {op.value:<17} {len(mine):>3}  e.g. {mine[0].describe()}")

print("\none mutant per operator:")
for op in MutationOperator:
    site = next(s for s in sites if s.operator is op)
    m = apply(program, site)
    print(f"  {site.describe()}")
    print(f"    {format_stmt(m.program.statements[site.stmt])}")

print("\nrotating [[1,2],[3,4]]:")
grid = np.array([[1, 2], [3, 4]])
for angle in (90, 180, 270):
    print(f"  {angle:>3}: {rotate(grid, angle).tolist()}")
print("  30 on a 3x3 grid:")
print(rotate(np.arange(1, 10).reshape(3, 3), 30))

print("\nthree rounds of random mutation:")
rng = np.random.default_rng(4)
current, lineage = program, ()
for _ in range(3):
    m = pick_and_mutate(current, rng, lineage)
    print(f"  order {m.order}: {m.lineage[-1][1].describe()}  valid={m.statically_valid}")
    current, lineage = m.program, m.lineage
