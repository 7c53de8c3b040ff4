"""Coverage of the seed corpus against a corpus of its mutants, per
architecture level, and the overlap between the two."""

from pathlib import Path

import numpy as np

import deltafuzz
from deltafuzz.coverage import collect, coverage_table, format_table, overlap, region_name
from deltafuzz.dsl import iter_seed_files, parse_file
from deltafuzz.mutation import pick_and_mutate

registry = deltafuzz.demo_registry()
seeds = [parse_file(f) for f in iter_seed_files(Path(deltafuzz.__file__).parent / "data" / "seeds")]

rng = np.random.default_rng(1)
mutants = []
for p in seeds:
    for _ in range(10):
        mutants.append(pick_and_mutate(p, rng).program)

a = collect(seeds, "v2.8.0", registry, "seeds")
b = collect(mutants, "v2.8.0", registry, "mutants")
print(format_table(coverage_table(a), "seeds"))
print()
print(format_table(coverage_table(b), "mutants"))
print()
for key, n in overlap([a, b]).items():
    print(f"{region_name(key, ['seeds', 'mutants']):<18} {n}")
