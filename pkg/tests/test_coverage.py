import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltafuzz.coverage import (ArchLevel, CoverageElement, CoverageSet, ElementKind, TooManySets, collect,
                                coverage_table, export_lines, overlap, region_name, universe)
from deltafuzz.dsl import iter_seed_files, parse, parse_file


def test_two_set_regions():
    assert overlap([{1, 2, 3}, {2, 3, 4}]) == {(0,): 1, (1,): 1, (0, 1): 2}


def test_three_set_regions():
    r = overlap([{1, 2, 3}, {2, 3, 4}, {3}])
    assert r[(0, 1, 2)] == 1 and r[(0, 1)] == 1 and r[(2,)] == 0 and sum(r.values()) == 4
    assert len(r) == 7


def test_identical_sets_fill_the_intersection():
    s = {"a", "b", "c"}
    r = overlap([CoverageSet("x", frozenset(s)), CoverageSet("y", frozenset(s)), CoverageSet("z", frozenset(s))])
    assert r[(0, 1, 2)] == 3 and sum(r.values()) == 3


def test_set_count_limits():
    with pytest.raises(TooManySets):
        overlap([{1}, {2}, {3}, {4}])
    with pytest.raises(ValueError):
        overlap([{1}])


def test_region_names():
    assert region_name((0,), ["seeds", "mutants"]) == "only seeds"
    assert region_name((0, 1), ["seeds", "mutants"]) == "seeds & mutants"


def test_inclusion_exclusion_on_1000_triples():
    rng = random.Random(99)
    for _ in range(1000):
        u = range(rng.randint(0, 40))
        a, b, c = ({x for x in u if rng.random() < rng.random()} for _ in range(3))
        r = overlap([a, b, c])
        union = len(a) + len(b) + len(c) - len(a & b) - len(a & c) - len(b & c) + len(a & b & c)
        assert sum(r.values()) == union == len(a | b | c)
        assert sum(n for k, n in r.items() if 0 in k) == len(a)
        assert sum(n for k, n in r.items() if {0, 1} <= set(k)) == len(a & b)
        assert r[(0, 1, 2)] == len(a & b & c)


def fake_universe(n_per_level):
    out = {}
    for level, n in zip(ArchLevel, n_per_level):
        for i in range(n):
            eid = f"{level.name}.{i}"
            out[eid] = CoverageElement(eid, ElementKind.LINE, level)
    return out


def test_table_arithmetic():
    u = fake_universe([8, 4, 4, 4, 4])
    rows = coverage_table({"UserLevelAPI.0", "UserLevelAPI.1"}, u)
    assert rows[0].component == ArchLevel.UserLevelAPI.value and (rows[0].covered, rows[0].total, rows[0].percent) == (2, 8, 25.0)
    assert rows[-1].component == "Overall" and rows[-1].percent == 8.33
    assert all(r.percent == 100.0 for r in coverage_table(set(u), u))
    assert all(r.percent == 0.0 for r in coverage_table(set(), u))
    with pytest.raises(ValueError):
        coverage_table({"nope"}, u)


@settings(max_examples=300)
@given(st.lists(st.sampled_from(sorted(fake_universe([3, 5, 2, 4, 6]))), max_size=30), st.randoms())
def test_table_is_order_independent(ids, rnd):
    u = fake_universe([3, 5, 2, 4, 6])
    shuffled = ids[:]
    rnd.shuffle(shuffled)
    assert coverage_table(ids, u) == coverage_table(shuffled, u)


# --- collection on the real engine --------------------------------------------------

@pytest.fixture(scope="module")
def seed_programs(seeds_dir):
    return [parse_file(f) for f in iter_seed_files(seeds_dir)]


def test_universe_spans_every_level():
    u = universe()
    assert {e.component for e in u.values()} == set(ArchLevel)
    assert {e.kind for e in u.values()} == set(ElementKind)


def test_empty_corpus(registry):
    assert collect([], "v2.5.0", registry).covered == frozenset()


def test_collect_idempotent_and_order_free(registry, seed_programs):
    a = collect(seed_programs, "v2.5.0", registry)
    assert collect(seed_programs + seed_programs, "v2.5.0", registry).covered == a.covered
    assert collect(list(reversed(seed_programs)), "v2.5.0", registry).covered == a.covered
    assert coverage_table(a) == coverage_table(collect(list(reversed(seed_programs)), "v2.5.0", registry))


def test_elementwise_corpus_misses_matmul(registry):
    p = parse("let a = tensor f32 [2] {1,2}\nlet b = add(a, a)\nlet c = neg(b)\nobserve c")
    cov = collect([p], "v2.5.0", registry).covered
    assert "api.add" in cov and not any("matmul" in e for e in cov)


def test_monotone_in_corpus(registry, seed_programs):
    prev = frozenset()
    for i in range(1, len(seed_programs) + 1):
        cur = collect(seed_programs[:i], "v2.8.0", registry).covered
        assert prev <= cur
        prev = cur


def test_export_lines(registry, seed_programs):
    cov = collect(seed_programs[:2], "v2.5.0", registry)
    lines = export_lines(cov).splitlines()
    assert len(lines) == len(cov.covered) and lines == sorted(lines)
    eid, level = lines[0].split("\t")
    assert universe()[eid].component.value == level
