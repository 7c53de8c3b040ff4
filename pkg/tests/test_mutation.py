import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from deltafuzz.dsl import Let, Program, canonical_hash, parse, validate
from deltafuzz.mutation import (ANGLES, MutationOperator as Op, MutationSite, NoApplicableMutation, SiteMismatch,
                                SpecialKind, applicable_sites, apply, apply_site, choose_site, factorizations,
                                pick_and_mutate, pick_site, rotate, special_value)
from deltafuzz.tensor import DType, ParamType, StructureKind, TensorValue, convert_structure, element_count
from tests.strategies import tensors


def literal_program(t: TensorValue) -> Program:
    return parse("let a = tensor f32 [1] {0}\nobserve a").replace(0, Let("a", t))


def mutated_literal(t: TensorValue, site: MutationSite) -> TensorValue:
    return apply_site(literal_program(t), site).program.statements[0].value


# --- factorizations ----------------------------------------------------------

def brute_factorizations(n, max_rank=4):
    out = set()
    for rank in range(1, max_rank + 1):
        stack = [()]
        while stack:
            prefix = stack.pop()
            if len(prefix) == rank:
                if math.prod(prefix) == n:
                    out.add(prefix)
                continue
            for d in range(1, n + 1):
                if math.prod(prefix) * d <= n:
                    stack.append(prefix + (d,))
    return out


@pytest.mark.parametrize("n", [1, 2, 6, 7, 12, 16, 24])
def test_factorizations_match_brute_force(n):
    assert set(factorizations(n)) == brute_factorizations(n)


def test_shape_sites_for_3x4():
    t = TensorValue.from_values(DType.F32, [3, 4], list(range(12)))
    dims = {s.operand for s in applicable_sites(literal_program(t)) if s.operator is Op.TensorShape}
    assert {(2, 6), (4, 3), (12,), (1, 12), (6, 2), (2, 2, 3)} <= dims
    assert (3, 4) not in dims
    assert dims == brute_factorizations(12) - {(3, 4)}
    assert len(dims) == 64


def test_scalar_literal_has_no_shape_or_rotate_sites():
    t = TensorValue.from_values(DType.F32, [], [2.0])
    ops = {s.operator for s in applicable_sites(literal_program(t))}
    assert Op.TensorShape not in ops and Op.TensorRotate not in ops


def test_no_params_means_no_parameter_sites(seeds_dir):
    p = parse((seeds_dir / "s01_elementwise.tft").read_text())
    assert not [s for s in applicable_sites(p) if s.operator is Op.ParameterSpecial]


def test_parameter_sites_per_type():
    p = parse("let w = tensor f32 [2] {1,2}\nlet g = tensor f32 [2] {1,1}\n"
              "let u = adadelta_update(w, g; learning_rate=1.0, rho=0.95, epsilon=1e-08)\n"
              "let s = softmax(u; axis=0)\nobserve s")
    sites = [s for s in applicable_sites(p) if s.operator is Op.ParameterSpecial]
    per = Counter((s.stmt, s.param) for s in sites)
    assert per == {(2, "learning_rate"): 5, (2, "rho"): 5, (2, "epsilon"): 5, (3, "axis"): 4}
    assert not any(s.param == "axis" and s.operand is SpecialKind.NaN for s in sites)


def test_ragged_literals_get_rank2_shapes_only():
    r = TensorValue.ragged(DType.F32, [2, 3], [[1.0], [2.0, 3.0, 4.0]])
    shapes = {s.operand for s in applicable_sites(literal_program(r)) if s.operator is Op.TensorShape}
    assert shapes == {(1, 6), (3, 2), (6, 1)}


def test_sites_deterministic(seeds_dir):
    p = parse((seeds_dir / "s08_adadelta.tft").read_text())
    assert applicable_sites(p) == applicable_sites(p)


# --- rotation ----------------------------------------------------------------

TRIG = {30: ((0, Fraction(1, 2)), (Fraction(1, 2), 0)), 60: ((Fraction(1, 2), 0), (0, Fraction(1, 2))),
        120: ((Fraction(-1, 2), 0), (0, Fraction(1, 2))), 150: ((0, Fraction(-1, 2)), (Fraction(1, 2), 0)),
        210: ((0, Fraction(-1, 2)), (Fraction(-1, 2), 0)), 240: ((Fraction(-1, 2), 0), (0, Fraction(-1, 2)))}


def _ge(a: Fraction, b: Fraction, k: int) -> bool:
    """a + b*sqrt(3) >= k, decided exactly."""
    lhs = b  # compare b*sqrt3 against k - a
    rhs = k - a
    if lhs >= 0 and rhs <= 0:
        return True
    if lhs <= 0 and rhs > 0:
        return False
    if lhs > 0:
        return 3 * lhs * lhs >= rhs * rhs
    return 3 * lhs * lhs <= rhs * rhs


def exact_floor(a: Fraction, b: Fraction) -> int:
    k = math.floor(a + b * Fraction(17320508075688772, 10 ** 16))
    while not _ge(a, b, k):
        k -= 1
    while _ge(a, b, k + 1):
        k += 1
    return k


def rotate_oracle(grid, angle):
    h, w = len(grid), len(grid[0])
    (ca, cb), (sa, sb) = TRIG[angle]
    cy, cx = Fraction(h - 1, 2), Fraction(w - 1, 2)
    out = [[0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            x, y = j - cx, cy - i
            # source x' = c*x + s*y, y' = -s*x + c*y
            xj = (ca * x + sa * y + cx + Fraction(1, 2), cb * x + sb * y)
            yi = (cy - (-sa * x + ca * y) + Fraction(1, 2), -(-sb * x + cb * y))
            sj, si = exact_floor(*xj), exact_floor(*yi)
            if 0 <= si < h and 0 <= sj < w:
                out[i][j] = grid[si][sj]
    return out


def test_rotate_90_example():
    assert rotate(np.array([[1, 2], [3, 4]]), 90).tolist() == [[2, 4], [1, 3]]


@pytest.mark.parametrize("angle", [90, 180, 270])
@pytest.mark.parametrize("h,w", [(2, 3), (3, 3), (4, 1), (1, 5)])
def test_right_angles_follow_index_formula(angle, h, w):
    g = np.arange(h * w).reshape(h, w)
    out = rotate(g, angle)
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            src = {90: (j, w - 1 - i), 180: (h - 1 - i, w - 1 - j), 270: (h - 1 - j, i)}[angle]
            assert out[i, j] == g[src]


@pytest.mark.parametrize("angle", sorted(TRIG))
@pytest.mark.parametrize("h,w", [(1, 1), (2, 2), (3, 3), (3, 5), (4, 4), (5, 2), (6, 7)])
def test_oblique_rotation_matches_exact_oracle(angle, h, w):
    g = np.arange(1, h * w + 1).reshape(h, w)
    assert rotate(g, angle).tolist() == rotate_oracle(g.tolist(), angle)


def test_rank3_rotates_each_slice():
    g = np.arange(2 * 3 * 4).reshape(2, 3, 4)
    for angle in ANGLES:
        out = rotate(g, angle)
        for k in range(2):
            assert (out[k] == rotate(g[k], angle)).all()


def test_rotate_rejects_bad_angles():
    with pytest.raises(ValueError):
        rotate(np.zeros((2, 2)), 45)


grids = st.tuples(st.integers(0, 3), st.integers(1, 6), st.integers(1, 6)).flatmap(
    lambda s: st.lists(st.integers(-100, 100), min_size=max(1, s[0]) * s[1] * s[2], max_size=max(1, s[0]) * s[1] * s[2])
    .map(lambda v: np.array(v).reshape(((s[0],) if s[0] else ()) + (s[1], s[2]))))


@settings(max_examples=1000)
@given(grids)
def test_rot90_four_times_is_identity(g):
    out = g
    for _ in range(4):
        out = rotate(out, 90)
    assert out.shape == g.shape and (out == g).all()
    for theta in (90, 180, 270):
        assert (rotate(rotate(g, theta), 360 - theta) == g).all()


@settings(max_examples=1000)
@given(st.integers(1, 3), st.integers(1, 7), st.integers(1, 7), st.sampled_from([90, 180, 270]))
def test_right_angle_rotation_is_a_bijection(lead, h, w, angle):
    g = np.arange(lead * h * w).reshape(lead, h, w)
    out = rotate(g, angle)
    assert sorted(out.reshape(-1).tolist()) == list(range(lead * h * w))
    assert out.shape[1:] == ((w, h) if angle != 180 else (h, w))


# --- mutation properties -------------------------------------------------------

def sites_of(t, operator):
    return [s for s in applicable_sites(literal_program(t)) if s.operator is operator]


@settings(max_examples=1000)
@given(tensors(min_rank=0, max_rank=3, max_side=4), st.data())
def test_shape_mutation_preserves_count_and_bytes(t, data):
    sites = sites_of(t, Op.TensorShape)
    if not sites:
        assert element_count(t.shape) < 2 or t.kind is StructureKind.RAGGED
        return
    site = data.draw(st.sampled_from(sites))
    out = mutated_literal(t, site)
    assert element_count(out.shape) == element_count(t.shape)
    assert out.shape == site.operand
    assert out.data.tobytes() == t.data.tobytes()
    assert out.dtype is t.dtype


@settings(max_examples=1000)
@given(tensors(max_side=4), st.data())
def test_type_mutation_preserves_shape_and_structure(t, data):
    site = data.draw(st.sampled_from(sites_of(t, Op.TensorType)))
    out = mutated_literal(t, site)
    assert out.dtype is site.operand
    assert out.shape == t.shape and out.kind is t.kind


@settings(max_examples=1000)
@given(tensors(max_side=4, kinds=(StructureKind.DENSE,)), st.data())
def test_structure_mutation_round_trips(t, data):
    site = data.draw(st.sampled_from(sites_of(t, Op.TensorStructure)))
    out = mutated_literal(t, site)
    assert out.kind is site.operand
    back = convert_structure(out, StructureKind.DENSE)
    assert back.data.tobytes() == t.data.tobytes() and back.shape == t.shape and back == t


def test_type_mutation_f32_to_f16_rounds():
    t = TensorValue.from_values(DType.F32, [3], [0.1, 1.0 / 3, 2.5])
    out = mutated_literal(t, MutationSite(0, Op.TensorType, DType.F16))
    assert out.data.tolist() == np.array([0.1, 1.0 / 3, 2.5], dtype=np.float32).astype(np.float16).tolist()


def test_nonfinite_float_literal_skips_int_targets():
    t = TensorValue.from_values(DType.F32, [2], [1.0, math.inf])
    assert {s.operand for s in sites_of(t, Op.TensorType)} == {DType.BOOL, DType.F16, DType.F64}


def test_shape_example_3x4_to_2x6():
    t = TensorValue.from_values(DType.F32, [3, 4], list(range(12)))
    out = mutated_literal(t, MutationSite(0, Op.TensorShape, (2, 6)))
    assert out.shape == (2, 6) and out.data.tolist() == list(range(12))


# --- apply / errors ---------------------------------------------------------------

MATMUL = "let a = tensor f32 [2,3] {1,2,3,4,5,6}\nlet b = tensor f32 [3,4] {1,1,1,1,1,1,1,1,1,1,1,1}\n" \
         "let c = matmul(a, b)\nobserve c"


def test_ill_typed_mutant_is_kept_and_flagged():
    p = parse(MATMUL)
    m = apply(validate(p), MutationSite(0, Op.TensorShape, (3, 2)))
    assert not m.statically_valid and m.typed is None and "ShapeError" in m.error
    assert m.order == 1 and m.lineage[0][0] == canonical_hash(p)


def test_inapplicable_site_raises():
    p = parse(MATMUL)
    with pytest.raises(SiteMismatch):
        apply(p, MutationSite(2, Op.TensorRotate, 90))
    with pytest.raises(SiteMismatch):
        apply(p, MutationSite(0, Op.TensorShape, (5,)))


def test_lineage_grows():
    p = parse(MATMUL)
    rng = np.random.default_rng(1)
    m1 = pick_and_mutate(p, rng)
    m2 = pick_and_mutate(m1.program, rng, m1.lineage)
    assert m2.order == 2 and m2.lineage[1][0] == canonical_hash(m1.program)


def test_special_values():
    assert special_value(SpecialKind.Negate, ParamType.INT, DType.I32.min) == DType.I32.min
    assert special_value(SpecialKind.Negate, ParamType.INT, 3) == -3
    assert special_value(SpecialKind.Negate, ParamType.FLOAT, 0.5) == -0.5
    assert special_value(SpecialKind.Zero, ParamType.FLOAT, 0.5) == 0.0
    assert math.isnan(special_value(SpecialKind.NaN, ParamType.FLOAT, 0.5))
    assert special_value(SpecialKind.TypeMax, ParamType.FLOAT, 0.5) == float(np.finfo(np.float32).max)
    assert special_value(SpecialKind.TypeMin, ParamType.INT, 0) == -2 ** 31
    with pytest.raises(SiteMismatch):
        special_value(SpecialKind.NaN, ParamType.INT, 1)


def test_parameter_special_rewrites_the_param():
    p = parse("let a = tensor f32 [2,2] {1,2,3,4}\nlet s = softmax(a; axis=1)\nobserve s")
    m = apply(p, MutationSite(1, Op.ParameterSpecial, SpecialKind.Negate, "axis"))
    assert m.program.statements[1].param_dict == {"axis": -1} and m.statically_valid


# --- selection ---------------------------------------------------------------------

ALL_FIVE = "let a = tensor f32 [2,3] {1,2,3,4,5,6}\nlet s = softmax(a; axis=1)\nobserve s"


def test_operator_frequencies_are_uniform():
    sites = applicable_sites(parse(ALL_FIVE))
    assert {s.operator for s in sites} == set(Op)
    rng = np.random.default_rng(7)
    counts = Counter(choose_site(sites, rng).operator for _ in range(10_000))
    for op in Op:
        assert 0.18 <= counts[op] / 10_000 <= 0.22
    assert chisquare([counts[op] for op in Op]).pvalue > 0.001


def test_only_parameter_sites():
    sites = [s for s in applicable_sites(parse(ALL_FIVE)) if s.operator is Op.ParameterSpecial]
    rng = np.random.default_rng(0)
    assert all(choose_site(sites, rng).operator is Op.ParameterSpecial for _ in range(200))


def test_selection_is_deterministic():
    p = parse(ALL_FIVE)
    a = [pick_site(p, np.random.default_rng(42)) for _ in range(3)]
    assert a[0] == a[1] == a[2]
    assert pick_and_mutate(p, np.random.default_rng(5)).program == pick_and_mutate(p, np.random.default_rng(5)).program


def test_no_sites_raises():
    with pytest.raises(NoApplicableMutation):
        choose_site([], np.random.default_rng(0))
    p = parse("let a = tensor bool [] {true}\nobserve a")
    sites = applicable_sites(p)
    assert {s.operator for s in sites} == {Op.TensorType, Op.TensorStructure}
