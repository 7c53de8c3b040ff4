import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr
from sklearn.metrics import cohen_kappa_score

from deltafuzz.analytics import (Band, DegenerateInput, EmptyInput, LengthMismatch, RootCause, Stage, SubCause,
                                 Symptom, TaxonomyRecord, cohen_kappa, correlation_band, crosstab,
                                 describe_correlation, distribution, dump_records, is_bug_fixing_title,
                                 kappa_details, load_records, mid_ranks, study_records_path, spearman)
from deltafuzz.coverage import ArchLevel


# --- keyword filter ------------------------------------------------------------

@pytest.mark.parametrize("title,expected", [
    ("Fix crash in conv2d padding", True),
    ("Add new feature for exporting", False),
    ("Correct the gradient of RNN bias", True),
    ("fixes #123: wrong shape", True),
    ("Bugfix for the loader", True),
    ("Prefix handling in paths", False),
    ("Incorrect result", False),
    ("ERROR message cleanup", True),
])
def test_bug_fixing_titles(title, expected):
    assert is_bug_fixing_title(title) is expected


def test_tags_are_searched():
    assert is_bug_fixing_title("Update docs", tags=["kind/bug"])
    assert not is_bug_fixing_title("Update docs", tags=["docs"])


# --- kappa -------------------------------------------------------------------------

def kappa_oracle(a, b):
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    cats = set(a) | set(b)
    p_e = sum((a.count(c) / n) * (b.count(c) / n) for c in cats)
    return (p_o - p_e) / (1 - p_e)


def test_kappa_hand_example():
    # confusion [[20,5],[10,15]]: rows rater A, columns rater B
    a = ["y"] * 25 + ["n"] * 25
    b = ["y"] * 20 + ["n"] * 5 + ["y"] * 10 + ["n"] * 15
    res = kappa_details(a, b)
    assert res.observed == Fraction(7, 10) and res.expected == Fraction(1, 2)
    assert res.kappa == 0.4 and not res.degenerate


def test_kappa_identical_and_degenerate():
    assert cohen_kappa(list("abca"), list("abca")) == 1.0
    assert cohen_kappa(["x"] * 5, ["x"] * 5) == 1.0
    res = kappa_details(["x"] * 4, ["y"] * 4)
    assert res.kappa == 0.0 and not res.degenerate  # p_e is 0 here, kappa is exactly 0
    with pytest.raises(LengthMismatch):
        cohen_kappa([1], [1, 2])
    with pytest.raises(EmptyInput):
        cohen_kappa([], [])


def test_kappa_degenerate_flagged():
    res = kappa_details(["x", "x"], ["x", "x"])
    assert res.kappa == 1.0 and not res.degenerate
    # p_e can only reach 1 when both raters use one shared label, so disagreement is impossible there;
    # the flag is kept for label sets where equality is not transitive
    class Odd:
        def __eq__(self, other):
            return False

        def __hash__(self):
            return 0
    o = Odd()
    res = kappa_details([o, o], [o, o])
    assert res.expected == 1 and res.observed == 0 and res.kappa == 0.0 and res.degenerate


def random_labels(rng, n):
    k = rng.randint(1, 4)
    return [rng.randrange(k) for _ in range(n)], [rng.randrange(k) for _ in range(n)]


def test_kappa_matches_oracles_on_500_inputs():
    rng = random.Random(2024)
    checked = 0
    while checked < 500:
        a, b = random_labels(rng, rng.randint(1, 12))
        p_e = sum((a.count(c) / len(a)) * (b.count(c) / len(b)) for c in set(a) | set(b))
        if p_e == 1:
            continue
        k = cohen_kappa(a, b)
        assert abs(k - kappa_oracle(a, b)) <= 1e-12
        assert abs(k - cohen_kappa_score(a, b)) <= 1e-12
        checked += 1


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=20))
def test_kappa_symmetric(pairs):
    a, b = [x for x, _ in pairs], [y for _, y in pairs]
    assert cohen_kappa(a, b) == cohen_kappa(b, a)


# --- spearman ----------------------------------------------------------------------

def spearman_oracle(xs, ys):
    def ranks(v):
        return [sum(w < x for w in v) + (sum(w == x for w in v) + 1) / 2 for x in v]
    rx, ry = ranks(xs), ranks(ys)
    n = len(xs)
    mx, my = sum(rx) / n, sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    xs, ys = [1, 2, 2, 4], [1, 3, 2, 4]
    assert abs(spearman(xs, ys) - spearman_oracle(xs, ys)) <= 1e-12
    assert mid_ranks([1, 2, 2, 4]) == [1, Fraction(5, 2), Fraction(5, 2), 4]


def test_spearman_matches_oracles_on_500_inputs():
    rng = random.Random(7)
    checked = 0
    while checked < 500:
        n = rng.randint(2, 10)
        xs = [rng.randint(0, 5) for _ in range(n)]
        ys = [rng.randint(0, 5) for _ in range(n)]
        if len(set(xs)) < 2 or len(set(ys)) < 2:
            continue
        rho = spearman(xs, ys)
        assert abs(rho - spearman_oracle(xs, ys)) <= 1e-12
        assert abs(rho - spearmanr(xs, ys).statistic) <= 1e-12
        checked += 1


def test_spearman_errors():
    with pytest.raises(DegenerateInput):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateInput):
        spearman([1], [1])
    with pytest.raises(LengthMismatch):
        spearman([1, 2], [1, 2, 3])


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=2, max_size=15))
def test_spearman_rank_invariance(pairs):
    xs, ys = [x for x, _ in pairs], [y for _, y in pairs]
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return
    rho = spearman(xs, ys)
    assert spearman([x ** 3 + 7 for x in xs], ys) == rho
    assert spearman(xs, [math.exp(y / 10) for y in ys]) == rho
    assert -1.0 <= rho <= 1.0


# --- bands ------------------------------------------------------------------------

@pytest.mark.parametrize("rho,band", [
    (1.0, Band.VeryStrong), (0.85, Band.VeryStrong), (0.8, Band.VeryStrong),
    (0.7999999, Band.Strong), (0.6, Band.Strong), (0.4, Band.Moderate), (0.59, Band.Moderate),
    (0.39, Band.WeakOrNone), (0.0, Band.WeakOrNone), (-0.9, Band.WeakOrNone),
])
def test_bands(rho, band):
    assert correlation_band(rho) is band


def test_negative_note_and_range():
    assert describe_correlation(-0.9) == "weak or none (negative)"
    with pytest.raises(ValueError):
        correlation_band(1.5)


# --- distributions ------------------------------------------------------------------

def rec(i, symptom=Symptom.Crash, stage=Stage.Training, root=RootCause.TypeIssue, level=ArchLevel.OperationImpl):
    return TaxonomyRecord(f"B{i}", "F", root, symptom, stage, level)


def test_single_record_is_100_percent():
    rows = distribution([rec(0)], "symptom")
    assert [(r.label, r.count, r.percent) for r in rows] == [("Crash", 1, 100.0)]


def test_ties_follow_enum_order():
    rows = distribution([rec(0, Symptom.Hang), rec(1, Symptom.Crash)], "symptom")
    assert [r.label for r in rows] == ["Crash", "Hang"]


@settings(max_examples=300)
@given(st.lists(st.sampled_from(list(Symptom)), min_size=1, max_size=60))
def test_percents_sum_to_100(symptoms):
    rows = distribution([rec(i, s) for i, s in enumerate(symptoms)], "symptom")
    # each row rounds independently, so the slack grows with the number of labels
    assert abs(sum(r.percent for r in rows) - 100.0) <= 0.005 * len(rows) + 1e-9
    assert sum(r.count for r in rows) == len(symptoms)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.sampled_from(list(Symptom)), st.sampled_from(list(Stage))), min_size=1, max_size=40),
       st.randoms())
def test_crosstab_marginals_and_permutation(pairs, rnd):
    records = [rec(i, s, g) for i, (s, g) in enumerate(pairs)]
    tab = crosstab(records, "symptom", "stage")
    rows = {r.label: r.count for r in distribution(records, "symptom")}
    cols = {r.label: r.count for r in distribution(records, "stage")}
    assert dict(zip(tab.rows, tab.row_totals)) == rows
    assert dict(zip(tab.cols, tab.col_totals)) == cols
    assert tab.total == len(records)
    shuffled = records[:]
    rnd.shuffle(shuffled)
    assert crosstab(shuffled, "symptom", "stage") == tab


def test_sub_cause_must_match_parent():
    with pytest.raises(ValueError):
        TaxonomyRecord("x", "F", RootCause.TypeIssue, Symptom.Crash, Stage.Training, None, SubCause.WrongApiName)


def test_enum_parse_is_lenient_on_spelling():
    assert Symptom.parse("incorrect functionality") is Symptom.IncorrectFunctionality
    assert Stage.parse("utility-operation") is Stage.UtilityOperation
    with pytest.raises(ValueError):
        Symptom.parse("Explosion")


# --- record files ----------------------------------------------------------------------

def test_records_round_trip(tmp_path):
    records = [rec(0), rec(1, Symptom.Hang, level=None),
               TaxonomyRecord("B2", "G", RootCause.ApiMisuse, Symptom.Crash, Stage.Deployment,
                              ArchLevel.UserLevelAPI, SubCause.WrongApiArgs)]
    p = tmp_path / "r.csv"
    dump_records(records, p)
    assert load_records(p) == records


@pytest.mark.parametrize("body,needle", [
    ("bug_id,framework,root_cause,symptom,stage,level\nA,F,TypeIssue,Explosion,Training,\n", "Explosion"),
    ("bug_id,framework,root_cause,symptom,stage,level\nA,F,TypeIssue,Crash,Training,\nA,F,TypeIssue,Crash,Training,\n",
     "duplicate"),
    ("bug_id,framework,symptom\nA,F,Crash\n", "missing columns"),
])
def test_load_errors(tmp_path, body, needle):
    p = tmp_path / "r.csv"
    p.write_text(body)
    with pytest.raises(ValueError, match=needle):
        load_records(p)


def test_tab_separated(tmp_path):
    p = tmp_path / "r.tsv"
    p.write_text("bug_id\tframework\troot_cause\tsymptom\tstage\tlevel\nA\tF\tTypeIssue\tCrash\tTraining\t\n")
    assert load_records(p)[0].symptom is Symptom.Crash


# --- bundled records reproduce the reference study numbers --------------------------------------

@pytest.fixture(scope="module")
def study():
    return load_records(study_records_path())


def test_study_symptom_and_stage_shares(study):
    assert len(study) == 1000
    sym = {r.label: (r.count, r.percent) for r in distribution(study, "symptom")}
    assert sym == {"Crash": (514, 51.4), "Incorrect Functionality": (243, 24.3), "Build Failure": (188, 18.8),
                   "Unreported": (31, 3.1), "Poor Performance": (21, 2.1), "Hang": (3, 0.3)}
    stage = {r.label: (r.count, r.percent) for r in distribution(study, "stage")}
    assert stage["Training"] == (551, 55.1)
    assert [stage[s.value][0] for s in Stage] == [173, 32, 551, 110, 134]


def test_study_crosstab(study):
    tab = crosstab(study, "root_cause", "symptom")
    assert tab.cell(RootCause.Misconfiguration, Symptom.BuildFailure) == 123
    assert {r.label: r.count for r in distribution(study, "framework")} == {
        "TensorFlow": 250, "PyTorch": 250, "MXNet": 250, "DL4J": 250}


def test_six_label_rounding_slack():
    # 1/32 rounds up to 3.13 five times, 27/32 rounds up to 84.38
    symptoms = list(Symptom)[1:] + [Symptom.Crash] * 27
    rows = distribution([rec(i, s) for i, s in enumerate(symptoms)], "symptom")
    assert sum(r.percent for r in rows) == pytest.approx(100.03)
