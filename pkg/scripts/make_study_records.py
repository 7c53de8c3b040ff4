"""Build data/study_records.csv: 1000 synthetic bug records whose cross
tabulations equal the reference study counts.

Individual records are not published, so the file is a reconstruction.
Every reported joint table (sub-cause x symptom, symptom x stage,
root cause x level) and marginal (framework totals, per-framework Crash and
Incorrect Functionality counts, per-framework API-misuse sub-causes) holds
exactly; pairings the tables do not pin down are filled deterministically.

    python scripts/make_study_records.py [output.csv]
"""

from __future__ import annotations

import sys
from collections import Counter
from pathlib import Path

from deltafuzz.analytics import RootCause as R
from deltafuzz.analytics import Stage, SubCause as S, Symptom as Y, TaxonomyRecord, dump_records, study_records_path
from deltafuzz.coverage import ArchLevel as L

SYMPTOMS = [Y.Crash, Y.IncorrectFunctionality, Y.BuildFailure, Y.PoorPerformance, Y.Hang, Y.Unreported]

# (root cause, sub-cause) -> counts per symptom in SYMPTOMS order
CAUSE_SYMPTOM = [
    (R.IncorrectAlgorithmImpl, S.DLRelated, [75, 32, 3, 4, 0, 7]),
    (R.IncorrectAlgorithmImpl, S.DLUnrelated, [19, 8, 0, 1, 0, 3]),
    (R.TypeIssue, S.TensorTypeIssue, [68, 23, 1, 2, 0, 6]),
    (R.TypeIssue, S.ConventionalTypeIssue, [27, 9, 3, 1, 2, 0]),
    (R.Misconfiguration, None, [8, 3, 123, 0, 0, 0]),
    (R.TensorShapeMisalignment, None, [80, 39, 1, 0, 0, 2]),
    (R.ApiMisuse, S.ConditionMissingOrRedundancy, [6, 5, 2, 0, 0, 0]),
    (R.ApiMisuse, S.ApiMissingOrRedundancy, [13, 7, 0, 0, 0, 1]),
    (R.ApiMisuse, S.WrongApiArgs, [18, 9, 1, 1, 0, 5]),
    (R.ApiMisuse, S.WrongApiName, [14, 11, 3, 3, 0, 3]),
    (R.ApiMisuse, S.WrongApiReceiver, [9, 4, 1, 2, 0, 0]),
    (R.EnvironmentIncompatibility, None, [49, 8, 25, 1, 1, 2]),
    (R.IncorrectExceptionHandling, S.MissingException, [12, 9, 0, 0, 0, 0]),
    (R.IncorrectExceptionHandling, S.SpuriousException, [2, 1, 0, 0, 0, 0]),
    (R.IncorrectExceptionHandling, S.WrongExceptionMessage, [18, 13, 0, 0, 0, 0]),
    (R.IncorrectAssignment, None, [27, 22, 3, 1, 0, 0]),
    (R.NumericalIssue, None, [11, 21, 1, 1, 0, 0]),
    (R.Others, None, [14, 9, 8, 1, 0, 1]),
    (R.ApiIncompatibility, S.ExternalIncompatibility, [10, 3, 7, 1, 0, 0]),
    (R.ApiIncompatibility, S.InternalIncompatibility, [7, 1, 0, 0, 0, 0]),
    (R.ConcurrencyIssue, None, [17, 6, 0, 2, 0, 1]),
    (R.DependentModuleIssue, None, [10, 0, 6, 0, 0, 0]),
]

STAGES = [Stage.Installation, Stage.Preprocessing, Stage.Training, Stage.Deployment, Stage.UtilityOperation]
SYMPTOM_STAGE = {
    Y.Crash: [2, 20, 350, 65, 77],
    Y.IncorrectFunctionality: [4, 9, 154, 28, 48],
    Y.BuildFailure: [166, 0, 13, 5, 4],
    Y.PoorPerformance: [1, 2, 14, 2, 2],
    Y.Hang: [0, 0, 2, 1, 0],
    Y.Unreported: [0, 1, 18, 9, 3],
}

LEVELS = [L.UserLevelAPI, L.GraphLevelImpl, L.OperationImpl, L.GeneralUtility, L.EnvDependentProcessing]
CAUSE_LEVEL = {  # Misconfiguration bugs have no level
    R.IncorrectAlgorithmImpl: [29, 51, 50, 18, 4],
    R.TypeIssue: [35, 21, 43, 37, 6],
    R.TensorShapeMisalignment: [16, 31, 47, 28, 0],
    R.ApiMisuse: [41, 20, 27, 24, 6],
    R.EnvironmentIncompatibility: [7, 15, 18, 8, 34],
    R.IncorrectExceptionHandling: [17, 9, 14, 14, 1],
    R.IncorrectAssignment: [17, 7, 19, 7, 3],
    R.NumericalIssue: [4, 4, 16, 9, 0],
    R.Others: [8, 5, 11, 3, 3],
    R.ApiIncompatibility: [8, 3, 3, 5, 1],
    R.ConcurrencyIssue: [6, 7, 8, 4, 1],
    R.DependentModuleIssue: [5, 2, 4, 1, 0],
}

FRAMEWORKS = ["TensorFlow", "PyTorch", "MXNet", "DL4J"]
PER_FRAMEWORK = 250
FRAMEWORK_SYMPTOM = {Y.Crash: [122, 106, 142, 144], Y.IncorrectFunctionality: [43, 79, 56, 65]}
FRAMEWORK_API_MISUSE = {  # sub-cause -> per framework
    S.ConditionMissingOrRedundancy: [3, 3, 3, 4],
    S.ApiMissingOrRedundancy: [4, 5, 3, 9],
    S.WrongApiReceiver: [4, 2, 6, 4],
    S.WrongApiName: [7, 9, 5, 13],
    S.WrongApiArgs: [10, 7, 9, 8],
}


def build() -> list[TaxonomyRecord]:
    rows = []  # [root, sub, symptom, stage, level, framework]
    for root, sub, counts in CAUSE_SYMPTOM:
        for symptom, n in zip(SYMPTOMS, counts):
            rows += [[root, sub, symptom, None, None, None] for _ in range(n)]

    # stages: within each symptom, configuration-style causes take the earliest stages
    early = {R.Misconfiguration: 0, R.DependentModuleIssue: 1, R.EnvironmentIncompatibility: 2, R.ApiIncompatibility: 3}
    for symptom, counts in SYMPTOM_STAGE.items():
        group = sorted((r for r in rows if r[2] is symptom), key=lambda r: early.get(r[0], 9))
        stages = [s for s, n in zip(STAGES, counts) for _ in range(n)]
        assert len(group) == len(stages), symptom
        for r, s in zip(group, stages):
            r[3] = s

    for root, counts in CAUSE_LEVEL.items():
        group = [r for r in rows if r[0] is root]
        levels = [lv for lv, n in zip(LEVELS, counts) for _ in range(n)]
        for r, lv in zip(group, levels):
            r[4] = lv

    # frameworks: symptom budgets per framework, API-misuse sub-causes pinned first
    budget = {}
    for i, fw in enumerate(FRAMEWORKS):
        budget[fw] = Counter({sym: counts[i] for sym, counts in FRAMEWORK_SYMPTOM.items()})
        budget[fw]["other"] = PER_FRAMEWORK - sum(budget[fw].values())

    def slot(sym):
        return sym if sym in FRAMEWORK_SYMPTOM else "other"

    for sub, counts in FRAMEWORK_API_MISUSE.items():
        group = [r for r in rows if r[1] is sub]
        for fw, n in zip(FRAMEWORKS, counts):
            for _ in range(n):
                # take the row whose symptom slot has the most budget left in this framework
                r = max((r for r in group if r[5] is None), key=lambda r: budget[fw][slot(r[2])])
                r[5] = fw
                budget[fw][slot(r[2])] -= 1
    k = 0
    for r in rows:
        if r[5] is not None:
            continue
        for _ in range(len(FRAMEWORKS)):
            fw = FRAMEWORKS[k % len(FRAMEWORKS)]
            k += 1
            if budget[fw][slot(r[2])] > 0:
                break
        else:
            fw = next(f for f in FRAMEWORKS if budget[f][slot(r[2])] > 0)
        r[5] = fw
        budget[fw][slot(r[2])] -= 1
    assert all(v == 0 for b in budget.values() for v in b.values()), budget

    ids = Counter()
    prefix = {"TensorFlow": "TF", "PyTorch": "PT", "MXNet": "MX", "DL4J": "DJ"}
    out = []
    for root, sub, symptom, stage, level, fw in sorted(rows, key=lambda r: FRAMEWORKS.index(r[5])):
        ids[fw] += 1
        out.append(TaxonomyRecord(f"{prefix[fw]}-{ids[fw]:03d}", fw, root, symptom, stage, level, sub))
    return out


def main(argv: list[str]) -> int:
    path = Path(argv[1]) if len(argv) > 1 else study_records_path()
    records = build()
    dump_records(records, path)
    print(f"wrote {len(records)} records to {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
