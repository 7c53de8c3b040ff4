"""Agreement, rank correlation and distribution tables over the bundled
bug records."""

from collections import Counter

from deltafuzz.analytics import (Symptom, cohen_kappa, correlation_band, crosstab, distribution,
                                 format_crosstab, format_distribution, is_bug_fixing_title, load_records,
                                 study_records_path, spearman)

titles = ["Fix crash in conv2d padding", "Add new feature for exporting", "Correct the gradient of RNN bias",
          "Bump version to 2.1", "Handle error when the file is missing"]
for t in titles:
    print(f"{'bug-fix' if is_bug_fixing_title(t) else '       '}  {t}")

# two raters agree on 35 of 50 labels
a = ["yes"] * 25 + ["no"] * 25
b = ["yes"] * 20 + ["no"] * 5 + ["yes"] * 10 + ["no"] * 15
print("\nkappa:", cohen_kappa(a, b))

records = load_records(study_records_path())
print(f"\n{len(records)} records\n")
print(format_distribution(distribution(records, "symptom")))
print()
print(format_distribution(distribution(records, "stage")))
print()
print(format_crosstab(crosstab(records, "symptom", "stage")))

print("\nsymptom commonality between frameworks:")
per_fw = {}
for r in records:
    per_fw.setdefault(r.framework, Counter())[r.symptom] += 1
names = sorted(per_fw)
for i, x in enumerate(names):
    for y in names[i + 1:]:
        rho = spearman([per_fw[x][s] for s in Symptom], [per_fw[y][s] for s in Symptom])
        print(f"  {x:<10} {y:<10} rho={rho:.3f}  {correlation_band(rho).value}")
