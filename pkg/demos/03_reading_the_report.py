"""Print the headline tables from a finished ``python -m circuitkit all`` run.

    python demos/03_reading_the_report.py runs/default
"""

import csv
import sys
from pathlib import Path

run = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/default")
report = run / "report"


def table(name):
    with open(report / name) as fh:
        return list(csv.DictReader(fh))


print("circuit validity (eval accuracy, circuit relative to full model)")
for r in table("validation.csv"):
    print(f"    {r['task']:5s} {float(r['density']):.2f}  ratio {float(r['ratio']):.3f}")

print("pre-edit NLL of the true object, medians")
for r in table("nll_pre_summary.csv"):
    print(f"    {r['variant']:22s} {float(r['median']):.3f}")

print("post-edit NLL of the new object across circuit sizes")
for r in table("sweep.csv"):
    print(f"    {float(r['density']):.2f}  circuit {float(r['circuit_median_post_nll_new']):.3f}"
          f"  complement {float(r['complement_median_post_nll_new']):.3f}")

print("where the 5% hierarchy circuit lives")
for r in table("composition.csv"):
    if r["circuit"] == "h@0.05":
        print(f"    {r['layer_type']:10s} kept {float(r['kept_fraction']):.3f}"
              f"  share {float(r['circuit_share']):.3f}")
