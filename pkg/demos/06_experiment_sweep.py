"""A scaled-down version of the full method x window x run comparison.

Every (method, imputation) pair is swept over postoperative windows and
repeated splits; the report carries per-cell precision/recall/F1 rows plus
mean and standard error aggregates, ready for plotting F1-vs-window curves.
The full-size protocol (14 methods, windows 7..20, 10 runs) is the "full"
method grid with default settings; see the README for the CLI equivalent.
"""
from mtsk.cohort import (
    Missingness, MissingnessSpec, apply_missingness, generate_synthetic_cohort,
)
from mtsk.evaluate import (
    ExperimentConfig, MethodSpec, run_experiment, write_aggregate_csv, write_rows_csv,
)

cohort = generate_synthetic_cohort(30, 90, 5, 20, 1.5, seed=0)
masked = apply_missingness(cohort, MissingnessSpec(Missingness.MAR, 0.3, seed=1))

config = ExperimentConfig(
    methods=(
        MethodSpec("tck"),
        MethodSpec("lps"),
        MethodSpec("gak", "zero"),
        MethodSpec("linear", "zero"),
        MethodSpec("linear", "mean"),
    ),
    windows=(7, 10, 14, 20),
    runs=3,
    base_seed=0,
    supervised_baseline=True,
    tck_q=10,
    lps_trees=60,
)
report = run_experiment(masked, config, n_workers=4)
assert not report.errors

print("mean test F1 by window (3 runs):")
header = "  window " + "".join(f"{m.label:>14s}" for m in config.methods)
print(header)
for w in config.windows:
    cells = [
        f"{report.mean_f1(m.kernel, m.imputation_label, w, 'test'):14.3f}"
        for m in config.methods
    ]
    print(f"  {w:6d} " + "".join(cells))

sup = report.mean_f1("tck+sup", "none", 20, "test")
unsup = report.mean_f1("tck", "none", 20, "test")
print(f"\nsupervised parity at window 20: tck {unsup:.3f} vs tck+sup {sup:.3f}")

write_rows_csv(report, "sweep_rows.csv")
write_aggregate_csv(report, "sweep_aggregate.csv")
print("wrote sweep_rows.csv and sweep_aggregate.csv")
