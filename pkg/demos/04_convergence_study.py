"""Full delta-convergence study through the harness, as the CLI would run it.

Writes results.csv, summary.json and plot_converge.svg under
demos/out/reference_2d (the path is relative to the config file) and prints the fitted rates.

    python demos/04_convergence_study.py
"""
from pathlib import Path

from cage_homog.harness import load_config, run_converge_delta

here = Path(__file__).parent
cfg = load_config(here / "configs" / "reference_2d.yaml", "converge")
table = run_converge_delta(cfg)
for norm, fit in table.fits.items():
    if fit["slope"] is not None:
        print(f"{norm:22s} slope {fit['slope']:+.3f}  (log residual {fit['residual']:.3f})")
for name, ok in table.notes["checks"].items():
    print(f"{name:34s} {'ok' if ok else 'NOT MET'}")
print(f"outputs in {cfg.output_dir}")
