# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # A miniature sweep
#
# The harness runs simulate, tangent and limit for every ladder point and
# writes `sweep.csv` and `fits.csv`.  Rows are content-addressed, so an
# interrupted sweep resumes where it stopped.

# %%
import csv
import tempfile
from pathlib import Path

from betaplane.harness import RunConfig, SweepConfig, run_sweep

base = RunConfig(0.1, 2.0, nx=16, ny=16, t_burnin_min=10, t_burnin_max=40, burnin_window=5,
                 t_horizon=20, t_tangent=10, n_tangent=2)
out = Path(tempfile.mkdtemp()) / "sweep"
rows = run_sweep(SweepConfig(base, (0.1, 0.03, 0.01), (2.0,)), out)
for r in rows:
    print(f"eps={r['epsilon']:<5} regime={r['regime']:<8} sup_wtilde={r['sup_wtilde']:.4f} "
          f"lambda_1={r['lambda_1']:.3f} N*={r['n_star']}")

# %%
with open(out / "fits.csv") as fh:
    for rec in csv.DictReader(fh):
        print(rec["observable"], round(float(rec["slope"]), 3))
