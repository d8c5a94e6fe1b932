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
# # Volume elements and their traces
#
# Six tangent vectors ride along with the flow.  Each re-orthonormalisation
# gives the stretches of the volume they span, and the trace of the
# linearised operator on that span splits into a Laplacian part and the
# zonal and nonzonal advection parts.

# %%
import numpy as np

from betaplane.dynamics import FlowParams, evolve, initial_state, make_forcing
from betaplane.spectral import make_lattice
from betaplane.tangent import run_tangent, volume_trace_check

lat = make_lattice(32, 32)
params = FlowParams(0.1, 2.0)
forcing = make_forcing(lat, 2.0)
state = evolve(initial_state(lat, params, 1.0, 0), forcing, 20.0, 0.01)

run = run_tangent(state, forcing, n=6, t_horizon=20.0, dt=0.01)
print("exponents   ", np.round(run.exponents, 4))
print("mean traces ", np.round(run.mean_traces, 3))
print("N* =", run.n_star, " Kaplan-Yorke =", run.kaplan_yorke)

# %% [markdown]
# A few rows of the trace record.  `tr_a0` pairs the perturbation with
# advection by the base flow and vanishes identically.

# %%
for row in run.rows[::50]:
    print(f"t={row.t:7.2f} lap={row.tr_lap:8.4f} bbar={row.tr_bbar:+.2e} "
          f"btilde={row.tr_btilde:+.2e} a0={row.tr_a0:+.1e}")

# %% [markdown]
# The rate of change of log-volume equals minus the trace.  The central
# difference residual falls by four each time the step halves.

# %%
chk = volume_trace_check(state, forcing, 6, state.t + 1.0)
print(chk.residuals, chk.orders)
