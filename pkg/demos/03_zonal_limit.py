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
# # The zonal limit
#
# As the Rossby number shrinks, the steady vorticity approaches the steady
# state of a one-dimensional heat equation for the zonal part.

# %%
from betaplane.dynamics import FlowParams, make_forcing
from betaplane.limit1d import ZonalField1D, decompose, h1_distance, heat_steady_state, steady_state_2d
from betaplane.spectral import l2_norm, make_lattice

lat = make_lattice(32, 32)
forcing = make_forcing(lat, 2.0)
wstar = heat_steady_state(ZonalField1D.from_2d(forcing.f))
print("heat steady state, sine coefficients:", wstar.sine_coefficients[:3])

# %%
for eps in (1e-1, 1e-2, 1e-3):
    st = steady_state_2d(FlowParams(eps, 2.0), forcing)
    _, zeta, wtilde = decompose(st.omega, wstar)
    print(f"eps={eps:g}: H1 distance {h1_distance(st.omega, wstar):.3e}, "
          f"||zeta|| {zeta.norm():.2e}, ||wtilde|| {l2_norm(wtilde):.3e}")

# %% [markdown]
# The H1 distance shrinks tenfold per decade of epsilon.  The nonzonal part
# is dominated by the balance between rotation and forcing, which makes it
# proportional to epsilon here.
