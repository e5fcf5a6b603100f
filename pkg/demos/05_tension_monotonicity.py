# %% [markdown]
# # Surface tension and staircase monotonicity
#
# A staircase boundary forces a step through the box.  The ratio of its
# partition function to the flat one, taken as the box height M grows, gives
# τ_L; extrapolating in 1/L gives the surface tension.

# %%
import numpy as np

from gsos.analysis import check_monotonicity, estimate_tau
from gsos.model import ModelParams
from gsos.verify import monotonicity_inputs

# %%
est = estimate_tau(0.0, ModelParams(1.0, 3.0), [2, 3, 4, 5], window=(0, 1), M_list=[2, 3, 4, 5, 6])
print("tau_L:", np.round(est.tau_L, 4), "converged:", est.all_converged)
print(f"extrapolated tau = {est.tau:.4f} +- {est.tau_err:.4f}")

# %% [markdown]
# Raising a staircase can only lower the ratio.  Both the product and the
# shift inequalities are checked on every pair of two-step staircases.

# %%
A, B = monotonicity_inputs()
rep = check_monotonicity(A, B, 2, [3, 4, 5, 6, 7], ModelParams(1.0, 2.0))
print(f"{len(rep.entries)} checks, {rep.n_unconverged} unconverged in M, "
      f"worst margin {rep.worst:.3e}, holds: {rep.holds()}")
