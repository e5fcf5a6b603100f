# %% [markdown]
# # Entropic repulsion
#
# Conditioned to stay nonnegative, the surface lifts off the floor.  The
# repulsion height H(L) is the largest h with P(φ(0) ≥ h) ≥ 5β/L; its growth
# in L is fitted against the p-dependent form (c log L for p = 1).

# %%
import warnings

import numpy as np

from gsos.analysis import central_tail_exact, compute_H, fit_table1, typical_height
from gsos.model import ModelParams

# %% [markdown]
# The median conditioned central height rises slowly with the box size.

# %%
for L in (8, 16):
    t = typical_height(L, ModelParams(1.0, 0.75), 5000, seed=L)
    print(f"L={L}: median {t['median']:.0f}, mean {t['mean']:.3f} +- {t['err']:.3f}")

# %% [markdown]
# With an exact central tail, H(L) can be followed to very large L.

# %%
P = ModelParams(1.0, 1.0)
hs, tail = central_tail_exact(P)
print("P(phi(0) >= h):", np.array2string(tail, precision=3))
Ls = [2 ** k for k in range(4, 21)]
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    H = [compute_H(L, P, tail=(hs, tail)).H for L in Ls]
fit = fit_table1(Ls, H, P.p)
print("H:", H)
print(f"fit {fit.form}: c = {fit.c:.3f} +- {fit.c_err:.3f}  (1/(4 beta) = {1 / (4 * P.beta):.3f})")
