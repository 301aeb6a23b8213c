"""Fitting a CP model with alternating least squares.

We plant a rank-3 model, fit it back at the true rank with each starting
strategy and look at the fit error and the recovered weights.
"""
import numpy as np

from driftcp import AlsOptions, FactorModel, cp_als, reconstruct, relative_error

rng = np.random.default_rng(1)
A, B, C = (rng.standard_normal((n, 3)) for n in (20, 20, 20))
X = reconstruct(FactorModel(A, B, C, np.ones(3)))

# %% Three starting points are available. The random start is the
# default; the two spectral starts usually converge within a few sweeps.
for init in ("random", "hosvd", "gevd"):
    m = cp_als(X, 3, AlsOptions(init=init, seed=7))
    print(f"{init:>6}: sweeps={len(m.history):3d}  error={relative_error(X, reconstruct(m)):.2e}")

# %% The fitted model is normalized: unit columns plus a weight vector,
# sorted by weight, with signs pushed into C.
m = cp_als(X, 3, AlsOptions(init="gevd"))
print("weights:", np.round(m.lam, 4))
print("column norms of A:", np.round(np.linalg.norm(m.A, axis=0), 12))
