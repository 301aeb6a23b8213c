"""Dense three-way tensors, unfoldings and the Khatri-Rao product.

Run with ``python3 demos/01_tensors.py``.
"""
import numpy as np

from driftcp import DenseTensor3, FactorModel, khatri_rao, matricize, reconstruct, relative_error
from driftcp.tensor import concat_mode3

# %% A tensor is stored mode-1 fastest, so a flat vector maps onto
# (i, j, k) with i changing quickest.
t = DenseTensor3(np.arange(24.0), dims=(2, 3, 4))
print("dims:", t.dims)
print("entry (1, 2, 3):", t.data[1, 2, 3])

# %% Each unfolding lays one mode along the rows.
for mode in (1, 2, 3):
    print(f"mode-{mode} unfolding shape:", matricize(t, mode).shape)

# %% A CP model rebuilds a tensor from three factor matrices, and its
# mode-1 unfolding equals A times the Khatri-Rao product of C and B.
rng = np.random.default_rng(0)
A, B, C = rng.random((4, 2)), rng.random((5, 2)), rng.random((6, 2))
model = FactorModel(A, B, C, np.ones(2))
X = reconstruct(model)
print("unfolding identity holds:", np.allclose(matricize(X, 1), A @ khatri_rao(C, B).T))

# %% Batches of a stream are appended along the third mode.
both = concat_mode3(X, X)
print("stacked dims:", both.dims, "relative error vs itself:", relative_error(X, X))
