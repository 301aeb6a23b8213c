"""Choosing a CP rank with the core consistency diagnostic.

The score is close to 100 when the fitted model is appropriate and drops
sharply once the model has more components than the data supports.
"""
import numpy as np

from driftcp import AlsOptions, FactorModel, core_consistency, estimate_rank, reconstruct

rng = np.random.default_rng(3)
A, B, C = (rng.standard_normal((n, 3)) for n in (20, 20, 20))
X = reconstruct(FactorModel(A, B, C, np.ones(3)))

# %% The sweep fits each candidate rank and keeps the largest one whose
# score is at least 80.
est = estimate_rank(X, 5, AlsOptions(init="gevd"))
print("chosen rank:", est.rank)
for rank, score, err in est.scores:
    print(f"  r={rank}  core consistency={score:8.2f}  fit error={err:.2e}")

# %% The score can also be computed for any fitted model directly.
print("score at the chosen rank:", round(core_consistency(X, est.model), 4))

# %% The oracle mode injects a known rank and skips the sweep.
print("oracle:", estimate_rank(X, 5, oracle=2))
