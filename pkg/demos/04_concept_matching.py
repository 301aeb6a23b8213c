"""Matching batch components against the concepts seen so far.

Columns are compared by absolute cosine similarity, paired with a maximum
weight assignment, and pairs below the threshold count as new concepts.
"""
import numpy as np

from driftcp import MatchOptions, best_assignment, find_concept_overlap, similarity_matrix

rng = np.random.default_rng(4)
old = np.linalg.qr(rng.standard_normal((30, 3)))[0]

# %% The batch sees concept 2 (sign flipped), concept 0 slightly perturbed,
# and one direction orthogonal to everything known.
fresh = np.linalg.qr(np.column_stack([old, rng.standard_normal(30)]))[0][:, 3]
nudged = old[:, 0] + 0.05 * rng.standard_normal(30)
batch = np.column_stack([-old[:, 2], nudged / np.linalg.norm(nudged), fresh])

sim = similarity_matrix(old, batch)
print("similarity (old rows, batch columns):")
print(np.round(sim, 3))
print("assignment:", best_assignment(sim))

res = find_concept_overlap(old, batch, MatchOptions(threshold=0.6))
print("batch columns matched:", res.overlap_batch, "-> old columns", res.overlap_old)
print("new concepts:", res.new_concepts, " missing old concepts:", res.unmatched_old)
