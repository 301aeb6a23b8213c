"""Fixed-rank streaming baseline.

Every batch is decomposed at one rank chosen up front. Components are
aligned to the first batch by optimal assignment on A similarity, A and B
are averaged over batches and the scaled C blocks are stacked.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .als import AlsOptions, cp_als
from .matching import best_assignment, similarity_matrix
from .seekdestroy import batch_seed
from .tensor import FactorModel, concat_all, reconstruct, relative_error


@dataclass(frozen=True)
class BaselineConfig:
    """``rank_mode`` labels where the rank came from: ``"initial-rank"``
    (rank of the first batch) or ``"full-rank"`` (rank of the whole stream)."""

    rank: int
    rank_mode: str = "initial-rank"
    als: AlsOptions = field(default_factory=AlsOptions)

    def __post_init__(self):
        if int(self.rank) < 1:
            raise ValueError("baseline rank must be >= 1")
        if self.rank_mode not in ("initial-rank", "full-rank"):
            raise ValueError(f"unknown rank mode {self.rank_mode!r}")


def fixed_rank_stream(batches, cfg: BaselineConfig):
    """Run the baseline over ``batches``.

    Returns
    -------
    model : FactorModel
        Averaged A and B, stacked C over the full third mode.
    error : float
        Relative error of ``model`` against the concatenated stream.
    """
    batches = list(batches)
    if not batches:
        raise ValueError("empty stream")
    full = concat_all(batches)
    R = int(cfg.rank)

    A_sum = B_sum = None
    ref_A = None
    C_blocks = []
    for b, X in enumerate(batches):
        m = cp_als(X, R, replace(cfg.als, seed=batch_seed(cfg.als.seed, b)))
        A, Bm, C = m.A, m.B, m.C * m.lam
        if ref_A is None:
            ref_A = A
            A_sum, B_sum = A.copy(), Bm.copy()
            C_blocks.append(C)
            continue
        sim = similarity_matrix(ref_A, A, use_absolute=True)
        perm = np.empty(R, dtype=int)
        for i, j in best_assignment(sim):
            perm[i] = j
        A, Bm, C = A[:, perm], Bm[:, perm], C[:, perm]
        sa = np.where(np.sum(ref_A * A, axis=0) >= 0, 1.0, -1.0)
        sb = np.where(np.sum(B_sum * Bm, axis=0) >= 0, 1.0, -1.0)
        A_sum += A * sa
        B_sum += Bm * sb
        C_blocks.append(C * (sa * sb))

    A = A_sum / np.linalg.norm(A_sum, axis=0)
    B = B_sum / np.linalg.norm(B_sum, axis=0)
    C = np.vstack(C_blocks)
    lam = np.linalg.norm(C, axis=0)
    safe = np.where(lam > 0, lam, 1.0)
    model = FactorModel(A, B, C / safe, lam)
    return model, relative_error(full, reconstruct(model))
