"""Matching latent concepts of a new batch against accumulated ones."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

NORM_TOL = 1e-8
TIE_TOL = 1e-12


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class MatchOptions:
    """``similarity_source`` is ``"A"`` (default) or ``"AB"``; the latter
    multiplies the A and B similarities elementwise."""

    threshold: float = 0.6
    similarity_source: str = "A"
    use_absolute: bool = True

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.similarity_source not in ("A", "AB"):
            raise ValueError(f"unknown similarity source {self.similarity_source!r}")


@dataclass(frozen=True)
class MatchResult:
    new_concepts: tuple
    overlap_batch: tuple
    overlap_old: tuple
    similarity: np.ndarray = field(repr=False)

    @property
    def n_batch(self) -> int:
        return self.similarity.shape[1]

    @property
    def n_old(self) -> int:
        return self.similarity.shape[0]

    @property
    def unmatched_old(self) -> tuple:
        """Old concepts with no counterpart in this batch."""
        taken = set(self.overlap_old)
        return tuple(i for i in range(self.n_old) if i not in taken)


def _check_unit_columns(M, name):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise MatchingError(f"{name} must be a matrix")
    norms = np.linalg.norm(M, axis=0)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        raise MatchingError(f"{name} columns must have unit norm")
    return M


def similarity_matrix(A_old, A_batch, use_absolute: bool = True) -> np.ndarray:
    """Dot products between unit columns, ``sim[i, j] = A_old[:, i] . A_batch[:, j]``.

    By Cauchy-Schwarz every entry lies in ``[-1, 1]``; with ``use_absolute``
    the magnitudes are returned.
    """
    A_old = _check_unit_columns(A_old, "A_old")
    A_batch = _check_unit_columns(A_batch, "A_batch")
    if A_old.shape[0] != A_batch.shape[0]:
        raise MatchingError("factor row counts differ")
    sim = A_old.T @ A_batch
    return np.abs(sim) if use_absolute else sim


def _optimum(sim: np.ndarray) -> float:
    if sim.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(sim, maximize=True)
    return math.fsum(sim[rows, cols])


def best_assignment(sim) -> list[tuple[int, int]]:
    """One-to-one matching of old (rows) to batch (columns) concepts with
    maximum total similarity.

    Exactly ``min(R, F)`` pairs are returned, sorted by old index. Among
    optimal matchings the lexicographically smallest pair list is chosen.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2:
        raise MatchingError("similarity must be a matrix")
    if not np.all(np.isfinite(sim)):
        raise MatchingError("similarity entries must be finite")
    R, F = sim.shape
    n = min(R, F)
    if n == 0:
        return []
    best = _optimum(sim)
    tol = TIE_TOL * max(1.0, abs(best))

    pairs = []
    rows = list(range(R))
    cols = list(range(F))
    fixed = 0.0
    need = n
    # Fix pairs greedily in lexicographic order while the optimum stays reachable.
    while need:
        i = rows[0]
        placed = False
        for j in cols:
            r_rest = rows[1:]
            c_rest = [c for c in cols if c != j]
            rest = _optimum(sim[np.ix_(r_rest, c_rest)]) if need > 1 else 0.0
            if fixed + sim[i, j] + rest >= best - tol:
                pairs.append((i, j))
                fixed += sim[i, j]
                rows, cols = r_rest, c_rest
                need -= 1
                placed = True
                break
        if not placed:
            # Row i stays unmatched; only possible while spare rows remain.
            rows = rows[1:]
    return pairs


def assignment_total(sim, pairs) -> float:
    sim = np.asarray(sim, dtype=np.float64)
    return math.fsum(sim[i, j] for i, j in pairs)


def find_concept_overlap(A_old, A_batch, opts: MatchOptions | None = None, B_old=None, B_batch=None) -> MatchResult:
    """Split batch concepts into overlapping and new ones.

    Optimal one-to-one pairs whose similarity reaches ``opts.threshold`` are
    overlaps. Every other batch column, assigned or not, is a new concept.
    The ``"AB"`` similarity source needs ``B_old`` and ``B_batch``.
    """
    opts = opts or MatchOptions()
    sim = similarity_matrix(A_old, A_batch, opts.use_absolute)
    if opts.similarity_source == "AB":
        if B_old is None or B_batch is None:
            raise MatchingError("the AB similarity source needs both B factors")
        sim = sim * similarity_matrix(B_old, B_batch, opts.use_absolute)

    overlap_batch, overlap_old = [], []
    for i, j in best_assignment(sim):
        if sim[i, j] >= opts.threshold:
            overlap_old.append(i)
            overlap_batch.append(j)
    order = np.argsort(overlap_batch, kind="stable")
    overlap_batch = [overlap_batch[k] for k in order]
    overlap_old = [overlap_old[k] for k in order]
    matched = set(overlap_batch)
    new = tuple(j for j in range(sim.shape[1]) if j not in matched)
    return MatchResult(
        new_concepts=new,
        overlap_batch=tuple(int(j) for j in overlap_batch),
        overlap_old=tuple(int(i) for i in overlap_old),
        similarity=sim,
    )
