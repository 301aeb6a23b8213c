"""Batch rank estimation by a core-consistency (CORCONDIA) sweep."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .als import AlsOptions, DegenerateComponentError, SingularSolveError, cp_als
from .tensor import DenseTensor3, FactorModel, TensorError

log = logging.getLogger(__name__)

CC_THRESHOLD = 80.0
RANK_PENALTY = 2.0


class RankDeficientError(ArithmeticError):
    pass


@dataclass(frozen=True)
class RankEstimate:
    """Chosen rank plus the ``(rank, core consistency, fit error)`` sweep.

    ``mode`` is ``"estimated"`` or ``"oracle"``. The oracle mode carries no
    scores. ``model`` is the fit at the chosen rank when one was computed.
    """

    rank: int
    scores: tuple = ()
    mode: str = "estimated"
    model: FactorModel | None = None


def _ttm_all(x: np.ndarray, mats) -> np.ndarray:
    """Multiply mode n of ``x`` by ``mats[n]`` for all three modes."""
    g = np.tensordot(mats[0], x, axes=(1, 0))
    g = np.tensordot(mats[1], g, axes=(1, 1)).transpose(1, 0, 2)
    g = np.tensordot(mats[2], g, axes=(1, 2)).transpose(1, 2, 0)
    return g


def core_consistency(t: DenseTensor3, m: FactorModel) -> float:
    """Core consistency of ``m`` for ``t`` on a 0-100 scale.

    The least-squares Tucker core ``G`` of ``t`` for the fixed factor triple
    (weights folded into C) is compared with the superdiagonal identity
    core: ``100 * (1 - ||G - I||^2 / R)``. The core is computed with
    pseudo-inverse solves, one per mode.

    Raises
    ------
    RankDeficientError
        If the rank-one components are linearly dependent.
    """
    if t.dims != m.dims:
        raise TensorError(f"model dims {m.dims} do not fit tensor dims {t.dims}")
    R = m.rank
    factors = (m.A, m.B, m.C * m.lam)
    # Gram of the vectorized rank-one components; singular means the
    # components are linearly dependent and no core is identifiable. A
    # single factor may lose rank (overfactoring a noiseless tensor).
    gram = (factors[0].T @ factors[0]) * (factors[1].T @ factors[1]) * (factors[2].T @ factors[2])
    ev = np.linalg.eigvalsh(gram)
    if ev[0] <= 1e-12 * ev[-1]:
        raise RankDeficientError(f"the {R} rank-one components are linearly dependent")
    pinvs = [np.linalg.pinv(F) for F in factors]
    G = _ttm_all(t.data, pinvs)
    diag = np.arange(R)
    G[diag, diag, diag] -= 1.0
    return float(100.0 * (1.0 - np.sum(G * G) / R))


def estimate_rank(
    t: DenseTensor3,
    max_rank: int,
    opts: AlsOptions | None = None,
    oracle: int | None = None,
) -> RankEstimate:
    """Pick a CP rank for ``t`` among ``1..max_rank``.

    The chosen rank is the largest candidate with core consistency of at
    least 80. If none qualifies, the candidate maximizing
    ``score - 2 * rank`` wins. Candidates whose fit degenerates are left out
    of the sweep. Passing ``oracle`` returns that rank without fitting.
    """
    if oracle is not None:
        if int(oracle) < 1:
            raise ValueError("oracle rank must be >= 1")
        return RankEstimate(rank=int(oracle), mode="oracle")
    max_rank = int(max_rank)
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    opts = opts or AlsOptions()

    scores = []
    models = {}
    for r in range(1, max_rank + 1):
        try:
            m = cp_als(t, r, opts)
            cc = core_consistency(t, m)
        except (DegenerateComponentError, SingularSolveError, RankDeficientError) as exc:
            log.debug("rank %d skipped: %s", r, exc)
            continue
        if not np.isfinite(cc):
            continue
        scores.append((r, cc, m.history[-1] if m.history else float("nan")))
        models[r] = m
    if not scores:
        raise DegenerateComponentError((), "every candidate rank degenerated")

    passing = [r for r, cc, _ in scores if cc >= CC_THRESHOLD]
    if passing:
        chosen = max(passing)
    else:
        chosen = max(scores, key=lambda s: (s[1] - RANK_PENALTY * s[0], -s[0]))[0]
    return RankEstimate(rank=chosen, scores=tuple(scores), mode="estimated", model=models[chosen])
