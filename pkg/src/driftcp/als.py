"""Batch CP decomposition by alternating least squares."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .tensor import DenseTensor3, FactorModel, TensorError, khatri_rao, matricize

RIDGE = 1e-12
# A component heavier than this multiple of the data norm can only arise
# from near-cancelling components (a diverging ALS path).
DIVERGENCE_RATIO = 10.0
# Components lighter than this fraction of the heaviest count as zero-norm.
ZERO_WEIGHT = 1e-12


class DegenerateComponentError(ArithmeticError):
    """A fitted component collapsed to a zero column.

    ``indices`` lists the offending component positions so that callers can
    drop them and refit at a lower rank.
    """

    def __init__(self, indices, message=None):
        self.indices = tuple(int(i) for i in indices)
        super().__init__(message or f"zero-norm component(s) at {self.indices}")


class SingularSolveError(ArithmeticError):
    pass


@dataclass(frozen=True)
class AlsOptions:
    """Solver settings for :func:`cp_als`.

    ``tol`` is the stop threshold on the relative change of the fit error
    between sweeps. ``init`` is ``"random"`` (uniform(0, 1) entries from a
    generator seeded with ``seed``), ``"hosvd"`` (leading left singular
    vectors of each unfolding) or ``"gevd"`` (HOSVD compression followed by
    a generalized eigendecomposition of two mixed slices; falls back to
    random when the rank exceeds I or J). On noisy data the ``"gevd"`` start
    can lead ALS onto a diverging path; :func:`cp_als` then refits once from
    the random start and keeps the better fit.
    """

    max_iters: int = 100
    tol: float = 1e-8
    seed: int = 0
    init: str = "random"

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.init not in ("random", "hosvd", "gevd"):
            raise ValueError(f"unknown init {self.init!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


def _gevd_factors(x: np.ndarray, rank: int, rng: np.random.Generator):
    """Direct trilinear initialization.

    Compress modes 1 and 2 onto their leading singular subspaces, mix the
    frontal slices of the core with two random weight vectors and recover
    A from the eigenvectors of the resulting matrix pencil. Exact for a
    noiseless tensor of rank ``rank``.
    """
    I, J, K = x.shape
    Ua = np.linalg.svd(matricize(x, 1), full_matrices=False)[0][:, :rank]
    Ub = np.linalg.svd(matricize(x, 2), full_matrices=False)[0][:, :rank]
    G = np.einsum("ia,ijk,jb->abk", Ua, x, Ub)
    w = rng.standard_normal((K, 2))
    S1 = G @ w[:, 0]
    S2 = G @ w[:, 1]
    _, V = np.linalg.eig(S1 @ np.linalg.pinv(S2))
    At = np.real(V)
    if np.linalg.matrix_rank(At) < rank:
        At = At + 1e-6 * rng.standard_normal(At.shape)
    A = Ua @ At
    Bt = np.linalg.lstsq(At, S2, rcond=None)[0].T
    B = Ub @ Bt
    C = matricize(x, 3) @ khatri_rao(B, A)
    gram = (B.T @ B) * (A.T @ A)
    C = np.linalg.lstsq(gram, C.T, rcond=None)[0].T
    return [A, B, C]


def _initial_factors(x: np.ndarray, rank: int, opts: AlsOptions, init: str):
    rng = np.random.default_rng(opts.seed)
    if init == "gevd":
        if rank <= min(x.shape[0], x.shape[1]) and x.shape[2] >= 2:
            return _gevd_factors(x, rank, rng)
        init = "random"
    factors = []
    for mode in (1, 2, 3):
        dim = x.shape[mode - 1]
        if init == "random":
            factors.append(rng.uniform(0.0, 1.0, size=(dim, rank)))
            continue
        U = np.linalg.svd(matricize(x, mode), full_matrices=False)[0]
        U = U[:, :rank]
        if U.shape[1] < rank:
            U = np.hstack([U, rng.uniform(0.0, 1.0, size=(dim, rank - U.shape[1]))])
        factors.append(U)
    return factors


def _solve_normal(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``X @ gram = rhs`` for X, with one ridge-regularized retry."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        for ridge in (0.0, RIDGE):
            g = gram + ridge * np.eye(gram.shape[0]) if ridge else gram
            try:
                sol = scipy.linalg.solve(g, rhs.T, assume_a="sym")
            except (np.linalg.LinAlgError, ValueError):
                continue
            if np.all(np.isfinite(sol)):
                return sol.T
    raise SingularSolveError("normal equations remain singular after ridge retry")


def normalize_columns(A, B, C):
    """Scale every factor column to unit norm.

    Returns
    -------
    normA, normB, normC : ndarray
        Unit-column factors.
    colA, colB, colC : ndarray
        The original column norms.
    lam : ndarray
        ``colA * colB * colC``, the weight absorbed from the three norms.

    Raises
    ------
    DegenerateComponentError
        If any column of any factor has zero norm.
    """
    mats = [np.asarray(M, dtype=np.float64) for M in (A, B, C)]
    if len({M.shape[1] for M in mats}) != 1:
        raise TensorError("factors must have equal column counts")
    norms = [np.linalg.norm(M, axis=0) for M in mats]
    bad = sorted({int(i) for n in norms for i in np.flatnonzero(~(n > 0))})
    if bad:
        raise DegenerateComponentError(bad)
    normalized = [M / n for M, n in zip(mats, norms)]
    lam = norms[0] * norms[1] * norms[2]
    return (*normalized, *norms, lam)


def canonicalize_signs(m: FactorModel) -> FactorModel:
    """Make the largest-magnitude entry of each A and B column nonnegative.

    Sign flips are compensated in C so the reconstruction is unchanged.
    Ties in magnitude resolve to the first index.
    """
    A, B, C = m.A.copy(), m.B.copy(), m.C.copy()
    for M in (A, B):
        if M.shape[0] == 0:
            continue
        idx = np.argmax(np.abs(M), axis=0)
        flip = M[idx, np.arange(M.shape[1])] < 0
        M[:, flip] *= -1.0
        C[:, flip] *= -1.0
    return FactorModel(A, B, C, m.lam, normalized=m.normalized, history=m.history)


def cp_als(t: DenseTensor3, rank: int, opts: AlsOptions | None = None) -> FactorModel:
    """Fit a rank-``rank`` CP model to ``t`` with alternating least squares.

    Each sweep updates A, then B, then C by solving the normal equations
    built from the Khatri-Rao product of the other two factors. The loop
    stops after ``opts.max_iters`` sweeps or once the relative fit error
    changes by less than ``opts.tol`` (relative to its previous value).

    The result has unit-norm factor columns, positive weights ``lam`` and
    canonical signs (see :func:`canonicalize_signs`). ``history`` holds the
    relative fit error after every sweep.

    Raises
    ------
    ValueError
        If ``rank < 1``.
    DegenerateComponentError
        If a component converges to zero (weight at most ``ZERO_WEIGHT``
        times the largest weight).
    SingularSolveError
        If a normal-equation solve stays singular after regularization.
    """
    if opts is None:
        opts = AlsOptions()
    rank = int(rank)
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    x = t.data
    if min(x.shape) > 0 and rank > min(x.shape):
        warnings.warn(
            f"rank {rank} exceeds the smallest dimension {min(x.shape)}; the fit may be degenerate",
            RuntimeWarning,
            stacklevel=2,
        )
    norm_x = np.linalg.norm(x.ravel())
    if norm_x == 0.0:
        raise DegenerateComponentError(range(rank), "cannot decompose an all-zero tensor")

    model = _fit(x, norm_x, rank, opts, opts.init)
    if opts.init == "gevd" and _diverged(model, norm_x):
        alt = _fit(x, norm_x, rank, opts, "random")
        if (_diverged(alt, norm_x), alt.history[-1]) < (True, model.history[-1]):
            model = alt
    return model


def _diverged(m: FactorModel, norm_x: float) -> bool:
    return bool(m.lam.max() > DIVERGENCE_RATIO * norm_x)


def _fit(x, norm_x, rank, opts, init) -> FactorModel:
    X1, X2, X3 = (matricize(x, n) for n in (1, 2, 3))
    A, B, C = _initial_factors(x, rank, opts, init)
    history = []
    prev = None
    for _ in range(int(opts.max_iters)):
        A = _solve_normal((C.T @ C) * (B.T @ B), X1 @ khatri_rao(C, B))
        B = _solve_normal((C.T @ C) * (A.T @ A), X2 @ khatri_rao(C, A))
        C = _solve_normal((B.T @ B) * (A.T @ A), X3 @ khatri_rao(B, A))
        # Move scale out of A and B so the three factors stay balanced.
        na = np.linalg.norm(A, axis=0)
        nb = np.linalg.norm(B, axis=0)
        ok = (na > 0) & (nb > 0)
        A[:, ok] /= na[ok]
        B[:, ok] /= nb[ok]
        C[:, ok] *= na[ok] * nb[ok]

        err = float(np.linalg.norm(X3 - C @ khatri_rao(B, A).T) / norm_x)
        history.append(err)
        if prev is not None and abs(prev - err) <= opts.tol * max(prev, np.finfo(float).tiny):
            break
        if err < 1e-13:
            break
        prev = err

    nA, nB, nC, _, _, _, lam = normalize_columns(A, B, C)
    tiny = np.flatnonzero(lam <= ZERO_WEIGHT * lam.max())
    if tiny.size:
        raise DegenerateComponentError(tiny)
    model = FactorModel(nA, nB, nC, lam, normalized=True, history=tuple(history))
    return canonicalize_signs(model)
