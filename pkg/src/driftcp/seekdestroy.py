"""Streaming CP decomposition that detects and absorbs concept drift.

Every incoming batch is rank-estimated and decomposed on its own. Its
normalized A columns are matched against the accumulated A; unmatched batch
concepts are appended as new global components, matched ones extend the
existing components along the growing third mode, and accumulated
components absent from the batch receive zero rows there. Per-component
scale is tracked separately in ``rho`` and averaged over the number of
batches at reconstruction time.

Global component indices are stable: old components keep their column
forever and new ones are appended in batch-column order.
"""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .als import AlsOptions, DegenerateComponentError, SingularSolveError, cp_als, normalize_columns
from .matching import MatchOptions, MatchResult, find_concept_overlap
from .rank import estimate_rank
from .tensor import DenseTensor3, FactorModel, TensorError, reconstruct_array

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SADST1\0"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class StreamOptions:
    """Settings for :func:`init_state` and :func:`process_batch`.

    ``als.seed`` is the root seed; each batch derives its own solver seed
    from it and the batch index. ``first_max_rank`` bounds the rank search
    on the first batch, later batches search up to
    ``running_rank + rank_headroom``. ``average_factors`` switches the
    overlapped A/B columns from "keep the old column" to a count-weighted
    running mean.
    """

    match: MatchOptions = field(default_factory=MatchOptions)
    als: AlsOptions = field(default_factory=lambda: AlsOptions(init="gevd"))
    first_max_rank: int = 6
    rank_headroom: int = 3
    average_factors: bool = False

    @classmethod
    def with_threshold(cls, threshold: float, **kw) -> "StreamOptions":
        return cls(match=MatchOptions(threshold=threshold), **kw)


@dataclass(frozen=True, eq=False)
class StreamState:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    rho: np.ndarray
    batches_seen: int
    counts: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "C", "rho", "counts"):
            arr = np.array(getattr(self, name), dtype=np.int64 if name == "counts" else np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        R = self.A.shape[1]
        if self.B.shape[1] != R or self.C.shape[1] != R or self.rho.size != R or self.counts.size != R:
            raise TensorError("state factors, rho and counts disagree on the running rank")

    @property
    def running_rank(self) -> int:
        return self.A.shape[1]

    @property
    def K_total(self) -> int:
        return self.C.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    def __eq__(self, other):
        if not isinstance(other, StreamState):
            return NotImplemented
        return self.batches_seen == other.batches_seen and all(
            getattr(self, n).shape == getattr(other, n).shape
            and getattr(self, n).tobytes() == getattr(other, n).tobytes()
            for n in ("A", "B", "C", "rho", "counts")
        )


@dataclass(frozen=True)
class DriftReport:
    batch_index: int
    batch_rank: int
    new_count: int
    overlap_count: int
    missing_count: int
    drift_detected: bool
    running_rank_after: int
    running_rank_before: int = 0
    skipped: bool = False


def batch_seed(root_seed: int, batch_index: int) -> int:
    """Solver seed for one batch, derived from the root seed."""
    ss = np.random.SeedSequence([int(root_seed), int(batch_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _decompose(X: DenseTensor3, max_rank: int, opts: AlsOptions, oracle: int | None):
    """Rank-estimate and fit one batch, dropping degenerate components."""
    est = estimate_rank(X, max_rank, opts, oracle=oracle)
    rank = est.rank
    model = est.model
    while model is None:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                model = cp_als(X, rank, opts)
        except DegenerateComponentError as exc:
            rank -= max(1, len(exc.indices))
            if rank < 1:
                raise
            log.warning("degenerate component(s) dropped, refitting at rank %d", rank)
    return est, model


def _normalized_batch(model: FactorModel):
    # Absorb the weights into C, then split the column norms back out.
    nA, nB, nC, colA, colB, colC, _ = normalize_columns(model.A, model.B, model.C * model.lam)
    rho_val = colA * colB * colC
    return nA, nB, nC, rho_val


def init_state(first_batch: DenseTensor3, opts: StreamOptions | None = None, rank: int | None = None):
    """Start a stream from its first batch.

    ``rank`` injects a known batch rank and skips estimation.
    """
    opts = opts or StreamOptions()
    if first_batch.dims[2] == 0:
        raise TensorError("first batch is empty")
    als = replace(opts.als, seed=batch_seed(opts.als.seed, 0))
    est, model = _decompose(first_batch, opts.first_max_rank, als, rank)
    nA, nB, nC, rho_val = _normalized_batch(model)
    R = nA.shape[1]
    state = StreamState(nA, nB, nC, rho_val, batches_seen=1, counts=np.ones(R, dtype=np.int64))
    report = DriftReport(
        batch_index=0,
        batch_rank=R,
        new_count=R,
        overlap_count=0,
        missing_count=0,
        drift_detected=False,
        running_rank_after=R,
        running_rank_before=0,
    )
    return state, report


def update_evolving_factor(C_old, normMatC, match: MatchResult, K_new: int, running_rank_after: int) -> np.ndarray:
    """Grow the third-mode factor by one batch.

    The result is ``(K_old + K_new) x running_rank_after``. The top block
    keeps ``C_old``; overlapped batch columns fill the bottom block at their
    matched global index; new concepts get columns appended after the old
    ones, zero in the top block; unmatched old concepts stay zero in the
    bottom block.
    """
    C_old = np.asarray(C_old, dtype=np.float64)
    normMatC = np.asarray(normMatC, dtype=np.float64)
    K_old, R_old = C_old.shape
    if normMatC.shape[0] != K_new:
        raise TensorError(f"batch factor has {normMatC.shape[0]} rows, expected {K_new}")
    if running_rank_after != R_old + len(match.new_concepts):
        raise TensorError("running rank does not equal old rank plus new concepts")
    if len(match.overlap_batch) != len(match.overlap_old):
        raise TensorError("overlap index lists differ in length")
    cols = set(match.overlap_batch) | set(match.new_concepts)
    if any(j >= normMatC.shape[1] for j in cols) or any(i >= R_old for i in match.overlap_old):
        raise TensorError("match indices exceed factor shapes")

    C_new = np.zeros((K_old + K_new, running_rank_after))
    C_new[:K_old, :R_old] = C_old
    for j, i in zip(match.overlap_batch, match.overlap_old):
        C_new[K_old:, i] = normMatC[:, j]
    for n, j in enumerate(match.new_concepts):
        C_new[K_old:, R_old + n] = normMatC[:, j]
    return C_new


def update_rho(rho_old, rho_val, match: MatchResult, running_rank_after: int) -> np.ndarray:
    """Accumulate per-batch component scales into the global ``rho``.

    Overlapped concepts add their batch scale, new ones start with it and
    concepts missing from the batch add nothing.
    """
    rho_old = np.asarray(rho_old, dtype=np.float64)
    rho_val = np.asarray(rho_val, dtype=np.float64)
    R_old = rho_old.size
    if running_rank_after != R_old + len(match.new_concepts):
        raise TensorError("running rank does not equal old rank plus new concepts")
    if rho_val.size != len(match.new_concepts) + len(match.overlap_batch):
        raise TensorError("batch scale vector does not cover every batch component")
    rho = np.zeros(running_rank_after)
    rho[:R_old] = rho_old
    for j, i in zip(match.overlap_batch, match.overlap_old):
        rho[i] += rho_val[j]
    for n, j in enumerate(match.new_concepts):
        rho[R_old + n] = rho_val[j]
    return rho


def _unit(v):
    return v / np.linalg.norm(v)


def process_batch(state: StreamState, X_new: DenseTensor3, opts: StreamOptions | None = None, rank: int | None = None):
    """Absorb one batch into the stream state.

    Returns the new state and a :class:`DriftReport`. ``rank`` injects a
    known batch rank. An all-zero batch is skipped: the time axis still
    advances (zero rows in C) and the report is flagged ``skipped``.
    """
    opts = opts or StreamOptions()
    I, J, _ = state.dims
    if X_new.dims[:2] != (I, J):
        raise TensorError(f"batch dims {X_new.dims} do not match stream dims ({I}, {J}, *)")
    K_new = X_new.dims[2]
    b = state.batches_seen
    R_old = state.running_rank

    if K_new == 0 or not np.any(X_new.data):
        log.warning("batch %d is all zero; skipped", b)
        C = np.vstack([state.C, np.zeros((K_new, R_old))])
        new_state = StreamState(state.A, state.B, C, state.rho, b + 1, state.counts)
        return new_state, DriftReport(b, 0, 0, 0, R_old, R_old > 0, R_old, R_old, skipped=True)

    als = replace(opts.als, seed=batch_seed(opts.als.seed, b))
    est, model = _decompose(X_new, R_old + opts.rank_headroom, als, rank)
    nA, nB, nC, rho_val = _normalized_batch(model)

    match = find_concept_overlap(state.A, nA, opts.match, B_old=state.B, B_batch=nB)
    # Absolute-value matching may pair columns of opposite sign; fold the
    # sign difference into the batch's C column.
    nC = nC.copy()
    for j, i in zip(match.overlap_batch, match.overlap_old):
        sa = 1.0 if state.A[:, i] @ nA[:, j] >= 0 else -1.0
        sb = 1.0 if state.B[:, i] @ nB[:, j] >= 0 else -1.0
        if sa * sb < 0:
            nC[:, j] *= -1.0

    new = list(match.new_concepts)
    rr_after = R_old + len(new)
    A = np.hstack([state.A, nA[:, new]])
    B = np.hstack([state.B, nB[:, new]])
    counts = np.concatenate([state.counts, np.ones(len(new), dtype=np.int64)])
    if opts.average_factors:
        A = A.copy()
        B = B.copy()
        for j, i in zip(match.overlap_batch, match.overlap_old):
            n = counts[i]
            sa = 1.0 if A[:, i] @ nA[:, j] >= 0 else -1.0
            sb = 1.0 if B[:, i] @ nB[:, j] >= 0 else -1.0
            A[:, i] = _unit(n * A[:, i] + sa * nA[:, j])
            B[:, i] = _unit(n * B[:, i] + sb * nB[:, j])
    counts[list(match.overlap_old)] += 1

    C = update_evolving_factor(state.C, nC, match, K_new, rr_after)
    rho = update_rho(state.rho, rho_val, match, rr_after)
    new_state = StreamState(A, B, C, rho, b + 1, counts)

    n_new = len(new)
    n_overlap = len(match.overlap_batch)
    drift = n_new > 0 or (n_new + n_overlap < rr_after)
    report = DriftReport(
        batch_index=b,
        batch_rank=nA.shape[1],
        new_count=n_new,
        overlap_count=n_overlap,
        missing_count=R_old - n_overlap,
        drift_detected=bool(drift),
        running_rank_after=rr_after,
        running_rank_before=R_old,
    )
    return new_state, report


def run_stream(batches, opts: StreamOptions | None = None, ranks=None, state: StreamState | None = None):
    """Feed ``batches`` through the stream, optionally resuming ``state``.

    ``ranks`` is an optional per-batch list of injected ranks (aligned with
    ``batches``). Returns the final state and the list of reports.
    """
    opts = opts or StreamOptions()
    reports = []
    for n, X in enumerate(batches):
        r = None if ranks is None else ranks[n]
        if state is None:
            state, rep = init_state(X, opts, rank=r)
        else:
            state, rep = process_batch(state, X, opts, rank=r)
        reports.append(rep)
    return state, reports


def stream_weights(state: StreamState, denominator: str = "batches") -> np.ndarray:
    """Effective component weights.

    ``"batches"`` divides ``rho`` by the number of batches seen (missing
    concepts add zero to the sum). ``"active"`` divides each entry by the
    number of batches in which that concept was present instead.
    """
    if denominator == "batches":
        return state.rho / state.batches_seen
    if denominator == "active":
        return state.rho / np.maximum(state.counts, 1)
    raise ValueError(f"unknown denominator {denominator!r}")


def reconstruct_stream(state: StreamState, denominator: str = "batches") -> DenseTensor3:
    if state.batches_seen < 1:
        raise TensorError("no batches seen")
    return DenseTensor3(reconstruct_array(state.A, state.B, state.C, stream_weights(state, denominator)))


def state_model(state: StreamState, denominator: str = "batches") -> FactorModel:
    return FactorModel(state.A, state.B, state.C, stream_weights(state, denominator))


# -- checkpoints ------------------------------------------------------------
#
# Layout (little-endian): magic "SADST1\0", u32 version, u64 I, J, K_total,
# running_rank, batches_seen, then A (I x R), B (J x R), C (K_total x R) as
# f64 in column-major order, rho (R x f64) and counts (R x u64).


def save_checkpoint(state: StreamState, path) -> None:
    I, J, K = state.dims
    R = state.running_rank
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I5Q", CHECKPOINT_VERSION, I, J, K, R, state.batches_seen))
        for M in (state.A, state.B, state.C):
            fh.write(np.asarray(M, dtype="<f8").tobytes(order="F"))
        fh.write(np.asarray(state.rho, dtype="<f8").tobytes())
        fh.write(np.asarray(state.counts, dtype="<u8").tobytes())


def load_checkpoint(path) -> StreamState:
    with open(path, "rb") as fh:
        raw = fh.read()
    n_magic = len(CHECKPOINT_MAGIC)
    if raw[:n_magic] != CHECKPOINT_MAGIC:
        raise TensorError(f"{path}: not a stream checkpoint")
    head = struct.calcsize("<I5Q")
    version, I, J, K, R, seen = struct.unpack("<I5Q", raw[n_magic : n_magic + head])
    if version != CHECKPOINT_VERSION:
        raise TensorError(f"{path}: unsupported checkpoint version {version}")
    expected = n_magic + head + 8 * ((I + J + K) * R + 2 * R)
    if len(raw) != expected:
        raise TensorError(f"{path}: checkpoint size does not match its header")
    off = n_magic + head

    def take(n, dtype):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dtype, count=n, offset=off)
        off += 8 * n
        return arr

    A = take(I * R, "<f8").reshape((I, R), order="F")
    B = take(J * R, "<f8").reshape((J, R), order="F")
    C = take(K * R, "<f8").reshape((K, R), order="F")
    rho = take(R, "<f8")
    counts = take(R, "<u8").astype(np.int64)
    return StreamState(A, B, C, rho, int(seen), counts)
