"""Dense 3-mode tensors and the multilinear kernels used by the solvers.

Conventions
-----------
A :class:`DenseTensor3` of dims ``(I, J, K)`` is linearized with mode 1
varying fastest, i.e. entry ``(i, j, k)`` (0-based) sits at flat offset
``i + I*j + I*J*k``. This is numpy's Fortran order.

Unfoldings follow the same rule. The mode-n unfolding puts mode n on the
rows and orders the remaining two modes with the lower-numbered one
varying fastest along the columns, so that::

    matricize(X, 1) == A @ khatri_rao(C, B).T
    matricize(X, 2) == B @ khatri_rao(C, A).T
    matricize(X, 3) == C @ khatri_rao(B, A).T

for ``X = reconstruct(FactorModel(A, B, C, ones))``. ``khatri_rao(M1, M2)``
has column ``r`` equal to ``kron(M1[:, r], M2[:, r])``, so the row index of
``M2`` varies fastest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DT3_MAGIC = b"DT3\0"


class TensorError(ValueError):
    """Raised for malformed tensors or incompatible operands."""


class DenseTensor3:
    """Immutable dense real tensor with three modes.

    Parameters
    ----------
    data : array_like
        Either a 3-d array of shape ``(I, J, K)``, or a flat array of
        length ``I*J*K`` in mode-1-fastest order when ``dims`` is given.
    dims : tuple of int, optional
        Explicit dimensions for flat input.
    """

    __slots__ = ("_data",)

    def __init__(self, data, dims=None):
        arr = np.asarray(data, dtype=np.float64)
        if dims is not None:
            dims = tuple(int(d) for d in dims)
            if len(dims) != 3 or any(d < 0 for d in dims):
                raise TensorError(f"dims must be three nonnegative integers, got {dims}")
            if arr.size != dims[0] * dims[1] * dims[2]:
                raise TensorError(
                    f"values length {arr.size} does not match dims {dims}"
                )
            arr = arr.reshape(dims, order="F")
        if arr.ndim != 3:
            raise TensorError(f"expected a 3-mode array, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise TensorError("tensor entries must be finite")
        arr = np.array(arr, dtype=np.float64, order="F", copy=True)
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def zeros(cls, dims) -> "DenseTensor3":
        return cls(np.zeros(tuple(dims)))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self._data.shape

    @property
    def data(self) -> np.ndarray:
        """Read-only ``(I, J, K)`` view."""
        return self._data

    @property
    def values(self) -> np.ndarray:
        """Flat entries in mode-1-fastest order."""
        return self._data.reshape(-1, order="F")

    def slab(self, k: int) -> np.ndarray:
        """Frontal slab ``X(:, :, k)``."""
        return self._data[:, :, k]

    def __eq__(self, other):
        if not isinstance(other, DenseTensor3):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash((self.dims, self._data.tobytes()))

    def __repr__(self):
        return f"DenseTensor3(dims={self.dims})"


@dataclass(frozen=True, eq=False)
class FactorModel:
    """CP model ``sum_r lam[r] * A[:, r] o B[:, r] o C[:, r]``.

    ``normalized`` marks models whose factor columns all have unit norm.
    ``history`` optionally holds the per-sweep relative fit error of the
    solver that produced the model.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    lam: np.ndarray
    normalized: bool = False
    history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        mats = []
        for name in ("A", "B", "C"):
            m = np.array(getattr(self, name), dtype=np.float64)
            if m.ndim != 2:
                raise TensorError(f"factor {name} must be a matrix")
            m.flags.writeable = False
            object.__setattr__(self, name, m)
            mats.append(m)
        lam = np.array(self.lam, dtype=np.float64).reshape(-1)
        lam.flags.writeable = False
        object.__setattr__(self, "lam", lam)
        ranks = {m.shape[1] for m in mats} | {lam.size}
        if len(ranks) != 1:
            raise TensorError(
                "factor column counts and weight length disagree: "
                f"A={mats[0].shape[1]} B={mats[1].shape[1]} C={mats[2].shape[1]} lam={lam.size}"
            )
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise TensorError("weights must be finite and nonnegative")
        if self.normalized:
            for name, m in zip("ABC", mats):
                norms = np.linalg.norm(m, axis=0)
                if np.any(np.abs(norms - 1.0) > 1e-10):
                    raise TensorError(f"factor {name} is flagged normalized but is not")

    @property
    def rank(self) -> int:
        return self.lam.size

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    def __eq__(self, other):
        if not isinstance(other, FactorModel):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in ("A", "B", "C", "lam")
        )

    def tobytes(self) -> bytes:
        return b"".join(getattr(self, n).tobytes() for n in ("A", "B", "C", "lam"))


def _as_array(t) -> np.ndarray:
    return t.data if isinstance(t, DenseTensor3) else np.asarray(t, dtype=np.float64)


def matricize(t, mode: int) -> np.ndarray:
    """Mode-n unfolding, ``mode`` in {1, 2, 3}.

    Mode 1 gives ``I x JK``, mode 2 ``J x IK`` and mode 3 ``K x IJ``.
    """
    if mode not in (1, 2, 3):
        raise TensorError(f"mode must be 1, 2 or 3, got {mode!r}")
    x = _as_array(t)
    n = mode - 1
    return np.reshape(np.moveaxis(x, n, 0), (x.shape[n], -1), order="F")


def khatri_rao(M1, M2) -> np.ndarray:
    """Column-wise Kronecker product; column r is ``kron(M1[:, r], M2[:, r])``."""
    M1 = np.asarray(M1, dtype=np.float64)
    M2 = np.asarray(M2, dtype=np.float64)
    if M1.ndim != 2 or M2.ndim != 2 or M1.shape[1] != M2.shape[1]:
        raise TensorError(
            f"khatri_rao needs matrices with equal column counts, got {M1.shape} and {M2.shape}"
        )
    return (M1[:, None, :] * M2[None, :, :]).reshape(M1.shape[0] * M2.shape[0], M1.shape[1])


def reconstruct_array(A, B, C, lam=None) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if lam is not None:
        A = A * lam
    I, J, K = A.shape[0], np.shape(B)[0], np.shape(C)[0]
    return (A @ khatri_rao(C, B).T).reshape((I, J, K), order="F")


def reconstruct(m: FactorModel) -> DenseTensor3:
    """Full tensor with entries ``sum_r lam_r A(i,r) B(j,r) C(k,r)``."""
    return DenseTensor3(reconstruct_array(m.A, m.B, m.C, m.lam))


def frobenius_norm(t) -> float:
    return float(np.linalg.norm(_as_array(t).ravel()))


def relative_error(original, computed) -> float:
    """``||original - computed||_F / ||original||_F``."""
    x = _as_array(original)
    y = _as_array(computed)
    if x.shape != y.shape:
        raise TensorError(f"dims mismatch: {x.shape} vs {y.shape}")
    denom = np.linalg.norm(x.ravel())
    if denom == 0.0:
        raise TensorError("relative error is undefined for a zero-norm original")
    return float(np.linalg.norm((x - y).ravel()) / denom)


def concat_mode3(t_old: DenseTensor3, t_new: DenseTensor3) -> DenseTensor3:
    """Stack ``t_new`` after ``t_old`` along the third mode."""
    if t_old.dims[:2] != t_new.dims[:2]:
        raise TensorError(f"cannot concatenate {t_old.dims} with {t_new.dims}")
    return DenseTensor3(np.concatenate([t_old.data, t_new.data], axis=2))


def concat_all(batches) -> DenseTensor3:
    batches = list(batches)
    if not batches:
        raise TensorError("no batches to concatenate")
    if len({b.dims[:2] for b in batches}) != 1:
        raise TensorError("batches have inconsistent I, J dims")
    return DenseTensor3(np.concatenate([b.data for b in batches], axis=2))


# -- file formats -----------------------------------------------------------


def save_dt3(t: DenseTensor3, path) -> None:
    """Write the binary ``DT3`` container: magic, three u64 dims, f64 values (LE)."""
    I, J, K = t.dims
    with open(path, "wb") as fh:
        fh.write(DT3_MAGIC)
        fh.write(struct.pack("<3Q", I, J, K))
        fh.write(t.values.astype("<f8").tobytes())


def load_dt3(path) -> DenseTensor3:
    raw = Path(path).read_bytes()
    if raw[:4] != DT3_MAGIC:
        raise TensorError(f"{path}: not a DT3 file")
    if len(raw) < 28:
        raise TensorError(f"{path}: truncated header")
    dims = struct.unpack("<3Q", raw[4:28])
    n = dims[0] * dims[1] * dims[2]
    if len(raw) != 28 + 8 * n:
        raise TensorError(f"{path}: payload size does not match dims {dims}")
    values = np.frombuffer(raw, dtype="<f8", offset=28, count=n)
    return DenseTensor3(values, dims=dims)


def load_text(path) -> DenseTensor3:
    """Read the coordinate text format.

    First line ``I J K``; each further non-blank line ``i j k value`` with
    1-based indices. Missing entries are zero; repeated entries overwrite.
    """
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or len(lines[0]) != 3:
        raise TensorError(f"{path}: first line must be 'I J K'")
    dims = tuple(int(x) for x in lines[0])
    arr = np.zeros(dims)
    for lineno, parts in enumerate(lines[1:], start=2):
        if len(parts) != 4:
            raise TensorError(f"{path}:{lineno}: expected 'i j k value'")
        i, j, k = (int(p) - 1 for p in parts[:3])
        if not (0 <= i < dims[0] and 0 <= j < dims[1] and 0 <= k < dims[2]):
            raise TensorError(f"{path}:{lineno}: index out of range")
        arr[i, j, k] = float(parts[3])
    return DenseTensor3(arr)


def save_text(t: DenseTensor3, path) -> None:
    I, J, K = t.dims
    with open(path, "w") as fh:
        fh.write(f"{I} {J} {K}\n")
        for (i, j, k), v in np.ndenumerate(t.data):
            if v != 0.0:
                fh.write(f"{i + 1} {j + 1} {k + 1} {float(v)!r}\n")
