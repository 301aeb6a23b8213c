"""Synthetic drifting streams with known per-batch concepts.

Global A and B factors are drawn once. Each batch activates a subset of the
concepts through its slab of C: active columns are uniform(0, 1), inactive
ones exactly zero. The first batch activates the first ``initial_rank``
concepts and the last batch activates all ``full_rank`` of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import DenseTensor3, FactorModel, load_dt3, reconstruct_array, save_dt3

MANIFEST_NAME = "manifest.txt"


class StreamSpecError(ValueError):
    pass


@dataclass(frozen=True)
class StreamSpec:
    """Parameters of a synthetic stream.

    ``schedule`` is either a list of per-batch ranks or a list of explicit
    active-concept index collections (0-based). Without it, middle batches
    draw a random size in ``[initial_rank, full_rank]`` and always keep the
    first ``initial_rank`` concepts.

    With ``fixed_scale`` every active C column of a batch is rescaled to a
    per-concept norm drawn once, so component strength does not vary from
    batch to batch.
    """

    dims: tuple
    initial_rank: int
    full_rank: int
    batch_size: int
    noise_sigma: float = 0.0
    seed: int = 0
    schedule: tuple | None = None
    fixed_scale: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if self.schedule is not None:
            sched = tuple(
                int(s) if np.isscalar(s) else tuple(sorted(int(c) for c in s)) for s in self.schedule
            )
            object.__setattr__(self, "schedule", sched)
        self.validate()

    @property
    def n_batches(self) -> int:
        return self.dims[2] // self.batch_size

    def validate(self):
        I, J, K = self.dims
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise StreamSpecError(f"dims must be three positive integers, got {self.dims}")
        if not 1 <= self.initial_rank <= self.full_rank <= min(I, J):
            raise StreamSpecError("need 1 <= initial_rank <= full_rank <= min(I, J)")
        if self.batch_size < 1 or K % self.batch_size:
            raise StreamSpecError(f"batch_size {self.batch_size} must divide K={K}")
        if self.noise_sigma < 0:
            raise StreamSpecError("noise_sigma must be nonnegative")
        if not 0 <= int(self.seed) < 2**64:
            raise StreamSpecError("seed must fit in an unsigned 64-bit integer")
        if self.schedule is None:
            return
        nb = self.n_batches
        if len(self.schedule) != nb:
            raise StreamSpecError(f"schedule has {len(self.schedule)} entries for {nb} batches")
        ranks = [s if isinstance(s, int) else len(s) for s in self.schedule]
        if any(not self.initial_rank <= r <= self.full_rank for r in ranks):
            raise StreamSpecError("scheduled ranks must lie in [initial_rank, full_rank]")
        if ranks[0] != self.initial_rank or ranks[-1] != self.full_rank:
            raise StreamSpecError("schedule must start at initial_rank and end at full_rank")
        sets = [s for s in self.schedule if not isinstance(s, int)]
        if sets:
            if len(sets) != nb:
                raise StreamSpecError("schedule cannot mix ranks and active sets")
            if any(len(set(s)) != len(s) or min(s) < 0 or max(s) >= self.full_rank for s in sets):
                raise StreamSpecError("active sets must hold distinct indices below full_rank")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    factors: FactorModel
    batch_ranks: tuple
    active_sets: tuple
    batches: tuple = field(repr=False)
    spec: StreamSpec | None = None

    def drift_flags(self) -> list[bool]:
        """Expected drift per batch: a batch drifts when it shows a concept
        not seen before or lacks one that was seen before."""
        seen: set = set()
        flags = []
        for b, act in enumerate(self.active_sets):
            act = set(act)
            flags.append(b > 0 and (bool(act - seen) or not seen <= act))
            seen |= act
        return flags

    def running_ranks(self) -> list[int]:
        seen: set = set()
        out = []
        for act in self.active_sets:
            seen |= set(act)
            out.append(len(seen))
        return out


def _active_sets(spec: StreamSpec, rng: np.random.Generator):
    nb = spec.n_batches
    core = list(range(spec.initial_rank))
    rest = np.arange(spec.initial_rank, spec.full_rank)
    full = tuple(range(spec.full_rank))
    if spec.schedule is not None and not isinstance(spec.schedule[0], int):
        return [tuple(s) for s in spec.schedule]
    sets = []
    for b in range(nb):
        if b == nb - 1:
            sets.append(full)
            continue
        if b == 0:
            sets.append(tuple(core))
            continue
        if spec.schedule is not None:
            size = spec.schedule[b]
        else:
            size = int(rng.integers(spec.initial_rank, spec.full_rank + 1))
        extra = rng.choice(rest, size=size - len(core), replace=False) if size > len(core) else []
        sets.append(tuple(sorted(core + [int(e) for e in extra])))
    return sets


def generate_stream(spec: StreamSpec) -> GroundTruth:
    """Draw a stream as described by ``spec``; deterministic per seed."""
    spec.validate()
    I, J, K = spec.dims
    R = spec.full_rank
    rng = np.random.default_rng(spec.seed)
    A = rng.uniform(0.0, 1.0, size=(I, R))
    B = rng.uniform(0.0, 1.0, size=(J, R))
    A /= np.linalg.norm(A, axis=0)
    B /= np.linalg.norm(B, axis=0)
    scale = rng.uniform(0.5, 1.5, size=R) * np.sqrt(spec.batch_size / 3.0)
    sets = _active_sets(spec, rng)

    C = np.zeros((K, R))
    batches = []
    T = spec.batch_size
    for b, act in enumerate(sets):
        act = list(act)
        block = np.zeros((T, R))
        block[:, act] = rng.uniform(0.0, 1.0, size=(T, len(act)))
        if spec.fixed_scale:
            block[:, act] *= scale[act] / np.linalg.norm(block[:, act], axis=0)
        C[b * T : (b + 1) * T] = block
        x = reconstruct_array(A, B, block)
        if spec.noise_sigma > 0:
            sd = spec.noise_sigma * np.linalg.norm(x.ravel()) / np.sqrt(I * J * T)
            x = x + sd * rng.standard_normal(x.shape)
        batches.append(DenseTensor3(x))

    ranks = tuple(len(s) for s in sets)
    model = FactorModel(A, B, C, np.ones(R))
    return GroundTruth(model, ranks, tuple(tuple(s) for s in sets), tuple(batches), spec)


def batch_oracle_rank(gt: GroundTruth, b: int) -> int:
    if not 0 <= b < len(gt.batch_ranks):
        raise IndexError(f"batch index {b} out of range for {len(gt.batch_ranks)} batches")
    return int(gt.batch_ranks[b])


# -- interchange ------------------------------------------------------------
#
# A stream directory holds batch_000.dt3, batch_001.dt3, ... and
# manifest.txt. The manifest is "key = value" lines; each batch has a line
#   batch <n> = <file> rank=<r> active=<i,j,...>
# and the spec travels as "spec = <json>".


def save_stream(gt: GroundTruth, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = ["# driftcp stream manifest", "version = 1"]
    if gt.spec is not None:
        s = gt.spec
        lines.append(f"seed = {int(s.seed)}")
        spec_json = {
            "dims": list(s.dims),
            "initial_rank": s.initial_rank,
            "full_rank": s.full_rank,
            "batch_size": s.batch_size,
            "noise_sigma": s.noise_sigma,
            "seed": int(s.seed),
            "schedule": None if s.schedule is None else [x if isinstance(x, int) else list(x) for x in s.schedule],
            "fixed_scale": s.fixed_scale,
        }
        lines.append("spec = " + json.dumps(spec_json, sort_keys=True))
    lines.append(f"batches = {len(gt.batches)}")
    for b, (X, r, act) in enumerate(zip(gt.batches, gt.batch_ranks, gt.active_sets)):
        name = f"batch_{b:03d}.dt3"
        save_dt3(X, d / name)
        lines.append(f"batch {b} = {name} rank={int(r)} active={','.join(str(a) for a in act)}")
    (d / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    return d


@dataclass(frozen=True, eq=False)
class LoadedStream:
    batches: tuple
    batch_ranks: tuple | None
    active_sets: tuple | None
    spec: StreamSpec | None

    def ground_truth(self) -> GroundTruth | None:
        if self.active_sets is None:
            return None
        return GroundTruth(None, self.batch_ranks, self.active_sets, self.batches, self.spec)


def load_stream(directory) -> LoadedStream:
    """Read a stream directory written by :func:`save_stream`.

    Raises ``OSError`` with the offending path for unreadable input.
    """
    d = Path(directory)
    manifest = d / MANIFEST_NAME
    if not manifest.is_file():
        raise FileNotFoundError(f"{manifest}: stream manifest not found")
    entries = []
    spec = None
    for lineno, raw in enumerate(manifest.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise OSError(f"{manifest}:{lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        if key == "spec":
            js = json.loads(value)
            spec = StreamSpec(**{**js, "dims": tuple(js["dims"])})
        elif key.startswith("batch "):
            parts = value.split()
            meta = dict(p.split("=", 1) for p in parts[1:])
            act = tuple(int(a) for a in meta["active"].split(",") if a) if "active" in meta else None
            entries.append((int(key.split()[1]), parts[0], int(meta["rank"]) if "rank" in meta else None, act))
    entries.sort()
    batches = tuple(load_dt3(d / name) for _, name, _, _ in entries)
    ranks = tuple(r for _, _, r, _ in entries) if all(e[2] is not None for e in entries) else None
    sets = tuple(a for *_, a in entries) if all(e[3] is not None for e in entries) else None
    return LoadedStream(batches, ranks, sets, spec)
