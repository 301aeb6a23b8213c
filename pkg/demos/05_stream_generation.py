"""Synthetic drift streams with known ground truth.

A stream has a fixed pool of concepts; each batch switches some of them on
through the third-mode factor. The ground truth records the active sets.
"""
import tempfile

from driftcp import StreamSpec, generate_stream, load_stream, save_stream

# %% Ten batches of 10 slices; two concepts at the start, five overall.
spec = StreamSpec((100, 100, 100), 2, 5, 10, noise_sigma=0.01, seed=0)
gt = generate_stream(spec)
print("batch ranks:   ", gt.batch_ranks)
print("running ranks: ", gt.running_ranks())
print("drift flags:   ", gt.drift_flags())

# %% A schedule can also be given explicitly, as ranks or as active sets.
sched = generate_stream(StreamSpec((20, 20, 40), 2, 3, 10, schedule=((0, 1), (0, 1), (1, 2), (0, 1, 2))))
print("explicit sets: ", sched.active_sets, sched.drift_flags())

# %% Streams are exchanged as a directory of binary batches plus a manifest.
with tempfile.TemporaryDirectory() as d:
    save_stream(gt, d)
    loaded = load_stream(d)
    print("reloaded", len(loaded.batches), "batches, ranks", loaded.batch_ranks)
