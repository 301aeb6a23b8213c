import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from driftcp.als import AlsOptions, cp_als
from driftcp.matching import MatchOptions, MatchResult
from driftcp.seekdestroy import (
    StreamOptions,
    StreamState,
    init_state,
    load_checkpoint,
    process_batch,
    reconstruct_stream,
    run_stream,
    save_checkpoint,
    stream_weights,
    update_evolving_factor,
    update_rho,
)
from driftcp.streamgen import StreamSpec, generate_stream
from driftcp.tensor import DenseTensor3, TensorError, concat_all, reconstruct, reconstruct_array, relative_error

OPTS = StreamOptions()


def orthogonal_batch(cols, K=6, seed=0, I=8):
    """Batch built from identity columns ``cols`` with positive C."""
    rng = np.random.default_rng(seed)
    E = np.eye(I)
    A = E[:, cols]
    B = np.roll(E, 1, axis=0)[:, cols]
    C = rng.uniform(0.5, 1.5, (K, len(cols)))
    return DenseTensor3(reconstruct_array(A, B, C))


def match(new=(), ob=(), oo=(), R=0, F=0):
    return MatchResult(tuple(new), tuple(ob), tuple(oo), np.zeros((R, F)))


# -- init_state -------------------------------------------------------------


def test_sds1_first_batch_running_rank():
    gt = generate_stream(StreamSpec((100, 100, 100), 2, 5, 10, seed=1))
    state, rep = init_state(gt.batches[0], OPTS, rank=2)
    assert state.running_rank == 2 and rep.drift_detected is False
    assert state.C.shape == (10, 2) and state.batches_seen == 1


def test_rank1_batch_rho_is_lambda():
    t = orthogonal_batch([0])
    state, _ = init_state(t, OPTS, rank=1)
    m = cp_als(t, 1, AlsOptions(init="gevd"))
    assert state.rho.size == 1
    assert state.rho[0] == pytest.approx(m.lam[0], rel=1e-12)


def test_first_batch_reconstruction():
    gt = generate_stream(StreamSpec((20, 20, 10), 3, 3, 10, seed=2))
    state, _ = init_state(gt.batches[0], OPTS, rank=3)
    direct = reconstruct(cp_als(gt.batches[0], 3, OPTS.als))
    assert np.max(np.abs(reconstruct_stream(state).data - direct.data)) < 1e-10


def test_estimated_first_batch():
    state, rep = init_state(orthogonal_batch([0, 1]), OPTS)
    assert state.running_rank == 2 and rep.batch_rank == 2


def test_empty_first_batch():
    with pytest.raises(TensorError):
        init_state(DenseTensor3.zeros((3, 3, 0)))


# -- process_batch scenarios -------------------------------------------------


def test_complete_overlap_no_drift():
    state, _ = init_state(orthogonal_batch([0, 1], seed=1), OPTS, rank=2)
    state2, rep = process_batch(state, orthogonal_batch([0, 1], seed=2), OPTS, rank=2)
    assert rep.overlap_count == 2 and rep.new_count == 0 and not rep.drift_detected
    assert state2.running_rank == 2


def test_concept_appears():
    state, _ = init_state(orthogonal_batch([0, 1], seed=1), OPTS, rank=2)
    state2, rep = process_batch(state, orthogonal_batch([0, 1, 4], seed=2), OPTS, rank=3)
    assert rep.new_count == 1 and rep.running_rank_after == 3 and rep.drift_detected
    assert state2.running_rank == 3


def test_concept_disappears():
    state, _ = init_state(orthogonal_batch([0, 1, 2], seed=1), OPTS, rank=3)
    state2, rep = process_batch(state, orthogonal_batch([0, 2], seed=2), OPTS, rank=2)
    assert state2.running_rank == 3 and rep.missing_count == 1 and rep.drift_detected
    # the missing concept's new rows are exactly zero
    missing = [i for i in range(3) if not np.any(state2.C[6:, i])]
    assert len(missing) == 1
    assert state2.rho[missing[0]] == state.rho[missing[0]]


def test_dims_mismatch():
    state, _ = init_state(orthogonal_batch([0]), OPTS, rank=1)
    with pytest.raises(TensorError):
        process_batch(state, DenseTensor3(np.ones((7, 8, 2))), OPTS, rank=1)


def test_all_zero_batch_skipped():
    state, _ = init_state(orthogonal_batch([0, 1]), OPTS, rank=2)
    state2, rep = process_batch(state, DenseTensor3.zeros((8, 8, 4)), OPTS)
    assert rep.skipped and rep.missing_count == 2 and rep.drift_detected
    assert state2.batches_seen == 2 and state2.K_total == 10
    assert not state2.C[6:].any() and np.array_equal(state2.rho, state.rho)


def test_average_factors_option():
    opts = StreamOptions(average_factors=True)
    state, _ = init_state(orthogonal_batch([0, 1], seed=1), opts, rank=2)
    state2, _ = process_batch(state, orthogonal_batch([0, 1], seed=2), opts, rank=2)
    assert np.allclose(np.linalg.norm(state2.A, axis=0), 1.0)
    assert list(state2.counts) == [2, 2]


# -- update_evolving_factor / update_rho --------------------------------------


def test_c_update_full_overlap_stacks():
    C_old = np.arange(6.0).reshape(3, 2)
    nC = np.array([[10.0, 20.0], [30.0, 40.0]])
    m = match(ob=(0, 1), oo=(0, 1), R=2, F=2)
    assert np.array_equal(update_evolving_factor(C_old, nC, m, 2, 2), np.vstack([C_old, nC]))


def test_c_update_all_new_is_block_diagonal():
    C_old = np.ones((3, 2))
    nC = np.full((2, 2), 5.0)
    m = match(new=(0, 1), R=2, F=2)
    out = update_evolving_factor(C_old, nC, m, 2, 4)
    expect = np.block([[C_old, np.zeros((3, 2))], [np.zeros((2, 2)), nC]])
    assert np.array_equal(out, expect)


def test_c_update_missing_concept_zero():
    C_old = np.ones((3, 3))
    nC = np.array([[7.0, 8.0]])
    m = match(ob=(0, 1), oo=(2, 0), R=3, F=2)
    out = update_evolving_factor(C_old, nC, m, 1, 3)
    assert out[3, 2] == 7.0 and out[3, 0] == 8.0 and out[3, 1] == 0.0


def test_c_update_validates():
    with pytest.raises(TensorError):
        update_evolving_factor(np.ones((2, 1)), np.ones((3, 1)), match(ob=(0,), oo=(0,), R=1, F=1), 2, 1)
    with pytest.raises(TensorError):
        update_evolving_factor(np.ones((2, 1)), np.ones((2, 1)), match(new=(0,), R=1, F=1), 2, 1)


def test_rho_full_overlap_sum():
    rho = update_rho([1.0, 2.0], [0.5, 0.25], match(ob=(0, 1), oo=(0, 1), R=2, F=2), 2)
    assert np.array_equal(rho, [1.5, 2.25])


def test_rho_missing_unchanged():
    rho = update_rho([1.0, 2.0], [0.5], match(ob=(0,), oo=(1,), R=2, F=1), 2)
    assert np.array_equal(rho, [1.0, 2.5])


def test_rho_new_concept_slot():
    rho = update_rho([1.0, 2.0], [0.3, 4.2], match(new=(1,), ob=(0,), oo=(0,), R=2, F=2), 3)
    assert np.array_equal(rho, [1.3, 2.0, 4.2])


def test_rho_validates():
    with pytest.raises(TensorError):
        update_rho([1.0], [1.0, 2.0], match(ob=(0,), oo=(0,), R=1, F=2), 1)


# -- reconstruction ---------------------------------------------------------


def test_single_batch_stream_reconstruction():
    gt = generate_stream(StreamSpec((15, 15, 10), 2, 2, 10, seed=3))
    state, _ = run_stream(gt.batches, OPTS, ranks=gt.batch_ranks)
    m = cp_als(gt.batches[0], 2, OPTS.als)
    assert np.max(np.abs(reconstruct_stream(state).data - reconstruct(m).data)) < 1e-10


def test_constant_two_batch_stream():
    gt = generate_stream(StreamSpec((30, 30, 20), 3, 3, 10, seed=4, fixed_scale=True))
    state, reps = run_stream(gt.batches, OPTS, ranks=gt.batch_ranks)
    assert relative_error(concat_all(gt.batches), reconstruct_stream(state)) < 1e-4
    assert not reps[1].drift_detected


def test_weights_denominators():
    gt = generate_stream(StreamSpec((20, 20, 30), 1, 2, 10, seed=5, schedule=((0,), (0,), (0, 1))))
    state, _ = run_stream(gt.batches, OPTS, ranks=gt.batch_ranks)
    assert np.allclose(stream_weights(state), state.rho / 3)
    assert np.allclose(stream_weights(state, "active"), state.rho / np.array([3, 1]))
    with pytest.raises(ValueError):
        stream_weights(state, "median")


def test_reconstruct_needs_a_batch():
    state = StreamState(np.ones((2, 1)) / np.sqrt(2), np.ones((2, 1)) / np.sqrt(2), np.zeros((0, 1)), [1.0], 0, [1])
    with pytest.raises(TensorError):
        reconstruct_stream(state)


# -- invariants over random streams ------------------------------------------


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(
    st.integers(0, 2**32 - 1),
    st.integers(1, 3),
    st.integers(0, 3),
    st.integers(2, 5),
    st.sampled_from([0.0, 0.05]),
    st.floats(0.3, 0.95),
)
def test_stream_invariants(seed, r0, extra, nb, noise, th):
    spec = StreamSpec((15, 14, 4 * nb), r0, r0 + extra, 4, noise_sigma=noise, seed=seed)
    gt = generate_stream(spec)
    state = None
    prev_rr = 0
    opts = StreamOptions(match=MatchOptions(threshold=th))
    K = 0
    for b, X in enumerate(gt.batches):
        if state is None:
            state, rep = init_state(X, opts, rank=gt.batch_ranks[0])
        else:
            before = state
            state, rep = process_batch(state, X, opts, rank=gt.batch_ranks[b])
            assert rep.running_rank_after == rep.running_rank_before + rep.new_count
            assert rep.drift_detected == (rep.new_count > 0 or rep.overlap_count < rep.running_rank_before)
            assert 0 <= rep.overlap_count <= min(before.running_rank, rep.batch_rank)
            assert rep.new_count + rep.overlap_count == rep.batch_rank
            # zero padding for concepts absent from this batch
            K_new = X.dims[2]
            present = np.flatnonzero(np.any(state.C[K:K + K_new] != 0, axis=0))
            assert len(present) == rep.batch_rank
            assert np.all(state.C[:K, before.running_rank:] == 0)
        K += X.dims[2]
        assert state.running_rank >= prev_rr
        prev_rr = state.running_rank
        assert state.C.shape == (K, state.running_rank)
        assert state.A.shape[1] == state.B.shape[1] == state.running_rank
        assert np.allclose(np.linalg.norm(state.A, axis=0), 1, atol=1e-8)
        assert np.allclose(np.linalg.norm(state.B, axis=0), 1, atol=1e-8)
        assert np.all(np.isfinite(state.rho))


def test_replay_determinism():
    gt = generate_stream(StreamSpec((20, 20, 30), 2, 4, 10, noise_sigma=0.05, seed=6))
    a, ra = run_stream(gt.batches, OPTS)
    b, rb = run_stream(gt.batches, OPTS)
    assert a == b and ra == rb


def test_no_drift_fixed_point():
    gt = generate_stream(StreamSpec((25, 25, 40), 3, 3, 10, seed=7, fixed_scale=True))
    _, reps = run_stream(gt.batches, OPTS)
    assert [r.drift_detected for r in reps[1:]] == [False] * 3


# -- checkpoints ------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    gt = generate_stream(StreamSpec((12, 11, 30), 2, 3, 10, seed=8))
    state, _ = run_stream(gt.batches, OPTS, ranks=gt.batch_ranks)
    save_checkpoint(state, tmp_path / "s.ckpt")
    assert load_checkpoint(tmp_path / "s.ckpt") == state
    raw = (tmp_path / "s.ckpt").read_bytes()
    assert raw[:7] == b"SADST1\0"


def test_checkpoint_resume_bit_identical(tmp_path):
    gt = generate_stream(StreamSpec((15, 15, 50), 2, 4, 10, noise_sigma=0.02, seed=9))
    full, _ = run_stream(gt.batches, OPTS)
    head, _ = run_stream(gt.batches[:2], OPTS)
    save_checkpoint(head, tmp_path / "mid.ckpt")
    resumed, _ = run_stream(gt.batches[2:], OPTS, state=load_checkpoint(tmp_path / "mid.ckpt"))
    assert resumed == full


def test_checkpoint_corrupt(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTSAD\0" + bytes(44))
    with pytest.raises(TensorError):
        load_checkpoint(p)
    gt = generate_stream(StreamSpec((5, 5, 10), 1, 1, 10, seed=10))
    state, _ = run_stream(gt.batches, OPTS, ranks=gt.batch_ranks)
    save_checkpoint(state, p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(TensorError):
        load_checkpoint(p)
