import numpy as np
import pytest

from sparsevos.sampler import (
    SamplerState,
    k_schedule,
    sample_naive_triplet,
    sample_oracle_triplet,
    sample_phase1_triplet,
    sample_phase2_triplet,
)


def gaps_of(trip):
    a = trip.ascending
    return a[1] - a[0], a[2] - a[1]


def test_k_schedule_endpoints_and_monotone():
    iters = 3000
    ks = [k_schedule(i, iters, 5, 25) for i in range(iters)]
    assert ks[0] == 5
    assert ks[-1] == 25
    assert all(b >= a for a, b in zip(ks, ks[1:]))
    assert set(ks) == set(range(5, 26))


def test_k_schedule_flat():
    assert k_schedule(0, 2, 7, 7) == 7
    assert k_schedule(1, 2, 7, 7) == 7
    with pytest.raises(ValueError):
        k_schedule(2, 2, 5, 25)


def test_phase1_reference_always_labeled():
    rng = np.random.default_rng(0)
    labeled = (3, 12)
    for _ in range(500):
        trip = sample_phase1_triplet(20, labeled, 5, rng)
        assert trip.frames[0] in labeled
        assert trip.labeled[0]
        g1, g2 = gaps_of(trip)
        assert 1 <= g1 <= 5 and 1 <= g2 <= 5
        assert len(set(trip.frames)) == 3
        assert all(0 <= f < 20 for f in trip.frames)


def test_phase1_composition_frequency():
    # with both compositions reachable, the both-unlabeled rate is the coin
    rng = np.random.default_rng(1)
    n = 2000
    both = sum(
        sample_phase1_triplet(20, (3, 12), 12, rng).n_labeled_predictions == 0
        for _ in range(n)
    )
    assert abs(both / n - 0.5) <= 0.02


def test_phase1_one_labeled_uses_other_frame():
    rng = np.random.default_rng(2)
    labeled = (3, 12)
    seen_positions = set()
    for _ in range(500):
        trip = sample_phase1_triplet(20, labeled, 12, rng)
        n_lab = trip.n_labeled_predictions
        assert n_lab in (0, 1)
        if n_lab == 1:
            pos = 1 if trip.labeled[1] else 2
            seen_positions.add(pos)
            assert trip.frames[pos] in labeled
    assert seen_positions == {1, 2}


def test_labels_at_video_end_need_backward_visits():
    rng = np.random.default_rng(3)
    for _ in range(200):
        trip = sample_phase1_triplet(20, (18, 19), 5, rng)
        assert trip.frames[0] in (18, 19)
        assert trip.direction == "backward"
        g1, g2 = gaps_of(trip)
        assert 1 <= g1 <= 5 and 1 <= g2 <= 5
        assert not trip.relaxed


def test_short_video_gaps_shrink():
    rng = np.random.default_rng(4)
    for _ in range(50):
        trip = sample_phase1_triplet(4, (0, 3), 25, rng)
        assert sorted(trip.frames) == list(trip.ascending)
        assert max(trip.frames) <= 3


def test_unreachable_composition_is_relaxed():
    # length 3 with both ends labeled: both-unlabeled is impossible
    rng = np.random.default_rng(5)
    relaxed = 0
    for _ in range(300):
        trip = sample_phase1_triplet(3, (0, 2), 1, rng)
        assert trip.ascending == (0, 1, 2)
        relaxed += trip.relaxed
    assert 0 < relaxed < 300


def test_phase2_reference_unrestricted():
    rng = np.random.default_rng(6)
    refs = set()
    for _ in range(500):
        trip = sample_phase2_triplet(20, (3, 12), 8, rng)
        refs.add(trip.frames[0])
        assert trip.n_labeled_predictions in (0, 1)
    unlabeled_refs = refs - {3, 12}
    assert len(unlabeled_refs) > 5


def test_naive_uses_only_labeled_frames():
    rng = np.random.default_rng(7)
    shapes = set()
    for _ in range(200):
        trip = sample_naive_triplet((3, 12), rng)
        assert set(trip.frames) <= {3, 12}
        assert len(set(trip.frames)) == 2
        assert trip.labeled == (True, True, True)
        shapes.add(trip.frames)
    assert shapes == {(3, 3, 12), (3, 12, 12), (12, 12, 3), (12, 3, 3)}


def test_oracle_everything_labeled():
    rng = np.random.default_rng(8)
    refs = set()
    for _ in range(400):
        trip = sample_oracle_triplet(20, 6, rng)
        assert trip.labeled == (True, True, True)
        g1, g2 = gaps_of(trip)
        assert 1 <= g1 <= 6 and 1 <= g2 <= 6
        refs.add(trip.frames[0])
    assert len(refs) > 10


def test_determinism():
    a = [sample_phase1_triplet(20, (3, 12), 5, np.random.default_rng(9)) for _ in range(1)]
    b = [sample_phase1_triplet(20, (3, 12), 5, np.random.default_rng(9)) for _ in range(1)]
    assert a == b
    rng1, rng2 = np.random.default_rng(10), np.random.default_rng(10)
    seq1 = [sample_phase2_triplet(20, (0, 19), 8, rng1).frames for _ in range(50)]
    seq2 = [sample_phase2_triplet(20, (0, 19), 8, rng2).frames for _ in range(50)]
    assert seq1 == seq2


def test_sampler_state_counters():
    state = SamplerState(k_start=1, k_end=1, iterations=100)
    rng = np.random.default_rng(11)
    for it in range(100):
        state.sample("phase1", 3, (0, 2), it, rng)
    assert state.draws == 100
    assert 0 < state.relaxed_draws < 100

    with pytest.raises(ValueError, match="unknown sampling mode"):
        state.sample("phase3", 20, (0, 1), 0, rng)


def test_infeasible_video_rejected():
    rng = np.random.default_rng(12)
    with pytest.raises(ValueError, match="no feasible"):
        sample_phase1_triplet(3, (1,), 5, rng)
