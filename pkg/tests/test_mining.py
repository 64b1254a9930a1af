import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from metricforge.errors import DataError, ValidationError
from metricforge.mining import (
    MiningStats,
    Triplet,
    TripletCategory,
    categorize,
    mine_random,
    mine_semihard_batch,
    mining_stats,
    pairwise_sq_dist,
)
from metricforge.train import triplet_loss


def naive_sq_dist(X):
    n = X.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = float(np.sum((X[i] - X[j]) ** 2))
    return out


def brute_semihard(D, labels):
    """Exhaustive scan over negatives, mirroring the mining rule."""
    out = []
    n = len(labels)
    for a in range(n):
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            negs = [j for j in range(n) if labels[j] != labels[a]]
            above = [j for j in negs if D[a, j] > D[a, p]]
            if above:
                best = min(above, key=lambda j: (D[a, j], j))
            else:
                best = max(negs, key=lambda j: (D[a, j], -j))
            out.append(Triplet(a, p, best))
    return out


def brute_stats(D, labels, margin):
    easy = semi = hard = 0
    n = len(labels)
    for a in range(n):
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            for m in range(n):
                if labels[m] == labels[a]:
                    continue
                cat = categorize(D[a, p], D[a, m], margin)
                easy += cat is TripletCategory.EASY
                semi += cat is TripletCategory.SEMI_HARD
                hard += cat is TripletCategory.HARD
    return MiningStats(easy, semi, hard)


def test_pairwise_basic_example():
    D = pairwise_sq_dist(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert D.n == 2
    assert np.allclose(D.d2, [[0.0, 2.0], [2.0, 0.0]])


def test_pairwise_zero_diagonal_and_symmetry():
    rng = np.random.default_rng(0)
    X = rng.uniform(-10, 10, size=(30, 7))
    D = pairwise_sq_dist(X).d2
    assert np.array_equal(D, D.T)
    assert np.all(np.diag(D) == 0.0)
    assert D.min() >= 0.0


def test_pairwise_matches_naive_oracle():
    rng = np.random.default_rng(1)
    X = rng.uniform(-10, 10, size=(64, 32))
    D = pairwise_sq_dist(X).d2
    assert np.max(np.abs(D - naive_sq_dist(X))) < 1e-5


def test_pairwise_rejects_non_finite():
    with pytest.raises(ValidationError):
        pairwise_sq_dist(np.array([[1.0, np.nan]]))


@pytest.mark.parametrize(
    "d2_ap,d2_an,expected",
    [
        (1.0, 1.5, TripletCategory.EASY),
        (1.0, 1.1, TripletCategory.SEMI_HARD),
        (1.0, 0.9, TripletCategory.HARD),
        (1.0, 1.0, TripletCategory.SEMI_HARD),  # tie at the lower edge
        (1.0, 1.2, TripletCategory.EASY),  # tie at the margin edge
        (0.0, 0.0, TripletCategory.SEMI_HARD),
    ],
)
def test_categorize_convention(d2_ap, d2_an, expected):
    assert categorize(d2_ap, d2_an, margin=0.2) is expected


@given(
    d2_ap=st.floats(0, 50, allow_nan=False),
    d2_an=st.floats(0, 50, allow_nan=False),
    margin=st.floats(1e-6, 5, allow_nan=False),
)
@settings(max_examples=300, deadline=None)
def test_categorize_is_a_partition(d2_ap, d2_an, margin):
    cats = [
        d2_an >= d2_ap + margin,
        d2_ap <= d2_an < d2_ap + margin,
        d2_an < d2_ap,
    ]
    assert sum(cats) == 1
    got = categorize(d2_ap, d2_an, margin)
    assert [TripletCategory.EASY, TripletCategory.SEMI_HARD, TripletCategory.HARD][
        cats.index(True)
    ] is got


@given(
    d2_ap=st.floats(0, 20),
    d2_an=st.floats(0, 20),
    margin=st.floats(1e-4, 2.0),
)
@settings(max_examples=300, deadline=None)
def test_category_loss_consistency(d2_ap, d2_an, margin):
    # Losses follow the taxonomy: easy <-> 0, hard -> > margin, semi-hard in (0, margin].
    f_a = np.array([0.0])
    f_p = np.array([np.sqrt(d2_ap)])
    f_n = np.array([-np.sqrt(d2_an)])
    d2_ap, d2_an = float(f_p[0] ** 2), float(f_n[0] ** 2)
    # ulp-level gaps between the squared distances are undecidable in floats
    assume(d2_ap == d2_an or abs(d2_ap - d2_an) > 1e-9 * max(1.0, d2_ap, d2_an))
    loss = triplet_loss(f_a, f_p, f_n, margin)
    cat = categorize(d2_ap, d2_an, margin)
    if cat is TripletCategory.EASY:
        assert loss == 0.0
    elif cat is TripletCategory.HARD:
        assert loss > margin
    else:
        assert 0.0 < loss <= margin


def test_mine_random_validity_and_determinism():
    labels = [0, 0, 1, 1]
    triplets = mine_random(labels, count=10, seed=4)
    assert len(triplets) == 10
    for t in triplets:
        assert labels[t.a] == labels[t.p]
        assert labels[t.a] != labels[t.n]
        assert t.a != t.p
    assert triplets == mine_random(labels, count=10, seed=4)


def test_mine_random_covers_the_triplet_space_uniformly():
    labels = [0, 0, 1, 1]
    triplets = mine_random(labels, count=4000, seed=0)
    # 8 valid triplets, each should appear roughly 1/8 of the time
    counts = {}
    for t in triplets:
        counts[(t.a, t.p, t.n)] = counts.get((t.a, t.p, t.n), 0) + 1
    assert len(counts) == 8
    assert min(counts.values()) > 4000 / 8 * 0.7


def test_mine_random_single_class_errors():
    with pytest.raises(DataError):
        mine_random([0, 0, 0], count=5, seed=0)


def test_semihard_picks_argmin_above_threshold():
    # anchor 0 with positive 1 at d2 1.0; negatives at d2 1.4 and 2.0
    F = np.array([[0.0], [1.0], [np.sqrt(1.4)], [np.sqrt(2.0)]])
    labels = [0, 0, 1, 1]
    triplets = mine_semihard_batch(F, labels, margin=0.2)
    chosen = {(t.a, t.p): t.n for t in triplets}
    assert chosen[(0, 1)] == 2


def test_semihard_fallback_takes_farthest_negative():
    # both negatives closer to the anchor than the positive
    F = np.array([[0.0], [2.0], [0.5], [1.0]])
    labels = [0, 0, 1, 1]
    triplets = mine_semihard_batch(F, labels, margin=0.2)
    chosen = {(t.a, t.p): t.n for t in triplets}
    assert chosen[(0, 1)] == 3  # d2 1.0 > 0.25


def test_semihard_matches_brute_force_on_random_batches():
    rng = np.random.default_rng(9)
    for trial in range(20):
        b = int(rng.integers(6, 41))
        F = rng.normal(size=(b, 8))
        labels = rng.integers(0, 2, size=b)
        if labels.min() == labels.max() or min(
            np.count_nonzero(labels == 0), np.count_nonzero(labels == 1)
        ) == 0:
            labels[0] = 0
            labels[1] = 0
            labels[2] = 1
        D = pairwise_sq_dist(F).d2
        assert mine_semihard_batch(F, labels, margin=0.3) == brute_semihard(D, labels)


def test_semihard_requires_both_classes_and_a_pair():
    with pytest.raises(DataError):
        mine_semihard_batch(np.zeros((3, 2)), [0, 0, 0], margin=0.2)
    with pytest.raises(DataError):
        mine_semihard_batch(np.zeros((2, 2)), [0, 1], margin=0.2)


def test_mining_stats_far_separated_all_easy():
    F = np.array([[0.0], [0.1], [10.0], [10.1]])
    stats = mining_stats(F, [0, 0, 1, 1], margin=0.2)
    assert stats.semihard_count == 0 and stats.hard_count == 0
    assert stats.easy_count == stats.total == 8


def test_mining_stats_coincident_points_all_semihard():
    F = np.zeros((4, 3))
    stats = mining_stats(F, [0, 0, 1, 1], margin=0.2)
    assert stats.easy_count == 0 and stats.hard_count == 0
    assert stats.semihard_count == stats.total == 8


def test_mining_stats_match_enumeration():
    rng = np.random.default_rng(3)
    for trial in range(10):
        F = rng.normal(size=(40, 5)) * rng.uniform(0.5, 2)
        labels = rng.integers(0, 2, size=40)
        labels[:2] = [0, 1]
        D = pairwise_sq_dist(F).d2
        got = mining_stats(F, labels, margin=0.4)
        want = brute_stats(D, labels, margin=0.4)
        assert got == want


def test_mining_stats_sampling_path():
    rng = np.random.default_rng(12)
    F = rng.normal(size=(30, 4))
    labels = rng.integers(0, 2, size=30)
    labels[:2] = [0, 1]
    stats = mining_stats(F, labels, margin=0.2, sample_cap=500, seed=8)
    assert stats.total == 500
    assert stats == mining_stats(F, labels, margin=0.2, sample_cap=500, seed=8)


def test_mining_stats_single_class_errors():
    with pytest.raises(DataError):
        mining_stats(np.zeros((3, 2)), [1, 1, 1], margin=0.2)
