import io

import numpy as np
import pytest

from metricforge.classifiers import (
    BagEnsemble,
    ForestParams,
    LinearClassifier,
    NearestCentroid,
    aggregate_video,
    ensemble_predict,
    ensemble_scores,
    fit_centroid,
    fit_forest,
    fit_linear,
    gini_impurity,
    load_model,
    logistic_loss_and_grad,
    make_bags,
    predict_centroid,
    predict_forest,
    predict_linear,
    save_model,
)
from metricforge.data import EmbeddingDataset
from metricforge.errors import DataError
from metricforge.synth import generate, reference_config


def separable_1d(seed=0, n=60):
    rng = np.random.default_rng(seed)
    y = np.array([0, 1] * (n // 2))
    X = np.where(y[:, None] == 0, -1.0, 1.0) + rng.uniform(-0.1, 0.1, size=(n, 1))
    return X, y


# --- linear ---------------------------------------------------------------

def test_linear_zero_epochs_predicts_half():
    X, y = separable_1d()
    model = fit_linear(X, y, epochs=0)
    assert np.all(model.w == 0.0) and model.b == 0.0
    assert np.all(predict_linear(model, X) == 0.5)


def test_linear_separable_reaches_perfect_training_accuracy():
    X, y = separable_1d(seed=3)
    model = fit_linear(X, y, epochs=50, lr=0.1, seed=7)
    acc = np.mean((predict_linear(model, X) >= 0.5) == y)
    assert acc == 1.0


def test_linear_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 3))
    y = rng.integers(0, 2, size=40).astype(np.float64)
    w = rng.normal(size=3)
    b = 0.3
    loss, gw, gb = logistic_loss_and_grad(w, b, X, y)
    eps = 1e-6
    for i in range(3):
        wp = w.copy()
        wp[i] += eps
        up = logistic_loss_and_grad(wp, b, X, y)[0]
        wp[i] -= 2 * eps
        down = logistic_loss_and_grad(wp, b, X, y)[0]
        numeric = (up - down) / (2 * eps)
        assert abs(gw[i] - numeric) / (abs(gw[i]) + abs(numeric) + 1e-12) < 1e-5
    up = logistic_loss_and_grad(w, b + eps, X, y)[0]
    down = logistic_loss_and_grad(w, b - eps, X, y)[0]
    numeric = (up - down) / (2 * eps)
    assert abs(gb - numeric) / (abs(gb) + abs(numeric) + 1e-12) < 1e-5


def test_linear_saturation_and_monotonicity():
    model = LinearClassifier(np.array([1.0]), 100.0)
    assert predict_linear(model, np.array([[0.0]]))[0] > 0.999
    model = LinearClassifier(np.array([2.0]), 0.0)
    xs = np.linspace(-3, 3, 13)[:, None]
    probs = predict_linear(model, xs)
    assert np.all(np.diff(probs) > 0)


def test_linear_single_class_errors():
    X = np.zeros((4, 2))
    with pytest.raises(DataError):
        fit_linear(X, np.zeros(4))


def test_linear_determinism():
    X, y = separable_1d(seed=5)
    m1 = fit_linear(X, y, epochs=10, seed=9)
    m2 = fit_linear(X, y, epochs=10, seed=9)
    assert np.array_equal(m1.w, m2.w) and m1.b == m2.b


# --- forest ---------------------------------------------------------------

def test_gini_values():
    assert gini_impurity(5, 5) == pytest.approx(0.5)
    assert gini_impurity(10, 0) == 0.0
    assert gini_impurity(0, 0) == 0.0


def test_forest_depth_one_separates_single_feature():
    X, y = separable_1d(seed=1)
    forest = fit_forest(X, y, ForestParams(n_trees=1, max_depth=1, min_samples_leaf=1), seed=0)
    probs = predict_forest(forest, X)
    assert np.mean((probs >= 0.5) == y) == 1.0


def test_forest_same_seed_same_predictions():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(80, 5))
    y = rng.integers(0, 2, size=80)
    y[:2] = [0, 1]
    probe = rng.normal(size=(30, 5))
    p1 = predict_forest(fit_forest(X, y, ForestParams(n_trees=10, max_depth=4), seed=3), probe)
    p2 = predict_forest(fit_forest(X, y, ForestParams(n_trees=10, max_depth=4), seed=3), probe)
    assert np.array_equal(p1, p2)


def test_forest_probability_is_tree_vote_fraction():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(60, 4))
    y = rng.integers(0, 2, size=60)
    y[:2] = [0, 1]
    forest = fit_forest(X, y, ForestParams(n_trees=5, max_depth=3), seed=1)
    probe = rng.normal(size=(20, 4))
    from metricforge.classifiers import _tree_votes

    votes = np.stack([_tree_votes(t, probe) for t in forest.trees])
    assert np.array_equal(predict_forest(forest, probe), votes.mean(axis=0))


def test_forest_depth_bound_holds():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(100, 6))
    y = rng.integers(0, 2, size=100)
    y[:2] = [0, 1]
    forest = fit_forest(X, y, ForestParams(n_trees=5, max_depth=3, min_samples_leaf=1), seed=2)

    def depth(node):
        if node.is_leaf:
            return 0
        return 1 + max(depth(node.left), depth(node.right))

    assert all(depth(t) <= 3 for t in forest.trees)


def test_forest_leaf_sizes_respect_minimum():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(50, 3))
    y = rng.integers(0, 2, size=50)
    y[:2] = [0, 1]
    forest = fit_forest(X, y, ForestParams(n_trees=3, max_depth=6, min_samples_leaf=4), seed=5)

    def leaves(node):
        if node.is_leaf:
            yield node
        else:
            yield from leaves(node.left)
            yield from leaves(node.right)

    for tree in forest.trees:
        for leaf in leaves(tree):
            assert leaf.count_real + leaf.count_fake >= 4


def test_forest_single_class_errors():
    with pytest.raises(DataError):
        fit_forest(np.zeros((4, 2)), np.ones(4, dtype=int), ForestParams())


# --- centroid ---------------------------------------------------------------

def test_centroid_matches_class_means():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 4))
    y = rng.integers(0, 2, size=30)
    y[:2] = [0, 1]
    model = fit_centroid(X, y)
    assert np.allclose(model.centroid_real, X[y == 0].mean(axis=0), atol=1e-6)
    assert np.allclose(model.centroid_fake, X[y == 1].mean(axis=0), atol=1e-6)


def test_centroid_score_geometry():
    model = NearestCentroid(np.array([0.0, 0.0]), np.array([2.0, 0.0]))
    assert predict_centroid(model, np.array([[1.0, 0.0]]))[0] == pytest.approx(0.0)
    at_fake = predict_centroid(model, np.array([[2.0, 0.0]]))[0]
    assert at_fake == pytest.approx(4.0)
    assert model.predict_proba(np.array([[1.0, 0.0]]))[0] == pytest.approx(0.5)


# --- bags -------------------------------------------------------------------

def imbalanced_dataset():
    # 70 fake videos + 10 real videos, 3 frames each
    n_videos = 80
    frames = 3
    labels = np.repeat([1] * 70 + [0] * 10, frames)
    video_ids = np.repeat(np.arange(n_videos), frames)
    frame_ids = np.tile(np.arange(frames), n_videos)
    rng = np.random.default_rng(0)
    return EmbeddingDataset(4, labels, video_ids, frame_ids, rng.normal(size=(n_videos * frames, 4)).astype(np.float32))


def test_make_bags_structure():
    ds = imbalanced_dataset()
    train = np.arange(len(ds))
    bags = make_bags(ds, train, k=7, seed=1)
    assert len(bags) == 7
    real_idx = set(np.flatnonzero(ds.labels == 0).tolist())
    seen_fake_videos = []
    for bag in bags:
        bag_set = set(bag.tolist())
        # every minority (real) frame is in every bag
        assert real_idx <= bag_set
        fake_videos = np.unique(ds.video_ids[np.array(sorted(bag_set - real_idx))])
        seen_fake_videos.append(set(fake_videos.tolist()))
        assert len(fake_videos) == 10  # 70 fake videos / 7 bags
    # majority parts partition the fake videos
    union = set().union(*seen_fake_videos)
    assert union == set(range(70))
    assert sum(len(s) for s in seen_fake_videos) == 70


def test_make_bags_k1_is_full_train_set():
    ds = imbalanced_dataset()
    train = np.arange(len(ds))
    bags = make_bags(ds, train, k=1, seed=0)
    assert len(bags) == 1
    assert np.array_equal(np.sort(bags[0]), train)


def test_make_bags_rejects_even_k_and_tiny_majority():
    ds = imbalanced_dataset()
    train = np.arange(len(ds))
    with pytest.raises(ValueError):
        make_bags(ds, train, k=4, seed=0)
    small = np.flatnonzero(np.isin(ds.video_ids, [0, 1, 2, 70, 71]))
    with pytest.raises(DataError):
        make_bags(ds, small, k=7, seed=0)


def test_ensemble_majority_vote():
    class Fixed:
        def __init__(self, p):
            self.p = p

        def predict_proba(self, X):
            return np.full(X.shape[0], self.p)

    X = np.zeros((3, 1))
    models = [Fixed(p) for p in [0.9, 0.8, 0.1, 0.7, 0.2, 0.6, 0.95]]
    # votes [1,1,0,1,0,1,1] -> fake
    assert np.all(ensemble_predict(models, X) == 1)
    assert np.allclose(ensemble_scores(models, X), 5 / 7)
    with pytest.raises(ValueError):
        ensemble_predict(models[:4], X)


def test_ensemble_matches_explicit_vote_count():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(25, 3))
    models = [
        LinearClassifier(rng.normal(size=3), float(rng.normal())) for _ in range(7)
    ]
    got = ensemble_predict(models, X)
    votes = np.stack([m.predict_proba(X) >= 0.5 for m in models]).sum(axis=0)
    assert np.array_equal(got, votes >= 4)


def test_ensemble_of_identical_models_equals_single():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(20, 2))
    model = LinearClassifier(np.array([1.0, -0.5]), 0.1)
    single = (model.predict_proba(X) >= 0.5).astype(int)
    assert np.array_equal(ensemble_predict([model] * 7, X), single)


# --- video aggregation -------------------------------------------------------

def test_aggregate_vote_rule():
    vids = np.array([3, 3, 3])
    fids = np.array([0, 1, 2])
    probs = np.array([0.9, 0.8, 0.1])
    v, labels, scores = aggregate_video(vids, fids, probs, rule="vote")
    assert v.tolist() == [3]
    assert labels[0] == 1
    assert scores[0] == pytest.approx(2 / 3)


def test_aggregate_max_frames_one_uses_first_frame():
    vids = np.array([3, 3, 3])
    fids = np.array([2, 0, 1])  # out of order on purpose
    probs = np.array([0.9, 0.1, 0.8])
    _, labels, scores = aggregate_video(vids, fids, probs, rule="vote", max_frames=1)
    assert labels[0] == 0 and scores[0] == 0.0


def test_aggregate_ignores_frames_beyond_cap():
    rng = np.random.default_rng(1)
    probs = rng.uniform(size=30)
    vids = np.zeros(30, dtype=int)
    fids = np.arange(30)
    base = aggregate_video(vids, fids, probs, rule="mean", max_frames=25)
    probs2 = probs.copy()
    probs2[25:] = 1.0 - probs2[25:]
    changed = aggregate_video(vids, fids, probs2, rule="mean", max_frames=25)
    assert base[2][0] == changed[2][0]


def test_aggregate_mean_rule_and_errors():
    vids = np.array([1, 1, 2, 2])
    fids = np.array([0, 1, 0, 1])
    probs = np.array([0.2, 0.4, 0.9, 0.8])
    v, labels, scores = aggregate_video(vids, fids, probs, rule="mean")
    assert v.tolist() == [1, 2]
    assert scores.tolist() == [pytest.approx(0.3), pytest.approx(0.85)]
    assert labels.tolist() == [0, 1]
    with pytest.raises(ValueError):
        aggregate_video(vids, fids, probs, rule="median")
    with pytest.raises(DataError):
        aggregate_video(np.array([]), np.array([]), np.array([]))


# --- persistence --------------------------------------------------------------

def test_model_container_roundtrip_all_kinds():
    rng = np.random.default_rng(20)
    X = rng.normal(size=(60, 4))
    y = rng.integers(0, 2, size=60)
    y[:2] = [0, 1]
    probe = rng.normal(size=(10, 4))

    linear = fit_linear(X, y, epochs=5, seed=1)
    forest = fit_forest(X, y, ForestParams(n_trees=4, max_depth=3), seed=2)
    centroid = fit_centroid(X, y)
    ensemble = BagEnsemble([fit_linear(X, y, epochs=3, seed=s) for s in range(3)])

    for model, predict in [
        (linear, lambda m: m.predict_proba(probe)),
        (forest, lambda m: m.predict_proba(probe)),
        (centroid, lambda m: m.predict_proba(probe)),
        (ensemble, lambda m: ensemble_scores(m.models, probe)),
    ]:
        buf = io.BytesIO()
        save_model(model, buf)
        back = load_model(io.BytesIO(buf.getvalue()))
        assert np.array_equal(predict(model), predict(back))
        buf2 = io.BytesIO()
        save_model(back, buf2)
        assert buf2.getvalue() == buf.getvalue()


def test_bagging_improves_minority_recall_on_imbalanced_data():
    # Golden run: 7-bag ensemble recall on the minority (real) class is at
    # least the single unbalanced model's, on a balanced held-out split.
    ds = generate(reference_config("imbalanced"))
    video_labels = {int(v): int(ds.labels[ds.video_ids == v][0]) for v in np.unique(ds.video_ids)}
    real_videos = sorted(v for v, l in video_labels.items() if l == 0)
    fake_videos = sorted(v for v, l in video_labels.items() if l == 1)
    test_videos = set(real_videos[:4] + fake_videos[:4])
    test_idx = np.flatnonzero(np.isin(ds.video_ids, sorted(test_videos)))
    train_idx = np.flatnonzero(~np.isin(ds.video_ids, sorted(test_videos)))

    Xtr = ds.vectors[train_idx].astype(np.float64)
    ytr = ds.labels[train_idx].astype(np.int64)
    Xte = ds.vectors[test_idx].astype(np.float64)
    yte = ds.labels[test_idx].astype(np.int64)

    single = fit_linear(Xtr, ytr, epochs=30, seed=5)
    single_pred = (single.predict_proba(Xte) >= 0.5).astype(int)

    bags = make_bags(ds, train_idx, k=7, seed=5)
    models = []
    for i, bag in enumerate(bags):
        models.append(
            fit_linear(
                ds.vectors[bag].astype(np.float64),
                ds.labels[bag].astype(np.int64),
                epochs=30,
                seed=100 + i,
            )
        )
    bag_pred = ensemble_predict(models, Xte)

    def real_recall(pred):
        mask = yte == 0
        return np.mean(pred[mask] == 0)

    assert real_recall(bag_pred) >= real_recall(single_pred)
