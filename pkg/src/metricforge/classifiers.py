"""Frame-level classifiers, the k-way bagging ensemble, and frame-to-video aggregation.

Fake is the positive class (label 1) everywhere. Probabilities are fake
probabilities; a probability of at least 0.5 votes fake, so ties resolve to
flagging.

Models serialize to a tagged "MDL1" container: magic bytes, one model-kind
byte, then a kind-specific little-endian payload.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from io import BytesIO

import numpy as np

from .data import EmbeddingDataset
from .errors import DataError, FormatError
from .util import atomic_write, fmt_float

MODEL_MAGIC = b"MDL1"
_KIND_LINEAR = 1
_KIND_FOREST = 2
_KIND_CENTROID = 3
_KIND_ENSEMBLE = 4


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_two_classes(y: np.ndarray) -> None:
    if y.size == 0 or np.all(y == y[0]):
        raise DataError("training requires both classes to be present")


def _check_dim(X: np.ndarray, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"expected shape (n, {d}), got {X.shape}")
    return X


# ---------------------------------------------------------------------------
# Linear logistic classifier trained by mini-batch SGD.

@dataclass
class LinearClassifier:
    w: np.ndarray
    b: float

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = _check_dim(X, self.w.shape[0])
        return _sigmoid(X @ self.w + self.b)


def logistic_loss_and_grad(
    w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, float]:
    """Mean logistic loss and its gradient; numerically stable for large scores."""
    z = X @ w + b
    # softplus(z) - y*z written without overflow
    loss = float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    p = _sigmoid(z)
    resid = p - y
    return loss, X.T @ resid / len(y), float(np.mean(resid))


def fit_linear(
    X: np.ndarray,
    y: np.ndarray,
    epochs: int = 100,
    lr: float = 0.1,
    seed: int = 0,
    batch_size: int = 32,
) -> LinearClassifier:
    """Mini-batch SGD on logistic loss from a zero initialization."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"incompatible shapes X {X.shape}, y {y.shape}")
    if epochs < 0 or lr <= 0 or batch_size < 1:
        raise ValueError("epochs must be >= 0, lr > 0, batch_size >= 1")
    _check_two_classes(y)
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            _, gw, gb = logistic_loss_and_grad(w, b, X[idx], y[idx])
            w = w - lr * gw
            b = b - lr * gb
    return LinearClassifier(w, b)


def predict_linear(model: LinearClassifier, X: np.ndarray) -> np.ndarray:
    return model.predict_proba(X)


# ---------------------------------------------------------------------------
# Random forest of CART trees (axis-aligned splits, Gini impurity).

@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    count_real: int = 0
    count_fake: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class ForestParams:
    n_trees: int = 50
    max_depth: int = 10
    min_samples_leaf: int = 2
    features_per_split: int | None = None  # None -> ceil(sqrt(d))

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 0 or self.min_samples_leaf < 1:
            raise ValueError("invalid forest parameters")


@dataclass
class RandomForest:
    trees: list[TreeNode]
    params: ForestParams
    seed: int
    dim: int

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = _check_dim(X, self.dim)
        votes = np.zeros(X.shape[0])
        for tree in self.trees:
            votes += _tree_votes(tree, X)
        return votes / len(self.trees)


def gini_impurity(count_real: int, count_fake: int) -> float:
    """1 - sum(p^2) over the two classes; 0 for pure nodes."""
    n = count_real + count_fake
    if n == 0:
        return 0.0
    pr = count_real / n
    pf = count_fake / n
    return 1.0 - pr * pr - pf * pf


def _best_split(X, y, idx, features, min_samples_leaf):
    """Best (feature, threshold, gain) over candidate features, or None."""
    n = idx.size
    n_fake = int(y[idx].sum())
    parent = gini_impurity(n - n_fake, n_fake)
    best = None
    best_gain = 0.0
    for f in features:
        values = X[idx, f]
        order = np.argsort(values, kind="stable")
        sv = values[order]
        sy = y[idx[order]]
        fake_prefix = np.cumsum(sy)
        # candidate split after position i (1-based prefix length)
        counts_left = np.arange(1, n)
        distinct = sv[1:] != sv[:-1]
        ok = distinct & (counts_left >= min_samples_leaf) & ((n - counts_left) >= min_samples_leaf)
        if not ok.any():
            continue
        fl = fake_prefix[:-1]
        nl = counts_left
        nr = n - nl
        fr = n_fake - fl
        gl = 1.0 - ((nl - fl) / nl) ** 2 - (fl / nl) ** 2
        gr = 1.0 - ((nr - fr) / nr) ** 2 - (fr / nr) ** 2
        child = (nl * gl + nr * gr) / n
        gain = np.where(ok, parent - child, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain = float(gain[i])
            best = (int(f), float((sv[i] + sv[i + 1]) / 2.0))
    return best


def _grow_tree(X, y, idx, depth, params, features_per_split, rng):
    n_fake = int(y[idx].sum())
    n_real = idx.size - n_fake
    if depth >= params.max_depth or n_fake == 0 or n_real == 0 or idx.size < 2 * params.min_samples_leaf:
        return TreeNode(count_real=n_real, count_fake=n_fake)
    features = rng.choice(X.shape[1], size=features_per_split, replace=False)
    split = _best_split(X, y, idx, features, params.min_samples_leaf)
    if split is None:
        return TreeNode(count_real=n_real, count_fake=n_fake)
    f, thr = split
    left_mask = X[idx, f] <= thr
    left = _grow_tree(X, y, idx[left_mask], depth + 1, params, features_per_split, rng)
    right = _grow_tree(X, y, idx[~left_mask], depth + 1, params, features_per_split, rng)
    return TreeNode(feature=f, threshold=thr, left=left, right=right)


def fit_forest(X: np.ndarray, y: np.ndarray, params: ForestParams, seed: int = 0) -> RandomForest:
    """Bagged CART trees: each on a seeded bootstrap resample of the rows."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"incompatible shapes X {X.shape}, y {y.shape}")
    if X.shape[0] < 2:
        raise DataError("forest training needs at least 2 samples")
    _check_two_classes(y)
    d = X.shape[1]
    fps = params.features_per_split or int(np.ceil(np.sqrt(d)))
    fps = min(fps, d)
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(params.n_trees):
        boot = rng.integers(0, X.shape[0], size=X.shape[0])
        trees.append(_grow_tree(X, y, boot, 0, params, fps, rng))
    return RandomForest(trees, params, seed, d)


def _tree_votes(tree: TreeNode, X: np.ndarray) -> np.ndarray:
    """Per-row fake vote (0/1) of one tree; leaf ties vote fake."""
    votes = np.empty(X.shape[0])
    stack = [(tree, np.arange(X.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if rows.size == 0:
            continue
        if node.is_leaf:
            votes[rows] = 1.0 if node.count_fake >= node.count_real else 0.0
            continue
        mask = X[rows, node.feature] <= node.threshold
        stack.append((node.left, rows[mask]))
        stack.append((node.right, rows[~mask]))
    return votes


def predict_forest(model: RandomForest, X: np.ndarray) -> np.ndarray:
    """Fraction of trees whose leaf majority is fake."""
    return model.predict_proba(X)


# ---------------------------------------------------------------------------
# Nearest-centroid baseline.

@dataclass
class NearestCentroid:
    centroid_real: np.ndarray
    centroid_fake: np.ndarray

    def score(self, X: np.ndarray) -> np.ndarray:
        """d2 to the real centroid minus d2 to the fake one; higher = more fake."""
        X = _check_dim(X, self.centroid_real.shape[0])
        d_real = np.sum((X - self.centroid_real) ** 2, axis=1)
        d_fake = np.sum((X - self.centroid_fake) ** 2, axis=1)
        return d_real - d_fake

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.score(X))


def fit_centroid(X: np.ndarray, y: np.ndarray) -> NearestCentroid:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_two_classes(y)
    return NearestCentroid(X[y == 0].mean(axis=0), X[y == 1].mean(axis=0))


def predict_centroid(model: NearestCentroid, X: np.ndarray) -> np.ndarray:
    return model.score(X)


# ---------------------------------------------------------------------------
# Bagging over the majority class's videos.

@dataclass
class BagEnsemble:
    models: list

    @property
    def k(self) -> int:
        return len(self.models)


def make_bags(
    dataset: EmbeddingDataset,
    train_indices: np.ndarray,
    k: int,
    seed: int = 0,
) -> list[np.ndarray]:
    """Split the majority class's videos into k near-equal parts.

    Bag i holds every minority-class frame plus the frames of majority part i,
    so each bag is far closer to balanced than the full set. Videos never
    straddle bags.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"bag count must be odd and >= 1, got {k}")
    train_indices = np.asarray(train_indices, dtype=np.int64)
    labels = dataset.labels[train_indices]
    vids = dataset.video_ids[train_indices]
    if labels.size == 0 or np.all(labels == labels[0]):
        raise DataError("bagging requires both classes in the train split")

    n_fake = int(np.count_nonzero(labels == 1))
    majority = 1 if n_fake * 2 >= labels.size else 0
    maj_mask = labels == majority
    for vid in np.unique(vids):
        vlab = labels[vids == vid]
        if vlab.min() != vlab.max():
            raise DataError(f"video {vid} carries both labels; cannot bag by video")
    maj_videos = np.unique(vids[maj_mask])
    if maj_videos.size < k:
        raise DataError(f"majority class has {maj_videos.size} videos; need >= {k} for {k} bags")

    rng = np.random.default_rng(seed)
    parts = np.array_split(rng.permutation(maj_videos), k)
    bags = []
    for part in parts:
        in_bag = ~maj_mask | np.isin(vids, part)
        bags.append(train_indices[in_bag])
    return bags


def ensemble_predict(models, X: np.ndarray) -> np.ndarray:
    """Majority vote over an odd number of models; each votes fake at p >= 0.5."""
    models = list(models)
    k = len(models)
    if k < 1 or k % 2 == 0:
        raise ValueError(f"ensemble size must be odd and >= 1, got {k}")
    votes = np.stack([m.predict_proba(X) >= 0.5 for m in models])
    return (votes.sum(axis=0) * 2 > k).astype(np.int64)


def ensemble_scores(models, X: np.ndarray) -> np.ndarray:
    """Fraction of models voting fake; the score companion to ensemble_predict."""
    models = list(models)
    if not models:
        raise ValueError("empty ensemble")
    votes = np.stack([m.predict_proba(X) >= 0.5 for m in models])
    return votes.mean(axis=0)


def fit_bag_models(bags, fit_one, jobs: int = 1) -> list:
    """Train one model per bag; results are ordered by bag index regardless of jobs."""
    if jobs <= 1:
        return [fit_one(i, bag) for i, bag in enumerate(bags)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fit_one, i, bag) for i, bag in enumerate(bags)]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# Frame-to-video aggregation.

def aggregate_video(
    video_ids: np.ndarray,
    frame_ids: np.ndarray,
    probs: np.ndarray,
    rule: str = "vote",
    max_frames: int = 25,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collapse frame probabilities into one (label, score) per video.

    Only the first ``max_frames`` frames by ascending frame_id count. Under
    "vote" the score is the fake-vote fraction and the label its majority
    (ties fake); under "mean" the score is the mean probability.
    Returns (video_ids, labels, scores) sorted by video id.
    """
    if rule not in ("vote", "mean"):
        raise ValueError(f"unknown aggregation rule {rule!r}")
    if max_frames < 1:
        raise ValueError(f"max_frames must be >= 1, got {max_frames}")
    video_ids = np.asarray(video_ids)
    frame_ids = np.asarray(frame_ids)
    probs = np.asarray(probs, dtype=np.float64)
    if not (video_ids.shape == frame_ids.shape == probs.shape) or video_ids.ndim != 1:
        raise ValueError("video_ids, frame_ids and probs must be equal-length vectors")
    if video_ids.size == 0:
        raise DataError("no frames to aggregate")

    order = np.lexsort((frame_ids, video_ids))
    vids_sorted = video_ids[order]
    probs_sorted = probs[order]
    uniq, starts = np.unique(vids_sorted, return_index=True)
    bounds = np.append(starts, vids_sorted.size)
    labels = np.empty(uniq.size, dtype=np.int64)
    scores = np.empty(uniq.size, dtype=np.float64)
    for i in range(uniq.size):
        window = probs_sorted[bounds[i] : min(bounds[i] + max_frames, bounds[i + 1])]
        if rule == "vote":
            scores[i] = np.count_nonzero(window >= 0.5) / window.size
        else:
            scores[i] = window.mean()
        labels[i] = 1 if scores[i] >= 0.5 else 0
    return uniq, labels, scores


def write_predictions_csv(path, video_ids, frame_ids, probs, labels) -> None:
    """Frame prediction export: video_id, frame_id, probability, label."""
    lines = ["video_id,frame_id,probability,label"]
    for v, f, p, l in zip(video_ids, frame_ids, probs, labels):
        lines.append(f"{v},{f},{fmt_float(p)},{l}")
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with atomic_write(path) as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# MDL1 model container.

def _pack_f64(arr: np.ndarray) -> bytes:
    return np.asarray(arr, dtype="<f8").tobytes()


def _serialize_tree(node: TreeNode, out: bytearray) -> None:
    if node.is_leaf:
        out += struct.pack("<BII", 1, node.count_real, node.count_fake)
    else:
        out += struct.pack("<BId", 0, node.feature, node.threshold)
        _serialize_tree(node.left, out)
        _serialize_tree(node.right, out)


def _deserialize_tree(buf: BytesIO) -> TreeNode:
    tag = buf.read(1)
    if len(tag) != 1:
        raise FormatError("truncated tree payload")
    if tag[0] == 1:
        cr, cf = struct.unpack("<II", buf.read(8))
        return TreeNode(count_real=cr, count_fake=cf)
    feature, threshold = struct.unpack("<Id", buf.read(12))
    left = _deserialize_tree(buf)
    right = _deserialize_tree(buf)
    return TreeNode(feature=feature, threshold=threshold, left=left, right=right)


def _model_payload(model) -> tuple[int, bytes]:
    if isinstance(model, LinearClassifier):
        d = model.w.shape[0]
        return _KIND_LINEAR, struct.pack("<I", d) + _pack_f64(model.w) + struct.pack("<d", model.b)
    if isinstance(model, NearestCentroid):
        d = model.centroid_real.shape[0]
        return _KIND_CENTROID, struct.pack("<I", d) + _pack_f64(model.centroid_real) + _pack_f64(
            model.centroid_fake
        )
    if isinstance(model, RandomForest):
        p = model.params
        head = struct.pack(
            "<IIIIIq",
            len(model.trees),
            p.n_trees,
            p.max_depth,
            p.min_samples_leaf,
            model.dim,
            model.seed,
        )
        fps = struct.pack("<i", -1 if p.features_per_split is None else p.features_per_split)
        body = bytearray()
        for tree in model.trees:
            _serialize_tree(tree, body)
        return _KIND_FOREST, head + fps + bytes(body)
    if isinstance(model, BagEnsemble):
        blobs = []
        for m in model.models:
            kind, payload = _model_payload(m)
            blobs.append(struct.pack("<BQ", kind, len(payload)) + payload)
        return _KIND_ENSEMBLE, struct.pack("<I", len(model.models)) + b"".join(blobs)
    raise ValueError(f"cannot serialize model of type {type(model).__name__}")


def save_model(model, path) -> None:
    kind, payload = _model_payload(model)
    blob = MODEL_MAGIC + bytes([kind]) + payload
    if hasattr(path, "write"):
        path.write(blob)
    else:
        with atomic_write(path, binary=True) as fh:
            fh.write(blob)


def _parse_payload(kind: int, buf: BytesIO):
    if kind == _KIND_LINEAR:
        (d,) = struct.unpack("<I", buf.read(4))
        w = np.frombuffer(buf.read(8 * d), dtype="<f8")
        (b,) = struct.unpack("<d", buf.read(8))
        return LinearClassifier(w.copy(), b)
    if kind == _KIND_CENTROID:
        (d,) = struct.unpack("<I", buf.read(4))
        cr = np.frombuffer(buf.read(8 * d), dtype="<f8").copy()
        cf = np.frombuffer(buf.read(8 * d), dtype="<f8").copy()
        return NearestCentroid(cr, cf)
    if kind == _KIND_FOREST:
        n_trees, p_trees, max_depth, msl, dim, seed = struct.unpack("<IIIIIq", buf.read(28))
        (fps,) = struct.unpack("<i", buf.read(4))
        params = ForestParams(p_trees, max_depth, msl, None if fps < 0 else fps)
        trees = [_deserialize_tree(buf) for _ in range(n_trees)]
        return RandomForest(trees, params, seed, dim)
    if kind == _KIND_ENSEMBLE:
        (k,) = struct.unpack("<I", buf.read(4))
        models = []
        for _ in range(k):
            inner_kind, size = struct.unpack("<BQ", buf.read(9))
            models.append(_parse_payload(inner_kind, BytesIO(buf.read(size))))
        return BagEnsemble(models)
    raise FormatError(f"unknown model kind {kind}")


def load_model(path):
    if hasattr(path, "read"):
        data = path.read()
    else:
        with open(path, "rb") as fh:
            data = fh.read()
    if len(data) < 5:
        raise FormatError("truncated model file")
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
    return _parse_payload(data[4], BytesIO(data[5:]))
