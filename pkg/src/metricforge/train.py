"""Affine projection head trained with momentum SGD on the triplet hinge loss.

The head maps input embeddings x to y = Wx + b, optionally renormalized to the
unit sphere. Per triplet the loss is

    max(|f(a) - f(p)|^2 - |f(a) - f(n)|^2 + margin, 0)

and a batch's loss is the mean over every provided triplet, inactive ones
contributing zero loss and zero gradient.

The trained head serializes to the "HEAD" container (little-endian): magic
0x48 0x45 0x41 0x44, version u16 = 1, in_dim u16, out_dim u16, normalize u8,
then row-major f32 W followed by f32 b.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import EmbeddingDataset
from .errors import DataError, FormatError
from .mining import MiningStats, mine_random, mine_semihard_batch
from .util import atomic_write, fmt_float

HEAD_MAGIC = b"HEAD"
HEAD_VERSION = 1
_HEAD_HEADER = struct.Struct("<4sHHHB")

_NORM_FLOOR = 1e-12


@dataclass
class ProjectionHead:
    W: np.ndarray
    b: np.ndarray
    normalize_output: bool = True

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"incompatible shapes W {self.W.shape}, b {self.b.shape}")
        if not (np.isfinite(self.W).all() and np.isfinite(self.b).all()):
            raise ValueError("head parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(self.W.copy(), self.b.copy(), self.normalize_output)


def transform(head: ProjectionHead, X: np.ndarray) -> np.ndarray:
    """Project a batch of row vectors through the head."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != head.in_dim:
        raise ValueError(f"expected shape (n, {head.in_dim}), got {X.shape}")
    U = X @ head.W.T + head.b
    if not head.normalize_output:
        return U
    norms = np.linalg.norm(U, axis=1)
    degenerate = norms < _NORM_FLOOR
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} projected vector(s) have near-zero norm; "
            "normalization bypassed for them",
            RuntimeWarning,
            stacklevel=2,
        )
    scale = np.where(degenerate, 1.0, norms)
    return U / scale[:, None]


def forward(head: ProjectionHead, x: np.ndarray) -> np.ndarray:
    """Project a single vector through the head."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != head.in_dim:
        raise ValueError(f"expected a vector of length {head.in_dim}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("input vector must be finite")
    return transform(head, x[None, :])[0]


def triplet_loss(f_a: np.ndarray, f_p: np.ndarray, f_n: np.ndarray, margin: float) -> float:
    """Hinge loss of one projected triplet."""
    d_ap = float(np.sum((np.asarray(f_a) - np.asarray(f_p)) ** 2))
    d_an = float(np.sum((np.asarray(f_a) - np.asarray(f_n)) ** 2))
    return max(d_ap - d_an + margin, 0.0)


def _triplet_index_arrays(triplets, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(triplets) == 0:
        raise ValueError("need at least one triplet")
    a = np.fromiter((t.a for t in triplets), dtype=np.int64, count=len(triplets))
    p = np.fromiter((t.p for t in triplets), dtype=np.int64, count=len(triplets))
    nn = np.fromiter((t.n for t in triplets), dtype=np.int64, count=len(triplets))
    stacked = np.concatenate([a, p, nn])
    if stacked.min() < 0 or stacked.max() >= n:
        raise IndexError(f"triplet index out of range for batch of {n}")
    return a, p, nn


def batch_loss_and_grad(
    head: ProjectionHead,
    X_batch: np.ndarray,
    triplets,
    margin: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean triplet loss over all provided triplets and its analytic gradient.

    The hinge subgradient at exactly zero is taken as zero, so only strictly
    active triplets contribute. When the head normalizes, gradients chain
    through the normalization Jacobian (I - y y^T) / |u|.
    """
    if margin <= 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    X = np.asarray(X_batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != head.in_dim:
        raise ValueError(f"expected shape (n, {head.in_dim}), got {X.shape}")
    a_idx, p_idx, n_idx = _triplet_index_arrays(triplets, X.shape[0])

    U = X @ head.W.T + head.b
    norms = np.linalg.norm(U, axis=1)
    if head.normalize_output:
        degenerate = norms < _NORM_FLOOR
        scale = np.where(degenerate, 1.0, norms)
        Y = U / scale[:, None]
    else:
        Y = U

    fa, fp, fn = Y[a_idx], Y[p_idx], Y[n_idx]
    d_ap = np.einsum("ij,ij->i", fa - fp, fa - fp)
    d_an = np.einsum("ij,ij->i", fa - fn, fa - fn)
    raw = d_ap - d_an + margin
    active = raw > 0.0
    total = float(np.sum(raw[active])) if active.any() else 0.0
    T = len(triplets)
    mean_loss = total / T

    grad_Y = np.zeros_like(Y)
    if active.any():
        aw, pw, nw = a_idx[active], p_idx[active], n_idx[active]
        np.add.at(grad_Y, aw, 2.0 * (fn[active] - fp[active]))
        np.add.at(grad_Y, pw, 2.0 * (fp[active] - fa[active]))
        np.add.at(grad_Y, nw, 2.0 * (fa[active] - fn[active]))
    grad_Y /= T

    if head.normalize_output:
        dot = np.einsum("ij,ij->i", Y, grad_Y)
        grad_U = (grad_Y - Y * dot[:, None]) / scale[:, None]
        grad_U[degenerate] = grad_Y[degenerate]
        grad_b = grad_U.sum(axis=0)
    else:
        grad_U = grad_Y
        # Pairwise distances are translation-invariant, so without output
        # normalization the bias gradient is identically zero; summing the
        # per-role contributions would only accumulate cancellation noise.
        grad_b = np.zeros_like(head.b)

    grad_W = grad_U.T @ X
    return mean_loss, grad_W, grad_b


# Central differences divide out eps, so float rounding of the two loss
# evaluations shows up as absolute noise of roughly ulp(loss)/eps. Entry
# differences below this floor are measurement noise, not gradient error.
_FD_NOISE_FLOOR = 1e-8


def finite_diff_check(
    head: ProjectionHead,
    X_batch: np.ndarray,
    triplets,
    margin: float,
    eps: float = 1e-4,
) -> float:
    """Max relative error between analytic and central finite-difference gradients.

    Perturbs every W and b entry by +-eps; relative error per entry is
    |analytic - numeric| / (|analytic| + |numeric| + 1e-12), with absolute
    differences under the finite-difference noise floor counted as zero (an
    exactly-zero gradient entry is otherwise a pure 0/0 noise measurement).
    """
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    _, grad_W, grad_b = batch_loss_and_grad(head, X_batch, triplets, margin)

    def loss_at(W: np.ndarray, b: np.ndarray) -> float:
        probe = ProjectionHead(W, b, head.normalize_output)
        return batch_loss_and_grad(probe, X_batch, triplets, margin)[0]

    max_err = 0.0
    for analytic, base in ((grad_W, head.W), (grad_b, head.b)):
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            Wp, bp = head.W.copy(), head.b.copy()
            target = Wp if base is head.W else bp
            target[ix] += eps
            up = loss_at(Wp, bp)
            target[ix] -= 2 * eps
            down = loss_at(Wp, bp)
            numeric = (up - down) / (2 * eps)
            a = float(analytic[ix])
            if abs(a - numeric) < _FD_NOISE_FLOOR:
                continue
            err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
            max_err = max(max_err, err)
    return max_err


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.2
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 20
    out_dim: int = 128
    seed: int = 0
    mining: str = "semihard"
    normalize_output: bool = True

    def __post_init__(self):
        checks = [
            (self.margin > 0, "margin must be > 0"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (0.0 <= self.momentum < 1.0, "momentum must be in [0, 1)"),
            (self.batch_size >= 4 and self.batch_size % 2 == 0, "batch_size must be even and >= 4"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.out_dim >= 2, "out_dim must be >= 2"),
            (self.seed >= 0, "seed must be non-negative"),
            (self.mining in ("semihard", "random"), "mining must be 'semihard' or 'random'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


@dataclass
class TrainReport:
    mean_loss: list[float] = field(default_factory=list)
    mining: list[MiningStats] = field(default_factory=list)
    active_fraction: list[float] = field(default_factory=list)


def fit(
    dataset: EmbeddingDataset,
    train_indices: np.ndarray | None,
    config: TrainConfig,
) -> tuple[ProjectionHead, TrainReport]:
    """Train a projection head on the given records; pure function of its inputs.

    Each epoch reshuffles both classes, forms balanced batches (half real, half
    fake, drawn without replacement per class, trailing partial batch dropped),
    mines triplets per ``config.mining`` in the current projected space, and
    applies one momentum-SGD step per batch (v <- momentum v - lr grad).
    """
    if train_indices is None:
        train_indices = np.arange(len(dataset))
    train_indices = np.asarray(train_indices, dtype=np.int64)
    X = dataset.vectors[train_indices].astype(np.float64)
    y = dataset.labels[train_indices].astype(np.int64)
    real = np.flatnonzero(y == 0)
    fake = np.flatnonzero(y == 1)
    if real.size == 0 or fake.size == 0:
        raise DataError("training requires both classes in the train split")

    half = config.batch_size // 2
    n_batches = min(real.size, fake.size) // half
    if config.epochs > 0 and n_batches == 0:
        raise DataError(
            f"batch_size {config.batch_size} needs at least {half} samples per class; "
            f"have {real.size} real and {fake.size} fake"
        )

    rng = np.random.default_rng(config.seed)
    in_dim = dataset.dim
    bound = 1.0 / np.sqrt(in_dim)
    head = ProjectionHead(
        rng.uniform(-bound, bound, size=(config.out_dim, in_dim)),
        np.zeros(config.out_dim),
        config.normalize_output,
    )
    vW = np.zeros_like(head.W)
    vb = np.zeros_like(head.b)
    report = TrainReport()

    for _ in range(config.epochs):
        perm_real = rng.permutation(real)
        perm_fake = rng.permutation(fake)
        loss_sum = 0.0
        triplet_count = 0
        active_count = 0
        easy = semihard = hard = 0
        for k in range(n_batches):
            batch = np.concatenate(
                [perm_real[k * half : (k + 1) * half], perm_fake[k * half : (k + 1) * half]]
            )
            Xb, yb = X[batch], y[batch]
            Fb = transform(head, Xb)
            if config.mining == "semihard":
                triplets = mine_semihard_batch(Fb, yb, config.margin)
            else:
                count = 2 * half * (half - 1)
                triplets = mine_random(yb, count, int(rng.integers(0, 2**63)))

            ai = np.fromiter((t.a for t in triplets), dtype=np.int64)
            pi = np.fromiter((t.p for t in triplets), dtype=np.int64)
            ni = np.fromiter((t.n for t in triplets), dtype=np.int64)
            # Same distance formula as the loss path so the stats agree bitwise.
            d_ap = np.einsum("ij,ij->i", Fb[ai] - Fb[pi], Fb[ai] - Fb[pi])
            d_an = np.einsum("ij,ij->i", Fb[ai] - Fb[ni], Fb[ai] - Fb[ni])
            easy += int(np.count_nonzero(d_an >= d_ap + config.margin))
            hard += int(np.count_nonzero(d_an < d_ap))

            loss, gW, gb = batch_loss_and_grad(head, Xb, triplets, config.margin)
            loss_sum += loss * len(triplets)
            triplet_count += len(triplets)
            active_count += int(np.count_nonzero(d_ap - d_an + config.margin > 0))

            vW = config.momentum * vW - config.learning_rate * gW
            vb = config.momentum * vb - config.learning_rate * gb
            head.W = head.W + vW
            head.b = head.b + vb

        semihard = triplet_count - easy - hard
        report.mean_loss.append(loss_sum / triplet_count)
        report.mining.append(MiningStats(easy, semihard, hard))
        report.active_fraction.append(active_count / triplet_count)

    return head, report


def save_head(head: ProjectionHead, path) -> None:
    """Serialize a head to the HEAD container; byte-deterministic."""
    if head.in_dim > 0xFFFF or head.out_dim > 0xFFFF:
        raise FormatError("head dimensions do not fit the u16 header fields")
    blob = _HEAD_HEADER.pack(
        HEAD_MAGIC, HEAD_VERSION, head.in_dim, head.out_dim, int(head.normalize_output)
    )
    blob += head.W.astype("<f4").tobytes() + head.b.astype("<f4").tobytes()
    if hasattr(path, "write"):
        path.write(blob)
    else:
        with atomic_write(path, binary=True) as fh:
            fh.write(blob)


def load_head(path) -> ProjectionHead:
    """Parse a HEAD container back into a projection head."""
    if hasattr(path, "read"):
        data = path.read()
    else:
        with open(path, "rb") as fh:
            data = fh.read()
    if len(data) < _HEAD_HEADER.size:
        raise FormatError("truncated head file")
    magic, version, in_dim, out_dim, normalize = _HEAD_HEADER.unpack_from(data, 0)
    if magic != HEAD_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {HEAD_MAGIC!r}")
    if version != HEAD_VERSION:
        raise FormatError(f"unsupported head version {version}")
    expected = _HEAD_HEADER.size + 4 * (in_dim * out_dim + out_dim)
    if len(data) != expected:
        raise FormatError(f"corrupt head file: expected {expected} bytes, got {len(data)}")
    W = np.frombuffer(data, dtype="<f4", count=in_dim * out_dim, offset=_HEAD_HEADER.size)
    b = np.frombuffer(data, dtype="<f4", count=out_dim, offset=_HEAD_HEADER.size + 4 * in_dim * out_dim)
    return ProjectionHead(
        W.reshape(out_dim, in_dim).astype(np.float64), b.astype(np.float64), bool(normalize)
    )


def write_train_report_csv(report: TrainReport, path) -> None:
    """Per-epoch CSV: epoch, mean_loss, easy, semihard, hard, active_fraction."""
    lines = ["epoch,mean_loss,easy,semihard,hard,active_fraction"]
    for e, (loss, stats, frac) in enumerate(
        zip(report.mean_loss, report.mining, report.active_fraction)
    ):
        lines.append(
            f"{e},{fmt_float(loss)},{stats.easy_count},{stats.semihard_count},"
            f"{stats.hard_count},{fmt_float(frac)}"
        )
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with atomic_write(path) as fh:
            fh.write(text)
