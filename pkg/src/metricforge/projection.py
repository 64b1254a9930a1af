"""Top-2 PCA by power iteration with deflation, for plot-ready 2D exports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .util import atomic_write, fmt_float

_POWER_TOL = 1e-9
_POWER_MAX_ITER = 1000
# Fixed start-vector seed so projections (and their sign convention) are
# reproducible byte-for-byte across runs.
_START_SEED = 0x50434132


@dataclass(frozen=True)
class Projection2D:
    points: np.ndarray  # (n, 2)
    explained_fraction: float
    labels: np.ndarray  # (n,)
    components: np.ndarray  # (2, d) row-orthonormal
    eigenvalues: np.ndarray  # (2,)


def _power_iterate(C: np.ndarray, start: np.ndarray, deflate: list[np.ndarray]) -> tuple[float, np.ndarray]:
    v = start / np.linalg.norm(start)
    for u in deflate:
        v -= (v @ u) * u
    v /= np.linalg.norm(v)
    for _ in range(_POWER_MAX_ITER):
        w = C @ v
        for u in deflate:
            w -= (w @ u) * u
        norm = np.linalg.norm(w)
        if norm < 1e-30:
            break
        w /= norm
        if w @ v < 0:
            w = -w
        if np.linalg.norm(w - v) < _POWER_TOL:
            v = w
            break
        v = w
    lam = float(v @ (C @ v))
    return lam, v


def pca2(X: np.ndarray, labels=None) -> Projection2D:
    """Project rows onto the top-2 principal components.

    Components are ordered by eigenvalue and sign-fixed so each component's
    largest-magnitude coordinate is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3 or X.shape[1] < 2:
        raise ValueError(f"need at least 3 points of dimension >= 2, got shape {X.shape}")
    if labels is None:
        labels = np.zeros(X.shape[0], dtype=np.int64)
    labels = np.asarray(labels)
    if labels.shape != (X.shape[0],):
        raise ValueError("labels must align with the rows of X")

    centered = X - X.mean(axis=0)
    C = centered.T @ centered / (X.shape[0] - 1)
    total = float(np.trace(C))
    if total < 1e-24:
        raise DataError("all points are identical; no principal directions exist")

    rng = np.random.default_rng(_START_SEED)
    lam1, v1 = _power_iterate(C, rng.standard_normal(X.shape[1]), [])
    lam2, v2 = _power_iterate(C, rng.standard_normal(X.shape[1]), [v1])
    if lam2 > lam1:
        lam1, lam2, v1, v2 = lam2, lam1, v2, v1
    comps = np.stack([v1, v2])
    for row in comps:
        if row[int(np.argmax(np.abs(row)))] < 0:
            row *= -1.0
    return Projection2D(
        points=centered @ comps.T,
        explained_fraction=(lam1 + lam2) / total,
        labels=labels,
        components=comps,
        eigenvalues=np.array([lam1, lam2]),
    )


def export_scatter(proj: Projection2D, path) -> None:
    """CSV rows ``x,y,label``; plottable directly with gnuplot or any CSV tool."""
    lines = ["x,y,label"]
    for (x, y), lab in zip(proj.points, proj.labels):
        lines.append(f"{fmt_float(x)},{fmt_float(y)},{lab}")
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with atomic_write(path) as fh:
            fh.write(text)
