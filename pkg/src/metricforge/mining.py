"""Squared-distance kernel, triplet taxonomy, and online triplet mining.

All distances are squared Euclidean. A triplet (a, p, n) has a and p sharing a
label and n carrying the other one; with d2_ap and d2_an the squared distances
from the anchor, the disjoint taxonomy at margin m is

    easy       d2_an >= d2_ap + m       (hinge loss is exactly zero)
    semi-hard  d2_ap <= d2_an < d2_ap + m
    hard       d2_an <  d2_ap           (loss exceeds the margin)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ValidationError


class TripletCategory(enum.Enum):
    EASY = "easy"
    SEMI_HARD = "semi_hard"
    HARD = "hard"


@dataclass(frozen=True)
class Triplet:
    a: int
    p: int
    n: int


@dataclass(frozen=True)
class MiningStats:
    easy_count: int
    semihard_count: int
    hard_count: int

    @property
    def total(self) -> int:
        return self.easy_count + self.semihard_count + self.hard_count

    def active_fraction(self) -> float:
        """Share of triplets with a positive hinge loss (semi-hard + hard)."""
        if self.total == 0:
            return 0.0
        return (self.semihard_count + self.hard_count) / self.total


@dataclass(frozen=True)
class DistanceMatrix:
    n: int
    d2: np.ndarray


def pairwise_sq_dist(X: np.ndarray) -> DistanceMatrix:
    """All pairwise squared Euclidean distances via the gram identity.

    d2[i, j] = |x_i|^2 + |x_j|^2 - 2 x_i . x_j, symmetrized and clamped at zero
    to absorb floating-point noise; the diagonal is exactly zero.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValidationError("input matrix contains non-finite entries")
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    d2 = 0.5 * (d2 + d2.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return DistanceMatrix(n=X.shape[0], d2=d2)


def categorize(d2_ap: float, d2_an: float, margin: float) -> TripletCategory:
    """Classify one triplet by its squared distances; exactly one category applies."""
    if margin <= 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    if not (np.isfinite(d2_ap) and np.isfinite(d2_an)):
        raise ValidationError("distances must be finite")
    if d2_an >= d2_ap + margin:
        return TripletCategory.EASY
    if d2_an < d2_ap:
        return TripletCategory.HARD
    return TripletCategory.SEMI_HARD


def _class_indices(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    idx0 = np.flatnonzero(labels == 0)
    idx1 = np.flatnonzero(labels == 1)
    if idx0.size == 0 or idx1.size == 0:
        raise DataError("triplet mining requires both classes to be present")
    return idx0, idx1


def _triplet_space(idx0: np.ndarray, idx1: np.ndarray) -> tuple[int, int]:
    """Counts of valid ordered triplets anchored in class 0 and class 1."""
    c0, c1 = idx0.size, idx1.size
    return c0 * (c0 - 1) * c1, c1 * (c1 - 1) * c0


def _decode_triplets(flat: np.ndarray, idx0: np.ndarray, idx1: np.ndarray) -> np.ndarray:
    """Map flat ids in [0, total) to (a, p, n) index triples, uniformly."""
    t0, _ = _triplet_space(idx0, idx1)
    flat = np.asarray(flat, dtype=np.int64)
    out = np.empty((flat.size, 3), dtype=np.int64)
    for same, other, mask, base in (
        (idx0, idx1, flat < t0, 0),
        (idx1, idx0, flat >= t0, t0),
    ):
        if not mask.any():
            continue
        r = flat[mask] - base
        c, o = same.size, other.size
        i, r = np.divmod(r, (c - 1) * o)
        j, k = np.divmod(r, o)
        j = j + (j >= i)
        out[mask, 0] = same[i]
        out[mask, 1] = same[j]
        out[mask, 2] = other[k]
    return out


def mine_random(labels, count: int, seed: int) -> list[Triplet]:
    """Sample ``count`` triplets uniformly (with replacement) over all valid ones."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    idx0, idx1 = _class_indices(labels)
    t0, t1 = _triplet_space(idx0, idx1)
    if t0 + t1 == 0:
        raise DataError("no same-class pair exists; cannot form triplets")
    rng = np.random.default_rng(seed)
    flat = rng.integers(0, t0 + t1, size=count)
    triples = _decode_triplets(flat, idx0, idx1)
    return [Triplet(int(a), int(p), int(n)) for a, p, n in triples]


def mine_semihard_batch(F: np.ndarray, labels, margin: float) -> list[Triplet]:
    """One triplet per ordered same-class pair, with the hardest usable negative.

    For each pair (a, p) the negative minimizing d2(a, n) subject to
    d2(a, n) > d2(a, p) is chosen; if every negative is at least as close as p,
    the farthest negative is used instead. Ties break to the lowest index, so
    the output is invariant to how the negatives are ordered.
    """
    if margin <= 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    labels = np.asarray(labels)
    D = pairwise_sq_dist(F).d2
    idx0, idx1 = _class_indices(labels)
    t0, t1 = _triplet_space(idx0, idx1)
    if t0 + t1 == 0:
        raise DataError("no same-class pair exists; cannot form triplets")

    triplets: list[Triplet] = []
    for a in range(labels.size):
        same = idx0 if labels[a] == 0 else idx1
        if same.size < 2:
            continue
        negs = idx1 if labels[a] == 0 else idx0
        neg_d = D[a, negs]
        order = np.lexsort((negs, neg_d))
        sorted_d = neg_d[order]
        sorted_idx = negs[order]
        max_pos = int(np.searchsorted(sorted_d, sorted_d[-1], side="left"))
        for p in same:
            if p == a:
                continue
            pos = int(np.searchsorted(sorted_d, D[a, p], side="right"))
            n = sorted_idx[pos] if pos < sorted_d.size else sorted_idx[max_pos]
            triplets.append(Triplet(int(a), int(p), int(n)))
    return triplets


def mining_stats(
    F: np.ndarray,
    labels,
    margin: float,
    sample_cap: int | None = None,
    seed: int = 0,
) -> MiningStats:
    """Categorize all valid triplets, or a uniform sample when there are too many."""
    if margin <= 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    labels = np.asarray(labels)
    idx0, idx1 = _class_indices(labels)
    t0, t1 = _triplet_space(idx0, idx1)
    total = t0 + t1
    if total == 0:
        raise DataError("no same-class pair exists; cannot form triplets")
    D = pairwise_sq_dist(F).d2

    if sample_cap is not None and total > sample_cap:
        rng = np.random.default_rng(seed)
        triples = _decode_triplets(rng.integers(0, total, size=sample_cap), idx0, idx1)
        d2_ap = D[triples[:, 0], triples[:, 1]]
        d2_an = D[triples[:, 0], triples[:, 2]]
        easy = int(np.count_nonzero(d2_an >= d2_ap + margin))
        hard = int(np.count_nonzero(d2_an < d2_ap))
        return MiningStats(easy, sample_cap - easy - hard, hard)

    easy = 0
    hard = 0
    for same, other in ((idx0, idx1), (idx1, idx0)):
        if same.size < 2:
            continue
        for a in same:
            neg_sorted = np.sort(D[a, other])
            thr = D[a, same[same != a]]
            hard += int(np.searchsorted(neg_sorted, thr, side="left").sum())
            easy += int(
                (other.size - np.searchsorted(neg_sorted, thr + margin, side="left")).sum()
            )
    return MiningStats(easy, total - easy - hard, hard)
