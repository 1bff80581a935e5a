"""Deterministic numeric kernels for frame selection.

Everything here is a pure function of its arguments: similarity scoring,
sliding-window smoothing, mean-threshold peak segmentation, the baseline
top-k / uniform selectors, and a seeded k-means with nearest-to-centroid
representatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cogniloop.errors import DimensionMismatch, EmptyInput, EvenWindow, ZeroVector

DEFAULT_WINDOW = 5
KMEANS_MAX_ITER = 100


@dataclass(frozen=True)
class SimilarityProfile:
    """Query-to-frame similarity over one temporal span."""

    span: tuple[float, float]
    timestamps: tuple[float, ...]
    raw: tuple[float, ...]
    smoothed: tuple[float, ...]
    threshold: float

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class PeakRegion:
    """A maximal run of indices whose smoothed score is above threshold.

    ``end_idx`` is inclusive.
    """

    start_idx: int
    end_idx: int
    rep_idx: int
    rep_score: float


@dataclass(frozen=True)
class ClusterResult:
    k: int
    assignments: tuple[int, ...]
    centroids: np.ndarray
    representatives: tuple[int, ...]


def _as_vector(v: Sequence[float] | np.ndarray) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise EmptyInput("embedding must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding contains non-finite values")
    return arr


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of the angle between two embeddings, clipped to [-1, 1]."""
    va, vb = _as_vector(a), _as_vector(b)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"dimensions differ: {va.size} vs {vb.size}")
    sa, sb = np.abs(va).max(), np.abs(vb).max()
    if sa == 0.0 or sb == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    # rescale first so tiny (subnormal) vectors do not underflow in the norm
    va, vb = va / sa, vb / sb
    return float(np.clip(np.dot(va, vb) / (np.linalg.norm(va) * np.linalg.norm(vb)), -1.0, 1.0))


def smooth_scores(raw: Sequence[float], window: int = DEFAULT_WINDOW) -> list[float]:
    """Centered moving average; the window shrinks at the sequence edges.

    Args:
        raw: Per-frame similarity scores.
        window: Odd window width. ``1`` is the identity.

    Returns:
        A list the same length as ``raw``.
    """
    if window < 1 or window % 2 == 0:
        raise EvenWindow(f"window must be odd and >= 1, got {window}")
    values = np.asarray(raw, dtype=float)
    if values.size == 0:
        raise EmptyInput("cannot smooth an empty score sequence")
    half = window // 2
    n = values.size
    return [float(values[max(0, i - half) : min(n, i + half + 1)].mean()) for i in range(n)]


def build_profile(
    query: Sequence[float],
    frames: Sequence[Sequence[float]],
    timestamps: Sequence[float],
    span: tuple[float, float],
    window: int = DEFAULT_WINDOW,
) -> SimilarityProfile:
    """Score each frame against the query, smooth, and take the mean as threshold."""
    if len(frames) == 0:
        raise EmptyInput("no frames to score")
    if len(frames) != len(timestamps):
        raise DimensionMismatch("one timestamp per frame embedding is required")
    if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
        raise ValueError("timestamps must be strictly increasing")
    raw = [cosine_similarity(query, f) for f in frames]
    smoothed = smooth_scores(raw, window)
    return SimilarityProfile(
        span=(float(span[0]), float(span[1])),
        timestamps=tuple(float(t) for t in timestamps),
        raw=tuple(raw),
        smoothed=tuple(smoothed),
        threshold=float(np.mean(smoothed)),
    )


def segment_watershed(smoothed: Sequence[float], threshold: float) -> list[PeakRegion]:
    """Split the timeline into peak regions (strictly above ``threshold``).

    Each region's representative is its in-region argmax, earliest on ties.
    """
    if len(smoothed) == 0:
        raise EmptyInput("cannot segment an empty score sequence")
    regions: list[PeakRegion] = []
    start = None
    for i, s in enumerate(list(smoothed) + [-math.inf]):
        if s > threshold:
            if start is None:
                start = i
        elif start is not None:
            run = smoothed[start:i]
            best = max(range(len(run)), key=lambda j: (run[j], -j))
            regions.append(PeakRegion(start, i - 1, start + best, float(run[best])))
            start = None
    return regions


def select_peak_representatives(
    profile: SimilarityProfile, regions: Sequence[PeakRegion], n_f: int = 5
) -> list[int]:
    """Keep the ``n_f`` tallest peak representatives, returned in time order."""
    if n_f < 1:
        raise ValueError("n_f must be >= 1")
    ranked = sorted(regions, key=lambda r: (-r.rep_score, r.rep_idx))
    return sorted(r.rep_idx for r in ranked[:n_f])


def select_topk(profile: SimilarityProfile, k: int) -> list[int]:
    """Indices of the ``k`` highest smoothed scores, in time order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    order = sorted(range(len(profile.smoothed)), key=lambda i: (-profile.smoothed[i], i))
    return sorted(order[:k])


def select_uniform(t_count: int, k: int) -> list[int]:
    """``k`` evenly spaced indices over ``[0, t_count - 1]``.

    Positions are rounded half-up and duplicates dropped, so the result can be
    shorter than ``k`` when ``k > t_count``.
    """
    if k < 1 or t_count < 1:
        raise ValueError("t_count and k must be >= 1")
    if k == 1:
        return [0]
    step = (t_count - 1) / (k - 1)
    out: list[int] = []
    for j in range(k):
        idx = int(math.floor(j * step + 0.5))
        if not out or out[-1] != idx:
            out.append(idx)
    return out


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kmeans(
    vectors: Sequence[Sequence[float]] | np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = KMEANS_MAX_ITER,
) -> ClusterResult:
    """Lloyd's k-means with farthest-point seeding.

    The first center is drawn from a ``numpy`` generator seeded with ``seed``;
    every further center is the point farthest from the centers chosen so far
    (earliest index on ties). Iteration stops when assignments stop changing
    or after ``max_iter`` rounds. Empty clusters are dropped and the rest are
    relabelled ``0..k'-1`` in order of first appearance as a seed.

    Each cluster's representative is the member closest to its centroid.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    points = np.asarray(vectors, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise EmptyInput("kmeans needs at least one vector")
    n = points.shape[0]
    k_eff = min(k, n)

    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    min_d = _sq_dists(points, points[chosen])[:, 0]
    while len(chosen) < k_eff:
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        min_d = np.minimum(min_d, _sq_dists(points, points[[nxt]])[:, 0])
    centers = points[chosen].copy()

    assign = np.argmin(_sq_dists(points, centers), axis=1)
    for _ in range(max_iter):
        for c in range(k_eff):
            members = assign == c
            if members.any():
                centers[c] = points[members].mean(axis=0)
        new_assign = np.argmin(_sq_dists(points, centers), axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    used = [c for c in range(k_eff) if (assign == c).any()]
    relabel = {c: i for i, c in enumerate(used)}
    centers = centers[used]
    assignments = tuple(relabel[int(c)] for c in assign)

    reps = []
    d = _sq_dists(points, centers)
    for c in range(len(used)):
        members = [i for i, a in enumerate(assignments) if a == c]
        reps.append(min(members, key=lambda i: (d[i, c], i)))

    return ClusterResult(
        k=len(used),
        assignments=assignments,
        centroids=centers,
        representatives=tuple(reps),
    )
