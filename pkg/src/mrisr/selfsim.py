"""Nonlocal self-similarity: window weights and the two-phase block search.

Candidates near an anchor are enumerated on expanding square rings at
stride 1; remote candidates are scanned on subsampled rings whose stride
halves whenever the best match improved during the last completed ring and
doubles otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import Image, _freeze
from .patches import Patch


@dataclass(frozen=True)
class SearchConfig:
    """Knobs of the similar-block search."""

    n_max: int = 10
    h: float = 75.0
    spiral_radius: int = 20
    far_step_init: int = 4
    distance_cutoff: float | None = None  # default 3 * h**2
    min_members: int = 0

    def __post_init__(self):
        if self.n_max < 0:
            raise ValueError("n_max must be >= 0")
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.spiral_radius < 1 or self.far_step_init < 1:
            raise ValueError("spiral_radius and far_step_init must be >= 1")
        if self.distance_cutoff is not None and self.distance_cutoff <= 0:
            raise ValueError("distance_cutoff must be positive")
        if self.min_members < 0:
            raise ValueError("min_members must be >= 0")

    @property
    def resolved_cutoff(self) -> float:
        if self.distance_cutoff is not None:
            return float(self.distance_cutoff)
        return 3.0 * self.h * self.h


@dataclass(frozen=True, eq=False)
class SimilarSet:
    """Similar blocks of an anchor, ranked by squared distance."""

    anchor: Patch
    members: tuple  # ((Patch, distance2), ...) ascending by distance2
    gammas: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gammas, dtype=np.float64)
        d2 = [m[1] for m in self.members]
        if any(b < a for a, b in zip(d2, d2[1:])):
            raise ValueError("members must be sorted ascending by distance")
        if len(self.members) != g.shape[0]:
            raise ValueError("one gamma per member required")
        if g.size and (abs(g.sum() - 1.0) > 1e-10 or (g < 0).any() or (g > 1).any()):
            raise ValueError("gammas must lie in [0, 1] and sum to 1")
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "gammas", _freeze(g))

    def __len__(self) -> int:
        return len(self.members)


def nl_weight(window_a, window_b, h: float) -> float:
    """Unnormalized similarity weight exp(-||A - B||^2 / h^2) in (0, 1]."""
    a = window_a.values if isinstance(window_a, Patch) else np.asarray(window_a, dtype=np.float64)
    b = window_b.values if isinstance(window_b, Patch) else np.asarray(window_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"window shapes differ: {a.shape} vs {b.shape}")
    if h <= 0:
        raise ValueError("h must be positive")
    diff = (a - b).ravel()
    return float(np.exp(-(diff @ diff) / (h * h)))


def gamma_weights(distances2: np.ndarray, h: float) -> np.ndarray:
    """Normalized similarity weights exp(-d2/h^2) / Z; empty in, empty out.

    When every exponential underflows to zero the weights fall back to
    uniform rather than dividing by zero.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    d2 = np.asarray(distances2, dtype=np.float64).ravel()
    if d2.size == 0:
        return np.zeros(0)
    w = np.exp(-d2 / (h * h))
    total = w.sum()
    if total == 0.0:
        return np.full(d2.size, 1.0 / d2.size)
    return w / total


_RING_CACHE: dict = {}


def _ring_offsets(radius: int) -> np.ndarray:
    """(dr, dc) offsets of the Chebyshev ring at ``radius``, in walk order:
    top row left-to-right, right column downward, bottom row right-to-left,
    left column upward."""
    cached = _RING_CACHE.get(radius)
    if cached is not None:
        return cached
    r = radius
    top = [(-r, c) for c in range(-r, r + 1)]
    right = [(d, r) for d in range(-r + 1, r + 1)]
    bottom = [(r, c) for c in range(r - 1, -r - 1, -1)]
    left = [(d, -r) for d in range(r - 1, -r, -1)]
    out = np.array(top + right + bottom + left, dtype=np.int64)
    _RING_CACHE[radius] = out
    return out


def _phase1_offsets(spiral_radius: int) -> np.ndarray:
    key = ("p1", spiral_radius)
    cached = _RING_CACHE.get(key)
    if cached is None:
        cached = np.vstack([_ring_offsets(r) for r in range(1, spiral_radius + 1)])
        _RING_CACHE[key] = cached
    return cached


class _CandidatePool:
    """Visited candidates with visit order preserved for tie-breaking."""

    def __init__(self):
        self.d2 = []
        self.rows = []
        self.cols = []
        self.count = 0

    def add(self, d2: np.ndarray, origins: np.ndarray) -> float:
        self.d2.append(d2)
        self.rows.append(origins[:, 0])
        self.cols.append(origins[:, 1])
        self.count += len(d2)
        return float(d2.min()) if len(d2) else np.inf

    def ranked(self):
        if not self.count:
            empty = np.zeros(0)
            return empty, np.zeros((0, 2), dtype=np.int64)
        d2 = np.concatenate(self.d2)
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        order = np.lexsort((np.arange(len(d2)), d2))
        return d2[order], np.stack([rows[order], cols[order]], axis=1)


def search_origins(
    data: np.ndarray, anchor_values: np.ndarray, anchor_origin: tuple, cfg: SearchConfig
):
    """Core search over raw arrays; returns (origins, distances2) of the members."""
    h_img, w_img = data.shape
    size = anchor_values.shape[0]
    max_r = h_img - size
    max_c = w_img - size
    ar, ac = anchor_origin
    if not (0 <= ar <= max_r and 0 <= ac <= max_c):
        raise ValueError(f"anchor origin {anchor_origin} outside the image")

    windows = sliding_window_view(data, (size, size))
    anchor_flat = anchor_values.ravel()
    pool = _CandidatePool()

    def evaluate(offsets: np.ndarray) -> float:
        origins = offsets + np.array([ar, ac], dtype=np.int64)
        keep = (
            (origins[:, 0] >= 0)
            & (origins[:, 0] <= max_r)
            & (origins[:, 1] >= 0)
            & (origins[:, 1] <= max_c)
        )
        origins = origins[keep]
        if not len(origins):
            return np.inf
        cand = windows[origins[:, 0], origins[:, 1]].reshape(len(origins), -1)
        diff = cand - anchor_flat
        d2 = np.einsum("ij,ij->i", diff, diff)
        return pool.add(d2, origins)

    # Phase 1: full rings at stride 1 out to the spiral radius.
    best = evaluate(_phase1_offsets(cfg.spiral_radius))

    # Phase 2: subsampled rings; the stride reacts to match improvements.
    step = cfg.far_step_init
    radius = cfg.spiral_radius + step
    reach = max(ar, max_r - ar, ac, max_c - ac)
    while radius <= reach:
        ring_best = evaluate(_ring_offsets(radius)[::step])
        if ring_best < best:
            best = ring_best
            step = max(1, step // 2)
        else:
            step = min(2 * cfg.far_step_init, step * 2)
        radius += step

    d2_sorted, origins_sorted = pool.ranked()
    within = d2_sorted <= cfg.resolved_cutoff
    d2_kept = d2_sorted[within][: cfg.n_max]
    origins_kept = origins_sorted[within][: cfg.n_max]
    if len(d2_kept) < min(cfg.min_members, len(d2_sorted)):
        take = min(max(cfg.min_members, len(d2_kept)), cfg.n_max, len(d2_sorted))
        d2_kept = d2_sorted[:take]
        origins_kept = origins_sorted[:take]
    return origins_kept, d2_kept


def spiral_search(img: Image, anchor: Patch, cfg: SearchConfig) -> SimilarSet:
    """Find up to ``cfg.n_max`` blocks most similar to ``anchor`` in ``img``.

    The anchor's own origin is never a member; candidates farther than the
    distance cutoff are discarded, so an empty member set is legal.
    """
    origins, d2 = search_origins(img.data, anchor.values, anchor.origin, cfg)
    size = anchor.size
    members = tuple(
        (Patch((r, c), img.data[r : r + size, c : c + size]), float(dd))
        for (r, c), dd in zip(origins, d2)
    )
    return SimilarSet(anchor, members, gamma_weights(d2, cfg.h))
