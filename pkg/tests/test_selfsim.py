import math

import numpy as np
import pytest

from mrisr.image import Image
from mrisr.patches import Patch
from mrisr.selfsim import (
    SearchConfig,
    SimilarSet,
    gamma_weights,
    nl_weight,
    spiral_search,
)


def brute_force_members(data, anchor_values, anchor_origin, n_max, cutoff):
    """Exhaustive scan oracle: every valid origin except the anchor's own."""
    size = anchor_values.shape[0]
    h, w = data.shape
    flat = anchor_values.ravel()
    rows = []
    for r in range(h - size + 1):
        for c in range(w - size + 1):
            if (r, c) == tuple(anchor_origin):
                continue
            diff = data[r : r + size, c : c + size].ravel() - flat
            d2 = float(diff @ diff)
            if d2 <= cutoff:
                rows.append((d2, r, c))
    rows.sort(key=lambda t: t[0])
    return rows[:n_max]


class TestNlWeight:
    def test_identical_windows(self, rng):
        w = rng.uniform(0, 255, (5, 5))
        assert nl_weight(w, w, 75.0) == 1.0

    def test_analytic_value_at_h(self):
        a = np.zeros((2, 2))
        b = np.zeros((2, 2))
        b[0, 0] = 10.0  # ||A-B||^2 = 100 = h^2 for h=10
        assert nl_weight(a, b, 10.0) == pytest.approx(math.exp(-1.0))

    def test_symmetry(self, rng):
        a = rng.uniform(0, 255, (4, 4))
        b = rng.uniform(0, 255, (4, 4))
        assert nl_weight(a, b, 40.0) == nl_weight(b, a, 40.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nl_weight(np.zeros((3, 3)), np.zeros((4, 4)), 10.0)


class TestGammaWeights:
    def test_equal_distances_split_evenly(self):
        assert np.allclose(gamma_weights(np.array([0.0, 0.0]), 5.0), [0.5, 0.5])

    def test_analytic_two_point(self):
        h = 3.0
        g = gamma_weights(np.array([0.0, h * h]), h)
        z = 1.0 + math.exp(-1.0)
        assert np.allclose(g, [1.0 / z, math.exp(-1.0) / z])

    def test_sums_to_one(self, rng):
        for _ in range(20):
            d2 = rng.uniform(0, 1e4, rng.integers(1, 12))
            g = gamma_weights(d2, 75.0)
            assert abs(g.sum() - 1.0) <= 1e-12

    def test_monotone(self, rng):
        d2 = np.sort(rng.uniform(0, 5e3, 8))
        g = gamma_weights(d2, 75.0)
        assert all(a > b for a, b in zip(g, g[1:]) if a != b)
        # strictly: smaller distance => strictly larger weight
        assert all(
            g[i] > g[j]
            for i in range(8)
            for j in range(8)
            if d2[i] < d2[j]
        )

    def test_underflow_falls_back_to_uniform(self):
        g = gamma_weights(np.array([1e9, 2e9, 3e9]), 1.0)
        assert np.allclose(g, 1.0 / 3.0)

    def test_empty(self):
        assert gamma_weights(np.zeros(0), 10.0).shape == (0,)


class TestSpiralSearch:
    def test_constant_image_uniform_gammas(self):
        img = Image(np.full((20, 20), 99.0))
        anchor = Patch((8, 8), img.data[8:13, 8:13])
        cfg = SearchConfig(n_max=6, spiral_radius=4)
        out = spiral_search(img, anchor, cfg)
        assert len(out) == 6
        assert np.allclose(out.gammas, 1.0 / 6.0)
        assert all(d == 0.0 for _, d in out.members)

    def test_anchor_never_a_member(self, rng):
        img = Image(rng.uniform(0, 255, (24, 24)))
        anchor = Patch((10, 10), img.data[10:15, 10:15])
        out = spiral_search(img, anchor, SearchConfig(n_max=20, spiral_radius=30,
                                                      distance_cutoff=1e18))
        assert (10, 10) not in [m.origin for m, _ in out.members]

    def test_finds_planted_duplicate(self, rng):
        data = rng.uniform(0, 255, (40, 40))
        block = data[2:7, 2:7].copy()
        data[30:35, 31:36] = block  # plant an exact duplicate far away
        img = Image(data)
        anchor = Patch((2, 2), img.data[2:7, 2:7])
        cfg = SearchConfig(n_max=3, spiral_radius=40, distance_cutoff=1e-9)
        out = spiral_search(img, anchor, cfg)
        assert [m.origin for m, _ in out.members] == [(30, 31)]
        assert np.allclose(out.gammas, [1.0])
        oracle = brute_force_members(data, block, (2, 2), 3, 1e-9)
        assert [(r, c) for _, r, c in oracle] == [(30, 31)]

    def test_full_radius_matches_brute_force(self, rng):
        for trial in range(4):
            data = rng.uniform(0, 255, (30, 26))
            r0, c0 = int(rng.integers(0, 25)), int(rng.integers(0, 21))
            anchor = Patch((r0, c0), data[r0 : r0 + 5, c0 : c0 + 5])
            cfg = SearchConfig(n_max=8, spiral_radius=64, distance_cutoff=1e18)
            out = spiral_search(Image(data), anchor, cfg)
            oracle = brute_force_members(data, anchor.values, (r0, c0), 8, 1e18)
            got_d2 = [d for _, d in out.members]
            want_d2 = [d for d, _, _ in oracle]
            assert np.allclose(got_d2, want_d2, rtol=1e-12, atol=0)
            got_origins = {m.origin for m, _ in out.members}
            want_origins = {(r, c) for _, r, c in oracle}
            assert got_origins == want_origins

    def test_phase2_heuristic_quality(self, rng):
        # mean distance of heuristic members <= 1.5x exhaustive members
        from mrisr.phantom import phantom

        img = phantom(64, 64, "disks", seed=4).image
        cfg = SearchConfig(n_max=5, spiral_radius=8, far_step_init=4)
        ratios = []
        anchors = [(5, 5), (20, 33), (50, 50), (10, 40), (30, 30), (45, 20)]
        for r0, c0 in anchors:
            anchor = Patch((r0, c0), img.data[r0 : r0 + 5, c0 : c0 + 5])
            got = spiral_search(img, anchor, cfg)
            oracle = brute_force_members(
                img.data, anchor.values, (r0, c0), 5, cfg.resolved_cutoff
            )
            # near-unique patches can be legitimately missed by the
            # subsampled far phase; the regression bound is about anchors
            # with usable similar sets on both sides
            if not oracle or not len(got):
                continue
            want_mean = np.mean([d for d, _, _ in oracle])
            if want_mean > 0:
                ratios.append(np.mean([d for _, d in got.members]) / want_mean)
        assert len(ratios) >= 3 and np.mean(ratios) <= 1.5

    def test_members_sorted_and_bounded(self, rng):
        img = Image(rng.uniform(0, 255, (30, 30)))
        anchor = Patch((12, 12), img.data[12:17, 12:17])
        out = spiral_search(img, anchor, SearchConfig(n_max=4, distance_cutoff=1e18))
        d2 = [d for _, d in out.members]
        assert d2 == sorted(d2)
        assert len(out) <= 4

    def test_empty_member_set_legal(self, rng):
        img = Image(rng.uniform(0, 255, (20, 20)))
        anchor = Patch((8, 8), img.data[8:13, 8:13])
        out = spiral_search(img, anchor, SearchConfig(n_max=5, distance_cutoff=1e-12))
        assert len(out) == 0
        assert out.gammas.shape == (0,)

    def test_min_members_overrides_cutoff(self, rng):
        img = Image(rng.uniform(0, 255, (20, 20)))
        anchor = Patch((8, 8), img.data[8:13, 8:13])
        cfg = SearchConfig(n_max=5, distance_cutoff=1e-12, min_members=2)
        out = spiral_search(img, anchor, cfg)
        assert len(out) == 2

    def test_anchor_outside_rejected(self, rng):
        img = Image(rng.uniform(0, 255, (10, 10)))
        anchor = Patch((8, 8), np.zeros((5, 5)))
        with pytest.raises(ValueError):
            spiral_search(img, anchor, SearchConfig())


class TestSimilarSet:
    def test_validates_sorted(self):
        a = Patch((0, 0), np.zeros((2, 2)))
        m1 = (Patch((1, 1), np.zeros((2, 2))), 5.0)
        m2 = (Patch((2, 2), np.zeros((2, 2))), 1.0)
        with pytest.raises(ValueError):
            SimilarSet(a, (m1, m2), np.array([0.5, 0.5]))

    def test_validates_gamma_sum(self):
        a = Patch((0, 0), np.zeros((2, 2)))
        m = (Patch((1, 1), np.zeros((2, 2))), 1.0)
        with pytest.raises(ValueError):
            SimilarSet(a, (m,), np.array([0.7]))
