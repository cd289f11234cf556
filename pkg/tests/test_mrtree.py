"""Tree transform and structure maintenance tests.

The transform oracles are direct: pairwise averaging and the three-point
prediction formula evaluated in plain numpy. Structure invariants are
checked through the tree's own audit plus hand-built scenarios (constant
data, moving fronts, random perturbations).
"""

import math

import numpy as np
import pytest

from mrfv import kernels
from mrfv.fvcore import initial_averages
from mrfv.kernels import EXISTS, PINNED
from mrfv.models import ClarifierParams, build_clarifier, build_traffic
from mrfv.mrtree import (GradedTree, init_tree, level_tolerance,
                         multiresolution_decode, multiresolution_encode,
                         offsets, reconstruct_from_leaves)


@pytest.fixture(scope="module")
def clar():
    return build_clarifier(ClarifierParams())


@pytest.fixture(scope="module")
def traffic():
    return build_traffic()


class TestTransform:
    @pytest.mark.parametrize("levels", [3, 5, 8])
    @pytest.mark.parametrize("periodic", [True, False])
    def test_roundtrip(self, levels, periodic):
        rng = np.random.default_rng(levels)
        fine = rng.uniform(-3.0, 3.0, size=1 << levels)
        value, detail = multiresolution_encode(fine, 1, levels, periodic)
        rec = multiresolution_decode(value[:1], detail, 1, levels, periodic)
        assert np.abs(rec - fine).max() <= 1e-13

    def test_prediction_example(self):
        assert kernels.predict_child(0.0, 1.0, 2.0, 0) == 0.75
        assert kernels.predict_child(0.0, 1.0, 2.0, 1) == 1.25

    def test_projection_is_pairwise_mean(self):
        rng = np.random.default_rng(7)
        fine = rng.normal(size=16)
        value, _ = multiresolution_encode(fine, 1, 4, False)
        off = offsets(1, 4)
        for l in range(4, 0, -1):
            vl = value[off[l]:off[l + 1]]
            vp = value[off[l - 1]:off[l]]
            assert np.array_equal(vp, 0.5 * (vl[::2] + vl[1::2]))

    @pytest.mark.parametrize("coeffs", [(1.0, 0.0, 0.0), (0.5, -2.0, 0.0),
                                        (0.3, 1.0, 2.0)])
    def test_quadratic_details_vanish(self, coeffs):
        # cell averages of a quadratic: the prediction is exact, so all
        # interior details must be zero to rounding
        a0, a1, a2 = coeffs
        levels = 6
        n = 1 << levels
        edges = np.linspace(0.0, 1.0, n + 1)

        def primitive(x):
            return a0 * x + a1 * x ** 2 / 2 + a2 * x ** 3 / 3

        fine = (primitive(edges[1:]) - primitive(edges[:-1])) / (edges[1] - edges[0])
        _, detail = multiresolution_encode(fine, 1, levels, False)
        off = offsets(1, levels)
        for l in range(1, levels + 1):
            dl = detail[off[l]:off[l + 1]]
            if dl.size > 4:
                assert np.abs(dl[2:-2]).max() <= 1e-13

    def test_detail_antisymmetry(self):
        rng = np.random.default_rng(3)
        fine = rng.normal(size=64)
        _, detail = multiresolution_encode(fine, 1, 6, True)
        off = offsets(1, 6)
        for l in range(1, 7):
            dl = detail[off[l]:off[l + 1]]
            assert np.abs(dl[::2] + dl[1::2]).max() <= 1e-13

    def test_level_tolerance_halves_per_level(self):
        eps = 0.4
        for l in range(1, 9):
            assert level_tolerance(eps, l, 8) == eps * 2.0 ** (l - 8)
        assert level_tolerance(eps, 8, 8) == eps

    def test_reconstruct_quadratic_through_coarse_leaf(self):
        # interior coarse leaf over u = x^2: the zero-detail cascade is
        # quadratic-exact, so its fine averages come back to 1e-13
        n0, levels = 4, 4
        n = n0 << levels
        h = 1.0 / n
        edges = np.arange(n + 1) * h
        exact = np.diff(edges**3 / 3.0) / h
        # level-2 col 5 spans fine cols 20..23; everything else stays fine
        levs = np.concatenate((np.full(20, levels), [2], np.full(n - 24, levels)))
        colv = np.concatenate((np.arange(20), [5], np.arange(24, n)))
        vals = np.concatenate((exact[:20], [exact[20:24].mean()], exact[24:]))
        rec = reconstruct_from_leaves(levs, colv, vals, n0, levels, False)
        assert np.abs(rec - exact).max() <= 1e-13

    def test_reconstruct_preserves_mass(self):
        rng = np.random.default_rng(7)
        n0, levels = 2, 5
        n = n0 << levels
        levs = np.concatenate((np.full(8, levels), [3, 3, 2],
                               np.full(n - 8 - 16, levels)))
        colv = np.concatenate((np.arange(8), [2, 3, 2],
                               np.arange(24, n)))
        vals = rng.uniform(0.0, 1.0, size=levs.size)
        rec = reconstruct_from_leaves(levs, colv, vals, n0, levels, True)
        wid = 1.0 / (n0 << levs)
        assert math.fsum(rec) / n == pytest.approx(math.fsum(vals * wid),
                                                   rel=1e-13)


class TestInit:
    def test_constant_data_stays_coarse_except_pins(self, clar):
        t = init_tree(clar, 6, 1e-3)
        assert t.audit() == []
        assert t.update() == 0
        # well away from the vessel: coarse leaves only
        lev, _, _, ctr, _ = t.leaf_data()
        far = np.abs(np.abs(ctr) - 1.5) < 0.2
        assert lev[far].max() <= 4
        # every break keeps its two flanking finest cells real and pinned
        dxf = t.dx_level[t.levels]
        for b in clar.gamma_breaks:
            k = int(round((b - clar.domain[0]) / dxf))
            for cell in (k - 1, k):
                f = t.flat(t.levels, cell)
                assert t.status[f] & EXISTS
                assert t.status[f] & PINNED

    def test_traffic_init_refines_jumps(self, traffic):
        t = init_tree(traffic, 8, 1e-3)
        assert t.audit() == []
        assert t.leaf_count < t.n_fine // 2
        lev, _, _, ctr, _ = t.leaf_data()
        # initial data jumps at the queue ends sit on finest-level leaves
        for x in (-2.0, -1.0):
            near = np.abs(ctr - x) < 2 * t.dx_level[t.levels]
            assert lev[near].max() == t.levels
        assert t.update() == 0

    def test_init_mass_matches_fine_average(self, traffic):
        t = init_tree(traffic, 8, 1e-3)
        fine = initial_averages(traffic, t.n_fine)
        dx = (traffic.domain[1] - traffic.domain[0]) / t.n_fine
        assert t.mass() == pytest.approx(float(np.sum(fine)) * dx, rel=1e-12)

    def test_zero_epsilon_keeps_full_tree(self, traffic):
        t = init_tree(traffic, 5, 0.0)
        assert t.leaf_count == t.n_fine
        assert all(l == 5 for l, _ in t.leaves())
        assert t.update() == 0

    def test_initial_values_match_exact_averages(self, traffic):
        t = init_tree(traffic, 6, 0.0)
        fine = initial_averages(traffic, t.n_fine)
        assert np.array_equal(t.reconstruct_fine(), fine)


class TestMaintenance:
    def test_randomized_updates_keep_audits_clean(self, traffic):
        t = init_tree(traffic, 7, 5e-3)
        rng = np.random.default_rng(42)
        for _ in range(30):
            lc = t.leaf_count
            t.value[t.leaf_idx[:lc]] += rng.normal(scale=3.0, size=lc)
            t.update()
            assert t.audit() == []

    def test_front_tracking(self, clar):
        # write a step profile onto the leaves at a sequence of positions;
        # the finest level must follow the front, the rest stay coarse
        t = init_tree(clar, 7, 1e-3)
        dxf = t.dx_level[t.levels]
        for s in (-1.6, -0.6, 0.4, 1.3):
            for _ in range(t.levels):
                lev, _, _, ctr, _ = t.leaf_data()
                lc = t.leaf_count
                t.value[t.leaf_idx[:lc]] = np.where(ctr < s, 0.8, 0.1)
                t.update()
            assert t.audit() == []
            lev, _, _, ctr, _ = t.leaf_data()
            near = np.abs(ctr - s) < 2 * dxf
            assert lev[near].max() == t.levels
            assert t.leaf_count < t.n_fine // 2

    def test_coarsening_after_front_passes(self, clar):
        t = init_tree(clar, 7, 1e-3)
        for _ in range(t.levels):
            lc = t.leaf_count
            ctr = t.leaf_data()[3]
            t.value[t.leaf_idx[:lc]] = np.where(ctr < 0.5, 0.8, 0.1)
            t.update()
        refined = t.leaf_count
        for _ in range(2 * t.levels):
            lc = t.leaf_count
            t.value[t.leaf_idx[:lc]] = 0.3
            t.update()
        assert t.audit() == []
        assert t.leaf_count < refined

    def test_virtual_values_are_predictions(self, traffic):
        t = init_tree(traffic, 7, 2e-3)
        for k in range(t.virtual_count):
            f = int(t.virt_idx[k])
            l = int(t.levelof[f])
            i = f - int(t.off[l])
            p = i >> 1
            npar = t.n0 << (l - 1)
            vm = t.value[t.flat(l - 1, (p - 1) % npar)]
            v0 = t.value[t.flat(l - 1, p)]
            vp = t.value[t.flat(l - 1, (p + 1) % npar)]
            assert t.value[f] == kernels.predict_child(vm, v0, vp, i & 1)

    def test_virtual_list_sorted_coarse_to_fine(self, traffic):
        t = init_tree(traffic, 7, 2e-3)
        vl = t.virt_idx[:t.virtual_count]
        assert np.array_equal(vl, np.sort(vl))

    def test_pins_survive_heavy_coarsening(self, clar):
        t = init_tree(clar, 6, 1e-3)
        for _ in range(20):
            lc = t.leaf_count
            t.value[t.leaf_idx[:lc]] = 0.0
            t.update()
        dxf = t.dx_level[t.levels]
        for b in clar.gamma_breaks:
            k = int(round((b - clar.domain[0]) / dxf))
            assert t.is_leaf(t.levels, k - 1)
            assert t.is_leaf(t.levels, k)
        assert t.audit() == []
