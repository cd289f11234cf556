"""Adaptive solver tests: exact equivalence with the uniform scheme at
zero threshold, conservation on adapting trees, lane agreement, snapshot
landing, and structural health while marching."""

import math

import numpy as np
import pytest

from mrfv.errors import NumericalError
from mrfv.fvcore import TimeRule, prepare_interfaces, resolve_dt, run_uniform
from mrfv.models import build_clarifier, build_traffic
from mrfv.mrsolver import mr_step, run_mr, snapshot_from_tree
from mrfv.mrtree import init_tree


@pytest.fixture(scope="module")
def clar():
    return build_clarifier()


@pytest.fixture(scope="module")
def traffic():
    return build_traffic()


# ---------------------------------------------------------------------------
# zero-threshold equivalence: with eps = 0 nothing is ever deleted, the tree
# stays fully refined, and every leaf update must reproduce the uniform
# scheme exactly (the level-jump diffusion factors degenerate to 1.0)

class TestZeroThresholdEquivalence:
    def test_bitwise_periodic_numpy(self, traffic):
        rule = TimeRule("lambda", 0.0003)
        uni = run_uniform(traffic, 256, 0.002, rule, lane="numpy")
        mr = run_mr(traffic, 8, 0.0, 0.002, rule, lane="numpy")
        assert mr.steps == uni.steps
        assert np.array_equal(mr.tree.reconstruct_fine(), uni.u)

    def test_bitwise_transparent_numpy(self, clar):
        rule = TimeRule("lambda", 1 / 16)
        uni = run_uniform(clar, 256, 0.05, rule, lane="numpy")
        mr = run_mr(clar, 8, 0.0, 0.05, rule, lane="numpy")
        assert np.array_equal(mr.tree.reconstruct_fine(), uni.u)

    def test_bitwise_fast_lane(self, clar):
        # 200 explicit steps on the compiled lane
        dx = (clar.domain[1] - clar.domain[0]) / 256
        dt = resolve_dt(clar, TimeRule("lambda", 1 / 16), dx)
        t_final = 200 * dt
        uni = run_uniform(clar, 256, t_final, TimeRule("lambda", 1 / 16),
                          lane="fast")
        mr = run_mr(clar, 8, 0.0, t_final, TimeRule("lambda", 1 / 16),
                    lane="fast")
        assert uni.steps == 200
        assert mr.steps == 200
        assert np.array_equal(mr.tree.reconstruct_fine(), uni.u)

    def test_full_tree_stays_full(self, traffic):
        mr = run_mr(traffic, 7, 0.0, 0.002, TimeRule("lambda", 0.0003),
                    lane="numpy")
        assert mr.tree.leaf_count == mr.n_fine


# ---------------------------------------------------------------------------
# lane agreement on an adapting tree

class TestLaneAgreement:
    def test_adaptive_traffic(self, traffic):
        rule = TimeRule("lambda", 0.0003)
        a = run_mr(traffic, 9, 1e-3, 0.01, rule, lane="numpy")
        b = run_mr(traffic, 9, 1e-3, 0.01, rule, lane="fast")
        assert a.steps == b.steps
        assert a.tree.leaf_count == b.tree.leaf_count
        assert np.allclose(a.tree.reconstruct_fine(),
                           b.tree.reconstruct_fine(), rtol=0, atol=1e-9)

    def test_adaptive_clarifier(self, clar):
        rule = TimeRule("lambda", 1 / 16)
        a = run_mr(clar, 8, 1e-3, 0.2, rule, lane="numpy")
        b = run_mr(clar, 8, 1e-3, 0.2, rule, lane="fast")
        assert a.tree.leaf_count == b.tree.leaf_count
        assert np.allclose(a.tree.reconstruct_fine(),
                           b.tree.reconstruct_fine(), rtol=0, atol=1e-10)


# ---------------------------------------------------------------------------
# conservation: one flux per edge enters both neighbours, so leaf mass must
# telescope exactly on periodic domains, adapt or not

class TestConservation:
    def test_per_step_mass(self, traffic):
        tree = init_tree(traffic, 9, 1e-2)
        iface = prepare_interfaces(traffic, tree.n_fine)
        dx = (traffic.domain[1] - traffic.domain[0]) / tree.n_fine
        dt = resolve_dt(traffic, TimeRule("lambda", 0.0003), dx)
        m0 = tree.mass()
        for _ in range(50):
            mr_step(traffic, tree, iface, dt)
            assert abs(tree.mass() - m0) <= 1e-12 * abs(m0)
        # the adapting tree actually exercises level jumps
        lev = tree.leaf_data()[0]
        assert lev.max() > lev.min()

    def test_full_run_mass(self, traffic):
        res = run_mr(traffic, 9, 1e-2, 0.05, TimeRule("lambda", 0.0003),
                     lane="fast")
        drift = abs(res.mass_final - res.mass_initial)
        assert drift <= 1e-10 * abs(res.mass_initial)
        assert res.mass_initial == pytest.approx(
            float(np.mean(res.tree.reconstruct_fine()))
            * (traffic.domain[1] - traffic.domain[0]), rel=1e-6)


# ---------------------------------------------------------------------------
# solution bounds: the uniform scheme is monotone and must hold the box to
# rounding; the adaptive scheme perturbs by O(eps) through phantom states

class TestSolutionBounds:
    def test_zero_threshold_box(self, traffic):
        res = run_mr(traffic, 8, 0.0, 0.002, TimeRule("lambda", 0.0003),
                     lane="numpy")
        assert res.u_min_seen >= -1e-10
        assert res.u_max_seen <= 100.0 + 1e-10

    def test_adaptive_box_within_eps(self, traffic):
        eps = 1e-3
        res = run_mr(traffic, 9, eps, 0.02, TimeRule("lambda", 0.0003),
                     lane="fast")
        assert res.u_min_seen >= -eps
        assert res.u_max_seen <= 100.0 + eps


# ---------------------------------------------------------------------------
# run bookkeeping

class TestRunBookkeeping:
    def test_snapshots_land(self, clar):
        times = (0.1, 0.25, 0.4)
        res = run_mr(clar, 7, 1e-3, 0.4, TimeRule("lambda", 1 / 16),
                     snapshot_times=times, lane="fast")
        assert [t for t, _ in res.snapshots] == pytest.approx(list(times),
                                                              abs=1e-9)
        span = clar.domain[1] - clar.domain[0]
        for _, snap in res.snapshots:
            assert snap.n_leaves == len(snap.values)
            assert math.fsum(snap.widths) == pytest.approx(span, rel=1e-12)
            assert np.all(np.isfinite(snap.values))
            assert np.all(np.diff(snap.centers) > 0)
        t_last, last = res.snapshots[-1]
        assert t_last == pytest.approx(res.t)
        assert math.fsum(last.values * last.widths) == pytest.approx(
            res.mass_final, rel=1e-12, abs=1e-12)

    def test_result_fields(self, traffic):
        res = run_mr(traffic, 7, 1e-2, 0.004, TimeRule("lambda", 0.0003),
                     lane="fast")
        assert res.n_fine == 128
        assert res.dx_fine == pytest.approx(10.0 / 128)
        assert res.steps > 0
        assert res.t == pytest.approx(0.004)
        assert res.loop_seconds > 0
        assert res.total_seconds >= res.loop_seconds
        assert res.epsilon == 1e-2

    def test_diagnostics(self, traffic):
        res = run_mr(traffic, 9, 1e-3, 0.01, TimeRule("lambda", 0.0003),
                     lane="fast")
        assert res.leaf_counts.size == res.steps
        assert res.leaf_counts[-1] == res.tree.leaf_count
        assert np.all(res.leaf_counts > 0)
        # an adapting front run does exercise the phantom clamp
        assert res.clamp_count > 0
        full = run_mr(traffic, 6, 0.0, 0.002, TimeRule("lambda", 0.0003),
                      lane="numpy")
        assert full.clamp_count == 0

    def test_unstable_dt_raises(self, traffic):
        with pytest.raises(NumericalError):
            run_mr(traffic, 6, 1e-3, 0.01, TimeRule("lambda", 1e6),
                   lane="numpy")


# ---------------------------------------------------------------------------
# structural health while marching

class TestMarchHealth:
    def test_audit_clean_every_step(self, clar):
        tree = init_tree(clar, 7, 1e-3)
        iface = prepare_interfaces(clar, tree.n_fine)
        dx = (clar.domain[1] - clar.domain[0]) / tree.n_fine
        dt = resolve_dt(clar, TimeRule("lambda", 1 / 16), dx)
        for _ in range(30):
            mr_step(clar, tree, iface, dt)
            assert tree.audit() == []

    def test_snapshot_matches_tree(self, traffic):
        tree = init_tree(traffic, 7, 1e-2)
        snap = snapshot_from_tree(tree)
        lev, col, val, ctr, wid = tree.leaf_data()
        assert np.array_equal(snap.values, val)
        assert np.array_equal(snap.centers, ctr)
        assert snap.n_leaves == tree.leaf_count
