"""Stereographic transforms and the hemisphere-confinement monitor."""

from __future__ import annotations

import numpy as np
import pytest

from sphereflow.chart import (
    ChartField,
    chart_gradient_density,
    from_chart,
    one_sided_monitor,
    to_chart,
)
from sphereflow.flow import FlowConfig, run_flow, synthetic_trace
from sphereflow.grid import DomainSpec, SphereField, build_grid, gradient_norm_sq_values


def ball(n=17):
    return build_grid(DomainSpec(3, "ball", n))


def hemisphere_field(g, t=0.0):
    """Smooth unit-norm field with last component bounded below by 0.8."""
    x = g.coords
    a = 0.4 * np.exp(-np.sum(x**2, axis=1))
    b = 0.3 * np.sin(np.pi * x[:, 0] / 2.0) * np.cos(np.pi * x[:, 1] / 2.0)
    c = np.sqrt(1.0 - a**2 - b**2)
    return SphereField(g, np.stack([a, b, c], axis=1), t=t)


def random_hemisphere_field(g, seed=42):
    rng = np.random.default_rng(seed)
    ab = rng.uniform(-0.6, 0.6, size=(g.n_nodes, 2))
    c = np.sqrt(1.0 - np.sum(ab**2, axis=1))
    return SphereField(g, np.column_stack([ab, c]))


def constant_field(g, vec):
    return SphereField(g, np.tile(np.asarray(vec, float), (g.n_nodes, 1)))


class TestToChart:
    def test_north_pole_maps_to_origin(self):
        g = ball()
        v = to_chart(constant_field(g, [0.0, 0.0, 1.0]))
        assert np.max(np.abs(v.values[g.active])) == 0.0

    def test_equator_point_has_unit_chart_norm(self):
        g = ball()
        v = to_chart(constant_field(g, [0.6, 0.8, 0.0]))
        norms = np.sqrt(np.sum(v.values[g.active] ** 2, axis=1))
        assert np.max(np.abs(norms - 1.0)) < 1e-15

    def test_round_trip_identity(self):
        g = ball()
        u = random_hemisphere_field(g)
        back = from_chart(to_chart(u))
        assert np.max(np.abs(back.values[g.active] - u.values[g.active])) <= 1e-12

    def test_south_pole_rejected_with_node_named(self):
        g = ball()
        u = constant_field(g, [0.0, 0.0, 1.0])
        u.values[g.origin_index] = [0.0, 0.0, -1.0]
        with pytest.raises(ValueError, match=f"node {g.origin_index}"):
            to_chart(u)

    def test_exterior_junk_ignored(self):
        g = ball()
        u = random_hemisphere_field(g)
        u.values[g.exterior] = [0.0, 0.0, -1.0]
        v = to_chart(u)
        assert np.all(np.isfinite(v.values))


class TestFromChart:
    def test_origin_maps_to_north_pole(self):
        g = ball()
        v = ChartField(g, np.zeros((g.n_nodes, 2)))
        u = from_chart(v)
        assert np.array_equal(u.values[g.active][0], [0.0, 0.0, 1.0])

    def test_unit_chart_norm_lands_on_equator(self):
        g = ball()
        v = ChartField(g, np.tile([0.6, 0.8], (g.n_nodes, 1)))
        u = from_chart(v)
        assert np.max(np.abs(u.values[g.active, -1])) < 1e-15

    def test_output_norms_one(self):
        g = ball()
        rng = np.random.default_rng(3)
        v = ChartField(g, rng.normal(scale=2.0, size=(g.n_nodes, 2)))
        u = from_chart(v)
        norms = np.sqrt(np.sum(u.values[g.active] ** 2, axis=1))
        assert np.max(np.abs(norms - 1.0)) <= 1e-15

    def test_last_component_formula(self):
        g = ball()
        v = ChartField(g, np.tile([0.5, 0.5], (g.n_nodes, 1)))
        u = from_chart(v)
        assert u.values[g.origin_index, -1] == pytest.approx(0.5 / 1.5, abs=1e-15)

    def test_non_finite_rejected(self):
        g = ball()
        vals = np.zeros((g.n_nodes, 2))
        vals[g.origin_index, 0] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            from_chart(ChartField(g, vals))

    def test_shape_validation(self):
        g = ball()
        with pytest.raises(ValueError, match="shape"):
            ChartField(g, np.zeros((3, 2)))


class TestGradientDensity:
    def test_matches_ambient_density_to_h2(self):
        diffs = {}
        for n in (17, 33):
            g = ball(n)
            u = hemisphere_field(g)
            direct = gradient_norm_sq_values(g, u.values)
            via_chart = chart_gradient_density(to_chart(u))
            diffs[n] = float(np.max(np.abs(direct - via_chart)[g.interior]))
        assert diffs[17] < 1e-3
        assert diffs[17] / diffs[33] >= 3.0


class TestOneSidedMonitor:
    def test_constant_north_pole_sup_v_zero(self):
        g = ball()
        v = np.tile([0.0, 0.0, 1.0], (g.n_nodes, 1))
        tr = synthetic_trace(g, [0.0, 0.1, 0.2], [v, v, v])
        rep = one_sided_monitor(tr)
        assert rep.passed
        assert max(rep.sup_v) == 0.0

    def test_confined_projected_run_passes(self):
        g = ball()
        cfg = FlowConfig(
            scheme="projected-hhf",
            dt=g.h**2 / 12.0,
            t_end=40 * g.h**2 / 12.0,
            checkpoint_stride=5,
        )
        tr = run_flow(hemisphere_field(g), cfg)
        assert tr.status == "ok"
        rep = one_sided_monitor(tr)
        assert rep.passed
        assert rep.first_violation is None
        assert len(rep.sup_v) == tr.n_checkpoints

    def test_unconfined_input_rejected(self):
        g = ball()
        v = np.tile([1.0, 0.0, 0.0], (g.n_nodes, 1))  # min last = 0 < delta
        tr = synthetic_trace(g, [0.0, 0.1], [v, v])
        with pytest.raises(ValueError, match="hemisphere-confined"):
            one_sided_monitor(tr)

    def test_growth_is_flagged(self):
        g = ball()
        near_pole = from_chart(ChartField(g, np.full((g.n_nodes, 2), 0.1))).values
        spread = from_chart(ChartField(g, np.full((g.n_nodes, 2), 0.8))).values
        tr = synthetic_trace(g, [0.0, 0.05, 0.1], [near_pole, near_pole, spread])
        rep = one_sided_monitor(tr)
        assert not rep.passed
        assert rep.first_violation == 2

    def test_delta_validation(self):
        g = ball()
        v = np.tile([0.0, 0.0, 1.0], (g.n_nodes, 1))
        tr = synthetic_trace(g, [0.0, 0.1], [v, v])
        with pytest.raises(ValueError, match="delta"):
            one_sided_monitor(tr, delta=0.0)
