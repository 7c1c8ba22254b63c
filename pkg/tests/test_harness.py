"""Scenario generators, harmonic extension, and the two-scheme study."""

from __future__ import annotations

import numpy as np
import pytest

from sphereflow.flow import FlowConfig, hhf_projected_step, run_flow
from sphereflow.grid import (
    DomainSpec,
    SphereField,
    build_grid,
    gradient_norm_sq_values,
    integrate,
)
from sphereflow.harness import (
    ExtensionError,
    Scenario,
    compare_glhf_hhf,
    harmonic_extension,
    make_cap_map,
    make_constant_map,
    make_equator_map,
    make_great_circle,
    make_initial,
    make_smoothed_equator,
    spacetime_l2_distance,
)


def ball(n=17):
    return build_grid(DomainSpec(3, "ball", n))


def node_at(grid, point):
    d2 = np.sum((grid.coords - np.asarray(point)) ** 2, axis=1)
    k = int(np.argmin(d2))
    assert d2[k] < 1e-24, f"{point} is not a grid node"
    return k


class TestEquatorMap:
    def test_unit_norm_everywhere(self):
        g = ball()
        u = make_equator_map(g)
        norms = np.sqrt(np.sum(u.values**2, axis=1))
        assert np.max(np.abs(norms - 1.0)) < 1e-15

    def test_boundary_node_fixed(self):
        g = ball()
        k = node_at(g, [1.0, 0.0, 0.0])
        u = make_equator_map(g)
        assert np.array_equal(u.values[k], [1.0, 0.0, 0.0])

    def test_normalization_at_interior_node(self):
        g = ball(n=21)  # h = 0.1 puts (0.3, 0.4, 0) on the grid
        k = node_at(g, [0.3, 0.4, 0.0])
        u = make_equator_map(g)
        assert np.max(np.abs(u.values[k] - [0.6, 0.8, 0.0])) < 1e-15

    def test_origin_gets_north_pole(self):
        g = ball()
        u = make_equator_map(g)
        assert np.array_equal(u.values[g.origin_index], [0.0, 0.0, 1.0])

    def test_dimension_guard(self):
        g = build_grid(DomainSpec(2, "ball", 17))
        with pytest.raises(ValueError, match="d = 3"):
            make_equator_map(g)

    def test_near_stationary_away_from_origin(self):
        # x/|x| is harmonic, so the projected step moves it only by the
        # O(h^2) truncation of the stencils outside the singular core
        rates = {}
        for n in (17, 33):
            g = ball(n)
            u = make_equator_map(g)
            dt = g.h**2 / 12.0
            cfg = FlowConfig(scheme="projected-hhf", dt=dt, t_end=dt)
            u1 = hhf_projected_step(u, cfg)
            r = np.sqrt(np.sum(g.coords**2, axis=1))
            far = g.interior & (r >= 0.5)
            rates[n] = np.max(np.abs(u1.values[far] - u.values[far])) / dt
        assert rates[33] <= 0.1
        assert rates[17] / rates[33] >= 3.0


class TestSmoothedEquator:
    def test_matches_equator_outside_core(self):
        g = ball()
        rho = 0.3
        u = make_smoothed_equator(g, rho)
        eq = make_equator_map(g)
        r = np.sqrt(np.sum(g.coords**2, axis=1))
        outside = r >= rho
        assert np.array_equal(u.values[outside], eq.values[outside])

    def test_image_inside_closed_ball(self):
        g = ball()
        u = make_smoothed_equator(g, 0.25)
        norms = np.sqrt(np.sum(u.values**2, axis=1))
        assert np.max(norms) <= 1.0 + 1e-15
        assert norms[g.origin_index] == 0.0

    def test_energy_grows_as_core_shrinks(self):
        g = ball()
        energies = []
        for rho in (0.4, 0.3, 0.2):
            u = make_smoothed_equator(g, rho)
            energies.append(0.5 * integrate(g, gradient_norm_sq_values(g, u.values)))
        assert energies[0] < energies[1] < energies[2]
        assert np.isfinite(energies[-1])

    def test_core_radius_range(self):
        g = ball()
        for bad in (0.6, 0.5, 0.0, -0.1):
            with pytest.raises(ValueError, match="core radius"):
                make_smoothed_equator(g, bad)


class TestCapMap:
    def test_min_last_component_exact(self):
        g = ball()
        u = make_cap_map(g, np.pi / 3.0)
        assert abs(u.min_last() - 0.5) <= 1e-12

    def test_unit_norm(self):
        g = ball()
        u = make_cap_map(g, 1.2)
        norms = np.sqrt(np.sum(u.values**2, axis=1))
        assert np.max(np.abs(norms - 1.0)) <= 1e-15

    def test_small_aperture_degenerates_to_north_pole(self):
        g = ball()
        u = make_cap_map(g, 1e-9)
        assert np.max(np.abs(u.values - [0.0, 0.0, 1.0])) < 1e-8

    def test_aperture_guard(self):
        g = ball()
        for bad in (np.pi / 2.0, 2.0, 0.0, -0.3):
            with pytest.raises(ValueError, match="aperture"):
                make_cap_map(g, bad)


class TestGreatCircle:
    def test_unit_norm_and_zero_third_component(self):
        g = build_grid(DomainSpec(3, "box", 9))
        u = make_great_circle(g)
        norms = np.sqrt(np.sum(u.values**2, axis=1))
        assert np.max(np.abs(norms - 1.0)) <= 1e-15
        assert np.max(np.abs(u.values[:, 2])) == 0.0

    def test_boundary_phase_vanishes_on_unit_box(self):
        g = build_grid(DomainSpec(3, "box", 9))
        u = make_great_circle(g, amplitude=2.0)
        assert np.max(np.abs(u.values[g.boundary] - [1.0, 0.0, 0.0])) < 1e-15


class TestDispatch:
    def test_unknown_scenario(self):
        g = ball()
        with pytest.raises(ValueError, match="unknown scenario"):
            make_initial("vortex", g)

    def test_rejects_foreign_params(self):
        g = ball()
        with pytest.raises(ValueError, match="does not take"):
            make_initial("cap", g, rho=0.3)

    def test_scenario_validates_name(self):
        cfg = FlowConfig(scheme="glhf", dt=1e-4, t_end=1e-3, lam=100.0)
        with pytest.raises(ValueError, match="unknown scenario"):
            Scenario(name="vortex", domain=DomainSpec(3, "ball", 17), config=cfg)

    def test_smoothed_equator_requires_glhf(self):
        cfg = FlowConfig(scheme="projected-hhf", dt=1e-4, t_end=1e-3)
        with pytest.raises(ValueError, match="glhf only"):
            Scenario(
                name="smoothed-equator",
                domain=DomainSpec(3, "ball", 17),
                config=cfg,
                params={"rho": 0.25},
            )

    def test_scenario_runs(self):
        spec = DomainSpec(3, "ball", 9)
        h = spec.spacing
        cfg = FlowConfig(scheme="glhf", dt=h**2 / 12.0, t_end=5 * h**2 / 12.0, lam=100.0)
        sc = Scenario(name="cap", domain=spec, config=cfg, params={"theta0": 1.0})
        tr = sc.run()
        assert tr.status == "ok"
        assert tr.t_final == pytest.approx(cfg.t_end, abs=1e-15)


class TestHarmonicExtension:
    def test_constant_boundary_gives_constant(self):
        g = ball(9)
        vals = np.tile([0.2, -0.4, 0.7], (g.n_nodes, 1))
        h = harmonic_extension(SphereField(g, vals))
        assert np.max(np.abs(h.values[g.interior] - [0.2, -0.4, 0.7])) < 1e-9

    def test_coordinate_functions_are_harmonic(self):
        g = ball()
        h = harmonic_extension(SphereField(g, g.coords.copy()))
        err = np.max(np.abs(h.values[g.interior] - g.coords[g.interior]))
        assert err < 1e-10

    def test_random_boundary_residual_and_max_principle(self):
        g = ball()
        rng = np.random.default_rng(5)
        vals = np.zeros((g.n_nodes, 3))
        nb = int(np.sum(g.boundary))
        vals[g.boundary] = rng.uniform(-1.0, 1.0, size=(nb, 3))
        h = harmonic_extension(SphereField(g, vals))
        from sphereflow.grid import laplacian_values

        resid = laplacian_values(g, h.values)[g.interior]
        assert np.max(np.abs(resid)) < 1e-10
        for comp in range(3):
            lo = vals[g.boundary, comp].min()
            hi = vals[g.boundary, comp].max()
            assert h.values[g.interior, comp].min() >= lo - 1e-10
            assert h.values[g.interior, comp].max() <= hi + 1e-10

    def test_boundary_rows_carried_exactly(self):
        g = ball(9)
        u = make_cap_map(g, 1.0)
        h = harmonic_extension(u)
        assert np.array_equal(h.values[g.boundary], u.values[g.boundary])

    def test_iteration_cap_raises_with_history(self):
        g = ball()
        u = make_cap_map(g, 1.0)
        with pytest.raises(ExtensionError, match="residual"):
            harmonic_extension(u, max_iter=2)


class TestComparisonStudy:
    def make_cap_scenario(self, n=9, lam_cfg=100.0):
        spec = DomainSpec(3, "ball", n)
        h = spec.spacing
        cfg = FlowConfig(
            scheme="glhf",
            dt=h**2 / 12.0,
            t_end=20 * h**2 / 12.0,
            lam=lam_cfg,
            checkpoint_stride=4,
        )
        return Scenario(name="cap", domain=spec, config=cfg, params={"theta0": 1.2})

    def test_constant_scenario_all_distances_zero(self):
        spec = DomainSpec(3, "ball", 9)
        h = spec.spacing
        cfg = FlowConfig(scheme="glhf", dt=h**2 / 12.0, t_end=5 * h**2 / 12.0, lam=100.0)
        sc = Scenario(name="constant", domain=spec, config=cfg)
        rep = compare_glhf_hhf(sc, [1e2, 1e3])
        assert rep.distances == [0.0, 0.0]

    def test_cap_distances_strictly_decreasing(self):
        rep = compare_glhf_hhf(self.make_cap_scenario(), [1e2, 1e3, 1e4])
        assert rep.strictly_decreasing
        assert rep.non_increasing

    def test_empty_ladder_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            compare_glhf_hhf(self.make_cap_scenario(), [])

    def test_distance_requires_matching_grids(self):
        sc9 = self.make_cap_scenario(n=9)
        tr9 = sc9.run()
        spec17 = DomainSpec(3, "ball", 17)
        h17 = spec17.spacing
        cfg17 = FlowConfig(scheme="glhf", dt=h17**2 / 12.0, t_end=h17**2 / 12.0, lam=100.0)
        tr17 = Scenario(name="cap", domain=spec17, config=cfg17, params={"theta0": 1.2}).run()
        with pytest.raises(ValueError, match="different grids"):
            spacetime_l2_distance(tr9, tr17)

    def test_distance_requires_matching_times(self):
        sc = self.make_cap_scenario()
        tr_a = sc.run()
        cfg_b = FlowConfig(
            scheme="glhf",
            dt=sc.config.dt,
            t_end=sc.config.t_end,
            lam=100.0,
            checkpoint_stride=7,
        )
        tr_b = Scenario(
            name="cap", domain=sc.domain, config=cfg_b, params={"theta0": 1.2}
        ).run()
        with pytest.raises(ValueError, match="checkpoint times"):
            spacetime_l2_distance(tr_a, tr_b)

    def test_identical_traces_distance_zero(self):
        tr = self.make_cap_scenario().run()
        assert spacetime_l2_distance(tr, tr) == 0.0


class TestConstantMap:
    def test_north_pole_everywhere(self):
        g = ball(9)
        u = make_constant_map(g)
        assert np.array_equal(u.values, np.tile([0.0, 0.0, 1.0], (g.n_nodes, 1)))
