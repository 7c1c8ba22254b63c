"""Initial-data generators, harmonic extension, and the two-scheme study.

Generators produce the bundled scenarios:

* ``equator``: x/|x| into S^2, the canonical singular map (d = 3 only);
* ``smoothed-equator``: the same map tapered to 0 inside a core ball so the
  field is C^1 with finite energy; |u| <= 1 but < 1 in the core, so it is
  a penalized-scheme datum only (no continuous unit-norm filling of the
  identity boundary trace exists, by degree);
* ``cap``: smooth map into the polar cap {last >= cos(theta0)}, the
  hemisphere-confined datum;
* ``great-circle``: u = (cos phi, sin phi, 0) with a product-cosine phase,
  whose projected flow reduces exactly to the scalar heat equation;
* ``constant``: the north-pole map.

`harmonic_extension` solves the componentwise discrete Laplace equation
with the field's boundary trace, certified by residual and the discrete
maximum principle. `compare_glhf_hhf` runs the penalty-parameter ladder
against the projected flow and reports space-time L^2 distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sphereflow.flow import FlowConfig, FlowTrace, run_flow
from sphereflow.grid import (
    DomainGrid,
    DomainSpec,
    SphereField,
    build_grid,
    laplacian_values,
)

NORTH_POLE = (0.0, 0.0, 1.0)


def make_equator_map(grid: DomainGrid) -> SphereField:
    """u(x) = x/|x| into S^2; the origin node gets the north pole.

    The map is undefined at 0; pinning the origin to a fixed unit vector
    keeps the datum runnable, and diagnostics treat the origin cell as the
    singular candidate it represents. Boundary nodes carry the identity
    trace of S^2 (up to staircase placement).
    """
    if grid.dim != 3:
        raise ValueError(f"equator map needs d = 3, got d = {grid.dim}")
    r = np.sqrt(np.sum(grid.coords**2, axis=1))
    safe = np.where(r > 0.0, r, 1.0)
    vals = grid.coords / safe[:, None]
    vals[grid.origin_index] = NORTH_POLE
    return SphereField(grid, vals)


def _smoothstep(tau: np.ndarray) -> np.ndarray:
    return tau**2 * (3.0 - 2.0 * tau)


def make_smoothed_equator(grid: DomainGrid, rho: float) -> SphereField:
    """Equator map with amplitude tapered to 0 inside the core ball B_rho.

    u = beta(r/rho) x/|x| with the cubic smoothstep beta, so u matches
    x/|x| exactly for r >= rho and is C^1 across r = rho (beta(1) = 1,
    beta'(1) = 0) and at the origin (u vanishes to second order). The image
    fills the ball, not the sphere: a unit-norm filling cannot exist, so
    this datum is for the penalized scheme.
    """
    if grid.dim != 3:
        raise ValueError(f"smoothed equator needs d = 3, got d = {grid.dim}")
    if not 0.0 < rho < 0.5:
        raise ValueError(f"core radius must be in (0, 1/2), got {rho}")
    r = np.sqrt(np.sum(grid.coords**2, axis=1))
    safe = np.where(r > 0.0, r, 1.0)
    beta = np.where(r >= rho, 1.0, _smoothstep(np.minimum(r, rho) / rho))
    vals = beta[:, None] * grid.coords / safe[:, None]
    vals[grid.origin_index] = 0.0
    return SphereField(grid, vals)


def make_cap_map(grid: DomainGrid, theta0: float) -> SphereField:
    """Smooth map into the closed polar cap of aperture theta0 < pi/2.

    Polar angle theta0 * exp(-|x|^2) peaks at the origin node, so the min
    last component equals cos(theta0) exactly there; the azimuth winds with
    the second coordinate. Smooth on all of R^d, hence near the boundary.
    """
    if not 0.0 < theta0 < np.pi / 2.0:
        raise ValueError(f"aperture must be in (0, pi/2), got {theta0}")
    theta = theta0 * np.exp(-np.sum(grid.coords**2, axis=1))
    psi = grid.coords[:, 1]
    vals = np.stack(
        [np.sin(theta) * np.cos(psi), np.sin(theta) * np.sin(psi), np.cos(theta)],
        axis=1,
    )
    return SphereField(grid, vals)


def make_great_circle(grid: DomainGrid, amplitude: float = 1.0) -> SphereField:
    """u = (cos phi, sin phi, 0), phi = amplitude * prod_i cos(pi x_i / 2).

    Along a great circle the tension field loses its normal part, so the
    projected flow transports phi by the scalar heat equation; on the unit
    box the phase has the zero-Dirichlet product-cosine eigenfunction form
    with decay rate d pi^2 / 4, giving a closed-form oracle.
    """
    phi = amplitude * np.prod(np.cos(np.pi * grid.coords / 2.0), axis=1)
    zero = np.zeros(grid.n_nodes)
    return SphereField(grid, np.stack([np.cos(phi), np.sin(phi), zero], axis=1))


def make_constant_map(grid: DomainGrid) -> SphereField:
    return SphereField(grid, np.tile(NORTH_POLE, (grid.n_nodes, 1)))


GENERATORS = {
    "equator": make_equator_map,
    "smoothed-equator": make_smoothed_equator,
    "cap": make_cap_map,
    "great-circle": make_great_circle,
    "constant": make_constant_map,
}

# generator keyword -> accepted parameters
GENERATOR_PARAMS = {
    "equator": (),
    "smoothed-equator": ("rho",),
    "cap": ("theta0",),
    "great-circle": ("amplitude",),
    "constant": (),
}


def make_initial(name: str, grid: DomainGrid, **params) -> SphereField:
    """Build a named scenario's initial field; unknown names or params error."""
    if name not in GENERATORS:
        raise ValueError(
            f"unknown scenario {name!r}; available: {sorted(GENERATORS)}"
        )
    allowed = GENERATOR_PARAMS[name]
    extra = set(params) - set(allowed)
    if extra:
        raise ValueError(f"scenario {name!r} does not take {sorted(extra)}")
    return GENERATORS[name](grid, **params)


@dataclass(frozen=True)
class Scenario:
    """A named run: domain, initial-data generator, flow config, diagnostics.

    `params` feeds the generator (theta0, rho, amplitude); `diagnostics`
    lists report names the pipeline should produce after the run.
    """

    name: str
    domain: DomainSpec
    config: FlowConfig
    params: dict = field(default_factory=dict)
    diagnostics: tuple = ()

    def __post_init__(self) -> None:
        if self.name not in GENERATORS:
            raise ValueError(
                f"unknown scenario {self.name!r}; available: {sorted(GENERATORS)}"
            )
        if self.name == "smoothed-equator" and self.config.scheme != "glhf":
            raise ValueError(
                "smoothed-equator data is not unit-norm; it runs under glhf only"
            )

    def build(self) -> tuple[DomainGrid, SphereField]:
        grid = build_grid(self.domain)
        return grid, make_initial(self.name, grid, **self.params)

    def run(self) -> FlowTrace:
        grid, u0 = self.build()
        return run_flow(u0, self.config)


class ExtensionError(RuntimeError):
    """Harmonic solve failed to converge; carries the residual history tail."""


def harmonic_extension(
    u0: SphereField, tol: float = 1e-11, max_iter: int = 1_000_000
) -> SphereField:
    """Componentwise discrete-harmonic filling of u0's boundary trace.

    Solves lap(h) = 0 on interior nodes with h = u0 on boundary nodes by
    conjugate gradients on the interior unknowns (the negated interior
    Laplacian block is symmetric positive definite). Certificates checked
    before returning:

    * max-norm of the discrete Laplacian residual < 1e-10;
    * discrete maximum principle per component: interior values lie within
      the boundary data's range, up to a 1e-10 solver margin.

    The output is NOT sphere-valued in general (componentwise harmonicity
    does not preserve the constraint); it serves as a comparison field.
    """
    grid = u0.grid
    inter = grid.interior
    n_comp = u0.values.shape[1]
    out = np.zeros_like(u0.values)
    out[grid.boundary] = u0.values[grid.boundary]

    def apply_neg_lap(x: np.ndarray) -> np.ndarray:
        full = np.zeros(grid.n_nodes)
        full[inter] = x
        return -laplacian_values(grid, full)[inter]

    full_b = np.zeros(grid.n_nodes)
    for comp in range(n_comp):
        full_b[:] = 0.0
        full_b[grid.boundary] = u0.values[grid.boundary, comp]
        b = laplacian_values(grid, full_b)[inter]
        x = np.zeros(b.shape[0])
        r = b - apply_neg_lap(x)
        p = r.copy()
        rs = float(np.sum(r * r))
        history = []
        converged = False
        for _ in range(max_iter):
            resid_inf = float(np.max(np.abs(r))) if r.size else 0.0
            history.append(resid_inf)
            if resid_inf < tol:
                converged = True
                break
            ap = apply_neg_lap(p)
            alpha = rs / float(np.sum(p * ap))
            x += alpha * p
            r -= alpha * ap
            rs_new = float(np.sum(r * r))
            p = r + (rs_new / rs) * p
            rs = rs_new
        if not converged:
            raise ExtensionError(
                f"component {comp} did not reach residual {tol} within "
                f"{max_iter} iterations; last residuals {history[-5:]}"
            )
        out[inter, comp] = x

    # certificates: PDE residual and the maximum principle
    resid = laplacian_values(grid, out)[inter]
    worst = float(np.max(np.abs(resid))) if resid.size else 0.0
    if worst >= 1e-10:
        raise ExtensionError(f"post-solve Laplacian residual {worst} >= 1e-10")
    for comp in range(n_comp):
        lo = float(np.min(u0.values[grid.boundary, comp]))
        hi = float(np.max(u0.values[grid.boundary, comp]))
        vals = out[inter, comp]
        if vals.size and (vals.min() < lo - 1e-10 or vals.max() > hi + 1e-10):
            raise ExtensionError(
                f"maximum principle violated in component {comp}: "
                f"interior range [{vals.min()}, {vals.max()}] vs boundary "
                f"range [{lo}, {hi}]"
            )
    return SphereField(grid, out, t=u0.t)


def spacetime_l2_distance(a: FlowTrace, b: FlowTrace) -> float:
    """Left-Riemann space-time L^2 distance between two checkpoint traces."""
    if a.grid.spec != b.grid.spec:
        raise ValueError("traces live on different grids")
    if a.n_checkpoints != b.n_checkpoints or any(
        ta != tb for ta, tb in zip(a.times, b.times)
    ):
        raise ValueError("traces have different checkpoint times")
    from sphereflow.grid import integrate

    total = 0.0
    for k in range(a.n_checkpoints - 1):
        dt = a.times[k + 1] - a.times[k]
        diff = a.snapshots[k] - b.snapshots[k]
        total += dt * integrate(a.grid, np.sum(diff**2, axis=1))
    return float(np.sqrt(total))


@dataclass
class ComparisonReport:
    """Per-lambda space-time L^2 distances between penalized and projected runs."""

    lambdas: list[float]
    distances: list[float]

    @property
    def non_increasing(self) -> bool:
        return all(b <= a for a, b in zip(self.distances, self.distances[1:]))

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.distances, self.distances[1:]))


def compare_glhf_hhf(scenario: Scenario, lambdas) -> ComparisonReport:
    """Run the penalty ladder against the projected flow on one scenario.

    The scenario must provide unit-norm data (cap, great-circle, constant);
    the projected reference runs once, each lambda reuses the same initial
    field, step size, and checkpoint stride, and the report carries the
    space-time L^2 distance per lambda in ladder order.
    """
    lams = [float(l) for l in lambdas]
    if not lams:
        raise ValueError("lambda ladder is empty")
    grid, u0 = scenario.build()
    base = scenario.config
    proj_cfg = FlowConfig(
        scheme="projected-hhf",
        dt=base.dt,
        t_end=base.t_end,
        cfl_safety=base.cfl_safety,
        checkpoint_stride=base.checkpoint_stride,
    )
    ref = run_flow(u0, proj_cfg)
    if ref.status != "ok":
        raise RuntimeError(f"projected reference run failed: {ref.failure}")
    distances = []
    for lam in lams:
        cfg = FlowConfig(
            scheme="glhf",
            dt=base.dt,
            t_end=base.t_end,
            lam=lam,
            kappa=base.kappa,
            cfl_safety=base.cfl_safety,
            checkpoint_stride=base.checkpoint_stride,
        )
        tr = run_flow(u0, cfg)
        if tr.status != "ok":
            raise RuntimeError(f"glhf run at lambda={lam} failed: {tr.failure}")
        distances.append(spacetime_l2_distance(tr, ref))
    return ComparisonReport(lambdas=lams, distances=distances)
