"""Explicit time steppers for penalized and projected sphere-valued heat flow.

Two schemes on a shared explicit-Euler backbone with Dirichlet-pinned
boundary nodes:

* ``glhf``: unconstrained relaxation u_t = lap(u) - lam^(1-kappa)(|u|^2-1)u,
  which keeps |u| <= 1 up to roundoff under the CFL bound;
* ``projected-hhf``: u_t = lap(u) + |grad u|^2 u followed by nodewise
  renormalization, which keeps |u| = 1 to machine precision.

Traces carry checkpoints plus a per-step scalar log that serializes to
NDJSON with the fixed keys t, dirichlet, penalty, sup_norm, ut_sq, min_last
(and sup_v whenever the slice stays inside the stereographic chart domain).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from sphereflow.grid import (
    DomainGrid,
    SphereField,
    gradient_norm_sq_values,
    gradient_values,
    integrate,
    laplacian_values,
)

SCHEMES = ("glhf", "projected-hhf")

# tolerance ladder shared with the acceptance checks
UNIT_NORM_TOL = 1e-12  # projected fields: | |u| - 1 |
BALL_NORM_TOL = 1e-9  # penalized fields: |u| - 1
PROJECTION_FLOOR = 1e-8  # |w| below this is a blow-up indicator
CHART_EDGE = -1.0 + 1e-6  # min_last above this admits sup_v


class FlowError(RuntimeError):
    """Numerical refusal or failure inside a stepper."""


class CflError(FlowError):
    pass


class BlowUpError(FlowError):
    pass


@dataclass(frozen=True)
class FlowConfig:
    """Time-stepping parameters.

    Args:
        scheme: "glhf" or "projected-hhf".
        dt: time step; must satisfy dt <= cfl_safety * h^2 / (2d).
        t_end: flow horizon, > 0.
        lam: penalty weight lambda >= 1; required for glhf, ignored otherwise.
        kappa: penalty exponent in (0, 1); the effective weight is
            lam^(1-kappa).
        cfl_safety: fraction of the diffusive CFL bound to allow, in (0, 1].
        checkpoint_stride: keep every k-th step's field in the trace (the
            initial and final fields are always kept).
    """

    scheme: str
    dt: float
    t_end: float
    lam: float | None = None
    kappa: float = 0.5
    cfl_safety: float = 1.0
    checkpoint_stride: int = 1

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0.0:
            raise ValueError(f"t_end must be >= 0, got {self.t_end}")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ValueError(f"cfl_safety must be in (0, 1], got {self.cfl_safety}")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError(f"kappa must be in (0, 1), got {self.kappa}")
        if self.scheme == "glhf":
            if self.lam is None or self.lam < 1.0:
                raise ValueError(f"glhf requires lam >= 1, got {self.lam}")
        if self.checkpoint_stride < 1:
            raise ValueError("checkpoint_stride must be >= 1")

    @property
    def mu(self) -> float:
        """Effective penalty weight lam^(1-kappa); 0 for the projected scheme."""
        if self.scheme != "glhf":
            return 0.0
        return float(self.lam) ** (1.0 - self.kappa)

    def cfl_bound(self, grid: DomainGrid) -> float:
        return self.cfl_safety * grid.h**2 / (2.0 * grid.dim)

    def check_cfl(self, grid: DomainGrid) -> None:
        bound = self.cfl_bound(grid)
        if self.dt > bound * (1.0 + 1e-12):
            raise CflError(
                f"dt = {self.dt} violates the CFL bound "
                f"cfl_safety*h^2/(2d) = {bound} (h = {grid.h}, d = {grid.dim})"
            )


def _require_finite(values: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(values)):
        raise FlowError(f"non-finite values in {where}")


def glhf_step(u: SphereField, cfg: FlowConfig, dt: float | None = None) -> SphereField:
    """One explicit Euler step of the penalized flow on interior nodes.

    Refuses on CFL violation, non-finite input, or input outside the closed
    unit ball (beyond tolerance). Boundary rows are carried bit-identically.
    """
    if cfg.scheme != "glhf":
        raise ValueError("glhf_step requires a glhf config")
    cfg.check_cfl(u.grid)
    step = cfg.dt if dt is None else dt
    v = u.values
    _require_finite(v[u.grid.active], "glhf input")
    norms2 = np.sum(v**2, axis=1)
    over = norms2[u.grid.active] > (1.0 + BALL_NORM_TOL) ** 2
    if np.any(over):
        raise FlowError(
            f"glhf input leaves the unit ball: max |u| = "
            f"{float(np.sqrt(np.max(norms2[u.grid.active])))}"
        )
    lap = laplacian_values(u.grid, v)
    out = v.copy()
    inter = u.grid.interior
    rhs = lap[inter] - cfg.mu * (norms2[inter, None] - 1.0) * v[inter]
    out[inter] = v[inter] + step * rhs
    return SphereField(u.grid, out, t=u.t + step)


def hhf_projected_step(
    u: SphereField, cfg: FlowConfig, dt: float | None = None
) -> SphereField:
    """One explicit Euler step of the tension field plus renormalization.

    The unnormalized update w = u + dt*(lap u + |grad u|^2 u) must stay away
    from the origin; |w| < 1e-8 at any interior node is reported as a
    blow-up indicator and the step is rejected.
    """
    if cfg.scheme != "projected-hhf":
        raise ValueError("hhf_projected_step requires a projected-hhf config")
    cfg.check_cfl(u.grid)
    step = cfg.dt if dt is None else dt
    v = u.values
    grid = u.grid
    _require_finite(v[grid.active], "projected input")
    norms = np.sqrt(np.sum(v**2, axis=1))
    off = np.abs(norms[grid.active] - 1.0)
    if np.max(off) > UNIT_NORM_TOL:
        raise FlowError(
            f"projected input is not unit-norm: max | |u|-1 | = {float(np.max(off))}"
        )
    lap = laplacian_values(grid, v)
    gn = gradient_norm_sq_values(grid, v)
    inter = grid.interior
    w = v[inter] + step * (lap[inter] + gn[inter, None] * v[inter])
    wn = np.sqrt(np.sum(w**2, axis=1))
    if np.min(wn) < PROJECTION_FLOOR:
        k = int(np.argmin(wn))
        node = np.flatnonzero(inter)[k]
        raise BlowUpError(
            f"projection step rejected: |w| = {float(wn[k])} at node "
            f"{node} (x = {grid.coords[node].tolist()}), blow-up indicator"
        )
    out = v.copy()
    out[inter] = w / wn[:, None]
    return SphereField(grid, out, t=u.t + step)


def step(u: SphereField, cfg: FlowConfig, dt: float | None = None) -> SphereField:
    if cfg.scheme == "glhf":
        return glhf_step(u, cfg, dt)
    return hhf_projected_step(u, cfg, dt)


@dataclass
class StepLog:
    """Per-step scalars; one NDJSON record per entry."""

    t: list[float] = field(default_factory=list)
    dirichlet: list[float] = field(default_factory=list)
    penalty: list[float] = field(default_factory=list)
    sup_norm: list[float] = field(default_factory=list)
    ut_sq: list[float] = field(default_factory=list)
    min_last: list[float] = field(default_factory=list)

    def append(self, **kw) -> None:
        for key, val in kw.items():
            getattr(self, key).append(float(val))

    def __len__(self) -> int:
        return len(self.t)

    def sup_v(self, k: int) -> float | None:
        """sup |v| in the stereographic chart, derived from min_last."""
        m = self.min_last[k]
        if m <= CHART_EDGE:
            return None
        return math.sqrt((1.0 - m) / (1.0 + m))

    def records(self):
        for k in range(len(self.t)):
            rec = {
                "t": self.t[k],
                "dirichlet": self.dirichlet[k],
                "penalty": self.penalty[k],
                "sup_norm": self.sup_norm[k],
                "ut_sq": self.ut_sq[k],
                "min_last": self.min_last[k],
            }
            sv = self.sup_v(k)
            if sv is not None:
                rec["sup_v"] = sv
            yield rec

    def write_ndjson(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")


@dataclass
class FlowTrace:
    """Checkpointed flow history plus the per-step log.

    `times`/`snapshots` hold the kept fields (always including the initial
    and final states); `status` is "ok" or "failed", with the failure text
    preserved so partial traces stay inspectable.
    """

    grid: DomainGrid
    config: FlowConfig | None
    times: list[float]
    snapshots: list[np.ndarray]
    log: StepLog
    status: str = "ok"
    failure: str | None = None
    error: FlowError | None = field(default=None, repr=False)

    @property
    def n_checkpoints(self) -> int:
        return len(self.times)

    @property
    def t_final(self) -> float:
        return self.times[-1]

    def field(self, k: int) -> SphereField:
        return SphereField(self.grid, self.snapshots[k], t=self.times[k])

    def initial_field(self) -> SphereField:
        return self.field(0)

    def final_field(self) -> SphereField:
        return self.field(self.n_checkpoints - 1)

    def reversed(self) -> "FlowTrace":
        """Time-reversed copy (for negative controls)."""
        t1 = self.times[-1]
        times = [t1 - t for t in reversed(self.times)]
        snaps = [s.copy() for s in reversed(self.snapshots)]
        return FlowTrace(self.grid, self.config, times, snaps, StepLog(),
                         status=self.status, failure=self.failure)


def synthetic_trace(grid: DomainGrid, times, snapshots) -> FlowTrace:
    """Trace assembled from given fields (stationary data, tests, controls)."""
    times = [float(t) for t in times]
    if len(times) != len(snapshots) or not times:
        raise ValueError("times and snapshots must be equal-length, nonempty")
    if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    snaps = [np.asarray(s, dtype=np.float64) for s in snapshots]
    return FlowTrace(grid, None, times, snaps, StepLog())


def _log_state(
    log: StepLog, grid: DomainGrid, u: SphereField, mu: float, ut_sq: float
) -> None:
    gn = gradient_norm_sq_values(grid, u.values)
    dirichlet = 0.5 * integrate(grid, gn)
    if mu > 0.0:
        norms2 = np.sum(u.values**2, axis=1)
        penalty = 0.25 * mu * integrate(grid, (norms2 - 1.0) ** 2)
    else:
        penalty = 0.0
    log.append(
        t=u.t,
        dirichlet=dirichlet,
        penalty=penalty,
        sup_norm=u.sup_norm(),
        ut_sq=ut_sq,
        min_last=u.min_last(),
    )


def run_flow(u0: SphereField, cfg: FlowConfig) -> FlowTrace:
    """March u0 to t_end, logging every step and checkpointing at the stride.

    Step errors are caught: the trace up to the failure is returned with
    status "failed" and the refusal message preserved.
    """
    grid = u0.grid
    log = StepLog()
    trace = FlowTrace(grid, cfg, [u0.t], [u0.values.copy()], log)
    try:
        cfg.check_cfl(grid)
        n_full = int(math.floor(cfg.t_end / cfg.dt + 1e-9))
        rem = cfg.t_end - n_full * cfg.dt
        if rem < 1e-9 * cfg.dt:
            rem = 0.0
        _log_state(log, grid, u0, cfg.mu, ut_sq=0.0)
        u = u0
        total = n_full + (1 if rem > 0.0 else 0)
        for k in range(1, total + 1):
            dt_k = cfg.dt if k <= n_full else rem
            u_next = step(u, cfg, dt_k)
            # exact horizon bookkeeping: k*dt avoids accumulated roundoff
            t_k = k * cfg.dt if k <= n_full else cfg.t_end
            u_next.t = t_k
            diff = u_next.values - u.values
            ut2 = integrate(grid, np.sum(diff**2, axis=1)) / dt_k**2
            _log_state(log, grid, u_next, cfg.mu, ut_sq=ut2)
            if k % cfg.checkpoint_stride == 0 or k == total:
                trace.times.append(t_k)
                trace.snapshots.append(u_next.values.copy())
            u = u_next
    except FlowError as err:
        trace.status = "failed"
        trace.failure = str(err)
        trace.error = err
    return trace


def _bump(s2: np.ndarray) -> np.ndarray:
    """exp(1 - 1/(1-s^2)) on s^2 < 1, 0 outside; C-infinity with compact support."""
    out = np.zeros_like(s2)
    inside = s2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
    return out


def weak_residual(trace: FlowTrace, test_count: int = 8) -> float:
    """Max over a bump-test family of the weak-form residual.

    For each smooth compactly supported phi = psi(t) eta(x) e_j, evaluates
    |int (<du/dt, phi> + <grad u, grad phi> - <u, phi>|grad u|^2) dz| with
    checkpoint-midpoint time quadrature. The family cycles deterministic
    centers/radii inside the domain and all target components.
    """
    if test_count < 1:
        raise ValueError("test_count must be >= 1")
    if trace.n_checkpoints < 2:
        raise ValueError("weak residual needs at least two checkpoints")
    grid = trace.grid
    d = grid.dim
    n_comp = trace.snapshots[0].shape[1]
    t0, t1 = trace.times[0], trace.times[-1]
    rng = np.random.default_rng(20240901)
    extent = 1.0 if grid.spec.shape == "ball" else grid.spec.half_width
    centers = rng.uniform(-0.3, 0.3, size=(test_count, d)) * extent
    comps = [k % n_comp for k in range(test_count)]

    tests = []
    for k in range(test_count):
        c = centers[k]
        if grid.spec.shape == "ball":
            room = 1.0 - float(np.linalg.norm(c))
        else:
            room = grid.spec.half_width - float(np.max(np.abs(c)))
        rho = 0.9 * room
        diff = grid.coords - c
        s2 = np.sum(diff**2, axis=1) / rho**2
        eta = _bump(s2)
        # grad eta = eta * (-2/(1-s^2)^2) * (x-c)/rho^2 on the support
        fac = np.zeros(grid.n_nodes)
        inside = s2 < 1.0
        fac[inside] = -2.0 / (1.0 - s2[inside]) ** 2 / rho**2
        grad_eta = eta[:, None] * fac[:, None] * diff
        tests.append((eta, grad_eta, comps[k]))

    tc = 0.5 * (t0 + t1)
    tw = 0.45 * (t1 - t0)
    residuals = np.zeros(test_count)
    for k in range(trace.n_checkpoints - 1):
        ta, tb = trace.times[k], trace.times[k + 1]
        dt_k = tb - ta
        tm = 0.5 * (ta + tb)
        psi = float(_bump(np.array([((tm - tc) / tw) ** 2]))[0])
        if psi == 0.0:
            continue
        va, vb = trace.snapshots[k], trace.snapshots[k + 1]
        um = 0.5 * (va + vb)
        du = (vb - va) / dt_k
        grad = gradient_values(grid, um)
        gn = np.sum(grad**2, axis=(1, 2))
        for j, (eta, grad_eta, comp) in enumerate(tests):
            inner = du[:, comp] * eta
            inner += np.sum(grad[:, :, comp] * grad_eta, axis=1)
            inner -= um[:, comp] * eta * gn
            residuals[j] += dt_k * psi * integrate(grid, inner)
    return float(np.max(np.abs(residuals)))


@dataclass
class EnergyCheckReport:
    """Dissipation audit of E(t2) + int_{t1}^{t2} int |du/dt|^2 <= E(t1) + tol."""

    pairs_checked: int
    max_drift: float
    base_tol: float
    scale: float  # (dt + h^2) * horizon
    fitted_c: float

    def holds_with(self, c: float) -> bool:
        return self.max_drift <= self.base_tol + c * self.scale


def global_energy_check(trace: FlowTrace) -> EnergyCheckReport:
    """Check the energy inequality across every logged pair t1 < t2.

    Uses B_k = E_k + cumulative dissipation; the inequality over all pairs is
    equivalent to B being non-increasing up to tolerance, so the worst drift
    max_k (B_k - min_{j<k} B_j) is the reported violation. The closing
    constant C in tol = 1e-6 E(0) + C (dt+h^2) T is fitted and reported, not
    assumed.
    """
    log = trace.log
    if len(log) < 2:
        raise ValueError("energy check needs a logged run (>= 2 entries)")
    t = np.asarray(log.t)
    energy = np.asarray(log.dirichlet) + np.asarray(log.penalty)
    ut2 = np.asarray(log.ut_sq)
    dts = np.diff(t)
    dissipation = np.concatenate([[0.0], np.cumsum(dts * ut2[1:])])
    b = energy + dissipation
    running_min = np.minimum.accumulate(b)
    drift = b[1:] - running_min[:-1]
    max_drift = float(np.max(drift))
    base = 1e-6 * float(energy[0])
    horizon = float(t[-1] - t[0])
    cfg = trace.config
    h = trace.grid.h
    dt_scale = float(np.max(dts)) if cfg is None else cfg.dt
    scale = (dt_scale + h**2) * horizon
    fitted = max(0.0, max_drift - base) / scale if scale > 0 else 0.0
    n = len(t)
    return EnergyCheckReport(
        pairs_checked=n * (n - 1) // 2,
        max_drift=max_drift,
        base_tol=base,
        scale=scale,
        fitted_c=fitted,
    )
