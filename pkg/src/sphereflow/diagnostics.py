"""Energy densities, kernel-weighted monotonicity, and regularity probes.

Every inequality the package audits is evaluated with both sides computed
from a trace; unspecified constants are never assumed, they are fitted as
the smallest value closing the inequality and reported for regression
against resolution and anchor changes.

Space-time integrals are left-Riemann sums over the trace's checkpoint
slabs [t_k, t_{k+1}) clipped to the requested window, with the slab k
integrand evaluated on snapshot k; time derivatives use the forward
checkpoint difference on the same slab. Parabolic cylinders P_R(z0) =
(t0 - R^2, t0 + R^2) x B_R(x0) are intersected with the trace span and
the domain exactly.

Report objects expose `records()` yielding NDJSON-ready dicts with the
fixed keys {"kind", "z0", "R", "lhs", "rhs", "defect", "fitted_C"}; fields
that do not apply to a record kind are null.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.signal import fftconvolve

from sphereflow.flow import FlowTrace
from sphereflow.grid import (
    DomainGrid,
    SphereField,
    ball_mask,
    gradient_norm_sq_values,
    gradient_values,
    integrate,
    laplacian_values,
)

REPORT_KEYS = ("kind", "z0", "R", "lhs", "rhs", "defect", "fitted_C")


# ---------------------------------------------------------------------------
# densities


@dataclass
class EnergyDensityField:
    """Node-wise energy density e = |grad u|^2 / 2 + mu (|u|^2 - 1)^2 / 4.

    `mu` is lam^(1-kappa); the penalty term is dropped entirely when lam is
    None (projected fields carry no relaxation energy). Non-negative on
    active nodes, zero on exterior rows.
    """

    grid: DomainGrid
    values: np.ndarray
    t: float
    lam: float | None
    kappa: float

    def total(self, mask: np.ndarray | None = None) -> float:
        return integrate(self.grid, self.values, mask)


def energy_density(
    u: SphereField, lam: float | None = None, kappa: float = 0.5
) -> EnergyDensityField:
    """Evaluate the energy density of a field; lam None means unpenalized."""
    if lam is not None and lam < 1.0:
        raise ValueError(f"penalty weight lam must be >= 1, got {lam}")
    vals = 0.5 * gradient_norm_sq_values(u.grid, u.values)
    if lam is not None:
        mu = lam ** (1.0 - kappa)
        norm2 = np.sum(u.values**2, axis=1)
        pen = 0.25 * mu * (norm2 - 1.0) ** 2
        pen[u.grid.exterior] = 0.0
        vals = vals + pen
    return EnergyDensityField(u.grid, vals, t=u.t, lam=lam, kappa=kappa)


def _slab_weights(times, lo: float, hi: float) -> np.ndarray:
    """Overlap length of each checkpoint slab [t_k, t_{k+1}) with (lo, hi)."""
    t = np.asarray(times)
    a = np.maximum(t[:-1], lo)
    b = np.minimum(t[1:], hi)
    return np.maximum(0.0, b - a)


def penalty_integral(trace: FlowTrace, lam: float, kappa: float = 0.5) -> float:
    """Space-time integral of the penalty density mu (|u|^2 - 1)^2 over the run."""
    if lam < 1.0:
        raise ValueError(f"penalty weight lam must be >= 1, got {lam}")
    if trace.config is not None and trace.config.scheme != "glhf":
        raise ValueError("penalty integral applies to penalized (glhf) traces")
    mu = lam ** (1.0 - kappa)
    grid = trace.grid
    if trace.n_checkpoints < 2:
        raise ValueError("penalty integral needs at least two checkpoints")
    total = 0.0
    for k in range(trace.n_checkpoints - 1):
        dt = trace.times[k + 1] - trace.times[k]
        norm2 = np.sum(trace.snapshots[k] ** 2, axis=1)
        total += dt * integrate(grid, mu * (norm2 - 1.0) ** 2)
    return float(total)


# ---------------------------------------------------------------------------
# backward kernel


@dataclass(frozen=True)
class BackwardKernel:
    """Backward heat kernel anchored at z0 = (t0, x0), defined for t < t0.

    G(t, x) = (4 pi (t0 - t))^(-d/2) exp(-|x - x0|^2 / (4 (t0 - t))); its
    spatial integral over R^d is 1 for every t < t0.
    """

    t0: float
    x0: tuple

    def values(self, grid: DomainGrid, t: float) -> np.ndarray:
        if t >= self.t0:
            raise ValueError(
                f"backward kernel needs t < t0 = {self.t0}, got t = {t}"
            )
        x0 = np.asarray(self.x0, dtype=np.float64)
        if x0.shape != (grid.dim,):
            raise ValueError(f"x0 must have {grid.dim} components, got {x0.shape}")
        s = self.t0 - t
        d2 = np.sum((grid.coords - x0) ** 2, axis=1)
        return (4.0 * np.pi * s) ** (-grid.dim / 2.0) * np.exp(-d2 / (4.0 * s))

    def spatial_integral(
        self, grid: DomainGrid, node_values: np.ndarray, t: float
    ) -> float:
        """Quadrature of node_values * G(t, .) over the domain."""
        return integrate(grid, np.asarray(node_values) * self.values(grid, t))


def kernel_weighted_energy(
    u: SphereField,
    kernel: BackwardKernel,
    t: float | None = None,
    lam: float | None = None,
    kappa: float = 0.5,
) -> float:
    """Slice integral of the energy density against the backward kernel.

    The raw value scales like the parabolic power of t0 - t (for the
    equator map it is exactly 1/(2(t0-t)) in the continuum); the
    scale-normalized combination (t0-t) * value is the quantity that stays
    put as the anchor approaches.
    """
    when = u.t if t is None else t
    e = energy_density(u, lam=lam, kappa=kappa)
    return kernel.spatial_integral(u.grid, e.values, when)


# ---------------------------------------------------------------------------
# monotonicity


@dataclass
class MonotonicityReport:
    """Both sides of the kernel-weighted monotonicity inequality.

    `weighted[i]` is the slab (t0 - 4 R_i^2, t0 - R_i^2) integral of the
    weight (|grad u|^2 under the boundary convention, the full density
    under the interior convention) against G_z0; `defects[i]` is the same
    slab's penalization-direction integral at radius R_i. For each ladder
    pair i < k the fitted constant is the smallest C with

        weighted[i] + factor * int_{R_i}^{R_k} defect dR
            <= C * (main_k + modulus_ik)

    where main_k is weighted[k] (times exp(R_k^mu0 - R_i^mu0) under the
    interior convention) and modulus_ik is R_k^eps0 - R_i^eps0 (boundary)
    or R_k - R_i (interior). `fitted_C` is the worst pair; a run whose
    small-radius energy exceeds what the large-radius side controls is
    flagged through `nonmonotone` (fitted_C above `flag_threshold`).
    """

    convention: str
    z0: tuple
    radii: list[float]
    weighted: list[float]
    defects: list[float]
    defect_integral: float
    lhs_vs_max: list[float]
    rhs_vs_max: list[float]
    eps0: float | None
    mu0: float | None
    fitted_C: float
    pair_constants: list[tuple[float, float, float]]
    flag_threshold: float = 1.0
    slab_label: str = "(t0-4R^2, t0-R^2)"

    @property
    def nonmonotone(self) -> bool:
        """True when no O(1) constant closes the inequality.

        fitted_C > 1 means some small-radius energy (defects included)
        outright exceeds the large-radius side plus the modulus, the
        signature of energy flowing against the parabolic scales; forward
        dissipative runs sit well below 1 at desk scale.
        """
        return self.fitted_C > self.flag_threshold

    def records(self):
        """One record per ladder radius, compared against the top radius."""
        for i in range(len(self.radii) - 1):
            c = self.pair_constants_map[(self.radii[i], self.radii[-1])]
            yield {
                "kind": f"monotonicity-{self.convention}",
                "z0": list(self.z0),
                "R": self.radii[i],
                "lhs": self.lhs_vs_max[i],
                "rhs": self.rhs_vs_max[i],
                "defect": self.defects[i],
                "fitted_C": c,
            }

    @property
    def pair_constants_map(self) -> dict:
        return {(r1, r2): c for r1, r2, c in self.pair_constants}


def _parse_z0(z0, dim: int) -> tuple[float, np.ndarray]:
    z = np.asarray(z0, dtype=np.float64)
    if z.shape != (dim + 1,):
        raise ValueError(f"z0 must be (t0, x0...) with {dim + 1} entries, got {z.shape}")
    return float(z[0]), z[1:]


def _slab_kernel_integral(
    trace: FlowTrace,
    kernel: BackwardKernel,
    r: float,
    weight_fn,
    defect_fn=None,
) -> tuple[float, float]:
    """Integrate weight * G (and optionally the defect * G) over the slab.

    Slab (t0 - 4 r^2, t0 - r^2) clipped to the trace span; G and the
    defect kernel are evaluated at each slab piece's midpoint time.
    """
    t0 = kernel.t0
    lo, hi = t0 - 4.0 * r**2, t0 - r**2
    w = _slab_weights(trace.times, lo, hi)
    total = 0.0
    defect = 0.0
    grid = trace.grid
    for k in np.flatnonzero(w > 0.0):
        a = max(trace.times[k], lo)
        b = min(trace.times[k + 1], hi)
        tm = 0.5 * (a + b)
        g = kernel.values(grid, tm)
        total += w[k] * integrate(grid, weight_fn(k) * g)
        if defect_fn is not None:
            defect += w[k] * integrate(grid, defect_fn(k, tm) * g)
    return float(total), float(defect)


def monotonicity_check(
    trace: FlowTrace,
    z0,
    radii,
    eps0: float | None = None,
    mu0: float | None = None,
    lam: float | None = None,
    kappa: float = 0.5,
    flag_threshold: float = 1.0,
) -> MonotonicityReport:
    """Audit the monotonicity inequality on a radius ladder at one anchor.

    Exactly one of eps0 (boundary convention: gradient-energy weight,
    defect direction (x-x0)/(2 sqrt(t0-t)), defect factor 2, additive
    modulus R2^eps0 - R1^eps0) and mu0 (interior convention: full density
    weight, defect direction (x-x0)/(2(t-t0)), factor 1, multiplicative
    exp(R2^mu0 - R1^mu0) and additive R2 - R1) must be given. Every radius
    must satisfy R < sqrt(t0)/2, which keeps all slabs inside (0, t0).
    """
    if (eps0 is None) == (mu0 is None):
        raise ValueError("give exactly one of eps0 (boundary) or mu0 (interior)")
    convention = "boundary" if eps0 is not None else "interior"
    if eps0 is not None and not 0.0 < eps0 < 0.5:
        raise ValueError(f"eps0 must lie in (0, 1/2), got {eps0}")
    if mu0 is not None and mu0 <= 0.0:
        raise ValueError(f"mu0 must be positive, got {mu0}")
    t0, x0 = _parse_z0(z0, trace.grid.dim)
    rs = sorted(float(r) for r in radii)
    if len(rs) < 2:
        raise ValueError("radius ladder needs at least two radii")
    bound = math.sqrt(t0) / 2.0
    bound_name = "sqrt(t0/4)" if convention == "boundary" else "sqrt(t0)/2"
    if rs[-1] >= bound:
        raise ValueError(
            f"inadmissible radius {rs[-1]}: the {convention} ladder must "
            f"satisfy R < {bound_name} = {bound} so slabs stay inside the flow"
        )
    if trace.n_checkpoints < 2:
        raise ValueError("monotonicity check needs at least two checkpoints")

    grid = trace.grid
    if lam is None and trace.config is not None and trace.config.scheme == "glhf":
        lam = trace.config.lam
        kappa = trace.config.kappa
    kernel = BackwardKernel(t0=t0, x0=tuple(x0))

    gn_cache: dict[int, np.ndarray] = {}

    def gn(k: int) -> np.ndarray:
        if k not in gn_cache:
            gn_cache[k] = gradient_norm_sq_values(grid, trace.snapshots[k])
        return gn_cache[k]

    def weight(k: int) -> np.ndarray:
        if convention == "boundary":
            return gn(k)
        u = SphereField(grid, trace.snapshots[k], t=trace.times[k])
        return energy_density(u, lam=lam, kappa=kappa).values

    def defect(k: int, tm: float):
        dt_k = trace.times[k + 1] - trace.times[k]
        du = (trace.snapshots[k + 1] - trace.snapshots[k]) / dt_k
        grad = gradient_values(grid, trace.snapshots[k])
        diff = grid.coords - x0
        if convention == "boundary":
            coef = diff / (2.0 * math.sqrt(t0 - tm))
        else:
            coef = diff / (2.0 * (tm - t0))
        drift = np.einsum("nd,ndm->nm", coef, grad)
        return np.sum((du - drift) ** 2, axis=1)

    weighted, defects = [], []
    for r in rs:
        wtot, dtot = _slab_kernel_integral(trace, kernel, r, weight, defect)
        weighted.append(wtot)
        defects.append(dtot)

    # defect term integrated over the radius range by ladder trapezoid
    factor = 2.0 if convention == "boundary" else 1.0

    def defect_between(i: int, k: int) -> float:
        total = 0.0
        for j in range(i, k):
            total += 0.5 * (defects[j] + defects[j + 1]) * (rs[j + 1] - rs[j])
        return total

    pairs = []
    worst = 0.0
    lhs_vs_max = []
    rhs_vs_max = []
    for i in range(len(rs)):
        for k in range(i + 1, len(rs)):
            lhs = weighted[i] + factor * defect_between(i, k)
            if convention == "boundary":
                main = weighted[k]
                modulus = rs[k] ** eps0 - rs[i] ** eps0
            else:
                main = weighted[k] * math.exp(rs[k] ** mu0 - rs[i] ** mu0)
                modulus = rs[k] - rs[i]
            denom = main + modulus
            c = lhs / denom if denom > 0.0 else math.inf
            pairs.append((rs[i], rs[k], float(c)))
            worst = max(worst, c)
            if k == len(rs) - 1:
                lhs_vs_max.append(float(lhs))
                rhs_vs_max.append(float(denom))

    return MonotonicityReport(
        convention=convention,
        z0=(t0, *x0.tolist()),
        radii=rs,
        weighted=weighted,
        defects=defects,
        defect_integral=factor * defect_between(0, len(rs) - 1),
        lhs_vs_max=lhs_vs_max,
        rhs_vs_max=rhs_vs_max,
        eps0=eps0,
        mu0=mu0,
        fitted_C=float(worst),
        pair_constants=pairs,
        flag_threshold=flag_threshold,
    )


# ---------------------------------------------------------------------------
# scaled density and singular candidates


def _window_weights(trace: FlowTrace, t0: float, r: float) -> np.ndarray:
    w = _slab_weights(trace.times, t0 - r**2, t0 + r**2)
    if float(np.sum(w)) <= 0.0:
        raise ValueError(
            f"cylinder P_{r}(t0={t0}) does not overlap the trace span "
            f"[{trace.times[0]}, {trace.times[-1]}]"
        )
    return w


def scaled_energy_density(trace: FlowTrace, z0, r: float) -> float:
    """Gradient-energy density of the cylinder P_r(z0), scaled by 1/(2 r^d)."""
    if r <= 0.0:
        raise ValueError(f"radius must be positive, got {r}")
    t0, x0 = _parse_z0(z0, trace.grid.dim)
    grid = trace.grid
    w = _window_weights(trace, t0, r)
    mask = ball_mask(grid, x0, r)
    total = 0.0
    for k in np.flatnonzero(w > 0.0):
        gn = gradient_norm_sq_values(grid, trace.snapshots[k])
        total += w[k] * integrate(grid, gn, mask)
    return float(total / (2.0 * r**grid.dim))


@dataclass
class SingularCandidateSet:
    """Space-time grid points whose scaled density clears eps0 at every radius.

    `flags[k, j]` marks node j at checkpoint time k; the flagged fraction
    counts active nodes only. Raising eps0 can only shrink the set.
    """

    eps0: float
    radii: list[float]
    times: list[float]
    flags: np.ndarray
    grid: DomainGrid

    @property
    def fraction(self) -> float:
        active = int(np.sum(self.grid.active))
        return float(np.sum(self.flags[:, self.grid.active])) / (
            active * len(self.times)
        )

    def points(self) -> list[tuple[float, int]]:
        """(time, node index) pairs, checkpoint-major order."""
        out = []
        for k, t in enumerate(self.times):
            for j in np.flatnonzero(self.flags[k]):
                out.append((t, int(j)))
        return out

    def is_empty(self) -> bool:
        return not bool(np.any(self.flags))


def _ball_sums(grid: DomainGrid, node_values: np.ndarray, r: float) -> np.ndarray:
    """For every node x, the quadrature sum of node_values over B_r(x).

    FFT convolution with the lattice ball indicator; values must already
    carry their quadrature weights (zero off active nodes).
    """
    m = int(math.floor(r / grid.h + 1e-12))
    if m == 0:
        return node_values.copy()
    if m >= (grid.n - 1) * math.sqrt(grid.dim):
        # ball covers the whole cube from every node
        return np.full(grid.n_nodes, np.sum(node_values))
    axes = [np.arange(-m, m + 1)] * grid.dim
    mesh = np.meshgrid(*axes, indexing="ij")
    dist2 = sum(a.astype(np.float64) ** 2 for a in mesh) * grid.h**2
    ball = (dist2 <= r**2 + 1e-12).astype(np.float64)
    cube = node_values.reshape(grid.cube_shape)
    out = fftconvolve(cube, ball, mode="same")
    return out.reshape(-1)


def singular_set(trace: FlowTrace, eps0: float, radii) -> SingularCandidateSet:
    """Flag nodes whose scaled density is >= eps0 at every probed radius.

    Densities at all anchors are computed in one pass per (checkpoint,
    radius) by convolving the weighted gradient energy with the lattice
    ball, so scans over the whole grid stay tractable.
    """
    if eps0 <= 0.0:
        raise ValueError(f"eps0 must be positive, got {eps0}")
    rs = sorted(float(r) for r in radii)
    if not rs:
        raise ValueError("radius list is empty")
    grid = trace.grid
    if trace.n_checkpoints < 2:
        raise ValueError("singular scan needs at least two checkpoints")
    qw = grid.quadrature_weights()
    weighted = [
        gradient_norm_sq_values(grid, snap) * qw for snap in trace.snapshots
    ]
    times = np.asarray(trace.times)
    flags = np.ones((trace.n_checkpoints, grid.n_nodes), dtype=bool)
    for r in rs:
        sums = [_ball_sums(grid, wv, r) for wv in weighted[:-1]]
        scale = 1.0 / (2.0 * r**grid.dim)
        for k in range(trace.n_checkpoints):
            w = _slab_weights(times, times[k] - r**2, times[k] + r**2)
            dens = np.zeros(grid.n_nodes)
            for j in np.flatnonzero(w > 0.0):
                dens += w[j] * sums[j]
            flags[k] &= dens * scale >= eps0
    flags[:, ~grid.active] = False
    return SingularCandidateSet(
        eps0=eps0, radii=rs, times=list(trace.times), flags=flags, grid=grid
    )


# ---------------------------------------------------------------------------
# reverse Poincare and hybrid


@dataclass
class ReversePoincareReport:
    """lhs <= C * (oscillation/R^2 + initial-gradient) with the fitted C."""

    z0: tuple
    R: float
    lhs: float
    oscillation_term: float
    boundary_term: float
    fitted_C: float
    a_choice: str

    @property
    def rhs(self) -> float:
        return self.oscillation_term + self.boundary_term

    def records(self):
        yield {
            "kind": "reverse-poincare",
            "z0": list(self.z0),
            "R": self.R,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "defect": None,
            "fitted_C": self.fitted_C,
        }


def reverse_poincare_check(
    trace: FlowTrace, z0, r: float, a=None
) -> ReversePoincareReport:
    """Evaluate the local-gradient-vs-oscillation inequality at one anchor.

    lhs integrates |grad u|^2 over P_r(z0) cap Q; the right side is
    (1/r^2) * int_{P_2r cap Q} |u - a(t)|^2 plus the initial-data gradient
    energy over the same doubled cylinder. The default a(t) is the spatial
    mean of u over B_2r at each slab; a fixed vector or a per-checkpoint
    (n_checkpoints, D) series overrides it.
    """
    if r <= 0.0:
        raise ValueError(f"radius must be positive, got {r}")
    t0, x0 = _parse_z0(z0, trace.grid.dim)
    grid = trace.grid
    w_in = _window_weights(trace, t0, r)
    w_out = _window_weights(trace, t0, 2.0 * r)
    mask_in = ball_mask(grid, x0, r)
    mask_out = ball_mask(grid, x0, 2.0 * r)
    qw = grid.quadrature_weights()
    sel = grid.active & mask_out
    measure = float(np.sum(qw[sel]))
    if a is not None:
        a = np.asarray(a, dtype=np.float64)
        if a.ndim not in (1, 2) or (
            a.ndim == 2 and a.shape[0] != trace.n_checkpoints
        ):
            raise ValueError(
                "a must be a single vector or one vector per checkpoint"
            )

    lhs = 0.0
    for k in np.flatnonzero(w_in > 0.0):
        gn = gradient_norm_sq_values(grid, trace.snapshots[k])
        lhs += w_in[k] * integrate(grid, gn, mask_in)

    osc = 0.0
    for k in np.flatnonzero(w_out > 0.0):
        snap = trace.snapshots[k]
        if a is None:
            mean = np.sum(snap[sel] * qw[sel, None], axis=0) / measure
        elif a.ndim == 2:
            mean = a[k]
        else:
            mean = a
        diff2 = np.sum((snap - mean) ** 2, axis=1)
        osc += w_out[k] * integrate(grid, diff2, mask_out)
    osc /= r**2

    gn0 = gradient_norm_sq_values(grid, trace.snapshots[0])
    span = float(np.sum(w_out))
    boundary_term = span * integrate(grid, gn0, mask_out)

    denom = osc + boundary_term
    fitted = lhs / denom if denom > 0.0 else 0.0
    return ReversePoincareReport(
        z0=(t0, *x0.tolist()),
        R=r,
        lhs=float(lhs),
        oscillation_term=float(osc),
        boundary_term=float(boundary_term),
        fitted_C=float(fitted),
        a_choice="spatial-mean" if a is None else "fixed-vector",
    )


@dataclass
class HybridReport:
    """Four-term comparison of local energy against the harmonic extension.

    lhs <= eps0 * spread_term + C(eps0) * l2_term + extension_term + o(1);
    the o(1) slot is gauged by the penalty share of the doubled cylinder,
    and `pre_asymptotic` marks runs where that share still dominates the
    gradient energy (the fitted constant is then not meaningful).
    """

    z0: tuple
    R: float
    eps0: float
    lhs: float
    spread_term: float
    l2_term: float
    extension_term: float
    penalty_share: float
    fitted_C: float
    pre_asymptotic: bool

    def records(self):
        yield {
            "kind": "hybrid",
            "z0": list(self.z0),
            "R": self.R,
            "lhs": self.lhs,
            "rhs": self.eps0 * self.spread_term
            + self.l2_term
            + self.extension_term,
            "defect": self.penalty_share,
            "fitted_C": self.fitted_C,
        }


def hybrid_check(
    trace: FlowTrace,
    z0,
    r: float,
    eps0: float,
    h0: SphereField,
    lam: float | None = None,
    kappa: float = 0.5,
) -> HybridReport:
    """Audit the boundary-anchored hybrid inequality.

    The anchor's spatial point must lie within one grid spacing of the
    boundary (the inequality compares against the harmonic extension of
    the boundary trace, so it probes boundary neighborhoods); h0 comes
    from harmonic_extension of the initial field.
    """
    if r <= 0.0:
        raise ValueError(f"radius must be positive, got {r}")
    if eps0 <= 0.0:
        raise ValueError(f"eps0 must be positive, got {eps0}")
    t0, x0 = _parse_z0(z0, trace.grid.dim)
    grid = trace.grid
    if h0.grid is not grid and h0.grid.spec != grid.spec:
        raise ValueError("h0 lives on a different grid")
    spec = grid.spec
    if spec.shape == "ball":
        dist = abs(1.0 - float(np.linalg.norm(x0)))
    else:
        dist = float(np.min(spec.half_width - np.abs(x0)))
    if dist > grid.h:
        raise ValueError(
            f"anchor x0 = {x0.tolist()} is {dist:.4g} from the boundary; "
            f"the hybrid check needs dist <= h = {grid.h:.4g}"
        )
    if lam is None and trace.config is not None and trace.config.scheme == "glhf":
        lam = trace.config.lam
        kappa = trace.config.kappa

    w_in = _window_weights(trace, t0, r)
    w_out = _window_weights(trace, t0, 2.0 * r)
    mask_in = ball_mask(grid, x0, r)
    mask_out = ball_mask(grid, x0, 2.0 * r)

    def density(k):
        u = SphereField(grid, trace.snapshots[k], t=trace.times[k])
        return energy_density(u, lam=lam, kappa=kappa).values

    lhs = 0.0
    for k in np.flatnonzero(w_in > 0.0):
        lhs += w_in[k] * integrate(grid, density(k), mask_in)

    spread = 0.0
    l2 = 0.0
    penalty = 0.0
    dirichlet = 0.0
    mu = 0.0 if lam is None else lam ** (1.0 - kappa)
    for k in np.flatnonzero(w_out > 0.0):
        snap = trace.snapshots[k]
        e = density(k)
        spread += w_out[k] * integrate(grid, e, mask_out)
        diff2 = np.sum((snap - h0.values) ** 2, axis=1)
        l2 += w_out[k] * integrate(grid, diff2, mask_out)
        gn = gradient_norm_sq_values(grid, snap)
        dirichlet += w_out[k] * integrate(grid, 0.5 * gn, mask_out)
        if mu > 0.0:
            norm2 = np.sum(snap**2, axis=1)
            pen = 0.25 * mu * (norm2 - 1.0) ** 2
            pen[grid.exterior] = 0.0
            penalty += w_out[k] * integrate(grid, pen, mask_out)
    l2 /= r**2

    gh = gradient_norm_sq_values(grid, h0.values)
    ext = float(np.sum(w_out)) * integrate(grid, gh, mask_out)

    slack = lhs - eps0 * spread - ext
    fitted = max(0.0, slack) / l2 if l2 > 0.0 else 0.0
    share = penalty / dirichlet if dirichlet > 0.0 else 0.0
    return HybridReport(
        z0=(t0, *x0.tolist()),
        R=r,
        eps0=eps0,
        lhs=float(lhs),
        spread_term=float(spread),
        l2_term=float(l2),
        extension_term=float(ext),
        penalty_share=float(share),
        fitted_C=float(fitted),
        pre_asymptotic=bool(share > 1.0),
    )


# ---------------------------------------------------------------------------
# Hoelder modulus and epsilon-regularity


@dataclass
class HolderReport:
    """Worst half-power time modulus over sampled node pairs."""

    modulus: float
    pairs_sampled: int
    region_nodes: int
    intersects_singular: bool

    def records(self):
        yield {
            "kind": "holder-time",
            "z0": None,
            "R": None,
            "lhs": self.modulus,
            "rhs": None,
            "defect": None,
            "fitted_C": None,
        }


def holder_time_modulus(
    trace: FlowTrace,
    region: np.ndarray,
    r0: float,
    singular: SingularCandidateSet | None = None,
) -> HolderReport:
    """sup over checkpoint pairs and region nodes of |u(t)-u(s)|/|t-s|^(1/2).

    In regular zones the modulus stays bounded by C/r0; pass a singular
    candidate set to have overlaps with the region flagged on the report
    (the bound is not expected there).
    """
    if r0 <= 0.0:
        raise ValueError(f"r0 must be positive, got {r0}")
    region = np.asarray(region, dtype=bool)
    if region.shape != (trace.grid.n_nodes,):
        raise ValueError("region must be a node mask")
    sel = region & trace.grid.active
    if not np.any(sel):
        raise ValueError("region contains no active nodes")
    if trace.n_checkpoints < 2:
        raise ValueError("time modulus needs at least two checkpoint slices")
    worst = 0.0
    pairs = 0
    for i in range(trace.n_checkpoints - 1):
        for j in range(i + 1, trace.n_checkpoints):
            dt = trace.times[j] - trace.times[i]
            diff = trace.snapshots[j][sel] - trace.snapshots[i][sel]
            jump = float(np.max(np.sqrt(np.sum(diff**2, axis=1))))
            worst = max(worst, jump / math.sqrt(dt))
            pairs += 1
    touches = False
    if singular is not None:
        touches = bool(np.any(singular.flags[:, sel]))
    return HolderReport(
        modulus=float(worst),
        pairs_sampled=pairs,
        region_nodes=int(np.sum(sel)),
        intersects_singular=touches,
    )


def g_probe(t: float, dim: int) -> float:
    """Probe-scale function g(t) = t (1 + log(1/t))^(d+1), increasing, g(0)=0."""
    if t <= 0.0:
        return 0.0
    return t * (1.0 + max(0.0, math.log(1.0 / t))) ** (dim + 1)


def c2_boundary_estimate(u0: SphereField) -> float:
    """Discrete stand-in for the second-order boundary norm of the data.

    Sups of |u0|, |grad u0|, and the Laplacian over the collar of nodes
    within 2h of the boundary; enters the regularity envelope only as an
    additive offset, so any consistent proxy works for stability
    regression.
    """
    grid = u0.grid
    spec = grid.spec
    if spec.shape == "ball":
        dist = np.abs(1.0 - np.linalg.norm(grid.coords, axis=1))
    else:
        dist = np.min(spec.half_width - np.abs(grid.coords), axis=1)
    collar = (dist <= 2.0 * grid.h) & grid.active
    sup_u = float(np.max(np.sqrt(np.sum(u0.values[collar] ** 2, axis=1))))
    gn = gradient_norm_sq_values(grid, u0.values)
    sup_g = float(np.sqrt(np.max(gn[collar])))
    lap = laplacian_values(grid, u0.values)
    inner = collar & grid.interior
    sup_l = 0.0
    if np.any(inner):
        sup_l = float(np.max(np.sqrt(np.sum(lap[inner] ** 2, axis=1))))
    return sup_u + sup_g + sup_l


@dataclass
class EpsilonRegularityReport:
    """Envelope audit: small g(R0)-cylinder density implies bounded density sup.

    Anchors are all (checkpoint, active node) pairs; those with scaled
    probe density below eps0 contribute sup e over P_R0 to the envelope
    fit sup_e <= C (1/R0^2 + c2_estimate). `fitted_C` is the largest ratio
    observed; `excluded` counts anchors failing the small-density gate.
    """

    eps0: float
    R0: float
    g_R0: float
    c2_estimate: float
    admitted: int
    excluded: int
    max_sup_density: float
    fitted_C: float

    def records(self):
        yield {
            "kind": "epsilon-regularity",
            "z0": None,
            "R": self.R0,
            "lhs": self.max_sup_density,
            "rhs": 1.0 / self.R0**2 + self.c2_estimate,
            "defect": None,
            "fitted_C": self.fitted_C,
        }


def epsilon_regularity_report(
    trace: FlowTrace,
    eps0: float,
    r0: float,
    lam: float | None = None,
    kappa: float = 0.5,
) -> EpsilonRegularityReport:
    """Fit the regularity envelope over every small-density anchor.

    The probe density at anchor (t_k, x) is (1/r0^d) times the energy of
    the cylinder of radius g(r0) around it; anchors below eps0 are
    admitted and their density sup over P_r0 is compared against
    C (1/r0^2 + c2). Computed gridwide via ball convolutions and a lattice
    maximum filter.
    """
    if eps0 <= 0.0:
        raise ValueError(f"eps0 must be positive, got {eps0}")
    if r0 <= 0.0:
        raise ValueError(f"r0 must be positive, got {r0}")
    grid = trace.grid
    if trace.n_checkpoints < 2:
        raise ValueError("regularity report needs at least two checkpoints")
    if lam is None and trace.config is not None and trace.config.scheme == "glhf":
        lam = trace.config.lam
        kappa = trace.config.kappa
    g_r = g_probe(r0, grid.dim)
    qw = grid.quadrature_weights()
    times = np.asarray(trace.times)

    dens_fields = []
    for k in range(trace.n_checkpoints):
        u = SphereField(grid, trace.snapshots[k], t=trace.times[k])
        dens_fields.append(energy_density(u, lam=lam, kappa=kappa).values)

    # probe density per anchor: energy over the g(r0) cylinder / r0^d
    sums = [_ball_sums(grid, e * qw, g_r) for e in dens_fields[:-1]]
    probe = np.zeros((trace.n_checkpoints, grid.n_nodes))
    for k in range(trace.n_checkpoints):
        w = _slab_weights(times, times[k] - g_r**2, times[k] + g_r**2)
        for j in np.flatnonzero(w > 0.0):
            probe[k] += w[j] * sums[j]
    probe /= r0**grid.dim

    # sup of the density over P_r0 per anchor: lattice max filter in space,
    # then max over the checkpoint window in time
    m = max(1, int(math.floor(r0 / grid.h + 1e-12)))
    axes = [np.arange(-m, m + 1)] * grid.dim
    mesh = np.meshgrid(*axes, indexing="ij")
    foot = (sum(a.astype(np.float64) ** 2 for a in mesh) * grid.h**2) <= r0**2 + 1e-12
    space_max = [
        maximum_filter(e.reshape(grid.cube_shape), footprint=foot, mode="constant").reshape(-1)
        for e in dens_fields
    ]
    sup_e = np.zeros((trace.n_checkpoints, grid.n_nodes))
    for k in range(trace.n_checkpoints):
        inside = np.flatnonzero(np.abs(times - times[k]) < r0**2)
        acc = space_max[inside[0]]
        for j in inside[1:]:
            acc = np.maximum(acc, space_max[j])
        sup_e[k] = acc

    active = grid.active
    small = probe[:, active] < eps0
    admitted = int(np.sum(small))
    excluded = int(small.size - admitted)
    envelope = 1.0 / r0**2 + c2_boundary_estimate(trace.initial_field())
    if admitted:
        max_sup = float(np.max(sup_e[:, active][small]))
    else:
        max_sup = 0.0
    return EpsilonRegularityReport(
        eps0=eps0,
        R0=r0,
        g_R0=g_r,
        c2_estimate=float(envelope - 1.0 / r0**2),
        admitted=admitted,
        excluded=excluded,
        max_sup_density=max_sup,
        fitted_C=max_sup / envelope,
    )


def write_reports(path, reports) -> None:
    """Serialize report objects to NDJSON with the fixed record keys."""
    with open(path, "w") as fh:
        for rep in reports:
            for rec in rep.records():
                ordered = {key: rec.get(key) for key in REPORT_KEYS}
                fh.write(json.dumps(ordered) + "\n")
