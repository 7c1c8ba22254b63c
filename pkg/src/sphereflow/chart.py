"""Stereographic chart and the hemisphere-confinement monitor.

The chart sends u in S^D (minus the south pole) to v in R^D via
v_i = u_i / (1 + u_last); the inverse is u_i = 2 v_i / (1 + |v|^2) with
last component (1 - |v|^2) / (1 + |v|^2). Fields confined to an open
hemisphere around the north pole stay uniformly inside the chart, and for
such runs the chart sup-norm sup |v| is a Lyapunov quantity: the monitor
checks it never grows beyond a discretization tolerance.

The chart is diagnostic only; time stepping happens in ambient coordinates
to keep clear of the south-pole coordinate singularity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sphereflow.flow import CHART_EDGE, FlowTrace
from sphereflow.grid import DomainGrid, SphereField, gradient_norm_sq_values


@dataclass
class ChartField:
    """Chart coordinates v: grid -> R^D at time t.

    Valid only where the source field's last ambient component exceeds
    -1 + 1e-6; construction via to_chart enforces that on active nodes.
    """

    grid: DomainGrid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.grid.n_nodes:
            raise ValueError(
                f"values must have shape (N, D) with N={self.grid.n_nodes}, "
                f"got {v.shape}"
            )
        self.values = v

    def sup_norm(self) -> float:
        """Max |v| over active nodes."""
        n = np.sqrt(np.sum(self.values**2, axis=1))
        return float(np.max(n[self.grid.active]))


def to_chart(u: SphereField) -> ChartField:
    """Stereographic coordinates of u; requires last component > -1 + 1e-6.

    The check runs over active nodes (exterior rows carry no data); the
    first offending node is named in the error.
    """
    last = u.values[:, -1]
    bad = u.grid.active & (last <= CHART_EDGE)
    if np.any(bad):
        node = int(np.flatnonzero(bad)[0])
        raise ValueError(
            f"field leaves the chart domain at node {node} "
            f"(x = {u.grid.coords[node].tolist()}): last component "
            f"{float(last[node])} <= -1 + 1e-6"
        )
    denom = np.where(u.grid.active, 1.0 + last, 1.0)
    v = u.values[:, :-1] / denom[:, None]
    v[u.grid.exterior] = 0.0
    return ChartField(u.grid, v, t=u.t)


def from_chart(v: ChartField) -> SphereField:
    """Inverse stereographic map; output norms are 1 to 1e-15 by identity."""
    if not np.all(np.isfinite(v.values[v.grid.active])):
        raise ValueError("chart field has non-finite entries on active nodes")
    vv = v.values
    s = np.sum(vv**2, axis=1)
    denom = 1.0 + s
    out = np.empty((v.grid.n_nodes, vv.shape[1] + 1), dtype=np.float64)
    out[:, :-1] = 2.0 * vv / denom[:, None]
    out[:, -1] = (1.0 - s) / denom
    return SphereField(v.grid, out, t=v.t)


def chart_gradient_density(v: ChartField) -> np.ndarray:
    """Pullback gradient density 4 |grad v|^2 / (1 + |v|^2)^2 per node.

    Agrees with |grad u|^2 of the ambient field to O(h^2) on smooth
    hemisphere-confined fields (same stencils on both sides).
    """
    gn = gradient_norm_sq_values(v.grid, v.values)
    s = np.sum(v.values**2, axis=1)
    return 4.0 * gn / (1.0 + s) ** 2


@dataclass
class MonitorReport:
    """Outcome of the one-sided (hemisphere-confinement) check.

    `sup_v[k]` and `min_last[k]` describe checkpoint k; the invariant is
    sup_v[k] <= sup_v[0] + tol for every k. `first_violation` is the index
    of the earliest failing checkpoint, None if the run passes.
    """

    times: list[float]
    min_last: list[float]
    sup_v: list[float]
    tol: float
    delta: float
    passed: bool
    first_violation: int | None


def one_sided_monitor(
    trace: FlowTrace, delta: float = 0.1, c_tol: float = 1.0
) -> MonitorReport:
    """Check that the chart sup-norm never grows along a confined run.

    Precondition: the initial slice has min last component >= delta > 0
    (image compactly inside the open upper hemisphere). The tolerance is
    1e-6 + c_tol*(dt + h^2), the discretization error a maximum-principle
    scheme can inject per comparison.
    """
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    u0 = trace.initial_field()
    m0 = u0.min_last()
    if m0 < delta:
        raise ValueError(
            f"initial data is not hemisphere-confined: min last component "
            f"{m0} < delta = {delta}"
        )
    if trace.config is not None:
        dt = trace.config.dt
    else:
        dt = float(np.max(np.diff(trace.times))) if trace.n_checkpoints > 1 else 0.0
    tol = 1e-6 + c_tol * (dt + trace.grid.h**2)

    times, min_last, sup_v = [], [], []
    for k in range(trace.n_checkpoints):
        fk = trace.field(k)
        times.append(fk.t)
        min_last.append(fk.min_last())
        sup_v.append(to_chart(fk).sup_norm())

    first = None
    for k in range(1, len(sup_v)):
        if sup_v[k] > sup_v[0] + tol:
            first = k
            break
    return MonitorReport(
        times=times,
        min_last=min_last,
        sup_v=sup_v,
        tol=tol,
        delta=delta,
        passed=first is None,
        first_violation=first,
    )
