"""Staircase discretization of balls and boxes with sphere-valued node fields.

Uniform Cartesian grids over the bounding box of the domain; nodes are
classified interior / boundary / exterior so that stencils never consume
exterior values. All arrays are float64 and flattened row-major (C order),
axis 0 slowest.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

INTERIOR = 0
BOUNDARY = 1
EXTERIOR = 2

_FIELD_MAGIC = "sphereflow-field"
_FIELD_VERSION = "v1"


@dataclass(frozen=True)
class DomainSpec:
    """Geometry request: unit ball or axis-aligned box, n nodes per axis.

    Args:
        dim: spatial dimension, >= 2.
        shape: "ball" (unit ball) or "box" (cube of the given half width).
        n: nodes per axis; odd and >= 5 so the origin is a node.
        half_width: half extent of the bounding box; must be 1.0 for "ball".
    """

    dim: int
    shape: str
    n: int
    half_width: float = 1.0

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.shape not in ("ball", "box"):
            raise ValueError(f"shape must be 'ball' or 'box', got {self.shape!r}")
        if self.n < 5 or self.n % 2 == 0:
            raise ValueError(f"n must be odd and >= 5, got {self.n}")
        if self.half_width <= 0.0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if self.shape == "ball" and self.half_width != 1.0:
            raise ValueError("ball domains are unit balls; half_width must be 1.0")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)


@dataclass
class DomainGrid:
    """Realized grid: node coordinates, classification, stencil bookkeeping.

    Attributes:
        spec: the generating DomainSpec.
        coords: (N, d) node coordinates, N = n**d, row-major over axes.
        node_class: (N,) uint8 of INTERIOR / BOUNDARY / EXTERIOR.
        h: grid spacing (uniform across axes).
    """

    spec: DomainSpec
    coords: np.ndarray
    node_class: np.ndarray
    h: float
    # per-axis availability of the +/- neighbor for first differences,
    # restricted to active (non-exterior) neighbor values inside the grid
    _has_plus: np.ndarray = field(repr=False, default=None)
    _has_minus: np.ndarray = field(repr=False, default=None)
    # lazy per-axis row indices where the first difference is one-sided/absent
    _one_sided: dict = field(repr=False, default_factory=dict, compare=False)

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def cube_shape(self) -> tuple[int, ...]:
        return (self.spec.n,) * self.spec.dim

    @property
    def interior(self) -> np.ndarray:
        return self.node_class == INTERIOR

    @property
    def boundary(self) -> np.ndarray:
        return self.node_class == BOUNDARY

    @property
    def exterior(self) -> np.ndarray:
        return self.node_class == EXTERIOR

    @property
    def active(self) -> np.ndarray:
        """Nodes that carry field values consumed by stencils and quadrature."""
        return self.node_class != EXTERIOR

    @property
    def origin_index(self) -> int:
        mid = (self.spec.n - 1) // 2
        return int(np.ravel_multi_index((mid,) * self.spec.dim, self.cube_shape))

    def quadrature_weights(self) -> np.ndarray:
        """(N,) weights: h^d on interior nodes, h^d/2 on boundary, 0 outside."""
        w = np.zeros(self.n_nodes, dtype=np.float64)
        cell = self.h**self.spec.dim
        w[self.interior] = cell
        w[self.boundary] = 0.5 * cell
        return w

    def axis_rows(self, ax: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row indices with one-sided or absent first differences along ax.

        Returns (plus_only, minus_only, neither); all remaining rows have
        both axis neighbors and take the centered difference. Cached, since
        the classification depends only on the grid.
        """
        if ax not in self._one_sided:
            hp, hm = self._has_plus[ax], self._has_minus[ax]
            self._one_sided[ax] = (
                np.flatnonzero(hp & ~hm),
                np.flatnonzero(~hp & hm),
                np.flatnonzero(~hp & ~hm),
            )
        return self._one_sided[ax]


def build_grid(spec: DomainSpec) -> DomainGrid:
    """Build the staircase grid for a DomainSpec.

    Ball classification by distance to the sphere: interior |x| < 1 - h/2,
    boundary 1 - h/2 <= |x| < 1 + h/2 (the Dirichlet band straddles the
    sphere), exterior beyond. An interior node's axis neighbors satisfy
    |x'| < 1 + h/2, so interior stencils never touch exterior nodes, and the
    symmetric band makes half-weight quadrature first-order exact in the
    domain volume. Box: face nodes are boundary, everything else interior.
    Boundary nodes always lie within h of the continuum boundary.
    """
    n, d = spec.n, spec.dim
    axis = np.linspace(-spec.half_width, spec.half_width, n)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)

    cube = (n,) * d
    if spec.shape == "box":
        cls = np.full(cube, INTERIOR, dtype=np.uint8)
        for ax in range(d):
            sl = [slice(None)] * d
            sl[ax] = 0
            cls[tuple(sl)] = BOUNDARY
            sl[ax] = n - 1
            cls[tuple(sl)] = BOUNDARY
    else:
        h = spec.spacing
        r = np.sqrt(np.sum(coords**2, axis=1)).reshape(cube)
        cls = np.full(cube, EXTERIOR, dtype=np.uint8)
        cls[r < 1.0 + 0.5 * h] = BOUNDARY
        cls[r < 1.0 - 0.5 * h] = INTERIOR

    node_class = cls.ravel()
    grid = DomainGrid(spec=spec, coords=coords, node_class=node_class, h=spec.spacing)

    active = (node_class != EXTERIOR).reshape(cube)
    has_plus = np.zeros((d, *cube), dtype=bool)
    has_minus = np.zeros((d, *cube), dtype=bool)
    for ax in range(d):
        sl_to, sl_from = [slice(None)] * d, [slice(None)] * d
        sl_to[ax], sl_from[ax] = slice(0, n - 1), slice(1, n)
        has_plus[ax][tuple(sl_to)] = active[tuple(sl_from)]
        sl_to[ax], sl_from[ax] = slice(1, n), slice(0, n - 1)
        has_minus[ax][tuple(sl_to)] = active[tuple(sl_from)]
    grid._has_plus = has_plus.reshape(d, -1)
    grid._has_minus = has_minus.reshape(d, -1)
    return grid


@dataclass
class SphereField:
    """Per-node map values u: grid -> R^(D+1), boundary rows Dirichlet-pinned.

    Exterior node rows are carried for layout convenience but are never read
    by stencils or quadrature. `t` is the flow time of the snapshot.
    """

    grid: DomainGrid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.grid.n_nodes:
            raise ValueError(
                f"values must have shape (N, D+1) with N={self.grid.n_nodes}, "
                f"got {v.shape}"
            )
        if v.shape[1] < 2:
            raise ValueError("target must live in R^(D+1) with D >= 1")
        self.values = v

    @property
    def target_dim(self) -> int:
        return self.values.shape[1] - 1

    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=1))

    def sup_norm(self) -> float:
        """Max |u| over active nodes."""
        return float(np.max(self.norms()[self.grid.active]))

    def min_last(self) -> float:
        """Min of the last ambient component over active nodes."""
        return float(np.min(self.values[self.grid.active, -1]))


def _as_stack(vals: np.ndarray) -> tuple[np.ndarray, bool]:
    v = np.asarray(vals, dtype=np.float64)
    if v.ndim == 1:
        return v[:, None], True
    return v, False


def _shift(cube: np.ndarray, ax: int, step: int) -> np.ndarray:
    """Value of the axis neighbor at +step (in {+1,-1}); 0 past the grid edge."""
    out = np.zeros_like(cube)
    n = cube.shape[ax]
    sl_to, sl_from = [slice(None)] * cube.ndim, [slice(None)] * cube.ndim
    if step == 1:
        sl_to[ax], sl_from[ax] = slice(0, n - 1), slice(1, n)
    else:
        sl_to[ax], sl_from[ax] = slice(1, n), slice(0, n - 1)
    out[tuple(sl_to)] = cube[tuple(sl_from)]
    return out


def _axis_difference(
    grid: DomainGrid, cube: np.ndarray, v: np.ndarray, ax: int, m: int
) -> np.ndarray:
    """First difference along one axis: centered in bulk, patched one-sided.

    The centered difference is computed everywhere in one vector pass;
    rows lacking an active neighbor on one side (a thin boundary shell,
    cached per grid) are then overwritten with the one-sided formula or
    zero. Row-for-row this evaluates the same expressions as a mask-driven
    selection, so results are deterministic.
    """
    fp = _shift(cube, ax, +1).reshape(-1, m)
    fm = _shift(cube, ax, -1).reshape(-1, m)
    plus_only, minus_only, neither = grid.axis_rows(ax)
    fp_rows = fp[plus_only]
    fm_rows = fm[minus_only]
    g = fp
    g -= fm
    g /= 2.0 * grid.h
    if plus_only.size:
        g[plus_only] = (fp_rows - v[plus_only]) / grid.h
    if minus_only.size:
        g[minus_only] = (v[minus_only] - fm_rows) / grid.h
    if neither.size:
        g[neither] = 0.0
    return g


def laplacian_values(grid: DomainGrid, vals: np.ndarray) -> np.ndarray:
    """(2d+1)-point Laplacian on interior nodes; zero rows elsewhere.

    Interior stencils only ever touch interior/boundary neighbors, so
    exterior rows never influence the output. Accumulation is grouped per
    axis (neighbors first, then -2f), keeping constant fields at exactly
    zero.
    """
    v, squeeze = _as_stack(vals)
    m = v.shape[1]
    cube = v.reshape(*grid.cube_shape, m)
    acc = np.zeros_like(cube)
    n = grid.n
    for ax in range(grid.dim):
        lo = [slice(None)] * grid.dim + [slice(None)]
        hi = [slice(None)] * grid.dim + [slice(None)]
        lo[ax], hi[ax] = slice(0, n - 1), slice(1, n)
        acc[tuple(lo)] += cube[tuple(hi)]
        acc[tuple(hi)] += cube[tuple(lo)]
        acc -= 2.0 * cube
    out = acc.reshape(-1, m) / grid.h**2
    out[~grid.interior] = 0.0
    return out[:, 0] if squeeze else out


def gradient_values(grid: DomainGrid, vals: np.ndarray) -> np.ndarray:
    """First differences per axis: (N, d, m) for (N, m) input.

    Centered where both axis neighbors are active, one-sided next to the
    boundary, zero where no active neighbor exists along an axis. Rows at
    exterior nodes are zero. Exact for affine fields on active nodes.
    """
    v, squeeze = _as_stack(vals)
    m = v.shape[1]
    cube = v.reshape(*grid.cube_shape, m)
    out = np.zeros((grid.n_nodes, grid.dim, m), dtype=np.float64)
    for ax in range(grid.dim):
        out[:, ax, :] = _axis_difference(grid, cube, v, ax, m)
    out[grid.exterior] = 0.0
    return out[:, :, 0] if squeeze else out


def gradient_norm_sq_values(grid: DomainGrid, vals: np.ndarray) -> np.ndarray:
    """|grad f|^2 per node, summed over axes and components.

    Same differences as gradient_values, accumulated axis by axis to avoid
    materializing the (N, d, m) gradient stack on hot paths.
    """
    v, _ = _as_stack(vals)
    m = v.shape[1]
    cube = v.reshape(*grid.cube_shape, m)
    out = np.zeros(grid.n_nodes, dtype=np.float64)
    for ax in range(grid.dim):
        g = _axis_difference(grid, cube, v, ax, m)
        out += np.sum(g * g, axis=1)
    out[grid.exterior] = 0.0
    return out


def laplacian(f: SphereField) -> SphereField:
    return SphereField(f.grid, laplacian_values(f.grid, f.values), t=f.t)


def gradient_norm_sq(f: SphereField) -> np.ndarray:
    return gradient_norm_sq_values(f.grid, f.values)


def ball_mask(grid: DomainGrid, center, radius: float) -> np.ndarray:
    """Closed-ball node mask |x - center| <= radius."""
    c = np.asarray(center, dtype=np.float64)
    if c.shape != (grid.dim,):
        raise ValueError(f"center must have shape ({grid.dim},), got {c.shape}")
    if radius <= 0.0:
        raise ValueError(f"radius must be positive, got {radius}")
    d2 = np.sum((grid.coords - c) ** 2, axis=1)
    return d2 <= radius**2


def integrate(grid: DomainGrid, values: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Quadrature sum of scalar node values over the domain (or a sub-region).

    Weight h^d per interior node, h^d/2 per boundary node, exterior excluded.
    The reduction is numpy's pairwise sum over the fixed row-major node order,
    so results are bit-reproducible for identical inputs.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (grid.n_nodes,):
        raise ValueError(f"values must have shape ({grid.n_nodes},), got {v.shape}")
    sel = grid.active
    if mask is not None:
        sel = sel & mask
        if not np.any(sel):
            raise ValueError("integration region contains no active nodes")
    w = grid.quadrature_weights()
    return float(np.sum(v[sel] * w[sel]))


def domain_measure(grid: DomainGrid, mask: np.ndarray | None = None) -> float:
    """Quadrature measure of the domain (or of a masked sub-region)."""
    return integrate(grid, np.ones(grid.n_nodes), mask)


def save_field(f: SphereField, path) -> None:
    """Write a node-field snapshot.

    Line 1: ``sphereflow-field v1 d=<d> D=<D> n=<n> t=<t>``; then one line per
    node in row-major order with D+1 floats at full round-trip precision.
    """
    header = (
        f"{_FIELD_MAGIC} {_FIELD_VERSION} d={f.grid.dim} D={f.target_dim} "
        f"n={f.grid.n} t={float(f.t)!r}"
    )
    rows = f.values.tolist()
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(" ".join(repr(x) for x in row) + "\n")


def load_field(path, grid: DomainGrid) -> SphereField:
    """Read a snapshot written by save_field; header must match the grid."""
    with open(path) as fh:
        header = fh.readline().strip()
        m = re.fullmatch(
            rf"{_FIELD_MAGIC} {_FIELD_VERSION} d=(\d+) D=(\d+) n=(\d+) t=(\S+)", header
        )
        if m is None:
            raise ValueError(f"unrecognized field header: {header!r}")
        d, big_d, n = int(m.group(1)), int(m.group(2)), int(m.group(3))
        t = float(m.group(4))
        if d != grid.dim or n != grid.n:
            raise ValueError(
                f"snapshot is d={d}, n={n} but grid is d={grid.dim}, n={grid.n}"
            )
        data = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if data.shape != (grid.n_nodes, big_d + 1):
        raise ValueError(
            f"snapshot body has shape {data.shape}, expected "
            f"({grid.n_nodes}, {big_d + 1})"
        )
    return SphereField(grid, data, t=t)
