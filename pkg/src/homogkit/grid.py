"""Uniform structured grids and discrete differential operators.

Two grid flavors are provided: the periodic unit cell ``[0,1)^d`` (TorusGrid)
and axis-aligned boxes with strongly imposed Dirichlet boundaries (BoxGrid).
Grid functions are plain numpy arrays with the grid axes first and an
arbitrary tuple of trailing component axes.

All difference operators are second order.  The divergence-form operator is
assembled in flux-conservative form so that discrete summation by parts holds
exactly; see ``principal_part_apply`` and ``bilinear_energy``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Raised on grid / field shape mismatches or invalid norm specs."""


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TorusGrid:
    """Uniform lattice on the flat torus [0,1)^d with n points per axis."""

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise GridError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 4:
            raise GridError(f"need n >= 4 points per axis, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def npoints(self) -> int:
        return self.n ** self.d

    def points(self) -> np.ndarray:
        """Array of shape (*shape, d) with the lattice coordinates."""
        axes = [np.arange(self.n) * self.h for _ in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d


@dataclass(frozen=True)
class BoxGrid:
    """Uniform grid on a box [0, extent]^d including the boundary points.

    ``n`` counts intervals per axis; points sit at i*h, i = 0..n, so dyadic
    refinements nest exactly (needed by the sweep restriction logic).
    """

    d: int
    n: int
    extent: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise GridError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 4:
            raise GridError(f"need n >= 4 intervals per axis, got {self.n}")
        if self.extent <= 0:
            raise GridError("extent must be positive")

    @property
    def h(self) -> float:
        return self.extent / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n + 1,) * self.d

    @property
    def interior(self) -> tuple[slice, ...]:
        return (slice(1, -1),) * self.d

    def points(self) -> np.ndarray:
        axes = [np.arange(self.n + 1) * self.h for _ in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.d):
            idx = [slice(None)] * self.d
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def boundary_distance(self) -> np.ndarray:
        """Exact distance to the box boundary at every grid point."""
        pts = self.points()
        per_axis = np.minimum(pts, self.extent - pts)
        return per_axis.min(axis=-1)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d


Grid = TorusGrid | BoxGrid


# ---------------------------------------------------------------------------
# grid functions
# ---------------------------------------------------------------------------

@dataclass
class GridFunction:
    """Samples of a (possibly tensor-valued) function on a grid.

    ``values`` has shape ``grid.shape + comp_shape``.  The trailing component
    axes carry whatever tensor structure the caller wants (scalars have
    ``comp_shape == ()``).
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        gs = self.grid.shape
        if self.values.shape[: len(gs)] != gs:
            raise GridError(
                f"values shape {self.values.shape} does not start with grid shape {gs}"
            )
        if not np.all(np.isfinite(self.values)):
            raise GridError("grid function contains non-finite values")

    @property
    def comp_shape(self) -> tuple[int, ...]:
        return self.values.shape[len(self.grid.shape):]

    @property
    def ncomp(self) -> int:
        return int(np.prod(self.comp_shape)) if self.comp_shape else 1

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())


def constant_function(grid: Grid, value, comp_shape: tuple[int, ...] = ()) -> GridFunction:
    vals = np.broadcast_to(np.asarray(value, dtype=float), grid.shape + comp_shape).copy()
    return GridFunction(grid, vals)


def from_callable(grid: Grid, fn, comp_shape: tuple[int, ...] = ()) -> GridFunction:
    """Sample ``fn(points) -> array(*shape, *comp_shape)`` on the grid."""
    vals = np.asarray(fn(grid.points()), dtype=float)
    want = grid.shape + comp_shape
    if vals.shape != want:
        vals = np.broadcast_to(vals, want).copy()
    return GridFunction(grid, vals)


# ---------------------------------------------------------------------------
# difference operators (raw-array level)
# ---------------------------------------------------------------------------

def _centered_periodic(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(v, -1, axis=axis) - np.roll(v, 1, axis=axis)) / (2.0 * h)


def _centered_box(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Second-order differences: centered inside, one-sided at the two faces."""
    out = np.empty_like(v)
    sl = [slice(None)] * v.ndim

    def at(i):
        s = list(sl)
        s[axis] = i
        return tuple(s)

    out[at(slice(1, -1))] = (v[at(slice(2, None))] - v[at(slice(0, -2))]) / (2.0 * h)
    out[at(0)] = (-3.0 * v[at(0)] + 4.0 * v[at(1)] - v[at(2)]) / (2.0 * h)
    out[at(-1)] = (3.0 * v[at(-1)] - 4.0 * v[at(-2)] + v[at(-3)]) / (2.0 * h)
    return out


def gradient(u: GridFunction) -> GridFunction:
    """Discrete gradient; exact for affine fields.

    Output components gain a trailing axis of length d: shape
    ``grid.shape + comp_shape + (d,)``.
    """
    g = u.grid
    parts = []
    for ax in range(g.d):
        if isinstance(g, TorusGrid):
            parts.append(_centered_periodic(u.values, ax, g.h))
        else:
            parts.append(_centered_box(u.values, ax, g.h))
    return GridFunction(g, np.stack(parts, axis=-1))


# ---------------------------------------------------------------------------
# divergence-form operator
# ---------------------------------------------------------------------------

def _component_matvec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Contract the (m, m) trailing block of ``a`` with the m-vector ``v``."""
    if a.ndim == v.ndim:  # scalar block (m = 1 stored without axes)
        return a * v
    return np.einsum("...ab,...b->...a", a, v)


def _coef_block(A: np.ndarray, nd: int, i: int, j: int) -> np.ndarray:
    """Slice out a_ij from coefficients shaped grid.shape + (d, d[, m, m])."""
    return np.take(np.take(A, i, axis=nd), j, axis=nd)


def principal_part_apply(A: np.ndarray, u: np.ndarray, grid: Grid) -> np.ndarray:
    """Apply the flux-form discretization of -div(A grad u).

    ``A`` has shape ``grid.shape + (d, d)`` for scalar problems or
    ``grid.shape + (d, d, m, m)`` for systems; ``u`` has shape ``grid.shape``
    or ``grid.shape + (m,)``.

    Diagonal entries a_ii use compact D-(a D+) stencils with arithmetic
    half-point averaging; off-diagonal entries use centered-in / centered-out
    differences.  Both pieces transpose cleanly, which makes the discrete
    adjoint equal the operator built from the transposed coefficients.

    On a BoxGrid the full array (boundary included) is processed and only the
    interior rows of the result are meaningful; wrap-around touches boundary
    rows only.
    """
    d = grid.d
    h = grid.h
    gs = grid.shape
    nd = len(gs)
    out = np.zeros_like(u)
    for i in range(d):
        aii = _coef_block(A, nd, i, i)
        # forward difference of u along axis i
        dpu = (np.roll(u, -1, axis=i) - u) / h
        half = 0.5 * (aii + np.roll(aii, -1, axis=i))
        flux = _component_matvec(half, dpu)
        out -= (flux - np.roll(flux, 1, axis=i)) / h
        for j in range(d):
            if j == i:
                continue
            aij = _coef_block(A, nd, i, j)
            dcu = (np.roll(u, -1, axis=j) - np.roll(u, 1, axis=j)) / (2.0 * h)
            q = _component_matvec(aij, dcu)
            out -= (np.roll(q, -1, axis=i) - np.roll(q, 1, axis=i)) / (2.0 * h)
    return out


def divergence_form_apply(A_samples: GridFunction, u: GridFunction) -> GridFunction:
    """-div(A grad u) on the grid shared by ``A_samples`` and ``u``."""
    if A_samples.grid != u.grid:
        raise GridError("coefficient samples and field live on different grids")
    if not np.all(np.isfinite(A_samples.values)):
        raise GridError("non-finite coefficient sample")
    out = principal_part_apply(A_samples.values, u.values, u.grid)
    return GridFunction(u.grid, out)


def bilinear_energy(A: np.ndarray, u: np.ndarray, v: np.ndarray, grid: Grid) -> float:
    """The quadratic form matching ``principal_part_apply`` exactly.

    For u, v vanishing on the box boundary (or any periodic pair),
    ``inner(principal_part_apply(A, u), v) == bilinear_energy(A, u, v)``
    to machine precision: both sides are the same sums reassociated.
    """
    d = grid.d
    h = grid.h
    nd = len(grid.shape)
    total = 0.0
    for i in range(d):
        aii = _coef_block(A, nd, i, i)
        dpu = (np.roll(u, -1, axis=i) - u) / h
        dpv = (np.roll(v, -1, axis=i) - v) / h
        half = 0.5 * (aii + np.roll(aii, -1, axis=i))
        total += np.sum(_component_matvec(half, dpu) * dpv)
        for j in range(d):
            if j == i:
                continue
            aij = _coef_block(A, nd, i, j)
            dcu = (np.roll(u, -1, axis=j) - np.roll(u, 1, axis=j)) / (2.0 * h)
            dcv = (np.roll(v, -1, axis=i) - np.roll(v, 1, axis=i)) / (2.0 * h)
            total += np.sum(_component_matvec(aij, dcu) * dcv)
    return float(total) * grid.cell_volume


def inner(u: GridFunction, v: GridFunction) -> float:
    """Midpoint-rule L2 pairing of two grid functions."""
    if u.grid != v.grid:
        raise GridError("inner product across different grids")
    return float(np.sum(u.values * v.values)) * u.grid.cell_volume


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormSpec:
    """One of Lp(p), W1p(p), Holder(sigma), Linf, H1."""

    kind: str
    exponent: float | None = None

    def __post_init__(self):
        kinds = {"Lp", "W1p", "Holder", "Linf", "H1"}
        if self.kind not in kinds:
            raise GridError(f"unknown norm kind {self.kind!r}; expected one of {sorted(kinds)}")
        if self.kind in ("Lp", "W1p"):
            if self.exponent is None or not (1.0 < self.exponent < math.inf):
                raise GridError(f"{self.kind} needs an exponent in (1, inf)")
        if self.kind == "Holder":
            if self.exponent is None or not (0.0 < self.exponent <= 1.0):
                raise GridError("Holder needs sigma in (0, 1]")


def _pointwise_abs(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Euclidean magnitude over component axes."""
    nd = len(grid.shape)
    comp_axes = tuple(range(nd, values.ndim))
    if not comp_axes:
        return np.abs(values)
    return np.sqrt(np.sum(values ** 2, axis=comp_axes))


def _quadrature_weights_mask(grid: Grid) -> tuple[slice, ...]:
    # Riemann cell rule: one value per cell [ih, (i+1)h); on the torus this
    # is every point, on a box it drops the upper faces.
    if isinstance(grid, TorusGrid):
        return (slice(None),) * grid.d
    return (slice(0, -1),) * grid.d


def lp_norm(u: GridFunction, p: float) -> float:
    mag = _pointwise_abs(u.values, u.grid)[_quadrature_weights_mask(u.grid)]
    return float((np.sum(mag ** p) * u.grid.cell_volume) ** (1.0 / p))


def linf_norm(u: GridFunction) -> float:
    return float(_pointwise_abs(u.values, u.grid).max())


def holder_seminorm(u: GridFunction, sigma: float, max_pairs: int = 10_000) -> float:
    """Holder(sigma) seminorm estimated on a deterministic stratified pair sample.

    Exact all-pairs is O(N^2); a strided base/offset product capped at
    ``max_pairs`` pairs is plenty for the ratio tests this feeds.
    """
    g = u.grid
    pts = g.points().reshape(-1, g.d)
    mag = u.values.reshape((np.prod(g.shape),) + u.comp_shape)
    npts = pts.shape[0]
    k = max(2, int(math.isqrt(max_pairs)))
    stride = max(1, npts // k)
    idx = np.arange(0, npts, stride)
    sub_pts = pts[idx]
    sub_vals = mag[idx]
    diff = sub_pts[:, None, :] - sub_pts[None, :, :]
    dist = np.sqrt(np.sum(diff ** 2, axis=-1))
    vdiff = sub_vals[:, None] - sub_vals[None, :]
    comp_axes = tuple(range(2, vdiff.ndim))
    vmag = np.sqrt(np.sum(vdiff ** 2, axis=comp_axes)) if comp_axes else np.abs(vdiff)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dist > 0, vmag / np.where(dist > 0, dist, 1.0) ** sigma, 0.0)
    return float(ratio.max())


def h1_norm(u: GridFunction) -> float:
    gu = gradient(u)
    return float(math.sqrt(lp_norm(u, 2.0) ** 2 + lp_norm(gu, 2.0) ** 2))


def norm(u: GridFunction, spec: NormSpec) -> float:
    if spec.kind == "Lp":
        return lp_norm(u, spec.exponent)
    if spec.kind == "Linf":
        return linf_norm(u)
    if spec.kind == "Holder":
        return holder_seminorm(u, spec.exponent)
    if spec.kind == "H1":
        return h1_norm(u)
    if spec.kind == "W1p":
        gu = gradient(u)
        p = spec.exponent
        return float((lp_norm(u, p) ** p + lp_norm(gu, p) ** p) ** (1.0 / p))
    raise GridError(f"unhandled norm kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# boundary machinery
# ---------------------------------------------------------------------------

def boundary_indices(grid: BoxGrid) -> np.ndarray:
    """Integer index tuples (N_b, d) of all boundary points, in a fixed order."""
    mask = grid.boundary_mask()
    return np.argwhere(mask)


def boundary_measure(grid: BoxGrid) -> float:
    return grid.h ** (grid.d - 1)


def boundary_lp_norm(values_on_boundary: np.ndarray, grid: BoxGrid, p: float) -> float:
    """L^p norm over boundary points with the face quadrature weight h^(d-1)."""
    mag = np.abs(values_on_boundary)
    if mag.ndim > 1:
        mag = np.sqrt(np.sum(values_on_boundary ** 2, axis=tuple(range(1, mag.ndim))))
    if p == math.inf:
        return float(mag.max())
    return float((np.sum(mag ** p) * boundary_measure(grid)) ** (1.0 / p))


def nontangential_max(u: GridFunction, N0: float) -> np.ndarray:
    """Nontangential maximal function on the boundary of a BoxGrid.

    For every boundary point Q the maximum of |u| over grid points x in the
    cone |x - Q| <= N0 * dist(x, boundary) is returned (one value per
    boundary point, ordered as ``boundary_indices``).  A degenerate cone is
    widened to contain the interior point nearest Q.
    """
    g = u.grid
    if not isinstance(g, BoxGrid):
        raise GridError("nontangential_max requires a BoxGrid")
    if N0 <= 1.0:
        raise GridError("need aperture N0 > 1")
    mag = _pointwise_abs(u.values, g)
    dist = g.boundary_distance()
    interior = ~g.boundary_mask()
    pts = g.points()
    int_pts = pts[interior]
    int_mag = mag[interior]
    int_dist = dist[interior]
    bidx = boundary_indices(g)
    bpts = bidx * g.h
    out = np.empty(len(bpts))
    chunk = 256
    for start in range(0, len(bpts), chunk):
        qb = bpts[start:start + chunk]
        diff = int_pts[None, :, :] - qb[:, None, :]
        dd = np.sqrt(np.sum(diff ** 2, axis=-1))
        in_cone = dd <= N0 * int_dist[None, :]
        vals = np.where(in_cone, int_mag[None, :], -np.inf)
        best = vals.max(axis=1)
        empty = ~in_cone.any(axis=1)
        if np.any(empty):
            nearest = dd[empty].argmin(axis=1)
            best[empty] = int_mag[nearest]
        out[start:start + chunk] = best
    return out


# ---------------------------------------------------------------------------
# serialization (CSV interchange format)
# ---------------------------------------------------------------------------

def write_csv(u: GridFunction, path) -> None:
    """Write a grid function as CSV: header 'dim,n_per_axis,components', then
    row-major point data (one point per row)."""
    g = u.grid
    n = g.n if isinstance(g, TorusGrid) else g.n + 1
    ncomp = u.ncomp
    flat = u.values.reshape(np.prod(g.shape), ncomp)
    with open(path, "w") as fh:
        fh.write("dim,n_per_axis,components\n")
        fh.write(f"{g.d},{n},{ncomp}\n")
        for row in flat:
            # repr of a Python float is the shortest round-trip decimal
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_csv(path, grid: Grid | None = None) -> GridFunction:
    """Read back a grid function written by ``write_csv``.

    If no grid is supplied, a TorusGrid (n points per axis) or a BoxGrid
    (n-1 intervals) is inferred from whether n matches a torus layout; since
    that is ambiguous the caller should pass the grid when it knows it.
    """
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "dim,n_per_axis,components":
            raise GridError(f"bad CSV header {header!r}")
        d, n, ncomp = (int(x) for x in fh.readline().split(","))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if grid is None:
        grid = TorusGrid(d, n)
    shape = grid.shape + ((ncomp,) if ncomp > 1 else ())
    vals = data.reshape(shape)
    return GridFunction(grid, vals)
