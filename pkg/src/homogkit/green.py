"""Mollified Green's-matrix approximation, decay fits, and boundary kernels.

The approximating Green column for source component gamma at a point y is the
adjoint-operator solution of

    L* G = (1 / |B_rho(y) cap Omega|) 1_{B_rho(y)} e_gamma,  G = 0 on the boundary,

so that the bilinear-form pairing of G with any test field u returns the ball
average of u^gamma near y.  Discrete transposition makes the ball-averaged
reciprocity between forward and adjoint samples exact up to solver tolerance.

Grids here are deliberately allowed to under-resolve the oscillation: decay
exponents and kernel representations are measured with coarse tolerance
windows, and the pointwise coefficient sampling stays well defined at any h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bvp import CoefficientSamples
from .coefficients import CoefficientSet
from .grid import BoxGrid, GridFunction, _centered_box, boundary_lp_norm, \
    boundary_indices, lp_norm, linf_norm, nontangential_max
from .solvers import solve_box_dirichlet


class GreenError(ValueError):
    pass


def operator_samples(cs: CoefficientSet, eps: float, lam: float,
                     grid: BoxGrid) -> CoefficientSamples:
    """Coefficients frozen at x/eps on the box lattice (pointwise, no guard)."""
    x = grid.points()
    y = np.mod(x / eps, 1.0)
    return CoefficientSamples(grid=grid, A=cs.A(y), V=cs.V(y), B=cs.B(y),
                              c=cs.c(y), lam=float(lam), m=cs.m)


def _snap_interior(grid: BoxGrid, y) -> tuple[tuple[int, ...], np.ndarray]:
    yi = np.rint(np.asarray(y, float) / grid.h).astype(int)
    if yi.shape != (grid.d,):
        raise GreenError(f"source point must have {grid.d} coordinates")
    if np.any(yi <= 0) or np.any(yi >= grid.n):
        raise GreenError(f"source point {y} is not an interior grid point")
    return tuple(int(i) for i in yi), yi * grid.h


def _ball_mask(grid: BoxGrid, center: np.ndarray, rho: float) -> np.ndarray:
    pts = grid.points()
    dist = np.sqrt(np.sum((pts - center) ** 2, axis=-1))
    return dist <= rho + 1e-12


@dataclass
class GreenSample:
    grid: BoxGrid
    eps: float
    lam: float
    y_index: tuple[int, ...]
    y: np.ndarray
    rho: float
    columns: np.ndarray        # (m, *shape, m): [source comp, x..., field comp]
    residuals: list[float]
    star: bool = False         # True if these are adjoint-kernel columns

    @property
    def m(self) -> int:
        return self.columns.shape[0]

    def d_y(self) -> float:
        per_axis = np.minimum(self.y, self.grid.extent - self.y)
        return float(per_axis.min())

    def magnitude(self) -> np.ndarray:
        """Frobenius norm over both matrix indices, per grid point."""
        nd = self.grid.d
        sq = np.sum(self.columns ** 2, axis=(0, self.columns.ndim - 1))
        return np.sqrt(sq)


def approx_green(cs: CoefficientSet, eps: float, lam: float, grid: BoxGrid,
                 y, rho: float | None = None, tol: float = 1e-10,
                 star: bool = False) -> GreenSample:
    """m adjoint solves with the normalized ball-indicator source at y.

    With ``star=True`` the forward operator is solved instead, producing the
    columns of the adjoint problem's kernel (used by the reciprocity check).
    """
    h = grid.h
    if rho is None:
        rho = 2.0 * h
    if rho < 2.0 * h - 1e-12:
        raise GreenError(f"mollification radius {rho} below the 2h = {2 * h} floor")
    y_idx, y_pt = _snap_interior(grid, y)
    mask = _ball_mask(grid, y_pt, rho)
    meas = float(mask.sum()) * grid.cell_volume
    samples = operator_samples(cs, eps, lam, grid)
    op = samples if star else samples.adjoint()
    m = cs.m
    columns = np.zeros((m,) + grid.shape + (m,))
    residuals = []
    for gamma in range(m):
        F = np.zeros(grid.shape + (m,))
        F[mask, gamma] = 1.0 / meas
        rhs_int = F[grid.interior]
        sol = solve_box_dirichlet(op.apply_interior, rhs_int, grid,
                                  lam=lam, tol=tol,
                                  precond_scale=op.precond_scale(),
                                  symmetric=op.is_symmetric)
        rn = np.linalg.norm(op.apply_interior(sol) - rhs_int)
        bn = np.linalg.norm(rhs_int)
        residuals.append(rn / bn if bn > 0 else 0.0)
        columns[gamma][grid.interior] = sol
    return GreenSample(grid=grid, eps=eps, lam=lam, y_index=y_idx, y=y_pt,
                       rho=rho, columns=columns, residuals=residuals, star=star)


def direct_solve(cs: CoefficientSet, eps: float, lam: float, grid: BoxGrid,
                 F: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Forward Dirichlet solve with zero boundary data and load F (*shape, m).

    Unlike the boundary-value module this skips the oscillation-resolution
    guard: it serves as the oracle for the kernel representation identity,
    which is a discrete transpose identity and holds at any resolution.
    """
    samples = operator_samples(cs, eps, lam, grid)
    rhs_int = np.asarray(F, float)[grid.interior]
    sol = solve_box_dirichlet(samples.apply_interior, rhs_int, grid,
                              lam=lam, tol=tol,
                              precond_scale=samples.precond_scale(),
                              symmetric=samples.is_symmetric)
    full = np.zeros(grid.shape + (cs.m,))
    full[grid.interior] = sol
    return full


def ball_average(sample: GreenSample, center, rho: float | None = None) -> np.ndarray:
    """(m, m) matrix of column fields averaged over the ball at ``center``."""
    if rho is None:
        rho = sample.rho
    _, c_pt = _snap_interior(sample.grid, center)
    mask = _ball_mask(sample.grid, c_pt, rho)
    return sample.columns[:, mask, :].mean(axis=1)


def reciprocity_residual(cs: CoefficientSet, eps: float, lam: float,
                         grid: BoxGrid, y, x, rho: float | None = None,
                         tol: float = 1e-10) -> float:
    """Relative defect of the kernel transposition identity between x and y.

    The ball-averaged forward kernel at (x, y) must equal the transposed
    ball-averaged adjoint kernel at (y, x); discretely this is a transpose
    identity, so the defect is pure solver error.
    """
    s_fwd = approx_green(cs, eps, lam, grid, y, rho, tol)
    s_adj = approx_green(cs, eps, lam, grid, x, rho, tol, star=True)
    a = ball_average(s_fwd, x)
    b = ball_average(s_adj, y)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    return float(np.abs(a - b.T).max() / scale)


def representation_value(sample: GreenSample, F: np.ndarray) -> np.ndarray:
    """Interior representation: u^gamma(y) from the load F shaped (*shape, m)."""
    g = sample.grid
    F = np.asarray(F, float)
    axes = list(range(1, sample.columns.ndim))
    return np.tensordot(sample.columns, F, axes=(axes, list(range(F.ndim)))) \
        * g.cell_volume


@dataclass
class DecayFit:
    radii: np.ndarray
    values: np.ndarray
    exponent: float
    prefactor: float
    residual: float
    n_pairs: int
    spans_decade: bool


def decay_fit(sample: GreenSample, max_pairs: int = 4000) -> DecayFit:
    """Log-log least-squares fit of |G| against |x - y|.

    Admissible evaluation points keep clear of both the mollification ball
    (rho < |x-y|/4) and the boundary influence of y (|x-y| <= d_y / 2), and of
    the grid scale (|x-y| >= 4h).  Only d = 3 carries a power decay law.
    """
    g = sample.grid
    if g.d != 3:
        raise GreenError("power-law decay fits require d = 3")
    pts = g.points()
    r = np.sqrt(np.sum((pts - sample.y) ** 2, axis=-1))
    mag = sample.magnitude()
    d_y = sample.d_y()
    adm = (r >= 4 * g.h) & (r <= 0.5 * d_y) & (sample.rho < r / 4) & (mag > 0)
    rr = r[adm]
    vv = mag[adm]
    if rr.size < 10:
        raise GreenError(f"only {rr.size} admissible pairs; need at least 10")
    if rr.size > max_pairs:
        stride = rr.size // max_pairs + 1
        order = np.argsort(rr)
        sel = order[::stride]
        rr, vv = rr[sel], vv[sel]
    lr = np.log(rr)
    lv = np.log(vv)
    slope, intercept = np.polyfit(lr, lv, 1)
    resid = float(np.sqrt(np.mean((lv - slope * lr - intercept) ** 2)))
    return DecayFit(radii=rr, values=vv, exponent=float(slope),
                    prefactor=float(math.exp(intercept)), residual=resid,
                    n_pairs=int(rr.size),
                    spans_decade=bool(rr.max() / rr.min() >= 10.0))


def boundary_weighted_ratio(sample: GreenSample) -> float:
    """max over admissible x of |G| |x-y|^(d-1) / d_y, the near-boundary bound."""
    g = sample.grid
    pts = g.points()
    r = np.sqrt(np.sum((pts - sample.y) ** 2, axis=-1))
    mag = sample.magnitude()
    d_y = max(sample.d_y(), g.h)
    adm = (r >= 4 * g.h) & (sample.rho < r / 4)
    if not adm.any():
        raise GreenError("no admissible points for the weighted ratio")
    return float((mag[adm] * r[adm] ** (g.d - 1)).max() / d_y)


# ---------------------------------------------------------------------------
# Poisson kernel and boundary representation
# ---------------------------------------------------------------------------

def _face_normal_derivative(field: np.ndarray, grid: BoxGrid, axis: int,
                            low: bool) -> np.ndarray:
    """Second-order one-sided d/dx_axis of a full field, on one box face."""
    h = grid.h
    sl = [slice(None)] * field.ndim

    def at(i):
        s = list(sl)
        s[axis] = i
        return tuple(s)

    if low:
        return (-3.0 * field[at(0)] + 4.0 * field[at(1)] - field[at(2)]) / (2.0 * h)
    return (3.0 * field[at(-1)] - 4.0 * field[at(-2)] + field[at(-3)]) / (2.0 * h)


def poisson_kernel_boundary_rep(samples: list[GreenSample], cs: CoefficientSet,
                                g_values: np.ndarray) -> np.ndarray:
    """Probe values u(y) of the homogeneous Dirichlet problem from boundary data.

    For each Green sample the conormal derivative of its columns is taken with
    a one-sided normal difference on every box face (the zero trace of the
    columns kills the drift term of the conormal), contracted with the
    boundary data g shaped (*shape, m), and summed with the face quadrature
    weight h^(d-1).  Face corners and edges (points on more than one face) are
    skipped; their normal is ill defined and their quadrature weight vanishes
    in the limit.

    Returns an array (len(samples), m) of probe values.
    """
    if not samples:
        raise GreenError("no Green samples supplied")
    out = np.zeros((len(samples), samples[0].m))
    for isamp, sample in enumerate(samples):
        grid = sample.grid
        d, m, h = grid.d, sample.m, grid.h
        x = grid.points()
        yc = np.mod(x / sample.eps, 1.0)
        A = cs.A(yc)
        g_arr = np.asarray(g_values, float)
        total = np.zeros(m)
        on_faces = np.zeros(grid.shape, dtype=int)
        for ax in range(d):
            idx = [slice(None)] * d
            idx[ax] = 0
            on_faces[tuple(idx)] += 1
            idx[ax] = -1
            on_faces[tuple(idx)] += 1
        for ax in range(d):
            for low in (True, False):
                # outward normal is -e_ax (low face) or +e_ax (high face)
                sign = -1.0 if low else 1.0
                face = [slice(None)] * d
                face[ax] = 0 if low else -1
                face = tuple(face)
                interior_face = on_faces[face] == 1
                a_norm = A[face][..., ax, ax, :, :]          # a_{ax,ax}^{alpha beta}
                gb = g_arr[face]                              # (*face, m)
                # dG[source gamma, *face, field alpha]
                dG = np.stack([
                    _face_normal_derivative(sample.columns[s], grid, ax, low)
                    for s in range(m)
                ])
                # P^{gamma beta} = -n_j a_{ij}^{alpha beta} d_i G^{alpha gamma};
                # the columns vanish on the face, so tangential gradient
                # components drop and only i = j = ax survives.
                kern = -sign * np.einsum("...ab,a...g->g...b", a_norm, dG)
                contrib = np.einsum("g...b,...b->g...", kern, gb)
                total += contrib[:, interior_face].sum(axis=1) * h ** (d - 1)
        out[isamp] = total
    return out


# ---------------------------------------------------------------------------
# nontangential maximal function battery
# ---------------------------------------------------------------------------

@dataclass
class MaximalProbeResult:
    eps: float
    C_p: float                 # worst ||(u)*||_p / ||g||_p over the battery
    ratios: list[float]
    max_principle_ratio: float  # worst ||u||_inf / ||g||_inf


def boundary_data_battery(grid: BoxGrid, m: int, count: int = 10,
                          seed: int = 0) -> list[np.ndarray]:
    """Deterministic boundary data: trigonometric traces plus localized bumps.

    Full-shape arrays are returned; only the boundary rows matter downstream.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    pts = grid.points()
    L = grid.extent
    battery = []
    for j in range(count):
        vals = np.zeros(grid.shape + (m,))
        if j % 2 == 0:
            freqs = rng.integers(1, 4, size=grid.d)
            phases = rng.uniform(0, 2 * np.pi, size=grid.d)
            trace = np.ones(grid.shape)
            for ax in range(grid.d):
                trace = trace * np.cos(2 * np.pi * freqs[ax] * pts[..., ax] / L
                                       + phases[ax])
            vals[..., j % m] = trace
        else:
            center = rng.uniform(0.0, L, size=grid.d)
            width = rng.uniform(0.1, 0.3) * L
            r2 = np.sum((pts - center) ** 2, axis=-1)
            vals[..., j % m] = np.exp(-r2 / (2 * width ** 2))
        battery.append(vals)
    return battery


def maximal_function_probe(cs: CoefficientSet, eps: float, lam: float,
                           grid: BoxGrid, battery: list[np.ndarray],
                           p: float = 2.0, N0: float = 2.0,
                           tol: float = 1e-10,
                           lambda_override: bool = False) -> MaximalProbeResult:
    """Worst nontangential-maximal constant over a battery of boundary data.

    Also records the worst sup-norm ratio (the maximum-principle surrogate).
    """
    if len(battery) < 10:
        raise GreenError("battery needs at least 10 boundary data fields")
    from .bvp import DirichletProblem, solve
    ratios = []
    mp_worst = 0.0
    bmask = grid.boundary_mask()
    for g_vals in battery:
        problem = DirichletProblem(cs=cs, grid=grid, eps=eps, lam=lam,
                                   g=g_vals, lambda_override=lambda_override)
        u, _ = solve(problem, tol=tol)
        star = nontangential_max(u, N0)
        g_on_b = g_vals[bmask]
        g_norm = boundary_lp_norm(g_on_b, grid, p)
        star_norm = boundary_lp_norm(star, grid, p)
        if g_norm > 0:
            ratios.append(star_norm / g_norm)
        g_sup = float(np.abs(g_on_b).max())
        if g_sup > 0:
            mp_worst = max(mp_worst, linf_norm(u) / g_sup)
    return MaximalProbeResult(eps=eps, C_p=max(ratios), ratios=ratios,
                              max_principle_ratio=mp_worst)
