"""Epsilon sweeps: convergence rates and uniform-in-epsilon constants.

The central object is the corrected two-scale expansion error

    w_eps = u_eps - Phi_0 u - (Phi_k - P_k) du/dx_k,

whose H1 norm decays like eps when the correctors do their job, while the
naive difference u_eps - u stalls in H1 (its gradient keeps the oscillation).
Sweeps solve the homogenized problem once on the finest grid and restrict it
down, so discretization error is common mode across the sweep rows.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bvp import DirichletProblem, default_lambda, solve, solve_homogenized
from .cell import homogenize, solve_correctors
from .coefficients import CoefficientSet, builtin_family
from .dirichlet import DirichletCorrectorSet, solve_dirichlet_correctors
from .grid import (BoxGrid, GridFunction, TorusGrid, gradient, lp_norm,
                   linf_norm, holder_seminorm)


class SweepError(ValueError):
    pass


def _is_dyadic(eps: float) -> bool:
    if eps <= 0 or eps > 1:
        return False
    j = math.log2(1.0 / eps)
    return abs(j - round(j)) < 1e-12


@dataclass
class SweepConfig:
    family: str
    params: dict = field(default_factory=dict)
    eps_list: tuple = (1 / 8, 1 / 16, 1 / 32)
    divisor: int = 16            # h = eps / divisor
    n_fixed: int | None = None   # overrides the divisor rule with one fine grid
    lam: float | None = None
    data: str = "one"            # one | sine | bump
    seed: int = 0
    tol: float = 1e-10
    n_cell: int = 64
    corner_margin: float = 1 / 8

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_list)
        if len(eps) < 1:
            raise SweepError("empty eps list")
        if any(not _is_dyadic(e) for e in eps):
            raise SweepError(f"eps must be dyadic (2^-j), got {eps}")
        if any(b >= a for a, b in zip(eps, eps[1:])) and len(eps) > 1:
            raise SweepError("eps list must be strictly decreasing")
        self.eps_list = eps
        if self.n_fixed is None and self.n_cell % self.divisor != 0:
            raise SweepError(
                f"n_cell = {self.n_cell} must be divisible by the grid divisor "
                f"{self.divisor} so cell fields land on the box lattice"
            )

    def grid_for(self, eps: float) -> BoxGrid:
        d = builtin_family(self.family, **self.params).d
        if self.n_fixed is not None:
            return BoxGrid(d, self.n_fixed)
        return BoxGrid(d, int(round(self.divisor / eps)))


def load_field(kind: str, grid: BoxGrid, m: int, seed: int = 0) -> np.ndarray:
    """The sweep data battery: constant load, separable sine, localized bump."""
    pts = grid.points()
    vals = np.zeros(grid.shape + (m,))
    if kind == "one":
        vals[..., 0] = 1.0
    elif kind == "sine":
        prod = np.ones(grid.shape)
        for ax in range(grid.d):
            prod = prod * np.sin(np.pi * pts[..., ax] / grid.extent)
        vals[..., 0] = prod
    elif kind == "bump":
        rng = np.random.Generator(np.random.PCG64(seed))
        center = rng.uniform(0.3, 0.7, size=grid.d) * grid.extent
        width = 0.15 * grid.extent
        r2 = np.sum((pts - center) ** 2, axis=-1)
        vals[..., 0] = np.exp(-r2 / (2 * width ** 2))
    else:
        raise SweepError(f"unknown data kind {kind!r}; expected one|sine|bump")
    return vals


def restrict(values: np.ndarray, fine: BoxGrid, coarse: BoxGrid) -> np.ndarray:
    """Pointwise restriction between nesting box grids (strided subsample)."""
    if fine.n % coarse.n != 0:
        raise SweepError(f"grids do not nest: {fine.n} intervals onto {coarse.n}")
    f = fine.n // coarse.n
    sl = (slice(None, None, f),) * fine.d
    return values[sl]


# ---------------------------------------------------------------------------
# expansion error
# ---------------------------------------------------------------------------

@dataclass
class ExpansionError:
    w: GridFunction
    h1_norm: float
    h1_norm_corner_excluded: float
    l2_norm: float


def masked_h1_norm(u: GridFunction, mask: np.ndarray) -> float:
    """Discrete H1 norm restricted to a point mask (Riemann cell rule)."""
    g = u.grid
    gu = gradient(u).values
    nd = g.d
    mag2 = np.sum(u.values ** 2, axis=tuple(range(nd, u.values.ndim)))
    gmag2 = np.sum(gu ** 2, axis=tuple(range(nd, gu.ndim)))
    cell = (slice(0, -1),) * nd
    w = mask[cell]
    total = float(((mag2 + gmag2)[cell] * w).sum()) * g.cell_volume
    return math.sqrt(total)


def expansion_error(u_eps: GridFunction, u: GridFunction,
                    phis: DirichletCorrectorSet,
                    corner_margin: float = 1 / 8) -> ExpansionError:
    """w_eps and its H1 norms (global and with a corner-excluded mask).

    On convex-corner domains the corrected rate can degrade near corners, so
    the masked norm (d_x >= corner_margin) is recorded alongside the global
    one.
    """
    grid = u_eps.grid
    if u.grid != grid or phis.grid != grid:
        raise SweepError("expansion error requires all fields on one grid")
    m = phis.m
    uv = u.values
    du = gradient(u).values               # (*shape, m, d)
    w = u_eps.values - np.einsum("...ab,...b->...a", phis.phi0, uv)
    pts = grid.points()
    for k in range(grid.d):
        dev = phis.phi[k].copy()
        for a in range(m):
            dev[..., a, a] -= pts[..., k]
        w -= np.einsum("...ab,...b->...a", dev, du[..., k])
    wf = GridFunction(grid, w)
    gu = gradient(wf)
    h1 = math.sqrt(lp_norm(wf, 2.0) ** 2 + lp_norm(gu, 2.0) ** 2)
    mask = grid.boundary_distance() >= corner_margin
    h1c = masked_h1_norm(wf, mask)
    return ExpansionError(w=wf, h1_norm=h1, h1_norm_corner_excluded=h1c,
                          l2_norm=lp_norm(wf, 2.0))


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------

@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    n_used: int
    dropped: int


def fit_rate(pairs) -> RateFit:
    """OLS on (log eps, log error); nonpositive errors are dropped with a flag."""
    eps = np.array([p[0] for p in pairs], float)
    err = np.array([p[1] for p in pairs], float)
    keep = err > 0
    dropped = int((~keep).sum())
    eps, err = eps[keep], err[keep]
    if eps.size < 3:
        raise SweepError(f"need at least 3 positive pairs, have {eps.size}")
    le, lv = np.log(eps), np.log(err)
    slope, intercept = np.polyfit(le, lv, 1)
    resid = float(np.sqrt(np.mean((lv - slope * le - intercept) ** 2)))
    return RateFit(slope=float(slope), intercept=float(intercept),
                   residual=resid, n_used=int(eps.size), dropped=dropped)


# ---------------------------------------------------------------------------
# the sweep
# ---------------------------------------------------------------------------

ROW_FIELDS = ("eps", "n", "err_l2", "err_linf", "err_h1_uncorrected",
              "w_h1", "w_h1_corner", "w_l2", "phi0_dev_sup", "phik_dev_sup",
              "norm_phi0_u_l2", "norm_phik_du_l2", "residual")


@dataclass
class ConvergenceReport:
    config: SweepConfig
    rows: list[dict]
    slopes: dict
    complete: bool
    wall_time: float
    notes: list[str] = field(default_factory=list)

    def column(self, name: str) -> list[float]:
        return [row[name] for row in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(ROW_FIELDS) + "\n")
            for row in self.rows:
                cells = [str(row[k]) if k == "n" else repr(float(row[k]))
                         for k in ROW_FIELDS]
                fh.write(",".join(cells) + "\n")


def run_sweep(config: SweepConfig) -> ConvergenceReport:
    """Solve the sweep and record error norms, corrector diagnostics and slopes.

    The homogenized reference is solved once on the finest grid and restricted
    to every coarser row.  A solver failure aborts the remaining rows and
    flags the report incomplete.
    """
    t_start = time.time()
    cs = builtin_family(config.family, **config.params)
    lam = config.lam if config.lam is not None else default_lambda(cs)
    notes = []

    cell_grid = TorusGrid(cs.d, config.n_cell)
    correctors = solve_correctors(cs, cell_grid, tol=config.tol)
    hats = homogenize(cs, correctors)

    grids = [config.grid_for(e) for e in config.eps_list]
    fine = max(grids, key=lambda g: g.n)
    F_fine = load_field(config.data, fine, cs.m, config.seed)
    u_hom_fine, _ = solve_homogenized(cs, hats, lam, fine, F=F_fine,
                                      tol=config.tol)

    rows = []
    complete = True
    for eps, grid in zip(config.eps_list, grids):
        try:
            F = restrict(F_fine, fine, grid)
            problem = DirichletProblem(cs=cs, grid=grid, eps=eps, lam=lam, F=F)
            u_eps, info = solve(problem, tol=config.tol)
            u_hom = GridFunction(grid, restrict(u_hom_fine.values, fine, grid))
            phis = solve_dirichlet_correctors(cs, eps, grid, tol=config.tol)
            exp = expansion_error(u_eps, u_hom, phis, config.corner_margin)
        except Exception as exc:  # noqa: BLE001 - solver failures flag the report
            notes.append(f"row eps={eps} aborted: {exc}")
            complete = False
            break
        diff = GridFunction(grid, u_eps.values - u_hom.values)
        gdiff = gradient(diff)
        err_h1 = math.sqrt(lp_norm(diff, 2.0) ** 2 + lp_norm(gdiff, 2.0) ** 2)
        pts = grid.points()
        m = cs.m
        eye_dev = phis.phi0 - np.eye(m)
        phik_dev = 0.0
        phi_u = np.einsum("...ab,...b->...a", eye_dev, u_hom.values)
        du = gradient(u_hom).values
        tri_term2 = lp_norm(GridFunction(grid, phi_u), 2.0)
        tri3_sq = np.zeros(grid.shape + (m,))
        for k in range(grid.d):
            dev = phis.phi[k].copy()
            for a in range(m):
                dev[..., a, a] -= pts[..., k]
            phik_dev = max(phik_dev, float(np.abs(dev).max()))
            tri3_sq += np.einsum("...ab,...b->...a", dev, du[..., k])
        tri_term3 = lp_norm(GridFunction(grid, tri3_sq), 2.0)
        rows.append({
            "eps": eps,
            "n": grid.n,
            "err_l2": lp_norm(diff, 2.0),
            "err_linf": linf_norm(diff),
            "err_h1_uncorrected": err_h1,
            "w_h1": exp.h1_norm,
            "w_h1_corner": exp.h1_norm_corner_excluded,
            "w_l2": exp.l2_norm,
            "phi0_dev_sup": float(np.abs(eye_dev).max()),
            "phik_dev_sup": phik_dev,
            "norm_phi0_u_l2": tri_term2,
            "norm_phik_du_l2": tri_term3,
            "residual": info["residual"],
        })

    slopes = {}
    if len(rows) >= 3:
        for key in ("err_l2", "err_linf", "err_h1_uncorrected", "w_h1",
                    "w_h1_corner"):
            vals = [r[key] for r in rows]
            if max(vals) <= 100 * config.tol:
                notes.append(f"slope for {key} skipped: errors at solver tolerance")
                continue
            try:
                slopes[key] = fit_rate([(r["eps"], r[key]) for r in rows])
            except SweepError as exc:
                notes.append(f"slope for {key} not fitted: {exc}")
    return ConvergenceReport(config=config, rows=rows, slopes=slopes,
                             complete=complete,
                             wall_time=time.time() - t_start, notes=notes)


def triangle_defects(report: ConvergenceReport) -> list[float]:
    """Row-wise slack of ||u_eps - u|| <= ||w|| + ||(Phi_0 - I)u|| + ||(Phi_k - P_k) du||.

    Nonnegative values mean the triangle inequality holds on the recorded
    norms; a negative value beyond round-off flags inconsistent bookkeeping.
    """
    out = []
    for row in report.rows:
        rhs = row["w_l2"] + row["norm_phi0_u_l2"] + row["norm_phik_du_l2"]
        out.append(rhs - row["err_l2"])
    return out


# ---------------------------------------------------------------------------
# uniform-constant probes
# ---------------------------------------------------------------------------

PROBE_KINDS = ("W1p", "Holder", "Lipschitz", "MaxPrinciple")


@dataclass
class ProbeResult:
    kind: str
    per_eps: dict          # eps -> constant
    dispersion: float      # max / min over the sweep


def uniform_constant_probe(kind: str, config: SweepConfig, p: float = 2.0,
                           sigma: float = 0.5) -> ProbeResult:
    """Ratio of the two sides of a uniform regularity estimate, per eps.

    W1p: ||grad u_eps||_p / ||F||_p; Holder: the C^{0,sigma} seminorm over
    ||F||_p; Lipschitz: sup |grad u_eps| away from corners over ||F||_inf;
    MaxPrinciple: the nontangential maximal constant from the kernel module.
    The data battery is identical across eps by construction.
    """
    if kind not in PROBE_KINDS:
        raise SweepError(f"unknown probe kind {kind!r}; expected one of {PROBE_KINDS}")
    cs = builtin_family(config.family, **config.params)
    lam = config.lam if config.lam is not None else default_lambda(cs)
    per_eps = {}
    for eps in config.eps_list:
        grid = config.grid_for(eps)
        if kind == "MaxPrinciple":
            from .green import boundary_data_battery, maximal_function_probe
            battery = boundary_data_battery(grid, cs.m, 10, seed=config.seed)
            res = maximal_function_probe(cs, eps, lam, grid, battery, p=p,
                                         tol=config.tol)
            per_eps[eps] = res.C_p
            continue
        F = load_field(config.data, grid, cs.m, config.seed)
        problem = DirichletProblem(cs=cs, grid=grid, eps=eps, lam=lam, F=F)
        u, _ = solve(problem, tol=config.tol)
        Ff = GridFunction(grid, F)
        gu = gradient(u)
        if kind == "W1p":
            per_eps[eps] = lp_norm(gu, p) / lp_norm(Ff, p)
        elif kind == "Holder":
            per_eps[eps] = holder_seminorm(u, sigma) / lp_norm(Ff, p)
        else:  # Lipschitz, away from corners
            mask = grid.boundary_distance() >= config.corner_margin
            nd = grid.d
            gmag = np.sqrt(np.sum(gu.values ** 2,
                                  axis=tuple(range(nd, gu.values.ndim))))
            per_eps[eps] = float(gmag[mask].max()) / linf_norm(Ff)
    vals = list(per_eps.values())
    disp = max(vals) / min(vals) if min(vals) > 0 else math.inf
    return ProbeResult(kind=kind, per_eps=per_eps, dispersion=disp)
