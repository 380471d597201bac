"""Dirichlet boundary-value solves on box domains.

The full operator is

    L u = -div(A grad u + V u) + B grad u + (c + lambda) u

with coefficients frozen at x/eps (or the constant homogenized tensors).
Boundary data is imposed strongly at boundary points; the interior system is
solved by preconditioned Krylov iteration with the algebraic lifting of the
boundary values, so the discrete boundary trace is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cell import HomogenizedCoefficients
from .coefficients import CoefficientSet
from .grid import (BoxGrid, GridFunction, _coef_block, bilinear_energy,
                   principal_part_apply)
from .solvers import SolverError, solve_box_dirichlet

HOMOGENIZED = "homogenized"


class ProblemError(ValueError):
    pass


def estimate_lambda0(cs: CoefficientSet) -> float:
    """Zero-order shift guaranteeing discrete coercivity.

    Young's-inequality bookkeeping for the lower-order terms gives
    lambda_0 = kappa + 2 kappa^2 / mu; kappa = 0 (no lower-order terms)
    yields 0.
    """
    return cs.kappa + 2.0 * cs.kappa ** 2 / cs.mu


def default_lambda(cs: CoefficientSet) -> float:
    # strict margin over the coercivity threshold
    return estimate_lambda0(cs) + 1.0


@dataclass
class CoefficientSamples:
    """Coefficient arrays frozen on a box grid (at x/eps or constants)."""

    grid: BoxGrid
    A: np.ndarray   # (*shape, d, d, m, m)
    V: np.ndarray   # (*shape, d, m, m)
    B: np.ndarray   # (*shape, d, m, m)
    c: np.ndarray   # (*shape, m, m)
    lam: float
    m: int

    def adjoint(self) -> "CoefficientSamples":
        return CoefficientSamples(
            grid=self.grid,
            A=np.swapaxes(np.swapaxes(self.A, -1, -2), -3, -4),
            V=np.swapaxes(self.B, -1, -2),
            B=np.swapaxes(self.V, -1, -2),
            c=np.swapaxes(self.c, -1, -2),
            lam=self.lam,
            m=self.m,
        )

    def apply_full(self, u: np.ndarray) -> np.ndarray:
        """Operator action on a full-grid field (*shape, m); interior rows of
        the result are valid, boundary rows are garbage (wrap effects)."""
        g = self.grid
        h = g.h
        out = principal_part_apply(self.A, u, g)
        for i in range(g.d):
            vi = self.V[..., i, :, :]
            vu = np.einsum("...ab,...b->...a", vi, u)
            out -= (np.roll(vu, -1, axis=i) - np.roll(vu, 1, axis=i)) / (2.0 * h)
            dcu = (np.roll(u, -1, axis=i) - np.roll(u, 1, axis=i)) / (2.0 * h)
            out += np.einsum("...ab,...b->...a", self.B[..., i, :, :], dcu)
        out += np.einsum("...ab,...b->...a", self.c, u) + self.lam * u
        return out

    def apply_interior(self, u_int: np.ndarray) -> np.ndarray:
        g = self.grid
        full = np.zeros(g.shape + (self.m,))
        full[g.interior] = u_int
        return self.apply_full(full)[g.interior]

    def bilinear(self, u: np.ndarray, v: np.ndarray) -> float:
        """B[u, v] for full fields vanishing on the boundary.

        Matches <apply_full(u), v> exactly (same sums reassociated), which is
        the discrete footing for the duality and coercivity tests.
        """
        g = self.grid
        h = g.h
        total = bilinear_energy(self.A, u, v, g) / g.cell_volume
        for i in range(g.d):
            vu = np.einsum("...ab,...b->...a", self.V[..., i, :, :], u)
            dcv = (np.roll(v, -1, axis=i) - np.roll(v, 1, axis=i)) / (2.0 * h)
            total += np.sum(vu * dcv)
            dcu = (np.roll(u, -1, axis=i) - np.roll(u, 1, axis=i)) / (2.0 * h)
            total += np.sum(np.einsum("...ab,...b->...a", self.B[..., i, :, :], dcu) * v)
        total += np.sum(np.einsum("...ab,...b->...a", self.c, u) * v)
        total += self.lam * np.sum(u * v)
        return float(total) * g.cell_volume

    @property
    def is_symmetric(self) -> bool:
        At = np.swapaxes(np.swapaxes(self.A, -1, -2), -3, -4)
        if not np.allclose(self.A, At, atol=1e-13, rtol=0.0):
            return False
        if not np.allclose(self.V, np.swapaxes(self.B, -1, -2), atol=1e-13, rtol=0.0):
            return False
        return bool(np.allclose(self.c, np.swapaxes(self.c, -1, -2), atol=1e-13, rtol=0.0))

    def precond_scale(self) -> float:
        nd = self.grid.d
        s = 0.0
        for i in range(nd):
            blk = _coef_block(self.A, nd, i, i)
            s += sum(float(blk[..., a, a].mean()) for a in range(self.m)) / self.m
        return s / nd


@dataclass
class DirichletProblem:
    """Problem data for L_eps u = div(f) + F in the box, u = g on the boundary."""

    cs: CoefficientSet
    grid: BoxGrid
    eps: float | str = 1.0
    lam: float | None = None
    f: np.ndarray | None = None   # (*shape, m, d) divergence-form source
    F: np.ndarray | None = None   # (*shape, m) load
    g: np.ndarray | None = None   # (*shape, m); only boundary rows are read
    hats: HomogenizedCoefficients | None = None
    lambda_override: bool = False

    def __post_init__(self):
        if self.lam is None:
            self.lam = default_lambda(self.cs)
        lam0 = estimate_lambda0(self.cs)
        if self.lam < lam0 - 1e-12 and not self.lambda_override:
            raise ProblemError(
                f"lambda = {self.lam} below coercivity threshold {lam0}; "
                "set lambda_override=True to force"
            )
        if self.eps == HOMOGENIZED:
            if self.hats is None:
                raise ProblemError("homogenized problem needs precomputed hats")
        else:
            eps = float(self.eps)
            if eps <= 0:
                raise ProblemError("eps must be positive")
            if eps < self.grid.extent and self.grid.h > eps / 16 + 1e-15:
                raise ProblemError(
                    f"resolution guard violated: oscillatory solve at eps = {eps} "
                    f"needs h <= {eps / 16:.4g}, grid has h = {self.grid.h:.4g}"
                )

    def samples(self) -> CoefficientSamples:
        g = self.grid
        m = self.cs.m
        if self.eps == HOMOGENIZED:
            hats = self.hats
            shape = g.shape
            A = np.broadcast_to(hats.A_hat, shape + hats.A_hat.shape).copy()
            V = np.broadcast_to(hats.V_hat, shape + hats.V_hat.shape).copy()
            B = np.broadcast_to(hats.B_hat, shape + hats.B_hat.shape).copy()
            c = np.broadcast_to(hats.c_hat, shape + hats.c_hat.shape).copy()
        else:
            eps = float(self.eps)
            x = g.points()
            y = np.mod(x / eps, 1.0)
            A, V, B, c = self.cs.A(y), self.cs.V(y), self.cs.B(y), self.cs.c(y)
        return CoefficientSamples(grid=g, A=A, V=V, B=B, c=c, lam=float(self.lam), m=m)

    def rhs_interior(self, samples: CoefficientSamples) -> np.ndarray:
        """F + div(f) - L(g-lifting) restricted to interior points."""
        g = self.grid
        m = self.cs.m
        rhs = np.zeros(g.shape + (m,))
        if self.F is not None:
            rhs += self.F
        if self.f is not None:
            h = g.h
            from .grid import _centered_box
            for i in range(g.d):
                rhs += _centered_box(self.f[..., :, i], i, h)
        rhs = rhs[g.interior].copy()
        if self.g is not None:
            lift = np.zeros(g.shape + (m,))
            bmask = g.boundary_mask()
            lift[bmask] = np.asarray(self.g, float)[bmask]
            rhs -= samples.apply_full(lift)[g.interior]
        return rhs


def assemble(problem: DirichletProblem) -> CoefficientSamples:
    """Materialize the frozen-coefficient operator of a problem."""
    return problem.samples()


def _finish(problem: DirichletProblem, samples: CoefficientSamples,
            u_int: np.ndarray) -> GridFunction:
    g = problem.grid
    full = np.zeros(g.shape + (problem.cs.m,))
    full[g.interior] = u_int
    if problem.g is not None:
        bmask = g.boundary_mask()
        full[bmask] = np.asarray(problem.g, float)[bmask]
    return GridFunction(g, full)


def solve(problem: DirichletProblem, tol: float = 1e-10,
          x0: np.ndarray | None = None) -> tuple[GridFunction, dict]:
    """Solve the Dirichlet problem; boundary values are exact by construction.

    Returns the solution and an info dict with the verified interior residual.
    """
    samples = problem.samples()
    return _solve_with(problem, samples, tol, x0)


def solve_adjoint(problem: DirichletProblem, tol: float = 1e-10,
                  x0: np.ndarray | None = None) -> tuple[GridFunction, dict]:
    """Solve with the transposed assembly (the discrete adjoint operator)."""
    samples = problem.samples().adjoint()
    return _solve_with(problem, samples, tol, x0)


def _solve_with(problem, samples, tol, x0):
    rhs = problem.rhs_interior(samples)
    u_int = solve_box_dirichlet(
        samples.apply_interior, rhs, problem.grid,
        lam=samples.lam, tol=tol,
        precond_scale=samples.precond_scale(),
        symmetric=samples.is_symmetric,
        x0=x0,
    )
    rn = np.linalg.norm(samples.apply_interior(u_int) - rhs)
    bn = np.linalg.norm(rhs)
    info = {"residual": rn / bn if bn > 0 else 0.0, "rhs_norm": float(bn)}
    return _finish(problem, samples, u_int), info


def solve_homogenized(cs: CoefficientSet, hats: HomogenizedCoefficients,
                      lam: float, grid: BoxGrid, *, f=None, F=None, g=None,
                      tol: float = 1e-10,
                      lambda_override: bool = False) -> tuple[GridFunction, dict]:
    """Constant-coefficient solve with the homogenized tensors."""
    problem = DirichletProblem(cs=cs, grid=grid, eps=HOMOGENIZED, lam=lam,
                               f=f, F=F, g=g, hats=hats,
                               lambda_override=lambda_override)
    return solve(problem, tol=tol)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def coercivity_margin(samples: CoefficientSamples, u_full: np.ndarray) -> tuple[float, float]:
    """(B[u,u], c0-normalized H1 energy) for a field vanishing on the boundary.

    The discrete H1 norm uses the forward differences of the energy form so
    the Garding bookkeeping transfers verbatim.
    """
    g = samples.grid
    h = g.h
    l2 = float(np.sum(u_full ** 2)) * g.cell_volume
    semi = 0.0
    for i in range(g.d):
        dpu = (np.roll(u_full, -1, axis=i) - u_full) / h
        semi += float(np.sum(dpu ** 2)) * g.cell_volume
    h1sq = l2 + semi
    return samples.bilinear(u_full, u_full), h1sq


def coercivity_constant_bound(cs: CoefficientSet, grid: BoxGrid) -> float:
    diam2 = grid.d * grid.extent ** 2
    return 0.5 * cs.mu * min(1.0, 1.0 / (1.0 + diam2))


def caccioppoli_constant(u: GridFunction, center: np.ndarray, r: float) -> float:
    """C in ||grad u||_{L2(B)} <= (C/r) ||u||_{L2(2B)} for an interior ball.

    Caller guarantees 2B stays inside the box and that u solves the
    homogeneous equation there.
    """
    g = u.grid
    pts = g.points()
    dist = np.sqrt(np.sum((pts - center) ** 2, axis=-1))
    inner_mask = dist <= r
    outer_mask = dist <= 2 * r
    from .grid import gradient
    gu = gradient(u).values
    nd = g.d
    gmag2 = np.sum(gu ** 2, axis=tuple(range(nd, gu.ndim)))
    umag2 = np.sum(u.values ** 2, axis=tuple(range(nd, u.values.ndim)))
    num = math.sqrt(float(gmag2[inner_mask].sum()) * g.cell_volume)
    den = math.sqrt(float(umag2[outer_mask].sum()) * g.cell_volume)
    if den == 0.0:
        return 0.0
    return r * num / den
