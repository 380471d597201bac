"""Dirichlet correctors on box domains and their boundary-layer diagnostics.

Phi_{eps,0} solves the principal-part problem with source div(V_eps) and
identity boundary data; Phi_{eps,k} solves the homogeneous problem with the
coordinate monomial P_k as boundary data.  The deviation fields

    Psi_k = Phi_k - P_k - eps * chi_k(x/eps)      (P_0 = I)

are pure boundary-layer objects: O(eps) in sup norm with gradients decaying
like min(1, eps / dist-to-boundary).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bvp import CoefficientSamples
from .cell import CorrectorSet
from .coefficients import CoefficientSet
from .grid import BoxGrid, GridFunction, TorusGrid, _centered_box, gradient
from .solvers import solve_box_dirichlet


class CommensurabilityError(ValueError):
    """eps does not place the cell lattice onto the box lattice exactly."""


@dataclass
class DirichletCorrectorSet:
    grid: BoxGrid
    eps: float
    phi0: np.ndarray          # (*shape, m, m)
    phi: list[np.ndarray]     # d entries (*shape, m, m)
    residuals: dict[str, float]

    @property
    def m(self) -> int:
        return self.phi0.shape[-1]


@dataclass
class PsiDiagnostics:
    eps: float
    psi: list[np.ndarray]          # k = 0..d, each (*shape, m, m)
    sup_norms: list[float]
    grad_sup_norms: list[float]
    profile_bins: np.ndarray       # bin edges in d_x
    profile_max_grad: np.ndarray   # max |grad Psi| per bin, over all k


def _principal_samples(cs: CoefficientSet, grid: BoxGrid, eps: float) -> CoefficientSamples:
    """Samples of the principal-part operator only (V = B = c = 0, lambda = 0)."""
    x = grid.points()
    y = np.mod(x / eps, 1.0)
    A = cs.A(y)
    m = cs.m
    zV = np.zeros(grid.shape + (grid.d, m, m))
    zc = np.zeros(grid.shape + (m, m))
    return CoefficientSamples(grid=grid, A=A, V=zV, B=zV.copy(), c=zc, lam=0.0, m=m)


def _resolution_guard(grid: BoxGrid, eps: float) -> None:
    if grid.h > eps / 16 + 1e-15:
        raise ValueError(
            f"resolution guard violated: corrector solve at eps = {eps} needs "
            f"h <= {eps / 16:.4g}, grid has h = {grid.h:.4g}"
        )


def solve_phi0(cs: CoefficientSet, eps: float, grid: BoxGrid,
               tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Phi_{eps,0}: principal part applied, source div(V_eps), boundary = I."""
    _resolution_guard(grid, eps)
    samples = _principal_samples(cs, grid, eps)
    m = cs.m
    x = grid.points()
    V = cs.V(np.mod(x / eps, 1.0))   # (*shape, d, m, m)
    h = grid.h
    phi0 = np.zeros(grid.shape + (m, m))
    residuals = []
    for beta in range(m):
        rhs = np.zeros(grid.shape + (m,))
        for i in range(grid.d):
            rhs += _centered_box(V[..., i, :, beta], i, h)
        rhs_int = rhs[grid.interior]
        w = solve_box_dirichlet(samples.apply_interior, rhs_int, grid,
                                lam=0.0, tol=tol,
                                precond_scale=samples.precond_scale(),
                                symmetric=samples.is_symmetric)
        rn = np.linalg.norm(samples.apply_interior(w) - rhs_int)
        bn = np.linalg.norm(rhs_int)
        residuals.append(rn / bn if bn > 0 else 0.0)
        full = np.zeros(grid.shape + (m,))
        full[grid.interior] = w
        full[..., beta] += 1.0   # + identity column (exact on the boundary)
        phi0[..., :, beta] = full
    return phi0, max(residuals)


def solve_phik(cs: CoefficientSet, eps: float, k: int, grid: BoxGrid,
               tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Phi_{eps,k}: homogeneous principal-part solve with P_k boundary data.

    Implemented through w = Phi - P_k, which vanishes on the boundary and
    satisfies L(w) = -L(P_k); for constant A the right side is identically
    zero and Phi = P_k exactly.
    """
    if not 1 <= k <= cs.d:
        raise ValueError(f"k must be in 1..{cs.d}")
    _resolution_guard(grid, eps)
    samples = _principal_samples(cs, grid, eps)
    m = cs.m
    x = grid.points()
    phik = np.zeros(grid.shape + (m, m))
    residuals = []
    for beta in range(m):
        pk = np.zeros(grid.shape + (m,))
        pk[..., beta] = x[..., k - 1]
        rhs_int = -samples.apply_full(pk)[grid.interior]
        w = solve_box_dirichlet(samples.apply_interior, rhs_int, grid,
                                lam=0.0, tol=tol,
                                precond_scale=samples.precond_scale(),
                                symmetric=samples.is_symmetric)
        rn = np.linalg.norm(samples.apply_interior(w) - rhs_int)
        bn = np.linalg.norm(rhs_int)
        residuals.append(rn / bn if bn > 0 else 0.0)
        full = pk.copy()
        full[grid.interior] += w
        phik[..., :, beta] = full
    return phik, max(residuals)


def solve_dirichlet_correctors(cs: CoefficientSet, eps: float, grid: BoxGrid,
                               tol: float = 1e-10) -> DirichletCorrectorSet:
    phi0, r0 = solve_phi0(cs, eps, grid, tol)
    phis = []
    res = {"phi0": r0}
    for k in range(1, cs.d + 1):
        pk, rk = solve_phik(cs, eps, k, grid, tol)
        phis.append(pk)
        res[f"phi{k}"] = rk
    return DirichletCorrectorSet(grid=grid, eps=eps, phi0=phi0, phi=phis, residuals=res)


def sample_periodic_field(arr: np.ndarray, cell_grid: TorusGrid,
                          box_grid: BoxGrid, eps: float) -> np.ndarray:
    """Evaluate a unit-cell field at x/eps on the box lattice, exactly.

    Requires the pullback lattice to coincide with the cell lattice:
    (h_box / eps) * n_cell must be an integer.  Dyadic sweeps with n a power
    of two satisfy this by construction.
    """
    ratio = box_grid.h / eps * cell_grid.n
    if abs(ratio - round(ratio)) > 1e-9:
        raise CommensurabilityError(
            f"box spacing h = {box_grid.h} at eps = {eps} does not land on the "
            f"cell lattice (n_cell = {cell_grid.n}); choose dyadic eps and "
            f"compatible grids"
        )
    step = int(round(ratio))
    idx1 = (np.arange(box_grid.n + 1) * step) % cell_grid.n
    ix = np.ix_(*([idx1] * box_grid.d))
    return arr[ix]


def phi_inverse(phi0: np.ndarray) -> np.ndarray:
    """Pointwise inverse of Phi_{eps,0}, guarded by the smallness condition
    ||Phi - I||_inf <= 1/2 that the paper-regime transformations assume."""
    m = phi0.shape[-1]
    eye = np.eye(m)
    dev = np.abs(phi0 - eye).max()
    if dev > 0.5:
        raise ValueError(f"Phi deviates from identity by {dev:.3f} > 1/2; eps too large")
    return np.linalg.inv(phi0)


def psi_diagnostics(phis: DirichletCorrectorSet, correctors: CorrectorSet,
                    eps: float, nbins: int = 8) -> PsiDiagnostics:
    """Psi fields, their sup norms, and the radial gradient profile.

    The gradient profile records max |grad Psi| over logarithmic bins of the
    boundary distance; the theory predicts the envelope min(1, eps / d_x).
    """
    grid = phis.grid
    m = phis.m
    cell = correctors.grid
    chi_all = [correctors.chi0] + list(correctors.chi)
    phi_all = [phis.phi0] + list(phis.phi)
    pts = grid.points()
    dist = grid.boundary_distance()

    psis = []
    sup_norms = []
    grad_sups = []
    grad_mags = []
    eye = np.eye(m)
    for k, (phi, chi) in enumerate(zip(phi_all, chi_all)):
        chi_pulled = sample_periodic_field(chi, cell, grid, eps)
        base = np.broadcast_to(eye, grid.shape + (m, m)).copy()
        if k > 0:
            base = np.zeros(grid.shape + (m, m))
            for a in range(m):
                base[..., a, a] = pts[..., k - 1]
        psi = phi - base - eps * chi_pulled
        psis.append(psi)
        sup_norms.append(float(np.abs(psi).max()))
        gpsi = gradient(GridFunction(grid, psi)).values
        nd = grid.d
        gmag = np.sqrt(np.sum(gpsi ** 2, axis=tuple(range(nd, gpsi.ndim))))
        grad_sups.append(float(gmag.max()))
        grad_mags.append(gmag)

    interior = dist > 0
    dmin = max(grid.h, 1e-12)
    dmax = float(dist.max())
    edges = np.geomspace(dmin, dmax * 1.0001, nbins + 1)
    prof = np.zeros(nbins)
    gstack = np.maximum.reduce(grad_mags)
    for b in range(nbins):
        mask = interior & (dist >= edges[b]) & (dist < edges[b + 1])
        prof[b] = float(gstack[mask].max()) if mask.any() else math.nan
    return PsiDiagnostics(eps=eps, psi=psis, sup_norms=sup_norms,
                          grad_sup_norms=grad_sups, profile_bins=edges,
                          profile_max_grad=prof)
