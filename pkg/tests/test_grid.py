import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homogkit.grid import (BoxGrid, GridError, GridFunction, NormSpec,
                           TorusGrid, bilinear_energy, boundary_lp_norm,
                           constant_function, from_callable, gradient, inner,
                           lp_norm, linf_norm, holder_seminorm, h1_norm,
                           nontangential_max, norm, principal_part_apply,
                           read_csv, write_csv)


def identity_coefficients(grid, d):
    A = np.zeros(grid.shape + (d, d))
    for i in range(d):
        A[..., i, i] = 1.0
    return A


class TestGrids:
    def test_torus_basic(self):
        g = TorusGrid(2, 8)
        assert g.h == 0.125
        assert g.shape == (8, 8)
        pts = g.points()
        assert pts.shape == (8, 8, 2)
        assert pts.max() < 1.0  # half-open cell

    def test_box_includes_boundary(self):
        g = BoxGrid(2, 8)
        pts = g.points()
        assert pts.shape == (9, 9, 2)
        assert pts.max() == 1.0

    @pytest.mark.parametrize("bad", [0, 4, 5])
    def test_dimension_guard(self, bad):
        with pytest.raises(GridError):
            TorusGrid(bad, 8)

    def test_small_n_guard(self):
        with pytest.raises(GridError):
            BoxGrid(2, 3)

    def test_boundary_distance_exact(self):
        g = BoxGrid(2, 4)
        dist = g.boundary_distance()
        assert dist[0, 2] == 0.0
        assert dist[2, 2] == 0.5
        assert dist[1, 2] == 0.25

    def test_boundary_mask_count(self):
        g = BoxGrid(2, 4)
        # 5^2 points minus 3^2 interior
        assert g.boundary_mask().sum() == 25 - 9


class TestGradient:
    def test_affine_exact_on_box(self):
        g = BoxGrid(2, 16)
        u = from_callable(g, lambda p: 2.0 * p[..., 0] - 3.0 * p[..., 1] + 1.0)
        gu = gradient(u).values
        assert np.allclose(gu[..., 0], 2.0, atol=1e-13)
        assert np.allclose(gu[..., 1], -3.0, atol=1e-13)

    def test_trig_second_order_on_torus(self):
        errs = []
        for n in (32, 64):
            g = TorusGrid(1, n)
            u = from_callable(g, lambda p: np.sin(2 * np.pi * p[..., 0]))
            gu = gradient(u).values[..., 0]
            exact = 2 * np.pi * np.cos(2 * np.pi * g.points()[..., 0])
            errs.append(np.abs(gu - exact).max())
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


class TestPrincipalPart:
    def test_annihilates_affine(self):
        g = TorusGrid(2, 16)
        A = identity_coefficients(g, 2)
        u = np.ones(g.shape)
        out = principal_part_apply(A, u, g)
        assert np.abs(out).max() < 1e-13

    def test_laplacian_eigenfunction(self):
        g = TorusGrid(2, 128)
        A = identity_coefficients(g, 2)
        pts = g.points()
        u = np.sin(2 * np.pi * pts[..., 0]) * np.sin(2 * np.pi * pts[..., 1])
        out = principal_part_apply(A, u, g)
        # discrete symbol of the compact 5-point Laplacian
        lam = 2 * (2 - 2 * math.cos(2 * math.pi / g.n)) / g.h ** 2
        assert np.allclose(out, lam * u, atol=1e-10 * lam)

    def test_summation_by_parts_exact(self):
        rng = np.random.Generator(np.random.PCG64(7))
        g = TorusGrid(2, 12)
        A = identity_coefficients(g, 2) + 0.3 * rng.random(g.shape + (2, 2))
        u = rng.standard_normal(g.shape)
        v = rng.standard_normal(g.shape)
        lhs = float(np.sum(principal_part_apply(A, u, g) * v)) * g.cell_volume
        rhs = bilinear_energy(A, u, v, g)
        assert lhs == pytest.approx(rhs, abs=1e-13)

    def test_transpose_identity(self):
        # <L u, v> with coefficients A equals <u, L v> with A transposed,
        # exactly: the discrete operator of the transposed samples is the
        # matrix transpose.
        rng = np.random.Generator(np.random.PCG64(3))
        g = TorusGrid(2, 10)
        A = identity_coefficients(g, 2) + 0.4 * rng.random(g.shape + (2, 2))
        At = np.swapaxes(A, -1, -2)
        u = rng.standard_normal(g.shape)
        v = rng.standard_normal(g.shape)
        lhs = np.sum(principal_part_apply(A, u, g) * v)
        rhs = np.sum(u * principal_part_apply(At, v, g))
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestNorms:
    def test_lp_of_constant(self):
        g = TorusGrid(2, 16)
        u = constant_function(g, 3.0)
        assert lp_norm(u, 2.0) == pytest.approx(3.0)
        assert lp_norm(u, 4.0) == pytest.approx(3.0)
        assert linf_norm(u) == 3.0

    def test_h1_of_linear_on_box(self):
        g = BoxGrid(1, 64)
        u = from_callable(g, lambda p: p[..., 0])
        # ||u||_L2^2 = 1/3 (Riemann sum converges), |grad| = 1
        val = h1_norm(u)
        assert val == pytest.approx(math.sqrt(1 / 3 + 1), rel=0.05)

    def test_holder_sigma_one_is_lipschitz_bound(self):
        g = BoxGrid(1, 64)
        u = from_callable(g, lambda p: 2.5 * p[..., 0])
        assert holder_seminorm(u, 1.0) == pytest.approx(2.5, rel=1e-10)

    def test_norm_spec_validation(self):
        with pytest.raises(GridError):
            NormSpec("Lp")                   # missing exponent
        with pytest.raises(GridError):
            NormSpec("Holder", 1.5)          # sigma out of range
        with pytest.raises(GridError):
            NormSpec("L2")                   # unknown kind
        assert norm(constant_function(TorusGrid(1, 8), 1.0),
                    NormSpec("Linf")) == 1.0

    def test_boundary_lp_scaling(self):
        g = BoxGrid(2, 16)
        nb = g.boundary_mask().sum()
        vals = np.ones(nb)
        # perimeter 4 of the unit square, sampled with weight h
        assert boundary_lp_norm(vals, g, 2.0) == pytest.approx(2.0, rel=0.1)


class TestNontangentialMax:
    def test_constant_field(self):
        g = BoxGrid(2, 12)
        u = constant_function(g, 2.0)
        star = nontangential_max(u, N0=2.0)
        assert np.allclose(star, 2.0)

    def test_cone_sees_interior_peak(self):
        g = BoxGrid(2, 16)
        vals = np.zeros(g.shape)
        vals[8, 8] = 5.0   # dead center: inside every cone with N0 = 2
        star = nontangential_max(GridFunction(g, vals), N0=2.0)
        assert star.max() == 5.0

    def test_aperture_guard(self):
        g = BoxGrid(2, 8)
        with pytest.raises(GridError):
            nontangential_max(constant_function(g, 1.0), N0=1.0)


class TestCsv:
    def test_roundtrip_torus(self, tmp_path):
        g = TorusGrid(2, 8)
        rng = np.random.Generator(np.random.PCG64(5))
        u = GridFunction(g, rng.standard_normal(g.shape + (3,)))
        path = tmp_path / "field.csv"
        write_csv(u, path)
        back = read_csv(path, grid=g)
        assert np.array_equal(back.values, u.values)  # bit-exact via repr

    def test_header_check(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope\n1,2,3\n")
        with pytest.raises(GridError):
            read_csv(path)

    @given(seed=st.integers(0, 2 ** 31))
    @settings(max_examples=15, deadline=None)
    def test_roundtrip_is_lossless(self, seed, tmp_path_factory):
        g = TorusGrid(1, 8)
        rng = np.random.Generator(np.random.PCG64(seed))
        u = GridFunction(g, rng.standard_normal(g.shape))
        path = tmp_path_factory.mktemp("csv") / "u.csv"
        write_csv(u, path)
        assert np.array_equal(read_csv(path, grid=g).values, u.values)


class TestGridFunction:
    def test_shape_guard(self):
        g = TorusGrid(2, 8)
        with pytest.raises(GridError):
            GridFunction(g, np.zeros((4, 4)))

    def test_nonfinite_guard(self):
        g = TorusGrid(1, 8)
        vals = np.zeros(8)
        vals[3] = np.nan
        with pytest.raises(GridError):
            GridFunction(g, vals)

    def test_inner_bilinear(self):
        g = TorusGrid(1, 16)
        u = constant_function(g, 2.0)
        v = constant_function(g, 3.0)
        assert inner(u, v) == pytest.approx(6.0)
