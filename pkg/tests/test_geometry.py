import numpy as np
import pytest

from oracles import graph_surface_features, rel_err

from wingcp.bezier import PiecewiseManifold, SurfacePoint, jet
from wingcp.errors import DegenerateMetric, InvalidPatch
from wingcp.geometry import (
    christoffel,
    contract,
    feature_bundle,
    feature_csv_header,
    feature_csv_row,
    inverse_metric,
    metric,
    riemann_tensor,
)
from wingcp.shapes import flat_grid, graph_surface_grid, paraboloid_grid


def random_poly_coeffs(rng, total_degree=4, scale=0.6):
    """Random bivariate polynomial with the given total degree bound."""
    c = np.zeros((total_degree + 1, total_degree + 1))
    for p in range(total_degree + 1):
        for q in range(total_degree + 1 - p):
            c[p, q] = scale * rng.uniform(-1.0, 1.0)
    return c


class TestMetric:
    def test_flat_plane(self):
        j = jet(flat_grid(2, 2), 0.3, 0.7)
        g, dg = metric(j)
        np.testing.assert_allclose(g, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(dg, 0.0, atol=1e-14)

    def test_paraboloid_graph_oracle(self):
        j = jet(paraboloid_grid(), 0.5, 0.0)
        g, dg = metric(j)
        np.testing.assert_allclose(g, [[2.0, 0.0], [0.0, 1.0]], atol=1e-12)
        # d/du g_11 = d/du (1 + 4u^2) = 8u = 4 at u = 0.5
        assert dg[0, 0, 0] == pytest.approx(4.0, abs=1e-12)

    def test_symmetry_is_exact(self):
        rng = np.random.default_rng(3)
        g_grid = graph_surface_grid(random_poly_coeffs(rng), 4, 4)
        for u, v in rng.uniform(0.1, 0.9, (5, 2)):
            g, dg = metric(jet(g_grid, u, v))
            assert g[0, 1] == g[1, 0]
            for l in range(2):
                assert dg[l, 0, 1] == dg[l, 1, 0]

    def test_requires_order_two(self):
        j = jet(flat_grid(), 0.5, 0.5, order=1)
        with pytest.raises(ValueError):
            metric(j)


class TestInverseMetric:
    def test_identity(self):
        np.testing.assert_allclose(inverse_metric(np.eye(2)), np.eye(2), atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(
            inverse_metric(np.array([[2.0, 0.0], [0.0, 1.0]])),
            [[0.5, 0.0], [0.0, 1.0]],
            atol=1e-15,
        )

    def test_rank_one_degenerate(self):
        with pytest.raises(DegenerateMetric):
            inverse_metric(np.array([[1.0, 1.0], [1.0, 1.0]]))

    def test_product_is_identity(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a = rng.uniform(-1, 1, (2, 2))
            g = a @ a.T + 0.5 * np.eye(2)
            np.testing.assert_allclose(g @ inverse_metric(g), np.eye(2), atol=1e-10)


class TestChristoffel:
    def test_flat_all_zero(self):
        gamma, dgamma = christoffel(jet(flat_grid(2, 2), 0.4, 0.6))
        np.testing.assert_allclose(gamma, 0.0, atol=1e-14)
        np.testing.assert_allclose(dgamma, 0.0, atol=1e-14)

    def test_paraboloid_value(self):
        # graph-surface oracle: Gamma^1_11 = f_uu f_u / (1 + |grad f|^2) = 2*1/2
        gamma, _ = christoffel(jet(paraboloid_grid(), 0.5, 0.0))
        assert gamma[0, 0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_paraboloid_origin_zero(self):
        gamma, _ = christoffel(jet(paraboloid_grid(), 0.0, 0.0))
        np.testing.assert_allclose(gamma, 0.0, atol=1e-13)

    def test_lower_index_symmetry_exact(self):
        rng = np.random.default_rng(5)
        grid = graph_surface_grid(random_poly_coeffs(rng), 4, 4)
        for u, v in rng.uniform(0.1, 0.9, (5, 2)):
            gamma, dgamma = christoffel(jet(grid, u, v))
            for k in range(2):
                assert gamma[k, 0, 1] == gamma[k, 1, 0]
                for x in range(2):
                    assert dgamma[x, k, 0, 1] == dgamma[x, k, 1, 0]

    def test_derivatives_match_finite_differences(self):
        # central FD of christoffel over (u, v) with step 1e-4
        rng = np.random.default_rng(6)
        grid = graph_surface_grid(random_poly_coeffs(rng), 4, 4)
        h = 1e-4
        for u, v in rng.uniform(0.1, 0.9, (4, 2)):
            _, dgamma = christoffel(jet(grid, u, v))
            gp_u, _ = christoffel(jet(grid, u + h, v))
            gm_u, _ = christoffel(jet(grid, u - h, v))
            gp_v, _ = christoffel(jet(grid, u, v + h))
            gm_v, _ = christoffel(jet(grid, u, v - h))
            fd = np.stack([(gp_u - gm_u) / (2 * h), (gp_v - gm_v) / (2 * h)])
            assert np.max(rel_err(dgamma, fd, floor=1.0)) < 1e-4


class TestRiemann:
    def test_flat_zero(self):
        gamma, dgamma = christoffel(jet(flat_grid(2, 2), 0.2, 0.9))
        np.testing.assert_allclose(riemann_tensor(gamma, dgamma), 0.0, atol=1e-14)

    def test_antisymmetry_in_ij(self):
        rng = np.random.default_rng(7)
        grid = graph_surface_grid(random_poly_coeffs(rng), 4, 4)
        for u, v in rng.uniform(0.1, 0.9, (5, 2)):
            gamma, dgamma = christoffel(jet(grid, u, v))
            riem = riemann_tensor(gamma, dgamma)
            np.testing.assert_allclose(riem + riem.transpose(0, 2, 1, 3), 0.0, atol=1e-10)
            # in particular R^s_iik = 0
            for s in range(2):
                for i in range(2):
                    for k in range(2):
                        assert abs(riem[s, i, i, k]) <= 1e-10

    def test_paraboloid_origin_component(self):
        # |R_1212| = K det(g) = 4 at the origin where g = I
        gamma, dgamma = christoffel(jet(paraboloid_grid(), 0.0, 0.0))
        riem = riemann_tensor(gamma, dgamma)
        assert abs(riem[1, 0, 1, 0]) == pytest.approx(4.0, abs=1e-11)


class TestContract:
    def test_flat_zero(self):
        gamma, dgamma = christoffel(jet(flat_grid(2, 2), 0.5, 0.5))
        g, _ = metric(jet(flat_grid(2, 2), 0.5, 0.5))
        ricci, scalar = contract(riemann_tensor(gamma, dgamma), inverse_metric(g))
        np.testing.assert_allclose(ricci, 0.0, atol=1e-13)
        assert abs(scalar) < 1e-13

    def test_paraboloid_origin(self):
        j = jet(paraboloid_grid(), 0.0, 0.0)
        gamma, dgamma = christoffel(j)
        g, _ = metric(j)
        _, scalar = contract(riemann_tensor(gamma, dgamma), inverse_metric(g))
        assert scalar == pytest.approx(8.0, abs=1e-10)

    def test_paraboloid_half(self):
        j = jet(paraboloid_grid(), 0.5, 0.5)
        gamma, dgamma = christoffel(j)
        g, _ = metric(j)
        _, scalar = contract(riemann_tensor(gamma, dgamma), inverse_metric(g))
        assert scalar == pytest.approx(8.0 / 9.0, rel=1e-10)

    def test_conventions_differ_by_sign(self):
        j = jet(paraboloid_grid(), 0.3, 0.6)
        gamma, dgamma = christoffel(j)
        g, _ = metric(j)
        riem = riemann_tensor(gamma, dgamma)
        g_inv = inverse_metric(g)
        ricci_std, s_std = contract(riem, g_inv, "standard")
        ricci_lit, s_lit = contract(riem, g_inv, "first-index")
        np.testing.assert_allclose(ricci_lit, -ricci_std, atol=1e-12)
        assert s_lit == pytest.approx(-s_std, rel=1e-12)

    def test_unknown_convention(self):
        with pytest.raises(ValueError):
            contract(np.zeros((2, 2, 2, 2)), np.eye(2), "bogus")


class TestGraphSurfaceOracle:
    def test_equivalence(self):
        """Metric, Christoffel and scalar curvature against the closed forms."""
        rng = np.random.default_rng(42)
        for _ in range(10):
            coeffs = random_poly_coeffs(rng)
            grid = graph_surface_grid(coeffs, 4, 4)
            manifold = PiecewiseManifold([grid])
            manifold.exempt_all()
            for u, v in rng.uniform(0.05, 0.95, (20, 2)):
                f = feature_bundle(manifold, SurfacePoint("graph", u, v))
                g_o, gamma_o, s_o = graph_surface_features(coeffs, u, v)
                assert np.max(rel_err(f.g, g_o, floor=1.0)) < 1e-8
                assert np.max(rel_err(f.gamma, gamma_o, floor=1.0)) < 1e-8
                assert rel_err(f.scalar, s_o, floor=1.0) < 1e-8


class TestInvariance:
    def _features_at(self, grid, pts, convention="standard"):
        manifold = PiecewiseManifold([grid])
        manifold.exempt_all()
        return [feature_bundle(manifold, SurfacePoint(grid.patch_id, u, v), convention) for u, v in pts]

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(11)
        coeffs = random_poly_coeffs(rng)
        grid = graph_surface_grid(coeffs, 4, 4)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        shift = rng.uniform(-5, 5, 3)
        from wingcp.bezier import ControlGrid

        moved = ControlGrid("graph", grid.points @ q.T + shift)
        pts = rng.uniform(0.1, 0.9, (8, 2))
        for a, b in zip(self._features_at(grid, pts), self._features_at(moved, pts)):
            np.testing.assert_allclose(a.g, b.g, atol=1e-9)
            np.testing.assert_allclose(a.gamma, b.gamma, atol=1e-9)
            np.testing.assert_allclose(a.riemann, b.riemann, atol=1e-9)
            assert abs(a.scalar - b.scalar) < 1e-9

    def test_uniform_scaling(self):
        rng = np.random.default_rng(12)
        coeffs = random_poly_coeffs(rng)
        grid = graph_surface_grid(coeffs, 4, 4)
        from wingcp.bezier import ControlGrid

        for lam in (0.5, 2.0, 7.0):
            scaled = ControlGrid("graph", lam * np.array(grid.points))
            pts = rng.uniform(0.1, 0.9, (5, 2))
            for a, b in zip(self._features_at(grid, pts), self._features_at(scaled, pts)):
                np.testing.assert_allclose(b.g, lam**2 * a.g, rtol=1e-9)
                if abs(a.scalar) > 1e-12:
                    assert b.scalar == pytest.approx(a.scalar / lam**2, rel=1e-9)


class TestFeatureBundle:
    def test_flat_everything(self, flat_manifold):
        f = feature_bundle(flat_manifold, SurfacePoint("flat", 0.3, 0.3))
        np.testing.assert_allclose(f.g, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(f.g_inv, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(f.gamma, 0.0, atol=1e-14)
        np.testing.assert_allclose(f.riemann, 0.0, atol=1e-14)
        np.testing.assert_allclose(f.ricci, 0.0, atol=1e-14)
        assert abs(f.scalar) < 1e-14
        assert f.det_g == pytest.approx(1.0, abs=1e-14)

    def test_paraboloid_origin(self, paraboloid_manifold):
        f = feature_bundle(paraboloid_manifold, SurfacePoint("paraboloid", 0.0, 0.0))
        np.testing.assert_allclose(f.g, np.eye(2), atol=1e-13)
        np.testing.assert_allclose(f.gamma, 0.0, atol=1e-13)
        assert f.scalar == pytest.approx(8.0, abs=1e-10)

    def test_unchecked_patch_rejected(self):
        manifold = PiecewiseManifold([paraboloid_grid(patch_id="p")])
        with pytest.raises(InvalidPatch):
            feature_bundle(manifold, SurfacePoint("p", 0.5, 0.5))

    def test_degenerate_metric_carries_point(self):
        import numpy as np
        from wingcp.bezier import ControlGrid

        # collapse an entire boundary row so the tangent along u vanishes at v=0
        pts = np.array(flat_grid(2, 2).points)
        pts[:, 0, :] = pts[0, 0, :]
        manifold = PiecewiseManifold([ControlGrid("deg", pts)])
        manifold.exempt_all()
        with pytest.raises(DegenerateMetric) as excinfo:
            feature_bundle(manifold, SurfacePoint("deg", 0.5, 0.0))
        assert excinfo.value.point == SurfacePoint("deg", 0.5, 0.0)

    def test_inverse_consistency(self, paraboloid_manifold):
        f = feature_bundle(paraboloid_manifold, SurfacePoint("paraboloid", 0.7, 0.2))
        np.testing.assert_allclose(f.g @ f.g_inv, np.eye(2), atol=1e-10)


class TestFeatureCsv:
    def test_header_and_row_width(self, paraboloid_manifold):
        f = feature_bundle(paraboloid_manifold, SurfacePoint("paraboloid", 0.25, 0.5))
        header = feature_csv_header()
        row = feature_csv_row(f)
        assert header[:6] == ["patch_id", "u", "v", "x", "y", "z"]
        assert header[-1] == "S"
        assert len(header) == len(row) == 16

    def test_slot_column(self, paraboloid_manifold):
        f = feature_bundle(paraboloid_manifold, SurfacePoint("paraboloid", 0.25, 0.5))
        assert feature_csv_header(stencil_slot=True)[-1] == "stencil_slot"
        assert feature_csv_row(f, stencil_slot=4)[-1] == "4"
