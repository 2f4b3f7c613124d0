"""Tests for grids, conformal metrics, quadrature and boundary geometry."""
from __future__ import annotations

import math

import numpy as np
import pytest

from schrotomo.geometry import (
    BumpSum,
    ConstantFactor,
    MetricField,
    SmoothBump2D,
    bump_field,
    bump_metric,
    euclidean_metric,
    metric_from_config,
    sphere_metric,
    zero_field,
)


def test_cell_areas_sum_to_disk_area():
    m = euclidean_metric(n=96)
    areas = m.grid.cell_areas(m.radius_m)
    assert abs(areas.sum() - math.pi * m.radius_m**2) < 1e-12


def test_determinant_is_c_squared():
    m = bump_metric(0.2, center=(0.1, 0.2), width=0.4, n=48)
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1.0, 1.0, (40, 2))
    det = m.det_at(pts)
    c = m.c_at(pts)
    assert np.abs(det - c**2).max() < 1e-14


def test_metric_inverse_consistency():
    m = bump_metric(0.15, center=(-0.2, 0.1), width=0.35, n=48)
    pts = np.array([[0.0, 0.0], [-0.15, 0.12], [0.4, -0.3]])
    g = m.metric_at(pts)
    gi = m.metric_inverse_at(pts)
    prod = np.einsum("...ij,...jk->...ik", g, gi)
    eye = np.broadcast_to(np.eye(2), prod.shape)
    assert np.abs(prod - eye).max() < 1e-14


def test_euclidean_acceleration_vanishes():
    m = euclidean_metric(n=32)
    x = np.array([[0.3, -0.2], [0.0, 0.5]])
    v = np.array([[1.0, 0.4], [-0.3, 0.9]])
    assert np.abs(m.geodesic_acceleration(x, v)).max() == 0.0


def test_sphere_curvature_is_one():
    m = sphere_metric(n=48)
    rng = np.random.default_rng(11)
    pts = rng.uniform(-0.9, 0.9, (30, 2))
    assert np.abs(m.gauss_curvature_at(pts) - 1.0).max() < 1e-10


def test_small_conformal_factor_rejected():
    with pytest.raises(ValueError, match="conformal factor"):
        MetricField(ConstantFactor(0.05), n=24)


def test_bump_reaching_collar_rejected():
    # support radius 0.3 around (0.9, 0) crosses the flat collar of M
    with pytest.raises(ValueError, match="collar"):
        bump_metric(0.1, center=(0.9, 0.0), width=0.3, n=48)


def test_laplace_beltrami_constant_factor():
    # for c = 2, lap_g(x^2 + y^2) = 4 / 2 = 2 in the interior
    m = MetricField(ConstantFactor(2.0), n=96)
    g = m.grid
    vals = g.X**2 + g.Y**2
    lap = m.laplace_beltrami(vals)
    inner = g.rho < 0.8 * m.radius_m
    assert np.abs(lap[inner] - 2.0).max() < 1e-10


def test_laplace_beltrami_matches_closed_form_on_bump_metric():
    m = bump_metric(0.1, center=(0.2, -0.1), width=0.3, n=192)
    g = m.grid
    u = np.sin(1.3 * g.X) * np.cos(0.7 * g.Y)
    lap_e = -(1.3**2 + 0.7**2) * u
    lap = m.laplace_beltrami(u)
    inner = g.rho < 0.9 * m.radius_m
    err = np.abs(lap[inner] - lap_e[inner] / m.c[inner]).max()
    assert err < 2e-4


def test_laplacian_symmetry_on_interior_fields():
    m = bump_metric(0.12, center=(0.1, 0.1), width=0.4, n=64)
    u = bump_field(m, 1.0, center=(0.2, -0.1), width=0.45).values
    v = bump_field(m, 1.0, center=(-0.25, 0.15), width=0.4).values
    lu = m.laplace_beltrami(u)
    lv = m.laplace_beltrami(v)
    lhs = m.l2_inner(lu, v)
    rhs = m.l2_inner(u, lv)
    bound = 1e-10 * m.l2_norm(u) * m.l2_norm(v)
    assert abs(lhs - rhs) < bound


def test_green_identity_quadratic_exact():
    # w = |x|^2 on the flat disk: lap w = 4, so the volume term is 4 pi R^2
    m = euclidean_metric(n=96)
    g = m.grid
    w = g.X**2 + g.Y**2
    f = np.ones_like(w)
    rep = m.green_identity_check(w, f)
    assert abs(rep["lhs"] - 4.0 * math.pi * m.radius_m**2) < 1e-8
    assert rep["relative_residual"] < 1e-10


def test_green_identity_refinement_order():
    # random phases keep the identity terms O(1); pure products of sines
    # and cosines would cancel by parity on the centered disk
    residuals = []
    for n in (33, 65, 129):
        m = bump_metric(0.1, center=(0.2, -0.1), width=0.3, n=n)
        g = m.grid
        rng = np.random.default_rng(5)
        w = np.zeros((n, n))
        f = np.zeros((n, n))
        for _ in range(3):
            kx, ky = rng.integers(1, 4, 2)
            aw, af = rng.normal(size=2)
            px, py, qx, qy = rng.uniform(0, 2 * math.pi, 4)
            w += aw * np.sin(kx * g.X + px) * np.cos(ky * g.Y + py)
            f += af * np.cos(kx * g.X + qx) * np.sin(ky * g.Y + qy)
        rep = m.green_identity_check(w, f)
        residuals.append(rep["relative_residual"])
    assert residuals[1] < 1e-2
    order = math.log(residuals[0] / residuals[2]) / (2.0 * math.log(2.0))
    assert order >= 1.9


def test_boundary_chart_unit_normals_and_length():
    m = MetricField(ConstantFactor(2.0), n=64)
    chart = m.boundary_chart(m.radius_m)
    # normals are unit in g
    gn = np.sqrt(m.c_at(chart.points)) * np.hypot(chart.normals[:, 0], chart.normals[:, 1])
    assert np.abs(gn - 1.0).max() < 1e-12
    assert chart.weights.min() > 0
    expect = 2.0 * math.pi * m.radius_m * math.sqrt(2.0)
    assert abs(chart.total_length - expect) < 1e-10


def test_second_fundamental_form_flat_circles():
    m = euclidean_metric(n=64)
    for radius in (m.radius_m, m.grid.radius_m1):
        chart = m.boundary_chart(radius)
        pi_vals = m.second_fundamental_form(chart)
        assert np.abs(pi_vals - 1.0 / radius).max() < 1e-10


def test_interpolation_reproduces_nodes_and_quadratics():
    m = bump_metric(0.1, center=(0.0, 0.1), width=0.4, n=48)
    g = m.grid
    vals = g.X**2 - 0.5 * g.X * g.Y + 2.0 * g.Y**2 + 0.3 * g.X - 1.0
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1.1, 1.1, (50, 2))
    exact = pts[:, 0] ** 2 - 0.5 * pts[:, 0] * pts[:, 1] + 2.0 * pts[:, 1] ** 2 + 0.3 * pts[:, 0] - 1.0
    assert np.abs(g.interp(vals, pts) - exact).max() < 1e-12
    # node reproduction
    sub = np.stack([g.X[7:40:3, 9:41:4].ravel(), g.Y[7:40:3, 9:41:4].ravel()], axis=-1)
    got = g.interp(vals, sub)
    want = vals[7:40:3, 9:41:4].ravel()
    assert np.abs(got - want).max() < 1e-12


def test_scalar_field_closure_evaluation():
    m = bump_metric(0.1, center=(0.2, -0.1), width=0.3, n=48)
    fld = bump_field(m, 0.7, center=(-0.1, 0.2), width=0.5)
    pts = np.array([[0.0, 0.0], [-0.1, 0.2], [0.5, 0.5]])
    exact = fld(pts, exact=True)
    interp = fld(pts)
    assert np.abs(exact - interp).max() < 1e-3
    z = zero_field(m)
    assert np.abs(z.values).max() == 0.0


def test_norms_against_closed_forms():
    m = euclidean_metric(n=256)
    g = m.grid
    ones = np.ones_like(g.X)
    assert abs(m.l2_norm(ones) - math.sqrt(math.pi) * m.radius_m) < 1e-12
    # h1 norm of a linear field a*x: grad = a, |f|_H1^2 = (a^2/2 + a^2) * pi R^2
    # integral of x^2 over the unit disk is pi/4
    lin = 0.7 * g.X
    want = math.sqrt(0.7**2 * math.pi / 4.0 + 0.7**2 * math.pi * m.radius_m**2)
    assert abs(m.h1_norm(lin) - want) < 2e-3


def test_c1_deviation_flat_and_bump():
    assert euclidean_metric(n=32).c1_deviation() == 0.0
    m = bump_metric(0.05, center=(0.0, 0.0), width=0.8, n=64)
    dev = m.c1_deviation()
    assert 0.05 <= dev < 0.2


def test_metric_from_config_forms():
    m = metric_from_config({"form": "constant", "value": 1.5, "n": 24})
    assert abs(m.c_at(np.zeros((1, 2)))[0] - 1.5) < 1e-14
    cfg = {
        "form": "bump",
        "amplitude": 0.1,
        "center_x": 0.2,
        "center_y": -0.1,
        "width": 0.3,
        "n": 32,
    }
    m2 = metric_from_config(cfg)
    ref = bump_metric(0.1, center=(0.2, -0.1), width=0.3, n=32)
    assert np.abs(m2.c - ref.c).max() == 0.0
    m3 = metric_from_config({"form": "sphere", "n": 24})
    assert abs(m3.gauss_curvature_at(np.array([[0.1, 0.0]]))[0] - 1.0) < 1e-10
