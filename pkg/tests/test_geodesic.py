"""Tests for geodesic tracing, polar charts and simplicity diagnostics."""
from __future__ import annotations

import math

import numpy as np
import pytest

from schrotomo.geometry import bump_metric, euclidean_metric, sphere_metric
from schrotomo import geodesic as gd


def _fan_frame(angle: float):
    n_in = -np.array([math.cos(angle), math.sin(angle)])
    t_hat = np.array([-n_in[1], n_in[0]])
    return n_in, t_hat


def test_flat_diametral_chord():
    m = euclidean_metric(n=48)
    R1 = m.grid.radius_m1
    path = gd.trace(m, [R1, 0.0], [-1.0, 0.0])
    assert abs(path.tau_plus - 2.0 * R1) < 1e-10
    assert np.abs(path.exit_point - [-R1, 0.0]).max() < 1e-10


def test_flat_oblique_chord_formula():
    # straight ray from y on the circle: exit time is -2 <y, theta>
    m = euclidean_metric(n=48)
    R1 = m.grid.radius_m1
    y = np.array([R1, 0.0])
    theta = np.array([-1.0, 1.0]) / math.sqrt(2.0)
    path = gd.trace(m, y, theta)
    assert abs(path.tau_plus - (-2.0 * y @ theta)) < 1e-10
    assert abs(path.tau_plus - R1 * math.sqrt(2.0)) < 1e-10


def test_flat_paths_are_affine():
    m = euclidean_metric(n=48)
    R1 = m.grid.radius_m1
    path = gd.trace(m, [R1, 0.0], [-1.0, 0.37])
    chord = path.exit_point - path.points[0]
    t = ((path.points - path.points[0]) @ chord) / (chord @ chord)
    dev = path.points - (path.points[0] + t[:, None] * chord)
    assert np.abs(dev).max() < 1e-10


def test_unit_speed_preserved_on_bump_fan():
    m = bump_metric(0.15, center=(0.2, -0.1), width=0.35, n=48)
    R1 = m.grid.radius_m1
    worst = 0.0
    for a in np.linspace(0.0, 2.0 * math.pi, 7)[:-1]:
        n_in, t_hat = _fan_frame(a)
        y = -R1 * n_in
        for b in (-0.8, -0.3, 0.0, 0.45, 0.9):
            d = math.cos(b) * n_in + math.sin(b) * t_hat
            path = gd.trace(m, y, d, step=0.01)
            worst = max(worst, path.speed_error())
    assert worst < 1e-8


def test_exit_point_on_circle():
    m = bump_metric(0.15, center=(0.2, -0.1), width=0.35, n=48)
    R1 = m.grid.radius_m1
    path = gd.trace(m, [R1, 0.0], [-1.0, 0.3])
    assert abs(np.hypot(*path.exit_point) - R1) < 1e-10


def test_half_step_self_convergence():
    m = bump_metric(0.15, center=(0.2, -0.1), width=0.35, n=48)
    R1 = m.grid.radius_m1
    p1 = gd.trace(m, [R1, 0.0], [-1.0, 0.2], step=0.01)
    p2 = gd.trace(m, [R1, 0.0], [-1.0, 0.2], step=0.005)
    assert abs(p1.tau_plus - p2.tau_plus) < 1e-7
    assert np.abs(p1.exit_point - p2.exit_point).max() < 1e-7


def test_time_reversal():
    m = bump_metric(0.15, center=(0.2, -0.1), width=0.35, n=48)
    R1 = m.grid.radius_m1
    path = gd.trace(m, [R1, 0.0], [-1.0, 0.2], step=0.01)
    back = gd.trace(m, path.exit_point, -path.exit_velocity, step=0.01)
    assert np.abs(back.exit_point - [R1, 0.0]).max() < 1e-6


def test_exit_time_shortcut():
    m = euclidean_metric(n=48)
    R1 = m.grid.radius_m1
    assert abs(gd.exit_time(m, [R1, 0.0], [-1.0, 0.0]) - 2.0 * R1) < 1e-10


def test_non_exiting_fan_raises():
    m = euclidean_metric(n=48)
    R1 = m.grid.radius_m1
    with pytest.raises(RuntimeError, match="exit"):
        gd.trace_fan(
            m,
            np.array([[R1, 0.0]]),
            np.array([[-1.0, 0.0]]),
            step=0.01,
            stop_radius=R1,
            max_length=0.5 * R1,
        )


def test_flat_jacobi_alpha_is_r_squared():
    m = euclidean_metric(n=48)
    R1 = m.grid.radius_m1
    path = gd.trace(m, [R1, 0.0], [-1.0, 0.1], jacobi=True)
    assert np.abs(path.jacobi**2 - path.s**2).max() < 1e-8


def test_flat_polar_chart_values():
    m = euclidean_metric(n=96)
    R1 = m.grid.radius_m1
    chart = gd.polar_chart(m, source_angle=0.3)
    betas = chart.betas[::7]
    assert np.abs(chart.alpha(np.full_like(betas, 1.5), betas) - 2.25).max() < 1e-10
    r0, _, ok = chart.coords_at(np.zeros((1, 2)))
    assert ok[0] and abs(r0[0] - R1) < 1e-8
    mm = chart.chart_mask
    pts = np.stack([m.grid.X[mm], m.grid.Y[mm]], axis=-1)
    exact = np.linalg.norm(pts - chart.source, axis=-1)
    assert np.abs(chart.r_of_x[mm] - exact).max() < 1e-8
    r, beta, alpha, dalpha = chart.amplitude_inputs()
    # alpha is exactly the square of the chart radius for the flat metric;
    # against the true distance it carries the chart Newton tolerance
    assert np.abs(alpha[mm] - chart.r_of_x[mm] ** 2).max() < 1e-10
    assert np.abs(alpha[mm] - exact**2).max() < 1e-7
    assert np.abs(dalpha[mm] - 2.0 * exact).max() < 1e-7


def test_chart_distance_matches_shooting_oracle():
    m = bump_metric(0.1, center=(0.2, -0.1), width=0.3, n=96)
    chart = gd.polar_chart(m, source_angle=0.3)
    rng = np.random.default_rng(7)
    pts = []
    while len(pts) < 20:
        p = rng.uniform(-m.radius_m, m.radius_m, 2)
        if np.hypot(*p) < 0.95 * m.radius_m:
            pts.append(p)
    pts = np.array(pts)
    r_chart, _, ok = chart.coords_at(pts)
    assert ok.all()
    for p, rc in zip(pts, r_chart):
        dist, _ = gd.connect(m, chart.source, p)
        assert abs(dist - rc) < 1e-5


def test_chart_alpha_positive_on_mask():
    m = bump_metric(0.1, center=(0.2, -0.1), width=0.3, n=48)
    chart = gd.polar_chart(m, source_angle=-1.1)
    _, _, alpha, _ = chart.amplitude_inputs()
    assert np.all(alpha[chart.chart_mask] > 0)
    assert not chart.conjugate


def test_simplicity_flat_disk():
    m = euclidean_metric(n=48)
    rep = gd.simplicity_report(m, n_sources=3, n_dirs=9)
    assert rep["simple"]
    assert not rep["conjugate_points"]
    assert rep["trapped_rays"] == 0
    assert abs(rep["second_fundamental_min"] - 1.0 / m.grid.radius_m1) < 1e-10


def test_simplicity_mild_bump():
    m = bump_metric(0.03, center=(0.0, 0.0), width=0.8, n=48)
    assert m.c1_deviation() <= 0.1
    rep = gd.simplicity_report(m, n_sources=4, n_dirs=17)
    assert rep["simple"]


def test_sphere_conjugate_point_near_pi():
    m = sphere_metric(n=48)
    rep = gd.simplicity_report(m, n_sources=4, n_dirs=17)
    assert rep["conjugate_points"]
    assert not rep["simple"]
    assert not rep["convex_boundary"]
    assert abs(rep["conjugate_radius"] - math.pi) < 1e-4


def test_sphere_chart_refuses_conjugate_rays():
    m = sphere_metric(n=48)
    with pytest.raises((RuntimeError, ValueError)):
        gd.polar_chart(m, source_angle=0.0)
