"""Ray transform, adjoint, normal operator and regularized inversion."""
from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from schrotomo import xray
from schrotomo._interp import interp2
from schrotomo.geometry import bump_field, bump_metric, euclidean_metric


@pytest.fixture(scope="module")
def flat():
    return euclidean_metric(n=64)


@pytest.fixture(scope="module")
def flat_op(flat):
    return xray.RayTransform(flat, xray.FanBeamGrid.build(flat, 64, 64))


@pytest.fixture(scope="module")
def flat_op_fine(flat):
    # 128x128 fan; the 64x64 fan aliases against the 64-node grid in
    # splatting-side checks, the finer fan does not
    return xray.RayTransform(flat, xray.FanBeamGrid.build(flat, 128, 128))


@pytest.fixture(scope="module")
def curved_op():
    metric = bump_metric(0.05, (0.15, 0.1), 0.5, n=64)
    return xray.RayTransform(metric, xray.FanBeamGrid.build(metric, 16, 32))


def test_fan_grid_measure_and_invariants(flat):
    fan = xray.FanBeamGrid.build(flat, 64, 64)
    assert np.all(fan.mu > 0.0) and np.all(fan.mu <= 1.0)
    assert fan.cell_weight > 0.0
    assert np.all(fan.mu_weights() > 0.0)
    total = fan.total_measure()
    continuum = 4.0 * math.pi * fan.radius
    assert abs(total - continuum) / continuum < 1e-3
    # directions are Euclidean-unit and inward
    dirs = fan.directions()
    assert np.abs(np.linalg.norm(dirs, axis=-1) - 1.0).max() < 1e-14
    inward = np.einsum("ij,itj->it", fan.normals_in, dirs)
    assert np.all(inward > 0.0)


def test_constant_field_integrates_to_chord_length(flat, flat_op):
    g = flat.grid
    ones = flat.field(np.ones((g.n, g.n)))
    d = flat_op.transform(ones)
    # integral of 1 equals the exit time, which equals the straight chord
    # -2 <y, theta> for every fan ray of the flat disk
    assert np.abs(d.values - flat_op.taus).max() < 1e-12
    fan = flat_op.grid
    chords = -2.0 * np.einsum("ij,itj->it", fan.sources, fan.directions())
    assert np.abs(d.values - chords).max() < 1e-10
    # the diametral and oblique chords specifically
    assert np.abs(d.values - 2.0 * fan.radius * np.cos(fan.betas)[None, :]).max() < 1e-10


def test_gaussian_matches_adaptive_quadrature(flat):
    sigma = 0.2
    f = flat.field_from_closure(
        lambda p: np.exp(-(p[..., 0] ** 2 + p[..., 1] ** 2) / (2.0 * sigma**2))
    )
    fan = xray.FanBeamGrid.build(flat, 4, 16)
    op = xray.RayTransform(flat, fan)
    d = op.transform(f, mode="exact")
    dirs = fan.directions()
    worst = 0.0
    for i in range(fan.n_y):
        for j in range(fan.n_theta):
            y, th = fan.sources[i], dirs[i, j]
            chord = 2.0 * fan.radius * math.cos(fan.betas[j])

            def along(s):
                px, py = y[0] + s * th[0], y[1] + s * th[1]
                return math.exp(-(px * px + py * py) / (2.0 * sigma**2))

            ref, _ = quad(along, 0.0, chord, limit=200)
            worst = max(worst, abs(ref - d.values[i, j]))
    assert worst < 1e-8


def test_grid_mode_tracks_exact_mode(flat):
    sigma = 0.2
    f = flat.field_from_closure(
        lambda p: np.exp(-(p[..., 0] ** 2 + p[..., 1] ** 2) / (2.0 * sigma**2))
    )
    fan = xray.FanBeamGrid.build(flat, 4, 16)
    op = xray.RayTransform(flat, fan)
    d_grid = op.transform(f, mode="grid")
    d_exact = op.transform(f, mode="exact")
    assert np.abs(d_grid.values - d_exact.values).max() < 5e-5


def test_rays_missing_support_give_exact_zero(flat, flat_op):
    f = bump_field(flat, 1.0, (0.5, 0.0), 0.2)
    d = flat_op.transform(f)
    fan = flat_op.grid
    left = np.argmin(np.abs(fan.source_angles - math.pi))
    row = d.values[left]
    far = np.abs(fan.betas) > 0.5
    assert np.all(row[far] == 0.0)
    assert np.any(row != 0.0)
    assert np.all(np.isfinite(d.values))


def test_adjoint_of_ones_is_full_angle(flat, flat_op_fine):
    fan = flat_op_fine.grid
    out = flat_op_fine.adjoint(xray.RayData(fan, np.ones((fan.n_y, fan.n_theta))))
    g = flat.grid
    interior = g.rho < 0.8 * flat.radius_m
    full = 2.0 * math.pi
    assert abs(out.values[interior].mean() - full) / full < 1e-4
    assert np.abs(out.values[interior] - full).max() / full < 1e-2
    zero = flat_op_fine.adjoint(xray.RayData(fan, np.zeros((fan.n_y, fan.n_theta))))
    assert np.all(zero.values == 0.0)


def test_adjoint_pairing_is_exact(flat, flat_op):
    rng = np.random.default_rng(0)
    g = flat.grid
    fan = flat_op.grid
    f = rng.standard_normal((g.n, g.n)) * g.mask_m
    d = rng.standard_normal((fan.n_y, fan.n_theta))
    lhs = fan.inner(flat_op.transform(f).values, d)
    rhs = flat.l2_inner(f, flat_op.adjoint(xray.RayData(fan, d)).values, region="m1")
    assert abs(lhs - rhs) / abs(lhs) < 1e-12


def test_explicit_matrices_are_transposes():
    metric = euclidean_metric(n=16)
    fan = xray.FanBeamGrid.build(metric, 8, 8)
    op = xray.RayTransform(metric, fan)
    M = op.matrix.toarray()
    A = np.zeros((metric.grid.n**2, fan.n_rays))
    for k in range(fan.n_rays):
        unit = np.zeros(fan.n_rays)
        unit[k] = 1.0
        A[:, k] = op.adjoint(xray.RayData(fan, unit.reshape(fan.n_y, fan.n_theta))).values.ravel()
    weights_cell = op._wcell
    weights_ray = fan.mu_weights().ravel()
    carries = weights_cell > 0
    lhs = weights_cell[:, None] * A
    rhs = M.T * weights_ray[None, :]
    # the identity W A = M^T D holds entrywise on every node that carries
    # quadrature weight; the remaining nodes lie outside the observation
    # disk, where the adjoint is zero by convention
    assert np.abs(lhs[carries] - rhs[carries]).max() < 1e-10
    outside = metric.grid.cell_areas(metric.grid.radius_m1).ravel() == 0.0
    assert np.array_equal(~carries, outside)


def test_normal_operator_self_adjoint_psd(flat, flat_op):
    rng = np.random.default_rng(1)
    g = flat.grid
    u = rng.standard_normal((g.n, g.n)) * g.mask_m
    v = rng.standard_normal((g.n, g.n)) * g.mask_m
    Nu = flat_op.normal_apply(u).values
    Nv = flat_op.normal_apply(v).values
    a = flat.l2_inner(u, Nv, region="m1")
    b = flat.l2_inner(Nu, v, region="m1")
    assert abs(a - b) / abs(a) < 1e-10
    assert float(np.real(flat.l2_inner(Nu, u, region="m1"))) >= 0.0
    zero = flat_op.normal_apply(flat.field(np.zeros((g.n, g.n))))
    assert np.all(zero.values == 0.0)


def test_normal_of_centered_gaussian_is_radial(flat, flat_op_fine):
    sigma = 0.25
    f = flat.field_from_closure(
        lambda p: np.exp(-(p[..., 0] ** 2 + p[..., 1] ** 2) / (2.0 * sigma**2))
    )
    out = flat_op_fine.normal_apply(f).values
    g = flat.grid
    angles = np.linspace(0.0, 2.0 * math.pi, 65)[:-1]
    peak = out.max()
    for r in (0.2, 0.4, 0.6, 0.8):
        ring = r * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        vals = interp2(out, g.xs[0], g.h, ring)
        assert (vals.max() - vals.min()) / peak < 1e-2


def test_invert_recovers_smooth_bump(flat, flat_op):
    f0 = bump_field(flat, 0.8, (0.2, -0.1), 0.45)
    d = flat_op.transform(f0)
    rec, report = flat_op.invert(d, iters=200)
    err = flat.l2_norm(rec.values - f0.values) / flat.l2_norm(f0.values)
    assert err < 0.05
    assert report["lambda"] > 0.0
    assert report["residuals"][-1] < report["residuals"][0]
    # reconstruction stays supported in the target disk
    assert np.all(rec.values[~flat.grid.mask_m] == 0.0)


def test_invert_zero_data_and_linearity(flat, flat_op):
    fan = flat_op.grid
    zero, _ = flat_op.invert(xray.RayData(fan, np.zeros((fan.n_y, fan.n_theta))), iters=50)
    assert np.abs(zero.values).max() == 0.0
    f0 = bump_field(flat, 0.8, (0.2, -0.1), 0.45)
    d = flat_op.transform(f0)
    one, _ = flat_op.invert(d, iters=200)
    scaled, _ = flat_op.invert(xray.RayData(fan, 2.5 * d.values), iters=200)
    drift = np.abs(scaled.values - 2.5 * one.values).max() / (2.5 * np.abs(one.values).max())
    assert drift < 1e-4


def test_curved_metric_transform_and_adjoint(curved_op):
    metric = curved_op.metric
    g = metric.grid
    fan = curved_op.grid
    ones = metric.field(np.ones((g.n, g.n)))
    d = curved_op.transform(ones)
    assert np.abs(d.values - curved_op.taus).max() < 1e-12
    rng = np.random.default_rng(3)
    f = rng.standard_normal((g.n, g.n)) * g.mask_m
    w = rng.standard_normal((fan.n_y, fan.n_theta))
    lhs = fan.inner(curved_op.transform(f).values, w)
    rhs = metric.l2_inner(f, curved_op.adjoint(xray.RayData(fan, w)).values, region="m1")
    assert abs(lhs - rhs) / abs(lhs) < 1e-12
    full = curved_op.adjoint(xray.RayData(fan, np.ones((fan.n_y, fan.n_theta))))
    interior = g.rho < 0.6 * metric.radius_m
    assert abs(full.values[interior].mean() - 2.0 * math.pi) / (2.0 * math.pi) < 0.02


def test_smoothing_and_coercivity_report(flat_op):
    report = xray.smoothing_report(flat_op, n_samples=20, seed=0)
    assert 0.0 < report["c1"] <= report["c2"] < math.inf
    assert report["n_samples"] == 20
    for growth in report["ratio_growth_per_doubling"]:
        assert growth < 1.2


def test_sinogram_csv_and_report_json(tmp_path, flat, flat_op):
    f0 = bump_field(flat, 0.8, (0.2, -0.1), 0.45)
    d = flat_op.transform(f0)
    path = tmp_path / "sinogram.csv"
    xray.sinogram_csv(path, flat_op.grid, d)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["i", "j", "arclength", "angle", "mu", "value"]
    fan = flat_op.grid
    assert len(rows) == 1 + fan.n_rays
    k = 1 + 5 * fan.n_theta + 7
    assert rows[k][0] == "5" and rows[k][1] == "7"
    assert float(rows[k][2]) == fan.radius * fan.source_angles[5]
    assert float(rows[k][3]) == fan.betas[7]
    assert float(rows[k][4]) == fan.mu[7]
    assert float(rows[k][5]) == d.values[5, 7]

    rec, report = flat_op.invert(d, iters=30)
    smoothing = xray.smoothing_report(flat_op, n_samples=5, seed=1)
    jpath = tmp_path / "report.json"
    xray.inversion_report_json(jpath, report, smoothing)
    payload = json.loads(jpath.read_text())
    assert payload["c1"] > 0.0 and payload["c2"] >= payload["c1"]
    assert len(payload["residuals"]) == report["iterations"]
    assert payload["lambda"] == report["lambda"]
