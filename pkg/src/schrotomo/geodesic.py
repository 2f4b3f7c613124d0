"""Geodesic tracing, polar charts and simplicity diagnostics.

Geodesics of the conformal metric are integrated with a fixed-step RK4 in
unit g-speed parameterization, so the curve parameter is Riemannian
arclength.  The linearized (Jacobi) equation J'' + K J = 0 rides along the
same integrator; the polar volume density of the metric in geodesic polar
coordinates around a source point is alpha = J^2, which is what the probe
amplitudes consume.

Exit crossings through the observation circle are refined by bisection on
a fractional RK4 substep, so exit times are accurate to the integrator's
own order rather than to one full step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .geometry import MetricField

__all__ = [
    "GeodesicPath",
    "PolarChart",
    "trace",
    "exit_time",
    "trace_fan",
    "polar_chart",
    "connect",
    "simplicity_report",
]

_TRAPPED_FACTOR = 10.0  # rays longer than this times the diameter are trapped
_EXIT_TOL = 1e-10
_CONJUGATE_TOL = 1e-6


def _rk4_step(metric: MetricField, x, v, dt, jac=None, curv=None):
    """One RK4 step of the geodesic (and optional Jacobi) system.

    dt may be an array broadcasting against the ray axis.
    """

    def rhs(xx, vv):
        return vv, metric.geodesic_acceleration(xx, vv)

    k1x, k1v = rhs(x, v)
    k2x, k2v = rhs(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
    k3x, k3v = rhs(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
    k4x, k4v = rhs(x + dt * k3x, v + dt * k3v)
    xn = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    vn = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    if jac is None:
        return xn, vn, None
    J, dJ = jac
    dts = dt[..., 0] if np.ndim(dt) > 1 else dt

    def jrhs(xx, jj, dj):
        return dj, -curv(xx) * jj

    l1j, l1d = jrhs(x, J, dJ)
    l2j, l2d = jrhs(x + 0.5 * dt * k1x, J + 0.5 * dts * l1j, dJ + 0.5 * dts * l1d)
    l3j, l3d = jrhs(x + 0.5 * dt * k2x, J + 0.5 * dts * l2j, dJ + 0.5 * dts * l2d)
    l4j, l4d = jrhs(x + dt * k3x, J + dts * l3j, dJ + dts * l3d)
    Jn = J + dts / 6.0 * (l1j + 2 * l2j + 2 * l3j + l4j)
    dJn = dJ + dts / 6.0 * (l1d + 2 * l2d + 2 * l3d + l4d)
    return xn, vn, (Jn, dJn)


def _trace_bundle(
    metric: MetricField,
    x0: np.ndarray,
    v0: np.ndarray,
    step: float,
    stop_radius: float,
    max_length: float,
    want_jacobi: bool = False,
):
    """Integrate a bundle of rays, recording each first exit crossing.

    Rays keep integrating after their own exit until every ray has crossed
    (polar charts need the full parameter rectangle); the recorded crossing
    is always the first one.  Returns padded sample arrays plus refined
    exit data.  Rays that never reach ``stop_radius`` within ``max_length``
    come back flagged trapped.
    """
    k = x0.shape[0]
    n_steps = int(math.ceil(max_length / step))
    curv = metric.gauss_curvature_at if want_jacobi else None

    P = np.empty((k, n_steps + 1, 2))
    V = np.empty((k, n_steps + 1, 2))
    P[:, 0] = x0
    V[:, 0] = v0
    if want_jacobi:
        Jarr = np.empty((k, n_steps + 1))
        dJarr = np.empty((k, n_steps + 1))
        Jarr[:, 0] = 0.0
        dJarr[:, 0] = 1.0
    cross_idx = np.full(k, -1, dtype=np.int64)
    x, v = x0.copy(), v0.copy()
    J = np.zeros(k)
    dJ = np.ones(k)
    # sources may sit exactly on the stop circle; tolerate rounding there
    r_prev = np.hypot(x[:, 0], x[:, 1]) * (1.0 - 1e-13)
    # exited rays keep integrating so charts get their full parameter
    # rectangle, but far past the stop circle they are pinned in place:
    # for globally defined factors (sphere) the Euclidean coordinates of
    # continued geodesics would blow up
    freeze_radius = 3.0 * stop_radius + 2.0
    last_full = n_steps
    for i in range(n_steps):
        jac = (J, dJ) if want_jacobi else None
        xn, vn, jacn = _rk4_step(metric, x, v, step, jac, curv)
        # project back onto the unit sphere bundle; keeps |v|_g = 1 to
        # rounding at any step while leaving the position order untouched
        speed = np.sqrt(metric.c_at(xn)) * np.hypot(vn[:, 0], vn[:, 1])
        vn = vn / speed[:, None]
        rn = np.hypot(xn[:, 0], xn[:, 1])
        newly = (r_prev <= stop_radius) & (rn > stop_radius) & (cross_idx < 0)
        cross_idx[newly] = i
        stuck = (cross_idx >= 0) & (rn > freeze_radius)
        if np.any(stuck):
            xn[stuck] = x[stuck]
            vn[stuck] = v[stuck]
            rn[stuck] = r_prev[stuck]
            if want_jacobi:
                jacn[0][stuck] = J[stuck]
                jacn[1][stuck] = dJ[stuck]
        r_prev = rn
        x, v = xn, vn
        P[:, i + 1] = x
        V[:, i + 1] = v
        if want_jacobi:
            J, dJ = jacn
            Jarr[:, i + 1] = J
            dJarr[:, i + 1] = dJ
        if np.all(cross_idx >= 0):
            last_full = i + 1
            break
    trapped = cross_idx < 0
    P = P[:, : last_full + 1]
    V = V[:, : last_full + 1]
    out = {
        "step": step,
        "points": P,
        "velocities": V,
        "trapped": trapped,
        "cross_index": cross_idx,
    }
    if want_jacobi:
        out["jacobi"] = Jarr[:, : last_full + 1]
        out["jacobi_rate"] = dJarr[:, : last_full + 1]

    # refine the exit crossing by bisection on a fractional RK4 substep
    hit = ~trapped
    if np.any(hit):
        idx = cross_idx[hit]
        xa = P[hit, idx]
        va = V[hit, idx]
        lo = np.zeros(idx.size)
        hi = np.ones(idx.size)
        for _ in range(48):
            mid = 0.5 * (lo + hi)
            xm, _, _ = _rk4_step(metric, xa, va, (mid * step)[:, None])
            outside = np.hypot(xm[:, 0], xm[:, 1]) > stop_radius
            hi = np.where(outside, mid, hi)
            lo = np.where(outside, lo, mid)
        frac = 0.5 * (lo + hi)
        xe, ve, _ = _rk4_step(metric, xa, va, (frac * step)[:, None])
        ve = ve / (np.sqrt(metric.c_at(xe)) * np.hypot(ve[:, 0], ve[:, 1]))[:, None]
        tau = np.full(k, np.nan)
        tau[hit] = (idx + frac) * step
        exit_p = np.full((k, 2), np.nan)
        exit_v = np.full((k, 2), np.nan)
        exit_p[hit] = xe
        exit_v[hit] = ve
        out["tau_plus"] = tau
        out["exit_points"] = exit_p
        out["exit_velocities"] = exit_v
    else:
        out["tau_plus"] = np.full(k, np.nan)
        out["exit_points"] = np.full((k, 2), np.nan)
        out["exit_velocities"] = np.full((k, 2), np.nan)
    return out


def _trace_fixed(
    metric: MetricField,
    x0: np.ndarray,
    v0: np.ndarray,
    step: float,
    n_steps: int,
    want_jacobi: bool = False,
):
    """Integrate a bundle for a fixed number of steps, no exit logic."""
    k = x0.shape[0]
    curv = metric.gauss_curvature_at if want_jacobi else None
    P = np.empty((k, n_steps + 1, 2))
    V = np.empty((k, n_steps + 1, 2))
    P[:, 0] = x0
    V[:, 0] = v0
    J = np.zeros(k)
    dJ = np.ones(k)
    if want_jacobi:
        Jarr = np.empty((k, n_steps + 1))
        dJarr = np.empty((k, n_steps + 1))
        Jarr[:, 0] = 0.0
        dJarr[:, 0] = 1.0
    x, v = x0.copy(), v0.copy()
    for i in range(n_steps):
        jac = (J, dJ) if want_jacobi else None
        x, v, jacn = _rk4_step(metric, x, v, step, jac, curv)
        speed = np.sqrt(metric.c_at(x)) * np.hypot(v[:, 0], v[:, 1])
        v = v / speed[:, None]
        P[:, i + 1] = x
        V[:, i + 1] = v
        if want_jacobi:
            J, dJ = jacn
            Jarr[:, i + 1] = J
            dJarr[:, i + 1] = dJ
    out = {"points": P, "velocities": V, "step": step}
    if want_jacobi:
        out["jacobi"] = Jarr
        out["jacobi_rate"] = dJarr
    return out


def _hermite_uniform(samples, rates, step, s):
    """Cubic Hermite on a uniform sample grid, one query per row.

    samples, rates: (k, m) or (k, m, 2); s: (k,).
    """
    m = samples.shape[1]
    j = np.clip((s / step).astype(np.int64), 0, m - 2)
    t = s / step - j
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    ar = np.arange(samples.shape[0])
    if samples.ndim == 3:
        h00, h10, h01, h11 = (z[:, None] for z in (h00, h10, h01, h11))
    ya, yb = samples[ar, j], samples[ar, j + 1]
    da, db = rates[ar, j], rates[ar, j + 1]
    return h00 * ya + h10 * step * da + h01 * yb + h11 * step * db


@dataclass
class GeodesicPath:
    """A single traced geodesic in arclength parameterization."""

    s: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    tau_plus: float
    exit_point: np.ndarray
    exit_velocity: np.ndarray
    trapped: bool
    metric: MetricField
    jacobi: np.ndarray | None = None
    jacobi_rate: np.ndarray | None = None

    def speed_error(self) -> float:
        """Max deviation of |gamma'|_g from 1 along the stored samples."""
        sp = self.metric.g_norm(self.points, self.velocities)
        return float(np.abs(sp - 1.0).max())

    def position(self, s: np.ndarray) -> np.ndarray:
        """Cubic Hermite interpolation of the path at arclengths s."""
        return _hermite_eval(
            self.points[None], self.velocities[None], self.s[None], np.atleast_1d(s)[None]
        )[0]


def _hermite_eval(P, V, nodes_s, s_query):
    """Piecewise cubic Hermite position evaluation, vectorized per ray.

    P, V: (k, m, 2); nodes_s: (k, m) increasing; s_query: (k, q).
    """
    k, m, _ = P.shape
    sq = np.clip(s_query, nodes_s[:, :1], nodes_s[:, -1:])
    # locate intervals (uniform except possibly the last one)
    idx = np.empty(sq.shape, dtype=np.int64)
    for i in range(k):  # searchsorted per ray; k is small or q dominates
        idx[i] = np.searchsorted(nodes_s[i], sq[i], side="right") - 1
    np.clip(idx, 0, m - 2, out=idx)
    ar = np.arange(k)[:, None]
    sa = nodes_s[ar, idx]
    sb = nodes_s[ar, idx + 1]
    w = np.maximum(sb - sa, 1e-300)
    t = (sq - sa) / w
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    Pa = P[ar, idx]
    Pb = P[ar, idx + 1]
    Va = V[ar, idx]
    Vb = V[ar, idx + 1]
    return (
        h00[..., None] * Pa
        + (h10 * w)[..., None] * Va
        + h01[..., None] * Pb
        + (h11 * w)[..., None] * Vb
    )


def _normalize_direction(metric: MetricField, x0, direction):
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    c = metric.c_at(x0)
    return d / np.sqrt(c)[..., None]


def trace(
    metric: MetricField,
    x0,
    direction,
    step: float | None = None,
    stop_radius: float | None = None,
    jacobi: bool = False,
) -> GeodesicPath:
    """Trace one unit-speed geodesic until it exits the observation disk.

    Parameters
    ----------
    x0 : starting point (2,).
    direction : initial direction (Euclidean components; normalized to unit
        g-length internally).
    step : RK4 arclength step, default 0.01 * radius_m.
    stop_radius : exit circle, default the M1 radius.
    jacobi : also integrate the Jacobi field J(0)=0, J'(0)=1.

    Raises
    ------
    RuntimeError
        If the ray exceeds ten diameters without exiting (trapped).
    """
    x0 = np.asarray(x0, dtype=float)[None]
    v0 = _normalize_direction(metric, x0, np.asarray(direction, dtype=float)[None])
    step = step if step is not None else 0.01 * metric.radius_m
    R = stop_radius if stop_radius is not None else metric.grid.radius_m1
    max_length = _TRAPPED_FACTOR * 2.0 * R
    out = _trace_bundle(metric, x0, v0, step, R, max_length, want_jacobi=jacobi)
    if out["trapped"][0]:
        raise RuntimeError("geodesic exceeded the trapped-ray length bound")
    m = out["points"].shape[1]
    return GeodesicPath(
        s=np.arange(m) * step,
        points=out["points"][0],
        velocities=out["velocities"][0],
        tau_plus=float(out["tau_plus"][0]),
        exit_point=out["exit_points"][0],
        exit_velocity=out["exit_velocities"][0],
        trapped=False,
        metric=metric,
        jacobi=out.get("jacobi", [None])[0],
        jacobi_rate=out.get("jacobi_rate", [None])[0],
    )


def exit_time(metric: MetricField, x0, direction, **kw) -> float:
    """Arclength to the exit through the observation circle."""
    return trace(metric, x0, direction, **kw).tau_plus


def trace_fan(
    metric: MetricField,
    sources: np.ndarray,
    directions: np.ndarray,
    step: float,
    stop_radius: float,
    max_length: float | None = None,
):
    """Vectorized bundle tracing for fans; see ``_trace_bundle``.

    Directions are Euclidean-normalized on input and rescaled to g-unit.
    Trapped rays raise, since transform fans require full exit data.
    """
    v0 = _normalize_direction(metric, sources, directions)
    if max_length is None:
        max_length = 4.0 * stop_radius + metric.radius_m
    out = _trace_bundle(metric, sources, v0, step, stop_radius, max_length)
    if np.any(out["trapped"]):
        n_bad = int(out["trapped"].sum())
        raise RuntimeError(f"{n_bad} fan rays failed to exit within {max_length:.3g}")
    return out


# ---------------------------------------------------------------------------
# polar charts
# ---------------------------------------------------------------------------


@dataclass
class PolarChart:
    """Geodesic polar coordinates around a source on the observation circle.

    Holds the traced fan (positions, Jacobi field) on a rectangular
    (r, beta) parameter grid, spline accelerators for evaluation, the
    refined exit times, and the Newton inversion of the exponential map
    onto the Cartesian grid: fields ``r_of_x``/``beta_of_x`` defined on the
    chart mask (the target disk plus a small ring).
    """

    metric: MetricField
    source_angle: float
    source: np.ndarray
    normal_in: np.ndarray
    tangent: np.ndarray
    betas: np.ndarray
    rs: np.ndarray
    positions: np.ndarray  # (nr, nb, 2)
    jacobi: np.ndarray  # (nr, nb)
    jacobi_rate: np.ndarray
    tau_plus: np.ndarray  # (nb,)
    r_of_x: np.ndarray
    beta_of_x: np.ndarray
    chart_mask: np.ndarray
    conjugate: bool
    min_jacobi_ratio: float
    _splines: dict
    _alpha_cache: tuple | None = None

    # -- coordinate evaluation ------------------------------------------------

    def direction(self, beta: np.ndarray) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        return (
            np.cos(beta)[..., None] * self.normal_in + np.sin(beta)[..., None] * self.tangent
        )

    def point(self, r, beta) -> np.ndarray:
        """Exponential-map position at (r, beta) via the fan splines."""
        px = self._splines["px"](r, beta, grid=False)
        py = self._splines["py"](r, beta, grid=False)
        return np.stack([px, py], axis=-1)

    def alpha(self, r, beta) -> np.ndarray:
        """Squared polar volume density alpha(r, beta) = J^2."""
        return self._splines["J"](r, beta, grid=False) ** 2

    def dalpha_dr(self, r, beta) -> np.ndarray:
        J = self._splines["J"](r, beta, grid=False)
        dJ = self._splines["dJ"](r, beta, grid=False)
        return 2.0 * J * dJ

    def jacobi_at(self, r, beta) -> np.ndarray:
        return self._splines["J"](r, beta, grid=False)

    def exit_radius(self, beta) -> np.ndarray:
        return np.interp(beta, self.betas, self.tau_plus)

    def coords_at(self, pts: np.ndarray, rtol: float = 1e-9, max_iter: int = 30,
                  exact: bool = True):
        """Invert the exponential map at arbitrary points.

        Newton iteration on the fan splines seeds the solve (the Euclidean
        polar coordinates of the point are the initial guess, exact for the
        flat metric); with ``exact`` the seed is then polished by Newton
        iterations on freshly integrated rays, whose Jacobian is exact:
        d(exp)/dr is the velocity and d(exp)/dbeta the Jacobi field times
        the unit normal.  Returns (r, beta, converged).
        """
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        rel = flat - self.source
        r = np.linalg.norm(rel, axis=-1)
        beta = np.arctan2(rel @ self.tangent, rel @ self.normal_in)
        scale = max(self.rs[-1], 1.0)
        blo, bhi = self.betas[0], self.betas[-1]
        sp = self._splines
        converged = np.zeros(r.shape, dtype=bool)
        for _ in range(max_iter):
            r = np.clip(r, self.rs[1] * 0.5, self.rs[-1])
            beta = np.clip(beta, blo, bhi)
            ex = sp["px"](r, beta, grid=False) - flat[:, 0]
            ey = sp["py"](r, beta, grid=False) - flat[:, 1]
            err = np.hypot(ex, ey)
            converged = err < rtol * scale
            if np.all(converged):
                break
            j00 = sp["px"](r, beta, dx=1, grid=False)
            j01 = sp["px"](r, beta, dy=1, grid=False)
            j10 = sp["py"](r, beta, dx=1, grid=False)
            j11 = sp["py"](r, beta, dy=1, grid=False)
            det = j00 * j11 - j01 * j10
            det = np.where(np.abs(det) < 1e-14, np.copysign(1e-14, det), det)
            dr = (j11 * ex - j01 * ey) / det
            db = (-j10 * ex + j00 * ey) / det
            # damp to at most one radial cell per update for robustness
            cap = 4.0 * (self.rs[1] - self.rs[0])
            r = r - np.clip(dr, -cap, cap)
            beta = beta - np.clip(db, -0.2, 0.2)
        if exact:
            r, beta, converged = self._polish(flat, r, beta, rtol * scale)
        return r.reshape(pts.shape[:-1]), beta.reshape(pts.shape[:-1]), converged.reshape(
            pts.shape[:-1]
        )

    def _polish(self, flat, r, beta, atol, iters: int = 8):
        """Newton on the true exponential map via fresh ray bundles.

        Residual and Jacobian both come from freshly integrated rays:
        d(exp)/dr is the velocity and d(exp)/dbeta = -J rot90(v) with the
        integrated Jacobi field (the fan frame is left-handed in Euclidean
        coordinates).  A first Jacobi-free pass screens out points the
        spline seed already solved; only unconverged points are retraced.
        """
        metric = self.metric
        step = self.rs[1] - self.rs[0]
        r = r.copy()
        beta = beta.copy()
        converged = np.zeros(r.shape, dtype=bool)
        active = np.ones(r.shape, dtype=bool)
        for it in range(iters):
            ids = np.flatnonzero(active)
            if ids.size == 0:
                break
            ra = np.clip(r[ids], 0.25 * step, self.rs[-1])
            ba = np.clip(beta[ids], self.betas[0] - 0.05, self.betas[-1] + 0.05)
            dirs = self.direction(ba)
            src = np.tile(self.source, (ids.size, 1))
            n_steps = int(math.ceil(ra.max() / step)) + 1
            out = _trace_fixed(
                metric, src, _normalize_direction(metric, src, dirs), step, n_steps,
                want_jacobi=it > 0,
            )
            p = _hermite_uniform(out["points"], out["velocities"], step, ra)
            e = p - flat[ids]
            err = np.hypot(e[:, 0], e[:, 1])
            done = err < atol
            r[ids] = ra
            beta[ids] = ba
            converged[ids] = done
            active[ids] = ~done
            if np.all(done):
                break
            if it == 0:
                continue  # screening pass only; no Jacobian available
            m = out["points"].shape[1]
            j = np.clip((ra / step).astype(np.int64), 0, m - 2)
            t = (ra / step - j)[:, None]
            ar = np.arange(ids.size)
            v = (1 - t) * out["velocities"][ar, j] + t * out["velocities"][ar, j + 1]
            J = _hermite_uniform(out["jacobi"], out["jacobi_rate"], step, ra)
            v2 = v[:, 0] ** 2 + v[:, 1] ** 2
            Jsafe = np.where(np.abs(J) < 1e-12, np.copysign(1e-12, J), J)
            dr = (v[:, 0] * e[:, 0] + v[:, 1] * e[:, 1]) / v2
            db = (v[:, 1] * e[:, 0] - v[:, 0] * e[:, 1]) / (Jsafe * v2)
            upd = ~done
            r[ids[upd]] = (ra - np.clip(dr, -0.25, 0.25))[upd]
            beta[ids[upd]] = (ba - np.clip(db, -0.1, 0.1))[upd]
        return r, beta, converged

    def psi_field(self) -> np.ndarray:
        """Distance-to-source field on the grid (nan off the chart mask)."""
        return self.r_of_x

    def amplitude_inputs(self):
        """Grid fields (r, beta, alpha, dalpha/dr) on the chart mask.

        alpha is evaluated from a Jacobi integration along the exact ray of
        every grid node rather than from the fan splines; the Jacobi field
        can vary too sharply across the fan for spline accuracy in beta.
        Cached after the first call.
        """
        if self._alpha_cache is None:
            mm = self.chart_mask
            r = self.r_of_x[mm]
            beta = self.beta_of_x[mm]
            step = self.rs[1] - self.rs[0]
            src = np.tile(self.source, (r.size, 1))
            dirs = self.direction(beta)
            out = _trace_fixed(
                self.metric,
                src,
                _normalize_direction(self.metric, src, dirs),
                step,
                int(math.ceil(r.max() / step)) + 1,
                want_jacobi=True,
            )
            J = _hermite_uniform(out["jacobi"], out["jacobi_rate"], step, r)
            # dJ interpolated linearly; its own rate is only O(step^2) off
            m = out["jacobi_rate"].shape[1]
            j = np.clip((r / step).astype(np.int64), 0, m - 2)
            t = r / step - j
            ar = np.arange(r.size)
            dJ = (1 - t) * out["jacobi_rate"][ar, j] + t * out["jacobi_rate"][ar, j + 1]
            alpha = np.full_like(self.r_of_x, np.nan)
            dalpha = np.full_like(self.r_of_x, np.nan)
            alpha[mm] = J**2
            dalpha[mm] = 2.0 * J * dJ
            self._alpha_cache = (alpha, dalpha)
        alpha, dalpha = self._alpha_cache
        return self.r_of_x, self.beta_of_x, alpha, dalpha


def polar_chart(
    metric: MetricField,
    source_angle: float,
    n_beta: int = 64,
    dr: float | None = None,
    beta_halfwidth: float | None = None,
    invert: bool = True,
    mask_pad: float | None = None,
) -> PolarChart:
    """Build geodesic polar coordinates around a point of the observation circle.

    Parameters
    ----------
    metric : the conformal metric (must be Euclidean outside the target
        disk, so the source region is flat).
    source_angle : angular position of the source on the M1 circle.
    n_beta : number of fan directions, uniform in incidence angle with
        half-offset endpoints.
    dr : radial sample step, default 0.01 * radius_m.
    beta_halfwidth : half-opening of the fan, default pi/2 (the full inward
        hemisphere).
    invert : also invert the chart onto the Cartesian grid.
    mask_pad : extra ring beyond the target disk covered by the inversion,
        default four grid cells.

    Raises
    ------
    RuntimeError
        If a conjugate point is hit inside the observation disk, or if the
        Newton inversion fails to converge anywhere on the chart mask.
    """
    if not metric.euclidean_outside:
        raise ValueError("polar charts require a metric that is Euclidean outside M")
    R1 = metric.grid.radius_m1
    a = float(source_angle)
    y = R1 * np.array([math.cos(a), math.sin(a)])
    n_in = -np.array([math.cos(a), math.sin(a)])
    t_hat = np.array([-math.sin(a), math.cos(a)])
    half = beta_halfwidth if beta_halfwidth is not None else 0.5 * math.pi
    betas = -half + (np.arange(n_beta) + 0.5) * (2.0 * half / n_beta)
    dirs = np.cos(betas)[:, None] * n_in + np.sin(betas)[:, None] * t_hat
    dr = dr if dr is not None else 0.01 * metric.radius_m

    sources = np.tile(y, (n_beta, 1))
    out = _trace_bundle(
        metric,
        sources,
        _normalize_direction(metric, sources, dirs),
        dr,
        R1,
        max_length=4.0 * R1 + metric.radius_m,
        want_jacobi=True,
    )
    if np.any(out["trapped"]):
        raise RuntimeError("chart fan contains trapped rays; metric is not simple here")
    tau = out["tau_plus"]
    rs = np.arange(out["points"].shape[1]) * dr
    P = np.transpose(out["points"], (1, 0, 2))  # (nr, nb, 2)
    J = out["jacobi"].T
    dJ = out["jacobi_rate"].T

    # conjugate scan inside the observation disk: sign change or tiny |J|/r
    in_disk = rs[:, None] <= tau[None, :] + dr
    live = in_disk[1:, :]
    sign_flip = (J[1:, :] <= 0.0) & live
    ratio = np.where(live, np.abs(J[1:, :]) / np.maximum(rs[1:, None], dr), np.inf)
    conj = bool(sign_flip.any() or (ratio < _CONJUGATE_TOL).any())
    min_ratio = float(ratio.min()) if np.isfinite(ratio).any() else math.inf

    splines = {
        "px": RectBivariateSpline(rs, betas, P[:, :, 0]),
        "py": RectBivariateSpline(rs, betas, P[:, :, 1]),
        "J": RectBivariateSpline(rs, betas, J),
        "dJ": RectBivariateSpline(rs, betas, dJ),
    }

    chart = PolarChart(
        metric=metric,
        source_angle=a,
        source=y,
        normal_in=n_in,
        tangent=t_hat,
        betas=betas,
        rs=rs,
        positions=P,
        jacobi=J,
        jacobi_rate=dJ,
        tau_plus=tau,
        r_of_x=np.full((metric.grid.n, metric.grid.n), np.nan),
        beta_of_x=np.full((metric.grid.n, metric.grid.n), np.nan),
        chart_mask=np.zeros((metric.grid.n, metric.grid.n), dtype=bool),
        conjugate=conj,
        min_jacobi_ratio=min_ratio,
        _splines=splines,
    )
    if conj:
        raise RuntimeError(
            f"conjugate point inside the observation disk (min |J|/r = {min_ratio:.2e})"
        )
    if invert:
        pad = mask_pad if mask_pad is not None else 4.0 * metric.grid.h
        g = metric.grid
        mask = g.rho <= metric.radius_m + pad
        pts = np.stack([g.X[mask], g.Y[mask]], axis=-1)
        r, beta, ok = chart.coords_at(pts)
        if not np.all(ok):
            raise RuntimeError(
                f"chart inversion failed at {int((~ok).sum())} of {ok.size} nodes; "
                "increase n_beta"
            )
        chart.r_of_x[mask] = r
        chart.beta_of_x[mask] = beta
        chart.chart_mask = mask
    return chart


# ---------------------------------------------------------------------------
# two-point shooting oracle
# ---------------------------------------------------------------------------


def connect(
    metric: MetricField,
    y: np.ndarray,
    x: np.ndarray,
    step: float | None = None,
    tol: float = 1e-9,
) -> tuple[float, float]:
    """Distance and shooting angle of the geodesic from y through x.

    Independent of the chart splines: straight secant iteration on the
    signed lateral miss of freshly integrated rays.  Returns
    ``(distance, beta)`` with beta measured from the inward normal at y
    (y is assumed to sit on the observation circle).

    This is the oracle the chart's distance field is validated against.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    step = step if step is not None else 0.0025 * metric.radius_m
    a = math.atan2(y[1], y[0])
    n_in = -np.array([math.cos(a), math.sin(a)])
    t_hat = np.array([-math.sin(a), math.cos(a)])
    rel = x - y
    beta = math.atan2(rel @ t_hat, rel @ n_in)

    def miss(b: float) -> tuple[float, float]:
        d = math.cos(b) * n_in + math.sin(b) * t_hat
        path = trace(metric, y, d, step=step, stop_radius=metric.grid.radius_m1)
        dist2 = np.sum((path.points - x) ** 2, axis=1)
        i = int(np.argmin(dist2))
        i = max(1, min(i, path.points.shape[0] - 2))
        # quadratic refinement of the closest-approach parameter
        f0, f1, f2 = dist2[i - 1], dist2[i], dist2[i + 1]
        denom = f0 - 2 * f1 + f2
        ds = 0.5 * (f0 - f2) / denom if abs(denom) > 1e-300 else 0.0
        ds = float(np.clip(ds, -1.0, 1.0))
        s_star = path.s[i] + ds * step
        p = path.position(np.array([s_star]))[0]
        vdir = path.velocities[i]
        lateral = (p - x) @ np.array([-vdir[1], vdir[0]])
        return float(lateral), float(s_star)

    m0, s0 = miss(beta)
    b0 = beta
    b1 = beta + 1e-3
    m1, s1 = miss(b1)
    for _ in range(60):
        if abs(m1 - m0) < 1e-300:
            break
        b2 = b1 - m1 * (b1 - b0) / (m1 - m0)
        b0, m0 = b1, m1
        b1 = b2
        m1, s1 = miss(b1)
        if abs(m1) < tol:
            break
    return s1, b1


# ---------------------------------------------------------------------------
# simplicity diagnostics
# ---------------------------------------------------------------------------


def simplicity_report(
    metric: MetricField,
    n_sources: int = 8,
    n_dirs: int = 33,
    step: float | None = None,
    probe_radius: float | None = None,
) -> dict:
    """Empirical simplicity certificate for the metric on the chart.

    Checks strict convexity of the boundary (second fundamental form
    positive), absence of trapped rays and of conjugate points along a
    diagnostic fan, and reports the margin min |J|/r together with the C^1
    distance of the conformal factor from flat.  For metrics that are not
    Euclidean outside the target disk the fan starts on the target circle
    itself.
    """
    step = step if step is not None else 0.01 * metric.radius_m
    R = probe_radius
    if R is None:
        R = metric.grid.radius_m1 if metric.euclidean_outside else metric.radius_m
    angles = 2.0 * math.pi * np.arange(n_sources) / n_sources
    half = 0.5 * math.pi
    betas = -half + (np.arange(n_dirs) + 0.5) * (2 * half / n_dirs)
    conj_found = False
    conj_radius = None
    min_ratio = math.inf
    trapped_rays = 0
    for a in angles:
        y = R * np.array([math.cos(a), math.sin(a)])
        n_in = -y / R
        t_hat = np.array([-n_in[1], n_in[0]])
        dirs = np.cos(betas)[:, None] * n_in + np.sin(betas)[:, None] * t_hat
        src = np.tile(y, (n_dirs, 1))
        out = _trace_bundle(
            metric,
            src,
            _normalize_direction(metric, src, dirs),
            step,
            R,
            max_length=_TRAPPED_FACTOR * 2.0 * R,
            want_jacobi=True,
        )
        trapped_rays += int(out["trapped"].sum())
        rs = np.arange(out["points"].shape[1]) * step
        J = out["jacobi"]
        dJ = out["jacobi_rate"]
        tau = out["tau_plus"]
        alive = rs[None, :] <= np.where(np.isnan(tau), rs[-1], tau)[:, None] + step
        alive[:, 0] = False
        ratio = np.where(alive, np.abs(J) / np.maximum(rs[None, :], step), np.inf)
        min_ratio = min(min_ratio, float(ratio.min()))
        flip = (J <= 0.0) & alive
        if flip.any() or (ratio < _CONJUGATE_TOL).any():
            conj_found = True
            i_ray, i_s = np.argwhere(flip | (ratio < _CONJUGATE_TOL))[0]
            # refine the sign change with the Hermite cubic of (J, J')
            if i_s > 0 and J[i_ray, i_s - 1] > 0 >= J[i_ray, i_s]:
                ja, jb = J[i_ray, i_s - 1], J[i_ray, i_s]
                conj_radius = float(rs[i_s - 1] + step * ja / (ja - jb))
            else:
                conj_radius = float(rs[i_s])
    chart = metric.boundary_chart(metric.grid.radius_m1 if metric.euclidean_outside else metric.radius_m)
    pi_vals = metric.second_fundamental_form(chart)
    chart_m = metric.boundary_chart(metric.radius_m)
    pi_m = metric.second_fundamental_form(chart_m)
    return {
        "convex_boundary": bool(pi_vals.min() > 0 and pi_m.min() > 0),
        "second_fundamental_min": float(min(pi_vals.min(), pi_m.min())),
        "trapped_rays": trapped_rays,
        "conjugate_points": conj_found,
        "conjugate_radius": conj_radius,
        "min_jacobi_ratio": min_ratio,
        "c_bounds": (float(metric.c.min()), float(metric.c.max())),
        "c1_deviation_from_flat": metric.c1_deviation(),
        "euclidean_outside": metric.euclidean_outside,
        "simple": bool(
            pi_vals.min() > 0 and pi_m.min() > 0 and not conj_found and trapped_rays == 0
        ),
    }
