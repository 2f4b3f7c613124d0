"""Conformal disk geometry: metric, fields, boundary charts, differential ops.

The computational domain is a chart of nested disks: the target disk M of
radius ``radius_m`` sits inside an observation disk M1 of radius
``radius_m + margin``, all covered by one uniform Cartesian N x N grid on
the bounding square.  The metric is conformal to the Euclidean one,
g = c(x) e, with c given in closed form (value, gradient, Hessian) and
sampled on the grid.  In two dimensions this makes det g = c^2 and
Delta_g = c^{-1} Delta_e, which the discrete operators exploit directly.

Conventions
-----------
* grid arrays are indexed ``values[ix, iy]`` with both axes sharing the
  same node vector; dumps are row-major in that order
* the volume element is dv_g = c dx, so discrete L2 pairings weight node
  values with c times the exact disk-clipped cell area
* boundary charts parameterize circles by arclength with outward g-unit
  normals
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._diskcells import cell_arc_length, circle_rect_area, clipped_cell_areas, segment_inside_length
from ._interp import interp2

__all__ = [
    "GridSpec",
    "ScalarField",
    "BoundaryChart",
    "MetricField",
    "SmoothBump2D",
    "BumpSum",
    "ConstantFactor",
    "SphereFactor",
    "euclidean_metric",
    "bump_metric",
    "sphere_metric",
    "metric_from_config",
    "bump_field",
    "zero_field",
]

# c below this is treated as a degenerate metric and refused
_MIN_CONFORMAL_FACTOR = 0.1
# bump profile is numerically exactly zero beyond this argument (underflow)
_BUMP_TAU_CUT = 1.0 - 1.0 / 700.0


# ---------------------------------------------------------------------------
# closed-form conformal factors
# ---------------------------------------------------------------------------


class SmoothBump2D:
    """Compactly supported radial bump amp * exp(1 - 1/(1 - |x-x0|^2/w^2)).

    C-infinity, equal to ``amp`` at the center, identically zero outside the
    disk of radius ``width`` around ``center``.  Value, gradient and Hessian
    are closed form, which the geodesic tracer and curvature evaluations
    rely on.
    """

    def __init__(self, amplitude: float, center=(0.0, 0.0), width: float = 0.3):
        if width <= 0:
            raise ValueError("bump width must be positive")
        self.amplitude = float(amplitude)
        self.center = np.asarray(center, dtype=float)
        self.width = float(width)

    def _tau(self, pts: np.ndarray):
        u = np.asarray(pts, dtype=float) - self.center
        return np.sum(u * u, axis=-1) / self.width**2, u

    @staticmethod
    def _profile(tau: np.ndarray):
        """g(tau), g'(tau), g''(tau) for g = exp(1 - 1/(1-tau)), zero past 1."""
        live = tau < _BUMP_TAU_CUT
        g = np.zeros_like(tau)
        g1 = np.zeros_like(tau)
        g2 = np.zeros_like(tau)
        if np.any(live):
            om = 1.0 - tau[live]
            val = np.exp(1.0 - 1.0 / om)
            g[live] = val
            g1[live] = -val / om**2
            g2[live] = val * (1.0 / om**4 - 2.0 / om**3)
        return g, g1, g2

    def value(self, pts: np.ndarray) -> np.ndarray:
        tau, _ = self._tau(pts)
        return self.amplitude * self._profile(tau)[0]

    def grad(self, pts: np.ndarray) -> np.ndarray:
        tau, u = self._tau(pts)
        g1 = self._profile(tau)[1]
        return self.amplitude * g1[..., None] * 2.0 * u / self.width**2

    def hess(self, pts: np.ndarray) -> np.ndarray:
        tau, u = self._tau(pts)
        _, g1, g2 = self._profile(tau)
        eye = np.eye(2)
        w2 = self.width**2
        return self.amplitude * (
            (2.0 * g1 / w2)[..., None, None] * eye
            + (4.0 * g2 / w2**2)[..., None, None] * u[..., :, None] * u[..., None, :]
        )

    @property
    def support_radius(self) -> float:
        return float(np.hypot(*self.center) + self.width)


class BumpSum:
    """Conformal factor c = base + sum of smooth bumps; Euclidean outside."""

    euclidean_outside = True

    def __init__(self, bumps, base: float = 1.0):
        self.bumps = list(bumps)
        self.base = float(base)

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.full(pts.shape[:-1], self.base)
        for b in self.bumps:
            out = out + b.value(pts)
        return out

    def grad(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1] + (2,))
        for b in self.bumps:
            out = out + b.grad(pts)
        return out

    def hess(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1] + (2, 2))
        for b in self.bumps:
            out = out + b.hess(pts)
        return out

    @property
    def support_radius(self) -> float:
        return max((b.support_radius for b in self.bumps), default=0.0)


class ConstantFactor:
    """c identically equal to a constant; flat metric rescaled."""

    def __init__(self, value: float = 1.0):
        self.c0 = float(value)

    @property
    def euclidean_outside(self) -> bool:
        return self.c0 == 1.0

    support_radius = math.inf

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.full(pts.shape[:-1], self.c0)

    def grad(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.zeros(pts.shape[:-1] + (2,))

    def hess(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.zeros(pts.shape[:-1] + (2, 2))


class SphereFactor:
    """c = 4/(1+|x|^2)^2: the round unit sphere in stereographic coordinates.

    Constant Gauss curvature +1.  Diagnostic metric for the conjugate-point
    detector; it is not Euclidean outside any radius.
    """

    euclidean_outside = False
    support_radius = math.inf

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        rho = np.sum(pts * pts, axis=-1)
        return 4.0 / (1.0 + rho) ** 2

    def grad(self, pts):
        pts = np.asarray(pts, dtype=float)
        rho = np.sum(pts * pts, axis=-1)
        return -16.0 * pts / (1.0 + rho)[..., None] ** 3

    def hess(self, pts):
        pts = np.asarray(pts, dtype=float)
        rho = np.sum(pts * pts, axis=-1)
        eye = np.eye(2)
        a = (-16.0 / (1.0 + rho) ** 3)[..., None, None] * eye
        b = (96.0 / (1.0 + rho) ** 4)[..., None, None] * pts[..., :, None] * pts[..., None, :]
        return a + b


# ---------------------------------------------------------------------------
# grid bookkeeping
# ---------------------------------------------------------------------------


class GridSpec:
    """Uniform N x N grid on the square bounding the observation disk M1."""

    def __init__(self, n: int, radius_m: float, margin: float):
        if n < 16:
            raise ValueError("grid too coarse, need n >= 16")
        self.n = int(n)
        self.radius_m = float(radius_m)
        self.margin = float(margin)
        self.radius_m1 = self.radius_m + self.margin
        self.xs = np.linspace(-self.radius_m1, self.radius_m1, self.n)
        self.h = self.xs[1] - self.xs[0]
        self.X, self.Y = np.meshgrid(self.xs, self.xs, indexing="ij")
        self.rho = np.hypot(self.X, self.Y)
        self.mask_m = self.rho < self.radius_m - 1e-12
        self.mask_m1 = self.rho <= self.radius_m1 + 1e-12
        self._areas: dict[float, np.ndarray] = {}

    def points(self) -> np.ndarray:
        return np.stack([self.X, self.Y], axis=-1)

    def cell_areas(self, radius: float) -> np.ndarray:
        """Exact disk-clipped cell areas, cached per clipping radius."""
        key = round(float(radius), 14)
        if key not in self._areas:
            self._areas[key] = clipped_cell_areas(self.xs, self.h, float(radius))
        return self._areas[key]

    def interp(self, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
        return interp2(values, self.xs[0], self.h, pts)


@dataclass
class ScalarField:
    """Scalar samples on the shared grid, with an optional analytic closure.

    The closure, when present, is the exact function the samples came from;
    oracle-grade quadrature uses it, everything else interpolates the grid
    bicubically.
    """

    values: np.ndarray
    grid: GridSpec
    closure: object | None = None

    def interp(self, pts: np.ndarray) -> np.ndarray:
        return self.grid.interp(self.values, pts)

    def __call__(self, pts: np.ndarray, exact: bool = False) -> np.ndarray:
        if exact and self.closure is not None:
            return self.closure(np.asarray(pts, dtype=float))
        return self.interp(pts)


@dataclass
class BoundaryChart:
    """Arclength parameterization of a boundary circle with g-unit normals."""

    radius: float
    angles: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    weights: np.ndarray
    c_values: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.angles.size

    @property
    def total_length(self) -> float:
        return float(self.weights.sum())


# ---------------------------------------------------------------------------
# the metric itself
# ---------------------------------------------------------------------------


class MetricField:
    """Conformal metric g = c(x) e on the nested-disk chart.

    Parameters
    ----------
    factor : closed-form conformal factor (value/grad/hess).
    n : grid nodes per side.
    radius_m : radius of the target disk M.
    margin : gap between M and the observation disk M1; defaults to
        ``0.25 * radius_m``.
    collar_width : width of the boundary collar of M in which c must equal 1
        for the Euclidean-outside families; defaults to ``0.15 * radius_m``.

    Raises
    ------
    ValueError
        If c drops to 0.1 or below anywhere on the grid, or if an
        Euclidean-outside factor fails to be 1 outside the collar.
    """

    def __init__(
        self,
        factor,
        n: int = 96,
        radius_m: float = 1.0,
        margin: float | None = None,
        collar_width: float | None = None,
    ):
        self.factor = factor
        self.radius_m = float(radius_m)
        self.margin = float(margin) if margin is not None else 0.25 * self.radius_m
        self.collar_width = (
            float(collar_width) if collar_width is not None else 0.15 * self.radius_m
        )
        self.grid = GridSpec(n, self.radius_m, self.margin)
        pts = self.grid.points()
        self.c = factor.value(pts)
        if float(self.c.min()) <= _MIN_CONFORMAL_FACTOR:
            raise ValueError(
                f"conformal factor reaches {self.c.min():.3g} <= {_MIN_CONFORMAL_FACTOR}; "
                "metric too degenerate"
            )
        self.euclidean_outside = bool(getattr(factor, "euclidean_outside", False))
        if self.euclidean_outside:
            outside = self.grid.rho >= self.radius_m - self.collar_width
            dev = np.abs(self.c[outside] - 1.0)
            if dev.size and dev.max() > 1e-13:
                raise ValueError(
                    "factor declared Euclidean outside but c deviates from 1 "
                    f"by {dev.max():.3g} in the collar"
                )
        self._charts: dict[tuple[float, int], BoundaryChart] = {}

    # -- pointwise metric data ------------------------------------------------

    def c_at(self, pts) -> np.ndarray:
        return self.factor.value(np.asarray(pts, dtype=float))

    def grad_c_at(self, pts) -> np.ndarray:
        return self.factor.grad(np.asarray(pts, dtype=float))

    def metric_at(self, pts) -> np.ndarray:
        """Matrix g_{jk}(x) = c(x) delta_{jk}, shape (..., 2, 2)."""
        c = self.c_at(pts)
        return c[..., None, None] * np.eye(2)

    def metric_inverse_at(self, pts) -> np.ndarray:
        c = self.c_at(pts)
        return (1.0 / c)[..., None, None] * np.eye(2)

    def det_at(self, pts) -> np.ndarray:
        return self.c_at(pts) ** 2

    def gauss_curvature_at(self, pts) -> np.ndarray:
        """K = -Delta_e log(c) / (2 c), from the closed-form derivatives."""
        pts = np.asarray(pts, dtype=float)
        c = self.factor.value(pts)
        g = self.factor.grad(pts)
        h = self.factor.hess(pts)
        lap_c = h[..., 0, 0] + h[..., 1, 1]
        grad_sq = np.sum(g * g, axis=-1)
        return -(lap_c / c - grad_sq / c**2) / (2.0 * c)

    def geodesic_acceleration(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Right-hand side -Gamma^k_{ij} v^i v^j for the conformal metric.

        With phi = log(c)/2 the Christoffel contraction reduces to
        2 (grad phi . v) v - |v|^2 grad phi.
        """
        c = self.factor.value(x)
        gphi = self.factor.grad(x) / (2.0 * c[..., None])
        vdotg = np.sum(v * gphi, axis=-1)
        vsq = np.sum(v * v, axis=-1)
        return -(2.0 * vdotg[..., None] * v - vsq[..., None] * gphi)

    def g_norm(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.sqrt(self.c_at(x) * np.sum(v * v, axis=-1))

    # -- fields ---------------------------------------------------------------

    def field(self, values: np.ndarray, closure=None) -> ScalarField:
        values = np.asarray(values)
        if values.shape != (self.grid.n, self.grid.n):
            raise ValueError("field shape does not match the grid")
        return ScalarField(values, self.grid, closure)

    def field_from_closure(self, closure) -> ScalarField:
        return ScalarField(closure(self.grid.points()), self.grid, closure)

    # -- discrete operators ---------------------------------------------------

    def laplace_beltrami(self, values: np.ndarray) -> np.ndarray:
        """Five-point conservative Laplace-Beltrami c^{-1} Delta_e.

        In conformal 2d coordinates sqrt(det g) g^{jk} is the identity, so
        the conservative divergence-form stencil is the plain five-point
        Laplacian divided by c.  Values on the outer square edge are left
        zero; every node of M1 relevant to the pipelines is interior to the
        square.
        """
        v = np.asarray(values)
        out = np.zeros_like(v)
        h2 = self.grid.h**2
        out[1:-1, 1:-1] = (
            v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:] + v[1:-1, :-2] - 4.0 * v[1:-1, 1:-1]
        ) / h2
        return out / self.c

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Central-difference Euclidean gradient, one-sided on the square edge.

        The g-gradient (index-raised) is this divided by c; norms take care
        of the weighting themselves.
        """
        v = np.asarray(values)
        gx = np.gradient(v, self.grid.h, axis=0)
        gy = np.gradient(v, self.grid.h, axis=1)
        return np.stack([gx, gy], axis=0)

    def grad_g_squared(self, values: np.ndarray) -> np.ndarray:
        """|grad_g u|_g^2 = (|u_x|^2 + |u_y|^2)/c at every node."""
        g = self.gradient(values)
        return (np.abs(g[0]) ** 2 + np.abs(g[1]) ** 2) / self.c

    # -- inner products and norms --------------------------------------------

    def _region_weights(self, region: str) -> np.ndarray:
        radius = {"m": self.radius_m, "m1": self.grid.radius_m1}[region]
        return self.grid.cell_areas(radius) * self.c

    def integrate(self, values: np.ndarray, region: str = "m") -> complex:
        """Integral over the disk with the g-volume element c dx."""
        w = self._region_weights(region)
        return complex(np.sum(values * w))

    def l2_inner(self, u: np.ndarray, v: np.ndarray, region: str = "m") -> complex:
        w = self._region_weights(region)
        return complex(np.sum(u * np.conj(v) * w))

    def l2_norm(self, values: np.ndarray, region: str = "m") -> float:
        return math.sqrt(max(self.l2_inner(values, values, region).real, 0.0))

    def h1_norm(self, values: np.ndarray, region: str = "m") -> float:
        w = self._region_weights(region)
        g = self.gradient(values)
        grad_sq = (np.abs(g[0]) ** 2 + np.abs(g[1]) ** 2) / self.c
        total = np.sum((np.abs(values) ** 2 + grad_sq) * w)
        return math.sqrt(float(total.real))

    def h2_norm(self, values: np.ndarray, region: str = "m") -> float:
        """H2 norm with all second differences, used by amplitude budgets."""
        w = self._region_weights(region)
        h = self.grid.h
        v = np.asarray(values)
        vxx = np.zeros_like(v)
        vyy = np.zeros_like(v)
        vxy = np.zeros_like(v)
        vxx[1:-1, :] = (v[2:, :] - 2 * v[1:-1, :] + v[:-2, :]) / h**2
        vyy[:, 1:-1] = (v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]) / h**2
        vxy[1:-1, 1:-1] = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * h**2)
        g = self.gradient(v)
        dens = (
            np.abs(v) ** 2
            + (np.abs(g[0]) ** 2 + np.abs(g[1]) ** 2) / self.c
            + (np.abs(vxx) ** 2 + 2 * np.abs(vxy) ** 2 + np.abs(vyy) ** 2) / self.c**2
        )
        return math.sqrt(float(np.sum(dens * w).real))

    def c1_deviation(self) -> float:
        """The C^1 distance of c from the flat factor, max over the grid."""
        pts = self.grid.points()
        gc = self.factor.grad(pts)
        return float(
            max(np.abs(self.c - 1.0).max(), np.hypot(gc[..., 0], gc[..., 1]).max())
        )

    # -- boundary charts ------------------------------------------------------

    def boundary_chart(self, radius: float | None = None, n_nodes: int | None = None) -> BoundaryChart:
        """Uniform-angle chart of the circle of given radius (default dM).

        Node count defaults to the number of grid cells spanned by the
        circumference, rounded to a multiple of 4.
        """
        r = float(radius) if radius is not None else self.radius_m
        if n_nodes is None:
            n_nodes = 4 * max(8, int(round(0.5 * math.pi * r / self.grid.h)))
        key = (round(r, 14), int(n_nodes))
        if key in self._charts:
            return self._charts[key]
        ang = 2.0 * math.pi * np.arange(n_nodes) / n_nodes
        pts = r * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        c = self.c_at(pts)
        radial = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        tang = np.stack([-np.sin(ang), np.cos(ang)], axis=-1)
        sqc = np.sqrt(c)
        chart = BoundaryChart(
            radius=r,
            angles=ang,
            points=pts,
            normals=radial / sqc[:, None],
            tangents=tang / sqc[:, None],
            weights=(2.0 * math.pi * r / n_nodes) * sqc,
            c_values=c,
        )
        self._charts[key] = chart
        return chart

    def second_fundamental_form(self, chart: BoundaryChart) -> np.ndarray:
        """Pi(theta, theta) = <D_theta nu, theta>_g at every chart node.

        Evaluated from the closed-form normal field nu = x / (|x| sqrt(c)):
        the Euclidean directional derivative of nu along the unit tangent
        plus the Christoffel correction, contracted against the tangent.
        Positive everywhere means the boundary is strictly convex.
        """
        pts = chart.points
        c = chart.c_values
        gc = self.grad_c_at(pts)
        r = chart.radius
        ang = chart.angles
        e_r = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        e_t = np.stack([-np.sin(ang), np.cos(ang)], axis=-1)
        # nu = e_r c^{-1/2}; d nu / d theta (param derivative along the circle)
        dc_dtheta = r * np.sum(gc * e_t, axis=-1)
        dnu = e_t[:, :] * c[:, None] ** -0.5 + e_r * (-0.5) * c[:, None] ** -1.5 * dc_dtheta[:, None]
        # Christoffel term Gamma^k_{ij} t^i nu^j for the conformal metric
        gphi = gc / (2.0 * c[:, None])
        t_vec = e_t / np.sqrt(c)[:, None]  # g-unit tangent
        nu = e_r / np.sqrt(c)[:, None]
        arc = r * np.sqrt(c)  # d(arclength)/d(theta)... per unit theta: r*sqrt(c)
        dnu_dt = dnu / arc[:, None]  # derivative along g-arclength
        gamma = (
            np.sum(t_vec * gphi, axis=-1)[:, None] * nu
            + np.sum(nu * gphi, axis=-1)[:, None] * t_vec
            - np.sum(t_vec * nu, axis=-1)[:, None] * gphi
        )
        cov = dnu_dt + gamma
        return c * np.sum(cov * t_vec, axis=-1)

    # -- Green identity self-test --------------------------------------------

    def green_identity_check(self, w, f, n_boundary: int | None = None) -> dict:
        """Residual of int Delta_g w f dv = -int <grad w, grad f>_g dv + oint d_nu w f ds.

        Both volume terms use exact disk-clipped cell quadrature and full
        interior stencils (fields live on the whole M1 square, so no
        one-sided closure enters); the boundary term interpolates the
        central-difference gradient onto the circle and uses the spectral
        accuracy of the periodic trapezoid rule.  A stencil/measure
        consistency check: the residual must shrink at second order.
        """
        wv = w.values if isinstance(w, ScalarField) else np.asarray(w)
        fv = f.values if isinstance(f, ScalarField) else np.asarray(f)
        lap = self.laplace_beltrami(wv)
        lhs = self.integrate(lap * fv, "m").real
        gw = self.gradient(wv)
        gf = self.gradient(fv)
        # <grad w, grad f>_g dv_g = (gw . gf / c) c dx, the factors cancel
        grad_term = self.integrate((gw[0] * gf[0] + gw[1] * gf[1]) / self.c, "m").real
        chart = self.boundary_chart(self.radius_m, n_boundary)
        gx = self.grid.interp(gw[0], chart.points)
        gy = self.grid.interp(gw[1], chart.points)
        fb = self.grid.interp(fv, chart.points)
        # d_nu w dsigma_g = (euclidean radial derivative) ds_e; the sqrt(c)
        # factors of the g-normal and g-measure cancel exactly
        radial = chart.points / chart.radius
        dnw = gx * radial[:, 0] + gy * radial[:, 1]
        boundary_term = float(np.sum(dnw * fb) * (2.0 * math.pi * chart.radius / chart.n_nodes))
        residual = abs(lhs - (-grad_term + boundary_term))
        scale = abs(lhs) + abs(grad_term) + abs(boundary_term)
        return {
            "lhs": lhs,
            "grad_term": grad_term,
            "boundary_term": boundary_term,
            "residual": residual,
            "relative_residual": residual / scale if scale > 0 else 0.0,
        }


# ---------------------------------------------------------------------------
# factories
# ---------------------------------------------------------------------------


def euclidean_metric(n: int = 96, radius_m: float = 1.0, margin: float | None = None) -> MetricField:
    return MetricField(BumpSum([]), n=n, radius_m=radius_m, margin=margin)


def bump_metric(
    amplitude: float,
    center=(0.0, 0.0),
    width: float = 0.3,
    n: int = 96,
    radius_m: float = 1.0,
    margin: float | None = None,
    collar_width: float | None = None,
) -> MetricField:
    """Metric with c = 1 + one compact bump; must stay inside the collar."""
    m = MetricField(
        BumpSum([SmoothBump2D(amplitude, center, width)]),
        n=n,
        radius_m=radius_m,
        margin=margin,
        collar_width=collar_width,
    )
    return m


def sphere_metric(n: int = 96, radius_m: float = 1.2, margin: float = 0.15) -> MetricField:
    """Constant-curvature +1 diagnostic metric (not Euclidean outside).

    The default chart has geodesic radius 2 atan(1.2) > pi/2, big enough for
    diametral geodesics to run past arclength pi and hit a conjugate point,
    while keeping c above the admissibility floor on the whole grid.
    """
    return MetricField(SphereFactor(), n=n, radius_m=radius_m, margin=margin)


def metric_from_config(cfg: dict) -> MetricField:
    """Build a metric from a declarative description.

    Recognized ``form`` names: ``constant`` (params: value), ``gaussian_bump``
    / ``bump`` (params: amplitude, center_x, center_y, width; several bumps
    via numbered suffixes amplitude2, ...), ``sphere``.  Grid controls: ``n``,
    ``radius_m``, ``margin``, ``collar_width``.
    """
    form = str(cfg.get("form", "constant")).lower()
    n = int(cfg.get("n", 96))
    radius_m = float(cfg.get("radius_m", 1.0))
    margin = cfg.get("margin")
    margin = float(margin) if margin is not None else None
    collar = cfg.get("collar_width")
    collar = float(collar) if collar is not None else None
    if form == "constant":
        value = float(cfg.get("value", 1.0))
        factor = BumpSum([]) if value == 1.0 else ConstantFactor(value)
        return MetricField(factor, n=n, radius_m=radius_m, margin=margin, collar_width=collar)
    if form in ("bump", "gaussian_bump"):
        bumps = []
        suffix = ""
        k = 1
        while f"amplitude{suffix}" in cfg:
            bumps.append(
                SmoothBump2D(
                    float(cfg[f"amplitude{suffix}"]),
                    (
                        float(cfg.get(f"center_x{suffix}", 0.0)),
                        float(cfg.get(f"center_y{suffix}", 0.0)),
                    ),
                    float(cfg.get(f"width{suffix}", 0.3)),
                )
            )
            k += 1
            suffix = str(k)
        if not bumps:
            raise ValueError("bump metric config needs at least 'amplitude'")
        return MetricField(BumpSum(bumps), n=n, radius_m=radius_m, margin=margin, collar_width=collar)
    if form == "sphere":
        return MetricField(SphereFactor(), n=n, radius_m=radius_m, margin=margin, collar_width=collar)
    raise ValueError(f"unknown metric form {form!r}")


def bump_field(
    metric: MetricField, amplitude: float, center=(0.0, 0.0), width: float = 0.3
) -> ScalarField:
    """Compactly supported scalar field (e.g. a potential) on the grid."""
    bump = SmoothBump2D(amplitude, center, width)
    return ScalarField(bump.value(metric.grid.points()), metric.grid, bump.value)


def zero_field(metric: MetricField) -> ScalarField:
    zero = np.zeros((metric.grid.n, metric.grid.n))
    return ScalarField(zero, metric.grid, lambda p: np.zeros(np.asarray(p).shape[:-1]))
