"""
Filter, kernel and pattern functions of the regularized P function.

The filter is the autocorrelation of exp(-|gamma|^4),

    Omega~(t) = (2/pi)^{3/2} int d^2g exp(-|t + g|^4) exp(-|g|^4).

Centering the displacement and integrating the angle in closed form gives

    Omega~(t) = (2/pi)^{3/2} pi exp(-t^4/8) G(t),
    G(t) = int_0^inf exp(-2q^2 - q t^2) I0e(q t^2) dq,

with G(0) = sqrt(pi/8). G is smooth and slowly varying, so the table stores
log G, which keeps Omega~ relatively accurate far into its tail where the
pattern functions multiply it by exp(z^2/2).
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import dblquad, quad
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.special import i0e, j0

from phasecorr.config import (FILTER_POINT_TOLERANCE, FILTER_STEP,
                              FILTER_T_MAX, GAUSS_ORDER, KERNEL_PANEL_WIDTH,
                              KERNEL_TAIL, PATTERN_A_RANGE, PATTERN_STEPS,
                              PATTERN_TOLERANCE, PATTERN_X_RANGE,
                              QUADRATURE_CONVENTION, W_MAX)
from phasecorr.core.errors import NumericalToleranceError, ValidationError
from phasecorr.core.monitor import track_performance
from phasecorr.core.performance import TableCache, substream_rng

logger = logging.getLogger(__name__)

LOG_PREFACTOR = 1.5 * np.log(2.0 / np.pi) + np.log(np.pi)
LOG_G0 = 0.5 * np.log(np.pi / 8.0)
# exp(-40) relative to G is far below any tolerance used here
RADIAL_EXPONENT_CUT = 45.0
Z_SCAN_STEP = 0.01
EVAL_CHUNK = 1 << 15


def _radial_integral(t: float) -> Tuple[float, float]:
    t2 = t * t
    upper = 6.0 if t2 * 6.0 < RADIAL_EXPONENT_CUT else RADIAL_EXPONENT_CUT / t2
    return quad(lambda q: np.exp(-2.0 * q * q - q * t2) * i0e(q * t2),
                0.0, upper, epsabs=0.0, epsrel=1e-13, limit=200)


@dataclass(frozen=True, eq=False)
class FilterTable:
    """log G(t) tabulated on [0, t_max]; Omega~ is even so only the half-line is stored."""
    step: float
    t_max: float
    t: np.ndarray
    log_g: np.ndarray
    tolerance: float = FILTER_POINT_TOLERANCE
    convention: str = QUADRATURE_CONVENTION
    _spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_spline", CubicSpline(self.t, self.log_g, bc_type=((1, 0.0), 'not-a-knot')))

    def log_value(self, t) -> np.ndarray:
        """log Omega~(t); -inf beyond t_max."""
        t = np.abs(np.asarray(t, dtype=float))
        inside = t <= self.t_max
        out = np.full(t.shape, -np.inf)
        ti = t[inside]
        out[inside] = LOG_PREFACTOR - ti ** 4 / 8.0 + self._spline(ti)
        return out

    def __call__(self, t) -> np.ndarray:
        return np.exp(self.log_value(t))

    @property
    def values(self) -> np.ndarray:
        return np.exp(LOG_PREFACTOR - self.t ** 4 / 8.0 + self.log_g)


@track_performance("build_filter_table")
def build_filter_table(step: float = FILTER_STEP, t_max: float = FILTER_T_MAX,
                       tolerance: float = FILTER_POINT_TOLERANCE,
                       cache: Optional[TableCache] = None) -> FilterTable:
    """
    Tabulate the filter on a uniform grid. Each point is an adaptive quadrature
    whose error estimate must stay below `tolerance` relative to G.
    """
    if not step > 0 or not t_max > 0:
        raise ValidationError(f"Filter table needs positive step and t_max, got step={step}, t_max={t_max}")
    n_points = int(round(t_max / step)) + 1
    t = np.linspace(0.0, (n_points - 1) * step, n_points)
    params = {"step": step, "t_max": t_max, "tolerance": tolerance,
              "method": "radial-quad", "convention": QUADRATURE_CONVENTION}
    if cache is not None:
        cached = cache.get("filter", params)
        if cached is not None and cached[1].size == n_points:
            logger.info(f"Loaded filter table from cache ({n_points} points)")
            return FilterTable(step, t[-1], t, cached[1], tolerance)

    log_g = np.empty(n_points)
    worst = 0.0
    for i, ti in enumerate(t):
        value, abserr = _radial_integral(ti)
        relerr = abserr / value
        if relerr > tolerance:
            raise NumericalToleranceError(
                f"Filter quadrature at t={ti:.4f} has relative error {relerr:.2e} > {tolerance:.1e}")
        worst = max(worst, relerr)
        log_g[i] = np.log(value)
    if abs(log_g[0] - LOG_G0) > 1e-8:
        raise NumericalToleranceError(f"Filter normalization off: Omega(0) = {np.exp(log_g[0] - LOG_G0):.12f}")
    logger.info(f"Built filter table with {n_points} points, worst relative error {worst:.2e}")
    if cache is not None:
        cache.set("filter", params, log_g)
    return FilterTable(step, t[-1], t, log_g, tolerance)


@lru_cache(maxsize=1)
def default_filter_table() -> FilterTable:
    return build_filter_table(cache=TableCache())


def omega_tilde(t, table: Optional[FilterTable] = None) -> np.ndarray:
    return (table or default_filter_table())(t)


def omega_tilde_direct(t: float) -> float:
    """Brute-force 2D autocorrelation integral, used as an independent check."""
    t = abs(float(t))

    def integrand(y, x):
        return np.exp(-((t + x) ** 2 + y * y) ** 2) * np.exp(-(x * x + y * y) ** 2)

    value, _ = dblquad(integrand, -t - 3.0, 3.0, 0.0, 3.0, epsabs=1e-13, epsrel=1e-11)
    return float(2.0 * (2.0 / np.pi) ** 1.5 * value)


def _check_width(w: float) -> float:
    w = float(w)
    if not np.isfinite(w) or w <= 0:
        raise ValidationError(f"Width parameter must be positive, got {w}")
    if w > W_MAX:
        raise ValidationError(f"Width parameter {w} exceeds the safety bound {W_MAX}")
    return w


def _log_kernel_integrand(z: np.ndarray, w: float, table: FilterTable) -> np.ndarray:
    with np.errstate(divide='ignore'):
        return np.log(z) + 0.5 * z * z + table.log_value(z / w)


def z_cut(w: float, table: Optional[FilterTable] = None) -> float:
    """Point beyond which z e^{z^2/2} Omega~(z/w) stays below the kernel tail threshold."""
    w = _check_width(w)
    table = table or default_filter_table()
    z = np.arange(1, int(w * table.t_max / Z_SCAN_STEP) + 1) * Z_SCAN_STEP
    above = np.flatnonzero(_log_kernel_integrand(z, w, table) >= np.log(KERNEL_TAIL))
    if above.size == 0:
        return Z_SCAN_STEP
    if above[-1] == z.size - 1:
        raise ValidationError(f"Width {w} needs the filter beyond t_max={table.t_max}")
    return float(z[above[-1]] + Z_SCAN_STEP)


@dataclass(frozen=True, eq=False)
class KernelQuadrature:
    """
    Composite Gauss-Legendre rule on [0, z_cut] with the kernel factors folded in:
    amplitudes = (2/pi) weight z e^{z^2/2} Omega~(z/w), so that
    K_w(y) = sum amplitudes cos(z y).
    """
    w: float
    z_cut: float
    nodes: np.ndarray
    weights: np.ndarray
    log_filter: np.ndarray
    convention: str = QUADRATURE_CONVENTION

    @property
    def amplitudes(self) -> np.ndarray:
        return (2.0 / np.pi) * self.weights * self.nodes * np.exp(0.5 * self.nodes ** 2 + self.log_filter)

    @property
    def log_damped(self) -> np.ndarray:
        """log of (2/pi) weight z Omega~(z/w), the amplitudes without e^{z^2/2}."""
        return np.log(2.0 / np.pi) + np.log(self.weights) + np.log(self.nodes) + self.log_filter

    def kernel(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        flat = y.ravel()
        amps = self.amplitudes
        out = np.empty(flat.size)
        for start in range(0, flat.size, EVAL_CHUNK):
            chunk = flat[start:start + EVAL_CHUNK]
            out[start:start + chunk.size] = np.cos(np.outer(chunk, self.nodes)) @ amps
        return out.reshape(y.shape)

    def fbar(self, x, a) -> np.ndarray:
        x, a = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(a, dtype=float))
        fx, fa = x.ravel(), a.ravel()
        amps = self.amplitudes
        out = np.empty(fx.size)
        for start in range(0, fx.size, EVAL_CHUNK):
            cx = fx[start:start + EVAL_CHUNK]
            ca = fa[start:start + EVAL_CHUNK]
            terms = np.cos(np.outer(cx, self.nodes)) * j0(2.0 * np.outer(ca, self.nodes))
            out[start:start + cx.size] = terms @ amps
        return out.reshape(x.shape)

    def fbar_columns(self, x: np.ndarray, a_values: np.ndarray) -> np.ndarray:
        """f-bar on the outer product x (rows) by a_values (columns)."""
        bessel = j0(2.0 * np.outer(self.nodes, a_values)) * self.amplitudes[:, None]
        x = np.asarray(x, dtype=float)
        out = np.empty((x.size, len(a_values)))
        for start in range(0, x.size, EVAL_CHUNK):
            chunk = x[start:start + EVAL_CHUNK]
            out[start:start + chunk.size] = np.cos(np.outer(chunk, self.nodes)) @ bessel
        return out


@lru_cache(maxsize=32)
def kernel_quadrature(w: float, table: Optional[FilterTable] = None,
                      panel_width: float = KERNEL_PANEL_WIDTH, order: int = GAUSS_ORDER) -> KernelQuadrature:
    table = table or default_filter_table()
    cut = z_cut(w, table)
    n_panels = int(np.ceil(cut / panel_width))
    x, wt = np.polynomial.legendre.leggauss(order)
    left = np.arange(n_panels) * panel_width
    nodes = (left[:, None] + 0.5 * panel_width * (x[None, :] + 1.0)).ravel()
    weights = np.tile(0.5 * panel_width * wt, n_panels)
    logger.debug(f"Kernel quadrature w={w}: z_cut={cut:.2f}, {nodes.size} nodes")
    return KernelQuadrature(float(w), cut, nodes, weights, table.log_value(nodes / w), table.convention)


def kernel_K(y, w: float, filter: Optional[FilterTable] = None) -> np.ndarray:
    """K_w(y) = (2/pi) int_0^inf z e^{z^2/2} Omega~(z/w) cos(z y) dz."""
    return kernel_quadrature(_check_width(w), filter).kernel(y)


def _shift(phi, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=complex)
    return 2.0 * np.abs(alpha) * np.sin(np.angle(alpha) - np.asarray(phi) - np.pi / 2.0)


def pattern_f(x, phi, alpha, w: float, filter: Optional[FilterTable] = None) -> np.ndarray:
    """Phase-sensitive pattern function; only the even part of the integrand survives."""
    return kernel_K(np.asarray(x, dtype=float) + _shift(phi, alpha), w, filter)


def pattern_f_direct(x: float, phi: float, alpha: complex, w: float,
                     filter: Optional[FilterTable] = None) -> complex:
    """
    (1/pi) int dz |z| e^{z^2/2} Omega~(z/w) exp[i z x + 2 i |alpha| z sin(arg alpha - phi - pi/2)]
    over the whole real line by adaptive quadrature of the real and imaginary parts.
    """
    w = _check_width(w)
    table = filter or default_filter_table()
    cut = z_cut(w, table)
    y = float(x) + float(_shift(phi, alpha))

    def envelope(z):
        return abs(z) * np.exp(0.5 * z * z + table.log_value(z / w)[()]) / np.pi

    real, _ = quad(lambda z: envelope(z) * np.cos(z * y), -cut, cut, points=[0.0], limit=500,
                   epsabs=1e-13, epsrel=1e-12)
    imag, _ = quad(lambda z: envelope(z) * np.sin(z * y), -cut, cut, points=[0.0], limit=500,
                   epsabs=1e-13, epsrel=1e-12)
    return complex(real, imag)


def pattern_fbar(x, a, w: float, filter: Optional[FilterTable] = None) -> np.ndarray:
    """Phase-averaged pattern function (2/pi) int z e^{z^2/2} Omega~(z/w) cos(zx) J0(2za) dz."""
    if np.any(np.asarray(a) < 0):
        raise ValidationError("Radial coordinate |alpha| must be non-negative")
    return kernel_quadrature(_check_width(w), filter).fbar(x, a)


def _uniform_grid(lo: float, hi: float, step: float) -> np.ndarray:
    if not step > 0 or not hi > lo:
        raise ValidationError(f"Invalid grid [{lo}, {hi}] with step {step}")
    n = int(round((hi - lo) / step)) + 1
    return np.linspace(lo, lo + (n - 1) * step, n)


@dataclass(frozen=True, eq=False)
class KernelTable:
    w: float
    y: np.ndarray
    values: np.ndarray
    quadrature: KernelQuadrature
    _spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_spline", CubicSpline(self.y, self.values))

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.empty(y.shape)
        inside = (y >= self.y[0]) & (y <= self.y[-1])
        out[inside] = self._spline(y[inside])
        out[~inside] = self.quadrature.kernel(y[~inside])
        return out


@track_performance("build_kernel_table")
def build_kernel_table(w: float, y_max: float = 20.0, step: float = PATTERN_STEPS[0],
                       filter: Optional[FilterTable] = None) -> KernelTable:
    quadrature = kernel_quadrature(_check_width(w), filter)
    y = _uniform_grid(-y_max, y_max, step)
    return KernelTable(w, y, quadrature.kernel(y), quadrature)


@dataclass(frozen=True, eq=False)
class PatternColumns:
    """f-bar(x, a_k) for a fixed set of a_k, splined in x; off-grid x falls back to quadrature."""
    a_values: np.ndarray
    x: np.ndarray
    quadrature: KernelQuadrature
    _spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        values = self.quadrature.fbar_columns(self.x, self.a_values)
        object.__setattr__(self, "_spline", CubicSpline(self.x, values, axis=0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = (x >= self.x[0]) & (x <= self.x[-1])
        if inside.all():
            return self._spline(x)
        out = np.empty((x.size, self.a_values.size))
        out[inside] = self._spline(x[inside])
        out[~inside] = self.quadrature.fbar_columns(x[~inside], self.a_values)
        logger.debug(f"{int((~inside).sum())} quadratures outside the tabulated range")
        return out


@dataclass(frozen=True, eq=False)
class PatternTable:
    w: float
    x: np.ndarray
    a: np.ndarray
    values: np.ndarray
    quadrature: KernelQuadrature
    convention: str = QUADRATURE_CONVENTION
    _spline: RectBivariateSpline = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_spline", RectBivariateSpline(self.x, self.a, self.values, kx=3, ky=3, s=0))

    def __call__(self, x, a) -> np.ndarray:
        x, a = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(a, dtype=float))
        out = np.empty(x.shape)
        inside = (x >= self.x[0]) & (x <= self.x[-1]) & (a >= self.a[0]) & (a <= self.a[-1])
        if inside.any():
            out[inside] = self._spline.ev(x[inside], a[inside])
        if not inside.all():
            out[~inside] = self.quadrature.fbar(x[~inside], a[~inside])
        return out

    def columns(self, a_values) -> PatternColumns:
        a_values = np.asarray(a_values, dtype=float)
        if np.any(a_values < 0):
            raise ValidationError("Radial coordinates must be non-negative")
        return PatternColumns(a_values, self.x, self.quadrature)


@track_performance("build_pattern_table")
def build_pattern_table(w: float, x_range: Tuple[float, float] = PATTERN_X_RANGE,
                        a_range: Tuple[float, float] = PATTERN_A_RANGE,
                        steps: Tuple[float, float] = PATTERN_STEPS,
                        filter: Optional[FilterTable] = None,
                        tolerance: float = PATTERN_TOLERANCE,
                        n_checks: int = 200, seed: int = 0) -> PatternTable:
    """
    Tabulate f-bar on a uniform (x, |alpha|) grid with bicubic interpolation and
    check the interpolant against direct quadrature at random off-grid points.
    """
    table = filter or default_filter_table()
    quadrature = kernel_quadrature(_check_width(w), table)
    if a_range[0] < 0:
        raise ValidationError(f"|alpha| range must be non-negative, got {a_range}")
    x = _uniform_grid(x_range[0], x_range[1], steps[0])
    a = _uniform_grid(a_range[0], a_range[1], steps[1])
    pattern = PatternTable(w, x, a, quadrature.fbar_columns(x, a), quadrature, table.convention)

    rng = substream_rng(seed, 0)
    px = rng.uniform(x[0], x[-1], n_checks)
    pa = rng.uniform(a[0], a[-1], n_checks)
    error = float(np.max(np.abs(pattern(px, pa) - quadrature.fbar(px, pa))))
    if error > tolerance:
        raise NumericalToleranceError(f"Pattern table w={w} interpolation error {error:.2e} > {tolerance:.1e}")
    logger.info(f"Pattern table w={w}: {x.size}x{a.size} grid, spot-check error {error:.2e}")
    return pattern
