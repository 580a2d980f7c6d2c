"""
Direct sampling of the phase-averaged regularized P function P_Omega(|alpha|, |beta|).

    P_Omega(a, b) = (1/N) sum_j fbar(x_A_j, a; w) fbar(x_B_j, b; w)

Record phases are not used. Sums run over fixed-size record blocks reduced in
block order, so results do not depend on the thread count.
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import i0e, j0

from phasecorr.config import (BLOCK_SIZE, BOUNDARY_TOLERANCE, DEFAULT_ENSEMBLES,
                              DEFAULT_GRID)
from phasecorr.core.errors import (BoundaryMassWarning, PhaseCorrError,
                                   ValidationError)
from phasecorr.core.monitor import track_performance
from phasecorr.core.performance import ordered_sum, run_ordered
from phasecorr.filterkernel import (FilterTable, PatternColumns, PatternTable,
                                    build_pattern_table, kernel_quadrature)
from phasecorr.gaussian_sim import (PhaseNoiseModel, QuadratureDataset,
                                    SqueezingSpec)

logger = logging.getLogger(__name__)


def grid_axis(start: float = DEFAULT_GRID[0], stop: float = DEFAULT_GRID[1],
              step: float = DEFAULT_GRID[2]) -> np.ndarray:
    """Inclusive uniform radial axis."""
    if start < 0 or not stop >= start or not step > 0:
        raise ValidationError(f"Invalid radial axis {start}:{stop}:{step}")
    n = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(n), 12)


@dataclass
class PhaseSpaceGrid:
    """P values on a[i] x b[j]; sigma is None for pure means."""
    a: np.ndarray
    b: np.ndarray
    p: np.ndarray
    sigma: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def z(self) -> np.ndarray:
        if self.sigma is None:
            raise ValidationError("Grid carries no standard errors")
        return self.p / self.sigma

    def index_of(self, a: float, b: float) -> Tuple[int, int]:
        """Grid point nearest to (a, b)."""
        return int(np.argmin(np.abs(self.a - a))), int(np.argmin(np.abs(self.b - b)))

    def rows(self) -> List[Tuple[float, ...]]:
        out = []
        for i, a in enumerate(self.a):
            for j, b in enumerate(self.b):
                if self.sigma is None:
                    out.append((float(a), float(b), float(self.p[i, j])))
                else:
                    out.append((float(a), float(b), float(self.p[i, j]),
                                float(self.sigma[i, j]), float(self.p[i, j] / self.sigma[i, j])))
        return out


@dataclass
class SignificanceReport:
    significance: float
    a_star: float
    b_star: float
    w: Optional[float]
    z_scores: np.ndarray

    def summary(self) -> Dict[str, Any]:
        return {"w": self.w, "Sigma": self.significance, "argmax": [self.a_star, self.b_star]}


@dataclass
class WidthScanEntry:
    w: float
    significance: float = float("nan")
    min_p: float = float("nan")
    a_star: float = float("nan")
    b_star: float = float("nan")
    error: Optional[str] = None


@dataclass
class WidthScanResult:
    entries: List[WidthScanEntry]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def best(self) -> Optional[WidthScanEntry]:
        """Entry with the largest significance; ties go to the smaller width."""
        ok = [e for e in self.entries if e.error is None]
        if not ok:
            return None
        return max(sorted(ok, key=lambda e: e.w), key=lambda e: e.significance)

    def rows(self) -> List[Tuple[float, float, float, float, float]]:
        return [(e.w, e.significance, e.min_p, e.a_star, e.b_star) for e in self.entries]


def _check_table(ds: QuadratureDataset, w: float, table: PatternTable) -> None:
    if ds.convention != table.convention:
        raise ValidationError(f"Dataset convention {ds.convention!r} does not match table {table.convention!r}")
    if abs(table.w - w) > 1e-12:
        raise ValidationError(f"Pattern table was built for w={table.w}, not w={w}")


def _columns(table: PatternTable, a: np.ndarray, b: np.ndarray) -> Tuple[PatternColumns, PatternColumns]:
    cols_a = table.columns(a)
    cols_b = cols_a if np.array_equal(a, b) else table.columns(b)
    return cols_a, cols_b


def _range_sums(ds: QuadratureDataset, cols_a: PatternColumns, cols_b: PatternColumns,
                ranges: Sequence[Tuple[int, int]], threads: Optional[int]) -> List[np.ndarray]:
    """sum_j fbar_A(j)^T fbar_B(j) for each record range, in range order."""
    items = [(r, start, min(start + BLOCK_SIZE, stop))
             for r, (start, stop) in enumerate(ranges) for start in range(start, stop, BLOCK_SIZE)]

    def block(item):
        _, start, stop = item
        return cols_a(ds.x_a[start:stop]).T @ cols_b(ds.x_b[start:stop])

    parts = run_ordered(block, items, threads)
    return [ordered_sum(p for (rr, _, _), p in zip(items, parts) if rr == r) for r in range(len(ranges))]


@track_performance("estimate_pomega")
def estimate_pomega(ds: QuadratureDataset, a: np.ndarray, b: np.ndarray, w: float,
                    table: PatternTable, threads: Optional[int] = None) -> PhaseSpaceGrid:
    _check_table(ds, w, table)
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    cols_a, cols_b = _columns(table, a, b)
    (total,) = _range_sums(ds, cols_a, cols_b, [(0, len(ds))], threads)
    return PhaseSpaceGrid(a, b, total / len(ds), None,
                          {"w": w, "n_total": len(ds), "n_ensembles": 1})


@track_performance("ensemble_stats")
def ensemble_stats(ds: QuadratureDataset, a: np.ndarray, b: np.ndarray, w: float, table: PatternTable,
                   n_ensembles: int = DEFAULT_ENSEMBLES, threads: Optional[int] = None) -> PhaseSpaceGrid:
    """Means over contiguous ensembles and the standard error sigma_N = std / sqrt(n_ensembles)."""
    if n_ensembles < 2:
        raise ValidationError(f"At least two ensembles are needed, got {n_ensembles}")
    _check_table(ds, w, table)
    size = len(ds) // n_ensembles
    if size == 0:
        raise ValidationError(f"{len(ds)} records cannot fill {n_ensembles} ensembles")
    dropped = len(ds) - size * n_ensembles
    if dropped:
        logger.warning(f"Dropping {dropped} trailing records to form {n_ensembles} equal ensembles")
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    cols_a, cols_b = _columns(table, a, b)
    ranges = [(e * size, (e + 1) * size) for e in range(n_ensembles)]
    per_ensemble = np.stack(_range_sums(ds, cols_a, cols_b, ranges, threads)) / size
    mean = per_ensemble.mean(axis=0)
    sigma = per_ensemble.std(axis=0, ddof=1) / np.sqrt(n_ensembles)
    return PhaseSpaceGrid(a, b, mean, sigma, {
        "w": w, "n_total": size * n_ensembles, "n_ensembles": n_ensembles, "dropped": dropped,
    })


def significance(stats: PhaseSpaceGrid) -> SignificanceReport:
    """Sigma = max(-P / sigma_N); the first maximum in (a, b) order wins ties."""
    if stats.sigma is None or np.any(~(stats.sigma > 0)):
        raise ValidationError("Significance needs positive standard errors at every grid point")
    z = -stats.p / stats.sigma
    i, j = np.unravel_index(int(np.argmax(z)), z.shape)
    return SignificanceReport(float(z[i, j]), float(stats.a[i]), float(stats.b[j]),
                              stats.metadata.get("w"), z)


@track_performance("width_scan")
def width_scan(ds: QuadratureDataset, a: np.ndarray, b: np.ndarray, w_list: Sequence[float],
               filter: Optional[FilterTable] = None, n_ensembles: int = DEFAULT_ENSEMBLES,
               threads: Optional[int] = None, **table_options) -> WidthScanResult:
    """
    Significance and minimum of P_Omega for each width. The same dataset is used
    for every w, so the Sigma(w) values are correlated.
    """
    entries = []
    for w in w_list:
        try:
            table = build_pattern_table(w, filter=filter, **table_options)
            stats = ensemble_stats(ds, a, b, w, table, n_ensembles, threads)
            report = significance(stats)
            entries.append(WidthScanEntry(float(w), report.significance, float(stats.p.min()),
                                          report.a_star, report.b_star))
            logger.info(f"w={w}: Sigma={report.significance:.2f} at ({report.a_star}, {report.b_star})")
        except PhaseCorrError as e:
            logger.error(f"Width scan failed at w={w}: {e}")
            entries.append(WidthScanEntry(float(w), error=str(e)))
    return WidthScanResult(entries, {"n_total": len(ds), "n_ensembles": n_ensembles, "dataset_reused": True})


def _radial_weights(axis: np.ndarray) -> np.ndarray:
    """Trapezoid weights times the 2 pi r Jacobian."""
    if axis.size < 2:
        raise ValidationError("Normalization needs at least two points per axis")
    gaps = np.diff(axis)
    trapezoid = np.zeros(axis.size)
    trapezoid[:-1] += gaps / 2
    trapezoid[1:] += gaps / 2
    return 2.0 * np.pi * axis * trapezoid


def normalization_check(grid: PhaseSpaceGrid, tolerance: float = BOUNDARY_TOLERANCE) -> float:
    """
    Integral of P_Omega over both phase planes using radial symmetry.

    Warns when the outermost row or column still holds more than `tolerance`
    of the peak |P|. Edge values within three standard errors of zero do not count.
    """
    total = float(_radial_weights(grid.a) @ grid.p @ _radial_weights(grid.b))
    edge = np.abs(np.concatenate([grid.p[-1, :], grid.p[:, -1]]))
    if grid.sigma is not None:
        edge = np.maximum(edge - 3.0 * np.concatenate([grid.sigma[-1, :], grid.sigma[:, -1]]), 0.0)
    peak = float(np.max(np.abs(grid.p)))
    boundary = float(np.max(edge)) / peak if peak > 0 else 0.0
    if boundary > tolerance:
        message = (f"P_Omega keeps {boundary:.2e} of its peak on the grid boundary; "
                   f"normalization {total:.4f} is truncated")
        logger.warning(message)
        warnings.warn(message, BoundaryMassWarning, stacklevel=2)
    return total


@track_performance("pomega_oracle")
def pomega_oracle(spec: SqueezingSpec, noise: PhaseNoiseModel, a: np.ndarray, b: np.ndarray, w: float,
                  filter: Optional[FilterTable] = None) -> PhaseSpaceGrid:
    """
    Expected value of the estimator for uniformly phase-randomized data:

        (4/pi^2) int int z1 z2 Omega~(z1/w) Omega~(z2/w) J0(2 z1 a) J0(2 z2 b)
                 exp(-(v - 1)(z1^2 + z2^2)/2) I0(c z1 z2) dz1 dz2

    with v the marginal variance and c = eta sinh(2r); the uniform phase average
    of the cross term produces the I0 factor. Evaluated in log space on the
    kernel's Gauss-Legendre nodes.
    """
    if noise.kind != "uniform":
        raise ValidationError(f"The oracle needs uniform phase randomization, got {noise.kind!r}")
    quadrature = kernel_quadrature(float(w), filter)
    z = quadrature.nodes
    log_h = quadrature.log_damped
    v = spec.marginal_variance
    c = spec.eta * np.sinh(2.0 * spec.r)
    cz = c * np.outer(z, z)
    log_m = (log_h[:, None] + log_h[None, :]
             - 0.5 * (v - 1.0) * (z[:, None] ** 2 + z[None, :] ** 2) + cz + np.log(i0e(cz)))
    kernel = np.exp(log_m)
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    p = j0(2.0 * np.outer(a, z)) @ kernel @ j0(2.0 * np.outer(z, b))
    return PhaseSpaceGrid(a, b, p, None, {"w": float(w), "oracle": True})
