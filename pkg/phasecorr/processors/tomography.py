"""
Photon-number-basis homodyne tomography of the two-mode state.

Single-mode pattern functions in the vacuum-variance-1 convention,

    f_mn(x) = int ds |s| e^{isx} <m| exp(-i s x^) |n>
            = 2 (-1)^{floor(d/2)} int_0^inf s R_mn(s) trig_d(s x) ds,

with d = |m - n|, R_mn(s) = sqrt(n!/m!) s^d e^{-s^2/2} L_n^(d)(s^2) for m >= n,
and trig_d = cos for even d, sin for odd d. A density-matrix element is the
uniform phase average of f_kl(x) e^{i(k-l)phi}.
"""
import json
import logging
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from scipy import stats
from scipy.special import eval_genlaguerre, gammaln

from phasecorr.config import (BLOCK_SIZE, DEFAULT_CUTOFF, DEFAULT_N_BINS,
                              DEFAULT_TOMO_BATCHES, GAUSS_ORDER,
                              KERNEL_PANEL_WIDTH, NUMBER_S_MAX, NUMBER_X_MAX,
                              NUMBER_X_STEP)
from phasecorr.core.errors import EmptyBinError, ValidationError
from phasecorr.core.monitor import track_performance
from phasecorr.core.performance import (chunk_ranges, derive_seed, ordered_sum,
                                        run_ordered, substream_rng)
from phasecorr.fock import TwoModeDensityMatrix, _check_cutoff
from phasecorr.fock import coherence_measure as _coherence_measure
from phasecorr.fock import project_psd as _project_psd
from phasecorr.gaussian_sim import (BinnedDataset, PhaseNoiseModel,
                                    SqueezingSpec, bin_phases, sample_dataset)

logger = logging.getLogger(__name__)

# Diagonal sigma above which the cutoff is considered too large for the data
NOISY_SIGMA = 0.05


def _radial_factor(m: int, n: int, s: np.ndarray) -> np.ndarray:
    lo, hi = min(m, n), max(m, n)
    d = hi - lo
    log_norm = 0.5 * (gammaln(lo + 1) - gammaln(hi + 1))
    return np.exp(log_norm - 0.5 * s * s) * s ** d * eval_genlaguerre(lo, d, s * s)


@dataclass(eq=False)
class NumberPatternTable:
    """f_mn on a uniform grid over [-x_max, x_max]; outside the grid the value is 0."""
    cutoff: int
    x: np.ndarray
    values: np.ndarray
    n_truncated: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    def evaluate(self, m: int, n: int, x) -> Tuple[np.ndarray, int]:
        """Interpolated f_mn(x) and the number of points outside the table."""
        if not (0 <= m < self.cutoff and 0 <= n < self.cutoff):
            raise ValidationError(f"Indices ({m}, {n}) outside cutoff {self.cutoff}")
        x = np.asarray(x, dtype=float)
        outside = int(np.count_nonzero(np.abs(x) > self.x_max))
        return np.interp(x, self.x, self.values[m, n], left=0.0, right=0.0), outside

    def __call__(self, m: int, n: int, x) -> np.ndarray:
        values, outside = self.evaluate(m, n, x)
        if outside:
            with self._lock:
                self.n_truncated += outside
            logger.warning(f"{outside} quadrature values beyond |x| = {self.x_max} set to zero")
        return values


@track_performance("build_number_pattern_table")
def build_number_pattern_table(d: int, x_max: float = NUMBER_X_MAX, step: float = NUMBER_X_STEP,
                               s_max: float = NUMBER_S_MAX) -> NumberPatternTable:
    d = _check_cutoff(d)
    panels = int(np.ceil(s_max / KERNEL_PANEL_WIDTH))
    gx, gw = np.polynomial.legendre.leggauss(GAUSS_ORDER)
    left = np.arange(panels) * KERNEL_PANEL_WIDTH
    s = (left[:, None] + 0.5 * KERNEL_PANEL_WIDTH * (gx[None, :] + 1.0)).ravel()
    ws = np.tile(0.5 * KERNEL_PANEL_WIDTH * gw, panels)

    half = np.arange(int(round(x_max / step)) + 1) * step
    cos_matrix = np.cos(np.outer(half, s))
    sin_matrix = np.sin(np.outer(half, s))
    full = np.concatenate([-half[:0:-1], half])
    values = np.empty((d, d, full.size))
    for m in range(d):
        for n in range(m + 1):
            order = m - n
            amps = 2.0 * (-1.0) ** (order // 2) * ws * s * _radial_factor(m, n, s)
            if order % 2 == 0:
                f = cos_matrix @ amps
                mirrored = np.concatenate([f[:0:-1], f])
            else:
                f = sin_matrix @ amps
                mirrored = np.concatenate([-f[:0:-1], f])
            values[m, n] = mirrored
            values[n, m] = mirrored
    logger.info(f"Number pattern table: cutoff {d}, {full.size} points on |x| <= {full[-1]}")
    return NumberPatternTable(d, full, values)


@lru_cache(maxsize=8)
def number_pattern_table(d: int = DEFAULT_CUTOFF) -> NumberPatternTable:
    return build_number_pattern_table(d)


def number_pattern(m: int, n: int, x, table: Optional[NumberPatternTable] = None) -> np.ndarray:
    if m < 0 or n < 0:
        raise ValidationError(f"Photon numbers must be non-negative, got ({m}, {n})")
    table = table or number_pattern_table(max(DEFAULT_CUTOFF, m + 1, n + 1))
    return table(m, n, x)


@dataclass
class DensityMatrixEstimate:
    """Reconstructed entries [k, m, l, n] with batch standard errors of the real and imaginary parts."""
    cutoff: int
    entries: np.ndarray
    sigma_re: np.ndarray
    sigma_im: np.ndarray
    n_records: int
    n_truncated: int = 0
    n_batches: int = DEFAULT_TOMO_BATCHES

    @property
    def density_matrix(self) -> TwoModeDensityMatrix:
        return TwoModeDensityMatrix(self.cutoff, self.entries)

    @property
    def matrix(self) -> np.ndarray:
        return self.density_matrix.matrix

    def to_json(self) -> str:
        document = self.density_matrix.to_document().model_dump()
        document.update({
            "sigma_re": self.sigma_re.reshape(-1).tolist(),
            "sigma_im": self.sigma_im.reshape(-1).tolist(),
            "n_records": self.n_records,
            "n_truncated": self.n_truncated,
            "n_batches": self.n_batches,
        })
        return json.dumps(document, sort_keys=True)


def _features(table: NumberPatternTable, x: np.ndarray, phi: np.ndarray, d: int) -> np.ndarray:
    """Rows f_kl(x) e^{i(k-l) phi}, column k * d + l."""
    out = np.empty((x.size, d * d), dtype=complex)
    for k in range(d):
        for l in range(k, d):
            f, _ = table.evaluate(k, l, x)
            phase = np.exp(1j * (k - l) * phi)
            out[:, k * d + l] = f * phase
            out[:, l * d + k] = f * phase.conj()
    return out


def _batch_labels(binned: BinnedDataset, n_batches: int) -> np.ndarray:
    """Rank of each record within its bin pair, modulo n_batches."""
    flat_counts = binned.counts.ravel()
    rank = np.empty(len(binned.dataset), dtype=np.int64)
    rank[binned.order] = np.arange(rank.size) - np.repeat(binned.offsets[:-1], flat_counts)
    return rank % n_batches


@track_performance("reconstruct_dm")
def reconstruct_dm(binned: BinnedDataset, d: int = DEFAULT_CUTOFF, n_batches: int = DEFAULT_TOMO_BATCHES,
                   table: Optional[NumberPatternTable] = None, threads: Optional[int] = None) -> DensityMatrixEstimate:
    """
    Pattern-function estimate of the two-mode density matrix.

    Each record carries its bin-pair's center phases and weight
    1 / (n_pairs * count), which restores the uniform phase measure.
    Error bars come from n_batches batches dealt round-robin within each bin
    pair, so every batch covers all phases whatever the record order.
    """
    d = _check_cutoff(d)
    if n_batches < 2:
        raise ValidationError(f"At least two batches are needed for error bars, got {n_batches}")
    empty = np.argwhere(binned.counts == 0)
    if empty.size:
        raise EmptyBinError(tuple(empty[0]), f"Phase bin pair {tuple(int(i) for i in empty[0])} holds no records")
    ds = binned.dataset
    n = len(ds)
    if n < n_batches:
        raise ValidationError(f"{n} records cannot fill {n_batches} batches")
    table = table or number_pattern_table(d)
    if table.cutoff < d:
        raise ValidationError(f"Pattern table cutoff {table.cutoff} is below the requested {d}")

    flat_counts = binned.counts.ravel()
    centers = binned.bin_centers()
    labels = _batch_labels(binned, n_batches)

    def accumulate(item):
        start, stop = item
        pair = binned.pair_index[start:stop]
        batch = labels[start:stop]
        weights = 1.0 / (binned.n_pairs * flat_counts[pair])
        fa = _features(table, ds.x_a[start:stop], centers[pair // binned.n_bins], d) * weights[:, None]
        fb = _features(table, ds.x_b[start:stop], centers[pair % binned.n_bins], d)
        outside = int(np.count_nonzero(np.abs(ds.x_a[start:stop]) > table.x_max)
                      + np.count_nonzero(np.abs(ds.x_b[start:stop]) > table.x_max))
        parts = np.stack([fa[batch == b].T @ fb[batch == b] for b in range(n_batches)])
        return parts, outside

    results = run_ordered(accumulate, chunk_ranges(n, BLOCK_SIZE), threads)
    batch_sums = list(ordered_sum(parts for parts, _ in results))
    batch_estimates = np.stack([
        n_batches * s.reshape(d, d, d, d).transpose(0, 2, 1, 3) for s in batch_sums
    ])
    entries = ordered_sum(batch_sums).reshape(d, d, d, d).transpose(0, 2, 1, 3)
    matrix = entries.reshape(d * d, d * d)
    entries = (0.5 * (matrix + matrix.conj().T)).reshape(d, d, d, d)
    sigma_re = batch_estimates.real.std(axis=0, ddof=1) / np.sqrt(n_batches)
    sigma_im = batch_estimates.imag.std(axis=0, ddof=1) / np.sqrt(n_batches)
    n_truncated = sum(outside for _, outside in results)
    if n_truncated:
        logger.warning(f"{n_truncated} quadrature values beyond |x| = {table.x_max} contributed zero")

    diag_sigma = np.array([sigma_re[k, m, k, m] for k in range(d) for m in range(d)])
    if diag_sigma.max() > NOISY_SIGMA:
        logger.warning(f"Cutoff d={d} is noisy for {n} records: largest diagonal sigma {diag_sigma.max():.3f}")
    logger.info(f"Reconstructed d={d} density matrix from {n} records, trace {np.trace(matrix).real:.4f}")
    return DensityMatrixEstimate(d, entries, sigma_re, sigma_im, n, n_truncated, n_batches)


@dataclass
class MonteCarloResult:
    estimates: np.ndarray
    sigma_re: np.ndarray
    sigma_im: np.ndarray
    coherence: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.estimates.mean(axis=0)

    @property
    def coherence_mean(self) -> float:
        return float(self.coherence.mean())

    @property
    def coherence_std(self) -> float:
        return float(self.coherence.std(ddof=1))


@track_performance("monte_carlo_errors")
def monte_carlo_errors(spec: SqueezingSpec, noise: PhaseNoiseModel, n: int, reps: int, d: int = DEFAULT_CUTOFF,
                       seed: int = 0, n_bins: int = DEFAULT_N_BINS, threads: Optional[int] = None) -> MonteCarloResult:
    """Repeat simulate -> bin -> reconstruct `reps` times with independent seeds."""
    if reps < 20:
        raise ValidationError(f"Monte Carlo needs at least 20 repetitions, got {reps}")
    table = number_pattern_table(d)
    estimates = []
    coherence = []
    for rep in range(reps):
        ds = sample_dataset(spec, noise, n, seed=derive_seed(seed, rep), threads=threads)
        est = reconstruct_dm(bin_phases(ds, n_bins), d, n_batches=2, table=table, threads=threads)
        estimates.append(est.entries)
        coherence.append(_coherence_measure(est.density_matrix))
    estimates = np.stack(estimates)
    result = MonteCarloResult(estimates, estimates.real.std(axis=0, ddof=1),
                              estimates.imag.std(axis=0, ddof=1), np.array(coherence))
    logger.info(f"Monte Carlo over {reps} reps: C = {result.coherence_mean:.4f} +- {result.coherence_std:.4f}")
    return result


@dataclass
class OffDiagonalHistogram:
    edges: np.ndarray
    counts_exp: np.ndarray
    counts_mc: Optional[np.ndarray]
    n_values: int
    ks_pvalue: float
    signed: bool

    def rows(self) -> List[Tuple[float, float, float, float]]:
        mc = self.counts_mc if self.counts_mc is not None else np.full(self.counts_exp.shape, np.nan)
        return [(float(lo), float(hi), float(c), float(r))
                for lo, hi, c, r in zip(self.edges[:-1], self.edges[1:], self.counts_exp, mc)]


def _upper_offdiagonal(entries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    d = entries.shape[0]
    return np.triu_indices(d * d, k=1)


def _z_scores(entries: np.ndarray, sigma_re: np.ndarray, sigma_im: np.ndarray) -> np.ndarray:
    d = entries.shape[0]
    rows, cols = _upper_offdiagonal(entries)
    values = entries.reshape(d * d, d * d)[rows, cols]
    s_re = sigma_re.reshape(d * d, d * d)[rows, cols]
    s_im = sigma_im.reshape(d * d, d * d)[rows, cols]
    if np.any(s_re <= 0):
        raise ValidationError("Every off-diagonal entry needs a positive standard deviation")
    has_imag = s_im > 0
    return np.concatenate([values.real / s_re, values.imag[has_imag] / s_im[has_imag]])


def offdiagonal_histogram(est: DensityMatrixEstimate, sigma_re: Optional[np.ndarray] = None,
                          sigma_im: Optional[np.ndarray] = None,
                          reference: Optional[MonteCarloResult] = None,
                          signed: bool = False, bin_width: float = 0.5) -> OffDiagonalHistogram:
    """
    Histogram of off-diagonal real and imaginary parts in units of their standard
    deviation; each Hermitian pair is counted once. With `reference`, the
    Monte Carlo estimates are histogrammed the same way, averaged per repetition.
    """
    sigma_re = est.sigma_re if sigma_re is None else sigma_re
    sigma_im = est.sigma_im if sigma_im is None else sigma_im
    z = _z_scores(est.entries, sigma_re, sigma_im)
    values = z if signed else np.abs(z)
    reference_values = None
    if reference is not None:
        reference_values = np.concatenate([_z_scores(e, sigma_re, sigma_im) for e in reference.estimates])
        reference_values = reference_values if signed else np.abs(reference_values)
    span = np.max(np.abs(values)) if values.size else 0.0
    if reference_values is not None and reference_values.size:
        span = max(span, np.max(np.abs(reference_values)))
    top = max(5.0, np.ceil(span / bin_width) * bin_width + bin_width)
    edges = np.arange(-top if signed else 0.0, top + bin_width / 2, bin_width)
    counts_exp, _ = np.histogram(values, bins=edges)
    counts_mc = None
    if reference_values is not None:
        counts_mc = np.histogram(reference_values, bins=edges)[0] / len(reference.estimates)
    ks = stats.kstest(values, 'norm' if signed else 'halfnorm').pvalue if values.size else np.nan
    return OffDiagonalHistogram(edges, counts_exp, counts_mc, int(values.size), float(ks), signed)


def coherence_with_errors(est: DensityMatrixEstimate, sigma_re: Optional[np.ndarray] = None,
                          sigma_im: Optional[np.ndarray] = None, n_resamples: int = 1000,
                          seed: int = 0) -> Tuple[float, float]:
    """Coherence of the estimate and its spread when entries are resampled within their errors."""
    d = est.cutoff
    sigma_re = est.sigma_re if sigma_re is None else sigma_re
    sigma_im = est.sigma_im if sigma_im is None else sigma_im
    if sigma_re.shape != est.entries.shape or sigma_im.shape != est.entries.shape:
        raise ValidationError("Sigma tables must match the estimate's shape")
    coherence = _coherence_measure(est.density_matrix)
    k, m, l, n = np.meshgrid(*(np.arange(d),) * 4, indexing='ij')
    # Each Hermitian pair once: row (k, m) before column (l, n)
    upper = (k != l) & (m != n) & (k * d + m < l * d + n)
    rng = substream_rng(seed, 0)
    base = est.entries[upper]
    noise = (rng.standard_normal((n_resamples, base.size)) * sigma_re[upper]
             + 1j * rng.standard_normal((n_resamples, base.size)) * sigma_im[upper])
    samples = 2.0 * np.abs(base + noise).sum(axis=1)
    return coherence, float(samples.std(ddof=1))


def coherence_measure(est: DensityMatrixEstimate, joint: bool = True) -> float:
    return _coherence_measure(est.density_matrix, joint)


def project_psd(est: DensityMatrixEstimate) -> DensityMatrixEstimate:
    """PSD-projected copy of the estimate; the error tables are carried unchanged."""
    projected = _project_psd(est.density_matrix)
    return DensityMatrixEstimate(est.cutoff, projected.entries, est.sigma_re, est.sigma_im,
                                 est.n_records, est.n_truncated, est.n_batches)
