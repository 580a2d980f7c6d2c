"""
Synthetic balanced-homodyne data for lossy TMSV states with hidden phase noise.

Quadratures follow x(phi) = a e^{-i phi} + a^dag e^{i phi} = x cos(phi) + p sin(phi),
so the vacuum variance is 1. Phase noise is added to mode A's local-oscillator
phase; records keep the nominal phases.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from scipy.signal import lfilter

from phasecorr.config import (DEFAULT_N_BINS, QUADRATURE_CONVENTION,
                              SCHEMA_VERSION, SIMULATION_CHUNK)
from phasecorr.core.errors import EmptyBinError, ValidationError
from phasecorr.core.monitor import track_performance
from phasecorr.core.performance import chunk_ranges, run_ordered, substream_rng

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

# Substream identifiers for counter-based generation
NOISE_STREAM = 0
QUADRATURE_STREAM = 1
NOISE_START_STREAM = 2


def squeezing_from_db(db: float, eta: float = 1.0, detected: bool = False) -> float:
    """
    Squeezing magnitude r for a squeezing level in dB (sign ignored).

    By default db is the initial squeezing 10 log10(e^{2r}); with detected=True it
    is the measured level -10 log10(eta e^{-2r} + 1 - eta).
    """
    db = abs(float(db))
    if not np.isfinite(db):
        raise ValidationError(f"Squeezing level must be finite, got {db}")
    if not detected:
        return db * np.log(10.0) / 20.0
    if not 0.0 < eta <= 1.0:
        raise ValidationError(f"Detected squeezing needs efficiency in (0, 1], got {eta}")
    residual = (10.0 ** (-db / 10.0) - (1.0 - eta)) / eta
    if residual <= 0.0:
        raise ValidationError(f"{db} dB detected squeezing is unreachable at efficiency {eta}")
    return float(-0.5 * np.log(residual))


def db_from_squeezing(r: float, eta: float = 1.0, detected: bool = False) -> float:
    if not detected:
        return float(20.0 * r / np.log(10.0))
    return float(-10.0 * np.log10(eta * np.exp(-2.0 * r) + 1.0 - eta))


class SqueezingSpec(BaseModel):
    """Two-mode squeezing xi = r e^{i theta} detected with efficiency eta on each mode."""
    r: float = Field(0.0, ge=0.0, allow_inf_nan=False)
    theta: float = Field(0.0, allow_inf_nan=False)
    eta: float = Field(1.0, ge=0.0, le=1.0)
    excess_noise: float = Field(0.0, ge=0.0, allow_inf_nan=False)

    @property
    def p(self) -> float:
        return float(np.tanh(self.r))

    @property
    def thermal_ratio(self) -> float:
        return float(np.tanh(self.r) ** 2)

    @property
    def marginal_variance(self) -> float:
        return float(self.eta * np.cosh(2.0 * self.r) + 1.0 - self.eta + self.excess_noise)

    @classmethod
    def from_db(cls, db: float, eta: float = 1.0, theta: float = 0.0, detected: bool = False) -> "SqueezingSpec":
        return cls(r=squeezing_from_db(db, eta, detected), theta=theta, eta=eta)


class AsymmetricSource(BaseModel):
    """Two single-mode squeezed vacua combined on a 50:50 beam splitter."""
    r1: float = Field(0.0, ge=0.0, allow_inf_nan=False)
    r2: float = Field(0.0, ge=0.0, allow_inf_nan=False)
    relative_phase: float = Field(np.pi / 2, allow_inf_nan=False)
    eta: float = Field(1.0, ge=0.0, le=1.0)


class PhaseNoiseModel(BaseModel):
    kind: Literal["none", "uniform", "band_limited"] = "none"
    sigma: float = Field(0.0, ge=0.0, allow_inf_nan=False)
    correlation_time: float = Field(1.0, gt=0.0, allow_inf_nan=False)


@dataclass
class QuadratureDataset:
    """Records of (x_A, x_B, phi_A, phi_B) with phases in [0, 2 pi)."""
    records: np.ndarray
    seed: Optional[int] = None
    spec: Optional[Union[SqueezingSpec, AsymmetricSource]] = None
    noise: PhaseNoiseModel = field(default_factory=PhaseNoiseModel)
    convention: str = QUADRATURE_CONVENTION

    def __post_init__(self):
        self.records = np.ascontiguousarray(self.records, dtype=np.float64)
        if self.records.ndim != 2 or self.records.shape[1] != 4:
            raise ValidationError(f"Records must have shape (n, 4), got {self.records.shape}")
        if self.records.shape[0] == 0:
            raise ValidationError("Dataset must hold at least one record")
        phases = self.records[:, 2:]
        if not np.all(np.isfinite(self.records)):
            raise ValidationError("Records must be finite")
        if np.any(phases < 0.0) or np.any(phases >= TWO_PI):
            raise ValidationError("Phases must lie in [0, 2 pi)")

    def __len__(self) -> int:
        return self.records.shape[0]

    @property
    def x_a(self) -> np.ndarray:
        return self.records[:, 0]

    @property
    def x_b(self) -> np.ndarray:
        return self.records[:, 1]

    @property
    def phi_a(self) -> np.ndarray:
        return self.records[:, 2]

    @property
    def phi_b(self) -> np.ndarray:
        return self.records[:, 3]

    def slice(self, start: int, stop: int) -> "QuadratureDataset":
        return QuadratureDataset(self.records[start:stop], self.seed, self.spec, self.noise, self.convention)

    def metadata(self) -> Dict[str, Any]:
        spec_kind = type(self.spec).__name__ if self.spec is not None else None
        return {
            "schema_version": SCHEMA_VERSION,
            "convention": self.convention,
            "n_records": len(self),
            "seed": self.seed,
            "spec_kind": spec_kind,
            "spec": self.spec.model_dump() if self.spec is not None else None,
            "noise": self.noise.model_dump(),
        }


@dataclass
class BinnedDataset:
    """Records grouped by phase-bin pair; pair (i, j) is flat index i * n_bins + j."""
    dataset: QuadratureDataset
    n_bins: int
    pair_index: np.ndarray
    order: np.ndarray
    offsets: np.ndarray
    counts: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.n_bins * self.n_bins

    @property
    def bin_width(self) -> float:
        return TWO_PI / self.n_bins

    def bin_centers(self) -> np.ndarray:
        return (np.arange(self.n_bins) + 0.5) * self.bin_width

    def records_for(self, i: int, j: int) -> np.ndarray:
        pair = i * self.n_bins + j
        return self.dataset.records[self.order[self.offsets[pair]:self.offsets[pair + 1]]]


@dataclass
class VarianceProfile:
    mode: str
    bin_centers: np.ndarray
    variances: np.ndarray
    counts: np.ndarray


def _tmsv_entries(spec: SqueezingSpec, phi_a, phi_b) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    diag = spec.marginal_variance
    cross = spec.eta * np.sinh(2.0 * spec.r) * np.cos(np.asarray(phi_a) + np.asarray(phi_b) - spec.theta)
    return np.full_like(cross, diag, dtype=float), np.full_like(cross, diag, dtype=float), cross


def tmsv_covariance(spec: SqueezingSpec, phi_a: float, phi_b: float) -> np.ndarray:
    v11, v22, v12 = _tmsv_entries(spec, phi_a, phi_b)
    return np.array([[float(v11), float(v12)], [float(v12), float(v22)]])


def _asymmetric_phase_space(source: AsymmetricSource) -> np.ndarray:
    """Covariance of (x_A, p_A, x_B, p_B) after the splitter and loss."""
    first = np.diag([np.exp(-2.0 * source.r1), np.exp(2.0 * source.r1)])
    c, s = np.cos(source.relative_phase), np.sin(source.relative_phase)
    rotation = np.array([[c, -s], [s, c]])
    second = rotation @ np.diag([np.exp(-2.0 * source.r2), np.exp(2.0 * source.r2)]) @ rotation.T
    sources = np.zeros((4, 4))
    sources[:2, :2] = first
    sources[2:, 2:] = second
    # A = (1 + 2)/sqrt(2), B = (2 - 1)/sqrt(2), applied to x and p alike
    splitter = np.kron(np.array([[1.0, 1.0], [-1.0, 1.0]]) / np.sqrt(2.0), np.eye(2))
    mixed = splitter @ sources @ splitter.T
    return source.eta * mixed + (1.0 - source.eta) * np.eye(4)


def _asymmetric_entries(source: AsymmetricSource, phi_a, phi_b) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    cov = _asymmetric_phase_space(source)
    ua = np.stack([np.cos(phi_a), np.sin(phi_a)], axis=-1)
    ub = np.stack([np.cos(phi_b), np.sin(phi_b)], axis=-1)
    v11 = np.einsum('...i,ij,...j->...', ua, cov[:2, :2], ua)
    v22 = np.einsum('...i,ij,...j->...', ub, cov[2:, 2:], ub)
    v12 = np.einsum('...i,ij,...j->...', ua, cov[:2, 2:], ub)
    return v11, v22, v12


def asymmetric_covariance(source: AsymmetricSource, phi_a: float, phi_b: float) -> np.ndarray:
    v11, v22, v12 = _asymmetric_entries(source, float(phi_a), float(phi_b))
    return np.array([[float(v11), float(v12)], [float(v12), float(v22)]])


def wrap_phase(phi) -> np.ndarray:
    wrapped = np.mod(phi, TWO_PI)
    return np.where(wrapped >= TWO_PI, 0.0, wrapped)


def cycle_bin_centers(n: int, n_bins: int = DEFAULT_N_BINS) -> np.ndarray:
    """Nominal (phi_A, phi_B) cycling through all n_bins^2 bin-center pairs."""
    if n_bins < 1:
        raise ValidationError(f"n_bins must be >= 1, got {n_bins}")
    pair = np.arange(n) % (n_bins * n_bins)
    width = TWO_PI / n_bins
    return np.column_stack([(pair // n_bins + 0.5) * width, (pair % n_bins + 0.5) * width])


def _check_count(n) -> int:
    if int(n) != n or n <= 0:
        raise ValidationError(f"Record count must be a positive integer, got {n}")
    return int(n)


def sample_phase_noise(model: PhaseNoiseModel, n: int, seed: int, threads: Optional[int] = None) -> np.ndarray:
    """Phase offsets in [0, 2 pi) drawn from `model` (zeros for kind='none')."""
    n = _check_count(n)
    if model.kind == "none":
        return np.zeros(n)
    ranges = chunk_ranges(n, SIMULATION_CHUNK)

    if model.kind == "uniform":
        def draw(item):
            index, (start, stop) = item
            return substream_rng(seed, NOISE_STREAM, index).uniform(0.0, TWO_PI, stop - start)
        return wrap_phase(np.concatenate(run_ordered(draw, list(enumerate(ranges)), threads)))

    def white(item):
        index, (start, stop) = item
        return substream_rng(seed, NOISE_STREAM, index).standard_normal(stop - start)

    innovations = np.concatenate(run_ordered(white, list(enumerate(ranges)), threads))
    # Single-pole low pass with stationary start: y[t] = a y[t-1] + sigma sqrt(1-a^2) e[t]
    a = np.exp(-1.0 / model.correlation_time)
    start = model.sigma * substream_rng(seed, NOISE_START_STREAM, 0).standard_normal()
    smoothed, _ = lfilter([model.sigma * np.sqrt(1.0 - a * a)], [1.0, -a], innovations, zi=[a * start])
    return wrap_phase(smoothed)


def wrapped_uniformity(phases: np.ndarray, n_hist: int = 36) -> float:
    """Total-variation distance between a wrapped-phase histogram and the uniform law."""
    counts, _ = np.histogram(wrap_phase(phases), bins=n_hist, range=(0.0, TWO_PI))
    return float(0.5 * np.abs(counts / counts.sum() - 1.0 / n_hist).sum())


def _resolve_schedule(phase_schedule: Optional[np.ndarray], n: int) -> np.ndarray:
    if phase_schedule is None:
        return cycle_bin_centers(n)
    schedule = np.asarray(phase_schedule, dtype=np.float64)
    if schedule.shape != (n, 2):
        raise ValidationError(f"Phase schedule must have shape {(n, 2)}, got {schedule.shape}")
    return wrap_phase(schedule)


def _sample(entries, model, noise: PhaseNoiseModel, n: int, phase_schedule, seed: int,
            threads: Optional[int]) -> QuadratureDataset:
    n = _check_count(n)
    nominal = _resolve_schedule(phase_schedule, n)
    delta = sample_phase_noise(noise, n, seed, threads)

    def draw(item):
        index, (start, stop) = item
        z = substream_rng(seed, QUADRATURE_STREAM, index).standard_normal((stop - start, 2))
        v11, v22, v12 = entries(model, nominal[start:stop, 0] + delta[start:stop], nominal[start:stop, 1])
        sd_a = np.sqrt(v11)
        x_a = sd_a * z[:, 0]
        x_b = (v12 / sd_a) * z[:, 0] + np.sqrt(np.maximum(v22 - v12 * v12 / v11, 0.0)) * z[:, 1]
        return np.column_stack([x_a, x_b])

    quadratures = np.concatenate(run_ordered(draw, list(enumerate(chunk_ranges(n, SIMULATION_CHUNK))), threads))
    records = np.column_stack([quadratures, nominal])
    logger.info(f"Simulated {n} records (noise={noise.kind}, seed={seed})")
    return QuadratureDataset(records, seed=seed, spec=model, noise=noise)


@track_performance("sample_dataset")
def sample_dataset(spec: SqueezingSpec, noise: PhaseNoiseModel, n: int,
                   phase_schedule: Optional[np.ndarray] = None, seed: int = 0,
                   threads: Optional[int] = None) -> QuadratureDataset:
    """
    Draw n homodyne records of the lossy TMSV `spec`.

    The default schedule cycles the bin-center pairs of the 30 x 30 phase grid.
    Output is identical for any thread count.
    """
    return _sample(_tmsv_entries, spec, noise, n, phase_schedule, seed, threads)


@track_performance("sample_asymmetric")
def sample_asymmetric(source: AsymmetricSource, noise: PhaseNoiseModel, n: int,
                      phase_schedule: Optional[np.ndarray] = None, seed: int = 0,
                      threads: Optional[int] = None) -> QuadratureDataset:
    return _sample(_asymmetric_entries, source, noise, n, phase_schedule, seed, threads)


def _phase_bins(phi: np.ndarray, n_bins: int) -> np.ndarray:
    return np.minimum((phi / (TWO_PI / n_bins)).astype(np.int64), n_bins - 1)


def bin_phases(ds: QuadratureDataset, n_bins: int = DEFAULT_N_BINS) -> BinnedDataset:
    if int(n_bins) != n_bins or n_bins < 1:
        raise ValidationError(f"n_bins must be a positive integer, got {n_bins}")
    pair_index = _phase_bins(ds.phi_a, n_bins) * n_bins + _phase_bins(ds.phi_b, n_bins)
    order = np.argsort(pair_index, kind='stable')
    flat_counts = np.bincount(pair_index, minlength=n_bins * n_bins)
    offsets = np.concatenate([[0], np.cumsum(flat_counts)])
    return BinnedDataset(ds, n_bins, pair_index, order, offsets, flat_counts.reshape(n_bins, n_bins))


def variance_profile(ds: QuadratureDataset, mode: Literal["A", "B"], n_bins: int = DEFAULT_N_BINS) -> VarianceProfile:
    """Per-bin sample variance of mode's quadrature in units of the vacuum variance."""
    if mode == "A":
        x, phi = ds.x_a, ds.phi_a
    elif mode == "B":
        x, phi = ds.x_b, ds.phi_b
    else:
        raise ValidationError(f"Mode must be 'A' or 'B', got {mode!r}")
    bins = _phase_bins(phi, n_bins)
    counts = np.bincount(bins, minlength=n_bins)
    sparse_bins = np.flatnonzero(counts < 2)
    if sparse_bins.size:
        raise EmptyBinError((int(sparse_bins[0]),),
                            f"Phase bin {int(sparse_bins[0])} of mode {mode} holds fewer than two records")
    sums = np.bincount(bins, weights=x, minlength=n_bins)
    means = sums / counts
    squares = np.bincount(bins, weights=(x - means[bins]) ** 2, minlength=n_bins)
    centers = (np.arange(n_bins) + 0.5) * TWO_PI / n_bins
    return VarianceProfile(mode, centers, squares / (counts - 1), counts)
