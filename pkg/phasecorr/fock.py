"""
Truncated two-mode Fock-space state algebra.

Two-mode operators are stored as dense arrays of shape (d, d, d, d) indexed
[k, m, l, n] for the element <k|_A <m|_B rho |l>_A |n>_B, i.e. row (k, m) and
column (l, n) of the d^2 x d^2 matrix.
"""
import json
import logging
from dataclasses import dataclass
from typing import List, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel
from scipy.stats import binom

from phasecorr.config import SCHEMA_VERSION
from phasecorr.core.errors import ValidationError

logger = logging.getLogger(__name__)

Mode = Literal["A", "B"]


def _check_ratio(p: float) -> float:
    p = float(p)
    if not np.isfinite(p) or not 0.0 <= p < 1.0:
        raise ValidationError(f"Photon-number ratio must lie in [0, 1), got {p}")
    return p


def _check_cutoff(d: int, minimum: int = 1) -> int:
    if int(d) != d or d < minimum:
        raise ValidationError(f"Cutoff must be an integer >= {minimum}, got {d}")
    return int(d)


@dataclass(frozen=True)
class PureTwoModeState:
    """Amplitudes c[k, m] of a two-mode pure state in the truncated number basis."""
    cutoff: int
    coefficients: np.ndarray
    trunc_deficit: float = 0.0

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.coefficients) ** 2))

    def projector(self) -> "TwoModeDensityMatrix":
        c = self.coefficients
        entries = np.einsum('km,ln->kmln', c, c.conj())
        return TwoModeDensityMatrix(self.cutoff, entries, self.trunc_deficit)


class DensityMatrixDocument(BaseModel):
    """JSON document for a two-mode density matrix; only nonzero entries are listed."""
    schema_version: int = SCHEMA_VERSION
    cutoff: int
    trunc_deficit: float = 0.0
    entries: List[Tuple[int, int, int, int, float, float]]


@dataclass
class TwoModeDensityMatrix:
    cutoff: int
    entries: np.ndarray
    trunc_deficit: float = 0.0

    def __post_init__(self):
        d = self.cutoff
        self.entries = np.asarray(self.entries, dtype=complex)
        if self.entries.shape != (d, d, d, d):
            raise ValidationError(
                f"Two-mode entries must have shape {(d, d, d, d)}, got {self.entries.shape}")

    @property
    def matrix(self) -> np.ndarray:
        d = self.cutoff
        return self.entries.reshape(d * d, d * d)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, cutoff: int, trunc_deficit: float = 0.0) -> "TwoModeDensityMatrix":
        d = cutoff
        return cls(d, np.asarray(matrix, dtype=complex).reshape(d, d, d, d), trunc_deficit)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def diagonal(self) -> np.ndarray:
        """Joint photon-number distribution P[k, m] = rho_{(k,m),(k,m)}."""
        d = self.cutoff
        return np.real(np.diagonal(self.matrix)).reshape(d, d)

    def is_hermitian(self, atol: float = 0.0) -> bool:
        m = self.matrix
        return bool(np.allclose(m, m.conj().T, rtol=0.0, atol=atol))

    def min_eigenvalue(self) -> float:
        m = self.matrix
        return float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0])

    def to_document(self, atol: float = 0.0) -> DensityMatrixDocument:
        idx = np.argwhere(np.abs(self.entries) > atol)
        rows = [
            (int(k), int(m), int(l), int(n),
             float(self.entries[k, m, l, n].real), float(self.entries[k, m, l, n].imag))
            for k, m, l, n in idx
        ]
        return DensityMatrixDocument(cutoff=self.cutoff, trunc_deficit=self.trunc_deficit, entries=rows)

    def to_json(self) -> str:
        return json.dumps(self.to_document().model_dump(), sort_keys=True)

    @classmethod
    def from_document(cls, doc: Union[DensityMatrixDocument, dict]) -> "TwoModeDensityMatrix":
        if isinstance(doc, dict):
            doc = DensityMatrixDocument.model_validate(doc)
        d = doc.cutoff
        entries = np.zeros((d, d, d, d), dtype=complex)
        for k, m, l, n, re, im in doc.entries:
            entries[k, m, l, n] = complex(re, im)
        return cls(d, entries, doc.trunc_deficit)

    @classmethod
    def from_json(cls, text: str) -> "TwoModeDensityMatrix":
        return cls.from_document(json.loads(text))


class SingleModeDocument(BaseModel):
    schema_version: int = SCHEMA_VERSION
    cutoff: int
    trunc_deficit: float = 0.0
    entries: List[Tuple[int, int, float, float]]


@dataclass
class SingleModeDensityMatrix:
    cutoff: int
    entries: np.ndarray
    trunc_deficit: float = 0.0

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def to_json(self) -> str:
        rows = [(int(k), int(l), float(self.entries[k, l].real), float(self.entries[k, l].imag))
                for k, l in np.argwhere(self.entries != 0)]
        doc = SingleModeDocument(cutoff=self.cutoff, trunc_deficit=self.trunc_deficit, entries=rows)
        return json.dumps(doc.model_dump(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SingleModeDensityMatrix":
        doc = SingleModeDocument.model_validate_json(text)
        entries = np.zeros((doc.cutoff, doc.cutoff), dtype=complex)
        for k, l, re, im in doc.entries:
            entries[k, l] = complex(re, im)
        return cls(doc.cutoff, entries, doc.trunc_deficit)


def build_tmsv(p: float, theta: float, d: int) -> PureTwoModeState:
    """
    Truncated two-mode squeezed vacuum with amplitude ratio p = tanh|xi| and
    phase theta = arg(xi): c_{n,n} = sqrt(1 - p^2) (p e^{i theta})^n.
    """
    p = _check_ratio(p)
    d = _check_cutoff(d)
    n = np.arange(d)
    coefficients = np.zeros((d, d), dtype=complex)
    coefficients[n, n] = np.sqrt(1.0 - p * p) * (p * np.exp(1j * theta)) ** n
    return PureTwoModeState(d, coefficients, trunc_deficit=p ** (2 * d))


def build_phase_averaged(p: float, d: int) -> TwoModeDensityMatrix:
    """Fully phase-randomized TMSV: sum_n (1-p) p^n |n,n><n,n| with geometric ratio p."""
    p = _check_ratio(p)
    d = _check_cutoff(d)
    entries = np.zeros((d, d, d, d), dtype=complex)
    n = np.arange(d)
    entries[n, n, n, n] = (1.0 - p) * p ** n
    return TwoModeDensityMatrix(d, entries, trunc_deficit=p ** d)


def _coherence_mask(d: int, joint: bool) -> np.ndarray:
    k, m, l, n = np.meshgrid(*(np.arange(d),) * 4, indexing='ij')
    if joint:
        return (k != l) & (m != n)
    return (k != l) | (m != n)


def coherence_measure(rho: TwoModeDensityMatrix, joint: bool = True) -> float:
    """
    Sum of |rho_{(k,m),(l,n)}| over entries that are off-diagonal in both modes.

    joint=False counts entries off-diagonal in either mode, which also picks up
    single-mode coherences.
    """
    entries = np.asarray(rho.entries)
    d = rho.cutoff
    if entries.shape != (d, d, d, d):
        raise ValidationError(f"Expected entries of shape {(d, d, d, d)}, got {entries.shape}")
    return float(np.sum(np.abs(entries[_coherence_mask(d, joint)])))


def dephase(rho: TwoModeDensityMatrix) -> TwoModeDensityMatrix:
    """Independent mode-local phase averaging: keeps entries with k = l and m = n."""
    d = rho.cutoff
    k, m = np.meshgrid(np.arange(d), np.arange(d), indexing='ij')
    entries = np.zeros_like(rho.entries)
    entries[k, m, k, m] = rho.entries[k, m, k, m]
    return TwoModeDensityMatrix(d, entries, rho.trunc_deficit)


def phase_rotate(rho: TwoModeDensityMatrix, phi_a: float, phi_b: float) -> TwoModeDensityMatrix:
    """Conjugate by the local rotation diag(e^{i k phi_A + i m phi_B})."""
    d = rho.cutoff
    n = np.arange(d)
    ua = np.exp(1j * n * phi_a)
    ub = np.exp(1j * n * phi_b)
    factor = np.einsum('k,m,l,n->kmln', ua, ub, ua.conj(), ub.conj())
    return TwoModeDensityMatrix(d, rho.entries * factor, rho.trunc_deficit)


def partial_trace(rho: TwoModeDensityMatrix, mode: Mode) -> SingleModeDensityMatrix:
    """Reduced state of `mode` (the other mode is traced out)."""
    if mode == "A":
        reduced = np.einsum('kmlm->kl', rho.entries)
    elif mode == "B":
        reduced = np.einsum('kmkn->mn', rho.entries)
    else:
        raise ValidationError(f"Mode must be 'A' or 'B', got {mode!r}")
    return SingleModeDensityMatrix(rho.cutoff, reduced, rho.trunc_deficit)


def thermal_state(q: float, d: int) -> SingleModeDensityMatrix:
    """Single-mode thermal state with weights (1-q) q^n."""
    q = _check_ratio(q)
    d = _check_cutoff(d)
    return SingleModeDensityMatrix(d, np.diag((1.0 - q) * q ** np.arange(d)).astype(complex), q ** d)


def lossy_phase_averaged(q: float, eta: float, d: int, n_terms: int = 0) -> TwoModeDensityMatrix:
    """
    Phase-averaged TMSV (geometric ratio q) after independent binomial loss with
    efficiency eta on each mode. The result stays diagonal.
    """
    q = _check_ratio(q)
    d = _check_cutoff(d)
    if not 0.0 <= eta <= 1.0:
        raise ValidationError(f"Efficiency must lie in [0, 1], got {eta}")
    if n_terms <= 0:
        n_terms = d + (int(np.ceil(np.log(1e-17) / np.log(q))) if q > 0 else 1)
    n = np.arange(n_terms)
    weights = (1.0 - q) * q ** n
    j = np.arange(d)
    survive = binom.pmf(j[None, :], n[:, None], eta)  # [n, j]
    joint = np.einsum('n,nj,nk->jk', weights, survive, survive)
    entries = np.zeros((d, d, d, d), dtype=complex)
    jj, kk = np.meshgrid(j, j, indexing='ij')
    entries[jj, kk, jj, kk] = joint
    return TwoModeDensityMatrix(d, entries, trunc_deficit=float(1.0 - joint.sum()))


def _quadrature_operator(d: int, phi: float) -> np.ndarray:
    a = np.diag(np.sqrt(np.arange(1, d)), k=1).astype(complex)
    return a * np.exp(-1j * phi) + a.conj().T * np.exp(1j * phi)


def quadrature_moments(state: PureTwoModeState, phi_a: float, phi_b: float) -> Tuple[float, float, float]:
    """Return (<x_A^2>, <x_B^2>, <x_A x_B>) at local-oscillator phases (phi_A, phi_B)."""
    d = state.cutoff
    c = state.coefficients
    xa = _quadrature_operator(d, phi_a) @ c
    xb = c @ _quadrature_operator(d, phi_b).T
    return (float(np.vdot(xa, xa).real),
            float(np.vdot(xb, xb).real),
            float(np.vdot(xa, xb).real))


def project_psd(rho: TwoModeDensityMatrix) -> TwoModeDensityMatrix:
    """Nearest PSD matrix with the same trace (negative eigenvalues clipped)."""
    m = rho.matrix
    m = 0.5 * (m + m.conj().T)
    vals, vecs = np.linalg.eigh(m)
    trace = vals.sum()
    clipped = np.clip(vals, 0.0, None)
    if clipped.sum() > 0:
        clipped *= trace / clipped.sum()
    projected = (vecs * clipped) @ vecs.conj().T
    logger.debug(f"PSD projection removed eigenvalue mass {float(-vals[vals < 0].sum()):.3e}")
    return TwoModeDensityMatrix.from_matrix(projected, rho.cutoff, rho.trunc_deficit)
