"""
Entanglement activation of the phase-randomized TMSV.

Each mode is split on a 50:50 beam splitter with vacuum, giving the four-mode
state over modes ordered (A, A', B, B'). Four-mode operators are kept sparse;
the flat index of (j_A, j_A', j_B, j_B') is the C-order ravel with shape (d,)*4.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh
from scipy.special import comb

from phasecorr.core.errors import ValidationError
from phasecorr.core.monitor import track_performance
from phasecorr.fock import (PureTwoModeState, TwoModeDensityMatrix,
                            _check_cutoff, _check_ratio)

logger = logging.getLogger(__name__)

FOUR_MODES = ("A", "A'", "B", "B'")

# Components up to this size go to a dense eigensolver
DENSE_EIGEN_LIMIT = 4000


def splitter_image(n: int, d: int) -> PureTwoModeState:
    """
    Image of |n> under the beam splitter with a vacuum ancilla:
    2^{-n/2} sum_j binom(n, j)^{1/2} (-1)^{n-j} |j>|n-j>'.
    """
    d = _check_cutoff(d)
    if int(n) != n or not 0 <= n < d:
        raise ValidationError(f"Photon number must satisfy 0 <= n < cutoff={d}, got {n}")
    n = int(n)
    j = np.arange(n + 1)
    coefficients = np.zeros((d, d), dtype=complex)
    coefficients[j, n - j] = np.sqrt(comb(n, j) / 2.0 ** n) * (-1.0) ** (n - j)
    return PureTwoModeState(d, coefficients)


@dataclass(frozen=True)
class FourModePureState:
    cutoff: int
    amplitudes: np.ndarray

    @classmethod
    def from_product(cls, primed_a: PureTwoModeState, primed_b: PureTwoModeState) -> "FourModePureState":
        """|psi>_{AA'} (x) |chi>_{BB'} in (A, A', B, B') order."""
        amplitudes = np.einsum('ij,kl->ijkl', primed_a.coefficients, primed_b.coefficients)
        return cls(primed_a.cutoff, amplitudes)

    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def sparse_vector(self) -> sparse.csc_matrix:
        return sparse.csc_matrix(self.amplitudes.reshape(-1, 1))


@dataclass
class FourModeDensityMatrix:
    cutoff: int
    matrix: sparse.csr_matrix
    trunc_deficit: float = 0.0

    @property
    def dim(self) -> int:
        return self.cutoff ** 4

    @classmethod
    def from_dense(cls, dense: np.ndarray, cutoff: int, trunc_deficit: float = 0.0) -> "FourModeDensityMatrix":
        dim = cutoff ** 4
        return cls(cutoff, sparse.csr_matrix(np.asarray(dense, dtype=complex).reshape(dim, dim)), trunc_deficit)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def trace(self) -> complex:
        return complex(self.matrix.diagonal().sum())

    def element(self, row: Sequence[int], col: Sequence[int]) -> complex:
        shape = (self.cutoff,) * 4
        return complex(self.matrix[np.ravel_multi_index(tuple(row), shape),
                                   np.ravel_multi_index(tuple(col), shape)])

    def is_hermitian(self, atol: float = 1e-14) -> bool:
        diff = self.matrix - self.matrix.conj().T
        return diff.nnz == 0 or float(abs(diff).max()) <= atol


@track_performance("build_four_mode")
def build_four_mode(p: float, d: int) -> FourModeDensityMatrix:
    """
    Activated state sum_n (1-p) p^n |Psi_n><Psi_n| (x) |Psi_n><Psi_n| for n < d,
    with p the geometric ratio of the phase-averaged input.
    """
    p = _check_ratio(p)
    d = _check_cutoff(d)
    dim = d ** 4
    rows, cols, vals = [], [], []
    for n in range(d):
        weight = (1.0 - p) * p ** n
        if weight == 0.0:
            continue
        psi = splitter_image(n, d)
        vec = FourModePureState.from_product(psi, psi).amplitudes.ravel()
        idx = np.flatnonzero(vec)
        amp = vec[idx]
        rows.append(np.repeat(idx, idx.size))
        cols.append(np.tile(idx, idx.size))
        vals.append(weight * np.outer(amp, amp.conj()).ravel())
    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    ).tocsr()
    logger.debug(f"Four-mode state p={p} d={d}: {matrix.nnz} nonzero entries")
    return FourModeDensityMatrix(d, matrix, trunc_deficit=p ** d)


def _mode_positions(modes: Iterable[str]) -> List[int]:
    positions = []
    for mode in modes:
        if mode not in FOUR_MODES:
            raise ValidationError(f"Unknown mode {mode!r}; expected one of {FOUR_MODES}")
        positions.append(FOUR_MODES.index(mode))
    return sorted(set(positions))


def partial_transpose(rho: FourModeDensityMatrix, transposed_modes: Iterable[str]) -> sparse.csr_matrix:
    """Swap row and column indices of the selected modes."""
    positions = _mode_positions(transposed_modes)
    shape = (rho.cutoff,) * 4
    coo = rho.matrix.tocoo()
    row_idx = np.array(np.unravel_index(coo.row, shape))
    col_idx = np.array(np.unravel_index(coo.col, shape))
    row_idx[positions], col_idx[positions] = col_idx[positions], row_idx[positions].copy()
    return sparse.coo_matrix(
        (coo.data, (np.ravel_multi_index(tuple(row_idx), shape), np.ravel_multi_index(tuple(col_idx), shape))),
        shape=coo.shape,
    ).tocsr()


@track_performance("min_eigenvalue")
def min_eigenvalue(matrix: sparse.spmatrix) -> float:
    """
    Smallest eigenvalue of a sparse Hermitian matrix.

    The matrix is split into the connected components of its sparsity graph and
    each block is solved separately; empty rows contribute eigenvalue 0.
    """
    matrix = sparse.csr_matrix(matrix)
    dim = matrix.shape[0]
    n_components, labels = connected_components(abs(matrix) > 0, directed=False)
    occupied = np.diff(matrix.indptr) > 0
    smallest = 0.0 if not occupied.all() else np.inf
    order = np.argsort(labels, kind='stable')
    boundaries = np.flatnonzero(np.diff(labels[order])) + 1
    for block in np.split(order, boundaries):
        if not occupied[block].any():
            continue
        sub = matrix[block][:, block]
        if block.size <= DENSE_EIGEN_LIMIT:
            dense = sub.toarray()
            value = np.linalg.eigvalsh(0.5 * (dense + dense.conj().T))[0]
        else:
            value = eigsh(sub, k=1, which='SA', return_eigenvectors=False)[0]
        smallest = min(smallest, float(value))
    logger.debug(f"Minimum eigenvalue over {n_components} blocks of a {dim}x{dim} matrix: {smallest:.3e}")
    return float(smallest)


# Nonzero entries of W = (|Phi><Phi|)^{PT on A', B'} with
# |Phi> = |0011> - |1100> (unnormalized), as (coefficient, bra index, ket index)
# so that tr(W rho) = sum coefficient * rho[bra, ket].
WITNESS_TERMS = (
    (1.0, (0, 0, 1, 1), (0, 0, 1, 1)),
    (1.0, (1, 1, 0, 0), (1, 1, 0, 0)),
    (-1.0, (1, 0, 0, 1), (0, 1, 1, 0)),
    (-1.0, (0, 1, 1, 0), (1, 0, 0, 1)),
)


def witness_expectation(rho: FourModeDensityMatrix) -> float:
    if rho.cutoff < 2:
        raise ValidationError("Witness needs a cutoff of at least 2 (one photon per mode)")
    value = sum(c * rho.element(row, col) for c, row, col in WITNESS_TERMS)
    return float(np.real(value))


def analytic_witness(p: float) -> float:
    p = _check_ratio(p)
    return -(1.0 - p) * p / 2.0


def four_mode_partial_trace(rho: FourModeDensityMatrix, keep: Tuple[str, str] = ("A", "B")) -> TwoModeDensityMatrix:
    """Reduced two-mode state on `keep`, in the order given."""
    kept = [FOUR_MODES.index(m) if m in FOUR_MODES else -1 for m in keep]
    if len(kept) != 2 or -1 in kept or kept[0] == kept[1]:
        raise ValidationError(f"keep must name two distinct modes of {FOUR_MODES}, got {keep}")
    traced = [i for i in range(4) if i not in kept]
    d = rho.cutoff
    coo = rho.matrix.tocoo()
    row_idx = np.unravel_index(coo.row, (d,) * 4)
    col_idx = np.unravel_index(coo.col, (d,) * 4)
    mask = np.ones(coo.nnz, dtype=bool)
    for i in traced:
        mask &= row_idx[i] == col_idx[i]
    entries = np.zeros((d, d, d, d), dtype=complex)
    np.add.at(
        entries,
        (row_idx[kept[0]][mask], row_idx[kept[1]][mask], col_idx[kept[0]][mask], col_idx[kept[1]][mask]),
        coo.data[mask],
    )
    return TwoModeDensityMatrix(d, entries, rho.trunc_deficit)


class WitnessReport(BaseModel):
    p: float
    cutoff: int
    witness_numeric: float
    witness_analytic: float
    pt_min_eigenvalue: float


def witness_report(p: float, d: int) -> WitnessReport:
    rho = build_four_mode(p, d)
    numeric = witness_expectation(rho)
    analytic = analytic_witness(p)
    pt_min = min_eigenvalue(partial_transpose(rho, ("A'", "B'")))
    if abs(numeric - analytic) > max(1e-12, p ** d):
        logger.warning(f"Witness mismatch at p={p}, d={d}: numeric={numeric:.3e} analytic={analytic:.3e}")
    return WitnessReport(p=p, cutoff=d, witness_numeric=numeric,
                         witness_analytic=analytic, pt_min_eigenvalue=pt_min)


@track_performance("witness_scan")
def witness_scan(p_values: Iterable[float], d: int) -> List[WitnessReport]:
    return [witness_report(float(p), d) for p in p_values]
