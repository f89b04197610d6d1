"""Laplacians, dense symmetric eigendecomposition and eigengap analysis"""
import dataclasses
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import scipy.linalg as sla

from .errors import SpectralError
from .utils import readonly

logger = logging.getLogger(__name__)

ZERO_EIGENVALUE_TOL = 1e-9
GAP_DENOMINATOR_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LaplacianView:
    matrix: np.ndarray
    normalized: bool
    source_kind: str
    degree: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'matrix', readonly(self.matrix))
        object.__setattr__(self, 'degree', readonly(self.degree))

    @property
    def n_buses(self):
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    eigengaps: np.ndarray
    normalized_eigengaps: np.ndarray
    selected_k: Optional[int] = None
    source_kind: str = ''

    def __post_init__(self):
        for name in ('eigenvalues', 'eigenvectors', 'eigengaps', 'normalized_eigengaps'):
            object.__setattr__(self, name, readonly(getattr(self, name)))

    def with_selected_k(self, k):
        return dataclasses.replace(self, selected_k=int(k))


def laplacian(layer, normalized=True):
    """L = D - W, or the symmetric normalized form entrywise.

    Normalized: unit diagonal where d_i > 0, -w_ij / sqrt(d_i d_j) off the
    diagonal; an isolated bus keeps a zero row.
    """
    w = np.asarray(layer.matrix, dtype=float)
    d = w.sum(axis=1)
    if not normalized:
        lap = np.diag(d) - w
    else:
        inv_sqrt = np.zeros_like(d)
        live = d > 0
        inv_sqrt[live] = 1.0 / np.sqrt(d[live])
        lap = -(w * np.outer(inv_sqrt, inv_sqrt))
        np.fill_diagonal(lap, live.astype(float))
    kind = getattr(layer.kind, 'value', str(layer.kind))
    return LaplacianView(lap, bool(normalized), kind, d)


def symmetric_eigh(matrix):
    """Full ascending spectrum of a real symmetric matrix (indefinite allowed)"""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SpectralError(f"Expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise SpectralError("Matrix has non-finite entries")
    try:
        values, vectors = sla.eigh(a, check_finite=False)
    except (sla.LinAlgError, ValueError) as e:
        raise SpectralError(f"Eigendecomposition failed to converge: {e}")
    return values, vectors


def eigengaps(eigenvalues):
    """Return (gamma, gamma_n) with gamma_i = |l_{i+1} - l_i| and gamma_n_i = gamma_i / l_{i+1}.

    gamma_n is 0 where l_{i+1} is numerically zero.
    """
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    if lam.size < 2:
        return np.zeros(0), np.zeros(0)
    if np.any(np.diff(lam) < 0):
        raise SpectralError("Eigenvalues must be sorted ascending")
    gaps = np.abs(np.diff(lam))
    upper = lam[1:]
    normalized = np.zeros_like(gaps)
    ok = upper > GAP_DENOMINATOR_TOL
    normalized[ok] = gaps[ok] / upper[ok]
    return gaps, normalized


def spectrum_of(matrix, source_kind=''):
    values, vectors = symmetric_eigh(matrix)
    gaps, normalized = eigengaps(values)
    logger.debug("Eigendecomposition done", extra={'source': source_kind, 'n': int(values.size)})
    return SpectrumReport(values, vectors, gaps, normalized, None, source_kind)


def eigendecompose(lap):
    return spectrum_of(lap.matrix, lap.source_kind)


def select_k(report, k_min=2, k_max=None):
    """Embedding dimension with the largest normalized eigengap in [k_min, k_max].

    Index i is 1-based: gamma_n(l_i) compares l_i with l_{i+1}. Ties go to the
    smaller K.
    """
    n = report.eigenvalues.size
    if k_max is None:
        k_max = n - 1
    if k_min < 2 or k_max > n - 1 or k_min > k_max:
        raise SpectralError(f"Empty K search range [{k_min}, {k_max}] for {n} buses")
    window = report.normalized_eigengaps[k_min - 1:k_max]
    return k_min + int(np.argmax(window))


def select_k_majority(reports, k_min=2, k_max=None):
    """Majority vote of per-layer eigengap choices; ties go to the smaller K"""
    if not reports:
        raise SpectralError("No spectra to select K from")
    votes = Counter(select_k(r, k_min, k_max) for r in reports)
    best = max(votes.values())
    k = min(k for k, count in votes.items() if count == best)
    logger.info("Selected embedding dimension", extra={'k': k, 'votes': dict(sorted(votes.items()))})
    return k


def zero_multiplicity(report, tol=ZERO_EIGENVALUE_TOL):
    return int(np.sum(np.abs(report.eigenvalues) <= tol))


def gap_table(report, name=None):
    """Eigenvalue and eigengap rows i = 1..N-1"""
    name = name or report.source_kind
    lam = report.eigenvalues
    m = report.eigengaps.size
    return pd.DataFrame({
        'layer': [name] * m,
        'i': np.arange(1, m + 1),
        'eigenvalue': lam[:m],
        'eigengap': report.eigengaps,
        'normalized_eigengap': report.normalized_eigengaps,
    })


def write_gap_csv(tables, path):
    columns = ['layer', 'i', 'eigenvalue', 'eigengap', 'normalized_eigengap']
    frame = pd.concat(tables, ignore_index=True) if tables else pd.DataFrame(columns=columns)
    frame[columns].to_csv(path, index=False, lineterminator='\n')
