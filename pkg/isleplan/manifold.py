"""Grassmann-manifold fusion of per-layer spectral embeddings"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np
import scipy.linalg as sla

from .errors import ManifoldError
from .spectral_core import symmetric_eigh
from .utils import readonly

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.5


class EmbeddingSource(str, Enum):
    EIGENVECTORS = 'eigenvectors'
    LAPLACIAN_ROWS = 'laplacian_rows'


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    embeddings: Tuple[np.ndarray, ...]
    k: int
    layer_kinds: Tuple[str, ...]

    def __post_init__(self):
        embs = tuple(readonly(u) for u in self.embeddings)
        object.__setattr__(self, 'embeddings', embs)
        object.__setattr__(self, 'layer_kinds', tuple(self.layer_kinds))
        shapes = {u.shape for u in embs}
        if len(shapes) > 1:
            raise ManifoldError(f"Embeddings differ in shape: {sorted(shapes)}")
        for u in embs:
            if u.shape[1] != self.k:
                raise ManifoldError(f"Embedding has {u.shape[1]} columns, expected K={self.k}")


@dataclass(frozen=True, eq=False)
class UnifiedLaplacian:
    matrix: np.ndarray
    alpha: float
    sources: Tuple[str, ...]
    embeddings: EmbeddingSet

    def __post_init__(self):
        object.__setattr__(self, 'matrix', readonly(self.matrix))
        object.__setattr__(self, 'sources', tuple(self.sources))


def fix_signs(vectors):
    """Flip each column so its largest-magnitude entry is positive (lowest index on ties)"""
    out = np.array(vectors, dtype=float, copy=True)
    for c in range(out.shape[1]):
        pivot = int(np.argmax(np.abs(out[:, c])))
        if out[pivot, c] < 0:
            out[:, c] = -out[:, c]
    return out


def _bottom_eigenvectors(matrix, k):
    n = matrix.shape[0]
    if not 1 <= k <= n:
        raise ManifoldError(f"K={k} outside 1..{n}")
    _, vectors = symmetric_eigh(matrix)
    return fix_signs(vectors[:, :k])


def embed(lap, k):
    """First K eigenvectors of a Laplacian, ascending, sign-fixed"""
    return _bottom_eigenvectors(lap.matrix, k)


def unify(laps, k, alpha=DEFAULT_ALPHA):
    """L_uni = sum(L_i) - alpha * sum(U_i U_i^T)"""
    if not laps:
        raise ManifoldError("At least one Laplacian is required")
    if alpha < 0:
        raise ManifoldError(f"alpha must be >= 0, got {alpha}")
    n = laps[0].n_buses
    for lap in laps:
        if lap.matrix.shape != (n, n):
            raise ManifoldError(f"Laplacian {lap.source_kind} is {lap.matrix.shape}, expected {(n, n)}")

    embeddings = [embed(lap, k) for lap in laps]
    total = np.zeros((n, n))
    for lap in laps:
        total = total + lap.matrix
    if alpha != 0:
        projectors = np.zeros((n, n))
        for u in embeddings:
            projectors = projectors + u @ u.T
        total = total - alpha * projectors
    total = 0.5 * (total + total.T)

    kinds = tuple(lap.source_kind for lap in laps)
    logger.info("Unified Laplacian built", extra={'layers': list(kinds), 'k': k, 'alpha': alpha})
    return UnifiedLaplacian(total, float(alpha), kinds, EmbeddingSet(tuple(embeddings), k, kinds))


def unified_embedding(uni, k):
    """Bottom-K eigenvectors of the unified Laplacian (which may be indefinite)"""
    return _bottom_eigenvectors(uni.matrix, k)


def embedding_points(uni, k, source=EmbeddingSource.EIGENVECTORS, normalize_rows=False):
    """Coordinates fed to the hierarchical clustering"""
    source = EmbeddingSource(source)
    if source is EmbeddingSource.EIGENVECTORS:
        points = unified_embedding(uni, k)
    else:
        points = np.array(uni.matrix, copy=True)
    if normalize_rows:
        norms = np.linalg.norm(points, axis=1)
        live = norms > 0
        points[live] = points[live] / norms[live, None]
    return points


def fusion_objective(u, laps, embeddings, alpha):
    """Objective minimized by the unified subspace for a candidate embedding U"""
    u = np.asarray(u, dtype=float)
    k = u.shape[1]
    m = len(laps)
    smooth = sum(np.trace(u.T @ lap.matrix @ u) for lap in laps)
    proj = u @ u.T
    overlap = sum(np.trace(proj @ (ui @ ui.T)) for ui in embeddings)
    return float(smooth + alpha * (k * m - overlap))


def layer_alignment(uni, k):
    """Largest principal angle (radians) between the unified and each layer subspace"""
    unified = unified_embedding(uni, k)
    return {
        kind: float(np.max(sla.subspace_angles(unified, u)))
        for kind, u in zip(uni.embeddings.layer_kinds, uni.embeddings.embeddings)
    }
