"""Connectivity-constrained Ward clustering, dendrogram cutting and the planning pipeline"""
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import ConfigError, HierarchyError, InfeasibleRequest, MeasurementError
from .layers import build_layers, coherency_from_series, normalize_layer, topology_layer
from .manifold import embedding_points, layer_alignment, unify
from .settings import RunConfig
from .spectral_core import eigendecompose, laplacian, select_k_majority, spectrum_of

logger = logging.getLogger(__name__)

_NEWICK_UNSAFE = re.compile(r"[\s(),:;'\[\]]")


@dataclass(frozen=True)
class MergeStep:
    left: int
    right: int
    height: float
    new_size: int


@dataclass(frozen=True)
class Dendrogram:
    """Merge history over N leaves; cluster ids follow the leaves (N, N+1, ...).

    A constrained dendrogram over a disconnected graph stops short of N-1
    merges and is a forest with one root per component.
    """

    merges: Tuple[MergeStep, ...]
    labels: Tuple[str, ...]
    edges: Tuple[Tuple[int, int], ...] = ()
    constrained: bool = True

    @property
    def n_leaves(self):
        return len(self.labels)

    @property
    def n_roots(self):
        return self.n_leaves - len(self.merges)

    def _clusters_after(self, n_merges):
        clusters = {i: (i,) for i in range(self.n_leaves)}
        for step_id, step in enumerate(self.merges[:n_merges], start=self.n_leaves):
            clusters[step_id] = clusters.pop(step.left) + clusters.pop(step.right)
        return clusters

    def levels(self):
        """Partition after 0, 1, ..., len(merges) merges, islands sorted by smallest bus"""
        clusters = {i: frozenset([i]) for i in range(self.n_leaves)}
        yield _sorted_partition(clusters.values())
        for step_id, step in enumerate(self.merges, start=self.n_leaves):
            clusters[step_id] = clusters.pop(step.left) | clusters.pop(step.right)
            yield _sorted_partition(clusters.values())

    def roots(self):
        consumed = set()
        for step in self.merges:
            consumed.update((step.left, step.right))
        top = self.n_leaves + len(self.merges)
        return [i for i in range(top) if i not in consumed]

    def to_dict(self):
        return {
            'labels': list(self.labels),
            'constrained': self.constrained,
            'n_leaves': self.n_leaves,
            'n_roots': self.n_roots,
            'merges': [
                {'id': self.n_leaves + j, 'left': m.left, 'right': m.right, 'height': m.height, 'size': m.new_size}
                for j, m in enumerate(self.merges)
            ],
        }

    def to_linkage(self):
        """scipy-style (N-1) x 4 linkage matrix; only for a single tree"""
        if self.n_roots != 1:
            raise HierarchyError(f"Dendrogram is a forest with {self.n_roots} roots; no linkage matrix")
        return np.array([[m.left, m.right, m.height, m.new_size] for m in self.merges], dtype=float).reshape(-1, 4)

    def to_newick(self):
        """One Newick tree per root; branch length = parent height - child height, clamped at 0"""
        n = self.n_leaves
        children = {n + j: (m.left, m.right) for j, m in enumerate(self.merges)}
        height = {n + j: m.height for j, m in enumerate(self.merges)}
        first_leaf = {i: i for i in range(n)}
        for node in sorted(children):
            first_leaf[node] = min(first_leaf[c] for c in children[node])

        lines = []
        for root in sorted(self.roots(), key=lambda r: first_leaf[r]):
            text = {}
            stack = [(root, False)]
            while stack:
                node, expanded = stack.pop()
                if node < n:
                    text[node] = _newick_label(self.labels[node])
                elif not expanded:
                    stack.append((node, True))
                    stack.extend((c, False) for c in children[node])
                else:
                    parts = []
                    for c in sorted(children[node], key=lambda c: first_leaf[c]):
                        length = max(height[node] - height.get(c, 0.0), 0.0)
                        parts.append(f"{text.pop(c)}:{length:.10g}")
                    text[node] = '(' + ','.join(parts) + ')'
            lines.append(text[root] + ';')
        return '\n'.join(lines) + '\n'


def _newick_label(label):
    if _NEWICK_UNSAFE.search(label):
        return "'" + label.replace("'", "''") + "'"
    return label


def _sorted_partition(sets):
    return tuple(tuple(sorted(s)) for s in sorted(sets, key=min))


@dataclass(frozen=True)
class IslandingPlan:
    assignment: Tuple[int, ...]
    islands: Tuple[Tuple[int, ...], ...]
    lines_to_open: Tuple[Tuple[int, int], ...]
    cut_height: Optional[float]
    labels: Tuple[str, ...]
    generator_buses: FrozenSet[int] = field(default_factory=frozenset)
    wind_buses: FrozenSet[int] = field(default_factory=frozenset)

    @property
    def k(self):
        return len(self.islands)

    def island_labels(self):
        return [[self.labels[i] for i in island] for island in self.islands]

    def to_dict(self):
        return {
            'k': self.k,
            'cut_height': self.cut_height,
            'islands': [
                {
                    'id': idx,
                    'buses': [self.labels[i] for i in island],
                    'generators': [self.labels[i] for i in island if i in self.generator_buses],
                    'wind': [self.labels[i] for i in island if i in self.wind_buses],
                }
                for idx, island in enumerate(self.islands)
            ],
            'assignment': {self.labels[i]: a for i, a in enumerate(self.assignment)},
            'lines_to_open': [[self.labels[a], self.labels[b]] for a, b in self.lines_to_open],
        }

    @classmethod
    def from_dict(cls, data, graph):
        """Rebuild a plan over ``graph`` from its ``to_dict`` form"""
        try:
            groups = [[graph.index_of(label) for label in island['buses']] for island in data['islands']]
            cut_height = data.get('cut_height')
        except (KeyError, TypeError) as e:
            raise HierarchyError(f"Malformed plan: missing {e}")
        return plan_from_islands(graph, groups, cut_height)


def plan_from_islands(graph, groups, cut_height=None):
    n = graph.n_buses
    assignment = [-1] * n
    islands = _sorted_partition([frozenset(g) for g in groups if g])
    for idx, island in enumerate(islands):
        for bus in island:
            if assignment[bus] != -1:
                raise HierarchyError(f"Bus {graph.labels[bus]!r} appears in more than one island")
            assignment[bus] = idx
    unassigned = [graph.labels[i] for i, a in enumerate(assignment) if a == -1]
    if unassigned:
        raise HierarchyError(f"Plan leaves bus(es) unassigned: {', '.join(unassigned)}")
    edges = [br.pair for br in graph.in_service_branches()]
    return IslandingPlan(
        assignment=tuple(assignment),
        islands=islands,
        lines_to_open=tuple(sorted((a, b) for a, b in edges if assignment[a] != assignment[b])),
        cut_height=cut_height,
        labels=graph.labels,
        generator_buses=graph.generator_buses,
        wind_buses=graph.wind_buses,
    )


def ward_cluster(points, adjacency=None, constrained=True, labels=None):
    """Agglomerative Ward clustering by the Lance-Williams recurrence.

    Constrained mode merges only clusters joined by an edge of ``adjacency``.
    Among equal minimum distances the pair with the smallest cluster id, then
    the smallest partner id, merges first.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 1:
        raise HierarchyError("Cannot cluster zero points")
    if not np.all(np.isfinite(x)):
        raise HierarchyError("Embedding has non-finite coordinates")

    edge_matrix = None
    if adjacency is not None:
        edge_matrix = np.asarray(getattr(adjacency, 'matrix', adjacency)) != 0
        if edge_matrix.shape != (n, n):
            raise HierarchyError(f"Adjacency is {edge_matrix.shape}, expected {(n, n)}")
    if constrained and edge_matrix is None:
        raise HierarchyError("Constrained clustering requires an adjacency")
    if labels is None:
        graph = getattr(adjacency, 'graph', None)
        labels = graph.labels if graph is not None else tuple(str(i) for i in range(n))
    labels = tuple(labels)
    edges = ()
    if edge_matrix is not None:
        rows, cols = np.nonzero(np.triu(edge_matrix, 1))
        edges = tuple((int(a), int(b)) for a, b in zip(rows, cols))

    dist = squareform(pdist(x)) if n > 1 else np.zeros((1, 1))
    adj = edge_matrix.copy() if constrained else ~np.eye(n, dtype=bool)
    np.fill_diagonal(adj, False)
    active = np.ones(n, dtype=bool)
    size = np.ones(n, dtype=np.int64)
    ids = np.arange(n)
    merges = []

    for next_id in range(n, 2 * n - 1):
        valid = np.triu(adj & active[:, None] & active[None, :], 1)
        if not valid.any():
            break
        h = np.min(dist[valid])
        rows, cols = np.nonzero(valid & (dist == h))
        _, _, r, c = min((min(ids[r], ids[c]), max(ids[r], ids[c]), r, c) for r, c in zip(rows, cols))
        s, t = (r, c) if ids[r] < ids[c] else (c, r)
        ns, nt = size[s], size[t]
        merges.append(MergeStep(int(ids[s]), int(ids[t]), float(h), int(ns + nt)))

        others = active.copy()
        others[[s, t]] = False
        nv = size[others]
        d2 = ((nv + ns) * dist[others, s] ** 2 + (nv + nt) * dist[others, t] ** 2 - nv * h ** 2) / (ns + nt + nv)
        updated = np.sqrt(np.maximum(d2, 0.0))
        dist[others, s] = updated
        dist[s, others] = updated

        row = adj[s] | adj[t]
        row[[s, t]] = False
        adj[s, :] = row
        adj[:, s] = row
        adj[t, :] = False
        adj[:, t] = False
        active[t] = False
        size[s] = ns + nt
        ids[s] = next_id

    dendro = Dendrogram(tuple(merges), labels, edges, bool(constrained))
    if dendro.n_roots > 1:
        logger.info("Dendrogram is a forest", extra={'roots': dendro.n_roots})
    return dendro


def cut(dendrogram, k):
    """Keep the first N - k merges so exactly k islands remain"""
    n = dendrogram.n_leaves
    if not 1 <= k <= n:
        raise InfeasibleRequest(f"Island count {k} outside 1..{n}")
    if k < dendrogram.n_roots:
        raise InfeasibleRequest(
            f"Island count {k} is below the {dendrogram.n_roots} electrically separate components")
    applied = n - k
    clusters = dendrogram._clusters_after(applied)
    islands = _sorted_partition(frozenset(c) for c in clusters.values())
    assignment = [0] * n
    for idx, island in enumerate(islands):
        for bus in island:
            assignment[bus] = idx
    lines = tuple((a, b) for a, b in dendrogram.edges if assignment[a] != assignment[b])
    cut_height = dendrogram.merges[applied].height if applied < len(dendrogram.merges) else None
    return IslandingPlan(tuple(assignment), islands, lines, cut_height, dendrogram.labels)


def cut_at_height(dendrogram, height):
    """Cut below the first merge whose height exceeds ``height``"""
    applied = 0
    for step in dendrogram.merges:
        if step.height > height:
            break
        applied += 1
    return cut(dendrogram, dendrogram.n_leaves - applied)


def compare_partitions(plan, reference):
    """Match plan islands against reference bus-label sets"""
    ours = {frozenset(island) for island in plan.island_labels()}
    theirs = {frozenset(str(b) for b in island) for island in reference}

    def listing(sets):
        return sorted(sorted(s) for s in sets)

    return {
        'identical': ours == theirs,
        'matched': listing(ours & theirs),
        'plan_only': listing(ours - theirs),
        'reference_only': listing(theirs - ours),
    }


@dataclass(frozen=True, eq=False)
class PlanResult:
    plan: IslandingPlan
    dendrogram: Dendrogram
    spectrum: object
    layer_spectra: Tuple[object, ...]
    layers: Tuple[object, ...]
    k_embed: int
    unified: object
    alignment: Dict[str, float]
    comparison: Optional[dict] = None


def choose_k(spectra, n, config):
    """Embedding dimension: the configured override, else the per-layer eigengap vote"""
    if config.k_embed is not None:
        if config.k_embed > n:
            raise ConfigError(f"Embedding dimension {config.k_embed} exceeds the {n} buses")
        return config.k_embed
    k_max = min(config.k_max, n - 1)
    if k_max < 2:
        logger.info("Too few buses for eigengap selection; using K=1", extra={'n': n})
        return 1
    return select_k_majority(list(spectra), 2, k_max)


def prepare_layers(graph, measurements=None, config=None):
    """Raw layers, normalized Laplacians of their max-normalized forms, and spectra"""
    config = (config or RunConfig()).validate()
    coherency = None
    if config.uses_coherency:
        if measurements is None:
            raise MeasurementError("The frequency_coherency layer needs a measurements file; none was given")
        start, end = config.coherency_window
        coherency = coherency_from_series(graph, measurements, start, end)

    layers = build_layers(graph, config.layer_kinds(), coherency, config.coherency_mode, config.coherency_transform)
    laps = [laplacian(normalize_layer(layer), normalized=True) for layer in layers]
    spectra = [eigendecompose(lap) for lap in laps]
    return layers, laps, spectra


def plan_islands(graph, measurements=None, k=None, config=None):
    """Layers, normalized Laplacians, K, unified Laplacian, constrained Ward, cut"""
    config = (config or RunConfig()).validate()
    if k is not None and k < 1:
        raise InfeasibleRequest(f"Island count must be >= 1, got {k}")

    layers, laps, spectra = prepare_layers(graph, measurements, config)
    k_embed = choose_k(spectra, graph.n_buses, config)

    unified = unify(laps, k_embed, config.alpha)
    points = embedding_points(unified, k_embed, config.embedding_source, config.normalize_rows)
    dendro = ward_cluster(points, topology_layer(graph), constrained=True, labels=graph.labels)

    n_islands = k if k is not None else (config.islands or k_embed)
    plan = replace(cut(dendro, n_islands), generator_buses=graph.generator_buses, wind_buses=graph.wind_buses)
    comparison = compare_partitions(plan, config.reference) if config.reference else None
    if comparison is not None and not comparison['identical']:
        logger.warning("Plan differs from reference partition", extra={'plan_only': comparison['plan_only']})

    logger.info("Islanding plan ready", extra={'k_embed': k_embed, 'islands': plan.k, 'lines': len(plan.lines_to_open)})
    return PlanResult(
        plan=plan,
        dendrogram=dendro,
        spectrum=spectrum_of(unified.matrix, 'unified').with_selected_k(k_embed),
        layer_spectra=tuple(spectra),
        layers=tuple(layers),
        k_embed=k_embed,
        unified=unified,
        alignment=layer_alignment(unified, k_embed),
        comparison=comparison,
    )
