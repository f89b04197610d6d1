"""Weight layers: topology, admittance, power flow and frequency coherency"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import LayerError, MeasurementError
from .grid_model import BusGraph, FrequencySeries, missing_buses, window_series
from .utils import readonly

logger = logging.getLogger(__name__)


class LayerKind(str, Enum):
    TOPOLOGY = 'topology'
    ADMITTANCE = 'admittance'
    POWER_FLOW = 'power_flow'
    FREQUENCY_COHERENCY = 'frequency_coherency'


DEFAULT_LAYERS = (
    LayerKind.TOPOLOGY,
    LayerKind.ADMITTANCE,
    LayerKind.POWER_FLOW,
    LayerKind.FREQUENCY_COHERENCY,
)


class CoherencyMode(str, Enum):
    EDGE_RESTRICTED = 'edge_restricted'
    DENSE = 'dense'


class CoherencyTransform(str, Enum):
    CLAMP = 'clamp'
    SHIFT = 'shift'


@dataclass(frozen=True, eq=False)
class WeightLayer:
    """Symmetric, nonnegative, zero-diagonal edge weights over a BusGraph's buses"""

    kind: LayerKind
    matrix: np.ndarray
    graph: BusGraph

    def __post_init__(self):
        w = readonly(self.matrix)
        object.__setattr__(self, 'matrix', w)
        n = self.graph.n_buses
        if w.shape != (n, n):
            raise LayerError(f"{self.kind.value} layer must be {n}x{n}, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise LayerError(f"{self.kind.value} layer has non-finite weights")
        if not np.array_equal(w, w.T):
            raise LayerError(f"{self.kind.value} layer is not symmetric")
        if np.any(np.diag(w) != 0):
            raise LayerError(f"{self.kind.value} layer has self-loops")
        if np.any(w < 0):
            raise LayerError(f"{self.kind.value} layer has negative weights")

    @property
    def n_buses(self):
        return self.graph.n_buses

    @property
    def degrees(self):
        return self.matrix.sum(axis=1)


@dataclass(frozen=True, eq=False)
class CoherencyMatrix:
    """Pairwise cosine similarity of frequency-deviation vectors"""

    cc: np.ndarray
    buses: Tuple[int, ...]
    window: Tuple[Optional[float], Optional[float]] = (None, None)

    def __post_init__(self):
        object.__setattr__(self, 'cc', readonly(self.cc))
        object.__setattr__(self, 'buses', tuple(self.buses))


def _symmetric_from_edges(graph, weight_of):
    n = graph.n_buses
    w = np.zeros((n, n))
    for br in graph.in_service_branches():
        value = weight_of(br)
        w[br.from_bus, br.to_bus] = value
        w[br.to_bus, br.from_bus] = value
    return w


def topology_layer(graph):
    return WeightLayer(LayerKind.TOPOLOGY, _symmetric_from_edges(graph, lambda br: 1.0), graph)


def admittance_layer(graph):
    def weight(br):
        if br.r_pu == 0 and br.x_pu == 0:
            raise LayerError(f"Zero-impedance branch {graph.branch_name(br)} reached the admittance layer")
        return 1.0 / np.sqrt(br.r_pu ** 2 + br.x_pu ** 2)

    return WeightLayer(LayerKind.ADMITTANCE, _symmetric_from_edges(graph, weight), graph)


def powerflow_layer(graph):
    def weight(br):
        if br.p_from_mw is None or br.p_to_mw is None:
            raise LayerError(f"Branch {graph.branch_name(br)} is missing power flow values")
        return (abs(br.p_from_mw) + abs(br.p_to_mw)) / 2.0

    return WeightLayer(LayerKind.POWER_FLOW, _symmetric_from_edges(graph, weight), graph)


def frequency_deviation(series: FrequencySeries, omega0):
    """Per-unit frequency deviation: (1/omega0) * dphi/dt, one entry per step"""
    dt = series.dt
    if dt == 0:
        raise LayerError(f"Bus {series.bus}: zero timestep")
    return np.diff(series.angles) / dt / omega0


def deviation_map(series: Mapping[int, FrequencySeries], omega0):
    return {bus: frequency_deviation(s, omega0) for bus, s in sorted(series.items())}


def coherency_matrix(deviations: Mapping[int, np.ndarray], window=(None, None)):
    """Cosine similarity between every pair of deviation vectors.

    A zero deviation vector carries no evidence of coherency: its pairs get 0,
    its own diagonal entry stays 1.
    """
    if not deviations:
        raise LayerError("No deviation vectors given")
    buses = tuple(sorted(deviations))
    lengths = {len(np.ravel(deviations[b])) for b in buses}
    if len(lengths) != 1:
        raise LayerError(f"Deviation vectors differ in length: {sorted(lengths)}")
    if lengths.pop() < 1:
        raise LayerError("Deviation vectors are empty")

    x = np.vstack([np.asarray(deviations[b], dtype=float).ravel() for b in buses])
    norms = np.linalg.norm(x, axis=1)
    live = norms > 0
    unit = np.zeros_like(x)
    unit[live] = x[live] / norms[live, None]
    cc = np.clip(unit @ unit.T, -1.0, 1.0)
    cc = np.triu(cc, 1)
    cc = cc + cc.T
    np.fill_diagonal(cc, 1.0)
    dead = [b for b, ok in zip(buses, live) if not ok]
    if dead:
        logger.info("Flat deviation vectors treated as incoherent", extra={'buses': dead})
    return CoherencyMatrix(cc, buses, tuple(window))


def coherency_from_series(graph, series: Mapping[int, FrequencySeries], start=None, end=None):
    """CC matrix of every bus over the [start, end] window of its angle series"""
    missing = missing_buses(series, graph)
    if missing:
        raise MeasurementError(f"No measurements for bus(es): {', '.join(missing)}")
    windowed = window_series(series, start, end)
    return coherency_matrix(deviation_map(windowed, graph.omega0), window=(start, end))


def coherency_layer(cc, graph, mode=CoherencyMode.EDGE_RESTRICTED, transform=CoherencyTransform.CLAMP):
    mode = CoherencyMode(mode)
    transform = CoherencyTransform(transform)
    n = graph.n_buses
    if cc.buses != tuple(range(n)):
        raise LayerError(f"Coherency matrix covers buses {list(cc.buses)}, graph has {n} buses")

    if transform is CoherencyTransform.CLAMP:
        w = np.clip(cc.cc, 0.0, 1.0)
    else:
        w = (cc.cc + 1.0) / 2.0
    w = np.array(w)
    np.fill_diagonal(w, 0.0)
    if mode is CoherencyMode.EDGE_RESTRICTED:
        w = w * (topology_layer(graph).matrix > 0)
    return WeightLayer(LayerKind.FREQUENCY_COHERENCY, w, graph)


def normalize_layer(layer):
    """Divide by the largest weight so heterogeneous layers share a unit range"""
    peak = layer.matrix.max() if layer.matrix.size else 0.0
    if peak <= 0:
        return layer
    return WeightLayer(layer.kind, layer.matrix / peak, layer.graph)


def build_layers(graph, kinds: Sequence[LayerKind] = DEFAULT_LAYERS, coherency: Optional[CoherencyMatrix] = None,
                 mode=CoherencyMode.EDGE_RESTRICTED, transform=CoherencyTransform.CLAMP):
    layers = []
    for kind in kinds:
        kind = LayerKind(kind)
        if kind is LayerKind.TOPOLOGY:
            layers.append(topology_layer(graph))
        elif kind is LayerKind.ADMITTANCE:
            layers.append(admittance_layer(graph))
        elif kind is LayerKind.POWER_FLOW:
            layers.append(powerflow_layer(graph))
        else:
            if coherency is None:
                raise LayerError("Frequency coherency layer requires measurements")
            layers.append(coherency_layer(coherency, graph, mode, transform))
    return layers


def layer_frame(layer):
    labels = list(layer.graph.labels)
    return pd.DataFrame(np.asarray(layer.matrix), index=labels, columns=labels)


def write_layer_csv(layer, path):
    layer_frame(layer).to_csv(path, index_label='bus', lineterminator='\n')


def coherency_frame(cc, graph):
    labels = [graph.labels[b] for b in cc.buses]
    return pd.DataFrame(np.asarray(cc.cc), index=labels, columns=labels)


def write_coherency_csv(cc, graph, path):
    coherency_frame(cc, graph).to_csv(path, index_label='bus', float_format='%.15g', lineterminator='\n')
