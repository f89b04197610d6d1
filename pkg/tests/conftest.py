import json
from pathlib import Path

import networkx as nx
import numpy as np
import pytest

import isleplan
from isleplan.grid_model import Branch, BusGraph, FrequencySeries, load_case
from isleplan.layers import LayerKind, WeightLayer

CASE9 = Path(isleplan.__file__).parent / 'data' / 'case9_wind.json'
CASE118 = Path(isleplan.__file__).parent / 'data' / 'case118_wind.json'
REFERENCE_ISLANDS = (('6', '5', '1', '4'), ('3', '9'), ('8', '2', '7'))


def _make_graph(n, edges, x=0.1, generators=(), labels=None, flows=None, wind=()):
    """BusGraph on buses 0..n-1 (labels "0".."n-1" unless given) with lossless branches"""
    labels = labels or [str(i) for i in range(n)]
    branches = []
    for idx, (i, j) in enumerate(edges):
        reactance = x[idx] if np.ndim(x) else x
        flow = flows[idx] if flows is not None else 10.0
        branches.append(Branch(i, j, 0.0, reactance, flow, -flow))
    return BusGraph(tuple(labels), tuple(branches), frozenset(generators), frozenset(wind))


def _weighted_layer(w, kind=LayerKind.ADMITTANCE):
    w = np.asarray(w, dtype=float)
    return WeightLayer(kind, w, BusGraph(tuple(str(i) for i in range(w.shape[0]))))


def _random_weights(rng, n, p=0.3, connected=False):
    """Symmetric nonnegative weights; ``connected`` adds a random spanning path"""
    mask = np.triu(rng.random((n, n)) < p, 1)
    if connected:
        order = rng.permutation(n)
        for a, b in zip(order[:-1], order[1:]):
            mask[min(a, b), max(a, b)] = True
    w = np.where(mask, rng.uniform(0.1, 5.0, (n, n)), 0.0)
    return w + w.T


def _series_map(angles, dt=0.01, t0=0.0):
    """{bus: FrequencySeries} from an (n_samples, n_buses) angle array"""
    angles = np.asarray(angles, dtype=float)
    t = t0 + dt * np.arange(angles.shape[0])
    return {b: FrequencySeries(b, t, angles[:, b]) for b in range(angles.shape[1])}


def _nx_connected(graph_nodes, edges):
    g = nx.Graph()
    g.add_nodes_from(graph_nodes)
    g.add_edges_from(e for e in edges if e[0] in graph_nodes and e[1] in graph_nodes)
    return nx.is_connected(g)


@pytest.fixture
def make_graph():
    return _make_graph


@pytest.fixture
def weighted_layer():
    return _weighted_layer


@pytest.fixture
def random_weights():
    return _random_weights


@pytest.fixture
def series_map():
    return _series_map


@pytest.fixture
def induces_connected():
    return _nx_connected


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def case9_path():
    return CASE9


@pytest.fixture
def case9():
    return load_case(CASE9)


@pytest.fixture
def case9_dict():
    return json.loads(CASE9.read_text(encoding='utf-8'))


@pytest.fixture(scope='session')
def case118():
    return load_case(CASE118)


@pytest.fixture
def write_case(tmp_path):
    def write(data, name='case.json'):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding='utf-8')
        return path
    return write


@pytest.fixture
def two_bus_case():
    return {
        'buses': [{'label': 'A', 'is_generator': True}, {'label': 'B'}],
        'branches': [{'from': 'A', 'to': 'B', 'r_pu': 0.0, 'x_pu': 0.5, 'p_from_mw': 50.0, 'p_to_mw': -50.0}],
    }


@pytest.fixture
def reference_islands():
    """Generator-centred three-island split of the 9-bus case after opening 7-5"""
    return REFERENCE_ISLANDS
