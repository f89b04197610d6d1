import itertools
import math

import networkx as nx
import numpy as np
import pytest

from isleplan.errors import QualityError
from isleplan.hierarchy import plan_from_islands
from isleplan.layers import powerflow_layer, topology_layer
from isleplan.quality import (
    ConductanceMode,
    _growth_strings,
    cheeger_check,
    conductance,
    island_quality,
    k_way_expansion_bruteforce,
    qualities_to_dict,
    render_quality_report,
    score_plan,
)
from isleplan.spectral_core import eigendecompose, laplacian

K4 = np.ones((4, 4)) - np.eye(4)


def _adjacency(g):
    return nx.to_numpy_array(g, nodelist=sorted(g.nodes()))


def test_k4_paper_literal(weighted_layer):
    q = island_quality(weighted_layer(K4), {0, 1}, ConductanceMode.PAPER_LITERAL)
    assert (q.boundary, q.volume, q.conductance) == (4.0, 2.0, 2.0)


def test_k4_standard(weighted_layer):
    q = island_quality(weighted_layer(K4), {0, 1}, ConductanceMode.STANDARD)
    assert (q.boundary, q.volume) == (4.0, 6.0)
    assert q.conductance == pytest.approx(4 / 6)


@pytest.mark.parametrize('mode', list(ConductanceMode))
def test_whole_grid_has_zero_conductance(weighted_layer, mode):
    assert conductance(weighted_layer(K4), range(4), mode) == 0.0


def test_singleton_paper_literal_is_infinite(weighted_layer):
    assert math.isinf(conductance(weighted_layer(K4), [2], ConductanceMode.PAPER_LITERAL))


def test_isolated_singleton_is_zero(weighted_layer):
    w = np.zeros((3, 3))
    w[0, 1] = w[1, 0] = 1.0
    assert conductance(weighted_layer(w), [2], ConductanceMode.PAPER_LITERAL) == 0.0


def test_empty_or_foreign_island(weighted_layer):
    with pytest.raises(QualityError, match="empty"):
        conductance(weighted_layer(K4), [])
    with pytest.raises(QualityError, match="outside"):
        conductance(weighted_layer(K4), [7])


def test_boundary_symmetry_and_partition_sum(weighted_layer, random_weights, rng):
    w = random_weights(rng, 10, connected=True)
    layer = weighted_layer(w)
    labels = rng.integers(0, 3, size=10)
    islands = [np.flatnonzero(labels == c) for c in range(3) if np.any(labels == c)]
    for mode in ConductanceMode:
        for island in islands:
            rest = np.setdiff1d(np.arange(10), island)
            if rest.size:
                assert island_quality(layer, island, mode).boundary == pytest.approx(
                    island_quality(layer, rest, mode).boundary)
    crossing = sum(w[i, j] for i in range(10) for j in range(i + 1, 10) if labels[i] != labels[j])
    total = sum(island_quality(layer, island).boundary for island in islands)
    assert total == pytest.approx(2 * crossing)


def test_standard_conductance_at_most_one(weighted_layer, random_weights, rng):
    layer = weighted_layer(random_weights(rng, 9, connected=True))
    for _ in range(50):
        size = int(rng.integers(1, 9))
        island = rng.choice(9, size=size, replace=False)
        phi = conductance(layer, island, ConductanceMode.STANDARD)
        assert 0.0 <= phi <= 1.0 + 1e-12


def test_rho_of_disjoint_edges(make_graph):
    layer = topology_layer(make_graph(4, [(0, 1), (2, 3)]))
    assert k_way_expansion_bruteforce(layer, 2) == 0.0


def test_rho_of_path_graph(make_graph):
    # cutting one edge of 1-2-3: the leaf side has boundary 1 and volume 1
    layer = topology_layer(make_graph(3, [(0, 1), (1, 2)]))
    assert k_way_expansion_bruteforce(layer, 2) == pytest.approx(1.0)


def test_rho_of_k4(weighted_layer):
    assert k_way_expansion_bruteforce(weighted_layer(K4), 2) == pytest.approx(2 / 3)


def test_rho_of_one_block_is_zero(weighted_layer, random_weights, rng):
    assert k_way_expansion_bruteforce(weighted_layer(random_weights(rng, 6, connected=True)), 1) == 0.0


def test_rho_guards(weighted_layer):
    with pytest.raises(QualityError, match="limited to 12"):
        k_way_expansion_bruteforce(weighted_layer(np.zeros((13, 13))), 2)
    with pytest.raises(QualityError, match="outside"):
        k_way_expansion_bruteforce(weighted_layer(K4), 5)


def test_rho_matches_explicit_enumeration(weighted_layer, random_weights, rng):
    w = random_weights(rng, 6, connected=True)
    layer = weighted_layer(w)
    best = math.inf
    for mask in range(1, 2 ** 6 - 1):
        island = [i for i in range(6) if mask >> i & 1]
        rest = [i for i in range(6) if not mask >> i & 1]
        best = min(best, max(conductance(layer, island, 'standard'), conductance(layer, rest, 'standard')))
    assert k_way_expansion_bruteforce(layer, 2) == pytest.approx(best)


def test_rho_of_twelve_bus_ring(make_graph):
    # four arcs of three buses: boundary 2 over volume 6
    layer = topology_layer(make_graph(12, [(i, (i + 1) % 12) for i in range(12)]))
    assert k_way_expansion_bruteforce(layer, 4) == pytest.approx(1 / 3)


def _stirling2(n, k):
    table = [[1] + [0] * k] + [[0] * (k + 1) for _ in range(n)]
    for i in range(1, n + 1):
        for j in range(1, k + 1):
            table[i][j] = j * table[i - 1][j] + table[i - 1][j - 1]
    return table[n][k]


@pytest.mark.parametrize('n, k', [(1, 1), (4, 2), (6, 3), (8, 8), (10, 4)])
def test_growth_strings_enumerate_each_partition_once(n, k):
    batches = list(_growth_strings(n, k, batch=1000))
    assert all(0 < b.shape[0] <= 1000 and b.shape[1] == n for b in batches)
    strings = np.vstack(batches)
    assert strings.shape[0] == _stirling2(n, k)
    assert np.all(strings[:, 0] == 0)
    running = np.maximum.accumulate(strings, axis=1)
    assert np.all(strings[:, 1:] <= running[:, :-1] + 1)
    assert np.all(running[:, -1] == k - 1)
    assert len({row.tobytes() for row in strings}) == strings.shape[0]


def test_growth_strings_stream_the_largest_case_in_batches():
    sizes = [b.shape[0] for b in _growth_strings(12, 5, batch=4096)]
    assert max(sizes) <= 4096
    assert sum(sizes) == _stirling2(12, 5)


def test_growth_strings_small_sets_match_itertools():
    expected = {p for p in itertools.product(range(3), repeat=5)
                if p[0] == 0 and len(set(p)) == 3
                and all(p[i] <= max(p[:i]) + 1 for i in range(1, 5))}
    got = {tuple(int(v) for v in row) for b in _growth_strings(5, 3) for row in b}
    assert got == expected


def test_k4_cheeger(weighted_layer):
    layer = weighted_layer(K4)
    report = cheeger_check(eigendecompose(laplacian(layer)), layer, 2)
    assert report.eigenvalue == pytest.approx(4 / 3)
    assert report.rho == pytest.approx(2 / 3)
    assert report.holds
    assert report.sqrt_eigenvalue == pytest.approx(math.sqrt(4 / 3))
    assert report.upper_indep == pytest.approx(math.sqrt((4 / 3) / 0.25 ** 3))


def test_disconnected_cheeger_is_tight(make_graph):
    layer = topology_layer(make_graph(5, [(0, 1), (1, 2), (3, 4)]))
    report = cheeger_check(eigendecompose(laplacian(layer)), layer, 2)
    assert report.eigenvalue == pytest.approx(0.0, abs=1e-12)
    assert report.rho == 0.0
    assert report.holds


def test_cheeger_delta_range(weighted_layer):
    layer = weighted_layer(K4)
    with pytest.raises(QualityError, match="delta"):
        cheeger_check(eigendecompose(laplacian(layer)), layer, 2, delta=0.4)


def test_cheeger_lower_bound_on_all_small_connected_graphs(weighted_layer):
    for g in nx.graph_atlas_g()[1:]:
        if g.number_of_nodes() < 2 or not nx.is_connected(g):
            continue
        layer = weighted_layer(_adjacency(g))
        spectrum = eigendecompose(laplacian(layer))
        for k in (2, 3):
            if k <= g.number_of_nodes():
                assert cheeger_check(spectrum, layer, k).holds


def _connected_eight_bus_adjacencies():
    """A connected 7-bus graph plus one bus joined to a nonempty subset; covers every connected 8-bus graph"""
    for g in nx.graph_atlas_g():
        if g.number_of_nodes() != 7 or not nx.is_connected(g):
            continue
        base = np.zeros((8, 8))
        base[:7, :7] = _adjacency(g)
        for mask in range(1, 1 << 7):
            w = base.copy()
            w[7, :7] = w[:7, 7] = [mask >> i & 1 for i in range(7)]
            yield w


def test_cheeger_lower_bound_on_every_connected_eight_bus_graph(weighted_layer):
    count = 0
    for w in _connected_eight_bus_adjacencies():
        layer = weighted_layer(w)
        spectrum = eigendecompose(laplacian(layer))
        two, three = (cheeger_check(spectrum, layer, k) for k in (2, 3))
        assert two.holds and three.holds
        assert two.rho <= three.rho + 1e-12
        count += 1
    assert count == 853 * 127


def test_score_plan(case9):
    plan = plan_from_islands(case9, [[0, 3, 4, 5], [2, 8], [1, 6, 7]])
    layers = [topology_layer(case9), powerflow_layer(case9)]
    qualities = score_plan(plan, layers)
    assert [q.layer for q in qualities] == ['topology', 'power_flow']
    topo = qualities[0]
    assert [q.members for q in topo.islands] == [(0, 3, 4, 5), (1, 6, 7), (2, 8)]
    assert [q.boundary for q in topo.islands] == [2.0, 2.0, 2.0]
    assert topo.worst_conductance == max(q.conductance for q in topo.islands)
    assert topo.cheeger_lower == pytest.approx(topo.eigenvalue_k / 2)


def test_score_trivial_and_singleton_plans(case9):
    layers = [topology_layer(case9)]
    whole = score_plan(plan_from_islands(case9, [list(range(9))]), layers)[0]
    assert whole.islands[0].boundary == 0.0
    singles = score_plan(plan_from_islands(case9, [[i] for i in range(9)]), layers)[0]
    assert all(math.isinf(q.conductance) for q in singles.islands)


def test_score_plan_dimension_mismatch(case9, make_graph):
    plan = plan_from_islands(case9, [list(range(9))])
    with pytest.raises(QualityError, match="covers 9 buses"):
        score_plan(plan, [topology_layer(make_graph(3, [(0, 1)]))])


def test_report_rendering_is_plain_and_stable(case9):
    plan = plan_from_islands(case9, [[0, 3, 4, 5], [2, 8], [1, 6, 7]])
    qualities = score_plan(plan, [topology_layer(case9)])
    text = render_quality_report(qualities, plan)
    assert text == render_quality_report(qualities, plan)
    assert 'topology (paper_literal)' in text
    assert '\x1b' not in text
    assert '1 4 5 6' in text


def test_qualities_to_dict_encodes_infinity(case9):
    plan = plan_from_islands(case9, [[i] for i in range(9)])
    data = qualities_to_dict(score_plan(plan, [topology_layer(case9)]), plan.labels)
    assert data[0]['islands'][0]['buses'] == ['1']
    assert math.isinf(data[0]['worst_conductance'])
