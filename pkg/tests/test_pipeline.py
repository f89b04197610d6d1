import networkx as nx
import numpy as np
import pytest

from isleplan.errors import InfeasibleRequest, MeasurementError
from isleplan.grid_model import apply_outage, graph_from_case_dict
from isleplan.hierarchy import compare_partitions, plan_islands
from isleplan.settings import RunConfig
from isleplan.spectral_core import select_k
from isleplan.synth_dynamics import SwingConfig, simulate

STATIC = ('topology', 'admittance', 'power_flow')
OUTAGE = (('7', '5'),)


def _static_config(**kwargs):
    return RunConfig(**{"layers": STATIC, "outages": OUTAGE, **kwargs})


def _label_sets(plan):
    return {frozenset(island) for island in plan.island_labels()}


@pytest.fixture
def islanded_case9(case9):
    return apply_outage(case9, OUTAGE)


def test_nine_bus_three_islands(islanded_case9):
    graph = islanded_case9
    result = plan_islands(graph, config=_static_config(islands=3))
    plan = result.plan
    assert plan.k == 3
    assert sorted(b for island in plan.islands for b in island) == list(range(9))

    g = graph.to_networkx()
    for island in plan.islands:
        assert nx.is_connected(g.subgraph(island))
    crossing = sorted(tuple(sorted(e)) for e in g.edges() if plan.assignment[e[0]] != plan.assignment[e[1]])
    assert sorted(tuple(sorted(p)) for p in plan.lines_to_open) == crossing
    assert result.spectrum.selected_k == result.k_embed == 3
    assert set(result.alignment) == set(STATIC)
    assert _label_sets(plan) == {frozenset('145'), frozenset('278'), frozenset('369')}
    for island in plan.to_dict()['islands']:
        assert len(island['generators']) == 1


def test_reference_comparison_is_attached(islanded_case9, reference_islands):
    result = plan_islands(islanded_case9, config=_static_config(islands=3, reference=reference_islands))
    assert result.comparison == compare_partitions(result.plan, reference_islands)


def test_single_island_is_trivial(islanded_case9):
    result = plan_islands(islanded_case9, k=1, config=_static_config())
    assert result.plan.islands == (tuple(range(9)),)
    assert result.plan.lines_to_open == ()
    assert result.plan.cut_height is None


def test_island_count_guards(islanded_case9):
    with pytest.raises(InfeasibleRequest):
        plan_islands(islanded_case9, k=0, config=_static_config())
    with pytest.raises(InfeasibleRequest):
        plan_islands(islanded_case9, k=10, config=_static_config())


def test_explicit_k_overrides_config(islanded_case9):
    result = plan_islands(islanded_case9, k=4, config=_static_config(islands=2))
    assert result.plan.k == 4


def test_separate_components_are_never_joined(case9):
    graph = apply_outage(case9, [('4', '5'), ('7', '5')])
    result = plan_islands(graph, config=_static_config(islands=2, outages=()))
    assert ['5'] in result.plan.island_labels()
    with pytest.raises(InfeasibleRequest, match="electrically separate"):
        plan_islands(graph, k=1, config=_static_config(outages=()))


def test_plan_is_invariant_to_bus_order(case9_dict, rng):
    base = apply_outage(graph_from_case_dict(case9_dict), OUTAGE)
    expected = _label_sets(plan_islands(base, config=_static_config(islands=3)).plan)
    for _ in range(3):
        shuffled = dict(case9_dict)
        shuffled['buses'] = [case9_dict['buses'][i] for i in rng.permutation(len(case9_dict['buses']))]
        shuffled['branches'] = [case9_dict['branches'][i] for i in rng.permutation(len(case9_dict['branches']))]
        graph = apply_outage(graph_from_case_dict(shuffled), OUTAGE)
        assert _label_sets(plan_islands(graph, config=_static_config(islands=3)).plan) == expected


@pytest.fixture
def simulated_case9(case9):
    swing = SwingConfig.for_graph(case9, dt=0.002, horizon=5.0, event_time=2.0, outages=OUTAGE)
    return apply_outage(case9, OUTAGE), simulate(case9, swing)


def test_simulated_measurements_drive_all_four_layers(simulated_case9):
    graph, series = simulated_case9
    config = RunConfig(outages=OUTAGE, islands=3)
    result = plan_islands(graph, series, config=config)
    assert [layer.kind.value for layer in result.layers] == list(config.layers)
    assert 'frequency_coherency' in result.alignment
    assert result.plan.k == 3
    topology, coherency = result.layers[0].matrix, result.layers[-1].matrix
    assert np.all(coherency >= 0)
    assert np.all(coherency[topology == 0] == 0)


def test_four_layer_run_reproduces_reference_split(simulated_case9, reference_islands):
    graph, series = simulated_case9
    result = plan_islands(graph, series, config=RunConfig(outages=OUTAGE, islands=3, reference=reference_islands))
    # per-layer votes: topology 3, admittance 2, power flow 3, coherency 2
    assert [select_k(s, 2, 8) for s in result.layer_spectra] == [3, 2, 3, 2]
    assert result.k_embed == 2
    assert _label_sets(result.plan) == {frozenset('1456'), frozenset('278'), frozenset('39')}
    assert result.comparison['identical']
    for island in result.plan.to_dict()['islands']:
        assert len(island['generators']) == 1


def test_four_layer_default_vote_gives_two_islands(simulated_case9):
    graph, series = simulated_case9
    result = plan_islands(graph, series, config=RunConfig(outages=OUTAGE))
    assert result.k_embed == 2
    assert _label_sets(result.plan) == {frozenset('134569'), frozenset('278')}
    assert sorted(map(sorted, (i['generators'] for i in result.plan.to_dict()['islands']))) == [['1', '3'], ['2']]


def test_coherency_layer_needs_measurements(islanded_case9):
    with pytest.raises(MeasurementError, match="measurements"):
        plan_islands(islanded_case9, config=RunConfig(outages=OUTAGE))


OUTAGE_118 = (('30', '38'), ('38', '65'))


@pytest.fixture
def islanded_case118(case118):
    return apply_outage(case118, OUTAGE_118)


def test_118_bus_plan_keeps_islands_connected(islanded_case118):
    graph = islanded_case118
    result = plan_islands(graph, config=RunConfig(layers=STATIC, outages=OUTAGE_118, islands=4))
    plan = result.plan
    assert plan.k == 4
    assert sorted(b for island in plan.islands for b in island) == list(range(118))
    g = graph.to_networkx()
    for island in plan.islands:
        assert nx.is_connected(g.subgraph(island))
    crossing = sorted(tuple(sorted(e)) for e in g.edges() if plan.assignment[e[0]] != plan.assignment[e[1]])
    assert sorted(tuple(sorted(p)) for p in plan.lines_to_open) == crossing
    assert 2 <= result.k_embed <= 10


@pytest.mark.xfail(strict=False, reason="four subsystems also depend on the wind dispatch and the coherency layer")
def test_118_bus_vote_forms_four_subsystems(islanded_case118):
    result = plan_islands(islanded_case118, config=RunConfig(layers=STATIC, outages=OUTAGE_118))
    assert result.k_embed == 4
    assert result.plan.k == 4
