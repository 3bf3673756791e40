import json

import numpy as np
import pytest

from secureabm.analysis import (DEFAULT_AGE_BINS, Condition, Histogram, IndicatorError, IndicatorSpec,
                                PreconditionError, ever_infected, infected, payload_text, random_indicator,
                                secure_histogram, secure_sensitivity, secure_summary_statistic, validate_bins)
from secureabm.engine import AgentRecord, run_secure_simulation
from secureabm.population import ETHNICITY_CATEGORIES, PopulationSpec, generate_population
from secureabm.sir import INFECTED, ModelParams, SIRModel, Snapshot, grad_beta_expected
from secureabm.transport import Kind, make_transport


@pytest.fixture(scope="module")
def simulated():
    agents, graph = generate_population(PopulationSpec(n_agents=300), seed=21)
    params = ModelParams(beta=0.8, i0=0.05, n_t=15)
    run_secure_simulation(0, agents, SIRModel(), params, params.n_t, seed=4)
    return agents, graph


def _plain(agents, ind):
    return int(ind.evaluate(agents).sum())


def test_true_indicator_counts_everyone(simulated):
    agents, _ = simulated
    assert secure_summary_statistic(0, agents, IndicatorSpec()) == len(agents)


def test_all_susceptible_population_has_no_infected():
    agents, _ = generate_population(PopulationSpec(n_agents=50), seed=1)
    for a in agents:
        a.state = np.array([0.0, 0.0])
    assert secure_summary_statistic(0, agents, infected()) == 0


def test_infected_in_age_band_matches_oracle(simulated):
    agents, _ = simulated
    ind = infected() & IndicatorSpec((Condition("age", "range", (20, 30)),))
    assert secure_summary_statistic(0, agents, ind, seed=3) == _plain(agents, ind)


def test_randomized_indicators_match_oracle(simulated):
    agents, _ = simulated
    rng = np.random.default_rng(0)
    for k in range(20):
        ind = random_indicator(rng, agents)
        assert secure_summary_statistic(0, agents, ind, seed=k) == _plain(agents, ind)


def test_status_names_are_accepted():
    ind = IndicatorSpec.parse([{"field": "status", "op": "in", "value": ["infected", "recovered"]}])
    agents = [AgentRecord(1, state=np.array([1.0, 0])), AgentRecord(2, state=np.array([2.0, 0])),
              AgentRecord(3, state=np.array([0.0, 0]))]
    assert ind.evaluate(agents).tolist() == [1, 1, 0]
    assert ever_infected().evaluate(agents).tolist() == [1, 1, 0]


def test_unknown_field_rejected_before_traffic(simulated):
    agents, _ = simulated
    tr = make_transport("sequential", [0, *(a.id for a in agents)])
    with pytest.raises(IndicatorError, match="unknown field"):
        secure_summary_statistic(0, agents, [{"field": "income", "op": "eq", "value": 1}], transport=tr)
    assert tr.messages_sent == 0 and len(tr.audit) == 0


@pytest.mark.parametrize("data", [
    [{"field": "age", "op": "like", "value": 3}],
    [{"field": "ethnicity", "op": "range", "value": [0, 1]}],
    [{"field": "age", "op": "range", "value": [5, 5]}],
    [{"field": "age", "op": "in", "value": 5}],
    [{"field": "age"}],
])
def test_malformed_indicators(data):
    with pytest.raises(IndicatorError):
        IndicatorSpec.parse(data)


def test_indicator_json_roundtrip():
    ind = infected() & IndicatorSpec((Condition("ethnicity", "in", ("Asian", "Black")),))
    assert IndicatorSpec.parse(ind.to_json()) == ind


def test_broadcast_asymmetry(simulated):
    agents, _ = simulated
    ids = [a.id for a in agents]
    tr = make_transport("sequential", [0, *ids], record=True)
    ind = infected()
    secure_summary_statistic(0, agents, ind, transport=tr)
    bcast = [e for e in tr.audit if e.kind == Kind.BROADCAST_PARAMS]
    assert {e.src for e in bcast} == {0} and {e.dst for e in bcast} == set(ids)
    assert payload_text(bcast[0].payload) == ind.to_json()
    from_agents = {e.kind for e in tr.audit if e.src != 0}
    assert from_agents <= {Kind.SHARE, Kind.PARTIAL_SUM}
    to_server = {e.kind for e in tr.audit if e.dst == 0}
    assert to_server == {Kind.PARTIAL_SUM}


def test_histograms_conserve_infected_total(simulated):
    agents, _ = simulated
    total = _plain(agents, infected())
    assert total > 0
    age = secure_histogram(0, agents, "age", DEFAULT_AGE_BINS)
    eth = secure_histogram(0, agents, "ethnicity", list(ETHNICITY_CATEGORIES))
    sectors = sorted({a.attributes["zip_sector"] for a in agents})
    zips = secure_histogram(0, agents, "zip_sector", sectors)
    assert age.total == eth.total == zips.total == total
    for cat, c in zip(eth.bins, eth.counts):
        ind = infected() & IndicatorSpec((Condition("ethnicity", "eq", cat),))
        assert c == _plain(agents, ind)


def test_single_age_population_fills_one_bin():
    agents = [AgentRecord(i, attributes={"age": 25}, state=np.array([INFECTED, 0.0])) for i in range(1, 31)]
    h = secure_histogram(0, agents, "age", DEFAULT_AGE_BINS)
    assert h.counts == [0, 0, 30, 0, 0, 0, 0, 0, 0]


@pytest.mark.parametrize("bins,match", [
    ([(0, 10), (5, 20)], "overlapping"),
    ([(0, 10), (12, 20)], "gap"),
    ([(10, 0)], "empty"),
    ([], "at least one"),
])
def test_invalid_bins(bins, match):
    with pytest.raises(IndicatorError, match=match):
        validate_bins("age", bins)


def test_duplicate_categorical_bins():
    with pytest.raises(IndicatorError):
        validate_bins("ethnicity", ["White", "White"])


def test_histogram_outputs():
    h = Histogram("age", [(0.0, 10.0), (10.0, float("inf"))], [3, 4])
    assert h.to_csv() == 'bin,count\n"[0,10)",3\n"[10,inf)",4\n'
    assert json.loads(h.to_json())["counts"] == [3, 4]
    z = Histogram("zip_sector", ["OX1 1", "OX1 2"], [1, 2])
    assert z.sector_table() == "sector,count\nOX1 1,1\nOX1 2,2\n"


def test_sensitivity_requires_grad_store():
    agents, _ = generate_population(PopulationSpec(n_agents=20), seed=0)
    with pytest.raises(PreconditionError):
        secure_sensitivity(0, agents, infected())


def test_sensitivity_of_empty_set_is_zero(simulated):
    agents, _ = simulated
    nobody = IndicatorSpec((Condition("age", "range", (500, 600)),))
    np.testing.assert_array_equal(secure_sensitivity(0, agents, nobody), [0.0])


def test_sensitivity_matches_plaintext(simulated):
    agents, _ = simulated
    rng = np.random.default_rng(5)
    for k in range(10):
        ind = random_indicator(rng, agents)
        mask = ind.evaluate(agents)
        plain = sum(a.grad_store[-1][0] * m for a, m in zip(agents, mask))
        sec = secure_sensitivity(0, agents, ind, seed=k)
        assert abs(sec[0] - plain) <= len(agents) / 2 ** 17 + 1e-12


def test_sensitivity_at_zero_beta_is_lambda_sum():
    agents, graph = generate_population(PopulationSpec(n_agents=200), seed=8)
    params = ModelParams(beta=0.0, gamma=0.0, i0=0.1, n_t=1)
    run_secure_simulation(0, agents, SIRModel(), params, 1, seed=2)
    z = np.array([a.state[0] for a in agents])
    sus = np.array([a.attributes["susceptibility"] for a in agents])
    oracle = grad_beta_expected(Snapshot.from_graph(z, graph, susceptibility=sus), params)
    sens = secure_sensitivity(0, agents, IndicatorSpec((Condition("status", "eq", "susceptible"),)))
    assert oracle > 0 and sens[0] > 0
    assert sens[0] == pytest.approx(oracle, abs=len(agents) / 2 ** 17)


def test_student_band_dominates_infections():
    total = np.zeros(len(DEFAULT_AGE_BINS), dtype=int)
    for seed in range(1, 6):
        agents, _ = generate_population(PopulationSpec(n_agents=1000), seed=seed)
        run_secure_simulation(0, agents, SIRModel(), ModelParams(), 60, seed=seed)
        total += secure_histogram(0, agents, "age", DEFAULT_AGE_BINS, base=ever_infected()).counts
    assert int(np.argmax(total)) == 2  # [20, 30)
