import json
import math

import numpy as np
import pytest

from components.geometry import generate
from components.kernels import direct_sum
from components.runtime import (
    CSV_FIELDS,
    PHASES,
    CostModel,
    NetModel,
    RankState,
    Schedule,
    Simulator,
    WorkUnits,
    compute_cost,
    metrics_report,
    oracle_error,
    run_step,
    simulate,
    write_trace,
)
from utils.errors import ConfigurationError, SimulationError

BULK = Schedule("bulkSync")
ASYNC = Schedule("async")


@pytest.fixture
def bodies():
    return generate("cube", 2000, seed=1)


def test_net_model():
    net = NetModel(latency_ms=0.1, bandwidth=1e4)
    assert net.transit(1000) == pytest.approx(0.2)
    assert net.reduction_latency_ms == 0.1
    assert net.reduction(1, 48) == 0.0
    assert net.reduction(4, 0) == pytest.approx(0.2)
    assert net.reduction(5, 0) == pytest.approx(0.3)
    assert NetModel().transit(10**9) == 0.0
    assert NetModel(1.0, reduction_latency_ms=0.25).reduction(2, 0) == 0.25
    with pytest.raises(ValueError):
        NetModel(bandwidth=0.0)
    with pytest.raises(ValueError):
        NetModel(latency_ms=-1.0)


def test_compute_cost():
    cost = CostModel()
    assert compute_cost(WorkUnits(p2p_pairs=1_000_000), cost) == pytest.approx(2.0)
    assert compute_cost(WorkUnits(m2l=1000, build_bodies=1000), cost) == pytest.approx(0.5)
    assert compute_cost(WorkUnits(), cost) == 0.0
    assert cost.kappa == 200.0


def test_work_units_add():
    total = WorkUnits(p2p_pairs=3, m2l=1) + WorkUnits(m2l=2, l2l=5)
    assert total == WorkUnits(p2p_pairs=3, m2l=3, l2l=5)


def test_schedule_modes():
    assert ASYNC.is_async
    assert not BULK.is_async
    with pytest.raises(ValueError):
        Schedule("eager")


def test_rank_state_transitions():
    state = RankState(0)
    with pytest.raises(SimulationError, match="rank 0: phase=idle"):
        state.advance("build")
    state.begin_step(0, expected_fragments=3)
    assert state.phase == "partition"
    assert state.pending == 3
    for phase in ("build", "upward", "exchange", "traverse-local", "downward", "done"):
        state.advance(phase)
    state.begin_step(1, expected_fragments=3)
    with pytest.raises(SimulationError):
        state.advance("downward")


def test_rank_state_clock():
    state = RankState(2)
    state.wait_until(1.5, "Comm partition")
    state.charge("Build", 0.5)
    state.wait_until(1.0, "Idle")
    state.charge("Traverse", 0.0)
    assert state.clock == 2.0
    assert state.compute_ms == 0.5
    totals = state.phase_totals(0)
    assert totals["Comm partition"] == 1.5
    assert totals["Build"] == 0.5
    assert sum(totals.values()) == 2.0
    assert state.phase_totals(1) == dict.fromkeys(PHASES, 0.0)


def test_simulator_rejects_zero_ranks(make_config, bodies):
    with pytest.raises(ConfigurationError):
        Simulator(make_config(), bodies, ranks=0)


@pytest.mark.parametrize("schedule", [BULK, ASYNC])
def test_single_rank_has_no_communication(make_config, bodies, schedule):
    metrics = run_step(1, bodies, make_config(), schedule=schedule)
    step = metrics.last
    assert step.network_events == 0
    for phase in ("Comm partition", "Comm LET cells", "Comm LET bodies", "Idle"):
        assert step.phase_times(phase)[0] == 0.0
    assert step.r_sum[0] == 0.0
    assert step.exported_cells == [0]
    assert step.makespan_ms == pytest.approx(sum(step.phases[0].values()))


def test_single_rank_modes_agree(make_config, bodies):
    bulk = run_step(1, bodies, make_config(), schedule=BULK)
    asynchronous = run_step(1, bodies, make_config(), schedule=ASYNC)
    assert asynchronous.makespan_ms == bulk.makespan_ms
    np.testing.assert_array_equal(asynchronous.potentials, bulk.potentials)


def test_modes_give_the_same_potentials(make_config, bodies):
    config = make_config(ranks=4)
    bulk = simulate(config, bodies, schedule=BULK, steps=2)
    asynchronous = simulate(config, bodies, schedule=ASYNC, steps=2)
    for a, b in zip(asynchronous.steps, bulk.steps):
        np.testing.assert_allclose(a.potential, b.potential, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(a.force, b.force, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("ranks", [2, 3, 4])
def test_distributed_step_is_accurate(make_config, bodies, ranks):
    metrics = run_step(ranks, bodies, make_config(ranks=ranks, order=8, theta=0.4), oracle=True)
    assert metrics.last.error < 1e-3
    potential, _ = direct_sum(bodies)
    assert np.linalg.norm(metrics.potentials - potential) / np.linalg.norm(potential) == pytest.approx(
        metrics.last.error
    )


def test_phase_times_follow_the_work(make_config, bodies):
    cost = CostModel()
    metrics = run_step(4, bodies, make_config(ranks=4), cost=cost)
    step = metrics.last
    for rank, work in enumerate(step.work):
        totals = step.phases[rank]
        traverse = compute_cost(WorkUnits(p2p_pairs=work.p2p_pairs, m2l=work.m2l), cost)
        assert totals["Traverse"] == pytest.approx(traverse, rel=1e-9)
        assert totals["Build"] == pytest.approx(compute_cost(WorkUnits(build_bodies=work.build_bodies), cost))
        assert work.l2p_bodies == work.build_bodies
    assert sum(w.build_bodies for w in step.work) == len(bodies)


def test_bulk_phases_fill_the_step(make_config, bodies):
    metrics = simulate(make_config(ranks=4, latency_ms=0.05, bandwidth=1e5), bodies, schedule=BULK, steps=2)
    for step in metrics.steps:
        for totals in step.phases:
            assert sum(totals.values()) == pytest.approx(step.makespan_ms, rel=1e-9)
    assert metrics.makespan_ms == pytest.approx(sum(step.makespan_ms for step in metrics.steps))


def test_makespan_covers_every_rank_compute(make_config, bodies):
    metrics = run_step(4, bodies, make_config(ranks=4, latency_ms=0.2), schedule=ASYNC)
    step = metrics.last
    compute = ("Build", "Upward", "Traverse", "Downward")
    for totals in step.phases:
        assert sum(totals[phase] for phase in compute) <= step.makespan_ms


def test_simulation_is_deterministic(make_config, bodies):
    config = make_config(ranks=3, latency_ms=0.1, bandwidth=1e5)
    first = simulate(config, bodies, schedule=ASYNC, steps=2)
    second = simulate(config, bodies, schedule=ASYNC, steps=2)
    assert metrics_report(first) == metrics_report(second)
    np.testing.assert_array_equal(first.potentials, second.potentials)


def test_free_network_modes_are_close(make_config, bodies):
    config = make_config(ranks=4)
    bulk = run_step(4, bodies, config, schedule=BULK)
    asynchronous = run_step(4, bodies, config, schedule=ASYNC)
    assert asynchronous.makespan_ms == pytest.approx(bulk.makespan_ms, rel=0.01)


def test_latency_favours_async(make_config, bodies):
    config = make_config(ranks=8)
    net = NetModel(latency_ms=1.0, bandwidth=1e6)
    bulk = run_step(8, bodies, config, net=net, schedule=BULK)
    asynchronous = run_step(8, bodies, config, net=net, schedule=ASYNC)
    assert asynchronous.makespan_ms <= bulk.makespan_ms
    assert bulk.last.phase_times("Comm partition").min() > asynchronous.last.phase_times("Comm partition").min()


def test_network_events_counted(make_config, bodies):
    metrics = run_step(4, bodies, make_config(ranks=4), trace=True)
    step = metrics.last
    network = [event for event in metrics.trace if event["kind"] in ("histogram", "bodies", "let-cells", "let-bodies")]
    assert step.network_events == len(network)
    assert sum(1 for event in network if event["kind"] == "let-cells") == 4 * 3
    assert sum(step.exported_cells) > 0


def test_write_trace(make_config, bodies, tmp_path):
    metrics = run_step(2, bodies, make_config(ranks=2), trace=True)
    path = tmp_path / "trace.json"
    write_trace(metrics, path)
    records = json.loads(path.read_text())
    assert records == metrics.trace
    assert [r["time"] for r in records] == sorted(r["time"] for r in records)
    assert {r["step"] for r in records} == {0}


def test_eq1_alpha_schedule(make_config, bodies):
    config = make_config(ranks=2, alpha0=0.5)
    metrics = simulate(config, bodies, steps=3, weighting="eq1")
    assert [step.alpha for step in metrics.steps] == [0.5, 0.5, 1.0]


def test_interaction_weighting_balances(make_config, bodies):
    metrics = simulate(make_config(ranks=4), bodies, steps=2, weighting="interaction")
    assert [step.alpha for step in metrics.steps] == [1.0, 1.0]
    assert metrics.steps[1].weight_imbalance <= 1.05
    step = metrics.steps[1]
    weights = step.l + step.r
    assert weights.sum() == pytest.approx(step.l_sum.sum() + step.r_sum.sum())


def test_uniform_weighting_balances_counts(make_config, bodies):
    metrics = simulate(make_config(ranks=4), bodies, steps=2, weighting="uniform")
    for step in metrics.steps:
        assert step.weight_imbalance <= 1.01


def test_oracle_error():
    bodies = generate("plummer", 300, seed=2)
    potential, _ = direct_sum(bodies)
    assert oracle_error(bodies, potential) == pytest.approx(0.0, abs=1e-14)
    assert oracle_error(bodies, potential * 1.01) == pytest.approx(0.01)
    assert oracle_error(bodies, potential * 1.01, samples=10) == pytest.approx(0.01)


def test_metrics_report(make_config, bodies):
    metrics = simulate(make_config(ranks=2), bodies, steps=2, oracle=True, distribution="cube")
    rows = metrics_report(metrics)
    assert len(rows) == 2 * 2 * len(PHASES)
    assert all(list(row) == CSV_FIELDS for row in rows)
    first = rows[0]
    assert (first["step"], first["rank"], first["phase"]) == (0, 0, "Comm partition")
    assert first["distribution"] == "cube"
    assert first["ranks"] == 2
    assert math.isfinite(float(first["error"]))


def first_start(state, label):
    return next(start for _, entry, start, _ in state.timeline if entry == label)


def test_bulk_ranks_build_after_the_whole_body_exchange(make_config):
    plummer = generate("plummer", 4000, seed=0)
    net = NetModel(latency_ms=1.0, bandwidth=1e5)
    simulator = Simulator(make_config(ranks=8), plummer, net=net, schedule=BULK)
    simulator.run_step()
    starts = [first_start(state, "Build") for state in simulator.states]
    assert max(starts) - min(starts) < 1e-9
    for state in simulator.states:
        totals = state.phase_totals(0)
        assert totals["Comm partition"] == pytest.approx(starts[0])
        assert totals["Build"] > 0.0
