"""Full-size experiment checks. Deselect with ``-m "not slow"``."""

from pathlib import Path

import numpy as np
import pytest

from components.commands import cmd_run, cmd_verify
from components.geometry import DISTRIBUTIONS, generate, global_bounds
from components.partition import histogram_split, imbalance, orb_multisection
from components.runtime import NetModel, Schedule, simulate
from components.traversal import coverage_check, evaluate

pytestmark = pytest.mark.slow


def test_error_decays_with_order(make_config):
    rows, _ = cmd_verify(make_config(num_bodies=10_000, theta=0.4, ncrit=64), orders=(4, 6, 8, 10))
    errors = [float(row["error"]) for row in rows]
    assert all(a > b for a, b in zip(errors, errors[1:]))
    assert errors[-1] / errors[0] <= 1e-2


@pytest.mark.parametrize("distribution", DISTRIBUTIONS)
@pytest.mark.parametrize("mode", ["bulkSync", "async"])
def test_distributed_run_matches_single_rank(make_config, distribution, mode):
    config = make_config(num_bodies=4096, order=12, theta=0.1, ncrit=64, distribution=distribution, mode=mode)
    bodies = generate(distribution, 4096, seed=0)
    single = simulate(config, bodies, steps=1, ranks=1).potentials
    distributed = simulate(config, bodies, schedule=Schedule(mode), steps=1, ranks=8).potentials
    np.testing.assert_allclose(distributed, single, rtol=1e-9)


def test_random_instances_cover_every_influence_once():
    rng = np.random.default_rng(2024)
    for instance in range(20):
        n = int(rng.integers(64, 1025))
        bodies = generate(DISTRIBUTIONS[instance % 3], n, seed=instance)
        _, stats = evaluate(
            bodies,
            int(rng.integers(2, 7)),
            theta=float(rng.uniform(0.2, 0.8)),
            ncrit=int(rng.integers(4, 65)),
            nspawn=int(rng.integers(16, 1025)),
            mutual=bool(instance % 2),
            record_coverage=True,
        )
        assert coverage_check(stats, n).ok


@pytest.mark.parametrize("ranks", [16, 33])
@pytest.mark.parametrize("distribution", DISTRIBUTIONS)
def test_weighted_partition_balance(distribution, ranks):
    bodies = generate(distribution, 100_000, seed=5)
    bodies.weight = np.random.default_rng(5).lognormal(0.0, 0.5, len(bodies))
    parts = [bodies.take(chunk) for chunk in np.array_split(np.arange(len(bodies)), ranks)]
    pmap, destinations = orb_multisection(parts, global_bounds(bodies), ranks)
    weights = np.concatenate([part.weight for part in parts])
    assert imbalance(pmap.rank_weights(np.concatenate(destinations), weights)) <= 1.05


def test_interaction_weights_even_out_traversal(make_config):
    config = make_config(
        num_bodies=100_000, order=4, theta=0.6, ncrit=32, ranks=16, distribution="plummer", alpha0=0.5
    )
    bodies = generate("plummer", 100_000, seed=0)
    interaction = simulate(config, bodies, steps=3, weighting="interaction")
    adapted = simulate(config, bodies, steps=3, weighting="eq1")

    ratios = [step.traverse_ratio for step in interaction.steps]
    assert ratios[2] < ratios[0]
    assert [step.alpha for step in adapted.steps] == [0.5, 0.5, 1.0]
    assert adapted.steps[2].traverse_ratio <= ratios[2] + 0.02


@pytest.mark.parametrize("distribution", DISTRIBUTIONS)
def test_async_hides_latency(make_config, distribution):
    config = make_config(num_bodies=32_768, order=4, theta=0.5, ncrit=32, ranks=16, distribution=distribution)
    bodies = generate(distribution, 32_768, seed=0)

    def makespan(mode, latency_ms):
        net = NetModel(latency_ms=latency_ms, bandwidth=1e6)
        return simulate(config, bodies, net=net, schedule=Schedule(mode), steps=2).makespan_ms

    assert makespan("async", 1.0) <= makespan("bulkSync", 1.0)
    assert makespan("async", 5.0) <= 0.95 * makespan("bulkSync", 5.0)

    free_async = simulate(config, bodies, schedule=Schedule("async"), steps=2).makespan_ms
    free_bulk = simulate(config, bodies, schedule=Schedule("bulkSync"), steps=2).makespan_ms
    assert free_async == pytest.approx(free_bulk, rel=0.01)


def test_splitter_matches_sorted_weighted_median():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(100, 5000))
        positions = rng.normal(0.0, 1.0, (n, 3))
        weights = rng.exponential(1.0, n)
        coords = positions[:, 0]
        order = np.argsort(coords)
        cumulative = np.cumsum(weights[order])
        median = coords[order][np.searchsorted(cumulative, 0.5 * cumulative[-1])]
        splitter = histogram_split([(positions, weights)], 0, 0.5)
        assert abs(splitter - median) <= (coords.max() - coords.min()) / 64**3


def test_fixed_run_is_bitwise_repeatable(make_config):
    config = make_config(num_bodies=20_000, ranks=8, steps=2, mode="async", latency_ms=0.5, bandwidth=1e6)
    first = Path(cmd_run(config, filename="a.csv")[1]).read_bytes()
    second = Path(cmd_run(config, filename="b.csv")[1]).read_bytes()
    assert first == second
