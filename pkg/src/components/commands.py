import attrs
import numpy as np

from components.geometry import DISTRIBUTIONS, generate
from components.runtime import (
    CSV_FIELDS,
    PHASES,
    Simulator,
    metrics_report,
    oracle_error,
    write_trace,
)
from components.traversal import evaluate
from utils.csv import export_to_csv
from utils.errors import InfeasibleRunError
from utils.logger import logger

# Largest problem run without --allow-large
DESK_LIMIT = 2_000_000

DEFAULT_RANK_LIST = (1, 2, 4, 8, 16, 32, 64)
DEFAULT_ORDERS = (4, 6, 8, 10)
DEFAULT_SAMPLES = 1000

PHASE_COLUMNS = {phase: phase.lower().replace(" ", "_") + "_ms" for phase in PHASES}
SCALING_FIELDS = ["ranks", "mode", "distribution", "makespan_ms", *PHASE_COLUMNS.values()]
VERIFY_FIELDS = ["order", "theta", "num_bodies", "samples", "error"]
BALANCE_FIELDS = ["distribution", "weighting", "rank", "traverse_ms", "ratio"]


def check_feasible(config, allow_large=False):
    """
    Refuse runs beyond the desk limit unless explicitly allowed.

    Raises:
        InfeasibleRunError: If ``num_bodies`` exceeds :data:`DESK_LIMIT` without ``allow_large``.
    """
    if config.num_bodies > DESK_LIMIT and not allow_large:
        raise InfeasibleRunError(
            f"{config.num_bodies} bodies exceed the desk limit of {DESK_LIMIT}; "
            "every rank is simulated in this process, pass --allow-large to run anyway"
        )


def make_simulator(config, bodies=None, trace=False, oracle=False):
    if bodies is None:
        bodies = generate(config.distribution, config.num_bodies, config.seed)
    return Simulator(
        config,
        bodies,
        net=config.net_model(),
        schedule=config.schedule(),
        weighting=config.weighting,
        trace=trace,
        oracle=oracle,
        distribution=config.distribution,
    )


def _write(fieldnames, rows, keyword, output, filename):
    if output is None:
        return None
    return export_to_csv(fieldnames, rows, keyword, filename=filename, output_dir=output)


def cmd_run(config, allow_large=False, trace=None, oracle=False, filename=None, write=True):
    """
    Simulate ``config.steps`` time steps and write the per-phase CSV.

    Args:
        config (RunConfig): Run parameters.
        allow_large (bool, optional): Skip the desk-size guard.
        trace (str, optional): Path for a JSON event trace.
        oracle (bool, optional): Compare potentials with the direct sum after each step.
        filename (str, optional): CSV file name inside ``config.output``; timestamped when None.
        write (bool, optional): Write the CSV at all.

    Returns:
        tuple: ``(metrics, csv_path)``; ``csv_path`` is None when nothing was written.
    """
    check_feasible(config, allow_large)
    logger.info(
        f"Running {config.num_bodies} {config.distribution} bodies on {config.ranks} ranks "
        f"({config.mode}, P={config.order}, theta={config.theta}, {config.steps} steps)"
    )
    simulator = make_simulator(config, trace=trace is not None, oracle=oracle)
    metrics = simulator.run()

    path = _write(CSV_FIELDS, metrics_report(metrics), "run", config.output if write else None, filename)
    if trace is not None:
        write_trace(metrics, trace)
        logger.info(f"Event trace written to {trace}")
    if path:
        logger.info(f"Metrics written to {path}")
    return metrics, path


def scaling_row(metrics):
    """Makespan of the last step and its rank-averaged phase times."""
    step = metrics.last
    row = {
        "ranks": metrics.ranks,
        "mode": step.mode,
        "distribution": metrics.distribution,
        "makespan_ms": f"{step.makespan_ms:.6f}",
    }
    for phase, column in PHASE_COLUMNS.items():
        row[column] = f"{float(np.mean(step.phase_times(phase))):.6f}"
    return row


def cmd_scaling(config, rank_list=DEFAULT_RANK_LIST, allow_large=False, filename=None):
    """
    Strong scaling: the same problem on each rank count in ``rank_list``.

    Returns:
        tuple: ``(rows, csv_path)``, one row per rank count.
    """
    check_feasible(config, allow_large)
    bodies = generate(config.distribution, config.num_bodies, config.seed)
    rows = []
    for i, ranks in enumerate(rank_list):
        metrics = make_simulator(attrs.evolve(config, ranks=ranks), bodies).run()
        rows.append(scaling_row(metrics))
        logger.info(f"[{i + 1} / {len(rank_list)}] {ranks} ranks: makespan {metrics.last.makespan_ms:.3f} ms")
    return rows, _write(SCALING_FIELDS, rows, "scaling", config.output, filename)


def cmd_verify(config, orders=DEFAULT_ORDERS, samples=DEFAULT_SAMPLES, allow_large=False, filename=None):
    """
    Single-rank accuracy sweep over expansion orders against the direct sum.

    Returns:
        tuple: ``(rows, csv_path)`` with one relative L2 error per order.
    """
    check_feasible(config, allow_large)
    bodies = generate(config.distribution, config.num_bodies, config.seed)
    rows = []
    for i, order in enumerate(orders):
        tree, _ = evaluate(
            bodies,
            order,
            theta=config.theta,
            ncrit=config.ncrit,
            nspawn=config.nspawn,
            mutual=config.mutual,
        )
        error = oracle_error(bodies, tree.potentials_by_id(), samples=samples, seed=config.seed)
        rows.append(
            {
                "order": order,
                "theta": config.theta,
                "num_bodies": config.num_bodies,
                "samples": samples if config.num_bodies > 10 * samples else config.num_bodies,
                "error": f"{error:.6e}",
            }
        )
        logger.info(f"[{i + 1} / {len(orders)}] P={order}: relative L2 error {error:.3e}")

    logger.info(f"{'P':>4}  {'theta':>6}  {'error':>12}")
    for row in rows:
        logger.info(f"{row['order']:>4}  {row['theta']:>6}  {row['error']:>12}")
    return rows, _write(VERIFY_FIELDS, rows, "verify", config.output, filename)


def cmd_balance(config, weighting="eq1", allow_large=False, filename=None):
    """
    Traverse-time balance for every distribution under one weighting.

    Returns:
        tuple: ``(rows, ratios, csv_path)``; ``ratios`` maps each
        distribution to the max/mean Traverse ratio of its last step.
    """
    check_feasible(config, allow_large)
    rows = []
    ratios = {}
    for i, distribution in enumerate(DISTRIBUTIONS):
        run_config = attrs.evolve(config, distribution=distribution, weighting=weighting)
        metrics = make_simulator(run_config).run()
        step = metrics.last
        ratio = step.traverse_ratio
        ratios[distribution] = ratio
        for rank, traverse in enumerate(step.phase_times("Traverse")):
            rows.append(
                {
                    "distribution": distribution,
                    "weighting": weighting,
                    "rank": rank,
                    "traverse_ms": f"{traverse:.6f}",
                    "ratio": f"{ratio:.6f}",
                }
            )
        logger.info(f"[{i + 1} / {len(DISTRIBUTIONS)}] {distribution}: traverse max/mean {ratio:.3f}")
    return rows, ratios, _write(BALANCE_FIELDS, rows, "balance", config.output, filename)
