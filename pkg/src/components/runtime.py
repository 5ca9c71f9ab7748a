"""
Deterministic discrete-event simulation of a distributed FMM time step.

Every rank runs the real numerics (partition, tree build, upward pass, LET
export, traversals, downward pass); only time is simulated. Compute is
charged to a rank's virtual clock through a :class:`CostModel`, messages
take ``latency + bytes / bandwidth`` on a :class:`NetModel`.

Two schedules are modelled:

* ``bulkSync``: partition reductions span the whole communicator, a rank
  traverses the remote part of its LET only once every fragment has
  arrived, and the step ends with a global barrier.
* ``async``: partition reductions run within each splitter group and, from
  the second step, start as soon as the previous traversal is done; each
  fragment is traversed as soon as both of its messages have arrived.
"""

import collections
import json
import math

import attrs
import numpy as np

from components.geometry import Bodies, global_bounds
from components.kernels import direct_sum
from components.let import assemble, graft, select_export, split_phases
from components.partition import WeightParams, adapt_alpha, body_weight, imbalance, orb_multisection
from components.traversal import InteractionStats, TraversalConfig, dual_traverse
from components.tree import build, downward_pass, upward_pass
from utils import wire
from utils.errors import ConfigurationError, SimulationError
from utils.event_queue import EventQueue
from utils.logger import logger

MODES = ("bulkSync", "async")
WEIGHTINGS = ("uniform", "interaction", "eq1")

PHASES = (
    "Comm partition",
    "Build",
    "Upward",
    "Comm LET cells",
    "Comm LET bodies",
    "Traverse",
    "Downward",
    "Idle",
)

# Six floats travel in the bounds reduction
BOUNDS_BYTES = 6 * 8
BODY_BYTES = wire.BODY_DTYPE.itemsize

# Allowed rank phase transitions; "done" loops back into the next step
TRANSITIONS = {
    "idle": ("partition",),
    "partition": ("build",),
    "build": ("upward",),
    "upward": ("exchange",),
    "exchange": ("traverse-local",),
    "traverse-local": ("traverse-remote", "downward"),
    "traverse-remote": ("traverse-remote", "downward"),
    "downward": ("done",),
    "done": ("partition",),
}

# Relative slack for the critical-path check on accumulated float clocks
CLOCK_RTOL = 1e-9


def _ge_zero():
    return [attrs.validators.ge(0.0)]


@attrs.frozen
class NetModel:
    """Network parameters: milliseconds and bytes per millisecond."""

    latency_ms: float = attrs.field(default=0.0, converter=float, validator=_ge_zero())
    bandwidth: float = attrs.field(
        default=math.inf, converter=float, validator=attrs.validators.gt(0.0)
    )
    reduction_latency_ms: float = attrs.field(
        default=attrs.Factory(lambda self: self.latency_ms, takes_self=True),
        converter=float,
        validator=_ge_zero(),
    )

    def transit(self, nbytes):
        return self.latency_ms + nbytes / self.bandwidth

    def reduction(self, group, nbytes):
        """Tree allreduce over ``group`` ranks: ``ceil(log2 group)`` hops."""
        if group <= 1:
            return 0.0
        depth = math.ceil(math.log2(group))
        return depth * (self.reduction_latency_ms + nbytes / self.bandwidth)


@attrs.frozen
class CostModel:
    """Virtual cost of each unit of work, in nanoseconds."""

    p2p_pair_ns: float = 2.0
    m2l_ns: float = 400.0
    m2m_ns: float = 200.0
    l2l_ns: float = 200.0
    p2m_body_ns: float = 50.0
    l2p_body_ns: float = 50.0
    build_body_ns: float = 100.0
    export_cell_ns: float = 20.0
    histogram_body_ns: float = 2.0

    @property
    def kappa(self):
        """One M2L in P2P-pair equivalents."""
        return self.m2l_ns / self.p2p_pair_ns


@attrs.define
class WorkUnits:
    p2p_pairs: int = 0
    m2l: int = 0
    m2m: int = 0
    l2l: int = 0
    p2m_bodies: int = 0
    l2p_bodies: int = 0
    build_bodies: int = 0
    export_cells: int = 0
    histogram_bodies: int = 0

    def __add__(self, other):
        mine, theirs = attrs.asdict(self), attrs.asdict(other)
        return WorkUnits(**{name: mine[name] + theirs[name] for name in mine})


def compute_cost(work, cost):
    """
    Virtual milliseconds charged for ``work``.

    Args:
        work (WorkUnits): Operation counts.
        cost (CostModel): Nanoseconds per operation.

    Returns:
        float: Milliseconds.
    """
    ns = (
        work.p2p_pairs * cost.p2p_pair_ns
        + work.m2l * cost.m2l_ns
        + work.m2m * cost.m2m_ns
        + work.l2l * cost.l2l_ns
        + work.p2m_bodies * cost.p2m_body_ns
        + work.l2p_bodies * cost.l2p_body_ns
        + work.build_bodies * cost.build_body_ns
        + work.export_cells * cost.export_cell_ns
        + work.histogram_bodies * cost.histogram_body_ns
    )
    return ns / 1e6


@attrs.frozen
class Schedule:
    mode: str = attrs.field(default="bulkSync", validator=attrs.validators.in_(MODES))

    @property
    def is_async(self):
        return self.mode == "async"


@attrs.define(eq=False)
class Arrival:
    """A fragment whose cells and bodies messages have both been delivered."""

    sender: int
    fragment: object
    time: float
    label: str


@attrs.define(eq=False)
class RankState:
    """Per-rank state machine, worker clock and step context."""

    rank: int
    phase: str = "idle"
    clock: float = 0.0
    pending: int = 0
    inbox: dict = attrs.field(factory=dict)
    tasks: collections.deque = attrs.field(factory=collections.deque)
    busy: bool = False
    timeline: list = attrs.field(factory=list)
    compute_ms: float = 0.0
    step: int = 0
    bodies: Bodies = None
    domain: object = None
    tree: object = None
    stats: InteractionStats = None
    let: object = None
    expected_bodies: int = 0
    partitioned: bool = False
    local_queued: bool = False
    local_done: bool = False
    arrived: list = attrs.field(factory=list)
    traversed: set = attrs.field(factory=set)
    work: WorkUnits = attrs.field(factory=WorkUnits)
    traversal_end: float = 0.0
    exported_cells: int = 0
    exported_bodies: int = 0

    def begin_step(self, step, expected_fragments):
        self.advance("partition")
        self.step = step
        self.pending = expected_fragments
        self.inbox = {}
        self.tasks.clear()
        self.busy = False
        self.partitioned = False
        self.local_queued = False
        self.local_done = False
        self.arrived = []
        self.traversed = set()
        self.work = WorkUnits()
        self.exported_cells = self.exported_bodies = 0

    def advance(self, phase):
        if phase not in TRANSITIONS[self.phase]:
            raise SimulationError(
                f"Rank {self.rank} cannot move from {self.phase} to {phase}", dump=[self.describe()]
            )
        self.phase = phase

    def wait_until(self, time, label):
        """Idle the worker until ``time``; the gap is reported under ``label``."""
        if time > self.clock:
            self.timeline.append((self.step, label, self.clock, time))
            self.clock = time

    def charge(self, label, ms):
        if ms > 0.0:
            self.timeline.append((self.step, label, self.clock, self.clock + ms))
            self.clock += ms
            self.compute_ms += ms

    def phase_totals(self, step):
        totals = dict.fromkeys(PHASES, 0.0)
        for entry_step, label, start, end in self.timeline:
            if entry_step == step:
                totals[label] += end - start
        return totals

    def describe(self):
        return (
            f"rank {self.rank}: phase={self.phase} clock={self.clock:.6f} pending={self.pending} "
            f"expected_bodies={self.expected_bodies} queued_tasks={len(self.tasks)} busy={self.busy} "
            f"received={sorted(self.inbox)} traversed={sorted(self.traversed)}"
        )


@attrs.define(eq=False)
class StepMetrics:
    step: int
    mode: str
    alpha: float
    weighting: str
    makespan_ms: float
    finish_ms: float
    phases: list
    work: list
    l_sum: np.ndarray
    r_sum: np.ndarray
    potential: np.ndarray
    force: np.ndarray
    l: np.ndarray
    r: np.ndarray
    weight_imbalance: float
    exported_cells: list
    exported_bodies: list
    network_events: int
    error: float = None

    def phase_times(self, phase):
        return np.array([totals[phase] for totals in self.phases])

    @property
    def traverse_ratio(self):
        return imbalance(self.phase_times("Traverse"))


@attrs.define(eq=False)
class Metrics:
    mode: str
    ranks: int
    distribution: str = ""
    steps: list = attrs.field(factory=list)
    trace: list = attrs.field(factory=list)

    @property
    def makespan_ms(self):
        return self.steps[-1].finish_ms if self.steps else 0.0

    @property
    def last(self):
        return self.steps[-1]

    @property
    def potentials(self):
        return self.last.potential

    @property
    def network_events(self):
        return sum(step.network_events for step in self.steps)


def oracle_error(bodies, potential, samples=1000, seed=0):
    """
    Relative L2 potential error against the direct sum.

    Above ``10 * samples`` bodies only ``samples`` random targets are checked.
    """
    n = len(bodies)
    if n > 10 * samples:
        targets = np.sort(np.random.default_rng(seed).choice(n, size=samples, replace=False))
    else:
        targets = np.arange(n)
    reference, _ = direct_sum(bodies, targets)
    norm = float(np.linalg.norm(reference))
    difference = float(np.linalg.norm(np.asarray(potential)[bodies.id[targets]] - reference))
    return difference / norm if norm > 0 else difference


@attrs.define(eq=False)
class Simulator:
    """
    Multi-step simulation state.

    ``config`` supplies ``ranks, order, theta, ncrit, nspawn, mutual, alpha0,
    bins, rounds`` (a :class:`~components.input.RunConfig`).
    """

    config: object
    bodies: Bodies
    net: NetModel = attrs.field(factory=NetModel)
    schedule: Schedule = attrs.field(factory=Schedule)
    cost: CostModel = attrs.field(factory=CostModel)
    weighting: str = attrs.field(default="eq1", validator=attrs.validators.in_(WEIGHTINGS))
    ranks: int = None
    trace: bool = False
    oracle: bool = False
    oracle_samples: int = 1000
    distribution: str = ""
    states: list = attrs.field(init=False)
    parts: list = attrs.field(init=False)
    queue: EventQueue = attrs.field(init=False, factory=EventQueue)
    history: list = attrs.field(init=False, factory=list)
    sizes: tuple = attrs.field(init=False, default=None)
    ready: np.ndarray = attrs.field(init=False)
    finish: float = attrs.field(init=False, default=0.0)
    step: int = attrs.field(init=False, default=0)
    metrics: Metrics = attrs.field(init=False)
    _domains: list = attrs.field(init=False, default=None)
    _counts: np.ndarray = attrs.field(init=False, default=None)
    _exchanged: int = attrs.field(init=False, default=0)

    def __attrs_post_init__(self):
        if self.ranks is None:
            self.ranks = self.config.ranks
        if self.ranks < 1:
            raise ConfigurationError(f"ranks must be at least 1, got {self.ranks}")
        chunks = np.array_split(np.arange(len(self.bodies)), self.ranks)
        self.parts = [self.bodies.take(chunk) for chunk in chunks]
        self.states = [RankState(r) for r in range(self.ranks)]
        self.ready = np.zeros(self.ranks)
        self.metrics = Metrics(mode=self.schedule.mode, ranks=self.ranks, distribution=self.distribution)

    @property
    def traversal_config(self):
        return TraversalConfig(
            theta=self.config.theta, nspawn=self.config.nspawn, mutual=self.config.mutual
        )

    # Weights and partition

    def _next_alpha(self):
        if self.weighting == "interaction":
            return 1.0
        if self.weighting == "eq1" and self.history:
            return adapt_alpha(self.history)
        return self.config.alpha0

    def _apply_weights(self, alpha):
        for part in self.parts:
            if self.sizes is None or self.weighting == "uniform":
                part.weight = np.ones(len(part))
            else:
                l, r = self.sizes
                part.weight = body_weight(l[part.id], r[part.id], WeightParams(alpha))

    def _network(self, kind, rank, time, payload=None, sender=-1, nbytes=0):
        return self.queue.schedule(time, rank, kind, payload, sender, nbytes)

    def _partition(self):
        """Run the multisection and return per-rank partition finish times."""
        config, net = self.config, self.net
        R = self.ranks
        bounds = global_bounds(np.concatenate([part.position for part in self.parts]))
        pmap, destinations = orb_multisection(
            self.parts, bounds, R, rounds=config.rounds, bins=config.bins
        )

        nodes = pmap.root.internal_nodes()
        histogram_ms = np.array(
            [compute_cost(WorkUnits(histogram_bodies=len(p)), self.cost) for p in self.parts]
        )
        # A body is histogrammed once per round at every depth of the splitter tree
        passes = sum(
            max(node.rounds for node in nodes if node.depth == depth) for depth in range(pmap.depth)
        )
        for state, part in zip(self.states, self.parts):
            state.work.histogram_bodies += len(part) * passes

        # Bounds reduction over all ranks
        start = float(self.ready.max())
        t = start + net.reduction(R, BOUNDS_BYTES)
        if R > 1:
            self._network("histogram", 0, t, {"reduction": "bounds"}, nbytes=BOUNDS_BYTES)

        payload = config.bins * 8
        end = np.full(R, t)
        if not self.schedule.is_async:
            # Every round of a level is one global reduction
            for depth in range(pmap.depth):
                level = [node for node in nodes if node.depth == depth]
                for round_ in range(max(node.rounds for node in level)):
                    t += histogram_ms.max() + net.reduction(R, payload * len(level))
                    self._network(
                        "histogram", 0, t, {"depth": depth, "round": round_}, nbytes=payload * len(level)
                    )
            end[:] = t
        else:
            # Each group reduces on its own and hands its start time to its two halves
            starts = {id(pmap.root): t}
            for node in nodes:
                t_node = starts[id(node)]
                group = slice(node.first_rank, node.first_rank + node.ranks)
                for round_ in range(node.rounds):
                    t_node += histogram_ms[group].max() + net.reduction(node.ranks, payload)
                    self._network(
                        "histogram",
                        node.first_rank,
                        t_node,
                        {"depth": node.depth, "round": round_},
                        nbytes=payload,
                    )
                for child in (node.left, node.right):
                    if child.is_leaf:
                        end[child.rank] = t_node
                    else:
                        starts[id(child)] = t_node
        return pmap, destinations, end

    # Event handlers

    def _on_partitioned(self, event):
        state = self.states[event.rank]
        state.wait_until(event.time, "Comm partition")
        state.partitioned = True
        for d in range(self.ranks):
            count = int(self._counts[event.rank, d])
            if d != event.rank and count:
                nbytes = count * BODY_BYTES
                self._network(
                    "bodies", d, event.time + self.net.transit(nbytes), sender=event.rank, nbytes=nbytes
                )
        if state.expected_bodies == 0:
            self._bodies_ready(state, event.time)

    def _on_bodies(self, event):
        state = self.states[event.rank]
        state.expected_bodies -= 1
        if state.partitioned and state.expected_bodies == 0:
            self._bodies_ready(state, event.time)

    def _bodies_ready(self, state, time):
        if self.schedule.is_async:
            self._start_build(state, time)
            return
        # bulkSync closes the body exchange with a barrier over every rank
        self._exchanged += 1
        if self._exchanged == self.ranks:
            for waiting in self.states:
                self._start_build(waiting, time)

    def _start_build(self, state, time):
        config, cost = self.config, self.cost
        state.wait_until(time, "Comm partition")

        state.advance("build")
        n = len(state.bodies)
        state.tree = build(state.bodies, state.domain, config.ncrit)
        units = WorkUnits(build_bodies=n)
        state.work += units
        state.charge("Build", compute_cost(units, cost))

        state.advance("upward")
        upward_pass(state.tree, config.order)
        units = WorkUnits(p2m_bodies=n, m2m=len(state.tree.cells) - 1)
        state.work += units
        state.charge("Upward", compute_cost(units, cost))

        state.advance("exchange")
        state.stats = InteractionStats.for_tree(state.tree)
        state.let = graft(state.tree, [], rank=state.rank)
        self._export(state)

        state.tasks.append(("local", []))
        state.local_queued = True
        self._enqueue_remote(state)
        self._pump(state, state.clock)

    def _export(self, state):
        held = []
        for d in range(self.ranks):
            if d == state.rank:
                continue
            fragment = select_export(
                state.tree, self._domains[d], self.config.theta, sender=state.rank, receiver=d
            )
            units = WorkUnits(export_cells=fragment.cell_count + fragment.body_count)
            state.work += units
            state.charge("Comm LET cells", compute_cost(units, self.cost))
            state.exported_cells += fragment.cell_count
            state.exported_bodies += fragment.body_count
            if self.schedule.is_async:
                self._post(state, d, *split_phases(fragment))
            else:
                held.append((d, *split_phases(fragment)))
        for post in held:
            self._post(state, *post)

    def _post(self, state, receiver, cells_message, bodies_message):
        for kind, message in (("let-cells", cells_message), ("let-bodies", bodies_message)):
            self._network(
                kind,
                receiver,
                state.clock + self.net.transit(len(message)),
                payload=message,
                sender=state.rank,
                nbytes=len(message),
            )

    def _on_let(self, event):
        state = self.states[event.rank]
        box = state.inbox.setdefault(event.sender, {})
        if event.kind in box:
            raise SimulationError(
                f"Rank {event.rank} received {event.kind} from {event.sender} twice",
                dump=[state.describe()],
            )
        box[event.kind] = (event.payload, event.time)
        if len(box) < 2:
            return

        cells_message, cells_time = box["let-cells"]
        bodies_message, bodies_time = box["let-bodies"]
        label = "Comm LET cells" if cells_time > bodies_time else "Comm LET bodies"
        fragment = assemble(cells_message, bodies_message)
        state.pending -= 1
        state.arrived.append(Arrival(event.sender, fragment, event.time, label))
        self._enqueue_remote(state)
        self._pump(state, event.time)

    def _enqueue_remote(self, state):
        if not state.local_queued or not state.arrived:
            return
        if self.schedule.is_async:
            for arrival in state.arrived:
                state.tasks.append(("remote", [arrival]))
            state.arrived = []
        elif state.pending == 0:
            state.tasks.append(("remote", state.arrived))
            state.arrived = []

    def _pump(self, state, now):
        if state.busy:
            return
        if not state.tasks:
            if state.local_done and state.pending == 0 and not state.arrived:
                self._finish(state)
            return

        kind, arrivals = state.tasks.popleft()
        if kind == "local":
            state.advance("traverse-local")
            source = state.tree
        else:
            state.wait_until(now, arrivals[-1].label)
            state.advance("traverse-remote")
            for arrival in arrivals:
                if arrival.sender in state.traversed:
                    raise SimulationError(
                        f"Rank {state.rank} traversed the fragment from {arrival.sender} twice",
                        dump=[state.describe()],
                    )
                state.traversed.add(arrival.sender)
                state.let = state.let.with_fragment(arrival.fragment)
            source = [arrival.fragment.as_source() for arrival in arrivals]

        p2p_before, m2l_before = state.stats.work()
        dual_traverse(state.tree, source, self.traversal_config, state.stats)
        p2p_after, m2l_after = state.stats.work()
        units = WorkUnits(p2p_pairs=p2p_after - p2p_before, m2l=m2l_after - m2l_before)
        state.work += units
        state.charge("Traverse", compute_cost(units, self.cost))
        if kind == "local":
            state.local_done = True
        state.busy = True
        self.queue.schedule(state.clock, state.rank, "task-done")

    def _on_task_done(self, event):
        state = self.states[event.rank]
        state.busy = False
        self._pump(state, event.time)

    def _finish(self, state):
        state.traversal_end = state.clock
        state.advance("downward")
        downward_pass(state.tree)
        units = WorkUnits(l2l=len(state.tree.cells) - 1, l2p_bodies=len(state.bodies))
        state.work += units
        state.charge("Downward", compute_cost(units, self.cost))
        state.advance("done")

    # Step driver

    def run_step(self):
        """
        Simulate one time step and append its :class:`StepMetrics`.

        Raises:
            SimulationError: If the event queue drains with unfinished ranks.
        """
        R = self.ranks
        step = self.step
        alpha = self._next_alpha()
        self._apply_weights(alpha)
        for state in self.states:
            state.begin_step(step, expected_fragments=R - 1)

        self._exchanged = 0
        pmap, destinations, partition_end = self._partition()
        weights = np.concatenate([part.weight for part in self.parts])
        weight_imbalance = imbalance(pmap.rank_weights(np.concatenate(destinations), weights))
        self._domains = pmap.domains
        self._counts = np.array(
            [[int(np.count_nonzero(dest == d)) for d in range(R)] for dest in destinations]
        )
        incoming = [
            Bodies.concatenate(part.take(dest == d) for part, dest in zip(self.parts, destinations))
            for d in range(R)
        ]

        for state in self.states:
            state.bodies = incoming[state.rank]
            state.domain = pmap.domains[state.rank]
            senders = self._counts[:, state.rank].copy()
            senders[state.rank] = 0
            state.expected_bodies = int(np.count_nonzero(senders))
            self.queue.schedule(partition_end[state.rank], state.rank, "partitioned")

        handlers = {
            "histogram": lambda event: None,
            "partitioned": self._on_partitioned,
            "bodies": self._on_bodies,
            "let-cells": self._on_let,
            "let-bodies": self._on_let,
            "task-done": self._on_task_done,
        }
        network_events = 0
        while self.queue:
            event = self.queue.pop()
            network_events += event.is_network
            if self.trace:
                self.metrics.trace.append({"step": step, **event.to_record()})
            handlers[event.kind](event)

        stalled = [state for state in self.states if state.phase != "done"]
        if stalled:
            raise SimulationError(
                f"Step {step} stalled with {len(stalled)} unfinished ranks",
                dump=[state.describe() for state in self.states],
            )

        if not self.schedule.is_async:
            barrier = max(state.clock for state in self.states)
            for state in self.states:
                state.wait_until(barrier, "Idle")
        finish = max(state.clock for state in self.states)
        critical = max(state.compute_ms for state in self.states)
        if critical > finish * (1.0 + CLOCK_RTOL):
            raise SimulationError(
                f"Makespan {finish} below the critical path {critical}",
                dump=[state.describe() for state in self.states],
            )

        metrics = self._collect(step, alpha, finish, weight_imbalance, network_events)
        logger.info(
            f"[{step + 1}] {self.schedule.mode} step on {R} ranks: makespan {metrics.makespan_ms:.3f} ms, "
            f"traverse max/mean {metrics.traverse_ratio:.3f}"
        )

        if self.weighting == "eq1" and step >= 1:
            self.history.append((alpha, metrics.makespan_ms))
        if self.schedule.is_async:
            self.ready = np.array([state.traversal_end for state in self.states])
        else:
            self.ready = np.full(R, finish)
        self.parts = incoming
        self.finish = finish
        self.step += 1
        return metrics

    def _collect(self, step, alpha, finish, weight_imbalance, network_events):
        n = len(self.bodies)
        kappa = self.cost.kappa
        potential = np.zeros(n)
        force = np.zeros((n, 3))
        l = np.zeros(n)
        r = np.zeros(n)
        l_sum, r_sum = np.zeros(self.ranks), np.zeros(self.ranks)
        for state in self.states:
            tree, stats = state.tree, state.stats
            ids = tree.bodies.id
            potential[ids] = tree.bodies.potential
            force[ids] = tree.bodies.force
            l[ids] = stats.local_sizes(kappa)
            r[ids] = stats.remote_sizes(kappa)
            l_sum[state.rank] = l[ids].sum()
            r_sum[state.rank] = r[ids].sum()
        self.sizes = (l, r)

        error = None
        if self.oracle:
            error = oracle_error(self.bodies, potential, samples=self.oracle_samples, seed=self.config.seed)

        metrics = StepMetrics(
            step=step,
            mode=self.schedule.mode,
            alpha=alpha,
            weighting=self.weighting,
            makespan_ms=finish - self.finish,
            finish_ms=finish,
            phases=[state.phase_totals(step) for state in self.states],
            work=[state.work for state in self.states],
            l_sum=l_sum,
            r_sum=r_sum,
            potential=potential,
            force=force,
            l=l,
            r=r,
            weight_imbalance=weight_imbalance,
            exported_cells=[state.exported_cells for state in self.states],
            exported_bodies=[state.exported_bodies for state in self.states],
            network_events=network_events,
            error=error,
        )
        self.metrics.steps.append(metrics)
        return metrics

    def run(self, steps=None):
        steps = self.config.steps if steps is None else steps
        for _ in range(steps):
            self.run_step()
        return self.metrics


def run_step(ranks, bodies, config, net=None, schedule=None, **options):
    """
    Simulate a single time step from a fresh state.

    Args:
        ranks (int): Number of simulated ranks.
        bodies (Bodies): Global bodies with ids ``0..n-1``.
        config (RunConfig): Run parameters (see :class:`Simulator`).
        net (NetModel, optional): Network model; free network when omitted.
        schedule (Schedule, optional): Execution mode; bulk-synchronous when omitted.

    Returns:
        Metrics: Metrics holding the one step.
    """
    simulator = Simulator(
        config,
        bodies,
        net=net or NetModel(),
        schedule=schedule or Schedule(),
        ranks=ranks,
        **options,
    )
    simulator.run_step()
    return simulator.metrics


def simulate(config, bodies, net=None, schedule=None, steps=None, **options):
    """Simulate ``steps`` (default ``config.steps``) consecutive time steps."""
    simulator = Simulator(
        config, bodies, net=net or NetModel(), schedule=schedule or Schedule(), **options
    )
    return simulator.run(steps)


CSV_FIELDS = [
    "step",
    "rank",
    "phase",
    "virtual_ms",
    "l_sum",
    "r_sum",
    "error",
    "mode",
    "distribution",
    "ranks",
    "alpha",
    "makespan_ms",
]


def metrics_report(metrics):
    """
    Long-format table: one row per (step, rank, phase).

    Args:
        metrics (Metrics): A finished simulation.

    Returns:
        list[dict]: Rows keyed by :data:`CSV_FIELDS`.
    """
    rows = []
    for step in metrics.steps:
        for rank, totals in enumerate(step.phases):
            for phase in PHASES:
                rows.append(
                    {
                        "step": step.step,
                        "rank": rank,
                        "phase": phase,
                        "virtual_ms": f"{totals[phase]:.6f}",
                        "l_sum": f"{step.l_sum[rank]:.1f}",
                        "r_sum": f"{step.r_sum[rank]:.1f}",
                        "error": "" if step.error is None else f"{step.error:.6e}",
                        "mode": step.mode,
                        "distribution": metrics.distribution,
                        "ranks": metrics.ranks,
                        "alpha": f"{step.alpha:.6g}",
                        "makespan_ms": f"{step.makespan_ms:.6f}",
                    }
                )
    return rows


def write_trace(metrics, path):
    """Dump the recorded event trace as a JSON list."""
    with open(path, "w", encoding="utf-8") as file:
        json.dump(metrics.trace, file, indent=1)
