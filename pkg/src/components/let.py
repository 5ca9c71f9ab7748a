"""
Local essential trees built by sender-initiated export.

Every rank walks its own tree once per remote domain and ships the cells the
remote traversal could open, plus the bodies of the leaves it could reach
with P2P. Cells that are guaranteed to pass the acceptance test against the
whole remote domain ship as multipole-only and end the walk below them.
"""

import attrs
import numpy as np

from components.geometry import Bodies
from components.tree import CellArrays, SourceView
from utils import wire
from utils.errors import ProtocolError

_CELL_FIELDS = (
    "key",
    "level",
    "parent",
    "child_index",
    "child_count",
    "body_index",
    "body_count",
    "geom_center",
    "geom_half",
    "box_min",
    "box_max",
    "multipole_only",
)


@attrs.define(eq=False)
class LetFragment:
    """Cells and boundary bodies that rank ``sender`` exports to rank ``receiver``."""

    sender: int
    receiver: int
    order: int
    cells: CellArrays
    bodies: Bodies
    M: np.ndarray

    @property
    def coeff_count(self):
        return self.M.shape[1]

    @property
    def cell_count(self):
        return len(self.cells)

    @property
    def body_count(self):
        return len(self.bodies)

    @property
    def is_empty(self):
        return self.cell_count == 0

    def as_source(self):
        return SourceView(self.cells, self.bodies, self.M, remote=True, rank=self.sender)

    def message_sizes(self):
        """Bytes of the cells and bodies messages."""
        return (
            wire.message_size(wire.PHASE_CELLS, self.cell_count, self.coeff_count),
            wire.message_size(wire.PHASE_BODIES, self.body_count, self.coeff_count),
        )


def _empty_fragment(sender, receiver, order, coeff_count):
    return LetFragment(
        sender=sender,
        receiver=receiver,
        order=order,
        cells=CellArrays.empty(),
        bodies=Bodies.empty(),
        M=np.zeros((0, coeff_count)),
    )


def select_export(tree, remote_domain, theta, sender=-1, receiver=-1):
    """
    Select the part of ``tree`` the owner of ``remote_domain`` needs.

    A cell ``c`` is multipole-only when ``H + R_c < theta * dist(c, remote_domain)``
    with ``H`` the half-diagonal of the remote domain; every target cell of the
    remote rank then accepts it. Otherwise it is exported with all its
    children, and leaves carry their bodies.

    Args:
        tree (Tree): Local tree after the upward pass.
        remote_domain (Box): Domain box of the receiving rank.
        theta (float): Opening angle used by the remote traversal.

    Returns:
        LetFragment: Breadth-first order with children contiguous; empty for an empty tree.
    """
    if tree.M is None:
        raise ValueError("select_export needs multipoles; run upward_pass first")
    order = tree.order.P
    cells = tree.cells
    if len(tree.bodies) == 0:
        return _empty_fragment(sender, receiver, order, tree.M.shape[1])

    # Cells every remote target accepts travel as multipoles only
    far = (
        remote_domain.radius + cells.radius
        < theta * remote_domain.distance_to_points(cells.exp_center)
    ).tolist()
    first_child = cells.child_index.tolist()
    children = cells.child_count.tolist()

    # Breadth-first walk from the root, opening every cell that is not far
    picked = [0]
    parent = [-1]
    child_index = [0]
    child_count = [0]
    multipole_only = [False]
    carried = []

    f = 0
    while f < len(picked):
        c = picked[f]
        if far[c]:
            multipole_only[f] = True
        elif children[c] == 0:
            carried.append(f)
        else:
            child_index[f] = len(picked)
            child_count[f] = children[c]
            for child in range(first_child[c], first_child[c] + children[c]):
                picked.append(child)
                parent.append(f)
                child_index.append(0)
                child_count.append(0)
                multipole_only.append(False)
        f += 1

    # Leaves that stay open carry their bodies
    picked = np.array(picked)
    body_index = np.full(len(picked), -1, dtype=np.int64)
    ranges = []
    offset = 0
    for f in carried:
        c = picked[f]
        start, size = int(cells.body_index[c]), int(cells.body_count[c])
        body_index[f] = offset
        ranges.append(np.arange(start, start + size))
        offset += size
    take = np.concatenate(ranges) if ranges else np.zeros(0, dtype=np.int64)
    shipped = tree.bodies.take(take)

    fragment_cells = CellArrays(
        key=cells.key[picked],
        level=cells.level[picked],
        parent=parent,
        child_index=child_index,
        child_count=child_count,
        body_index=body_index,
        body_count=cells.body_count[picked],
        geom_center=cells.geom_center[picked],
        geom_half=cells.geom_half[picked],
        box_min=cells.box_min[picked],
        box_max=cells.box_max[picked],
        multipole_only=multipole_only,
    )
    return LetFragment(
        sender=sender,
        receiver=receiver,
        order=order,
        cells=fragment_cells,
        bodies=Bodies.from_arrays(shipped.position, shipped.charge, shipped.id, shipped.weight),
        M=tree.M[picked].copy(),
    )


@attrs.frozen
class LET:
    """Local tree plus the grafted remote fragments, keyed by sender rank."""

    local_tree: object
    fragments: dict = attrs.field(factory=dict, eq=False)
    rank: int = -1

    @property
    def root_count(self):
        return 1 + len(self.fragments)

    def sources(self):
        """Local tree first, then fragments in ascending sender order."""
        views = [self.local_tree.as_source(rank=self.rank)]
        views.extend(self.fragments[sender].as_source() for sender in sorted(self.fragments))
        return views

    def remote_sources(self):
        return self.sources()[1:]

    def with_fragment(self, fragment):
        """New LET with one more fragment grafted beside the existing roots."""
        return graft(self.local_tree, [*self.fragments.values(), fragment], rank=self.rank)


def graft(local_tree, fragments, rank=-1):
    """
    Attach fragment roots as extra top-level sources beside the local tree.

    Args:
        local_tree (Tree): This rank's tree after the upward pass.
        fragments (list): Received fragments, any subset of the other ranks.
        rank (int, optional): This rank, used to reject misaddressed fragments; -1 skips the check.

    Returns:
        LET: The local tree plus the grafted fragments.

    Raises:
        ProtocolError: On a duplicate sender, a fragment from ``rank`` itself
            or one addressed to another rank.
    """
    grafted = {}
    for fragment in fragments:
        if fragment.sender in grafted:
            raise ProtocolError(f"Duplicate fragment from rank {fragment.sender}")
        if rank >= 0 and fragment.sender == rank:
            raise ProtocolError(f"Rank {rank} cannot graft its own fragment")
        if rank >= 0 and fragment.receiver not in (rank, -1):
            raise ProtocolError(
                f"Fragment from rank {fragment.sender} is addressed to {fragment.receiver}, not {rank}"
            )
        if local_tree.M is not None and fragment.coeff_count != local_tree.M.shape[1]:
            raise ProtocolError(
                f"Fragment from rank {fragment.sender} has {fragment.coeff_count} coefficients"
            )
        grafted[fragment.sender] = fragment
    return LET(local_tree=local_tree, fragments=grafted, rank=rank)


def split_phases(fragment):
    """
    Encode a fragment as its cells message and its bodies message.

    Returns:
        tuple: ``(cells_bytes, bodies_bytes)``.
    """
    coeffs = fragment.coeff_count
    cell_records = np.zeros(fragment.cell_count, dtype=wire.cell_dtype(coeffs))
    for name in _CELL_FIELDS:
        cell_records[name] = getattr(fragment.cells, name)
    cell_records["M"] = fragment.M

    body_records = np.zeros(fragment.body_count, dtype=wire.BODY_DTYPE)
    for name in ("position", "charge", "weight", "id"):
        body_records[name] = getattr(fragment.bodies, name)

    def header(phase, count):
        return wire.WireHeader(phase, fragment.order, fragment.sender, fragment.receiver, count, coeffs)

    return (
        wire.pack(header(wire.PHASE_CELLS, fragment.cell_count), cell_records),
        wire.pack(header(wire.PHASE_BODIES, fragment.body_count), body_records),
    )


def assemble(cells_message, bodies_message):
    """
    Rebuild a fragment from its two messages.

    Raises:
        ProtocolError: If the phases are swapped or the headers disagree.
    """
    cells_header, cell_records = wire.unpack(cells_message)
    bodies_header, body_records = wire.unpack(bodies_message)
    if cells_header.phase != wire.PHASE_CELLS or bodies_header.phase != wire.PHASE_BODIES:
        raise ProtocolError("Expected one cells message and one bodies message")
    if (cells_header.sender, cells_header.receiver) != (bodies_header.sender, bodies_header.receiver):
        raise ProtocolError(
            f"Cells from {cells_header.sender}->{cells_header.receiver} do not match "
            f"bodies from {bodies_header.sender}->{bodies_header.receiver}"
        )

    cells = CellArrays(*(np.array(cell_records[name]) for name in _CELL_FIELDS))
    bodies = Bodies.from_arrays(
        np.array(body_records["position"]),
        np.array(body_records["charge"]),
        ids=np.array(body_records["id"]),
        weight=np.array(body_records["weight"]),
    )
    return LetFragment(
        sender=cells_header.sender,
        receiver=cells_header.receiver,
        order=cells_header.order,
        cells=cells,
        bodies=bodies,
        M=np.array(cell_records["M"]).reshape(len(cells), cells_header.coeff_count),
    )


def save_fragment(fragment, path):
    """Write a fragment snapshot: the cells message followed by the bodies message."""
    cells_message, bodies_message = split_phases(fragment)
    with open(path, "wb") as file:
        file.write(cells_message)
        file.write(bodies_message)


def load_fragment(path):
    """Read a snapshot written by :func:`save_fragment`."""
    with open(path, "rb") as file:
        data = file.read()
    if len(data) < wire.HEADER.size:
        raise ProtocolError(f"Snapshot {path} is truncated")
    fields = wire.HEADER.unpack_from(data)
    phase, count, coeffs = fields[2], fields[6], fields[7]
    split = wire.message_size(phase, count, coeffs)
    return assemble(data[:split], data[split:])


def export_volume(fragments):
    """Total cells and bodies shipped by a set of fragments."""
    return (
        sum(f.cell_count for f in fragments),
        sum(f.body_count for f in fragments),
    )


def is_sufficient(fragment, remote_domain, theta):
    """
    Structural sufficiency check of a fragment against a receiving domain.

    Every multipole-only cell must pass the acceptance test for any cell inside
    the domain, and every non-multipole leaf must carry its bodies.
    """
    cells = fragment.cells
    if len(cells) == 0:
        return True
    bound = remote_domain.radius
    for f in range(len(cells)):
        if cells.multipole_only[f]:
            center = cells.exp_center[f]
            if not bound + cells.radius[f] < theta * remote_domain.distance_to_point(center):
                return False
        elif cells.child_count[f] == 0 and cells.body_index[f] < 0:
            return False
    return True
