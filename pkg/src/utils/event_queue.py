import itertools

import attrs
from sortedcontainers import SortedList

# Event kinds that model a message on the simulated network
NETWORK_KINDS = frozenset({"histogram", "bodies", "let-cells", "let-bodies"})


@attrs.frozen
class SimEvent:
    """One unit of simulated progress, delivered to ``rank`` at virtual ``time`` (ms)."""

    time: float
    seq: int
    rank: int
    kind: str
    payload: object = attrs.field(default=None, eq=False, repr=False)
    sender: int = -1
    nbytes: int = 0

    @property
    def is_network(self):
        return self.kind in NETWORK_KINDS

    def to_record(self):
        return {
            "time": self.time,
            "seq": self.seq,
            "rank": self.rank,
            "kind": self.kind,
            "sender": self.sender,
            "bytes": self.nbytes,
        }


class EventQueue:
    """
    Pending events ordered by ``(time, seq)``.

    Sequence numbers are handed out in scheduling order, so events due at the
    same virtual time are delivered first-scheduled, first-served.
    """

    def __init__(self):
        self._events = SortedList(key=lambda event: (event.time, event.seq))
        self._seq = itertools.count()

    def schedule(self, time, rank, kind, payload=None, sender=-1, nbytes=0):
        """
        Add an event.

        Args:
            time (float): Virtual delivery time in milliseconds.
            rank (int): Destination rank.
            kind (str): Handler name.
            payload (object, optional): Message body.
            sender (int, optional): Source rank for messages.
            nbytes (int, optional): Message size.

        Returns:
            SimEvent: The scheduled event.
        """
        event = SimEvent(float(time), next(self._seq), rank, kind, payload, sender, nbytes)
        self._events.add(event)
        return event

    def pop(self):
        """Remove and return the earliest event."""
        return self._events.pop(0)

    def peek(self):
        return self._events[0]

    def __len__(self):
        return len(self._events)

    def __bool__(self):
        return len(self._events) > 0
