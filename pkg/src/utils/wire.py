"""
Little-endian binary layout for LET messages.

A message is a fixed header followed by ``record_count`` packed numpy records::

    offset  size  field
    0       4     magic        b"LETF"
    4       2     version      uint16
    6       1     phase        uint8 (0 = cells, 1 = bodies)
    7       1     order        uint8, expansion order P
    8       4     sender       int32
    12      4     receiver     int32
    16      4     record_count uint32
    20      4     coeff_count  uint32

Cell records: key u8, level i4, parent i8, child_index i8, child_count i8,
body_index i8, body_count i8, geom_center 3*f8, geom_half 3*f8, box_min 3*f8,
box_max 3*f8, multipole_only u1, M coeff_count*f8.

Body records: position 3*f8, charge f8, weight f8, id i8.
"""

import struct

import attrs
import numpy as np

from utils.errors import ProtocolError

MAGIC = b"LETF"
VERSION = 1

PHASE_CELLS = 0
PHASE_BODIES = 1
PHASES = {PHASE_CELLS: "cells", PHASE_BODIES: "bodies"}

HEADER = struct.Struct("<4sHBBiiII")

BODY_DTYPE = np.dtype(
    [
        ("position", "<f8", (3,)),
        ("charge", "<f8"),
        ("weight", "<f8"),
        ("id", "<i8"),
    ]
)


def cell_dtype(coeff_count):
    return np.dtype(
        [
            ("key", "<u8"),
            ("level", "<i4"),
            ("parent", "<i8"),
            ("child_index", "<i8"),
            ("child_count", "<i8"),
            ("body_index", "<i8"),
            ("body_count", "<i8"),
            ("geom_center", "<f8", (3,)),
            ("geom_half", "<f8", (3,)),
            ("box_min", "<f8", (3,)),
            ("box_max", "<f8", (3,)),
            ("multipole_only", "u1"),
            ("M", "<f8", (coeff_count,)),
        ]
    )


@attrs.frozen
class WireHeader:
    phase: int
    order: int
    sender: int
    receiver: int
    record_count: int
    coeff_count: int

    @property
    def phase_name(self):
        return PHASES[self.phase]


def record_dtype(phase, coeff_count):
    if phase == PHASE_CELLS:
        return cell_dtype(coeff_count)
    if phase == PHASE_BODIES:
        return BODY_DTYPE
    raise ProtocolError(f"Unknown message phase {phase}")


def pack(header, records):
    """
    Serialize ``records`` (a structured array of the phase's dtype) behind a header.

    :param header: Message header; ``record_count`` must match ``len(records)``.
    :type header: WireHeader
    :rtype: bytes
    """
    dtype = record_dtype(header.phase, header.coeff_count)
    records = np.ascontiguousarray(records, dtype=dtype)
    if len(records) != header.record_count:
        raise ValueError(
            f"record_count {header.record_count} does not match {len(records)} records"
        )
    head = HEADER.pack(
        MAGIC,
        VERSION,
        header.phase,
        header.order,
        header.sender,
        header.receiver,
        header.record_count,
        header.coeff_count,
    )
    return head + records.tobytes()


def unpack(data):
    """
    Parse a message produced by :func:`pack`.

    :return: Tuple ``(WireHeader, records)``; ``records`` is a read-only structured array.
    :raises ProtocolError: On a bad magic, version or length.
    """
    if len(data) < HEADER.size:
        raise ProtocolError(f"Message of {len(data)} bytes is shorter than the header")
    magic, version, phase, order, sender, receiver, count, coeff_count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError(f"Bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"Unsupported wire version {version}")

    header = WireHeader(phase, order, sender, receiver, count, coeff_count)
    dtype = record_dtype(phase, coeff_count)
    expected = HEADER.size + count * dtype.itemsize
    if len(data) != expected:
        raise ProtocolError(f"Message has {len(data)} bytes, header implies {expected}")
    records = np.frombuffer(data, dtype=dtype, count=count, offset=HEADER.size)
    return header, records


def message_size(phase, record_count, coeff_count):
    """Size in bytes of a message, without building it."""
    return HEADER.size + record_count * record_dtype(phase, coeff_count).itemsize
