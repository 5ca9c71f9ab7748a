import numpy as np
import pytest

from utils import wire
from utils.errors import ProtocolError


def body_records(n):
    records = np.zeros(n, dtype=wire.BODY_DTYPE)
    records["position"] = np.arange(3 * n, dtype=float).reshape(n, 3)
    records["charge"] = 1.0 / max(n, 1)
    records["id"] = np.arange(n)
    return records


def test_header_layout():
    header = wire.WireHeader(wire.PHASE_BODIES, 10, 3, 5, 2, 220)
    data = wire.pack(header, body_records(2))
    assert data[:4] == b"LETF"
    assert wire.HEADER.size == 24
    assert len(data) == 24 + 2 * wire.BODY_DTYPE.itemsize
    assert data[6] == wire.PHASE_BODIES
    assert data[7] == 10


def test_unpack_restores_header_and_records():
    header = wire.WireHeader(wire.PHASE_BODIES, 4, 0, 1, 3, 20)
    parsed, records = wire.unpack(wire.pack(header, body_records(3)))
    assert parsed == header
    assert parsed.phase_name == "bodies"
    np.testing.assert_array_equal(records["id"], [0, 1, 2])


def test_cell_records_carry_coefficients():
    records = np.zeros(2, dtype=wire.cell_dtype(4))
    records["M"] = [[1, 2, 3, 4], [5, 6, 7, 8]]
    records["multipole_only"] = [1, 0]
    data = wire.pack(wire.WireHeader(wire.PHASE_CELLS, 2, 1, 0, 2, 4), records)
    header, parsed = wire.unpack(data)
    assert header.phase_name == "cells"
    np.testing.assert_array_equal(parsed["M"][1], [5, 6, 7, 8])
    assert len(data) == wire.message_size(wire.PHASE_CELLS, 2, 4)


def test_empty_message_is_just_a_header():
    data = wire.pack(wire.WireHeader(wire.PHASE_CELLS, 6, 0, 1, 0, 56), np.zeros(0, dtype=wire.cell_dtype(56)))
    assert len(data) == wire.HEADER.size
    header, records = wire.unpack(data)
    assert header.record_count == 0
    assert len(records) == 0


def test_pack_checks_record_count():
    with pytest.raises(ValueError):
        wire.pack(wire.WireHeader(wire.PHASE_BODIES, 4, 0, 1, 5, 20), body_records(2))


def test_unpack_rejects_corrupt_messages():
    data = wire.pack(wire.WireHeader(wire.PHASE_BODIES, 4, 0, 1, 2, 20), body_records(2))
    with pytest.raises(ProtocolError, match="shorter"):
        wire.unpack(data[:10])
    with pytest.raises(ProtocolError, match="magic"):
        wire.unpack(b"XXXX" + data[4:])
    with pytest.raises(ProtocolError, match="version"):
        wire.unpack(data[:4] + (2).to_bytes(2, "little") + data[6:])
    with pytest.raises(ProtocolError, match="bytes"):
        wire.unpack(data[:-1])
    with pytest.raises(ProtocolError, match="phase"):
        wire.unpack(data[:6] + bytes([9]) + data[7:])


def test_message_size_grows_with_order():
    small = wire.message_size(wire.PHASE_CELLS, 10, 20)
    large = wire.message_size(wire.PHASE_CELLS, 10, 220)
    assert large - small == 10 * 200 * 8
    assert wire.message_size(wire.PHASE_BODIES, 10, 20) == wire.message_size(wire.PHASE_BODIES, 10, 220)
