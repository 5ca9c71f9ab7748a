from utils.event_queue import EventQueue


def test_events_come_out_in_time_order():
    queue = EventQueue()
    queue.schedule(3.0, 0, "c")
    queue.schedule(1.0, 1, "a")
    queue.schedule(2.0, 2, "b")
    assert [queue.pop().kind for _ in range(3)] == ["a", "b", "c"]
    assert not queue


def test_ties_keep_scheduling_order():
    queue = EventQueue()
    for rank in (4, 2, 7):
        queue.schedule(1.0, rank, "task")
    assert [queue.pop().rank for _ in range(3)] == [4, 2, 7]


def test_peek_and_len():
    queue = EventQueue()
    event = queue.schedule(0.5, 1, "bodies", payload=[1, 2], sender=0, nbytes=64)
    assert len(queue) == 1
    assert queue.peek() is event
    assert event.is_network
    assert event.to_record() == {"time": 0.5, "seq": 0, "rank": 1, "kind": "bodies", "sender": 0, "bytes": 64}


def test_local_kinds_are_not_network_events():
    queue = EventQueue()
    assert not queue.schedule(0.0, 0, "task-done").is_network
    assert queue.schedule(0.0, 0, "let-cells").is_network
