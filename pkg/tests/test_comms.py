import pytest
from hypothesis import given
from hypothesis import strategies as st

from swarmpath.agent import Robot
from swarmpath.comms import (
    Flags,
    ProtocolError,
    ProtocolFrame,
    allocate_tasks,
    decode_frame,
    encode_frame,
    required_robot_count,
    run_allocation_round,
)


# codec

def test_encode_request_example():
    f = encode_frame(300, 5, Flags(request=True))
    assert list(f.data) == [1, 44, 0, 0, 0, 0, 5, 0, 0, 1]


def test_encode_zero():
    assert list(encode_frame(0, 0).data) == [0] * 10


def test_encode_time_boundary():
    f = encode_frame(65535, 1)
    assert f.data[0] == 255 and f.data[1] == 255


@pytest.mark.parametrize("t,rid", [(65536, 0), (-1, 0), (0, 65536), (0, -2)])
def test_encode_out_of_range(t, rid):
    with pytest.raises(ProtocolError):
        encode_frame(t, rid)


def test_decode_zero_frame():
    assert decode_frame(ProtocolFrame((0,) * 10)) == (0, 0, Flags())


def test_decode_reserved_slot_violation():
    data = [0] * 10
    data[3] = 7
    with pytest.raises(ProtocolError):
        decode_frame(ProtocolFrame(tuple(data)))


def test_frame_rejects_bad_slots():
    with pytest.raises(ProtocolError):
        ProtocolFrame((0,) * 9)
    with pytest.raises(ProtocolError):
        ProtocolFrame((256,) + (0,) * 9)


@given(st.integers(0, 65535), st.integers(0, 65535), st.booleans(), st.booleans(), st.booleans())
def test_codec_round_trip(t, rid, a, b, c):
    flags = Flags(a, b, c)
    assert decode_frame(encode_frame(t, rid, flags)) == (t, rid, flags)


# required robot count

@pytest.mark.parametrize(
    "s,t,v,delta,n",
    [(0.37, 0, 1.0, 0, 0), (1.0, 7.0, 1.0, 0, 7), (0.5, 10, 1.0, 2, 7), (0.1, 0.7, 0.1, 0, 1)],
)
def test_required_count(s, t, v, delta, n):
    assert required_robot_count(s, t, v, delta) == n


def test_required_count_rejects_nonpositive_range():
    with pytest.raises(ValueError):
        required_robot_count(1.0, 1.0, 0.0, 0)


@given(st.floats(0.01, 2), st.floats(0, 5000), st.floats(0.1, 2), st.floats(0, 10))
def test_required_count_is_ceiling(s, t, v, delta):
    n = required_robot_count(s, t, v, delta)
    x = s * t / v + delta
    assert n >= x - 1e-6 and n < x + 1


# allocation

def test_allocate_first_n():
    a = allocate_tasks([3, 7, 1], 2)
    assert a.assigned_path == [3, 7] and a.assigned_rest == [1]


def test_allocate_zero():
    a = allocate_tasks([3, 7, 1], 0)
    assert a.assigned_path == [] and a.assigned_rest == [3, 7, 1]


def test_allocate_shortfall():
    a = allocate_tasks([2, 4], 5)
    assert a.assigned_path == [2, 4] and a.shortfall == 3


def test_allocate_rejects_duplicates():
    with pytest.raises(ValueError):
        allocate_tasks([1, 1], 1)


@given(st.lists(st.integers(0, 500), unique=True, max_size=40), st.integers(0, 50))
def test_allocation_partitions(responses, n):
    a = allocate_tasks(responses, n)
    assert a.assigned_path + a.assigned_rest == responses
    assert len(a.assigned_path) == min(n, len(responses))


def _founder(ticks):
    return Robot(0, 1, 1, 0, goal_founder=True, founder_attempt_ticks=ticks)


def test_round_ten_in_range():
    log = []
    robots = [Robot(i, 1, 1, 0) for i in range(1, 11)]
    res = run_allocation_round(_founder(400), robots, speed=0.1, visual_range=1.0, delta=0, log=log)
    assert res.n_required == 4
    assert len(res.assigned_path) == 4 and len(res.assigned_rest) == 6
    assert decode_frame(log[-1])[2].terminate


def test_round_all_ack_when_n_exceeds_responders():
    log = []
    robots = [Robot(i, 1, 1, 0) for i in range(1, 4)]
    res = run_allocation_round(_founder(400), robots, speed=0.1, visual_range=1.0, delta=0, log=log)
    assert res.assigned_path == [1, 2, 3] and res.shortfall == 1
    acks = [f for f in log if f.target == 0 and decode_frame(f)[2].ack]
    assert len(acks) == 3 and decode_frame(log[-1])[2].terminate


def test_round_founder_alone():
    res = run_allocation_round(_founder(400), [_founder(400)], speed=0.1, visual_range=1.0, delta=0)
    assert res.flagged and res.assigned_path == []


def test_round_arrival_order():
    robots = [Robot(i, 1, 1, 0) for i in range(1, 6)]
    res = run_allocation_round(
        _founder(200), robots, speed=0.1, visual_range=1.0, delta=0, arrival_ticks={5: 0, 4: 1, 1: 9, 2: 3, 3: 3}
    )
    assert res.assigned_path == [5, 4]
