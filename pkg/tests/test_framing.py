import pytest
from hypothesis import given, settings, strategies as st

from privlift.errors import ChannelError, FrameError, PeerAbort, ProtocolError, TranscriptMismatch
from privlift.orchestrator.framing import (
    HEADER,
    MAX_FRAME,
    MsgType,
    PipeChannel,
    decode_frame,
    encode_frame,
)
from privlift.orchestrator.transport import LocalHub, TcpTransport, slot

from conftest import run_pair


@given(st.sampled_from(list(MsgType)), st.binary(max_size=4096))
def test_frame_roundtrip(mtype, payload):
    frame = encode_frame(mtype, payload)
    assert frame[:4] == len(payload).to_bytes(4, "big")
    assert decode_frame(frame) == (mtype, payload)


def test_frame_errors():
    with pytest.raises(FrameError):
        decode_frame(HEADER.pack(0, 250))
    with pytest.raises(FrameError):
        decode_frame(HEADER.pack(MAX_FRAME + 1, 1))


@given(st.lists(st.tuples(st.sampled_from([MsgType.HELLO, MsgType.GC_TABLES]), st.binary(max_size=300)), max_size=8))
@settings(max_examples=30, deadline=None)
def test_pipe_order_and_transcripts(msgs):
    a, b = PipeChannel.pair()
    for m, p in msgs:
        a.send(m, p)
    assert [b.recv_any() for _ in msgs] == msgs
    assert a.transcript()[0] == b.transcript()[1]


def test_large_messages_are_chunked():
    data = bytes(range(256)) * 1000

    def tx(ch):
        ch.send_large(MsgType.PID_MASKED, data, chunk=1000)

    _, got = run_pair(tx, lambda ch: ch.recv_large(MsgType.PID_MASKED))
    assert got == data


def test_unexpected_type_and_abort():
    a, b = PipeChannel.pair()
    a.send(MsgType.HELLO, b"x")
    with pytest.raises(ProtocolError, match="unexpected"):
        b.recv(MsgType.RESULT)
    # b aborted in response
    with pytest.raises(PeerAbort):
        a.recv(MsgType.HELLO)
    a.close()
    with pytest.raises(ChannelError):
        b.recv_any()


def test_transcript_mismatch():
    a, b = PipeChannel.pair()
    a.send(MsgType.HELLO, b"one")
    b.recv(MsgType.HELLO)
    b._h_in.update(b"tampered")
    with pytest.raises(TranscriptMismatch):
        run_pair(lambda _: a.check_transcript(), lambda _: b.check_transcript())


def test_slots():
    assert [slot("control"), slot("aggregator"), slot("worker-0"), slot("worker-7")] == [0, 1, 2, 9]
    with pytest.raises(ValueError):
        slot("bogus")


def test_local_hub_pairs_by_name():
    hub = LocalHub()
    p, a = hub.transport("publisher"), hub.transport("advertiser")
    p.channel("worker-1").send(MsgType.HELLO, b"w1")
    p.channel("control").send(MsgType.HELLO, b"c")
    assert a.channel("control").recv(MsgType.HELLO) == b"c"
    assert a.channel("worker-1").recv(MsgType.HELLO) == b"w1"


def test_tcp_transport_roundtrip(free_port):
    big = bytes(5_000_000)

    def pub(_):
        t = TcpTransport("publisher", free_port, connect_timeout=10)
        ch = t.channel("control")
        ch.send(MsgType.HELLO, b"hi")
        ch.send_large(MsgType.GC_TABLES, big)
        assert ch.recv_large(MsgType.GC_TABLES) == big
        got = ch.recv(MsgType.RESULT)
        ch.check_transcript()
        t.close_all()
        return got

    def adv(_):
        t = TcpTransport("advertiser", free_port, connect_timeout=10)
        ch = t.channel("control")
        ch.send_large(MsgType.GC_TABLES, big)  # both sides send large data at once
        assert ch.recv(MsgType.HELLO) == b"hi"
        assert ch.recv_large(MsgType.GC_TABLES) == big
        ch.send(MsgType.RESULT, b"ok")
        ch.check_transcript()
        t.close_all()

    got, _ = run_pair(pub, adv)
    assert got == b"ok"


def test_tcp_connect_timeout(free_port):
    with pytest.raises(ChannelError):
        TcpTransport("publisher", free_port, connect_timeout=0.3).channel("control")
