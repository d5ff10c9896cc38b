"""Two-party evaluation of a :class:`~privlift.circuit.ir.Circuit` over a channel.

Message flow (garbler = G, evaluator = E)::

    G -> E  GC_SETUP          circuit digest, gate-hash key
    E -> G  GC_SETUP          circuit digest
    G -> E  GC_INPUT_LABELS   active labels of G's inputs
    G <-> E OT_*              labels of E's inputs
    G -> E  GC_TABLES         AND tables, streamed level by level
    G -> E  OUTPUT_DECODE     decode tags for E's outputs
    E -> G  GC_OUTPUT_LABELS  active labels of G's outputs
    G <-> E TRANSCRIPT_HASH
"""

from __future__ import annotations

from collections import deque

import numpy as np

from privlift.circuit.ir import EVALUATOR, GARBLER, Circuit
from privlift.errors import BindingMismatch, DecodeError, ProtocolError
from privlift.orchestrator.framing import Channel, MsgType
from privlift.rand import Prg
from privlift.twopc import ot
from privlift.twopc.crhash import from_bytes, to_bytes
from privlift.twopc.garble import Evaluator, Garbler

TABLE_CHUNK = 1 << 16  # AND gates per GC_TABLES frame


def input_bits(circuit: Circuit, party: str, inputs: dict) -> np.ndarray:
    """Flattened input bits of ``party`` in binding order."""
    parts = []
    for b in circuit.inputs_of(party):
        if b.name == "_const_zero":
            parts.append(np.zeros(b.size, np.uint8))
            continue
        if b.name not in inputs:
            raise KeyError(f"no assignment for input {b.name!r}")
        bits = np.broadcast_to(np.asarray(inputs[b.name], dtype=np.uint8), b.shape)
        if np.any(bits > 1):
            raise ValueError(f"input {b.name!r} is not a bit array")
        parts.append(bits.ravel())
    return np.concatenate(parts) if parts else np.zeros(0, np.uint8)


def _split_outputs(circuit: Circuit, party: str, bits: np.ndarray) -> dict[str, np.ndarray]:
    out, pos = {}, 0
    for b in circuit.outputs_of(party):
        out[b.name] = bits[pos : pos + b.size].reshape(b.shape)
        pos += b.size
    return out


def _setup(channel: Channel, party: str, circuit: Circuit, key: bytes | None) -> bytes:
    digest = circuit.digest()
    if party == GARBLER:
        channel.send(MsgType.GC_SETUP, digest + key)
        peer = channel.recv(MsgType.GC_SETUP)
        if peer != digest:
            channel.abort("circuit digest mismatch")
            raise BindingMismatch("peer holds a different circuit")
        return key
    msg = channel.recv(MsgType.GC_SETUP)
    if len(msg) != 48:
        channel.abort("malformed GC_SETUP")
        raise ProtocolError("malformed GC_SETUP")
    channel.send(MsgType.GC_SETUP, digest)
    if msg[:32] != digest:
        raise BindingMismatch("peer holds a different circuit")
    return msg[32:]


def run_garbler(channel: Channel, circuit: Circuit, inputs: dict, rng: Prg) -> dict[str, np.ndarray]:
    key = rng.bytes(16)
    _setup(channel, GARBLER, circuit, key)
    g = Garbler(circuit, rng, key)

    mine = circuit.input_wires(GARBLER)
    channel.send_large(MsgType.GC_INPUT_LABELS, to_bytes(g.encode(mine, input_bits(circuit, GARBLER, inputs))))

    theirs = circuit.input_wires(EVALUATOR)
    if theirs.size:
        l0, l1 = g.label_pairs(theirs)
        ot.ot_send(channel, l0, l1, rng)

    for chunk in g.tables(TABLE_CHUNK):
        channel.send(MsgType.GC_TABLES, to_bytes(chunk.reshape(-1, 2)))

    channel.send_large(MsgType.OUTPUT_DECODE, to_bytes(g.decode_info(circuit.output_wires(EVALUATOR))))
    own_out = circuit.output_wires(GARBLER)
    labels = from_bytes(channel.recv_large(MsgType.GC_OUTPUT_LABELS))
    if labels.shape[0] != own_out.size:
        channel.abort("output label count mismatch")
        raise DecodeError("evaluator returned the wrong number of output labels")
    try:
        bits = g.decode_labels(own_out, labels)
    except DecodeError:
        channel.abort("output labels failed to decode")
        raise
    channel.check_transcript()
    return _split_outputs(circuit, GARBLER, bits)


class _TableReader:
    def __init__(self, channel: Channel):
        self.channel = channel
        self.buf: deque[np.ndarray] = deque()
        self.avail = 0

    def __call__(self, n: int) -> np.ndarray:
        while self.avail < n:
            chunk = from_bytes(self.channel.recv(MsgType.GC_TABLES)).reshape(-1, 4, 2)
            self.buf.append(chunk)
            self.avail += chunk.shape[0]
        parts, need = [], n
        while need:
            head = self.buf[0]
            if head.shape[0] <= need:
                parts.append(self.buf.popleft())
                need -= head.shape[0]
            else:
                parts.append(head[:need])
                self.buf[0] = head[need:]
                need = 0
        self.avail -= n
        return parts[0] if len(parts) == 1 else np.concatenate(parts)


def run_evaluator(channel: Channel, circuit: Circuit, inputs: dict, rng: Prg) -> dict[str, np.ndarray]:
    key = _setup(channel, EVALUATOR, circuit, None)
    ev = Evaluator(circuit, key)

    g_wires = circuit.input_wires(GARBLER)
    g_labels = from_bytes(channel.recv_large(MsgType.GC_INPUT_LABELS))
    if g_labels.shape[0] != g_wires.size:
        channel.abort("input label count mismatch")
        raise BindingMismatch("garbler sent the wrong number of input labels")
    ev.set_labels(g_wires, g_labels)

    mine = circuit.input_wires(EVALUATOR)
    if mine.size:
        ev.set_labels(mine, ot.ot_recv(channel, input_bits(circuit, EVALUATOR, inputs), rng))

    reader = _TableReader(channel)
    ev.evaluate(reader)
    if reader.avail:
        channel.abort("surplus garbled tables")
        raise ProtocolError("garbler sent more tables than the circuit has AND gates")

    own_out = circuit.output_wires(EVALUATOR)
    info = from_bytes(channel.recv_large(MsgType.OUTPUT_DECODE))
    try:
        bits = ev.decode(own_out, info)
    except DecodeError:
        channel.abort("output decoding failed")
        raise
    channel.send_large(MsgType.GC_OUTPUT_LABELS, to_bytes(ev.labels(circuit.output_wires(GARBLER))))
    channel.check_transcript()
    return _split_outputs(circuit, EVALUATOR, bits)


def run_2pc(channel: Channel, party: str, circuit: Circuit, inputs: dict, rng: Prg) -> dict[str, np.ndarray]:
    """Evaluate ``circuit`` jointly; returns this party's output bits by name."""
    if party == GARBLER:
        return run_garbler(channel, circuit, inputs, rng)
    if party == EVALUATOR:
        return run_evaluator(channel, circuit, inputs, rng)
    raise ValueError(f"unknown party {party!r}")
