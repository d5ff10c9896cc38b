"""Oblivious transfer of 128-bit messages.

``base_ot_*`` is the DDH "simplest OT" over ristretto255, secure against a
semi-honest receiver and sender.  ``ot_extension_*`` is IKNP with 128 base
OTs run in the reverse direction and a fixed-key AES correlation-robust hash.
Messages are ``(n, 2)`` uint64 blocks.
"""

from __future__ import annotations

import hashlib

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from privlift import group
from privlift.errors import ProtocolError
from privlift.orchestrator.framing import Channel, MsgType
from privlift.rand import Prg
from privlift.twopc.crhash import OT_HASH, DOMAIN_OT, from_bytes, to_bytes

KAPPA = 128
EXTENSION_THRESHOLD = 128
CHUNK = 1 << 17  # OTs per extension round


def _kdf(a: bytes, b: bytes, i: int, shared: group.GroupElement) -> bytes:
    return hashlib.sha256(b"privlift/ot/v1" + a + b + i.to_bytes(8, "big") + shared.to_bytes()).digest()[:16]


def _xor_bytes(x: bytes, y: bytes) -> bytes:
    return (int.from_bytes(x, "little") ^ int.from_bytes(y, "little")).to_bytes(len(x), "little")


def _elements(payload: bytes, n: int) -> list[group.GroupElement]:
    if len(payload) != 32 * n:
        raise ProtocolError("base OT batch has the wrong size")
    try:
        return [group.GroupElement.from_bytes(payload[32 * i : 32 * i + 32]) for i in range(n)]
    except group.InvalidElement as exc:
        raise ProtocolError("malformed group element in base OT") from exc


def base_ot_send(channel: Channel, m0: np.ndarray, m1: np.ndarray, rng: Prg) -> None:
    n = m0.shape[0]
    a = group.scalar_random(rng)
    big_a = group.exp_base(a)
    channel.send(MsgType.OT_BASE_MSG, big_a.to_bytes())
    try:
        bs = _elements(channel.recv(MsgType.OT_BASE_MSG), n)
    except ProtocolError:
        channel.abort("malformed group element")
        raise
    a_enc = big_a.to_bytes()
    m0b, m1b = to_bytes(m0), to_bytes(m1)
    out = bytearray()
    for i, big_b in enumerate(bs):
        b_enc = big_b.to_bytes()
        k0 = _kdf(a_enc, b_enc, i, group.exp(big_b, a))
        k1 = _kdf(a_enc, b_enc, i, group.exp(group.div(big_b, big_a), a))
        out += _xor_bytes(m0b[16 * i : 16 * i + 16], k0)
        out += _xor_bytes(m1b[16 * i : 16 * i + 16], k1)
    channel.send(MsgType.OT_BASE_MSG, bytes(out))


def base_ot_recv(channel: Channel, choices: np.ndarray, rng: Prg) -> np.ndarray:
    choices = np.asarray(choices, dtype=np.uint8)
    n = choices.size
    try:
        (big_a,) = _elements(channel.recv(MsgType.OT_BASE_MSG), 1)
    except ProtocolError:
        channel.abort("malformed group element")
        raise
    a_enc = big_a.to_bytes()
    keys = []
    payload = bytearray()
    for i, c in enumerate(choices.tolist()):
        b = group.scalar_random(rng)
        big_b = group.exp_base(b)
        if c:
            big_b = group.mul(big_a, big_b)
        b_enc = big_b.to_bytes()
        payload += b_enc
        keys.append(_kdf(a_enc, b_enc, i, group.exp(big_a, b)))
    channel.send(MsgType.OT_BASE_MSG, bytes(payload))
    cts = channel.recv(MsgType.OT_BASE_MSG)
    if len(cts) != 32 * n:
        raise ProtocolError("base OT ciphertexts have the wrong size")
    out = bytearray()
    for i, c in enumerate(choices.tolist()):
        ct = cts[32 * i + 16 * c : 32 * i + 16 * c + 16]
        out += _xor_bytes(ct, keys[i])
    return from_bytes(bytes(out)) if n else np.zeros((0, 2), np.uint64)


class _Expander:
    """AES-CTR stream per base seed; yields consecutive column chunks."""

    def __init__(self, seeds: np.ndarray):
        raw = to_bytes(seeds)
        self._enc = [
            Cipher(algorithms.AES(raw[16 * j : 16 * j + 16]), modes.CTR(b"\0" * 16)).encryptor()
            for j in range(seeds.shape[0])
        ]

    def next(self, nbytes: int) -> np.ndarray:
        zero = b"\0" * nbytes
        rows = [np.frombuffer(e.update(zero), dtype=np.uint8) for e in self._enc]
        return np.stack(rows)


def _transpose(mat: np.ndarray) -> np.ndarray:
    """(128, m/8) uint8 bit matrix -> (m, 2) uint64 rows."""
    bits = np.unpackbits(mat, axis=1, bitorder="little")
    rows = np.packbits(np.ascontiguousarray(bits.T), axis=1, bitorder="little")
    return rows.view("<u8").astype(np.uint64)


def ot_extension_send(channel: Channel, m0: np.ndarray, m1: np.ndarray, rng: Prg) -> None:
    n = m0.shape[0]
    s_bits = rng.bits(KAPPA)
    seeds = base_ot_recv(channel, s_bits, rng)
    s_block = np.packbits(s_bits, bitorder="little").view("<u8").astype(np.uint64)
    expander = _Expander(seeds)
    s_col = s_bits.astype(bool)[:, None]
    for start in range(0, n, CHUNK):
        m = min(CHUNK, n - start)
        nbytes = (m + 7) // 8
        u = np.frombuffer(channel.recv(MsgType.OT_EXT_MATRIX), dtype=np.uint8)
        if u.size != KAPPA * nbytes:
            channel.abort("extension matrix size mismatch")
            raise ProtocolError("OT extension matrix size mismatch")
        u = u.reshape(KAPPA, nbytes)
        q = expander.next(nbytes) ^ np.where(s_col, u, 0).astype(np.uint8)
        rows = _transpose(q)[:m]
        idx = np.arange(start, start + m, dtype=np.uint64)
        y0 = m0[start : start + m] ^ OT_HASH.h1(rows, idx, DOMAIN_OT)
        y1 = m1[start : start + m] ^ OT_HASH.h1(rows ^ s_block, idx, DOMAIN_OT)
        channel.send(MsgType.OT_EXT_PAYLOAD, to_bytes(np.concatenate([y0, y1])))


def ot_extension_recv(channel: Channel, choices: np.ndarray, rng: Prg) -> np.ndarray:
    choices = np.asarray(choices, dtype=np.uint8)
    n = choices.size
    k0 = rng.labels(KAPPA)
    k1 = rng.labels(KAPPA)
    base_ot_send(channel, k0, k1, rng)
    g0, g1 = _Expander(k0), _Expander(k1)
    out = np.empty((n, 2), dtype=np.uint64)
    for start in range(0, n, CHUNK):
        m = min(CHUNK, n - start)
        nbytes = (m + 7) // 8
        r = np.packbits(choices[start : start + m], bitorder="little")
        t = g0.next(nbytes)
        u = t ^ g1.next(nbytes) ^ r[None, :]
        channel.send(MsgType.OT_EXT_MATRIX, u.tobytes())
        rows = _transpose(t)[:m]
        idx = np.arange(start, start + m, dtype=np.uint64)
        ys = from_bytes(channel.recv(MsgType.OT_EXT_PAYLOAD))
        if ys.shape[0] != 2 * m:
            raise ProtocolError("OT extension payload size mismatch")
        c = choices[start : start + m].astype(bool)
        y = np.where(c[:, None], ys[m:], ys[:m])
        out[start : start + m] = y ^ OT_HASH.h1(rows, idx, DOMAIN_OT)
    return out


def ot_send(channel: Channel, m0: np.ndarray, m1: np.ndarray, rng: Prg) -> None:
    """Sender side; base OT for small batches, IKNP extension above 128."""
    if m0.shape[0] <= EXTENSION_THRESHOLD:
        base_ot_send(channel, m0, m1, rng)
    else:
        ot_extension_send(channel, m0, m1, rng)


def ot_recv(channel: Channel, choices: np.ndarray, rng: Prg) -> np.ndarray:
    if np.asarray(choices).size <= EXTENSION_THRESHOLD:
        return base_ot_recv(channel, choices, rng)
    return ot_extension_recv(channel, choices, rng)
