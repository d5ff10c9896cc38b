"""Free-XOR, point-and-permute garbling with classic four-row tables.

Each wire has a zero-label ``L0``; the one-label is ``L0 ^ delta`` with
``lsb(delta) = 1``.  XOR and INV gates cost nothing.  An AND gate with
gate index ``g`` stores four ciphertexts ``H(A, B, g) ^ C`` in the row
given by the colour bits of ``(A, B)``.  Tables are produced level by
level, so garbling can be streamed to the evaluator in chunks.
"""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from privlift.circuit.ir import AND, INV, XOR, Circuit
from privlift.errors import DecodeError
from privlift.rand import Prg
from privlift.twopc.crhash import DOMAIN_DECODE, DOMAIN_GATE, TweakHash

_ONE = np.uint64(1)


def colour(labels: np.ndarray) -> np.ndarray:
    return (labels[:, 0] & _ONE).astype(np.int64)


def _split(c: Circuit, s: int, e: int):
    k = c.kind[s:e]
    return (
        np.flatnonzero(k == XOR),
        np.flatnonzero(k == INV),
        np.flatnonzero(k == AND),
    )


class Garbler:
    def __init__(self, circuit: Circuit, rng: Prg, hash_key: bytes | None = None):
        self.circuit = circuit
        self.rng = rng
        delta = rng.labels(1)[0]
        delta[0] |= _ONE
        self.delta = delta
        self.hash = TweakHash(hash_key if hash_key is not None else rng.bytes(16))
        self.zero = np.zeros((circuit.n_wires, 2), dtype=np.uint64)
        for b in circuit.inputs:
            w = b.wires.ravel()
            self.zero[w] = rng.labels(w.size)

    def encode(self, wires: np.ndarray, bits: np.ndarray) -> np.ndarray:
        """Active labels for ``bits`` on ``wires``."""
        bits = np.asarray(bits, dtype=np.uint64).ravel()
        return self.zero[wires] ^ (bits[:, None] * self.delta[None, :])

    def label_pairs(self, wires: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        l0 = self.zero[wires]
        return l0, l0 ^ self.delta

    def tables(self, chunk_gates: int = 1 << 16) -> Iterator[np.ndarray]:
        """Garble the whole circuit; yields ``(n, 4, 2)`` table chunks."""
        c = self.circuit
        z = self.zero
        delta = self.delta
        pending: list[np.ndarray] = []
        pending_n = 0
        for s, e in c.levels():
            ix, ii, ia = _split(c, s, e)
            a = c.in_a[s:e]
            b = c.in_b[s:e]
            o = c.out[s:e]
            if ix.size:
                z[o[ix]] = z[a[ix]] ^ z[b[ix]]
            if ii.size:
                z[o[ii]] = z[a[ii]] ^ delta
            if ia.size:
                pending.append(self._garble_and(a[ia], b[ia], o[ia], (s + ia).astype(np.uint64)))
                pending_n += ia.size
                if pending_n >= chunk_gates:
                    yield np.concatenate(pending)
                    pending, pending_n = [], 0
        if pending:
            yield np.concatenate(pending)

    def _garble_and(self, a, b, o, gid) -> np.ndarray:
        n = a.size
        z, delta = self.zero, self.delta
        a0, b0 = z[a], z[b]
        c0 = self.rng.labels(n)
        z[o] = c0
        pa, pb = colour(a0), colour(b0)
        a_all = np.concatenate([a0, a0, a0 ^ delta, a0 ^ delta])
        b_all = np.concatenate([b0, b0 ^ delta, b0, b0 ^ delta])
        keys = self.hash.h2(a_all, b_all, np.tile(gid, 4), DOMAIN_GATE).reshape(4, n, 2)
        table = np.empty((n, 4, 2), dtype=np.uint64)
        rows = np.arange(n)
        for idx, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            ct = keys[idx] ^ c0
            if i & j:
                ct ^= delta
            table[rows, 2 * (pa ^ i) + (pb ^ j)] = ct
        return table

    def decode_info(self, wires: np.ndarray) -> np.ndarray:
        """Per-wire ``(tag(L0), tag(L1))`` as an (n, 2) uint64 array."""
        l0, l1 = self.label_pairs(wires)
        t = np.arange(wires.size, dtype=np.uint64)
        return np.stack(
            [self.hash.h1(l0, t, DOMAIN_DECODE)[:, 0], self.hash.h1(l1, t, DOMAIN_DECODE)[:, 0]], axis=1
        )

    def decode_labels(self, wires: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Bits carried by the evaluator's labels on wires bound to the garbler."""
        l0 = self.zero[wires]
        is0 = np.all(labels == l0, axis=1)
        is1 = np.all(labels == (l0 ^ self.delta), axis=1)
        if not np.all(is0 | is1):
            raise DecodeError("output label matches neither wire label")
        return is1.astype(np.uint8)


class Evaluator:
    def __init__(self, circuit: Circuit, hash_key: bytes):
        self.circuit = circuit
        self.hash = TweakHash(hash_key)
        self.active = np.zeros((circuit.n_wires, 2), dtype=np.uint64)

    def set_labels(self, wires: np.ndarray, labels: np.ndarray) -> None:
        self.active[wires] = labels

    def evaluate(self, read_tables: Callable[[int], np.ndarray]) -> None:
        """Run every level; ``read_tables(n)`` returns the next n AND tables."""
        c = self.circuit
        act = self.active
        for s, e in c.levels():
            ix, ii, ia = _split(c, s, e)
            a = c.in_a[s:e]
            b = c.in_b[s:e]
            o = c.out[s:e]
            if ix.size:
                act[o[ix]] = act[a[ix]] ^ act[b[ix]]
            if ii.size:
                act[o[ii]] = act[a[ii]]
            if ia.size:
                la, lb = act[a[ia]], act[b[ia]]
                table = read_tables(ia.size)
                row = 2 * colour(la) + colour(lb)
                key = self.hash.h2(la, lb, (s + ia).astype(np.uint64), DOMAIN_GATE)
                act[o[ia]] = table[np.arange(ia.size), row] ^ key

    def labels(self, wires: np.ndarray) -> np.ndarray:
        return self.active[wires]

    def decode(self, wires: np.ndarray, info: np.ndarray) -> np.ndarray:
        if info.shape != (wires.size, 2):
            raise DecodeError("decode map does not cover the requested wires")
        t = np.arange(wires.size, dtype=np.uint64)
        tag = self.hash.h1(self.active[wires], t, DOMAIN_DECODE)[:, 0]
        is0 = tag == info[:, 0]
        is1 = tag == info[:, 1]
        if not np.all(is0 ^ is1):
            raise DecodeError("active label fails the decode check")
        return is1.astype(np.uint8)
