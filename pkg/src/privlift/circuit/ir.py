"""Boolean circuit representation, vectorised builder and plaintext evaluator.

Wires are integer ids.  Inside the builder two negative ids stand for the
constants 0 and 1 (``C0``/``C1``) and are folded away, so a finished circuit
only contains XOR, AND and INV gates over real wires.  Gates are stored
sorted by depth level; every level is a set of mutually independent gates,
which is what lets the garbler and evaluator process a level with a handful
of numpy operations.

Multi-bit values are arrays of wire ids with the bit index on axis 0
(least significant first) and any number of trailing batch axes.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

XOR, AND, INV = 0, 1, 2
KIND_NAMES = {XOR: "XOR", AND: "AND", INV: "INV"}
GARBLER, EVALUATOR = "garbler", "evaluator"
PARTIES = (GARBLER, EVALUATOR)

C0, C1 = -1, -2


class MissingInput(KeyError):
    pass


def const_bit(v: int) -> int:
    return C1 if v else C0


@dataclass(frozen=True)
class Binding:
    party: str
    name: str
    wires: np.ndarray  # int64, arbitrary shape, bit index on axis 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.wires.shape

    @property
    def size(self) -> int:
        return int(self.wires.size)


@dataclass
class Circuit:
    n_wires: int
    kind: np.ndarray  # uint8 per gate
    in_a: np.ndarray  # int64
    in_b: np.ndarray  # int64, -1 for INV
    out: np.ndarray  # int64
    level_starts: np.ndarray  # gate offsets of each level, plus n_gates at the end
    inputs: tuple[Binding, ...]
    outputs: tuple[Binding, ...]
    meta: dict = field(default_factory=dict)

    @property
    def n_gates(self) -> int:
        return int(self.kind.size)

    @property
    def n_levels(self) -> int:
        return int(self.level_starts.size - 1)

    def count(self, kind: int) -> int:
        return int(np.count_nonzero(self.kind == kind))

    @property
    def and_count(self) -> int:
        return self.count(AND)

    def input(self, name: str) -> Binding:
        for b in self.inputs:
            if b.name == name:
                return b
        raise KeyError(name)

    def output(self, name: str) -> Binding:
        for b in self.outputs:
            if b.name == name:
                return b
        raise KeyError(name)

    def inputs_of(self, party: str) -> list[Binding]:
        return [b for b in self.inputs if b.party == party]

    def outputs_of(self, party: str) -> list[Binding]:
        return [b for b in self.outputs if b.party == party]

    def input_wires(self, party: str) -> np.ndarray:
        parts = [b.wires.ravel() for b in self.inputs_of(party)]
        return np.concatenate(parts) if parts else np.zeros(0, np.int64)

    def output_wires(self, party: str) -> np.ndarray:
        parts = [b.wires.ravel() for b in self.outputs_of(party)]
        return np.concatenate(parts) if parts else np.zeros(0, np.int64)

    def levels(self):
        s = self.level_starts
        for i in range(s.size - 1):
            yield int(s[i]), int(s[i + 1])

    def validate(self) -> None:
        """Check topological order and binding ownership; raises ValueError."""
        produced = np.zeros(self.n_wires, dtype=np.int64) - 1  # level producing each wire
        owner = np.zeros(self.n_wires, dtype=np.int8)
        for b in self.inputs:
            w = b.wires.ravel()
            if np.any(owner[w] != 0):
                raise ValueError(f"input wire bound twice ({b.name})")
            owner[w] = 1
        for lvl, (s, e) in enumerate(self.levels()):
            a = self.in_a[s:e]
            bb = self.in_b[s:e]
            inv = self.kind[s:e] == INV
            for src in (a, bb[~inv]):
                srcs = src[(owner[src] == 0)]
                if srcs.size and np.any((produced[srcs] < 0) | (produced[srcs] >= lvl)):
                    raise ValueError(f"level {lvl} reads a wire not produced earlier")
            o = self.out[s:e]
            if np.any(owner[o] != 0) or np.any(produced[o] >= 0):
                raise ValueError("gate output overwrites another wire")
            produced[o] = lvl
        dest: dict[int, str] = {}
        for b in self.outputs:
            for w in b.wires.ravel().tolist():
                if owner[w] == 0 and produced[w] < 0:
                    raise ValueError(f"output {b.name} reads an undriven wire")
                if dest.setdefault(w, b.party) != b.party:
                    raise ValueError(f"wire {w} is output to both parties")

    def digest(self) -> bytes:
        h = hashlib.sha256(b"privlift/circuit/v1")
        h.update(int(self.n_wires).to_bytes(8, "big"))
        for arr in (self.kind, self.in_a, self.in_b, self.out, self.level_starts):
            h.update(np.ascontiguousarray(arr).astype("<i8").tobytes())
        for tag, bindings in ((b"in", self.inputs), (b"out", self.outputs)):
            for b in bindings:
                h.update(tag + b.party.encode() + b"\0" + b.name.encode() + b"\0")
                h.update(repr(b.shape).encode())
                h.update(np.ascontiguousarray(b.wires).astype("<i8").tobytes())
        return h.digest()

    def dump(self) -> str:
        """Bristol-style text: binding headers then ``gate_id kind in1 in2 out``."""
        buf = io.StringIO()
        buf.write(f"circuit {self.n_gates} {self.n_wires}\n")
        for tag, bindings in (("input", self.inputs), ("output", self.outputs)):
            for b in bindings:
                shape = "x".join(str(d) for d in b.shape) or "scalar"
                wires = " ".join(str(w) for w in b.wires.ravel().tolist())
                buf.write(f"{tag} {b.party} {b.name} {shape} {wires}\n")
        buf.write("levels " + " ".join(str(x) for x in self.level_starts.tolist()) + "\n")
        for g in range(self.n_gates):
            buf.write(
                f"{g} {KIND_NAMES[int(self.kind[g])]} {int(self.in_a[g])} "
                f"{int(self.in_b[g])} {int(self.out[g])}\n"
            )
        return buf.getvalue()

    @classmethod
    def load(cls, text: str) -> Circuit:
        lines = text.splitlines()
        _, n_gates, n_wires = lines[0].split()
        n_gates, n_wires = int(n_gates), int(n_wires)
        inputs, outputs = [], []
        pos = 1
        while lines[pos].startswith(("input ", "output ")):
            tag, party, name, shape, *wires = lines[pos].split()
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
            arr = np.array([int(w) for w in wires], dtype=np.int64).reshape(dims)
            (inputs if tag == "input" else outputs).append(Binding(party, name, arr))
            pos += 1
        level_starts = np.array([int(x) for x in lines[pos].split()[1:]], dtype=np.int64)
        pos += 1
        names = {v: k for k, v in KIND_NAMES.items()}
        rows = [ln.split() for ln in lines[pos : pos + n_gates]]
        kind = np.array([names[r[1]] for r in rows], dtype=np.uint8)
        in_a = np.array([int(r[2]) for r in rows], dtype=np.int64)
        in_b = np.array([int(r[3]) for r in rows], dtype=np.int64)
        out = np.array([int(r[4]) for r in rows], dtype=np.int64)
        return cls(n_wires, kind, in_a, in_b, out, level_starts, tuple(inputs), tuple(outputs))


class Builder:
    """Accumulates gates; every op is elementwise over broadcast wire arrays."""

    def __init__(self):
        self.n_wires = 0
        self._level = np.zeros(4096, dtype=np.int32)
        self._chunks: list[tuple[np.ndarray, ...]] = []
        self._pk: list[int] = []
        self._pa: list[int] = []
        self._pb: list[int] = []
        self._po: list[int] = []
        self._pl: list[int] = []
        self._inputs: list[Binding] = []
        self._outputs: list[Binding] = []
        self._output_party: dict[int, str] = {}
        self._zero: int | None = None
        self.meta: dict = {}

    # -- allocation -------------------------------------------------------

    def _alloc(self, n: int) -> int:
        start = self.n_wires
        self.n_wires += n
        if self.n_wires > self._level.size:
            grown = np.zeros(max(self.n_wires, 2 * self._level.size), dtype=np.int32)
            grown[: self._level.size] = self._level
            self._level = grown
        return start

    def _flush(self) -> None:
        if self._pk:
            self._chunks.append(
                (
                    np.array(self._pk, dtype=np.uint8),
                    np.array(self._pa, dtype=np.int64),
                    np.array(self._pb, dtype=np.int64),
                    np.array(self._po, dtype=np.int64),
                    np.array(self._pl, dtype=np.int32),
                )
            )
            self._pk, self._pa, self._pb, self._po, self._pl = [], [], [], [], []

    def _gate1(self, kind: int, a: int, b: int) -> int:
        lv = self._level
        lvl = int(lv[a]) + 1 if b < 0 else max(int(lv[a]), int(lv[b])) + 1
        out = self._alloc(1)
        self._level[out] = lvl
        self._pk.append(kind)
        self._pa.append(a)
        self._pb.append(b)
        self._po.append(out)
        self._pl.append(lvl)
        return out

    def _gates(self, kind: int, a: np.ndarray, b: np.ndarray | None) -> np.ndarray:
        n = a.size
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        if n <= 2:
            bb = [-1] * n if b is None else b.tolist()
            return np.array([self._gate1(kind, x, y) for x, y in zip(a.tolist(), bb)], np.int64)
        self._flush()
        if b is None:
            lvl = self._level[a] + 1
            b = np.full(n, -1, dtype=np.int64)
        else:
            lvl = np.maximum(self._level[a], self._level[b]) + 1
        start = self._alloc(n)
        out = np.arange(start, start + n, dtype=np.int64)
        self._level[start : start + n] = lvl
        self._chunks.append((np.full(n, kind, np.uint8), a.copy(), b.copy(), out, lvl.astype(np.int32)))
        return out

    # -- bindings ---------------------------------------------------------

    def input(self, party: str, name: str, shape) -> np.ndarray:
        if party not in PARTIES:
            raise ValueError(f"unknown party {party!r}")
        if any(b.name == name for b in self._inputs):
            raise ValueError(f"duplicate input name {name!r}")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = self._alloc(n)
        wires = np.arange(start, start + n, dtype=np.int64).reshape(shape)
        self._inputs.append(Binding(party, name, wires))
        return wires

    def _zero_wire(self) -> int:
        if self._zero is None:
            self._zero = int(self.input(GARBLER, "_const_zero", ()))
        return self._zero

    def output(self, party: str, name: str, wires) -> None:
        if party not in PARTIES:
            raise ValueError(f"unknown party {party!r}")
        w = np.array(wires, dtype=np.int64)
        flat = w.ravel()
        if np.any(flat < 0):
            zero = self._zero_wire()
            one = None
            for i in np.flatnonzero(flat < 0).tolist():
                if flat[i] == C0:
                    flat[i] = zero
                else:
                    if one is None:
                        one = int(self.inv(np.int64(zero)))
                    flat[i] = one
        for i, x in enumerate(flat.tolist()):
            other = self._output_party.get(x)
            if other is not None and other != party:
                # one wire, one destination: route a copy
                flat[i] = int(self.inv(self.inv(np.int64(x))))
                x = int(flat[i])
            self._output_party[x] = party
        self._outputs.append(Binding(party, name, flat.reshape(w.shape)))

    # -- gates ------------------------------------------------------------

    def xor(self, a, b) -> np.ndarray:
        a, b = np.broadcast_arrays(np.asarray(a, np.int64), np.asarray(b, np.int64))
        shape = a.shape
        a = a.ravel()
        b = b.ravel()
        if a.size <= 2:
            return np.array([self._xor1(x, y) for x, y in zip(a.tolist(), b.tolist())], np.int64).reshape(shape)
        res = np.empty(a.size, dtype=np.int64)
        ca = a < 0
        cb = b < 0
        both = ca & cb
        res[both] = const_codes((-a[both] - 1) ^ (-b[both] - 1))
        pass_a = cb & ~ca  # b constant
        pass_b = ca & ~cb
        # x ^ 0 -> x ; x ^ 1 -> ~x
        zb = pass_a & (b == C0)
        res[zb] = a[zb]
        za = pass_b & (a == C0)
        res[za] = b[za]
        inv_idx = np.flatnonzero((pass_a & (b == C1)) | (pass_b & (a == C1)))
        if inv_idx.size:
            src = np.where(a[inv_idx] < 0, b[inv_idx], a[inv_idx])
            res[inv_idx] = self._gates(INV, src, None)
        wires = ~(ca | cb)
        same = wires & (a == b)
        res[same] = C0
        g = np.flatnonzero(wires & ~same)
        if g.size:
            res[g] = self._gates(XOR, a[g], b[g])
        return res.reshape(shape)

    def _xor1(self, a: int, b: int) -> int:
        if a < 0 and b < 0:
            return const_bit((-a - 1) ^ (-b - 1))
        if b < 0:
            a, b = b, a
        if a == C0:
            return b
        if a == C1:
            return self._gate1(INV, b, -1)
        if a == b:
            return C0
        return self._gate1(XOR, a, b)

    def and_(self, a, b) -> np.ndarray:
        a, b = np.broadcast_arrays(np.asarray(a, np.int64), np.asarray(b, np.int64))
        shape = a.shape
        a = a.ravel()
        b = b.ravel()
        if a.size <= 2:
            return np.array([self._and1(x, y) for x, y in zip(a.tolist(), b.tolist())], np.int64).reshape(shape)
        res = np.empty(a.size, dtype=np.int64)
        ca = a < 0
        cb = b < 0
        both = ca & cb
        res[both] = const_codes((-a[both] - 1) & (-b[both] - 1))
        zero = (ca & (a == C0)) | (cb & (b == C0))
        res[zero & ~both] = C0
        # x & 1 -> x
        ones_b = cb & (b == C1) & ~ca
        res[ones_b] = a[ones_b]
        ones_a = ca & (a == C1) & ~cb
        res[ones_a] = b[ones_a]
        wires = ~(ca | cb)
        same = wires & (a == b)
        res[same] = a[same]
        g = np.flatnonzero(wires & ~same)
        if g.size:
            res[g] = self._gates(AND, a[g], b[g])
        return res.reshape(shape)

    def _and1(self, a: int, b: int) -> int:
        if a < 0 and b < 0:
            return const_bit((-a - 1) & (-b - 1))
        if b < 0:
            a, b = b, a
        if a == C0:
            return C0
        if a == C1:
            return b
        if a == b:
            return a
        return self._gate1(AND, a, b)

    def inv(self, a) -> np.ndarray:
        a = np.asarray(a, np.int64)
        shape = a.shape
        a = a.ravel()
        if a.size <= 2:
            out = [(-3 - x) if x < 0 else self._gate1(INV, x, -1) for x in a.tolist()]
            return np.array(out, np.int64).reshape(shape)
        res = np.empty(a.size, dtype=np.int64)
        c = a < 0
        res[c] = -3 - a[c]
        g = np.flatnonzero(~c)
        if g.size:
            res[g] = self._gates(INV, a[g], None)
        return res.reshape(shape)

    def or_(self, a, b) -> np.ndarray:
        return self.inv(self.and_(self.inv(a), self.inv(b)))

    # -- finish -----------------------------------------------------------

    def build(self, **meta) -> Circuit:
        self._flush()
        if self._chunks:
            kind, a, b, out, lvl = (np.concatenate(parts) for parts in zip(*self._chunks))
        else:
            kind = np.zeros(0, np.uint8)
            a = b = out = np.zeros(0, np.int64)
            lvl = np.zeros(0, np.int32)
        order = np.argsort(lvl, kind="stable")
        kind, a, b, out, lvl = kind[order], a[order], b[order], out[order], lvl[order]
        starts = np.flatnonzero(np.diff(lvl)) + 1
        level_starts = np.concatenate([[0], starts, [kind.size]]).astype(np.int64) if kind.size else np.zeros(1, np.int64)
        m = dict(self.meta)
        m.update(meta)
        return Circuit(
            self.n_wires, kind, a, b, out, level_starts, tuple(self._inputs), tuple(self._outputs), m
        )


def const_codes(values: np.ndarray) -> np.ndarray:
    return np.where(values.astype(bool), C1, C0).astype(np.int64)


def const_word(value: int, width: int, batch: tuple[int, ...] = ()) -> np.ndarray:
    """Constant-wire array for ``value`` (two's complement, ``width`` bits)."""
    bits = [const_bit((value >> i) & 1) for i in range(width)]
    arr = np.array(bits, dtype=np.int64).reshape((width,) + (1,) * len(batch))
    return np.broadcast_to(arr, (width,) + tuple(batch)).copy()


# -- plaintext evaluation ---------------------------------------------------


def run_levels(c: Circuit, values: np.ndarray) -> None:
    """Evaluate every gate in place on a per-wire uint8 value array.

    ``values`` may carry a trailing axis of independent assignments.
    """
    kind, in_a, in_b, out = c.kind, c.in_a, c.in_b, c.out
    for s, e in c.levels():
        k = kind[s:e] if values.ndim == 1 else kind[s:e, None]
        va = values[in_a[s:e]]
        vb = values[np.maximum(in_b[s:e], 0)]
        res = np.where(k == AND, va & vb, va ^ vb)
        res = np.where(k == INV, va ^ 1, res)
        values[out[s:e]] = res


def assign_inputs(c: Circuit, inputs: dict, values: np.ndarray, party: str | None = None) -> None:
    for b in c.inputs:
        if party is not None and b.party != party:
            continue
        if b.name == "_const_zero":
            values[b.wires.ravel()] = 0
            continue
        if b.name not in inputs:
            raise MissingInput(f"no assignment for input {b.name!r}")
        bits = np.broadcast_to(np.asarray(inputs[b.name], dtype=np.uint8), b.shape)
        if np.any(bits > 1):
            raise ValueError(f"input {b.name!r} is not a bit array")
        values[b.wires.ravel()] = bits.ravel()


def eval_plaintext(c: Circuit, inputs: dict) -> dict[str, np.ndarray]:
    """Reference evaluator; returns output bits per output binding name."""
    values = np.zeros(c.n_wires, dtype=np.uint8)
    assign_inputs(c, inputs, values)
    run_levels(c, values)
    return {b.name: values[b.wires] for b in c.outputs}


def eval_plaintext_batch(c: Circuit, inputs: dict, n: int) -> dict[str, np.ndarray]:
    """Evaluate ``n`` independent assignments at once.

    Each input is shaped ``binding.shape + (n,)`` (or broadcastable to it);
    outputs carry the same trailing axis.
    """
    values = np.zeros((c.n_wires, n), dtype=np.uint8)
    for b in c.inputs:
        w = b.wires.ravel()
        if b.name == "_const_zero":
            continue
        if b.name not in inputs:
            raise MissingInput(f"no assignment for input {b.name!r}")
        bits = np.broadcast_to(np.asarray(inputs[b.name], dtype=np.uint8), b.shape + (n,))
        values[w] = bits.reshape(w.size, n)
    run_levels(c, values)
    return {b.name: values[b.wires] for b in c.outputs}


# -- integer <-> bit helpers ------------------------------------------------


def to_bits(values, width: int) -> np.ndarray:
    """Bits of nonnegative integers (or two's complement of negatives).

    Returns uint8 array of shape ``(width,) + shape(values)``.
    """
    arr = np.asarray(values, dtype=object)
    if width <= 63 and all(-(1 << 63) <= int(v) < (1 << 64) for v in arr.ravel().tolist()):
        v = np.array([int(x) & ((1 << 64) - 1) for x in arr.ravel().tolist()], dtype=np.uint64)
        bits = (v[None, :] >> np.arange(width, dtype=np.uint64)[:, None]) & np.uint64(1)
        return bits.astype(np.uint8).reshape((width,) + arr.shape)
    mask = (1 << width) - 1
    flat = [int(x) & mask for x in arr.ravel().tolist()]
    out = np.zeros((width, len(flat)), dtype=np.uint8)
    for j, x in enumerate(flat):
        for i in range(width):
            out[i, j] = (x >> i) & 1
    return out.reshape((width,) + arr.shape)


def to_bits_u64(values: np.ndarray, width: int) -> np.ndarray:
    """Fast path of :func:`to_bits` for uint64 arrays."""
    v = np.asarray(values, dtype=np.uint64)
    shifts = np.arange(width, dtype=np.uint64).reshape((width,) + (1,) * v.ndim)
    return ((v[None, ...] >> shifts) & np.uint64(1)).astype(np.uint8)


def from_bits(bits, signed: bool = False):
    """Inverse of :func:`to_bits`; returns Python ints (scalar or nested list)."""
    bits = np.asarray(bits, dtype=np.uint8)
    width = bits.shape[0]
    rest = bits.shape[1:]
    if 0 < width <= 64:
        shifts = np.arange(width, dtype=np.uint64).reshape((width,) + (1,) * len(rest))
        u = np.bitwise_or.reduce(bits.astype(np.uint64) << shifts, axis=0)
        if signed:
            arr = u.astype(np.int64) if width == 64 else np.where(
                (u >> np.uint64(width - 1)) & np.uint64(1),
                u.astype(np.int64) - (1 << width),
                u.astype(np.int64),
            )
            return arr.tolist()
        return u.tolist()
    flat = bits.reshape(width, -1)
    vals = []
    for j in range(flat.shape[1]):
        x = 0
        col = flat[:, j].tolist()
        for i in range(width - 1, -1, -1):
            x = (x << 1) | col[i]
        if signed and width and (x >> (width - 1)) & 1:
            x -= 1 << width
        vals.append(x)
    if not rest:
        return vals[0]
    return np.array(vals, dtype=object).reshape(rest).tolist()
