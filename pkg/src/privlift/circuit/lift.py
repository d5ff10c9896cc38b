"""Lift shard circuit and aggregation circuit, with input encoders.

Shard circuit, per row ``r``::

    v    = sum_k conv_value[k] * [conv_ts[k] > opp_ts]
    y    = min(v, R) * has_opp * has_outcome
    acc += (1, y, y^2) into the test or control group (has_opp rows only)

The six 64-bit accumulators ``(n_T, Sy_T, Syy_T, n_C, Sy_C, Syy_C)`` leave the
circuit XOR-ed with six garbler masks and go to the evaluator only.

The aggregation circuit XORs every masked segment with its mask, sums the
segments, derives ``lift`` and ``se`` in fixed point (16 fractional bits) and
adds the peer's selected noise element to each party's copy of the result.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import lru_cache
from math import isqrt

import numpy as np

from privlift.circuit import gadgets as G
from privlift.circuit.ir import EVALUATOR, GARBLER, Builder, Circuit, from_bits, to_bits_u64

TS_BITS = 32
VALUE_BITS = 21  # values are capped at 2**20 on ingest
MAX_VALUE = 1 << 20
WORD = 64
N_AGG = 6
COUNT_BITS = 32  # group counts are pre-checked below 2**32
QFRAC = 32  # fractional bits of s^2 / n before the square root
FRAC = G.FRAC_BITS
AGG_NAMES = ("n_t", "sum_t", "sumsq_t", "n_c", "sum_c", "sumsq_c")


@dataclass(frozen=True)
class LiftShardLayout:
    rows: int
    k: int
    r_bound: int

    def __post_init__(self):
        if self.rows < 1:
            raise ValueError("layout needs at least one row")
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if not 1 <= self.r_bound < 1 << 32:
            raise ValueError("R must lie in [1, 2^32)")

    @property
    def y_bits(self) -> int:
        vbits = VALUE_BITS + (self.k - 1).bit_length()
        return min(self.r_bound.bit_length(), vbits)


def build_lift_shard_circuit(layout: LiftShardLayout) -> Circuit:
    n, k, r = layout.rows, layout.k, layout.r_bound
    b = Builder()
    opp_ts = b.input(GARBLER, "opp_ts", (TS_BITS, n))
    is_test = b.input(GARBLER, "is_test", (n,))
    has_opp = b.input(GARBLER, "has_opp", (n,))
    masks = b.input(GARBLER, "masks", (WORD, N_AGG))
    conv_ts = b.input(EVALUATOR, "conv_ts", (TS_BITS, k, n))
    conv_value = b.input(EVALUATOR, "conv_value", (TS_BITS, k, n))
    has_outcome = b.input(EVALUATOR, "has_outcome", (n,))

    after = G.lt(b, np.broadcast_to(opp_ts[:, None, :], conv_ts.shape), conv_ts)  # (k, n)
    vals = b.and_(conv_value[:VALUE_BITS], after[None])
    # sum over k: move k to the last axis for tree_sum
    v = G.tree_sum(b, np.moveaxis(vals, 1, -1))  # (bits, n)
    y = G.clamp(b, v, r, layout.y_bits)
    y = b.and_(y, b.and_(has_opp, has_outcome)[None])
    yy = G.mul(b, y, y)

    t = b.and_(is_test, has_opp)
    # (all, test) stacked on a middle axis, rows last
    cnt = np.stack([has_opp, t])[None]
    sy = np.stack([y, b.and_(y, t[None])], axis=1)
    syy = np.stack([yy, b.and_(yy, t[None])], axis=1)
    totals = [G.zext(G.tree_sum(b, x, WORD), WORD) for x in (cnt, sy, syy)]  # each (64, 2)
    test = [x[:, 1] for x in totals]
    ctrl = [G.sub(b, x[:, 0], x[:, 1]) for x in totals]
    words = np.stack(test + ctrl, axis=1)  # (64, 6)
    b.output(EVALUATOR, "masked", b.xor(words, masks))
    return b.build(kind="lift_shard", rows=n, k=k, r_bound=r)


def _locked_cache(builder):
    """Memoize a builder; concurrent callers wait for one build instead of racing."""
    cached = lru_cache(maxsize=8)(builder)
    lock = threading.Lock()

    def get(layout):
        with lock:
            return cached(layout)

    get.cache_clear = cached.cache_clear
    return get


cached_lift_circuit = _locked_cache(build_lift_shard_circuit)


# -- encoders ---------------------------------------------------------------


def _pad(a: np.ndarray, rows: int, axis: int = -1) -> np.ndarray:
    extra = rows - a.shape[axis]
    if extra < 0:
        raise ValueError(f"{a.shape[axis]} rows exceed layout capacity {rows}")
    if extra == 0:
        return a
    pad = [(0, 0)] * a.ndim
    pad[axis] = (0, extra)
    return np.pad(a, pad)


def encode_garbler_rows(layout: LiftShardLayout, opp_ts, is_test, has_opp, masks) -> dict:
    """Bit assignments for the publisher side; ``masks`` is six uint64 words."""
    opp_ts = np.asarray(opp_ts, dtype=np.uint64)
    masks = np.asarray(masks, dtype=np.uint64)
    if masks.shape != (N_AGG,):
        raise ValueError("need six mask words")
    return {
        "opp_ts": to_bits_u64(_pad(opp_ts, layout.rows), TS_BITS),
        "is_test": _pad(np.asarray(is_test, dtype=np.uint8), layout.rows),
        "has_opp": _pad(np.asarray(has_opp, dtype=np.uint8), layout.rows),
        "masks": to_bits_u64(masks, WORD),
    }


def encode_evaluator_rows(layout: LiftShardLayout, conv_ts, conv_value, has_outcome) -> dict:
    """``conv_ts`` and ``conv_value`` are (rows, K) arrays, zero padded."""
    conv_ts = np.asarray(conv_ts, dtype=np.uint64).reshape(-1, layout.k)
    conv_value = np.asarray(conv_value, dtype=np.uint64).reshape(-1, layout.k)
    if np.any(conv_value > MAX_VALUE):
        raise ValueError("conversion value above 2^20")
    return {
        "conv_ts": to_bits_u64(_pad(conv_ts.T, layout.rows), TS_BITS),
        "conv_value": to_bits_u64(_pad(conv_value.T, layout.rows), TS_BITS),
        "has_outcome": _pad(np.asarray(has_outcome, dtype=np.uint8), layout.rows),
    }


def words_from_bits(bits) -> np.ndarray:
    """(64, ...) bits -> uint64 words."""
    bits = np.asarray(bits, dtype=np.uint64)
    shifts = np.arange(bits.shape[0], dtype=np.uint64).reshape((-1,) + (1,) * (bits.ndim - 1))
    return np.bitwise_or.reduce(bits << shifts, axis=0)


def shard_aggregates_plain(opp_ts, is_test, has_opp, conv_ts, conv_value, has_outcome, r_bound: int) -> list[int]:
    """Integer reference for the six accumulators of one shard."""
    acc = [0] * N_AGG
    for i in range(len(opp_ts)):
        if not has_opp[i]:
            continue
        v = 0
        if has_outcome[i]:
            v = sum(int(val) for ts, val in zip(conv_ts[i], conv_value[i]) if int(ts) > int(opp_ts[i]))
        y = min(v, r_bound)
        base = 0 if is_test[i] else 3
        acc[base] += 1
        acc[base + 1] += y
        acc[base + 2] += y * y
    return [a % (1 << WORD) for a in acc]


# -- aggregation -------------------------------------------------------------


@dataclass(frozen=True)
class AggregationLayout:
    segments: int
    k: int
    reveal_aggregates: bool = False  # test mode only

    def __post_init__(self):
        if self.segments < 1:
            raise ValueError("need at least one segment")
        if self.k < 2:
            raise ValueError("noise vectors need k >= 2")

    @property
    def index_bits(self) -> int:
        return max(1, (self.k - 1).bit_length())


def _stats(b: Builder, totals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(64, 6) summed aggregates -> (lift, se) as signed 64-bit fixed point."""
    n = totals[:COUNT_BITS, [0, 3]]  # (32, 2): test, control
    s = totals[:, [1, 4]]
    q = totals[:, [2, 5]]
    mean, _ = G.udiv(b, G.shl(s, FRAC), n)
    lift = G.sub(b, mean[:WORD, 0], mean[:WORD, 1])

    nq = G.mul(b, n, q)  # 96 bits
    ss = G.mul(b, s, s)  # 128 bits
    varnum = G.sub(b, G.zext(nq, 2 * WORD), ss)
    one = G.constant(1, COUNT_BITS, (2,))
    den = G.mul(b, G.mul(b, n, n), G.sub(b, n, one))  # n^2 (n - 1), 96 bits
    quot, _ = G.udiv(b, G.shl(varnum, QFRAC), den)
    qsum = G.add(b, quot[:80, 0], quot[:80, 1], carry_out=True)
    se = G.zext(G.isqrt(b, qsum), WORD)
    return lift, se


def build_aggregation_circuit(layout: AggregationLayout) -> Circuit:
    m, k = layout.segments, layout.k
    b = Builder()
    masked = b.input(EVALUATOR, "masked", (WORD, N_AGG, m))
    masks = b.input(GARBLER, "masks", (WORD, N_AGG, m))
    g_noise = b.input(GARBLER, "g_noise", (WORD, 2, k))
    e_noise = b.input(EVALUATOR, "e_noise", (WORD, 2, k))
    g_index = b.input(GARBLER, "g_index", (layout.index_bits,))
    e_index = b.input(EVALUATOR, "e_index", (layout.index_bits,))

    totals = G.tree_sum(b, b.xor(masked, masks), WORD)  # (64, 6)
    lift, se = _stats(b, totals)
    stat = np.stack([lift, se], axis=1)  # (64, 2)

    # each party's result carries noise chosen by that party from the peer's vector
    g_pick, e_rest = G.select_reveal(b, e_noise, g_index)
    e_pick, g_rest = G.select_reveal(b, g_noise, e_index)
    b.output(GARBLER, "g_dp", G.add(b, stat, g_pick))
    b.output(GARBLER, "g_peer_rest", e_rest)
    b.output(EVALUATOR, "e_dp", G.add(b, stat, e_pick))
    b.output(EVALUATOR, "e_peer_rest", g_rest)
    if layout.reveal_aggregates:
        b.output(GARBLER, "g_stats", stat)
        b.output(EVALUATOR, "e_stats", stat)
        b.output(GARBLER, "g_totals", totals)
        b.output(EVALUATOR, "e_totals", totals)
    return b.build(kind="aggregation", segments=m, k=k)


cached_aggregation_circuit = _locked_cache(build_aggregation_circuit)


def fixed_stats_plain(totals) -> tuple[int, int]:
    """Integer mirror of the aggregation arithmetic: raw (lift, se) at 2^-16."""
    n_t, s_t, q_t, n_c, s_c, q_c = (int(x) for x in totals)
    mask = (1 << WORD) - 1
    lift = (((s_t << FRAC) // n_t) - ((s_c << FRAC) // n_c)) & mask
    qs = 0
    for n, s, q in ((n_t, s_t, q_t), (n_c, s_c, q_c)):
        qs += ((n * q - s * s) << QFRAC) // (n * n * (n - 1))
    se = isqrt(qs)
    return _signed(lift), se


def _signed(x: int, width: int = WORD) -> int:
    return x - (1 << width) if x >> (width - 1) else x


def to_fixed(x: float) -> int:
    return int(round(x * (1 << FRAC)))


def from_fixed(raw: int) -> float:
    return raw / (1 << FRAC)


def encode_noise(values_raw) -> np.ndarray:
    """(2, k) signed fixed-point ints -> (64, 2, k) bits."""
    arr = np.asarray(values_raw, dtype=np.int64).astype(np.uint64)
    return to_bits_u64(arr, WORD)


def encode_index(index: int, layout: AggregationLayout) -> np.ndarray:
    if not 0 <= index < layout.k:
        raise ValueError("noise index out of range")
    return to_bits_u64(np.uint64(index), layout.index_bits)


def decode_signed(bits) -> list:
    return from_bits(bits, signed=True)
