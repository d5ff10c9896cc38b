"""Arithmetic gadgets over wire arrays.

All gadgets take a :class:`~privlift.circuit.ir.Builder` and values shaped
``(width, *batch)`` (bit 0 first).  Widths are checked at build time.  Adders
and comparators use the one-AND-per-bit carry chain
``c' = c ^ ((x ^ c) & (y ^ c))``.
"""

from __future__ import annotations

import numpy as np

from privlift.circuit.ir import C0, C1, Builder, const_word

FRAC_BITS = 16
WORD = 64


def _as(x) -> np.ndarray:
    return np.asarray(x, dtype=np.int64)


def batch_shape(*xs) -> tuple[int, ...]:
    return np.broadcast_shapes(*(_as(x).shape[1:] for x in xs))


def _stack(bits, batch) -> np.ndarray:
    if not bits:
        return np.zeros((0,) + tuple(batch), dtype=np.int64)
    return np.stack([np.broadcast_to(_as(v), batch) for v in bits])


def zext(x, width: int) -> np.ndarray:
    x = _as(x)
    if x.shape[0] >= width:
        return x[:width]
    pad = np.full((width - x.shape[0],) + x.shape[1:], C0, dtype=np.int64)
    return np.concatenate([x, pad])


def sext(x, width: int) -> np.ndarray:
    x = _as(x)
    if x.shape[0] >= width:
        return x[:width]
    pad = np.broadcast_to(x[-1:], (width - x.shape[0],) + x.shape[1:])
    return np.concatenate([x, pad])


def shl(x, k: int, width: int | None = None) -> np.ndarray:
    x = _as(x)
    zeros = np.full((k,) + x.shape[1:], C0, dtype=np.int64)
    out = np.concatenate([zeros, x])
    return out if width is None else zext(out, width)


def constant(value: int, width: int, batch=()) -> np.ndarray:
    return const_word(value, width, tuple(batch))


def _check_widths(x, y) -> None:
    if _as(x).shape[0] != _as(y).shape[0]:
        raise ValueError(f"width mismatch: {_as(x).shape[0]} vs {_as(y).shape[0]}")


def add(b: Builder, x, y, carry_in=C0, carry_out: bool = False) -> np.ndarray:
    """x + y + carry_in modulo 2^w (or with the carry appended)."""
    x, y = _as(x), _as(y)
    _check_widths(x, y)
    w = x.shape[0]
    batch = batch_shape(x, y)
    x = np.broadcast_to(x, (w,) + batch)
    y = np.broadcast_to(y, (w,) + batch)
    p = b.xor(x, y)
    c = np.broadcast_to(_as(carry_in), batch)
    carries = []
    for i in range(w):
        carries.append(c)
        if i == w - 1 and not carry_out:
            break
        c = b.xor(c, b.and_(b.xor(x[i], c), b.xor(y[i], c)))
    s = b.xor(p, _stack(carries, batch))
    if carry_out:
        return np.concatenate([s, c[None]])
    return s


def add_wide(b: Builder, x, y) -> np.ndarray:
    """Unsigned sum of operands of possibly different widths, never overflowing."""
    w = max(_as(x).shape[0], _as(y).shape[0])
    return add(b, zext(x, w), zext(y, w), carry_out=True)


def negate(b: Builder, x) -> np.ndarray:
    x = _as(x)
    return add(b, b.inv(x), np.full_like(x, C0), carry_in=C1)


def sub(b: Builder, x, y) -> np.ndarray:
    """x - y modulo 2^w."""
    _check_widths(x, y)
    return add(b, x, b.inv(y), carry_in=C1)


def sub_flag(b: Builder, x, y) -> tuple[np.ndarray, np.ndarray]:
    """(x - y mod 2^w, [x >= y] unsigned)."""
    _check_widths(x, y)
    r = add(b, x, b.inv(y), carry_in=C1, carry_out=True)
    return r[:-1], r[-1]


def geq(b: Builder, x, y) -> np.ndarray:
    """Unsigned x >= y: the carry out of x + ~y + 1."""
    x, y = _as(x), _as(y)
    _check_widths(x, y)
    ny = b.inv(y)
    batch = batch_shape(x, y)
    c = np.full(batch, C1, dtype=np.int64)
    for i in range(x.shape[0]):
        c = b.xor(c, b.and_(b.xor(x[i], c), b.xor(ny[i], c)))
    return c


def lt(b: Builder, x, y, signed: bool = False) -> np.ndarray:
    """x < y (unsigned unless ``signed``)."""
    if signed:
        x = _as(x).copy()
        y = _as(y).copy()
        x[-1] = b.inv(x[-1])
        y[-1] = b.inv(y[-1])
    return b.inv(geq(b, x, y))


def gt(b: Builder, x, y, signed: bool = False) -> np.ndarray:
    return lt(b, y, x, signed)


def and_reduce(b: Builder, bits) -> np.ndarray:
    bits = _as(bits)
    if bits.shape[0] == 0:
        return np.full(bits.shape[1:], C1, dtype=np.int64)
    while bits.shape[0] > 1:
        if bits.shape[0] % 2:
            bits = np.concatenate([bits, np.full((1,) + bits.shape[1:], C1, dtype=np.int64)])
        bits = b.and_(bits[0::2], bits[1::2])
    return bits[0]


def xor_reduce(b: Builder, bits, axis: int = 0) -> np.ndarray:
    bits = np.moveaxis(_as(bits), axis, 0)
    if bits.shape[0] == 0:
        return np.full(bits.shape[1:], C0, dtype=np.int64)
    while bits.shape[0] > 1:
        if bits.shape[0] % 2:
            bits = np.concatenate([bits, np.full((1,) + bits.shape[1:], C0, dtype=np.int64)])
        bits = b.xor(bits[0::2], bits[1::2])
    return bits[0]


def eq(b: Builder, x, y) -> np.ndarray:
    _check_widths(x, y)
    return and_reduce(b, b.inv(b.xor(x, y)))


def mux(b: Builder, s, a, t) -> np.ndarray:
    """``a`` where s == 1 else ``t`` (s has the batch shape, no bit axis)."""
    _check_widths(a, t)
    s = _as(s)[None]
    return b.xor(t, b.and_(s, b.xor(a, t)))


def mul(b: Builder, x, y, width: int | None = None) -> np.ndarray:
    """Unsigned product, full width ``len(x) + len(y)`` unless truncated."""
    x, y = _as(x), _as(y)
    wx, wy = x.shape[0], y.shape[0]
    width = wx + wy if width is None else width
    batch = batch_shape(x, y)
    acc = np.full((width,) + batch, C0, dtype=np.int64)
    for j in range(min(wy, width)):
        n = min(wx, width - j)
        pp = b.and_(x[:n], y[j][None])
        acc[j:] = add(b, acc[j:], zext(pp, width - j))
    return acc


def udiv(b: Builder, x, d) -> tuple[np.ndarray, np.ndarray]:
    """Restoring long division: (x // d, x % d), unsigned, d > 0 assumed."""
    x, d = _as(x), _as(d)
    wn, wd = x.shape[0], d.shape[0]
    batch = batch_shape(x, d)
    dd = zext(np.broadcast_to(d, (wd,) + batch), wd + 1)
    r = np.full((wd,) + batch, C0, dtype=np.int64)
    q = [None] * wn
    for i in range(wn - 1, -1, -1):
        r_sh = np.concatenate([np.broadcast_to(x[i], batch)[None], r])
        diff, ge = sub_flag(b, r_sh, dd)
        q[i] = ge
        r = mux(b, ge, diff, r_sh)[:wd]
    return _stack(q, batch), r


def div_fixed(b: Builder, num, den, frac: int = FRAC_BITS) -> np.ndarray:
    """Fixed-point quotient (num << frac) / den, truncated toward zero.

    ``num`` is two's complement, ``den`` must be positive.  The dividend is
    widened to ``width + frac`` bits before dividing.
    """
    num, den = _as(num), _as(den)
    _check_widths(num, den)
    w = num.shape[0]
    neg = num[-1]
    mag = mux(b, neg, negate(b, num), num)
    q, _ = udiv(b, shl(mag, frac), den)
    q = q[:w]
    return mux(b, neg, negate(b, q), q)


def isqrt(b: Builder, x) -> np.ndarray:
    """floor(sqrt(x)) for unsigned x, digit-by-digit; result has ceil(w/2) bits."""
    x = _as(x)
    if x.shape[0] % 2:
        x = zext(x, x.shape[0] + 1)
    batch = x.shape[1:]
    half = x.shape[0] // 2
    root = np.zeros((0,) + batch, dtype=np.int64)
    rem = np.zeros((0,) + batch, dtype=np.int64)
    for i in range(half - 1, -1, -1):
        rem = np.concatenate([x[2 * i : 2 * i + 2], rem])
        trial = np.concatenate([constant(1, 2, batch), root])
        w = max(rem.shape[0], trial.shape[0])
        rem, trial = zext(rem, w), zext(trial, w)
        diff, ge = sub_flag(b, rem, trial)
        rem = mux(b, ge, diff, rem)
        root = np.concatenate([ge[None], root])
        # remainder stays below 2 * root + 1
        rem = rem[: root.shape[0] + 1]
    return root


def sqrt_fixed(b: Builder, x, frac: int = FRAC_BITS) -> np.ndarray:
    """floor(sqrt(x)) on fixed-point wires: isqrt(x << frac), same width."""
    x = _as(x)
    return zext(isqrt(b, shl(x, frac)), x.shape[0])


def clamp(b: Builder, x, bound: int, out_width: int | None = None) -> np.ndarray:
    """min(x, bound) for unsigned x and a public constant bound >= 1."""
    x = _as(x)
    if bound < 1:
        raise ValueError("bound must be >= 1")
    w = x.shape[0]
    out_width = w if out_width is None else out_width
    if bound >= 1 << w:
        return zext(x, out_width)
    if bound >= 1 << out_width:
        raise ValueError("output width too small for bound")
    below = lt(b, x, constant(bound, w, x.shape[1:]))
    return mux(b, below, zext(x, out_width), constant(bound, out_width, x.shape[1:]))


def tree_sum(b: Builder, x, max_width: int = WORD) -> np.ndarray:
    """Sum along the last axis with a balanced adder tree.

    Widths grow by one per level up to ``max_width`` (wrap-around beyond).
    """
    x = _as(x)
    n = x.shape[-1]
    if n == 0:
        return np.full(x.shape[:-1], C0, dtype=np.int64)
    while x.shape[-1] > 1:
        if x.shape[-1] % 2:
            pad = np.full(x.shape[:-1] + (1,), C0, dtype=np.int64)
            x = np.concatenate([x, pad], axis=-1)
        grow = x.shape[0] < max_width
        x = add(b, x[..., 0::2], x[..., 1::2], carry_out=grow)
    return x[..., 0]


def select_reveal(b: Builder, words, index) -> tuple[np.ndarray, np.ndarray]:
    """Pick column ``index`` of ``words`` and expose every other column.

    ``words`` is ``(w, ..., k)`` with candidates on the last axis, ``index``
    an unsigned bit vector.  Returns ``(chosen, others)`` where ``others``
    equals ``words`` with column ``index`` zeroed.  An index >= k selects
    nothing (chosen = 0).
    """
    words, index = _as(words), _as(index)
    k = words.shape[-1]
    ib = index.shape[0]
    consts = np.stack([constant(j, ib) for j in range(k)], axis=1)  # (ib, k)
    sel = eq(b, np.broadcast_to(index[:, None], (ib, k)), consts)  # (k,)
    others = b.and_(words, b.inv(sel))
    chosen = b.xor(xor_reduce(b, words, axis=-1), xor_reduce(b, others, axis=-1))
    return chosen, others
