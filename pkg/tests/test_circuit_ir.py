import numpy as np
import pytest

from privlift.circuit import gadgets as G
from privlift.circuit.ir import (
    AND,
    C0,
    C1,
    EVALUATOR,
    GARBLER,
    INV,
    XOR,
    Builder,
    Circuit,
    MissingInput,
    eval_plaintext,
    eval_plaintext_batch,
    from_bits,
    to_bits,
    to_bits_u64,
)

from circuits import random_circuit


def tiny(kind):
    b = Builder()
    x = b.input(GARBLER, "x", ())
    y = b.input(EVALUATOR, "y", ())
    b.output(EVALUATOR, "z", kind(b, x, y))
    return b.build()


@pytest.mark.parametrize("op,table", [
    (lambda b, x, y: b.and_(x, y), [0, 0, 0, 1]),
    (lambda b, x, y: b.xor(x, y), [0, 1, 1, 0]),
    (lambda b, x, y: b.or_(x, y), [0, 1, 1, 1]),
])
def test_truth_tables(op, table):
    c = tiny(op)
    got = [int(eval_plaintext(c, {"x": x, "y": y})["z"]) for x in (0, 1) for y in (0, 1)]
    assert got == table


def test_constant_folding():
    b = Builder()
    x = b.input(GARBLER, "x", 3)
    assert np.array_equal(b.xor(x, C0), x)
    assert np.all(b.and_(x, C0) == C0)
    assert np.array_equal(b.and_(x, C1), x)
    assert b.inv(np.int64(C0)) == C1
    b.output(EVALUATOR, "o", np.array([C0, C1, x[0]]))
    c = b.build()
    assert c.n_gates == 1 and c.kind[0] == INV  # the constant one
    assert eval_plaintext(c, {"x": [0, 0, 1]})["o"].tolist() == [0, 1, 0]


def test_xor_only_has_no_and():
    b = Builder()
    x = b.input(GARBLER, "x", 16)
    y = b.input(EVALUATOR, "y", 16)
    b.output(EVALUATOR, "z", b.xor(b.xor(x, y), y[::-1]))
    assert b.build().and_count == 0


def test_levels_and_validate():
    rng = np.random.default_rng(0)
    for _ in range(20):
        c, _, _ = random_circuit(rng)
        c.validate()
        for s, e in c.levels():
            assert e > s
        assert np.all(np.isin(c.kind, [XOR, AND, INV]))


def test_validate_catches_bad_order():
    c = tiny(lambda b, x, y: b.and_(b.xor(x, y), y))
    bad = Circuit(c.n_wires, c.kind[::-1].copy(), c.in_a[::-1].copy(), c.in_b[::-1].copy(),
                  c.out[::-1].copy(), np.array([0, 1, 2]), c.inputs, c.outputs)
    with pytest.raises(ValueError):
        bad.validate()


def test_output_binding_rules():
    b = Builder()
    x = b.input(GARBLER, "x", 2)
    with pytest.raises(ValueError):
        b.input(GARBLER, "x", 1)
    with pytest.raises(ValueError):
        b.input("carol", "z", 1)
    b.output(GARBLER, "a", x)
    b.output(EVALUATOR, "b", x)  # routed through a copy: one destination per wire
    c = b.build()
    c.validate()
    assert not set(c.output("a").wires.tolist()) & set(c.output("b").wires.tolist())
    out = eval_plaintext(c, {"x": [1, 0]})
    assert out["a"].tolist() == out["b"].tolist() == [1, 0]


def test_missing_input():
    c = tiny(lambda b, x, y: b.and_(x, y))
    with pytest.raises(MissingInput):
        eval_plaintext(c, {"x": 1})


def test_dump_load_roundtrip():
    rng = np.random.default_rng(5)
    for _ in range(10):
        c, ng, ne = random_circuit(rng)
        c2 = Circuit.load(c.dump())
        assert c2.digest() == c.digest()
        inp = {"g": rng.integers(0, 2, ng), "e": rng.integers(0, 2, ne)}
        a, bb = eval_plaintext(c, inp), eval_plaintext(c2, inp)
        assert all(np.array_equal(a[k], bb[k]) for k in a)


def test_batch_evaluator_matches_single():
    b = Builder()
    x = b.input(GARBLER, "x", 8)
    y = b.input(EVALUATOR, "y", 8)
    b.output(EVALUATOR, "s", G.add(b, x, y))
    c = b.build()
    xs, ys = np.arange(10), np.arange(10)[::-1] * 7
    out = eval_plaintext_batch(c, {"x": to_bits(xs, 8), "y": to_bits(ys, 8)}, 10)["s"]
    for i in range(10):
        single = eval_plaintext(c, {"x": to_bits(int(xs[i]), 8), "y": to_bits(int(ys[i]), 8)})["s"]
        assert np.array_equal(out[:, i], single)


def test_bit_helpers():
    assert from_bits(to_bits(200, 8)) == 200
    assert from_bits(to_bits(-3, 8), signed=True) == -3
    assert from_bits(to_bits([1, 2, 3], 4)) == [1, 2, 3]
    v = np.array([0, 1, 2**63 + 5], dtype=np.uint64)
    assert from_bits(to_bits_u64(v, 64)) == [0, 1, 2**63 + 5]
    big = 2**80 + 12345
    assert from_bits(to_bits(big, 81)) == big
