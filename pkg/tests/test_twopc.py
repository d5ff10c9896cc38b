import numpy as np
import pytest

from privlift.circuit import gadgets as G
from privlift.circuit import lift as L
from privlift.circuit.ir import EVALUATOR, GARBLER, Builder, eval_plaintext, to_bits
from privlift.errors import BindingMismatch, DecodeError
from privlift.rand import Prg
from privlift.twopc import run_2pc
from privlift.twopc.garble import Evaluator, Garbler, colour

from circuits import random_circuit
from conftest import run_pair


def joint(c, g_in, e_in, seed=0):
    return run_pair(
        lambda ch: run_2pc(ch, GARBLER, c, g_in, Prg.from_seed(f"g{seed}")),
        lambda ch: run_2pc(ch, EVALUATOR, c, e_in, Prg.from_seed(f"e{seed}")),
    )


def local_garble(c, inputs, seed=1):
    """Garble and evaluate in one process; returns (garbler, evaluator)."""
    g = Garbler(c, Prg.from_seed(seed), bytes(16))
    tables = list(g.tables())
    ev = Evaluator(c, bytes(16))
    for b in c.inputs:
        bits = np.zeros(b.size, np.uint8) if b.name == "_const_zero" else np.broadcast_to(inputs[b.name], b.shape).ravel()
        ev.set_labels(b.wires.ravel(), g.encode(b.wires.ravel(), bits))
    flat = np.concatenate(tables) if tables else np.zeros((0, 4, 2), np.uint64)
    pos = [0]

    def read(n):
        out = flat[pos[0] : pos[0] + n]
        pos[0] += n
        return out

    ev.evaluate(read)
    return g, ev, flat


def test_xor_only_circuit_has_no_tables():
    b = Builder()
    x = b.input(GARBLER, "x", 8)
    y = b.input(EVALUATOR, "y", 8)
    b.output(EVALUATOR, "z", b.xor(x, b.inv(y)))
    c = b.build()
    _, _, flat = local_garble(c, {"x": to_bits(3, 8), "y": to_bits(5, 8)})
    assert flat.shape[0] == 0
    go, eo = joint(c, {"x": to_bits(3, 8)}, {"y": to_bits(5, 8)})
    assert go == {} and eo["z"].tolist() == to_bits(3 ^ (~5 & 255), 8).tolist()


def test_single_and_gate_all_label_pairs():
    b = Builder()
    x = b.input(GARBLER, "x", ())
    y = b.input(EVALUATOR, "y", ())
    b.output(EVALUATOR, "z", b.and_(x, y))
    c = b.build()
    g = Garbler(c, Prg.from_seed(9), bytes(16))
    (table,) = list(g.tables())
    assert table.shape == (1, 4, 2)
    out = c.output("z").wires.ravel()
    info = g.decode_info(out)
    for xv in (0, 1):
        for yv in (0, 1):
            ev = Evaluator(c, bytes(16))
            ev.set_labels(np.array([int(x)]), g.encode(np.array([int(x)]), [xv]))
            ev.set_labels(np.array([int(y)]), g.encode(np.array([int(y)]), [yv]))
            ev.evaluate(lambda n: table)
            assert ev.decode(out, info).tolist() == [xv & yv]


def test_free_xor_invariant_on_every_wire():
    rng = np.random.default_rng(11)
    c, ng, ne = random_circuit(rng)
    g, _, _ = local_garble(c, {"g": rng.integers(0, 2, ng), "e": rng.integers(0, 2, ne)})
    assert g.delta[0] & 1 == 1
    l0, l1 = g.label_pairs(np.arange(c.n_wires))
    assert np.all((l0 ^ l1) == g.delta[None, :])
    assert np.all(colour(l0) != colour(l1))


def test_decode_rejects_foreign_labels():
    b = Builder()
    x = b.input(GARBLER, "x", 4)
    y = b.input(EVALUATOR, "y", 4)
    b.output(EVALUATOR, "z", G.add(b, x, y))
    c = b.build()
    g, ev, _ = local_garble(c, {"x": to_bits(2, 4), "y": to_bits(9, 4)})
    out = c.output("z").wires.ravel()
    assert ev.decode(out, g.decode_info(out)).tolist() == to_bits(11, 4).tolist()
    # a decode map for other wires does not open these labels
    with pytest.raises(DecodeError):
        ev.decode(out, g.decode_info(c.input("x").wires.ravel()))
    with pytest.raises(DecodeError):
        g.decode_labels(out, Prg.from_seed(1).labels(out.size))


def test_random_circuits_match_plaintext():
    rng = np.random.default_rng(2024)
    for trial in range(30):
        c, ng, ne = random_circuit(rng)
        gi, ei = {"g": rng.integers(0, 2, ng)}, {"e": rng.integers(0, 2, ne)}
        want = eval_plaintext(c, {**gi, **ei})
        go, eo = joint(c, gi, ei, trial)
        assert set(go) == {b.name for b in c.outputs_of(GARBLER)}
        assert set(eo) == {b.name for b in c.outputs_of(EVALUATOR)}
        for k, v in {**go, **eo}.items():
            assert np.array_equal(v, want[k]), (trial, k)


def test_and_gate_one_one_output_to_evaluator_only():
    b = Builder()
    x = b.input(GARBLER, "x", ())
    y = b.input(EVALUATOR, "y", ())
    b.output(EVALUATOR, "z", b.and_(x, y))
    go, eo = joint(b.build(), {"x": 1}, {"y": 1})
    assert go == {} and int(eo["z"]) == 1


def test_garbler_only_output():
    b = Builder()
    x = b.input(GARBLER, "x", 8)
    y = b.input(EVALUATOR, "y", 8)
    b.output(GARBLER, "lt", G.lt(b, x, y)[None])
    go, eo = joint(b.build(), {"x": to_bits(3, 8)}, {"y": to_bits(200, 8)})
    assert eo == {} and go["lt"].tolist() == [1]


def test_mismatched_circuits_abort():
    def circ(w):
        b = Builder()
        x = b.input(GARBLER, "x", w)
        y = b.input(EVALUATOR, "y", w)
        b.output(EVALUATOR, "z", b.and_(x, y))
        return b.build()

    with pytest.raises(BindingMismatch):
        run_pair(
            lambda ch: run_2pc(ch, GARBLER, circ(4), {"x": to_bits(1, 4)}, Prg.from_seed(1)),
            lambda ch: run_2pc(ch, EVALUATOR, circ(5), {"y": to_bits(1, 5)}, Prg.from_seed(2)),
        )


def test_lift_shard_four_rows_masked_outputs():
    lay = L.LiftShardLayout(4, 2, 100)
    c = L.build_lift_shard_circuit(lay)
    masks = Prg.from_seed("m").words(L.N_AGG)
    opp, flag, has_opp = [10, 10, 50, 7], [1, 0, 1, 1], [1, 1, 1, 0]
    cts = np.array([[20, 5], [11, 0], [60, 70], [9, 9]])
    cvs = np.array([[7, 3], [90, 0], [60, 70], [5, 5]])
    hout = [1, 1, 1, 1]
    g_in = L.encode_garbler_rows(lay, opp, flag, has_opp, masks)
    e_in = L.encode_evaluator_rows(lay, cts, cvs, hout)
    _, eo = joint(c, g_in, e_in)
    got = L.words_from_bits(eo["masked"]) ^ masks
    want = L.shard_aggregates_plain(opp, flag, has_opp, cts, cvs, hout, 100)
    assert [int(v) for v in got] == want == [2, 107, 7 * 7 + 100 * 100, 1, 90, 8100]
