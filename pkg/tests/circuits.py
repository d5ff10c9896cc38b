"""Random circuit corpus shared by the 2PC tests and the acceptance suite."""

import numpy as np

from privlift.circuit.ir import EVALUATOR, GARBLER, Builder


def random_circuit(rng: np.random.Generator, max_gates: int = 64, max_inputs: int = 16):
    b = Builder()
    n_in = int(rng.integers(2, max_inputs + 1))
    n_g = int(rng.integers(1, n_in))
    wires = list(b.input(GARBLER, "g", n_g)) + list(b.input(EVALUATOR, "e", n_in - n_g))
    ops = (b.xor, b.and_)
    for _ in range(int(rng.integers(1, max_gates + 1))):
        kind = int(rng.integers(0, 3))
        a = wires[int(rng.integers(len(wires)))]
        if kind == 2:
            wires.append(b.inv(np.int64(a)))
            continue
        c = wires[int(rng.integers(len(wires)))]
        wires.append(ops[kind](np.int64(a), np.int64(c)))
    pool = [int(w) for w in wires[n_in:]] or [int(wires[0])]
    picks = rng.permutation(len(pool))[: int(rng.integers(1, min(len(pool), 12) + 1))]
    chosen = [pool[i] for i in picks]
    uniq = list(dict.fromkeys(chosen))
    split = int(rng.integers(0, len(uniq) + 1))
    if split:
        b.output(GARBLER, "out_g", np.array(uniq[:split]))
    if split < len(uniq):
        b.output(EVALUATOR, "out_e", np.array(uniq[split:]))
    return b.build(), n_g, n_in - n_g
