import csv
import json
import subprocess
import sys

import pytest

from privlift import data as D
from privlift.circuit.ir import Circuit
from privlift.cli import main


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--users", "300", "--overlap", "0.6", "--seed", "4", "--out-dir", str(out)]) == 0
    return out


def oracle(pub, adv, tmp_path, *extra):
    out = tmp_path / "oracle.json"
    code = main(["oracle", "--publisher", str(pub), "--advertiser", str(adv), "--zero-noise", "--out", str(out), *extra])
    return code, (json.loads(out.read_text()) if code == 0 else None)


def test_synth_outputs(synth):
    truth = json.loads((synth / "truth.json").read_text())
    assert truth["intersection"] == 180
    assert len(D.read_publisher(synth / "publisher.csv")) == truth["publisher_users"]
    header = (synth / "advertiser.csv").read_text().splitlines()[0]
    assert header.startswith("id,conv_ts,conv_value")


def test_oracle_is_watermarked(synth, tmp_path):
    code, rep = oracle(synth / "publisher.csv", synth / "advertiser.csv", tmp_path)
    assert code == 0 and rep["role"] == "oracle" and rep["test_mode"] and rep["noise_check"] == "skipped"
    assert rep["dp_lift"] == rep["test_aggregates"]["lift"]


def test_oracle_worked_example(tmp_path):
    pub = tmp_path / "p.csv"
    adv = tmp_path / "a.csv"
    D.write_publisher(pub, [D.PublisherRow("A", 10, 1), D.PublisherRow("B", 10, 1),
                            D.PublisherRow("C", 10, 0), D.PublisherRow("D", 10, 0)])
    D.write_advertiser(adv, [D.AdvertiserRow("A", 5, 7), D.AdvertiserRow("A", 11, 4), D.AdvertiserRow("B", 12, 3),
                             D.AdvertiserRow("C", 20, 2), D.AdvertiserRow("E", 20, 50)])
    code, rep = oracle(pub, adv, tmp_path, "--r-bound", "100")
    assert code == 0
    # test outcomes 4, 3; control 2, 0
    assert rep["dp_lift"] == pytest.approx(2.5)
    D.write_advertiser(adv, [])
    code, rep = oracle(pub, adv, tmp_path)
    assert code == 0 and rep["dp_lift"] == 0.0 and rep["dp_se"] == 0.0


def test_exit_codes(synth, tmp_path):
    pub, adv = str(synth / "publisher.csv"), str(synth / "advertiser.csv")
    assert main(["oracle", "--publisher", str(tmp_path / "nope.csv"), "--advertiser", adv]) == 4
    bad = tmp_path / "bad.csv"
    bad.write_text("id,opportunity_ts,test_flag\nx,-3,1\n")
    assert main(["oracle", "--publisher", str(bad), "--advertiser", adv]) == 3
    one = tmp_path / "one.csv"
    D.write_publisher(one, [D.PublisherRow("a", 1, 1), D.PublisherRow("b", 1, 0), D.PublisherRow("c", 1, 0)])
    assert main(["oracle", "--publisher", str(one), "--advertiser", adv]) == 19
    assert main(["run", "--input", pub, "--port", "1"]) == 3  # no role
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert main(["run", "--config", str(cfg), "--role", "publisher"]) == 3
    with pytest.raises(SystemExit) as e:
        main(["run", "--role", "carol"])
    assert e.value.code == 2


def test_circuit_dump_loads(tmp_path):
    out = tmp_path / "lift.txt"
    assert main(["circuit", "--rows", "3", "--max-conversions", "2", "--out", str(out)]) == 0
    c = Circuit.load(out.read_text())
    assert c.and_count > 0 and c.dump() == out.read_text()


def test_bench_csv(synth, tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--publisher", str(synth / "publisher.csv"), "--advertiser", str(synth / "advertiser.csv"),
                 "--sweep", "1,2", "--k", "8", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [int(r["shards"]) for r in rows] == [1, 2]
    assert all(float(r["compute_s"]) > 0 and int(r["spine_rows"]) == 300 for r in rows)


def test_two_processes_over_tcp(synth, tmp_path, free_port):
    _, want = oracle(synth / "publisher.csv", synth / "advertiser.csv", tmp_path)
    procs = []
    for role, csv_name in (("advertiser", "advertiser.csv"), ("publisher", "publisher.csv")):
        cmd = [sys.executable, "-m", "privlift", "run", "--role", role, "--input", str(synth / csv_name),
               "--port", str(free_port), "--shards", "2", "--seed", "7", "--zero-noise",
               "--out", str(tmp_path / f"{role}.json"), "--mapping-out", str(tmp_path / f"{role}.map")]
        procs.append(subprocess.Popen(cmd, stderr=subprocess.PIPE, text=True))
    for p in procs:
        _, err = p.communicate(timeout=600)
        assert p.returncode == 0, err
    for role in ("publisher", "advertiser"):
        rep = json.loads((tmp_path / f"{role}.json").read_text())
        assert rep["role"] == role
        ints = ("n_t", "sum_t", "sumsq_t", "n_c", "sum_c", "sumsq_c")
        assert [rep["test_aggregates"][k] for k in ints] == [want["test_aggregates"][k] for k in ints]
        assert abs(rep["dp_lift"] - want["dp_lift"]) <= 2**-12


def test_tcp_handshake_mismatch_exit_code(synth, tmp_path, free_port):
    procs = []
    for role, shards in (("advertiser", "1"), ("publisher", "2")):
        cmd = [sys.executable, "-m", "privlift", "run", "--role", role, "--input", str(synth / f"{role}.csv"),
               "--port", str(free_port), "--shards", shards, "--seed", "1", "--connect-timeout", "30"]
        procs.append(subprocess.Popen(cmd, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, text=True))
    codes = [p.wait(timeout=120) for p in procs]
    assert 14 in codes and all(c in (13, 14) for c in codes)


def test_true_lift_recovered():
    pub, adv, truth = D.synthesize(D.SynthSpec(users=200_000, overlap=1.0, true_lift=1.0, seed=11))
    from privlift import dp

    est = dp.compute_lift_oracle([(r.id, r.opportunity_ts, r.test_flag) for r in pub],
                                 [(r.id, r.conv_ts, r.conv_value) for r in adv],
                                 dp.DPParams(10_000, 0.1, 0.1), noise=(0.0, 0.0))
    assert min(est.n_t, est.n_c) > 95_000
    assert abs(est.lift - truth["true_lift"]) <= 3 * est.se
