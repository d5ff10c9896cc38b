import json
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from privlift import data as D
from privlift import dp
from privlift.circuit import lift as L
from privlift.errors import CovertCheckFailed, HandshakeError, PreflightError, ProtocolError
from privlift.orchestrator import pipeline as P
from privlift.orchestrator.framing import PipeChannel, decode_frame
from privlift.rand import Prg
from privlift.report import dumps

TOL = 2.0**-12


def dataset(users=300, overlap=0.6, seed=1, k=4, r_bound=10_000):
    pub, adv, _ = D.synthesize(D.SynthSpec(users=users, overlap=overlap, seed=seed, k=k, r_bound=r_bound))
    return pub, adv


def tables(pub, adv, k=4):
    return D.PublisherTable.from_rows(pub), D.AdvertiserTable.from_rows(adv, k)


def oracle(pub, adv, params):
    return dp.compute_lift_oracle(
        [(r.id, r.opportunity_ts, r.test_flag) for r in pub], [(r.id, r.conv_ts, r.conv_value) for r in adv],
        params, noise=(0.0, 0.0),
    )


def run(pub, adv, hooks=None, **cfg):
    base = P.PipelineConfig(role="publisher", **cfg)
    pc, ac = P.pair_configs(base)
    pt, at = tables(pub, adv, base.max_conversions)
    return P.run_local(pc, ac, pt, at, hooks)


def test_partition_round_robin():
    parts = P.partition_round_robin(10, 3)
    assert [p.size for p in parts] == [4, 3, 3]
    assert 7 in parts[1]
    assert sorted(np.concatenate(parts).tolist()) == list(range(10))
    assert P.partition_round_robin(5, 1)[0].tolist() == [0, 1, 2, 3, 4]


def test_plan_shards_uses_one_segment_size():
    plan = P.plan_shards(2500, 2, 1000)
    assert plan.segments == (2, 2) and plan.segment_rows == 625
    got = np.concatenate([np.concatenate(plan.segment_slices(s)) for s in range(2)])
    assert sorted(got.tolist()) == list(range(2500))
    empty = P.plan_shards(2, 4, 1000)
    assert empty.total_segments == 4 and empty.segment_slices(3)[0].size == 0


def test_zero_noise_matches_oracle_s4():
    pub, adv = dataset(users=1000)
    rp, ra = run(pub, adv, shards=4, zero_noise=True, seed=3)
    want = oracle(pub, adv, dp.DPParams(10_000, 0.1, 0.1))
    for rep in (rp, ra):
        assert abs(rep["dp_lift"] - want.lift) <= TOL and abs(rep["dp_se"] - want.se) <= TOL
        assert tuple(rep["test_aggregates"][k] for k in L.AGG_NAMES) == want.aggregates
        assert rep["watermark"] and rep["noise_check"] == "pass"
    assert rp["dp_lift"] == ra["dp_lift"]


def test_shard_invariance_and_empty_shards():
    pub, adv = dataset(users=60, seed=5)
    a, _ = run(pub, adv, shards=1, zero_noise=True, seed=1)
    b, _ = run(pub, adv, shards=7, zero_noise=True, seed=1, segment_rows=4)
    assert a["test_aggregates"] == b["test_aggregates"]
    assert b["run"]["segments"] > 7
    tiny_pub = [D.PublisherRow(f"u{i}", 100, i % 2) for i in range(4)]
    tiny_adv = [D.AdvertiserRow("u0", 200, 9), D.AdvertiserRow("u1", 200, 4)]
    r, _ = run(tiny_pub, tiny_adv, shards=6, zero_noise=True, seed=2)
    assert [r["test_aggregates"][k] for k in L.AGG_NAMES] == [2, 4, 16, 2, 9, 81]


def test_seeded_runs_are_byte_identical():
    pub, adv = dataset(users=120, seed=8)
    first = run(pub, adv, shards=2, seed=42)
    second = run(pub, adv, shards=2, seed=42)
    assert [dumps(r) for r in first] == [dumps(r) for r in second]
    rp, ra = first
    assert rp["noise_check"] == ra["noise_check"] == "pass"
    assert "advertiser" in rp["noise_provenance"] and "publisher" in ra["noise_provenance"]
    # each side's output carries the other side's noise, so they differ
    assert rp["dp_lift"] != ra["dp_lift"]
    assert "durations" not in rp["run"]


def test_production_report_has_no_aggregates_or_ids():
    pub, adv = dataset(users=100, seed=9)
    rp, ra = run(pub, adv)
    for rep in (rp, ra):
        assert rep["test_mode"] is False and "test_aggregates" not in rep and "watermark" not in rep
        text = dumps(rep)
        assert not any(r.id in text for r in pub)
        assert "durations" in rep["run"]


def test_masks_are_uniform():
    # per-segment masks are derived exactly as a worker derives them
    counts = np.zeros((L.N_AGG, 64))
    runs = 1000
    for i in range(runs):
        rng = Prg.from_seed(f"{i}/publisher").fork("workers").fork("worker-0").fork("shard-0/segment-0")
        w = rng.words(L.N_AGG)
        counts += (w[:, None] >> np.arange(64, dtype=np.uint64)) & np.uint64(1)
    chi2 = float((((counts - runs / 2) ** 2) / (runs / 4)).sum())
    assert stats.chi2.sf(chi2, counts.size) > 1e-4


def test_adversarial_noise_aborts():
    pub, adv = dataset(users=120, seed=10)

    def constant(role, s1, s2, k):
        return np.stack([dp.quantize(np.full(k, 100 * s1)), dp.quantize(np.full(k, 100 * s2))])

    with pytest.raises(CovertCheckFailed):
        run(pub, adv, hooks={"advertiser": constant}, seed=5)
    with pytest.raises(CovertCheckFailed):
        run(pub, adv, hooks={"publisher": constant}, seed=6)


def test_handshake_rejects_mismatch():
    pub, adv = dataset(users=50)
    pt, at = tables(pub, adv)
    base = P.PipelineConfig(role="publisher")
    with pytest.raises(HandshakeError):
        P.run_local(base, replace(base, role="advertiser", shards=2), pt, at)
    with pytest.raises(HandshakeError):
        P.run_local(base, base, pt, pt)


def test_preflight_aborts():
    pub, adv = dataset(users=50)
    with pytest.raises(PreflightError):
        run(pub, [])
    one_test = [D.PublisherRow("a", 5, 1), D.PublisherRow("b", 5, 0), D.PublisherRow("c", 5, 0)]
    with pytest.raises(PreflightError):
        run(one_test, adv)


def test_match_only(tmp_path):
    pub, adv = dataset(users=40)
    pt, at = tables(pub, adv)
    base = P.PipelineConfig(role="publisher", seed=1)
    pc = replace(base, spine_out=str(tmp_path / "sp"), mapping_out=str(tmp_path / "mp"))
    ac = replace(base, role="advertiser", spine_out=str(tmp_path / "sa"), mapping_out=str(tmp_path / "ma"))
    from concurrent.futures import ThreadPoolExecutor

    hub = P.LocalHub()
    with ThreadPoolExecutor(2) as ex:
        fa = ex.submit(P.run_match, pc, hub.transport("publisher"), pt)
        fb = ex.submit(P.run_match, ac, hub.transport("advertiser"), at)
        (spine, mp), _ = fa.result(), fb.result()
    assert (tmp_path / "sp").read_bytes() == (tmp_path / "sa").read_bytes()
    assert D.read_spine(tmp_path / "sp") == spine == sorted(spine)
    assert D.read_mapping(tmp_path / "mp") == mp and len(mp) == len(pub)
    assert len(spine) == len({r.id for r in pub} | {r.id for r in adv})


def test_no_intermediate_reveal(monkeypatch, tmp_path):
    """Record every frame; no per-segment aggregate may appear in clear."""
    frames = []
    orig = PipeChannel._put

    def record(self, frame):
        frames.append(frame)
        orig(self, frame)

    monkeypatch.setattr(PipeChannel, "_put", record)
    pub, adv = dataset(users=200, seed=12)
    pt, at = tables(pub, adv)
    base = P.PipelineConfig(role="publisher", shards=2, segment_rows=40)
    pc = replace(base, spine_out=str(tmp_path / "s"), mapping_out=str(tmp_path / "mp"))
    ac = replace(base, role="advertiser", mapping_out=str(tmp_path / "ma"))
    P.run_local(pc, ac, pt, at)

    spine = D.read_spine(tmp_path / "s")
    lp = P.align_publisher(pt, spine, D.read_mapping(tmp_path / "mp"))
    la = P.align_advertiser(at, spine, D.read_mapping(tmp_path / "ma"))
    plan = P.plan_shards(len(spine), base.shards, base.segment_rows)
    secrets = set()
    for s in range(plan.shards):
        for rows in plan.segment_slices(s):
            agg = L.shard_aggregates_plain(lp.opp_ts[rows], lp.is_test[rows], lp.has_opp[rows], la.conv_ts[rows],
                                           la.conv_value[rows], la.has_outcome[rows], base.r_bound)
            secrets.update(v for i, v in enumerate(agg) if i not in (0, 3) and v > 255)
    assert len(secrets) > 5
    blob = b"".join(decode_frame(f)[1] for f in frames)
    for v in secrets:
        for enc in (v.to_bytes(8, "little"), v.to_bytes(8, "big")):
            assert enc not in blob, v
    # the JSON control messages carry only the publisher-known counts and statuses
    for f in frames:
        _, payload = decode_frame(f)
        if payload[:1] == b"{":
            msg = json.loads(payload)
            assert set(msg) <= {"role", "config", "n_t", "n_c", "has_outcomes", "noise_check", "shard", "segments", "status"}
            assert not secrets & {v for v in msg.values() if isinstance(v, int)}


def test_config_roundtrip_and_validation(tmp_path):
    cfg = P.PipelineConfig.from_dict({"role": "advertiser", "shards": 3, "dp": {"r": 50, "rho1": 0.2}})
    assert cfg.r_bound == 50 and cfg.rho1 == 0.2 and cfg.shards == 3
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert P.PipelineConfig.from_json(p) == cfg
    with pytest.raises(ValueError):
        P.PipelineConfig.from_dict({"role": "advertiser", "bogus": 1})
    with pytest.raises(ValueError):
        P.PipelineConfig(role="carol")
    a = P.PipelineConfig(role="publisher", input="x.csv", port=1)
    b = P.PipelineConfig(role="advertiser", input="y.csv", port=2)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != replace(a, k=32).config_hash()


def test_protocol_errors_have_distinct_exit_codes():
    import privlift.errors as E

    codes = [c.exit_code for c in vars(E).values() if isinstance(c, type) and issubclass(c, ProtocolError)]
    assert len(codes) == len(set(codes)) and min(codes) >= 10
