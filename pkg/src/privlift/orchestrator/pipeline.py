"""End-to-end protocol run for one party.

Stages: HELLO handshake, Private-ID matching, spine alignment, pre-flight
group-size check, sharded lift circuits (one worker thread per shard, each
with its own channel), the aggregation circuit with cut-and-choose noise,
and the report.  The publisher garbles, the advertiser evaluates.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from privlift import data as D
from privlift import dp
from privlift.circuit import lift as L
from privlift.circuit.ir import EVALUATOR, GARBLER, to_bits_u64
from privlift.errors import (
    ChannelError,
    CovertCheckFailed,
    HandshakeError,
    PeerAbort,
    PreflightError,
    ProtocolError,
    ShardFailure,
)
from privlift.orchestrator.framing import Channel, MsgType
from privlift.orchestrator.transport import ROLES, LocalHub
from privlift.private_id import align_to_spine, run_private_id
from privlift.rand import Prg
from privlift.report import build_report
from privlift.twopc import run_2pc

log = logging.getLogger(__name__)

PROTOCOL = "privlift/1"
DEFAULT_SEGMENT_ROWS = 1024
DEFAULT_PORT = 7700

# noise override for adversarial tests: (role, sigma1, sigma2, k) -> (2, k) raw ints
NoiseHook = Callable[[str, float, float, int], np.ndarray]


@dataclass
class PipelineConfig:
    role: str
    input: str | None = None
    shards: int = 1
    k: int = dp.DEFAULT_K
    max_conversions: int = D.DEFAULT_K
    r_bound: int = 10_000
    rho1: float = 0.1
    rho2: float = 0.1
    alpha: float = 0.05
    segment_rows: int = DEFAULT_SEGMENT_ROWS
    ks_significance: float = dp.KS_SIGNIFICANCE
    seed: int | None = None
    zero_noise: bool = False
    peer: str = "127.0.0.1"
    listen: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    connect_timeout: float = 120.0
    spine_out: str | None = None
    mapping_out: str | None = None
    out: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        if self.shards < 1:
            raise ValueError("shards must be >= 1")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.segment_rows < 1:
            raise ValueError("segment_rows must be >= 1")
        self.params  # validates the DP parameters

    @property
    def params(self) -> dp.DPParams:
        return dp.DPParams(self.r_bound, self.rho1, self.rho2, self.alpha)

    @property
    def test_mode(self) -> bool:
        return self.seed is not None or self.zero_noise

    def shared(self) -> dict:
        """Fields both parties must agree on."""
        return {
            "protocol": PROTOCOL,
            "shards": self.shards,
            "k": self.k,
            "max_conversions": self.max_conversions,
            "dp": {"r": self.r_bound, "rho1": self.rho1, "rho2": self.rho2, "alpha": self.alpha},
            "segment_rows": self.segment_rows,
            "ks_significance": self.ks_significance,
            "zero_noise": self.zero_noise,
            "test_mode": self.test_mode,
        }

    def config_hash(self) -> bytes:
        return hashlib.sha256(json.dumps(self.shared(), sort_keys=True).encode()).digest()

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        d = dict(d)
        dpd = d.pop("dp", None) or {}
        for src, dst in (("r", "r_bound"), ("rho1", "rho1"), ("rho2", "rho2"), ("alpha", "alpha")):
            if src in dpd:
                d[dst] = dpd[src]
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> PipelineConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


def session_rng(cfg: PipelineConfig) -> Prg:
    if cfg.seed is None:
        return Prg()
    return Prg.from_seed(f"{cfg.seed}/{cfg.role}")


# -- stages ----------------------------------------------------------------------


def handshake(ch: Channel, cfg: PipelineConfig) -> None:
    mine = json.dumps({"role": cfg.role, "config": cfg.config_hash().hex()}).encode()
    ch.send(MsgType.HELLO, mine)
    try:
        peer = json.loads(ch.recv(MsgType.HELLO))
    except ValueError as exc:
        ch.abort("malformed HELLO")
        raise HandshakeError("malformed HELLO") from exc
    if peer.get("role") == cfg.role or peer.get("role") not in ROLES:
        ch.abort("both parties claim the same role")
        raise HandshakeError(f"peer role {peer.get('role')!r} does not complement {cfg.role!r}")
    if peer.get("config") != cfg.config_hash().hex():
        ch.abort("config hash mismatch")
        raise HandshakeError("peer configuration differs (config hash mismatch)")


@dataclass
class AlignedPublisher:
    opp_ts: np.ndarray
    is_test: np.ndarray
    has_opp: np.ndarray


@dataclass
class AlignedAdvertiser:
    conv_ts: np.ndarray  # (n, K)
    conv_value: np.ndarray
    has_outcome: np.ndarray


def _positions(spine, mapping, n_local) -> np.ndarray:
    """For every spine slot, the local row index or -1."""
    rows = align_to_spine(spine, mapping, list(range(n_local)), -1)
    return np.array([r if present else -1 for present, r in rows], dtype=np.int64)


def align_publisher(table: D.PublisherTable, spine, mapping) -> AlignedPublisher:
    pos = _positions(spine, mapping, len(table.ids))
    present = pos >= 0
    idx = np.where(present, pos, 0)
    return AlignedPublisher(
        np.where(present, table.opp_ts[idx] if len(table.ids) else 0, 0).astype(np.uint64),
        np.where(present, table.test_flag[idx] if len(table.ids) else 0, 0).astype(np.uint8),
        present.astype(np.uint8),
    )


def align_advertiser(table: D.AdvertiserTable, spine, mapping) -> AlignedAdvertiser:
    pos = _positions(spine, mapping, len(table.ids))
    present = pos >= 0
    n, k = len(spine), table.k
    ts = np.zeros((n, k), dtype=np.uint64)
    val = np.zeros((n, k), dtype=np.uint64)
    if present.any():
        ts[present] = table.conv_ts[pos[present]]
        val[present] = table.conv_value[pos[present]]
    return AlignedAdvertiser(ts, val, present.astype(np.uint8))


def preflight(ch: Channel, cfg: PipelineConfig, local) -> tuple[int, int]:
    """Publisher announces (n_T, n_C); the advertiser confirms it holds outcomes.

    Both sides apply the same checks and fail together.
    """
    problems = []
    if cfg.role == "publisher":
        n_t = int(np.sum(local.has_opp & local.is_test))
        n_c = int(np.sum(local.has_opp & (1 - local.is_test)))
        ch.send(MsgType.AGG_PREFLIGHT, json.dumps({"n_t": n_t, "n_c": n_c}).encode())
        status = json.loads(ch.recv(MsgType.AGG_STATUS))
        if not status.get("has_outcomes"):
            problems.append("advertiser holds no outcome rows")
    else:
        counts = json.loads(ch.recv(MsgType.AGG_PREFLIGHT))
        n_t, n_c = int(counts["n_t"]), int(counts["n_c"])
        has_outcomes = bool(np.any(local.has_outcome))
        ch.send(MsgType.AGG_STATUS, json.dumps({"has_outcomes": has_outcomes}).encode())
        if not has_outcomes:
            problems.append("advertiser holds no outcome rows")
    r = cfg.r_bound
    if n_t < 2 or n_c < 2:
        problems.append(f"each arm needs at least 2 users (n_t={n_t}, n_c={n_c})")
    if max(n_t, n_c) >= 1 << L.COUNT_BITS:
        problems.append("group size exceeds 2^32")
    if max(n_t, n_c) * min(r, L.MAX_VALUE * cfg.max_conversions) ** 2 >= 1 << L.WORD:
        problems.append("sum of squared outcomes could overflow 64 bits; lower R")
    if problems:
        raise PreflightError("; ".join(problems))
    return n_t, n_c


# -- sharding --------------------------------------------------------------------


def partition_round_robin(n_rows: int, shards: int) -> list[np.ndarray]:
    """Row indices of each shard: shard s holds rows i with i mod S = s, in order."""
    if shards < 1:
        raise ValueError("shards must be >= 1")
    return [np.arange(s, n_rows, shards, dtype=np.int64) for s in range(shards)]


@dataclass(frozen=True)
class ShardPlan:
    shards: int
    segment_rows: int
    segments: tuple[int, ...]  # per shard
    parts: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def total_segments(self) -> int:
        return sum(self.segments)

    def segment_slices(self, shard: int) -> list[np.ndarray]:
        rows = self.parts[shard]
        m = self.segments[shard]
        return [rows[j * self.segment_rows : (j + 1) * self.segment_rows] for j in range(m)]


def plan_shards(n_rows: int, shards: int, max_segment_rows: int) -> ShardPlan:
    """Split each shard into segments that all share one circuit size."""
    parts = partition_round_robin(n_rows, shards)
    segs = [max(1, -(-p.size // max_segment_rows)) for p in parts]
    rows = max(1, max(-(-p.size // m) for p, m in zip(parts, segs)))
    return ShardPlan(shards, rows, tuple(segs), tuple(parts))


def run_worker(
    role: str, ch: Channel, shard: int, plan: ShardPlan, local, layout: L.LiftShardLayout, rng: Prg
) -> list[np.ndarray]:
    """Execute every segment of one shard; returns this party's halves.

    Publisher halves are its masks, advertiser halves the masked words.
    Single attempt: any failure aborts the shard and therefore the run.
    """
    circuit = L.cached_lift_circuit(layout)
    halves = []
    try:
        for j, rows in enumerate(plan.segment_slices(shard)):
            seg_rng = rng.fork(f"shard-{shard}/segment-{j}")
            if role == "publisher":
                masks = seg_rng.words(L.N_AGG)
                inputs = L.encode_garbler_rows(layout, local.opp_ts[rows], local.is_test[rows], local.has_opp[rows], masks)
                run_2pc(ch, GARBLER, circuit, inputs, seg_rng)
                halves.append(masks)
            else:
                inputs = L.encode_evaluator_rows(
                    layout, local.conv_ts[rows], local.conv_value[rows], local.has_outcome[rows]
                )
                out = run_2pc(ch, EVALUATOR, circuit, inputs, seg_rng)
                halves.append(L.words_from_bits(out["masked"]))
        note = json.dumps({"shard": shard, "segments": len(halves)}).encode()
        ch.send(MsgType.SHARE_NOTIFY, note)
        if ch.recv(MsgType.SHARE_NOTIFY) != note:
            raise ProtocolError("peer worker reports a different segment count")
    except ProtocolError as exc:
        ch.abort(f"shard {shard} failed")
        raise ShardFailure(shard, exc) from exc
    except Exception as exc:
        ch.abort(f"shard {shard} failed")
        raise ShardFailure(shard, exc) from exc
    return halves


def run_workers(role: str, transport, plan: ShardPlan, local, layout: L.LiftShardLayout, rng: Prg) -> np.ndarray:
    """All shards concurrently; returns (6, M) words in shard-then-segment order."""

    def job(s: int):
        return run_worker(role, transport.channel(f"worker-{s}"), s, plan, local, layout, rng.fork(f"worker-{s}"))

    with ThreadPoolExecutor(max_workers=plan.shards, thread_name_prefix=f"{role}-worker") as pool:
        futures = [pool.submit(job, s) for s in range(plan.shards)]
        errors, halves = [], []
        for f in futures:
            try:
                halves.extend(f.result())
            except ShardFailure as exc:
                errors.append(exc)
    if errors:
        raise errors[0]
    return np.stack(halves, axis=1)


# -- aggregation -----------------------------------------------------------------


@dataclass
class AggregateResult:
    dp_lift: float
    dp_se: float
    noise_check: str
    stats: tuple[float, float] | None = None
    totals: tuple[int, ...] | None = None


def run_aggregator(
    role: str,
    ch: Channel,
    halves: np.ndarray,
    n_t: int,
    n_c: int,
    cfg: PipelineConfig,
    rng: Prg,
    noise_hook: NoiseHook | None = None,
) -> AggregateResult:
    """Aggregation circuit plus the covert noise check on the peer's revealed vector."""
    k = cfg.k
    layout = L.AggregationLayout(halves.shape[1], k, reveal_aggregates=cfg.test_mode)
    circuit = L.cached_aggregation_circuit(layout)
    if cfg.zero_noise:
        s1 = s2 = 0.0
    else:
        s1, s2 = dp.noise_scales(cfg.params, n_t, n_c)
    nrng = rng.fork("noise")
    if noise_hook is not None:
        noise = np.asarray(noise_hook(role, s1, s2, k), dtype=np.int64)
    else:
        noise = np.stack([dp.sample_noise_vector(k, s1, nrng), dp.sample_noise_vector(k, s2, nrng)])
    index = nrng.randbelow(k)
    words = to_bits_u64(halves, L.WORD)
    if role == "publisher":
        party, me = GARBLER, "g"
        inputs = {"masks": words, "g_noise": L.encode_noise(noise), "g_index": L.encode_index(index, layout)}
    else:
        party, me = EVALUATOR, "e"
        inputs = {"masked": words, "e_noise": L.encode_noise(noise), "e_index": L.encode_index(index, layout)}
    out = run_2pc(ch, party, circuit, inputs, rng.fork("aggregate"))

    dp_raw = L.decode_signed(out[f"{me}_dp"])
    rest = np.array(L.decode_signed(out[f"{me}_peer_rest"]), dtype=np.int64)  # (2, k)
    keep = np.arange(k) != index
    ok = all(
        dp.check_noise_distribution(rest[j][keep] * dp.GRID, sigma, cfg.ks_significance)
        for j, sigma in enumerate((s1, s2))
    )
    status = "pass" if ok else "fail"
    ch.send(MsgType.AGG_STATUS, json.dumps({"noise_check": status}).encode())
    peer_status = json.loads(ch.recv(MsgType.AGG_STATUS)).get("noise_check")
    if not ok:
        raise CovertCheckFailed("covert check failed: peer noise vector is not N(0, sigma^2)")
    if peer_status != "pass":
        raise CovertCheckFailed("covert check failed: peer rejected our noise vector")
    ch.check_transcript()

    res = AggregateResult(L.from_fixed(dp_raw[0]), L.from_fixed(dp_raw[1]), status)
    if cfg.test_mode:
        st = L.decode_signed(out[f"{me}_stats"])
        res.stats = (L.from_fixed(st[0]), L.from_fixed(st[1]))
        res.totals = tuple(int(x) for x in L.words_from_bits(out[f"{me}_totals"]))
    return res


# -- driver ----------------------------------------------------------------------


def load_local(cfg: PipelineConfig):
    if cfg.input is None:
        raise ValueError("config has no input path")
    if cfg.role == "publisher":
        return D.PublisherTable.from_rows(D.read_publisher(cfg.input))
    return D.AdvertiserTable.from_rows(D.read_advertiser(cfg.input), cfg.max_conversions)


def run_pipeline(cfg: PipelineConfig, transport, table=None, noise_hook: NoiseHook | None = None) -> dict:
    """Run every stage for ``cfg.role``; returns the validated report dict.

    ``table`` overrides loading ``cfg.input``.  On any failure every channel
    is closed so the peer fails fast, and no report is produced.
    """
    times: dict[str, float] = {}
    t_all = time.perf_counter()
    try:
        table = table if table is not None else load_local(cfg)
        rng = session_rng(cfg)
        ctl = transport.channel("control")
        handshake(ctl, cfg)

        t0 = time.perf_counter()
        spine, mapping = run_private_id(cfg.role, table.id_records(), ctl, rng.fork("pid"))
        if cfg.spine_out:
            D.write_spine(cfg.spine_out, spine)
        if cfg.mapping_out:
            D.write_mapping(cfg.mapping_out, mapping)
        times["private_id"] = time.perf_counter() - t0

        local = align_publisher(table, spine, mapping) if cfg.role == "publisher" else align_advertiser(table, spine, mapping)
        n_t, n_c = preflight(ctl, cfg, local)

        t0 = time.perf_counter()
        plan = plan_shards(len(spine), cfg.shards, cfg.segment_rows)
        layout = L.LiftShardLayout(plan.segment_rows, cfg.max_conversions, cfg.r_bound)
        halves = run_workers(cfg.role, transport, plan, local, layout, rng.fork("workers"))
        times["compute"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        agg = run_aggregator(cfg.role, transport.channel("aggregator"), halves, n_t, n_c, cfg, rng, noise_hook)
        times["aggregate"] = time.perf_counter() - t0

        done = json.dumps({"n_t": n_t, "n_c": n_c, "status": "complete"}).encode()
        ctl.send(MsgType.RESULT, done)
        if ctl.recv(MsgType.RESULT) != done:
            raise ProtocolError("peer finished with a different result summary")
        ctl.check_transcript()
    except BaseException:
        transport.close_all()
        raise
    times["total"] = time.perf_counter() - t_all

    est = dp.release_noisy(agg.dp_lift, agg.dp_se, n_t, n_c, cfg.params)
    peer = "advertiser" if cfg.role == "publisher" else "publisher"
    provenance = "none (zero-noise test mode)" if cfg.zero_noise else f"{peer} (cut-and-choose, index chosen by {cfg.role})"
    run = {
        "shards": cfg.shards,
        "k": cfg.k,
        "max_conversions": cfg.max_conversions,
        "segments": plan.total_segments,
        "segment_rows": plan.segment_rows,
        "spine_size": len(spine),
    }
    if cfg.seed is None:
        run["durations"] = {k: round(v, 4) for k, v in times.items()}
    test_aggs = None
    if cfg.test_mode and agg.totals is not None:
        test_aggs = dict(zip(L.AGG_NAMES, agg.totals))
        test_aggs["lift"], test_aggs["se"] = agg.stats
    return build_report(cfg.role, est, cfg.params, agg.noise_check, provenance, cfg.test_mode, run, test_aggs)


def run_match(cfg: PipelineConfig, transport, table=None) -> tuple[list[bytes], dict[int, bytes]]:
    """Handshake and Private-ID only; writes the spine and mapping files if configured."""
    try:
        table = table if table is not None else load_local(cfg)
        ctl = transport.channel("control")
        handshake(ctl, cfg)
        spine, mapping = run_private_id(cfg.role, table.id_records(), ctl, session_rng(cfg).fork("pid"))
        ctl.check_transcript()
    except BaseException:
        transport.close_all()
        raise
    if cfg.spine_out:
        D.write_spine(cfg.spine_out, spine)
    if cfg.mapping_out:
        D.write_mapping(cfg.mapping_out, mapping)
    return spine, mapping


def run_local(
    pub_cfg: PipelineConfig,
    adv_cfg: PipelineConfig,
    pub_table=None,
    adv_table=None,
    noise_hooks: dict[str, NoiseHook] | None = None,
) -> tuple[dict, dict]:
    """Both parties in one process over in-memory pipes (tests, demos, bench)."""
    hub = LocalHub()
    hooks = noise_hooks or {}
    with ThreadPoolExecutor(max_workers=2, thread_name_prefix="party") as pool:
        fa = pool.submit(run_pipeline, pub_cfg, hub.transport("publisher"), pub_table, hooks.get("publisher"))
        fb = pool.submit(run_pipeline, adv_cfg, hub.transport("advertiser"), adv_table, hooks.get("advertiser"))
        errors = []
        results = []
        for f in (fa, fb):
            try:
                results.append(f.result())
            except BaseException as exc:  # noqa: BLE001 - re-raised below
                errors.append(exc)
    if errors:
        # prefer the root cause over the peer's resulting abort or close
        primary = [e for e in errors if not _is_echo(e)]
        raise (primary or errors)[0]
    return results[0], results[1]


def _is_echo(exc: BaseException) -> bool:
    if isinstance(exc, ShardFailure):
        exc = exc.cause
    return isinstance(exc, (PeerAbort, ChannelError))


def pair_configs(base: PipelineConfig, pub_input=None, adv_input=None) -> tuple[PipelineConfig, PipelineConfig]:
    """Publisher and advertiser configs that differ only in role and input."""
    return (
        replace(base, role="publisher", input=pub_input if pub_input is not None else base.input),
        replace(base, role="advertiser", input=adv_input if adv_input is not None else base.input),
    )
