"""Command line: ``privlift {synth,oracle,match,run,bench,circuit}``.

Exit codes: 0 ok, 2 usage, 3 bad input or config, 4 file not found,
and the protocol codes in :mod:`privlift.errors` (10 and up).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from privlift import data as D
from privlift import dp
from privlift.errors import ProtocolError
from privlift.orchestrator import pipeline as P
from privlift.orchestrator.transport import TcpTransport
from privlift.rand import Prg
from privlift.report import build_report, dumps, write_report

log = logging.getLogger("privlift")

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_MISSING = 4


def _dp_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("differential privacy")
    g.add_argument("--r-bound", type=int, help="per-user outcome clamp R (minor units)")
    g.add_argument("--rho1", type=float, help="zCDP budget for the lift")
    g.add_argument("--rho2", type=float, help="zCDP budget for the standard error")
    g.add_argument("--alpha", type=float, help="CI miscoverage, e.g. 0.05")


def _test_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("test mode (report is watermarked as non-private)")
    g.add_argument("--seed", type=int, help="deterministic randomness")
    g.add_argument("--zero-noise", "--test-zero-noise", dest="zero_noise", action="store_true", default=None,
                   help="add no DP noise")


def _party_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--role", choices=P.ROLES, help="this party's role")
    p.add_argument("--config", type=Path, help="JSON config shared by both parties")
    p.add_argument("--input", help="this party's CSV")
    p.add_argument("--shards", type=int, help="parallel workers S")
    p.add_argument("--k", type=int, help="cut-and-choose noise vector length")
    p.add_argument("--max-conversions", type=int, help="conversions per user K on the advertiser side")
    p.add_argument("--segment-rows", type=int, help="rows per garbled lift circuit")
    p.add_argument("--peer", help="advertiser host the publisher dials")
    p.add_argument("--listen", help="address the advertiser listens on")
    p.add_argument("--port", type=int, help="base TCP port (one port per channel from here)")
    p.add_argument("--connect-timeout", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="privlift", description="Private lift measurement between a publisher and an advertiser.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic RCT as two CSVs plus truth.json")
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--overlap", type=float, default=0.6, help="fraction of all users known to both parties")
    p.add_argument("--true-lift", type=float, default=100.0, help="expected lift in minor units")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-conversions", type=int, default=D.DEFAULT_K)
    p.add_argument("--r-bound", type=int, default=10_000)
    p.add_argument("--base-rate", type=float, default=0.3)
    p.add_argument("--out-dir", type=Path, default=Path("."))

    p = sub.add_parser("oracle", help="plaintext estimator on both CSVs (testing only)")
    p.add_argument("--publisher", type=Path, required=True)
    p.add_argument("--advertiser", type=Path, required=True)
    _dp_flags(p)
    _test_flags(p)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("match", help="Private-ID only: write spine and mapping")
    _party_flags(p)
    _test_flags(p)
    p.add_argument("--spine-out", type=Path, required=True)
    p.add_argument("--mapping-out", type=Path, required=True)

    p = sub.add_parser("run", help="full two-party pipeline for one role")
    _party_flags(p)
    _dp_flags(p)
    _test_flags(p)
    p.add_argument("--spine-out", type=Path)
    p.add_argument("--mapping-out", type=Path)
    p.add_argument("--out", type=Path, help="report path (stdout if omitted)")

    p = sub.add_parser("bench", help="both parties in-process over a shard sweep; CSV timings")
    p.add_argument("--publisher", type=Path, required=True)
    p.add_argument("--advertiser", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--sweep", default="1,2,4", help="comma separated shard counts")
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--k", type=int)
    p.add_argument("--max-conversions", type=int)
    p.add_argument("--segment-rows", type=int)
    _dp_flags(p)
    _test_flags(p)
    p.add_argument("--out", type=Path, help="CSV path (stdout if omitted)")

    p = sub.add_parser("circuit", help="dump a lift shard circuit in Bristol format")
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--max-conversions", type=int, default=D.DEFAULT_K)
    p.add_argument("--r-bound", type=int, default=10_000)
    p.add_argument("--out", type=Path)
    return ap


_OVERRIDES = (
    "role", "input", "shards", "k", "max_conversions", "segment_rows", "peer", "listen", "port", "connect_timeout",
    "r_bound", "rho1", "rho2", "alpha", "seed", "zero_noise", "spine_out", "mapping_out", "out",
)


def config_from_args(args: argparse.Namespace, role: str | None = None) -> P.PipelineConfig:
    """Config file first, then any flag given on the command line."""
    base = json.loads(args.config.read_text()) if getattr(args, "config", None) else {}
    for name in _OVERRIDES:
        val = getattr(args, name, None)
        if val is not None:
            base[name] = str(val) if isinstance(val, Path) else val
    if role is not None:
        base["role"] = role
    if "role" not in base:
        raise ValueError("--role is required (or a role key in --config)")
    return P.PipelineConfig.from_dict(base)


def _dp_params(args) -> dp.DPParams:
    d = dp.DPParams(10_000, 0.1, 0.1)
    return dp.DPParams(
        args.r_bound if args.r_bound is not None else d.r_bound,
        args.rho1 if args.rho1 is not None else d.rho1,
        args.rho2 if args.rho2 is not None else d.rho2,
        args.alpha if args.alpha is not None else d.alpha,
    )


def _emit(report: dict, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(dumps(report))
    else:
        write_report(out, report)
        log.info("report written to %s", out)


def cmd_synth(args) -> int:
    spec = D.SynthSpec(
        users=args.users, overlap=args.overlap, true_lift=args.true_lift, seed=args.seed,
        k=args.max_conversions, r_bound=args.r_bound, base_rate=args.base_rate,
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    truth = D.write_synth(args.out_dir, spec)
    print(json.dumps(truth, sort_keys=True))
    return 0


def oracle_report(pub_path, adv_path, params: dp.DPParams, zero_noise: bool = False, seed: int | None = None) -> dict:
    pubs = D.read_publisher(pub_path)
    advs = D.read_advertiser(adv_path)
    pub_rows = [(r.id, r.opportunity_ts, r.test_flag) for r in pubs]
    adv_rows = [(r.id, r.conv_ts, r.conv_value) for r in advs]
    noise = (0.0, 0.0) if zero_noise else None
    rng = Prg.from_seed(f"{seed}/oracle") if seed is not None else Prg()
    est = dp.compute_lift_oracle(pub_rows, adv_rows, params, noise=noise, rng=rng)
    test_mode = zero_noise or seed is not None
    aggs = None
    if test_mode:
        aggs = dict(zip(("n_t", "sum_t", "sumsq_t", "n_c", "sum_c", "sumsq_c"), est.aggregates))
        aggs["lift"], aggs["se"] = est.lift, est.se
    provenance = "none (zero-noise test mode)" if zero_noise else "local draw (plaintext oracle)"
    return build_report("oracle", est, params, "skipped", provenance, test_mode, None, aggs)


def cmd_oracle(args) -> int:
    rep = oracle_report(args.publisher, args.advertiser, _dp_params(args), bool(args.zero_noise), args.seed)
    _emit(rep, args.out)
    return 0


def _transport(cfg: P.PipelineConfig) -> TcpTransport:
    return TcpTransport(cfg.role, cfg.port, cfg.peer, cfg.listen, cfg.connect_timeout)


def cmd_match(args) -> int:
    cfg = config_from_args(args)
    spine, mapping = P.run_match(cfg, _transport(cfg))
    log.info("spine of %d uids, %d local rows matched", len(spine), len(mapping))
    return 0


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    rep = P.run_pipeline(cfg, _transport(cfg))
    _emit(rep, Path(cfg.out) if cfg.out else None)
    return 0


def bench_rows(pub_path, adv_path, base: P.PipelineConfig, sweep, repeat: int = 1) -> list[dict]:
    pub_table = D.PublisherTable.from_rows(D.read_publisher(pub_path))
    adv_table = D.AdvertiserTable.from_rows(D.read_advertiser(adv_path), base.max_conversions)
    rows = []
    for shards in sweep:
        for rep in range(repeat):
            pc, ac = P.pair_configs(replace(base, shards=shards, seed=None))
            t0 = time.perf_counter()
            pub, _ = P.run_local(pc, ac, pub_table, adv_table)
            wall = time.perf_counter() - t0
            run = pub["run"]
            compute = run["durations"]["compute"]
            rows.append({
                "shards": shards,
                "repeat": rep,
                "spine_rows": run["spine_size"],
                "segments": run["segments"],
                "compute_s": round(compute, 4),
                "per_shard_s": round(compute / shards, 4),
                "wall_s": round(wall, 4),
            })
            log.info("S=%d compute %.2fs wall %.2fs", shards, compute, wall)
    return rows


def cmd_bench(args) -> int:
    cfg = config_from_args(args, role="publisher")
    sweep = [int(s) for s in args.sweep.split(",") if s.strip()]
    if not sweep or min(sweep) < 1:
        raise ValueError("--sweep needs positive shard counts")
    rows = bench_rows(args.publisher, args.advertiser, cfg, sweep, args.repeat)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_circuit(args) -> int:
    from privlift.circuit import lift as L

    layout = L.LiftShardLayout(args.rows, args.max_conversions, args.r_bound)
    text = L.build_lift_shard_circuit(layout).dump()
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "oracle": cmd_oracle,
    "match": cmd_match,
    "run": cmd_run,
    "bench": cmd_bench,
    "circuit": cmd_circuit,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ProtocolError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        log.error("file not found: %s", exc.filename)
        return EXIT_MISSING
    except (ValueError, json.JSONDecodeError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
