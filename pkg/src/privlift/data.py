"""CSV datasets, ingest validation, spine/mapping files and synthetic RCT data.

publisher.csv::

    id,opportunity_ts,test_flag

advertiser.csv (several rows per id allowed)::

    id,conv_ts,conv_value[,conv_value_sq]
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from privlift.group import normalize_identifier
from privlift.private_id import IdRecord

log = logging.getLogger(__name__)

PUBLISHER_HEADER = ("id", "opportunity_ts", "test_flag")
ADVERTISER_HEADER = ("id", "conv_ts", "conv_value")
U32_MAX = (1 << 32) - 1
MAX_VALUE = 1 << 20
DEFAULT_K = 4


class InputError(ValueError):
    """A dataset failed ingest validation."""


@dataclass(frozen=True)
class PublisherRow:
    id: str
    opportunity_ts: int
    test_flag: int


@dataclass(frozen=True)
class AdvertiserRow:
    id: str
    conv_ts: int
    conv_value: int


def _u32(text: str, what: str, line: int) -> int:
    try:
        v = int(text)
    except ValueError:
        raise InputError(f"line {line}: {what} is not an integer: {text!r}") from None
    if not 0 <= v <= U32_MAX:
        raise InputError(f"line {line}: {what} out of u32 range")
    return v


def _reader(path: Path, required: Sequence[str]):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(fh)
    missing = [c for c in required if c not in (reader.fieldnames or ())]
    if missing:
        fh.close()
        raise InputError(f"{path}: missing column(s) {', '.join(missing)}")
    return fh, reader


def read_publisher(path: str | Path) -> list[PublisherRow]:
    fh, reader = _reader(Path(path), PUBLISHER_HEADER)
    rows, seen = [], set()
    with fh:
        for line, rec in enumerate(reader, start=2):
            uid = rec["id"]
            if not uid or not uid.strip():
                raise InputError(f"line {line}: empty id")
            key = normalize_identifier(uid)
            if key in seen:
                raise InputError(f"line {line}: duplicate id {uid!r}")
            seen.add(key)
            ts = _u32(rec["opportunity_ts"], "opportunity_ts", line)
            if ts == 0:
                raise InputError(f"line {line}: opportunity_ts must be > 0")
            flag = rec["test_flag"].strip()
            if flag not in ("0", "1"):
                raise InputError(f"line {line}: test_flag must be 0 or 1")
            rows.append(PublisherRow(uid, ts, int(flag)))
    return rows


def read_advertiser(path: str | Path) -> list[AdvertiserRow]:
    fh, reader = _reader(Path(path), ADVERTISER_HEADER)
    has_sq = "conv_value_sq" in (reader.fieldnames or ())
    rows = []
    bad_sq = 0
    with fh:
        for line, rec in enumerate(reader, start=2):
            uid = rec["id"]
            if not uid or not uid.strip():
                raise InputError(f"line {line}: empty id")
            ts = _u32(rec["conv_ts"], "conv_ts", line)
            value = _u32(rec["conv_value"], "conv_value", line)
            if value > MAX_VALUE:
                raise InputError(f"line {line}: conv_value above 2^20")
            if has_sq and rec.get("conv_value_sq") not in (None, ""):
                try:
                    sq_ok = int(rec["conv_value_sq"]) == value * value
                except ValueError:
                    sq_ok = False
                bad_sq += not sq_ok
            rows.append(AdvertiserRow(uid, ts, value))
    if bad_sq:
        # the circuit squares the clamped outcome itself; the column is advisory
        log.warning("%d conv_value_sq entries differ from conv_value^2 and are ignored", bad_sq)
    return rows


def write_publisher(path: str | Path, rows: Sequence[PublisherRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PUBLISHER_HEADER)
        for r in rows:
            w.writerow((r.id, r.opportunity_ts, r.test_flag))


def write_advertiser(path: str | Path, rows: Sequence[AdvertiserRow], with_square: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ADVERTISER_HEADER + (("conv_value_sq",) if with_square else ()))
        for r in rows:
            extra = (r.conv_value * r.conv_value,) if with_square else ()
            w.writerow((r.id, r.conv_ts, r.conv_value) + extra)


# -- per-party local tables ---------------------------------------------------


@dataclass
class PublisherTable:
    ids: list[str]
    opp_ts: np.ndarray  # uint64 (n,)
    test_flag: np.ndarray  # uint8 (n,)

    @classmethod
    def from_rows(cls, rows: Sequence[PublisherRow]) -> PublisherTable:
        return cls(
            [r.id for r in rows],
            np.array([r.opportunity_ts for r in rows], dtype=np.uint64),
            np.array([r.test_flag for r in rows], dtype=np.uint8),
        )

    def id_records(self) -> list[IdRecord]:
        return [IdRecord(normalize_identifier(x), i) for i, x in enumerate(self.ids)]


@dataclass
class AdvertiserTable:
    """One row per distinct id, conversions padded to K."""

    ids: list[str]
    conv_ts: np.ndarray  # uint64 (n, K)
    conv_value: np.ndarray  # uint64 (n, K)

    @classmethod
    def from_rows(cls, rows: Sequence[AdvertiserRow], k: int = DEFAULT_K) -> AdvertiserTable:
        order: dict[str, int] = {}
        groups: list[list[AdvertiserRow]] = []
        for r in rows:
            key = normalize_identifier(r.id).decode()
            if key not in order:
                order[key] = len(groups)
                groups.append([])
            groups[order[key]].append(r)
        ts = np.zeros((len(groups), k), dtype=np.uint64)
        val = np.zeros((len(groups), k), dtype=np.uint64)
        for i, g in enumerate(groups):
            if len(g) > k:
                raise InputError(f"id {g[0].id!r} has {len(g)} conversions, more than K={k}")
            ts[i, : len(g)] = [r.conv_ts for r in g]
            val[i, : len(g)] = [r.conv_value for r in g]
        return cls([g[0].id for g in groups], ts, val)

    @property
    def k(self) -> int:
        return int(self.conv_ts.shape[1])

    def id_records(self) -> list[IdRecord]:
        return [IdRecord(normalize_identifier(x), i) for i, x in enumerate(self.ids)]


# -- spine and mapping files ---------------------------------------------------


def write_spine(path: str | Path, spine: Sequence[bytes]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for uid in spine:
            fh.write(uid.hex() + "\n")


def read_spine(path: str | Path) -> list[bytes]:
    with open(path, encoding="ascii") as fh:
        return [bytes.fromhex(line.strip()) for line in fh if line.strip()]


def write_mapping(path: str | Path, mapping: dict[int, bytes]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("row_index", "uid_hex"))
        for row in sorted(mapping):
            w.writerow((row, mapping[row].hex()))


def read_mapping(path: str | Path) -> dict[int, bytes]:
    with open(path, newline="", encoding="ascii") as fh:
        return {int(r["row_index"]): bytes.fromhex(r["uid_hex"]) for r in csv.DictReader(fh)}


# -- synthetic data ------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    users: int
    overlap: float
    true_lift: float = 100.0
    seed: int = 0
    k: int = DEFAULT_K
    r_bound: int = 10_000
    base_rate: float = 0.3
    start_ts: int = 1_700_000_000

    def __post_init__(self):
        if self.users < 0:
            raise ValueError("users must be >= 0")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")
        if not 0.0 <= self.base_rate <= 1.0:
            raise ValueError("base_rate must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("K must be >= 1")


def synthesize(spec: SynthSpec) -> tuple[list[PublisherRow], list[AdvertiserRow], dict]:
    """Two datasets over ``users`` ids in total with a known intent-to-treat lift.

    ``round(overlap * users)`` ids are shared and each of them has at least
    one advertiser row; the rest are split between publisher-only and
    advertiser-only ids.  Shared users convert with
    probability ``base_rate``; each attributed value is at most R // K so the
    clamp never binds.  Test users additionally get one extra attributed
    conversion with a probability chosen to make the expected difference in
    mean outcome over all publisher users equal ``true_lift``.
    """
    rng = np.random.default_rng(spec.seed)
    n_both = int(round(spec.overlap * spec.users))
    rest = spec.users - n_both
    n_pub_only = rest // 2
    n_adv_only = rest - n_pub_only
    n_pub = n_both + n_pub_only
    k = spec.k
    vmax = max(1, min(spec.r_bound // k, MAX_VALUE))
    pre_slot = 1 if k >= 3 else 0
    extra_slot = 1 if k >= 2 else 0
    base_slots = k - pre_slot - extra_slot

    extra_p = 0.0
    if spec.true_lift:
        if not extra_slot or n_both == 0:
            raise ValueError("a nonzero lift needs K >= 2 and overlapping users")
        extra_p = spec.true_lift / ((n_both / n_pub) * (vmax + 1) / 2)
        if not 0 <= extra_p <= 1:
            raise ValueError(f"true_lift {spec.true_lift} is unreachable with R={spec.r_bound}, K={k}")

    perm = rng.permutation(spec.users)
    ids = [f"user-{i:08d}" for i in perm]
    both, pub_only, adv_only = ids[:n_both], ids[n_both:n_pub], ids[n_pub:]

    day = 86_400
    pub_rows = []
    opp = {}
    for uid in both + pub_only:
        ts = spec.start_ts + int(rng.integers(0, 30 * day))
        flag = int(rng.integers(0, 2))
        opp[uid] = (ts, flag)
        pub_rows.append(PublisherRow(uid, ts, flag))
    # present publisher rows in id order so files do not leak the overlap layout
    pub_rows.sort(key=lambda r: r.id)

    adv_rows = []
    for uid in both:
        ts, flag = opp[uid]
        start = len(adv_rows)
        if base_slots and rng.random() < spec.base_rate:
            for _ in range(int(rng.integers(1, base_slots + 1))):
                adv_rows.append(AdvertiserRow(uid, ts + int(rng.integers(1, 7 * day)), int(rng.integers(1, vmax + 1))))
        if flag and extra_slot and rng.random() < extra_p:
            adv_rows.append(AdvertiserRow(uid, ts + int(rng.integers(1, 7 * day)), int(rng.integers(1, vmax + 1))))
        if pre_slot and rng.random() < 0.1:
            # at or before the opportunity: never attributed
            adv_rows.append(AdvertiserRow(uid, ts - int(rng.integers(0, 7 * day)), int(rng.integers(1, vmax + 1))))
        if len(adv_rows) == start:
            # every shared id appears on both sides; an unattributed row keeps the lift unchanged
            adv_rows.append(AdvertiserRow(uid, ts - int(rng.integers(0, 7 * day)), int(rng.integers(1, vmax + 1))))
    for uid in adv_only:
        for _ in range(int(rng.integers(1, k + 1))):
            adv_rows.append(
                AdvertiserRow(uid, spec.start_ts + int(rng.integers(0, 40 * day)), int(rng.integers(1, vmax + 1)))
            )
    adv_rows.sort(key=lambda r: (r.id, r.conv_ts))

    truth = {
        "users": spec.users,
        "overlap": spec.overlap,
        "intersection": n_both,
        "publisher_users": n_pub,
        "advertiser_users": n_both + n_adv_only,
        "true_lift": spec.true_lift,
        "r_bound": spec.r_bound,
        "max_conversions": k,
        "seed": spec.seed,
    }
    return pub_rows, adv_rows, truth


def write_synth(out_dir: str | Path, spec: SynthSpec) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pub, adv, truth = synthesize(spec)
    write_publisher(out / "publisher.csv", pub)
    write_advertiser(out / "advertiser.csv", adv, with_square=True)
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return truth
