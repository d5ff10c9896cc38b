"""Report JSON: construction, schema validation and atomic writing."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import jsonschema

from privlift.dp import DPParams, LiftEstimate

SCHEMA_VERSION = 1
TEST_WATERMARK = "TEST MODE: NOT DIFFERENTIALLY PRIVATE"

_num = {"type": "number"}
_int = {"type": "integer", "minimum": 0}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": [
        "schema_version", "role", "dp_lift", "dp_se", "ci_lower", "ci_upper", "ci_width",
        "n_t", "n_c", "rho1", "rho2", "alpha", "r_bound", "noise_check", "noise_provenance", "test_mode",
    ],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "role": {"enum": ["publisher", "advertiser", "oracle"]},
        "dp_lift": _num,
        "dp_se": _num,
        "ci_lower": _num,
        "ci_upper": _num,
        "ci_width": {"type": "number", "minimum": 0},
        "n_t": _int,
        "n_c": _int,
        "counts_note": {"type": "string"},
        "rho1": {"type": "number", "exclusiveMinimum": 0},
        "rho2": {"type": "number", "exclusiveMinimum": 0},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "r_bound": {"type": "integer", "minimum": 1},
        "noise_check": {"enum": ["pass", "fail", "skipped"]},
        "noise_provenance": {"type": "string"},
        "test_mode": {"type": "boolean"},
        "watermark": {"const": TEST_WATERMARK},
        "test_aggregates": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_t": _int, "sum_t": _int, "sumsq_t": _int, "n_c": _int, "sum_c": _int, "sumsq_c": _int,
                "lift": _num, "se": _num,
            },
        },
        "run": {
            "type": "object",
            "properties": {
                "shards": {"type": "integer", "minimum": 1},
                "k": {"type": "integer", "minimum": 2},
                "max_conversions": {"type": "integer", "minimum": 1},
                "segments": {"type": "integer", "minimum": 1},
                "segment_rows": {"type": "integer", "minimum": 1},
                "spine_size": _int,
                "durations": {"type": "object", "additionalProperties": _num},
            },
        },
    },
}


def validate(report: dict) -> None:
    jsonschema.validate(report, REPORT_SCHEMA)


def build_report(
    role: str,
    est: LiftEstimate,
    params: DPParams,
    noise_check: str,
    provenance: str,
    test_mode: bool,
    run: dict | None = None,
    test_aggregates: dict | None = None,
) -> dict:
    rep = {
        "schema_version": SCHEMA_VERSION,
        "role": role,
        "dp_lift": est.dp_lift,
        "dp_se": est.dp_se,
        "ci_lower": est.ci_lower,
        "ci_upper": est.ci_upper,
        "ci_width": est.w,
        "n_t": est.n_t,
        "n_c": est.n_c,
        "counts_note": "group sizes are known to the publisher and released in the clear",
        "rho1": params.rho1,
        "rho2": params.rho2,
        "alpha": params.alpha,
        "r_bound": params.r_bound,
        "noise_check": noise_check,
        "noise_provenance": provenance,
        "test_mode": test_mode,
    }
    if test_mode:
        rep["watermark"] = TEST_WATERMARK
        if test_aggregates is not None:
            rep["test_aggregates"] = test_aggregates
    elif test_aggregates is not None:
        raise ValueError("aggregates may only be reported in test mode")
    if run is not None:
        rep["run"] = run
    validate(rep)
    return rep


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def write_report(path: str | Path, report: dict) -> None:
    """Validate, then write via a temporary file so no partial report is ever left behind."""
    validate(report)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=".report-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(dumps(report))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
