"""
Shards and wall-clock time
==========================

Rows are dealt round-robin to S workers, each with its own channel and
circuits.  The result is identical for every S; only the time changes,
and only if there are cores to run the workers on.
"""

import os
import time

from privlift import data as D
from privlift.orchestrator import pipeline as P

pub_rows, adv_rows, _ = D.synthesize(D.SynthSpec(users=4000, overlap=0.6, seed=9))
pub = D.PublisherTable.from_rows(pub_rows)
adv = D.AdvertiserTable.from_rows(adv_rows, D.DEFAULT_K)
print("cores available:", len(os.sched_getaffinity(0)))

for shards in (1, 2, 4):
    cfg = P.PipelineConfig(role="publisher", shards=shards, zero_noise=True, seed=1)
    t0 = time.perf_counter()
    rep, _ = P.run_local(*P.pair_configs(cfg), pub, adv)
    print(f"S={shards}: {time.perf_counter() - t0:6.1f}s  aggregates {rep['test_aggregates']}")
