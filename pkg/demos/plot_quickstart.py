"""
Private lift on synthetic data
==============================

Two parties, one process: the publisher knows who was in the test and
control arms, the advertiser knows who converted.  Neither sees the
other's rows.  Each gets a noisy lift and interval, noised by the
other party, so the two releases differ.
"""

import tempfile
from pathlib import Path

from privlift import data as D
from privlift.cli import oracle_report
from privlift.dp import DPParams
from privlift.orchestrator import pipeline as P

workdir = Path(tempfile.mkdtemp(prefix="privlift-demo-"))
truth = D.write_synth(workdir, D.SynthSpec(users=2000, overlap=0.6, true_lift=150.0, seed=3))
print("synthetic truth:", truth)

# each party loads only its own CSV
pub = D.PublisherTable.from_rows(D.read_publisher(workdir / "publisher.csv"))
adv = D.AdvertiserTable.from_rows(D.read_advertiser(workdir / "advertiser.csv"), D.DEFAULT_K)

# zero noise and a fixed seed make the run comparable with the plaintext oracle
base = P.PipelineConfig(role="publisher", shards=2, zero_noise=True, seed=1)
pub_rep, adv_rep = P.run_local(*P.pair_configs(base), pub, adv)
want = oracle_report(workdir / "publisher.csv", workdir / "advertiser.csv", DPParams(10_000, 0.1, 0.1), zero_noise=True)
print(f"pipeline lift {pub_rep['dp_lift']:.4f}  oracle lift {want['dp_lift']:.4f}")

# a real run: noise on, no seed, no aggregates in the reports
pub_rep, adv_rep = P.run_local(*P.pair_configs(P.PipelineConfig(role="publisher", shards=2)), pub, adv)
for rep in (pub_rep, adv_rep):
    print(f"{rep['role']:>10}: lift {rep['dp_lift']:8.2f}  95% CI [{rep['ci_lower']:.2f}, {rep['ci_upper']:.2f}]"
          f"  noise check {rep['noise_check']}")
