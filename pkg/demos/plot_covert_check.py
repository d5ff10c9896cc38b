"""
Catching a cheating noise contributor
=====================================

Each party feeds a vector of k Gaussian draws into the aggregation
circuit.  One element, picked by the other side, is used as noise; the
rest are revealed to the picker and tested.  A party that submits
constant noise to bias the result gets caught.
"""

import numpy as np

from privlift import data as D
from privlift import dp
from privlift.errors import CovertCheckFailed
from privlift.orchestrator import pipeline as P

pub_rows, adv_rows, _ = D.synthesize(D.SynthSpec(users=400, overlap=0.6, seed=5))
pub = D.PublisherTable.from_rows(pub_rows)
adv = D.AdvertiserTable.from_rows(adv_rows, D.DEFAULT_K)


def shove_up(role, sigma1, sigma2, k):
    # every element sits at 8 sigma: inside the bound, far from Gaussian
    return np.stack([dp.quantize(np.full(k, 8 * sigma1)), dp.quantize(np.full(k, 8 * sigma2))])


base = P.PipelineConfig(role="publisher", k=64)
try:
    P.run_local(*P.pair_configs(base), pub, adv, noise_hooks={"advertiser": shove_up})
except CovertCheckFailed as exc:
    print("run aborted:", exc)

# the same check in isolation, over many trials
sigma = 5.0
rng = np.random.default_rng(0)
honest = np.mean([dp.check_noise_distribution(rng.normal(0, sigma, 63), sigma) for _ in range(500)])
print(f"honest vectors accepted: {honest:.1%}")
print("constant vector accepted:", dp.check_noise_distribution(np.full(63, 8 * sigma), sigma))
