"""
Joining without revealing
=========================

Private-ID gives both parties the same sorted list of pseudonymous ids
for the union of their users, and each party a map from its own rows to
those ids.  Neither learns which of its users the other one has.
"""

from privlift import group
from privlift.private_id import IdRecord, run_private_id
from privlift.rand import Prg
from privlift.orchestrator.framing import PipeChannel
from concurrent.futures import ThreadPoolExecutor

publisher = ["alice@example.com", "bob@example.com", "dora@example.com"]
advertiser = ["bob@example.com", "carol@example.com", " Dora@Example.com "]  # normalized before hashing

a, b = PipeChannel.pair("demo")
recs = lambda ids: [IdRecord(group.normalize_identifier(x), i) for i, x in enumerate(ids)]
with ThreadPoolExecutor(2) as pool:
    fa = pool.submit(run_private_id, "publisher", recs(publisher), a, Prg.from_seed(1))
    fb = pool.submit(run_private_id, "advertiser", recs(advertiser), b, Prg.from_seed(2))
    (spine, pub_map), (spine_b, adv_map) = fa.result(), fb.result()

print("spines identical:", spine == spine_b, "| union size", len(spine))
for i, who in enumerate(publisher):
    print(f"publisher row {i} ({who}) -> {pub_map[i].hex()[:16]}...")
for i, who in enumerate(advertiser):
    print(f"advertiser row {i} ({who.strip()}) -> {adv_map[i].hex()[:16]}...")
