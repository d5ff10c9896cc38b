"""Private identity matching for the single-unique-identifier case.

Both parties end with the same sorted list of pseudorandom UIDs covering the
union of their identifier sets (the identity spine) plus a map from their own
rows to UIDs.

Leakage of this construction (semi-honest): each party learns the size of the
union and therefore the intersection cardinality |A| + |B| - |spine|.  A party
that keeps its own linked UIDs and the peer's doubly-masked set can also test
which of its own items are in the intersection.  Downstream computation only
needs the full-outer-join output, so this is accepted and documented rather
than hidden.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

from privlift import group
from privlift.errors import ProtocolError, SpineDivergence
from privlift.orchestrator.framing import Channel, MsgType
from privlift.rand import Prg

UID_BYTES = 32
_KDF_DST = b"privlift/uid/v1\0"


@dataclass(frozen=True)
class IdRecord:
    raw_id: bytes
    row_index: int


def kdf_uid(e: group.GroupElement) -> bytes:
    return hashlib.sha256(_KDF_DST + e.to_bytes()).digest()


def spine_digest(spine: Sequence[bytes]) -> bytes:
    h = hashlib.sha256(b"privlift/spine/v1")
    h.update(len(spine).to_bytes(8, "big"))
    for uid in spine:
        h.update(uid)
    return h.digest()


def _pack(elements: Sequence[group.GroupElement]) -> bytes:
    return b"".join(e.to_bytes() for e in elements)


def _unpack(payload: bytes) -> list[group.GroupElement]:
    if len(payload) % group.ELEMENT_BYTES:
        raise ProtocolError("element batch has a ragged length")
    n = len(payload) // group.ELEMENT_BYTES
    return [
        group.GroupElement.from_bytes(payload[i * 32 : (i + 1) * 32]) for i in range(n)
    ]


def check_unique(ids: Sequence[IdRecord]) -> None:
    seen: set[bytes] = set()
    for rec in ids:
        if rec.raw_id in seen:
            raise ValueError(f"duplicate identifier at row {rec.row_index}")
        seen.add(rec.raw_id)


def run_private_id(
    role: str, ids: Sequence[IdRecord], channel: Channel, rng: Prg
) -> tuple[list[bytes], dict[int, bytes]]:
    """Run one matching session; returns ``(spine, row_index -> uid)``.

    ``role`` only labels errors; the message flow is symmetric.
    """
    check_unique(ids)
    key = group.scalar_random(rng)

    own = [group.exp(group.hash_to_group(rec.raw_id), key) for rec in ids]
    perm = rng.shuffle(own)
    channel.send_large(MsgType.PID_MASKED, _pack(own))

    try:
        peer_masked = _unpack(channel.recv_large(MsgType.PID_MASKED))
    except group.InvalidElement as exc:
        channel.abort("malformed group element")
        raise ProtocolError(f"{role}: peer sent a malformed element") from exc
    peer_double = [group.exp(e, key) for e in peer_masked]
    channel.send_large(MsgType.PID_DOUBLE, _pack(peer_double))

    try:
        own_double = _unpack(channel.recv_large(MsgType.PID_DOUBLE))
    except group.InvalidElement as exc:
        channel.abort("malformed group element")
        raise ProtocolError(f"{role}: peer sent a malformed element") from exc
    if len(own_double) != len(ids):
        channel.abort("doubly-masked batch has the wrong size")
        raise ProtocolError(f"{role}: expected {len(ids)} elements, got {len(own_double)}")

    mapping: dict[int, bytes] = {}
    for j, e in enumerate(own_double):
        mapping[ids[perm[j]].row_index] = kdf_uid(e)

    spine = sorted(set(mapping.values()) | {kdf_uid(e) for e in peer_double})

    mine = spine_digest(spine)
    channel.send(MsgType.PID_SPINE_HASH, mine)
    theirs = channel.recv(MsgType.PID_SPINE_HASH)
    if theirs != mine:
        raise SpineDivergence(f"{role}: spine divergence")
    return spine, mapping


def align_to_spine(spine: Sequence[bytes], mapping: dict[int, bytes], local_rows, null_row):
    """Full-outer-join alignment of local rows to the spine.

    ``local_rows[row_index]`` is the payload for that row.  Returns a list of
    ``(present, payload)`` of length ``len(spine)`` in spine order; absent
    positions carry ``(False, null_row)``.
    """
    position = {uid: i for i, uid in enumerate(spine)}
    out: list[tuple[bool, object]] = [(False, null_row)] * len(spine)
    for row_index, uid in mapping.items():
        pos = position.get(uid)
        if pos is None:
            raise ProtocolError("mapped UID missing from spine")
        out[pos] = (True, local_rows[row_index])
    return out
