"""Fixed-key AES correlation-robust hash over 128-bit blocks.

Blocks are ``(n, 2)`` uint64 arrays (low word first); bit 0 of the low word
is the point-and-permute colour bit.  ``H(x, t) = pi(K) ^ K`` with
``K = 2x ^ t`` (doubling in GF(2^128)); the two-input variant used for
garbled gates is ``K = 2a ^ 4b ^ t``.
"""

from __future__ import annotations

import threading

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

DOMAIN_GATE = np.uint64(0)
DOMAIN_DECODE = np.uint64(1)
DOMAIN_OT = np.uint64(2)

_ONE = np.uint64(1)
_63 = np.uint64(63)
_POLY = np.uint64(0x87)


def dbl(x: np.ndarray) -> np.ndarray:
    lo = x[:, 0]
    hi = x[:, 1]
    out = np.empty_like(x)
    out[:, 1] = (hi << _ONE) | (lo >> _63)
    out[:, 0] = (lo << _ONE) ^ ((hi >> _63) * _POLY)
    return out


def to_bytes(x: np.ndarray) -> bytes:
    return np.ascontiguousarray(x, dtype="<u8").tobytes()


def from_bytes(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype="<u8").reshape(-1, 2).astype(np.uint64)


class TweakHash:
    def __init__(self, key: bytes):
        if len(key) != 16:
            raise ValueError("hash key must be 16 bytes")
        self.key = key
        self._local = threading.local()  # cipher contexts must not be shared across threads

    def _enc(self):
        enc = getattr(self._local, "enc", None)
        if enc is None:
            enc = self._local.enc = Cipher(algorithms.AES(self.key), modes.ECB()).encryptor()
        return enc

    def perm(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] == 0:
            return x.copy()
        return np.frombuffer(self._enc().update(to_bytes(x)), dtype="<u8").reshape(-1, 2).astype(np.uint64)

    def _finish(self, k: np.ndarray, tweak, domain) -> np.ndarray:
        k[:, 0] ^= np.asarray(tweak, dtype=np.uint64)
        k[:, 1] ^= domain
        return self.perm(k) ^ k

    def h1(self, x: np.ndarray, tweak, domain=DOMAIN_OT) -> np.ndarray:
        return self._finish(dbl(x), tweak, domain)

    def h2(self, a: np.ndarray, b: np.ndarray, tweak, domain=DOMAIN_GATE) -> np.ndarray:
        return self._finish(dbl(a) ^ dbl(dbl(b)), tweak, domain)


# public fixed key for OT-extension hashing
OT_HASH = TweakHash(bytes.fromhex("7072697666696674206f742068617368"))
