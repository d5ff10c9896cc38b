"""AES-CTR deterministic random bit generator.

Every protocol component takes a :class:`Prg`.  Unseeded instances draw their
key from the OS; seeded ones exist for reproducible test runs only.
``fork`` derives independent named sub-streams so concurrent sessions never
share generator state.
"""

from __future__ import annotations

import hashlib
import os
import threading

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes


class Prg:
    def __init__(self, key: bytes | None = None):
        if key is None:
            key = os.urandom(32)
        if len(key) != 32:
            key = hashlib.sha256(key).digest()
        self._key = key
        self._enc = Cipher(algorithms.AES(key), modes.CTR(b"\0" * 16)).encryptor()
        self._lock = threading.Lock()

    @classmethod
    def from_seed(cls, seed: int | str | bytes) -> Prg:
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "big", signed=True)
        elif isinstance(seed, str):
            seed = seed.encode()
        return cls(hashlib.sha256(b"privlift/prg-seed\0" + seed).digest())

    def fork(self, label: str) -> Prg:
        """Independent generator derived from this one's key and ``label``."""
        return Prg(hashlib.sha256(self._key + b"/fork/" + label.encode()).digest())

    def bytes(self, n: int) -> bytes:
        with self._lock:
            return self._enc.update(b"\0" * n)

    def words(self, n: int) -> np.ndarray:
        return np.frombuffer(self.bytes(8 * n), dtype=np.uint64).copy()

    def labels(self, n: int) -> np.ndarray:
        """``n`` random 128-bit blocks as an (n, 2) uint64 array."""
        return self.words(2 * n).reshape(n, 2)

    def bits(self, n: int) -> np.ndarray:
        raw = np.frombuffer(self.bytes((n + 7) // 8), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little")[:n].copy()

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        nbytes = (n.bit_length() + 7) // 8 + 8
        # 64 extra bits make the modulo bias negligible
        return int.from_bytes(self.bytes(nbytes), "big") % n

    def uniform(self, n: int) -> np.ndarray:
        """Doubles in (0, 1) with 53 random bits each."""
        w = self.words(n) >> np.uint64(11)
        return (w.astype(np.float64) + 0.5) / float(1 << 53)

    def normal(self, n: int) -> np.ndarray:
        """Standard normal samples (Box-Muller)."""
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n]

    def shuffle(self, items: list) -> list[int]:
        """Fisher-Yates shuffle in place; returns the permutation applied.

        After the call ``items[j] == original[perm[j]]``.
        """
        perm = list(range(len(items)))
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
            perm[i], perm[j] = perm[j], perm[i]
        return perm
