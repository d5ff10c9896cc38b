"""Prime-order group (ristretto255) used by identity matching and base OT.

Elements are 32-byte canonical ristretto255 encodings.  Scalars are integers
mod the group order ``ORDER``; their external encoding is 32 bytes
big-endian.  Arithmetic goes through libsodium when the shared library is
available and falls back to the pure-Python implementation in
:mod:`privlift._ristretto` otherwise.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import hashlib
import secrets
import unicodedata

from privlift import _ristretto as _py

ELEMENT_BYTES = 32
SCALAR_BYTES = 32
ORDER = _py.L

_HASH_DST = b"privlift/hash_to_group/v1"


class InvalidElement(ValueError):
    pass


class InvalidScalar(ValueError):
    pass


def _load_sodium():
    names = [ctypes.util.find_library("sodium"), "libsodium.so.23", "libsodium.so"]
    for name in names:
        if not name:
            continue
        try:
            lib = ctypes.CDLL(name)
        except OSError:
            continue
        if not hasattr(lib, "crypto_scalarmult_ristretto255"):
            continue
        if lib.sodium_init() < 0:
            continue
        return lib
    return None


_sodium = _load_sodium()


def backend() -> str:
    return "libsodium" if _sodium is not None else "python"


class GroupElement:
    """Canonically encoded ristretto255 element (immutable)."""

    __slots__ = ("_enc",)

    def __init__(self, encoding: bytes):
        # trusted constructor; use from_bytes for untrusted input
        self._enc = bytes(encoding)

    @classmethod
    def from_bytes(cls, data: bytes) -> GroupElement:
        data = bytes(data)
        if len(data) != ELEMENT_BYTES:
            raise InvalidElement(f"expected {ELEMENT_BYTES} bytes, got {len(data)}")
        if _sodium is not None:
            # some libsodium builds ignore the top bit; canonical encodings never set it
            ok = not data[31] & 0x80 and _sodium.crypto_core_ristretto255_is_valid_point(data) == 1
        else:
            ok = _py.decode(data) is not None
        if not ok:
            raise InvalidElement("non-canonical or invalid ristretto255 encoding")
        return cls(data)

    def to_bytes(self) -> bytes:
        return self._enc

    def __bytes__(self) -> bytes:
        return self._enc

    def __eq__(self, other: object) -> bool:
        return isinstance(other, GroupElement) and other._enc == self._enc

    def __hash__(self) -> int:
        return hash(self._enc)

    def __repr__(self) -> str:
        return f"GroupElement({self._enc.hex()[:16]}...)"


def normalize_identifier(raw: str | bytes) -> bytes:
    """Lowercase, trim whitespace, UTF-8 encode."""
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    return unicodedata.normalize("NFC", raw).strip().lower().encode("utf-8")


def _from_uniform(uniform: bytes) -> GroupElement:
    if _sodium is not None:
        out = ctypes.create_string_buffer(ELEMENT_BYTES)
        _sodium.crypto_core_ristretto255_from_hash(out, uniform)
        return GroupElement(out.raw)
    return GroupElement(_py.from_uniform(uniform))


def hash_to_group(data: bytes) -> GroupElement:
    """Deterministic map from bytes to a uniformly distributed element."""
    uniform = hashlib.sha512(_HASH_DST + len(data).to_bytes(8, "big") + data).digest()
    return _from_uniform(uniform)


def generator() -> GroupElement:
    return GroupElement(_py.BASEPOINT_ENCODING)


def _scalar_le(k: int) -> bytes:
    return (k % ORDER).to_bytes(32, "little")


def _check_scalar(k: int) -> int:
    k %= ORDER
    if k == 0:
        raise InvalidScalar("zero scalar")
    return k


def exp(e: GroupElement, k: int) -> GroupElement:
    """Scalar multiplication, written multiplicatively as e**k."""
    k = _check_scalar(k)
    if _sodium is not None:
        out = ctypes.create_string_buffer(ELEMENT_BYTES)
        if _sodium.crypto_scalarmult_ristretto255(out, _scalar_le(k), e.to_bytes()) != 0:
            raise InvalidElement("scalar multiplication produced the identity")
        return GroupElement(out.raw)
    return GroupElement(_py.scalarmult(k, e.to_bytes()))


def exp_base(k: int) -> GroupElement:
    k = _check_scalar(k)
    if _sodium is not None:
        out = ctypes.create_string_buffer(ELEMENT_BYTES)
        if _sodium.crypto_scalarmult_ristretto255_base(out, _scalar_le(k)) != 0:
            raise InvalidElement("scalar multiplication produced the identity")
        return GroupElement(out.raw)
    return GroupElement(_py.scalarmult(k, _py.BASEPOINT_ENCODING))


def mul(a: GroupElement, b: GroupElement) -> GroupElement:
    """Group operation (point addition)."""
    if _sodium is not None:
        out = ctypes.create_string_buffer(ELEMENT_BYTES)
        if _sodium.crypto_core_ristretto255_add(out, a.to_bytes(), b.to_bytes()) != 0:
            raise InvalidElement("invalid operand")
        return GroupElement(out.raw)
    return GroupElement(_py.add(a.to_bytes(), b.to_bytes()))


def div(a: GroupElement, b: GroupElement) -> GroupElement:
    """a * b^-1 (point subtraction)."""
    if _sodium is not None:
        out = ctypes.create_string_buffer(ELEMENT_BYTES)
        if _sodium.crypto_core_ristretto255_sub(out, a.to_bytes(), b.to_bytes()) != 0:
            raise InvalidElement("invalid operand")
        return GroupElement(out.raw)
    return GroupElement(_py.sub(a.to_bytes(), b.to_bytes()))


def scalar_random(rng=None) -> int:
    """Uniform scalar in [1, q).  ``rng`` is a :class:`privlift.rand.Prg` or None."""
    while True:
        raw = rng.bytes(64) if rng is not None else secrets.token_bytes(64)
        k = int.from_bytes(raw, "big") % ORDER
        if k:
            return k


def scalar_invert(k: int) -> int:
    k %= ORDER
    if k == 0:
        raise InvalidScalar("cannot invert zero")
    return pow(k, -1, ORDER)


def scalar_to_bytes(k: int) -> bytes:
    return (k % ORDER).to_bytes(SCALAR_BYTES, "big")


def scalar_from_bytes(data: bytes) -> int:
    if len(data) != SCALAR_BYTES:
        raise InvalidScalar(f"expected {SCALAR_BYTES} bytes")
    k = int.from_bytes(data, "big")
    if k >= ORDER:
        raise InvalidScalar("scalar not reduced")
    return k
