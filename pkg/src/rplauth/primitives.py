"""Pluggable hash / MAC / cipher / signature families.

Two providers are bundled:

* ``TEST`` -- 8-byte elements, ``h(x) = x + 1``, XOR cipher, ``MAC_k(m) = h(k ^ m)``
  and a MAC-based "signature" under a secret that only the root object holds.
  Every chain value is analytically predictable, which is what the unit tests want.
* ``PRODUCTION`` -- 16-byte elements, truncated SHA-256, truncated HMAC-SHA256,
  single-block AES-128 (length preserving on one element) and Ed25519.

Elements are plain ``bytes`` of the suite's width.
"""
from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from typing import Callable, Protocol

from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.exceptions import InvalidSignature

_MASK64 = (1 << 64) - 1


class Verifier(Protocol):
    def verify(self, message: bytes, signature: bytes) -> bool: ...


class Signer(Protocol):
    def sign(self, message: bytes) -> bytes: ...

    def verifier(self) -> Verifier: ...


@dataclass(frozen=True)
class PrimitiveSuite:
    name: str
    width: int
    h: Callable[[bytes], bytes]
    mac: Callable[[bytes, bytes], bytes]
    enc: Callable[[bytes, bytes], bytes]
    dec: Callable[[bytes, bytes], bytes]
    make_signer: Callable[[bytes], Signer] = field(repr=False)

    def elem(self, value: int) -> bytes:
        """Integer -> element (big-endian, reduced modulo the element width)."""
        return (value % (1 << (8 * self.width))).to_bytes(self.width, "big")

    @staticmethod
    def value(e: bytes) -> int:
        return int.from_bytes(e, "big")

    def hash_forward(self, e: bytes, t: int) -> bytes:
        if t < 0:
            raise ValueError("t must be non-negative")
        for _ in range(t):
            e = self.h(e)
        return e

    def random_element(self, rng) -> bytes:
        return bytes(rng.integers(0, 256, size=self.width, dtype="uint8").tolist())


# -- TEST provider -------------------------------------------------------------

def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def _test_h(x: bytes) -> bytes:
    return ((int.from_bytes(x, "big") + 1) & _MASK64).to_bytes(8, "big")


def _test_mac(k: bytes, m: bytes) -> bytes:
    return _test_h(_xor(k, m))


def _digest8(message: bytes) -> bytes:
    return hashlib.blake2b(message, digest_size=8).digest()


class _MacVerifier:
    def __init__(self, secret: bytes):
        self.__secret = secret

    def verify(self, message: bytes, signature: bytes) -> bool:
        expected = _test_mac(self.__secret, _digest8(message))
        return hmac.compare_digest(expected, signature)


class MacSigner:
    """Root-only secret; signature = MAC_secret(digest(message))."""

    def __init__(self, secret: bytes):
        self.__secret = secret

    def sign(self, message: bytes) -> bytes:
        return _test_mac(self.__secret, _digest8(message))

    def verifier(self) -> _MacVerifier:
        return _MacVerifier(self.__secret)


TEST = PrimitiveSuite(
    name="test",
    width=8,
    h=_test_h,
    mac=_test_mac,
    enc=_xor,
    dec=_xor,
    make_signer=lambda seed: MacSigner(_digest8(b"root-secret" + seed)),
)


# -- PRODUCTION provider -------------------------------------------------------

def _sha_h(x: bytes) -> bytes:
    return hashlib.sha256(x).digest()[:16]


def _hmac(k: bytes, m: bytes) -> bytes:
    return hmac.new(k, m, hashlib.sha256).digest()[:16]


def _aes_enc(k: bytes, m: bytes) -> bytes:
    enc = Cipher(algorithms.AES(k), modes.ECB()).encryptor()
    return enc.update(m) + enc.finalize()


def _aes_dec(k: bytes, c: bytes) -> bytes:
    dec = Cipher(algorithms.AES(k), modes.ECB()).decryptor()
    return dec.update(c) + dec.finalize()


class _EdVerifier:
    def __init__(self, pk: Ed25519PublicKey):
        self.pk = pk

    def verify(self, message: bytes, signature: bytes) -> bool:
        try:
            self.pk.verify(signature, message)
        except InvalidSignature:
            return False
        return True


class Ed25519Signer:
    def __init__(self, seed: bytes):
        self.__sk = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(b"root-sk" + seed).digest())

    def sign(self, message: bytes) -> bytes:
        return self.__sk.sign(message)

    def verifier(self) -> _EdVerifier:
        return _EdVerifier(self.__sk.public_key())


PRODUCTION = PrimitiveSuite(
    name="production",
    width=16,
    h=_sha_h,
    mac=_hmac,
    enc=_aes_enc,
    dec=_aes_dec,
    make_signer=Ed25519Signer,
)

SUITES = {"test": TEST, "production": PRODUCTION}


def get_suite(name: str) -> PrimitiveSuite:
    try:
        return SUITES[name]
    except KeyError:
        raise ValueError(f"unknown primitive suite {name!r}") from None


def pack_challenge(suite: PrimitiveSuite, node_id: int, nonce: int) -> bytes:
    """Plaintext layout of a rank challenge.

    16-byte elements: 4 zero bytes | ID (4 bytes) | nonce (8 bytes).
    8-byte elements:  ID (7 bytes) | nonce (1 byte), so <3, 9> packs to 0x0309.
    """
    if suite.width == 16:
        return bytes(4) + (node_id & 0xFFFFFFFF).to_bytes(4, "big") + (nonce & _MASK64).to_bytes(8, "big")
    if suite.width == 8:
        return (((node_id & ((1 << 56) - 1)) << 8) | (nonce & 0xFF)).to_bytes(8, "big")
    raise ValueError(f"no challenge layout for width {suite.width}")
