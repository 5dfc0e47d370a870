"""Cryptographic building blocks: hash chains, salted Bloom filters, and
session key agreement.

A bearer capability is a fresh uniformly random byte string whose
possession proves an authentic friendship.  Higher-order values are
derived from it with a SHA-256 hash chain, so holding the k-fold hash
proves a social path without revealing the base value.  Bloom filters
carry capability sets compactly during discovery, and X25519 key
agreement produces the per-session symmetric key that protects the
discovery transcript and binds set items to the session.

Every use of SHA-256 here is domain-separated with a one-byte context
label so chain values, filter indexes and derived keys live in disjoint
input spaces.
"""

from __future__ import annotations

import hashlib
import math
import secrets
from dataclasses import dataclass

from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)

DEFAULT_CAPABILITY_BITS = 256
PUBLIC_KEY_BYTES = 32
DIGEST_BYTES = 32
BF_SALT_BYTES = 16
BF_WIRE_VERSION = 1

_MAX_GAMMA = 255

# One-byte domain separation labels.
_CHAIN_LABEL = b"\x01"
_BF_LABEL = b"\x02"
_KDF_LABEL = b"\x03"

_LN2 = math.log(2)


def new_capability(bits: int = DEFAULT_CAPABILITY_BITS) -> bytes:
    """Generate a fresh uniformly random bearer capability of ``bits`` length."""
    if bits <= 0 or bits % 8:
        raise ValueError("capability length must be a positive multiple of 8 bits")
    return secrets.token_bytes(bits // 8)


def hash_chain(x: bytes, i: int) -> bytes:
    """Apply the chain hash ``i`` times to ``x``.

    The zero-length chain is the identity, so ``hash_chain(x, 0) == x``
    and ``hash_chain(x, a + b) == hash_chain(hash_chain(x, b), a)`` for
    all non-negative ``a`` and ``b``.
    """
    if i < 0:
        raise ValueError("chain length must be non-negative")
    for _ in range(i):
        x = hashlib.sha256(_CHAIN_LABEL + x).digest()
    return x


def bf_optimal_size(alpha: int, p: float) -> int:
    """Bloom filter size in bits for ``alpha`` items at false-positive target ``p``.

    Computed as ``ceil((-log2 p) / ln 2) * alpha``.
    """
    if alpha < 0:
        raise ValueError("item count must be non-negative")
    if not 0.0 < p < 1.0:
        raise ValueError("false-positive target must lie in (0, 1)")
    return math.ceil(-math.log2(p) / _LN2) * alpha


def bf_hash_count(alpha: int, beta: int) -> int:
    """Index-function count that roughly minimises false positives.

    Uses the classic ``(beta / alpha) * ln 2`` rule, clamped to the
    one-byte range the wire format allows.
    """
    if alpha <= 0 or beta <= 0:
        return 1
    return min(_MAX_GAMMA, max(1, round(beta / alpha * _LN2)))


def bf_false_positive_estimate(alpha: int, beta: int, gamma: int) -> float:
    """Probability that a never-inserted item tests positive.

    Evaluates ``(1 - (1 - 1/beta)^(gamma * alpha))^gamma``.
    """
    if beta < 1:
        raise ValueError("filter size must be at least one bit")
    if gamma < 1:
        raise ValueError("index-function count must be at least one")
    if alpha < 0:
        raise ValueError("item count must be non-negative")
    return (1.0 - (1.0 - 1.0 / beta) ** (gamma * alpha)) ** gamma


class BloomFilter:
    """Bit-array set sketch with salted SHA-256 index functions.

    Each filter carries ``gamma`` fresh random salts, one per index
    function, so bit positions are not comparable across filters and a
    transferred filter is only meaningful inside its own session.  The
    filter never produces false negatives; false positives occur at
    roughly the rate :func:`bf_false_positive_estimate` predicts.

    A single instance is not safe for concurrent mutation.
    """

    def __init__(self, beta: int, gamma: int, salts: list[bytes] | None = None):
        if beta < 0:
            raise ValueError("filter size must be non-negative")
        if not 1 <= gamma <= _MAX_GAMMA:
            raise ValueError(f"index-function count must lie in [1, {_MAX_GAMMA}]")
        if salts is None:
            salts = [secrets.token_bytes(BF_SALT_BYTES) for _ in range(gamma)]
        if len(salts) != gamma:
            raise ValueError("need exactly one salt per index function")
        if any(len(s) != BF_SALT_BYTES for s in salts):
            raise ValueError(f"salts must be {BF_SALT_BYTES} bytes")
        self.beta = beta
        self.gamma = gamma
        self.salts = list(salts)
        self.bits = bytearray((beta + 7) // 8)
        self.inserted_count = 0

    @classmethod
    def sized_for(cls, alpha: int, p: float) -> "BloomFilter":
        """Build an empty filter sized for ``alpha`` items at target rate ``p``."""
        beta = bf_optimal_size(alpha, p)
        return cls(beta, bf_hash_count(alpha, beta))

    def _positions(self, item: bytes):
        for salt in self.salts:
            digest = hashlib.sha256(_BF_LABEL + salt + item).digest()
            yield int.from_bytes(digest[:8], "big") % self.beta

    def insert(self, item: bytes) -> None:
        if self.beta == 0:
            raise ValueError("cannot insert into a zero-size filter")
        for pos in self._positions(item):
            self.bits[pos >> 3] |= 1 << (pos & 7)
        self.inserted_count += 1

    def __contains__(self, item: bytes) -> bool:
        if self.beta == 0:
            return False
        return all(self.bits[pos >> 3] & (1 << (pos & 7)) for pos in self._positions(item))

    def to_bytes(self) -> bytes:
        """Serialize: version byte, beta (4-byte big-endian), gamma (1 byte),
        the gamma 16-byte salts, then ceil(beta / 8) bytes of bits where bit
        j lives in byte j // 8 under mask 1 << (j % 8)."""
        return (
            bytes([BF_WIRE_VERSION])
            + self.beta.to_bytes(4, "big")
            + bytes([self.gamma])
            + b"".join(self.salts)
            + bytes(self.bits)
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "BloomFilter":
        if len(data) < 6:
            raise ValueError("truncated filter")
        if data[0] != BF_WIRE_VERSION:
            raise ValueError(f"unsupported filter version {data[0]}")
        beta = int.from_bytes(data[1:5], "big")
        gamma = data[5]
        if gamma < 1:
            raise ValueError("index-function count must be at least one")
        salt_end = 6 + gamma * BF_SALT_BYTES
        bits_len = (beta + 7) // 8
        if len(data) != salt_end + bits_len:
            raise ValueError("filter length does not match declared parameters")
        salts = [data[6 + i * BF_SALT_BYTES : 6 + (i + 1) * BF_SALT_BYTES] for i in range(gamma)]
        bf = cls(beta, gamma, salts)
        bf.bits = bytearray(data[salt_end:])
        return bf


@dataclass(frozen=True)
class KeyPair:
    """Raw X25519 key pair (32-byte private and public keys)."""

    private: bytes
    public: bytes

    @classmethod
    def generate(cls) -> "KeyPair":
        priv = X25519PrivateKey.generate()
        return cls(
            private=priv.private_bytes_raw(),
            public=priv.public_key().public_bytes_raw(),
        )


@dataclass(frozen=True)
class SessionKeys:
    """Result of a key agreement: both public keys and the derived shared key."""

    own_keypair: KeyPair
    peer_public: bytes
    shared: bytes


def establish_session(
    own_keypair: KeyPair, peer_public: bytes, initiator_public: bytes
) -> SessionKeys:
    """Run X25519 with the peer and derive the symmetric session key.

    The shared key is the hash of the agreement output concatenated with
    both public keys in initiator-first order, so both endpoints derive
    the identical value and the key is bound to this key-pair pairing.
    ``initiator_public`` must be one of the two endpoint public keys.

    Raises ValueError for malformed or degenerate peer public keys.
    """
    if len(peer_public) != PUBLIC_KEY_BYTES:
        raise ValueError(f"peer public key must be {PUBLIC_KEY_BYTES} bytes")
    if initiator_public == own_keypair.public:
        responder_public = peer_public
    elif initiator_public == peer_public:
        responder_public = own_keypair.public
    else:
        raise ValueError("initiator public key matches neither endpoint")
    private = X25519PrivateKey.from_private_bytes(own_keypair.private)
    secret = private.exchange(X25519PublicKey.from_public_bytes(peer_public))
    if secret == bytes(len(secret)):
        raise ValueError("degenerate peer public key")
    shared = hashlib.sha256(
        _KDF_LABEL + secret + initiator_public + responder_public
    ).digest()
    return SessionKeys(own_keypair=own_keypair, peer_public=peer_public, shared=shared)
