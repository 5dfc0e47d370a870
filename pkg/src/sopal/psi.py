"""Two-party private set intersection over an encrypted framed transport.

The protocol runs between an initiator and a responder:

1. Hello exchange.  Each side sends its role, a fresh X25519 public key,
   its claimed OSN identifier and the Bloom filter parameters it intends
   to use, then derives the shared session key.  Every set item is bound
   to the session by appending both public keys (initiator first), so a
   filter captured in one session matches nothing in another.
2. The initiator inserts its bound items into a salted Bloom filter and
   sends it, encrypted.
3. The responder answers with challenge tags for its items that hit the
   filter, in random order.
4. The initiator returns response tags for the challenges it can
   reproduce from its own items.  This removes Bloom filter false
   positives, and both sides finish holding the exact intersection.

Wire envelope (bit-exact): 1 version byte, 1 message-type byte, a
16-byte session id, a 4-byte big-endian payload length, then the
payload.  The Hello and Reject payloads travel in the clear; everything
after the Hello exchange is AEAD ciphertext under the session key with a
per-message counter nonce, with the envelope header authenticated as
associated data.
"""

from __future__ import annotations

import hashlib
import secrets
import struct
from typing import Iterable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from sopal.crypto import (
    BloomFilter,
    KeyPair,
    SessionKeys,
    bf_hash_count,
    bf_optimal_size,
    establish_session,
)

WIRE_VERSION = 1

MSG_HELLO = 1
MSG_BF = 2
MSG_CHAL = 3
MSG_RESP = 4
MSG_REJECT = 5

ROLE_INITIATOR = 1
ROLE_RESPONDER = 2

SESSION_ID_BYTES = 16
HEADER_LEN = 22
TAG_BYTES = 32

DEFAULT_FP_TARGET = 0.001
# Bound on the filter size a peer may declare, against hostile memory blowup.
DEFAULT_BETA_CAP = 2**24
_MAX_PAYLOAD = 2**26
_MAX_ID_BYTES = 65535

_HEADER = struct.Struct(">BB16sI")

_TAG0_LABEL = b"chal0"
_TAG1_LABEL = b"chal1"

PHASE_HELLO = "hello"
PHASE_BF_SENT = "bf_sent"
PHASE_BF_AWAITED = "bf_awaited"
PHASE_CHALLENGED = "challenged"
PHASE_DONE = "done"
PHASE_FAILED = "failed"
PHASE_REJECTED = "rejected"

_TERMINAL = (PHASE_DONE, PHASE_FAILED, PHASE_REJECTED)


class ProtocolError(Exception):
    """A frame could not be processed; the session has moved to failed."""


def _tag0(payload: bytes) -> bytes:
    return hashlib.sha256(_TAG0_LABEL + payload).digest()


def _tag1(payload: bytes) -> bytes:
    return hashlib.sha256(_TAG1_LABEL + payload).digest()


def build_frame(msg_type: int, session_id: bytes, payload: bytes) -> bytes:
    if len(session_id) != SESSION_ID_BYTES:
        raise ValueError(f"session id must be {SESSION_ID_BYTES} bytes")
    return _HEADER.pack(WIRE_VERSION, msg_type, session_id, len(payload)) + payload


def parse_frame(data: bytes) -> tuple[int, bytes, bytes]:
    """Split a frame into (message type, session id, payload)."""
    if len(data) < HEADER_LEN:
        raise ProtocolError("frame shorter than envelope header")
    version, msg_type, session_id, length = _HEADER.unpack_from(data)
    if version != WIRE_VERSION:
        raise ProtocolError(f"unsupported wire version {version}")
    if msg_type not in (MSG_HELLO, MSG_BF, MSG_CHAL, MSG_RESP, MSG_REJECT):
        raise ProtocolError(f"unknown message type {msg_type}")
    if length > _MAX_PAYLOAD:
        raise ProtocolError("declared payload length exceeds limit")
    if len(data) != HEADER_LEN + length:
        raise ProtocolError("frame length does not match declared payload length")
    return msg_type, session_id, data[HEADER_LEN:]


def make_reject(session_id: bytes | None = None) -> bytes:
    """Build a Reject frame telling the peer we will not run discovery."""
    return build_frame(MSG_REJECT, session_id or bytes(SESSION_ID_BYTES), b"")


def _pack_hello(role: int, public: bytes, claimed_id: str, beta: int, gamma: int) -> bytes:
    encoded = claimed_id.encode("utf-8")
    if len(encoded) > _MAX_ID_BYTES:
        raise ValueError("claimed identifier too long")
    return (
        bytes([role])
        + public
        + len(encoded).to_bytes(2, "big")
        + encoded
        + beta.to_bytes(4, "big")
        + bytes([gamma])
    )


def _unpack_hello(payload: bytes) -> tuple[int, bytes, str, int, int]:
    if len(payload) < 1 + 32 + 2 + 4 + 1:
        raise ProtocolError("hello payload truncated")
    role = payload[0]
    public = payload[1:33]
    id_len = int.from_bytes(payload[33:35], "big")
    if len(payload) != 35 + id_len + 5:
        raise ProtocolError("hello payload length mismatch")
    try:
        claimed_id = payload[35 : 35 + id_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError("claimed identifier is not valid UTF-8") from exc
    beta = int.from_bytes(payload[35 + id_len : 39 + id_len], "big")
    gamma = payload[39 + id_len]
    return role, public, claimed_id, beta, gamma


def _pack_tags(tags: list[bytes]) -> bytes:
    return len(tags).to_bytes(4, "big") + b"".join(tags)


def _unpack_tags(payload: bytes) -> set[bytes]:
    if len(payload) < 4:
        raise ProtocolError("tag list truncated")
    count = int.from_bytes(payload[:4], "big")
    if len(payload) != 4 + count * TAG_BYTES:
        raise ProtocolError("tag list length mismatch")
    return {payload[4 + i * TAG_BYTES : 4 + (i + 1) * TAG_BYTES] for i in range(count)}


class PsiSession:
    """One endpoint of a discovery transcript, driven message by message.

    Construct with :meth:`start_initiator` or :meth:`start_responder`,
    then feed every inbound frame to :meth:`step`, sending whatever it
    returns.  Phase transitions are monotone along the fixed flow: any
    out-of-order, malformed or unauthenticated frame moves the session to
    the failed phase and raises :class:`ProtocolError`.  A Reject frame
    terminates cleanly at any point.

    A session is single-threaded state; run concurrent discoveries with
    independent sessions.
    """

    def __init__(
        self,
        role: int,
        values: Iterable[bytes],
        keypair: KeyPair,
        claimed_id: str,
        *,
        fp_target: float = DEFAULT_FP_TARGET,
        beta_cap: int = DEFAULT_BETA_CAP,
        beta_override: int | None = None,
        gamma_override: int | None = None,
        record_transcript: bool = False,
    ):
        self.role = role
        self.phase = PHASE_HELLO
        self.own_keypair = keypair
        self.claimed_id = claimed_id
        self.failure_reason: str | None = None
        self.peer_claimed_id: str | None = None
        self.peer_public: bytes | None = None
        self.keys: SessionKeys | None = None

        self._values = [bytes(v) for v in values]
        self._payloads: list[bytes] = []
        self._value_by_payload: dict[bytes, bytes] = {}
        self._candidates: dict[bytes, bytes] = {}
        self._intersection: set[bytes] | None = None

        self._fp_target = fp_target
        self._beta_cap = beta_cap
        alpha = len(self._values)
        self.declared_beta = (
            beta_override if beta_override is not None else bf_optimal_size(alpha, fp_target)
        )
        self.declared_gamma = (
            gamma_override
            if gamma_override is not None
            else bf_hash_count(alpha, self.declared_beta)
        )
        self.peer_beta: int | None = None
        self.peer_gamma: int | None = None

        self.session_id = (
            secrets.token_bytes(SESSION_ID_BYTES) if role == ROLE_INITIATOR else b""
        )
        self._send_counter = 0
        self._recv_counter = 0
        self._rng = secrets.SystemRandom()
        # Testing hook: decrypted payloads of every encrypted message, as
        # (direction, message type, plaintext) triples.
        self.transcript_plaintexts: list[tuple[str, int, bytes]] | None = (
            [] if record_transcript else None
        )

    # -- construction ---------------------------------------------------

    @classmethod
    def start_initiator(
        cls, values: Iterable[bytes], keypair: KeyPair, claimed_id: str, **kwargs
    ) -> tuple["PsiSession", bytes]:
        """Create the initiating endpoint; returns the session and its Hello frame."""
        session = cls(ROLE_INITIATOR, values, keypair, claimed_id, **kwargs)
        hello = build_frame(MSG_HELLO, session.session_id, session._own_hello())
        return session, hello

    @classmethod
    def start_responder(
        cls, values: Iterable[bytes], keypair: KeyPair, claimed_id: str, **kwargs
    ) -> "PsiSession":
        """Create the responding endpoint; it speaks only via :meth:`step`."""
        return cls(ROLE_RESPONDER, values, keypair, claimed_id, **kwargs)

    def _own_hello(self) -> bytes:
        return _pack_hello(
            self.role,
            self.own_keypair.public,
            self.claimed_id,
            self.declared_beta,
            self.declared_gamma,
        )

    # -- results ----------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.phase in (PHASE_DONE, PHASE_REJECTED)

    @property
    def intersection(self) -> frozenset[bytes]:
        """Final intersection as session-bound payloads."""
        if self._intersection is None:
            raise ProtocolError("session has not completed")
        return frozenset(self._intersection)

    @property
    def matched_values(self) -> frozenset[bytes]:
        """Final intersection mapped back to the caller's input values."""
        return frozenset(self._value_by_payload[p] for p in self.intersection)

    @property
    def bound_payloads(self) -> tuple[bytes, ...]:
        """Session-bound items (value with both public keys appended)."""
        return tuple(self._payloads)

    # -- state machine ----------------------------------------------------

    def step(self, data: bytes) -> tuple[bytes | None, bool]:
        """Process one inbound frame.

        Returns (outbound frame or None, done flag).  Raises
        :class:`ProtocolError` and parks the session in the failed phase
        when the frame cannot be processed.
        """
        if self.phase in _TERMINAL:
            raise ProtocolError(f"session already terminated ({self.phase})")
        try:
            msg_type, session_id, payload = parse_frame(data)
            if msg_type == MSG_REJECT:
                self.phase = PHASE_REJECTED
                self._intersection = set()
                return None, True
            if self.role == ROLE_RESPONDER and self.phase == PHASE_HELLO:
                self.session_id = session_id
            elif session_id != self.session_id:
                raise ProtocolError("frame carries a different session id")
            return self._dispatch(msg_type, payload)
        except ProtocolError as exc:
            self._fail(str(exc))
            raise

    def _dispatch(self, msg_type: int, payload: bytes) -> tuple[bytes | None, bool]:
        key = (self.role, self.phase, msg_type)
        if key == (ROLE_RESPONDER, PHASE_HELLO, MSG_HELLO):
            return self._on_initiator_hello(payload)
        if key == (ROLE_INITIATOR, PHASE_HELLO, MSG_HELLO):
            return self._on_responder_hello(payload)
        if key == (ROLE_RESPONDER, PHASE_BF_AWAITED, MSG_BF):
            return self._on_filter(payload)
        if key == (ROLE_INITIATOR, PHASE_BF_SENT, MSG_CHAL):
            return self._on_challenge(payload)
        if key == (ROLE_RESPONDER, PHASE_CHALLENGED, MSG_RESP):
            return self._on_response(payload)
        raise ProtocolError(
            f"message type {msg_type} not valid in phase {self.phase} for role {self.role}"
        )

    def _fail(self, reason: str) -> None:
        if self.phase != PHASE_FAILED:
            self.phase = PHASE_FAILED
            self.failure_reason = reason

    def _accept_peer_hello(self, payload: bytes, expected_role: int) -> None:
        role, public, claimed_id, beta, gamma = _unpack_hello(payload)
        if role != expected_role:
            raise ProtocolError(f"unexpected role byte {role} in hello")
        if beta > self._beta_cap:
            raise ProtocolError(
                f"peer declared an oversized filter ({beta} bits > cap {self._beta_cap})"
            )
        if gamma < 1:
            raise ProtocolError("peer declared zero index functions")
        self.peer_public = public
        self.peer_claimed_id = claimed_id
        self.peer_beta = beta
        self.peer_gamma = gamma
        initiator_public = public if self.role == ROLE_RESPONDER else self.own_keypair.public
        try:
            self.keys = establish_session(self.own_keypair, public, initiator_public)
        except ValueError as exc:
            raise ProtocolError(f"key agreement failed: {exc}") from exc
        self._bind_items(initiator_public)

    def _bind_items(self, initiator_public: bytes) -> None:
        responder_public = (
            self.peer_public if self.role == ROLE_INITIATOR else self.own_keypair.public
        )
        assert self.peer_public is not None
        suffix = initiator_public + responder_public
        self._payloads = [v + suffix for v in self._values]
        self._value_by_payload = dict(zip(self._payloads, self._values))

    def _on_initiator_hello(self, payload: bytes) -> tuple[bytes, bool]:
        self._accept_peer_hello(payload, ROLE_INITIATOR)
        self.phase = PHASE_BF_AWAITED
        return build_frame(MSG_HELLO, self.session_id, self._own_hello()), False

    def _on_responder_hello(self, payload: bytes) -> tuple[bytes, bool]:
        self._accept_peer_hello(payload, ROLE_RESPONDER)
        bf = BloomFilter(self.declared_beta, self.declared_gamma)
        for item in self._payloads:
            bf.insert(item)
        self.phase = PHASE_BF_SENT
        return self._seal(MSG_BF, bf.to_bytes()), False

    def _on_filter(self, ciphertext: bytes) -> tuple[bytes, bool]:
        plaintext = self._open(MSG_BF, ciphertext)
        try:
            bf = BloomFilter.from_bytes(plaintext)
        except ValueError as exc:
            raise ProtocolError(f"malformed filter: {exc}") from exc
        if bf.beta != self.peer_beta or bf.gamma != self.peer_gamma:
            raise ProtocolError("filter does not match the declared parameters")
        candidates = [p for p in self._payloads if p in bf]
        self._candidates = {_tag0(p): p for p in candidates}
        tags = list(self._candidates)
        self._rng.shuffle(tags)
        self.phase = PHASE_CHALLENGED
        return self._seal(MSG_CHAL, _pack_tags(tags)), False

    def _on_challenge(self, ciphertext: bytes) -> tuple[bytes, bool]:
        received = _unpack_tags(self._open(MSG_CHAL, ciphertext))
        matched = [p for p in self._payloads if _tag0(p) in received]
        self._intersection = set(matched)
        proof = [_tag1(p) for p in matched]
        self._rng.shuffle(proof)
        self.phase = PHASE_DONE
        return self._seal(MSG_RESP, _pack_tags(proof)), True

    def _on_response(self, ciphertext: bytes) -> tuple[None, bool]:
        received = _unpack_tags(self._open(MSG_RESP, ciphertext))
        self._intersection = {
            p for p in self._candidates.values() if _tag1(p) in received
        }
        self.phase = PHASE_DONE
        return None, True

    # -- encryption -------------------------------------------------------

    def _nonce(self, sender_role: int, counter: int) -> bytes:
        return bytes([sender_role]) + b"\x00\x00\x00" + counter.to_bytes(8, "big")

    def _aad(self, msg_type: int) -> bytes:
        return bytes([WIRE_VERSION, msg_type]) + self.session_id

    def _seal(self, msg_type: int, plaintext: bytes) -> bytes:
        assert self.keys is not None
        nonce = self._nonce(self.role, self._send_counter)
        self._send_counter += 1
        ciphertext = ChaCha20Poly1305(self.keys.shared).encrypt(
            nonce, plaintext, self._aad(msg_type)
        )
        if self.transcript_plaintexts is not None:
            self.transcript_plaintexts.append(("sent", msg_type, plaintext))
        return build_frame(msg_type, self.session_id, ciphertext)

    def _open(self, msg_type: int, ciphertext: bytes) -> bytes:
        assert self.keys is not None
        peer_role = ROLE_RESPONDER if self.role == ROLE_INITIATOR else ROLE_INITIATOR
        nonce = self._nonce(peer_role, self._recv_counter)
        try:
            plaintext = ChaCha20Poly1305(self.keys.shared).decrypt(
                nonce, ciphertext, self._aad(msg_type)
            )
        except InvalidTag as exc:
            raise ProtocolError("message failed to authenticate") from exc
        self._recv_counter += 1
        if self.transcript_plaintexts is not None:
            self.transcript_plaintexts.append(("received", msg_type, plaintext))
        return plaintext


def recv_frame(sock) -> bytes:
    """Read exactly one frame from a stream socket."""
    header = _recv_exact(sock, HEADER_LEN)
    length = int.from_bytes(header[18:22], "big")
    if length > _MAX_PAYLOAD:
        raise ProtocolError("declared payload length exceeds limit")
    return header + _recv_exact(sock, length)


def send_frame(sock, frame: bytes) -> None:
    sock.sendall(frame)


def _recv_exact(sock, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ProtocolError("peer closed the connection mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)
