"""Client-side discovery: input set construction, the discovery session
API, and path-length computation.

A client downloads its capability view from the server, expands every
received value along the hash chain up to the configured maximum degree,
adds its own capability as a self item, and runs the set-intersection
protocol against a peer.  Each matched item with received degree ``i``
and item degree ``m`` witnesses a path of length ``i + m + 2`` through
the item's owner; a match against the self item, or against an
id-bearing degree-0 entry whose id equals the peer's claimed id, means
the peers are direct friends (length 1).  The reported distance is the
minimum over all matches.  Common-friend identifiers are revealed only
for length-2 matches; anything longer stays anonymous.

The session surface is the four basic calls (``startSoPaLSession``,
``handleSoPaLMessage``, ``getResult``, ``endSoPaLSession``) plus the
advanced ``rejectSoPaLSession``, ``updateCapabilities`` and
``renewCapability``.  Frames are opaque byte strings, so any carrier
(socket, short-range link, file pipe) can relay them.
"""

from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable

from sopal.crypto import (
    DEFAULT_CAPABILITY_BITS,
    KeyPair,
    hash_chain,
    new_capability,
)
from sopal.psi import (
    DEFAULT_BETA_CAP,
    DEFAULT_FP_TARGET,
    PHASE_DONE,
    ProtocolError,
    PsiSession,
    make_reject,
)
from sopal.store import CapabilityStore, DistributionResult, NotEnrolledError


class SessionError(Exception):
    """A discovery session is missing, unfinished, or ended abnormally."""


@dataclass(frozen=True)
class AnnotatedItem:
    """One entry of the discovery input set.

    ``value`` is the capability value at degree ``item_degree`` (m),
    derived from a value received at degree ``received_degree`` (i) by
    hashing ``m - i`` times.  ``friend_id`` is set only for degree-0
    entries that arrived with an id; the self item is the client's own
    capability and is never derived.
    """

    value: bytes
    received_degree: int
    item_degree: int
    friend_id: str | None = None
    is_self: bool = False

    def __post_init__(self):
        if self.item_degree < self.received_degree:
            raise ValueError("item degree cannot be below the received degree")
        if self.is_self and (self.received_degree or self.item_degree):
            raise ValueError("the self item is never derived")
        if self.friend_id is not None and self.received_degree != 0:
            raise ValueError("ids only accompany degree-0 entries")


@dataclass(frozen=True)
class DistResult:
    """Outcome of one discovery run.

    ``dist`` is None when no path was found within range.  Common-friend
    ids are populated only when the distance is at most 2.
    """

    dist: int | None
    common_friend_ids: frozenset[str]
    match_count: int


def build_input_set(
    distribution: DistributionResult, own_cap: bytes, d_max: int
) -> list[AnnotatedItem]:
    """Expand a download into the full discovery input set.

    Every received entry of degree i yields items at degrees i..d_max,
    plus one self item at degree 0; the result has exactly
    ``1 + sum(len(entries at degree i) * (d_max - i + 1))`` items.
    """
    items = [
        AnnotatedItem(value=own_cap, received_degree=0, item_degree=0, is_self=True)
    ]
    for friend_id, cap in distribution.r_u:
        for m in range(0, d_max + 1):
            items.append(
                AnnotatedItem(
                    value=hash_chain(cap, m),
                    received_degree=0,
                    item_degree=m,
                    friend_id=friend_id,
                )
            )
    for degree, value in distribution.r_h:
        if not 1 <= degree <= d_max:
            raise ValueError(f"received degree {degree} outside [1, {d_max}]")
        for m in range(degree, d_max + 1):
            items.append(
                AnnotatedItem(
                    value=hash_chain(value, m - degree),
                    received_degree=degree,
                    item_degree=m,
                )
            )
    return items


class LocalServerHandle:
    """In-process server access for tests and the simulator."""

    def __init__(self, store: CapabilityStore, connector):
        self._store = store
        self._connector = connector

    def upload(self, token: str, cap: bytes) -> None:
        self._store.upload_capability(self._connector.authenticate(token), cap)

    def download(self, token: str, d_max: int) -> DistributionResult:
        return self._store.distribute(self._connector.authenticate(token), d_max)


class HttpServerHandle:
    """Server access over HTTP, matching :mod:`sopal.server`'s routes."""

    def __init__(self, base_url: str, *, timeout_s: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s

    def _request(self, req: urllib.request.Request) -> bytes:
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            detail = ""
            try:
                detail = json.loads(exc.read().decode("utf-8")).get("error", "")
            except Exception:
                pass
            if exc.code == 401:
                raise PermissionError(f"authentication failed: {detail}") from exc
            if exc.code == 403:
                raise NotEnrolledError(detail or "not enrolled") from exc
            raise RuntimeError(f"server returned {exc.code}: {detail}") from exc

    def upload(self, token: str, cap: bytes) -> None:
        req = urllib.request.Request(
            f"{self.base_url}/v1/capability",
            data=cap.hex().encode("ascii"),
            headers={"Authorization": f"Bearer {token}"},
            method="POST",
        )
        self._request(req)

    def download(self, token: str, d_max: int) -> DistributionResult:
        req = urllib.request.Request(
            f"{self.base_url}/v1/capabilities?dmax={d_max}",
            headers={"Authorization": f"Bearer {token}"},
        )
        return DistributionResult.from_json(self._request(req).decode("utf-8"))


class _ClientSession:
    def __init__(self, psi: PsiSession, items_by_value: dict[bytes, AnnotatedItem]):
        self.psi = psi
        self.items_by_value = items_by_value
        self.result: DistResult | None = None
        self.status = "active"


class DiscoveryClient:
    """One user's discovery endpoint.

    The capability cache (the input set) is shared by all sessions and
    refreshed under a writer lock; each discovery session snapshots it at
    creation, and many sessions may run concurrently.
    """

    def __init__(
        self,
        uid: str,
        server,
        *,
        token: str | None = None,
        d_max: int = 1,
        fp_target: float = DEFAULT_FP_TARGET,
        capability_bits: int = DEFAULT_CAPABILITY_BITS,
        beta_cap: int = DEFAULT_BETA_CAP,
    ):
        self.uid = uid
        self.d_max = d_max
        self._server = server
        self._token = token if token is not None else f"mock:{uid}"
        self._fp_target = fp_target
        self._capability_bits = capability_bits
        self._beta_cap = beta_cap
        self._own_cap: bytes | None = None
        self._items: list[AnnotatedItem] = []
        self._cache_lock = threading.Lock()
        self._sessions: dict[str, _ClientSession] = {}

    # -- capability refresh ---------------------------------------------

    def renew_capability(self) -> None:
        """Generate a fresh capability, upload it, and rebuild the self item.

        A transport failure leaves the previous state intact.
        """
        cap = new_capability(self._capability_bits)
        self._server.upload(self._token, cap)
        with self._cache_lock:
            self._own_cap = cap
            self._items = [it for it in self._items if not it.is_self]
            self._items.insert(
                0, AnnotatedItem(value=cap, received_degree=0, item_degree=0, is_self=True)
            )

    def update_capabilities(self) -> None:
        """Re-download the distribution and rebuild the input set."""
        if self._own_cap is None:
            raise RuntimeError("renew_capability must run before update_capabilities")
        distribution = self._server.download(self._token, self.d_max)
        items = build_input_set(distribution, self._own_cap, self.d_max)
        with self._cache_lock:
            self._items = items

    def input_items(self) -> list[AnnotatedItem]:
        with self._cache_lock:
            return list(self._items)

    # -- session API -------------------------------------------------------

    def start_session(self, device_id: str) -> bytes:
        """Open a discovery session toward ``device_id``; returns the first frame."""
        if device_id in self._sessions:
            raise SessionError(f"session with {device_id!r} already open")
        items_by_value = self._snapshot_items()
        psi, hello = PsiSession.start_initiator(
            list(items_by_value),
            KeyPair.generate(),
            self.uid,
            fp_target=self._fp_target,
            beta_cap=self._beta_cap,
        )
        self._sessions[device_id] = _ClientSession(psi, items_by_value)
        return hello

    def handle_message(self, device_id: str, data: bytes) -> tuple[bytes | None, bool]:
        """Feed one received frame; returns (reply or None, finished flag)."""
        session = self._sessions.get(device_id)
        if session is None:
            items_by_value = self._snapshot_items()
            psi = PsiSession.start_responder(
                list(items_by_value),
                KeyPair.generate(),
                self.uid,
                fp_target=self._fp_target,
                beta_cap=self._beta_cap,
            )
            session = _ClientSession(psi, items_by_value)
            self._sessions[device_id] = session
        try:
            reply, finished = session.psi.step(data)
        except ProtocolError:
            if session.result is None:
                session.status = "failed"
            return None, True
        if finished:
            if session.psi.phase == PHASE_DONE:
                session.result = self._compute_result(session)
                session.status = "done"
            else:
                session.status = "rejected"
        return reply, finished

    def get_result(self, device_id: str) -> DistResult:
        session = self._sessions.get(device_id)
        if session is None:
            raise SessionError(f"no session with {device_id!r}")
        if session.result is None:
            raise SessionError(f"session with {device_id!r} is {session.status}")
        return session.result

    def end_session(self, device_id: str) -> bool:
        """Release all state for the session; True if one existed."""
        return self._sessions.pop(device_id, None) is not None

    def reject_session(self) -> bytes:
        """A frame telling a peer we will not run discovery."""
        return make_reject()

    # The session surface under its canonical method names.
    startSoPaLSession = start_session
    handleSoPaLMessage = handle_message
    getResult = get_result
    endSoPaLSession = end_session
    rejectSoPaLSession = reject_session
    updateCapabilities = update_capabilities
    renewCapability = renew_capability

    # -- internals -----------------------------------------------------------

    def _snapshot_items(self) -> dict[bytes, AnnotatedItem]:
        with self._cache_lock:
            items = list(self._items)
        by_value: dict[bytes, AnnotatedItem] = {}
        for item in items:
            other = by_value.get(item.value)
            if other is None or self._prefer(item, other):
                by_value[item.value] = item
        return by_value

    @staticmethod
    def _prefer(item: AnnotatedItem, other: AnnotatedItem) -> bool:
        # Value collisions across distinct capabilities are vanishingly
        # rare; if one happens, keep the shortest-path interpretation.
        if item.is_self != other.is_self:
            return item.is_self
        return (item.received_degree + item.item_degree) < (
            other.received_degree + other.item_degree
        )

    def _compute_result(self, session: _ClientSession) -> DistResult:
        peer_id = session.psi.peer_claimed_id
        lengths = []
        common: set[str] = set()
        for value in session.psi.matched_values:
            item = session.items_by_value[value]
            direct = item.is_self or (
                item.received_degree == 0
                and item.item_degree == 0
                and item.friend_id is not None
                and item.friend_id == peer_id
            )
            if direct:
                lengths.append(1)
                continue
            length = item.received_degree + item.item_degree + 2
            lengths.append(length)
            if length == 2 and item.friend_id is not None:
                common.add(item.friend_id)
        dist = min(lengths) if lengths else None
        return DistResult(
            dist=dist, common_friend_ids=frozenset(common), match_count=len(lengths)
        )

    # -- transports ------------------------------------------------------------

    def run_discovery(
        self,
        device_id: str,
        send: Callable[[bytes], None],
        recv: Callable[[], bytes],
        *,
        initiate: bool,
    ) -> DistResult:
        """Drive a whole session over a byte-frame transport."""
        if initiate:
            send(self.start_session(device_id))
        while True:
            reply, finished = self.handle_message(device_id, recv())
            if reply is not None:
                send(reply)
            if finished:
                return self.get_result(device_id)


def run_discovery_pair(a: DiscoveryClient, b: DiscoveryClient) -> tuple[DistResult, DistResult]:
    """Run one full discovery between two in-process clients.

    ``a`` initiates; returns both end results."""
    frame = a.start_session(b.uid)
    while True:
        frame_b, done_b = b.handle_message(a.uid, frame)
        if frame_b is None:
            break
        frame_a, done_a = a.handle_message(b.uid, frame_b)
        if frame_a is None:
            break
        frame = frame_a
    return a.get_result(b.uid), b.get_result(a.uid)
