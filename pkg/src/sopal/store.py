"""Capability records: storage, ersatz creation, distribution, expiry.

The store keeps one record per OSN id, flagged member or ersatz.  A
member upload attests the uploader's friend list to the social graph and
creates fresh ersatz records for every friend the store has never seen,
which is what lets two enrolled users discover a non-enrolled common
friend.  Distribution returns the friends' capabilities with ids, plus
anonymous higher-order values for nodes further out; the higher-order
values are derived on request and never persisted.

Degree convention: with maximum degree ``d_max``, collection spans hop
layers 1 through ``d_max + 1``; layer ``i`` contributes values at degree
``i - 1``.  Ids appear only on layer-1 entries.

Persistence is a versioned JSON snapshot written atomically (temp file
then rename); the in-memory store is the source of truth in between.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
import time
from dataclasses import dataclass, replace
from typing import Callable

from sopal.crypto import DEFAULT_CAPABILITY_BITS, hash_chain, new_capability
from sopal.graph import ERSATZ, MEMBER, SocialGraph

SNAPSHOT_VERSION = 1
DEFAULT_TTL_S = 48 * 3600.0


class NotEnrolledError(LookupError):
    """The id has no member record, so it cannot download capabilities."""


@dataclass(frozen=True)
class CapRecord:
    """One stored (id, capability) pair."""

    uid: str
    cap: bytes
    kind: str
    created_at: float
    ttl_s: float
    stale: bool = False

    def expired(self, now: float) -> bool:
        return now - self.created_at > self.ttl_s


@dataclass(frozen=True)
class DistributionResult:
    """What one member downloads: id-bearing layer-1 entries plus
    anonymous (degree, value) pairs for the layers beyond."""

    r_u: tuple[tuple[str, bytes], ...]
    r_h: tuple[tuple[int, bytes], ...]

    def total(self) -> int:
        return len(self.r_u) + len(self.r_h)

    def to_json(self) -> str:
        body = {
            "r_u": [{"id": uid, "cap": cap.hex()} for uid, cap in self.r_u],
            "r_h": [{"degree": deg, "digest": val.hex()} for deg, val in self.r_h],
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "DistributionResult":
        body = json.loads(text)
        r_u = tuple((e["id"], bytes.fromhex(e["cap"])) for e in body["r_u"])
        r_h = tuple((int(e["degree"]), bytes.fromhex(e["digest"])) for e in body["r_h"])
        return cls(r_u=r_u, r_h=r_h)


class _ReadWriteLock:
    """Many concurrent readers, exclusive writers."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    def acquire_read(self):
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1

    def release_read(self):
        with self._cond:
            self._readers -= 1
            if not self._readers:
                self._cond.notify_all()

    def acquire_write(self):
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True

    def release_write(self):
        with self._cond:
            self._writer = False
            self._cond.notify_all()


class CapabilityStore:
    """Persistent store of capability records plus the attested graph.

    Reads (distribute, snapshots) run concurrently; uploads and expiry
    are serialized writes, and readers always see a consistent snapshot.
    ``connector`` supplies authenticated friend lists; any object with a
    ``friends_of(uid)`` method works.  With ``ersatz_enabled`` off the
    store creates no stand-in records and distributes over the
    member-induced subgraph only, which models the pre-ersatz behaviour
    for the simulator's comparison runs.
    """

    def __init__(
        self,
        graph: SocialGraph | None = None,
        connector=None,
        *,
        capability_bits: int = DEFAULT_CAPABILITY_BITS,
        default_ttl_s: float = DEFAULT_TTL_S,
        ersatz_enabled: bool = True,
        clock: Callable[[], float] = time.time,
    ):
        self.graph = graph if graph is not None else SocialGraph()
        self.connector = connector
        self.capability_bits = capability_bits
        self.default_ttl_s = default_ttl_s
        self.ersatz_enabled = ersatz_enabled
        self._clock = clock
        self._records: dict[str, CapRecord] = {}
        self._lock = _ReadWriteLock()

    # -- writes ----------------------------------------------------------

    def upload_capability(self, uid: str, cap: bytes) -> None:
        """Store ``uid``'s capability as a member record.

        Fetches the friend list from the connector first, so a connector
        failure leaves no partial state.  An existing ersatz record is
        overwritten in place, which upgrades the node transparently; a
        re-upload by an existing member just refreshes the value.
        """
        if len(cap) != self.capability_bits // 8:
            raise ValueError(
                f"capability must be {self.capability_bits} bits, got {len(cap) * 8}"
            )
        if self.connector is None:
            raise RuntimeError("store has no OSN connector configured")
        friends = list(self.connector.friends_of(uid))
        now = self._clock()
        self._lock.acquire_write()
        try:
            self.graph.record_member(uid, friends)
            self._records[uid] = CapRecord(uid, cap, MEMBER, now, self.default_ttl_s)
            if self.ersatz_enabled:
                for friend in friends:
                    if friend not in self._records:
                        self._records[friend] = CapRecord(
                            friend,
                            new_capability(self.capability_bits),
                            ERSATZ,
                            now,
                            self.default_ttl_s,
                        )
        finally:
            self._lock.release_write()

    def expire_and_refresh(self, now: float | None = None) -> int:
        """Apply TTLs; returns how many records expired.

        Expired member records are marked stale and drop out of
        distribution until the member re-uploads.  Expired ersatz records
        get fresh random values, so their old values stop matching in any
        later discovery.
        """
        if now is None:
            now = self._clock()
        count = 0
        self._lock.acquire_write()
        try:
            for uid, rec in list(self._records.items()):
                if not rec.expired(now):
                    continue
                if rec.kind == MEMBER and not rec.stale:
                    self._records[uid] = replace(rec, stale=True)
                    count += 1
                elif rec.kind == ERSATZ:
                    self._records[uid] = CapRecord(
                        uid,
                        new_capability(self.capability_bits),
                        ERSATZ,
                        now,
                        self.default_ttl_s,
                    )
                    count += 1
        finally:
            self._lock.release_write()
        return count

    # -- reads -----------------------------------------------------------

    def distribute(self, uid: str, d_max: int) -> DistributionResult:
        """Compute the download for ``uid``: layer-1 pairs with ids, then
        degree ``i - 1`` values for each layer ``i`` up to ``d_max + 1``
        with ids removed.  Higher-order values are derived here and never
        stored.  Deterministic: results are sorted, so repeated calls
        without intervening writes are identical.
        """
        if d_max < 0:
            raise ValueError("maximum degree must be non-negative")
        self._lock.acquire_read()
        try:
            rec = self._records.get(uid)
            if rec is None or rec.kind != MEMBER:
                raise NotEnrolledError(f"{uid!r} has no member record")
            layers = self.graph.layer_friend_sets(
                uid, d_max + 1, member_only=not self.ersatz_enabled
            )
            r_u = []
            for fid in sorted(layers.layer(1)):
                fcap = self._live_cap(fid)
                if fcap is not None:
                    r_u.append((fid, fcap))
            r_h = []
            for i in range(2, d_max + 2):
                degree = i - 1
                for fid in sorted(layers.layer(i)):
                    fcap = self._live_cap(fid)
                    if fcap is not None:
                        r_h.append((degree, hash_chain(fcap, degree)))
            r_h.sort()
        finally:
            self._lock.release_read()
        return DistributionResult(r_u=tuple(r_u), r_h=tuple(r_h))

    def _live_cap(self, uid: str) -> bytes | None:
        rec = self._records.get(uid)
        if rec is None or rec.stale:
            return None
        return rec.cap

    def record_of(self, uid: str) -> CapRecord | None:
        self._lock.acquire_read()
        try:
            return self._records.get(uid)
        finally:
            self._lock.release_read()

    def capability_of(self, uid: str) -> bytes | None:
        rec = self.record_of(uid)
        return rec.cap if rec else None

    def record_count(self) -> int:
        self._lock.acquire_read()
        try:
            return len(self._records)
        finally:
            self._lock.release_read()

    # -- persistence -------------------------------------------------------

    def save_snapshot(self, path) -> None:
        """Write a versioned JSON snapshot atomically (temp file + rename).

        Fields: ``format_version``; store config (``capability_bits``,
        ``default_ttl_s``, ``ersatz_enabled``); ``records`` as objects
        with ``id``, ``cap`` (lowercase hex), ``kind``, ``created_at``,
        ``ttl_s``, ``stale``; graph ``nodes`` as ``{id, kind}`` and
        ``edges`` as ``[low, high]`` pairs.
        """
        self._lock.acquire_read()
        try:
            body = {
                "format_version": SNAPSHOT_VERSION,
                "capability_bits": self.capability_bits,
                "default_ttl_s": self.default_ttl_s,
                "ersatz_enabled": self.ersatz_enabled,
                "records": [
                    {
                        "id": rec.uid,
                        "cap": rec.cap.hex(),
                        "kind": rec.kind,
                        "created_at": rec.created_at,
                        "ttl_s": rec.ttl_s,
                        "stale": rec.stale,
                    }
                    for rec in sorted(self._records.values(), key=lambda r: r.uid)
                ],
                "nodes": [
                    {"id": uid, "kind": kind}
                    for uid, kind in sorted(self.graph.node_kinds().items())
                ],
                "edges": [[u, v] for u, v in self.graph.edges()],
            }
        finally:
            self._lock.release_read()
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".snapshot-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(body, fh, indent=2, sort_keys=True)
                fh.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load_snapshot(
        cls, path, connector=None, *, clock: Callable[[], float] = time.time
    ) -> "CapabilityStore":
        with open(path, "r", encoding="utf-8") as fh:
            body = json.load(fh)
        if body.get("format_version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {body.get('format_version')}")
        store = cls(
            SocialGraph(),
            connector,
            capability_bits=body["capability_bits"],
            default_ttl_s=body["default_ttl_s"],
            ersatz_enabled=body["ersatz_enabled"],
            clock=clock,
        )
        for node in body["nodes"]:
            store.graph._kind[node["id"]] = node["kind"]
            store.graph._adj.setdefault(node["id"], set())
        for u, v in body["edges"]:
            store.graph._adj.setdefault(u, set()).add(v)
            store.graph._adj.setdefault(v, set()).add(u)
        for entry in body["records"]:
            store._records[entry["id"]] = CapRecord(
                uid=entry["id"],
                cap=bytes.fromhex(entry["cap"]),
                kind=entry["kind"],
                created_at=entry["created_at"],
                ttl_s=entry["ttl_s"],
                stale=entry["stale"],
            )
        return store
