"""The network face of the capability service.

A small threaded HTTP server exposes capability upload and download plus
a health check, authenticated by bearer tokens that a mock OSN connector
resolves to user ids.  Real OSN authentication is out of scope; the
connector is an ordinary object so another OSN plugin can replace it.

Routes:

* ``POST /v1/capability`` with the capability as lowercase hex in the body
* ``GET /v1/capabilities?dmax=N`` returning the distribution as JSON
* ``GET /v1/health``

All routes take ``Authorization: Bearer <token>``.  The server runs over
TLS when given a certificate, or in loudly flagged plaintext test mode.

:func:`load_probe` is the matching measurement client: it fires bursts
of requests per second at a running server and reports per-second
response counts, the latency distribution, and the first rate at which
the server saturates.
"""

from __future__ import annotations

import json
import logging
import secrets
import ssl
import statistics
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Mapping, Sequence

from sopal.store import CapabilityStore, NotEnrolledError

logger = logging.getLogger(__name__)

MOCK_TOKEN_PREFIX = "mock:"


class AuthError(Exception):
    """The presented token does not authenticate any OSN user."""


class ConnectorError(Exception):
    """The OSN connector could not serve the request."""


@dataclass(frozen=True)
class AuthToken:
    token: str
    uid: str
    expires_at: float


class MockOsnConnector:
    """Stand-in for a real OSN: authentication plus friend-list queries.

    Backed by a ground-truth adjacency (typically loaded from an edge-list
    file).  In test mode it accepts ``mock:<uid>`` bearer tokens for any
    known OSN user; explicitly issued tokens carry an expiry.
    """

    def __init__(
        self,
        adjacency: Mapping[str, set[str]],
        *,
        accept_mock_tokens: bool = True,
        clock: Callable[[], float] = time.time,
    ):
        self._adjacency = adjacency
        self._accept_mock = accept_mock_tokens
        self._clock = clock
        self._issued: dict[str, AuthToken] = {}
        self._lock = threading.Lock()

    def issue_token(self, uid: str, ttl_s: float = 3600.0) -> AuthToken:
        if uid not in self._adjacency:
            raise ConnectorError(f"unknown OSN user {uid!r}")
        token = AuthToken(secrets.token_urlsafe(16), uid, self._clock() + ttl_s)
        with self._lock:
            self._issued[token.token] = token
        return token

    def authenticate(self, token: str) -> str:
        """Resolve a bearer token to a uid, or raise :class:`AuthError`."""
        if self._accept_mock and token.startswith(MOCK_TOKEN_PREFIX):
            uid = token[len(MOCK_TOKEN_PREFIX) :]
            if uid in self._adjacency:
                return uid
            raise AuthError(f"mock token names unknown user {uid!r}")
        with self._lock:
            issued = self._issued.get(token)
        if issued is None:
            raise AuthError("unknown token")
        if self._clock() > issued.expires_at:
            raise AuthError("token expired")
        return issued.uid

    def friends_of(self, uid: str) -> list[str]:
        """The user's complete OSN adjacency, as the OSN would report it."""
        if uid not in self._adjacency:
            raise ConnectorError(f"unknown OSN user {uid!r}")
        return sorted(self._adjacency[uid])


def _json_bytes(body: dict) -> bytes:
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")


class _Handler(BaseHTTPRequestHandler):
    server_version = "sopal/0.1"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        logger.debug("%s %s", self.address_string(), fmt % args)

    @property
    def _ctx(self) -> "SopalHttpServer":
        return self.server.sopal  # type: ignore[attr-defined]

    def _send_json(self, code: int, body: dict) -> None:
        data = _json_bytes(body)
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _authenticate(self) -> str | None:
        header = self.headers.get("Authorization", "")
        if not header.startswith("Bearer "):
            self._send_json(401, {"error": "missing bearer token"})
            return None
        try:
            return self._ctx.connector.authenticate(header[len("Bearer ") :].strip())
        except AuthError as exc:
            self._send_json(401, {"error": str(exc)})
            return None

    def _with_work(self, fn) -> None:
        ctx = self._ctx
        if ctx.concurrency_gate is not None:
            with ctx.concurrency_gate:
                if ctx.simulated_work_s:
                    time.sleep(ctx.simulated_work_s)
                fn()
        else:
            if ctx.simulated_work_s:
                time.sleep(ctx.simulated_work_s)
            fn()

    def do_GET(self):
        self._with_work(self._get)

    def do_POST(self):
        self._with_work(self._post)

    def _get(self):
        path, _, query = self.path.partition("?")
        if path == "/v1/health":
            self._send_json(200, {"status": "ok", "records": self._ctx.store.record_count()})
            return
        if path != "/v1/capabilities":
            self._send_json(404, {"error": "no such route"})
            return
        uid = self._authenticate()
        if uid is None:
            return
        d_max = self._ctx.d_max
        for part in query.split("&"):
            if part.startswith("dmax="):
                try:
                    d_max = int(part[len("dmax=") :])
                except ValueError:
                    self._send_json(400, {"error": "dmax must be an integer"})
                    return
        d_max = max(0, min(d_max, self._ctx.d_max))
        try:
            result = self._ctx.store.distribute(uid, d_max)
        except NotEnrolledError as exc:
            self._send_json(403, {"error": "not-enrolled", "detail": str(exc)})
            return
        data = result.to_json().encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _post(self):
        if self.path.partition("?")[0] != "/v1/capability":
            self._send_json(404, {"error": "no such route"})
            return
        uid = self._authenticate()
        if uid is None:
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length).decode("ascii").strip()
            cap = bytes.fromhex(raw)
        except (ValueError, UnicodeDecodeError):
            self._send_json(400, {"error": "body must be the capability as hex"})
            return
        try:
            self._ctx.store.upload_capability(uid, cap)
        except ValueError as exc:
            self._send_json(400, {"error": str(exc)})
            return
        except ConnectorError as exc:
            self._send_json(502, {"error": f"connector failure: {exc}"})
            return
        self._send_json(200, {"status": "ok"})


class SopalHttpServer:
    """Single-instance capability server.

    Handles requests concurrently on top of the store's reader/writer
    contract.  ``simulated_work_s`` and ``max_concurrent`` model a
    per-request backend cost and a bounded handler pool, which makes
    saturation behaviour observable at desk scale for the load probe.
    """

    def __init__(
        self,
        store: CapabilityStore,
        connector: MockOsnConnector,
        host: str = "127.0.0.1",
        port: int = 0,
        *,
        d_max: int = 1,
        tls_cert: str | None = None,
        tls_key: str | None = None,
        insecure_plaintext: bool = False,
        simulated_work_s: float = 0.0,
        max_concurrent: int | None = None,
    ):
        if not tls_cert and not insecure_plaintext:
            raise ValueError(
                "refusing to start without TLS; pass insecure_plaintext=True for test use"
            )
        self.store = store
        self.connector = connector
        self.d_max = d_max
        self.simulated_work_s = simulated_work_s
        self.concurrency_gate = (
            threading.Semaphore(max_concurrent) if max_concurrent else None
        )
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.daemon_threads = True
        self._httpd.sopal = self  # type: ignore[attr-defined]
        self._scheme = "http"
        if tls_cert:
            ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            ctx.load_cert_chain(tls_cert, tls_key)
            self._httpd.socket = ctx.wrap_socket(self._httpd.socket, server_side=True)
            self._scheme = "https"
        else:
            logger.warning(
                "serving PLAINTEXT HTTP on %s:%d; this mode is for tests only",
                *self._httpd.server_address[:2],
            )
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"{self._scheme}://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "SopalHttpServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


# -- load probe -------------------------------------------------------------


@dataclass
class RateSample:
    """Measurements for one offered request rate."""

    rate: int
    duration_s: float
    sent: int
    received: int
    failed: int
    latencies_s: list[float] = field(default_factory=list)
    per_second_received: list[int] = field(default_factory=list)

    @property
    def median_latency_s(self) -> float:
        return statistics.median(self.latencies_s) if self.latencies_s else float("inf")

    @property
    def responses_per_second(self) -> float:
        return self.received / self.duration_s if self.duration_s else 0.0

    @property
    def peak_responses_per_second(self) -> int:
        """Largest one-second completion count; the plateau indicator."""
        return max(self.per_second_received, default=0)


@dataclass
class LoadReport:
    """Sweep result: per-rate samples, the single-request baseline, and the
    saturation knee (first rate whose median latency exceeds five times the
    baseline)."""

    baseline_latency_s: float
    duration_s: float
    samples: list[RateSample]
    knee_rate: int | None

    def to_text(self) -> str:
        lines = [
            f"baseline latency: {self.baseline_latency_s * 1000:.1f} ms",
            f"duration per rate: {self.duration_s:.1f} s",
            "rate sent received failed peak_resp/s median_ms",
        ]
        for s in self.samples:
            lines.append(
                f"{s.rate:4d} {s.sent:4d} {s.received:8d} {s.failed:6d} "
                f"{s.peak_responses_per_second:11d} {s.median_latency_s * 1000:9.1f}"
            )
        knee = f"{self.knee_rate} req/s" if self.knee_rate is not None else "not reached"
        lines.append(f"saturation knee: {knee}")
        return "\n".join(lines)


def _timed_request(url: str, token: str, timeout_s: float) -> tuple[float, float]:
    """Issue one download; returns (latency, completion timestamp)."""
    req = urllib.request.Request(url, headers={"Authorization": f"Bearer {token}"})
    start = time.perf_counter()
    with urllib.request.urlopen(req, timeout=timeout_s) as resp:
        resp.read()
        if resp.status != 200:
            raise RuntimeError(f"status {resp.status}")
    end = time.perf_counter()
    return end - start, end


def load_probe(
    base_url: str,
    token: str,
    rates: Sequence[int],
    duration_s: float = 5.0,
    *,
    dmax: int = 1,
    timeout_s: float = 30.0,
) -> LoadReport:
    """Measure a running server with bursts of ``rate`` download requests
    per second for each rate in ``rates``.

    Every request is accounted as received or failed, so
    ``sent == received + failed`` per sample.
    """
    url = f"{base_url}/v1/capabilities?dmax={dmax}"
    baseline_lats = [_timed_request(url, token, timeout_s)[0] for _ in range(5)]
    baseline = statistics.median(baseline_lats)

    samples = []
    for rate in rates:
        seconds = max(1, round(duration_s))
        sent = rate * seconds
        latencies: list[float] = []
        finish_times: list[float] = []
        failed = 0
        with ThreadPoolExecutor(max_workers=min(512, max(8, rate * 2))) as pool:
            futures = []
            start = time.perf_counter()
            for sec in range(seconds):
                for _ in range(rate):
                    futures.append(pool.submit(_timed_request, url, token, timeout_s))
                next_tick = start + sec + 1
                pause = next_tick - time.perf_counter()
                if pause > 0:
                    time.sleep(pause)
            for fut in futures:
                try:
                    latency, finished_at = fut.result()
                except Exception:
                    failed += 1
                else:
                    latencies.append(latency)
                    finish_times.append(finished_at - start)
        per_second = [0] * (int(max(finish_times, default=0.0)) + 1)
        for t in finish_times:
            per_second[int(t)] += 1
        latencies.sort()
        samples.append(
            RateSample(
                rate=rate,
                duration_s=float(seconds),
                sent=sent,
                received=len(latencies),
                failed=failed,
                latencies_s=latencies,
                per_second_received=per_second,
            )
        )

    knee = None
    for s in samples:
        if s.median_latency_s > 5 * baseline:
            knee = s.rate
            break
    return LoadReport(
        baseline_latency_s=baseline,
        duration_s=float(duration_s),
        samples=samples,
        knee_rate=knee,
    )
