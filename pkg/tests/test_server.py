"""HTTP endpoints, authentication, and the load probe."""

import json
import urllib.error
import urllib.request

import pytest

from sopal.crypto import new_capability
from sopal.graph import SocialGraph
from sopal.server import (
    AuthError,
    ConnectorError,
    MockOsnConnector,
    SopalHttpServer,
    load_probe,
)
from sopal.store import CapabilityStore

from helpers import adjacency_from_edges


GROUND = adjacency_from_edges(
    [("A", "B"), ("A", "C"), ("B", "C"), ("C", "D"), ("D", "E")]
)


@pytest.fixture(scope="module")
def world():
    connector = MockOsnConnector(GROUND)
    store = CapabilityStore(SocialGraph(), connector)
    server = SopalHttpServer(store, connector, d_max=2, insecure_plaintext=True)
    server.start()
    yield store, connector, server
    server.stop()


def request(server, method, path, token=None, body=None):
    headers = {}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    req = urllib.request.Request(
        f"{server.url}{path}", data=body, headers=headers, method=method
    )
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


class TestConnector:
    def test_mock_token_resolves_known_user(self):
        connector = MockOsnConnector(GROUND)
        assert connector.authenticate("mock:A") == "A"

    def test_mock_token_for_unknown_user_rejected(self):
        connector = MockOsnConnector(GROUND)
        with pytest.raises(AuthError):
            connector.authenticate("mock:nobody")

    def test_mock_tokens_can_be_disabled(self):
        connector = MockOsnConnector(GROUND, accept_mock_tokens=False)
        with pytest.raises(AuthError):
            connector.authenticate("mock:A")

    def test_issued_token_roundtrip_and_expiry(self):
        now = [0.0]
        connector = MockOsnConnector(GROUND, clock=lambda: now[0])
        token = connector.issue_token("B", ttl_s=60)
        assert connector.authenticate(token.token) == "B"
        now[0] = 61.0
        with pytest.raises(AuthError, match="expired"):
            connector.authenticate(token.token)

    def test_friends_of_unknown_user(self):
        connector = MockOsnConnector(GROUND)
        assert connector.friends_of("A") == ["B", "C"]
        with pytest.raises(ConnectorError):
            connector.friends_of("nobody")


class TestEndpoints:
    def test_health(self, world):
        _, _, server = world
        status, body = request(server, "GET", "/v1/health")
        assert status == 200
        assert json.loads(body)["status"] == "ok"

    def test_upload_then_download(self, world):
        store, _, server = world
        cap = new_capability()
        status, _ = request(
            server, "POST", "/v1/capability", token="mock:A", body=cap.hex().encode()
        )
        assert status == 200
        assert store.record_of("A").cap == cap
        status, body = request(server, "GET", "/v1/capabilities?dmax=1", token="mock:A")
        assert status == 200
        parsed = json.loads(body)
        assert {e["id"] for e in parsed["r_u"]} == {"B", "C"}

    def test_bad_token_rejected_upload_no_side_effect(self, world):
        store, _, server = world
        count = store.record_count()
        status, _ = request(
            server,
            "POST",
            "/v1/capability",
            token="mock:nobody",
            body=new_capability().hex().encode(),
        )
        assert status == 401
        assert store.record_count() == count

    def test_missing_token_rejected(self, world):
        _, _, server = world
        status, body = request(server, "GET", "/v1/capabilities")
        assert status == 401

    def test_malformed_capability_rejected(self, world):
        _, _, server = world
        status, body = request(
            server, "POST", "/v1/capability", token="mock:A", body=b"zz-not-hex"
        )
        assert status == 400
        status, body = request(
            server, "POST", "/v1/capability", token="mock:A", body=b"aabb"
        )
        assert status == 400
        assert "bits" in json.loads(body)["error"]

    def test_ersatz_user_cannot_download(self, world):
        _, _, server = world
        # E exists in the OSN and as an ersatz record, but never enrolled
        status, body = request(server, "GET", "/v1/capabilities?dmax=1", token="mock:E")
        assert status == 403
        assert json.loads(body)["error"] == "not-enrolled"

    def test_download_includes_ersatz_friends(self, world):
        store, _, server = world
        # D never uploaded; A's view still carries a capability for D by
        # way of the ersatz record created when C enrolled
        request(
            server,
            "POST",
            "/v1/capability",
            token="mock:C",
            body=new_capability().hex().encode(),
        )
        status, body = request(server, "GET", "/v1/capabilities?dmax=1", token="mock:C")
        parsed = json.loads(body)
        assert {e["id"] for e in parsed["r_u"]} == {"A", "B", "D"}

    def test_dmax_clamped_to_server_limit(self, world):
        _, _, server = world
        _, body_big = request(server, "GET", "/v1/capabilities?dmax=99", token="mock:A")
        _, body_two = request(server, "GET", "/v1/capabilities?dmax=2", token="mock:A")
        assert body_big == body_two

    def test_dmax_must_be_integer(self, world):
        _, _, server = world
        status, _ = request(server, "GET", "/v1/capabilities?dmax=x", token="mock:A")
        assert status == 400

    def test_unknown_route_404(self, world):
        _, _, server = world
        assert request(server, "GET", "/v1/nothing", token="mock:A")[0] == 404
        assert request(server, "POST", "/v1/nothing", token="mock:A")[0] == 404

    def test_repeated_download_byte_identical(self, world):
        _, _, server = world
        first = request(server, "GET", "/v1/capabilities?dmax=2", token="mock:A")[1]
        second = request(server, "GET", "/v1/capabilities?dmax=2", token="mock:A")[1]
        assert first == second

    def test_higher_order_entries_carry_no_ids(self, world):
        _, _, server = world
        _, body = request(server, "GET", "/v1/capabilities?dmax=2", token="mock:A")
        parsed = json.loads(body)
        assert parsed["r_h"], "expected higher-order entries"
        assert all(set(e) == {"degree", "digest"} for e in parsed["r_h"])

    def test_token_scopes_to_its_own_uid(self, world):
        store, _, server = world
        # the API carries no uid parameter at all: what a token reads is
        # exactly the store's view for the token's uid, nothing else
        _, body = request(server, "GET", "/v1/capabilities?dmax=1", token="mock:A")
        assert json.loads(body) == json.loads(store.distribute("A", 1).to_json())
        cap = new_capability()
        request(server, "POST", "/v1/capability", token="mock:B", body=cap.hex().encode())
        assert store.record_of("B").cap == cap
        assert store.record_of("A").cap != cap


class TestServerConfig:
    def test_refuses_plaintext_without_flag(self):
        connector = MockOsnConnector(GROUND)
        store = CapabilityStore(SocialGraph(), connector)
        with pytest.raises(ValueError, match="TLS"):
            SopalHttpServer(store, connector)

    def test_plaintext_mode_warns(self, caplog):
        connector = MockOsnConnector(GROUND)
        store = CapabilityStore(SocialGraph(), connector)
        with caplog.at_level("WARNING", logger="sopal.server"):
            server = SopalHttpServer(store, connector, insecure_plaintext=True)
        server._httpd.server_close()
        assert any("PLAINTEXT" in rec.message for rec in caplog.records)


class TestLoadProbe:
    def test_accounting_identity_and_baseline(self, world):
        store, _, server = world
        store.upload_capability("A", new_capability())
        report = load_probe(server.url, "mock:A", rates=[2], duration_s=2)
        assert report.baseline_latency_s > 0
        sample = report.samples[0]
        assert sample.sent == 4
        assert sample.sent == sample.received + sample.failed
        assert sample.failed == 0
        assert len(sample.latencies_s) == sample.received
        assert sum(sample.per_second_received) == sample.received
        assert "saturation knee" in report.to_text()
