"""The capability service over HTTP, plus a quick saturation probe.

Starts the server in-process (plaintext test mode), drives the client
through the real HTTP routes, then sweeps request rates to show the
response-rate plateau and latency growth past the saturation point.

Run:  python demos/04_server_and_load.py
"""

from sopal import (
    CapabilityStore,
    DiscoveryClient,
    HttpServerHandle,
    MockOsnConnector,
    SopalHttpServer,
    load_probe,
    run_discovery_pair,
)
from sopal.sim import gnp_graph

print("building a 60-node world and starting the HTTP server")
ground = gnp_graph(60, 0.08, seed=7)
connector = MockOsnConnector(ground)
store = CapabilityStore(connector=connector)

# a per-request backend cost and a bounded handler pool make the
# saturation knee visible at desk scale
server = SopalHttpServer(
    store,
    connector,
    insecure_plaintext=True,
    simulated_work_s=0.02,
    max_concurrent=2,
)
server.start()
print(f"server listening on {server.url}")

try:
    a = DiscoveryClient("0", HttpServerHandle(server.url))
    b = DiscoveryClient("1", HttpServerHandle(server.url))
    for client in (a, b):
        client.renew_capability()
        client.update_capabilities()
    ra, rb = run_discovery_pair(a, b)
    print(f"discovery over HTTP-backed clients: Dist = {ra.dist}")

    print()
    print("sweeping request rates (simulated capacity is about 100/s):")
    report = load_probe(server.url, "mock:0", rates=[5, 50, 250], duration_s=2)
    print(report.to_text())
finally:
    server.stop()
