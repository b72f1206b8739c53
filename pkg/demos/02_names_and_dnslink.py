"""
Mutable names and DNS links
===========================

A publisher signs a name record pointing at version one of a document, then
updates it. Readers resolve the name through the DHT. A DNS TXT record can
point at either a fixed identifier or at the name.
"""

from pstore.node import NodeConfig
from pstore.simnet import SimConfig, Simulator

sim = Simulator(SimConfig(seed=8))
sim.spawn(20, NodeConfig(k=8))
sim.run_for(5)
alice, bob = sim.node(2), sim.node(13)

v1 = alice.add(b"release notes, first draft\n")
name = alice.ipns_publish(f"/ipfs/{v1.text}")
print("name:", name)
print("bob sees:", bob.get(f"/ipns/{name}"))

v2 = alice.add(b"release notes, final\n")
alice.ipns_publish(f"/ipfs/{v2.text}")
print("after update bob sees:", bob.get(f"/ipns/{name}"))

# a fake resolver standing in for DNS
txt = {"docs.example.org": [f"dnslink=/ipns/{name}"]}
target = bob.dnslink_resolve("docs.example.org", lambda domain: txt.get(domain, []))
print("docs.example.org ->", target)
