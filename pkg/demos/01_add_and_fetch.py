"""
Adding a file and fetching it from another peer
================================================

A small simulated network: one node adds a file, a distant node fetches it
by identifier and checks the bytes.
"""

import os

from pstore.node import NodeConfig
from pstore.simnet import SimConfig, Simulator

sim = Simulator(SimConfig(seed=3))
sim.spawn(24, NodeConfig(k=8))
sim.run_for(5)

publisher, reader = sim.node(0), sim.node(17)

data = os.urandom(1_200_000)
root = publisher.add(data)
print("added", len(data), "bytes as", root.text)

# identical bytes always yield the same identifier
assert sim.node(5).add(data) == root

fetched = reader.get(f"/ipfs/{root.text}")
assert fetched == data
print("node 17 fetched", len(fetched), "bytes at t=%.2fs" % sim.now)

providers = reader.find_providers(root)
print("provider records found:", len(providers))
