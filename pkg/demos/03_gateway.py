"""
Serving content over HTTP
=========================

Starts the gateway on a free local port in front of one simulated node and
fetches a file, a directory entry and a missing path with urllib.
"""

import urllib.error
import urllib.request

from pstore.gateway import GatewayConfig, serve
from pstore.node import NodeConfig
from pstore.simnet import SimConfig, Simulator

sim = Simulator(SimConfig(seed=2))
sim.spawn(12, NodeConfig(k=8))
sim.run_for(5)

site = sim.node(4).add_directory({
    "index.html": b"<h1>hello</h1>\n",
    "img": {"logo.svg": b"<svg/>\n"},
})
front = sim.node(0)


def fetch(url):
    try:
        with urllib.request.urlopen(url) as resp:
            return resp.status, resp.headers.get("X-Content-Cid"), resp.read()
    except urllib.error.HTTPError as err:
        return err.code, None, err.read()


with serve(front, GatewayConfig("127.0.0.1:0", request_timeout=10)) as gw:
    for path in (f"/ipfs/{site.text}/index.html",
                 f"/ipfs/{site.text}/img/logo.svg",
                 f"/ipfs/{site.text}/missing.txt",
                 "/ipfs/not-a-cid"):
        status, cid, body = fetch(gw.url + path)
        print(status, path.replace(site.text, "<site>"), body[:40])
