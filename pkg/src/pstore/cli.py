"""Command-line front end.

    pstore [--state DIR] [--json] <verb> [args...]

The state directory (default ``./.pstore``, or ``$PSTORE_STATE``) holds the
local node's identity, blocks and pin manifest. Each invocation loads it into
a one-node simulator, runs the verb and exits.

Exit status: 0 success, 1 operational failure (the error kind is printed on
stderr), 2 usage or scenario parse error.
"""

from __future__ import annotations

import argparse
import base64
import contextlib
import io
import json
import os
import signal
import sys
import threading
from pathlib import Path
from typing import BinaryIO, Optional, TextIO

from .cid import cid_parse
from .errors import PstoreError, ScenarioError
from .dht import ProviderRecord, dht_key_for
from .ipns import KeyPair
from .node import NodeConfig
from .simnet import SimConfig, Simulator

DEFAULT_STATE = ".pstore"
IDENTITY_FILE = "identity.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pstore", description="Content-addressed peer-to-peer storage node and simulator.")
    p.add_argument("--state", help="state directory (default $PSTORE_STATE or ./.pstore)")
    p.add_argument("--json", action="store_true", help="emit one JSON record per result")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    a = sub.add_parser("add", help="add a file (or directory with -r) and print its identifier")
    a.add_argument("path", help="file to add, or - for standard input")
    a.add_argument("-r", "--recursive", action="store_true", help="add a directory tree")
    a.add_argument("--pin", action="store_true", help="pin the result")

    c = sub.add_parser("cat", help="write a file's bytes to standard output")
    c.add_argument("path")

    g = sub.add_parser("get", help="write a file's bytes to a local file")
    g.add_argument("path")
    g.add_argument("-o", "--output", help="output file (default: last path segment)")

    ls = sub.add_parser("ls", help="list directory entries")
    ls.add_argument("path")

    pin = sub.add_parser("pin", help="manage pins")
    pin_sub = pin.add_subparsers(dest="pin_verb", required=True, parser_class=_Parser)
    pa = pin_sub.add_parser("add")
    pa.add_argument("cid")
    pa.add_argument("--direct", action="store_true", help="pin only the root block")
    pr = pin_sub.add_parser("rm")
    pr.add_argument("cid")
    pin_sub.add_parser("ls")

    pv = sub.add_parser("providers", help="list provider records for an identifier")
    pv.add_argument("cid")

    name = sub.add_parser("name", help="mutable names")
    name_sub = name.add_subparsers(dest="name_verb", required=True, parser_class=_Parser)
    npub = name_sub.add_parser("publish")
    npub.add_argument("path")
    nres = name_sub.add_parser("resolve")
    nres.add_argument("name", nargs="?", help="name to resolve (default: this node's)")

    dl = sub.add_parser("dnslink", help="resolve a domain through dnslink TXT records")
    dl.add_argument("domain")
    dl.add_argument("--txt", required=True, help="JSON file mapping domain -> list of TXT strings")

    gw = sub.add_parser("gateway", help="HTTP gateway")
    gw_sub = gw.add_subparsers(dest="gateway_verb", required=True, parser_class=_Parser)
    gs = gw_sub.add_parser("serve")
    gs.add_argument("--listen", default="127.0.0.1:8080", help="host:port (default 127.0.0.1:8080)")
    gs.add_argument("--timeout", type=float, default=30.0, help="request timeout in seconds")

    sim = sub.add_parser("sim", help="simulator scenarios")
    sim_sub = sim.add_subparsers(dest="sim_verb", required=True, parser_class=_Parser)
    sr = sim_sub.add_parser("run")
    sr.add_argument("script", help="scenario file (or the name of a bundled one)")
    sr.add_argument("--seed", type=int, help="override the script's seed")
    sr.add_argument("--trace", help="write the event trace (JSON lines) to this file")

    sub.add_parser("stats", help="local store statistics")
    return p


# -- local node --------------------------------------------------------------

def state_dir(arg: Optional[str]) -> Path:
    return Path(arg or os.environ.get("PSTORE_STATE") or DEFAULT_STATE)


def load_keys(state: Path) -> KeyPair:
    path = state / IDENTITY_FILE
    if path.exists():
        return KeyPair.from_seed(bytes.fromhex(json.loads(path.read_text())["seed"]))
    keys = KeyPair.generate()
    state.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"seed": keys.seed_bytes().hex(), "name": keys.name.text}) + "\n")
    os.chmod(path, 0o600)
    return keys


def open_node(state: Path, txt_lookup=None):
    state.mkdir(parents=True, exist_ok=True)
    sim = Simulator(SimConfig(seed=0))
    idx = sim.spawn_node(NodeConfig(), keys=load_keys(state), state_dir=state, txt_lookup=txt_lookup)
    return sim.node(idx)


# -- verbs --------------------------------------------------------------------

class Cli:
    def __init__(self, args, stdin: BinaryIO, stdout: BinaryIO, stderr: TextIO):
        self.args = args
        self.stdin = stdin
        self.stdout = stdout
        self.stderr = stderr

    def emit(self, record: dict, text: str) -> None:
        if self.args.json:
            line = json.dumps(record, sort_keys=True)
        else:
            line = text
        self.stdout.write(line.encode() + b"\n")

    def node(self, txt_lookup=None):
        return open_node(state_dir(self.args.state), txt_lookup)

    def do_add(self) -> int:
        a = self.args
        node = self.node()
        if a.recursive:
            root = Path(a.path)
            if not root.is_dir():
                raise UsageError(f"{a.path} is not a directory")
            cid = node.add_directory(_read_tree(root), pin=a.pin)
            size = sum(f.stat().st_size for f in root.rglob("*") if f.is_file())
        else:
            data = self.stdin.read() if a.path == "-" else Path(a.path).read_bytes()
            cid = node.add(data, pin=a.pin)
            size = len(data)
        self.emit({"cid": cid.text, "size": size, "pinned": a.pin}, cid.text)
        return 0

    def do_cat(self) -> int:
        data = self.node().get(self.args.path)
        if self.args.json:
            self.emit({"path": self.args.path, "size": len(data), "data": base64.b64encode(data).decode()}, "")
        else:
            self.stdout.write(data)
        return 0

    def do_get(self) -> int:
        a = self.args
        data = self.node().get(a.path)
        out = Path(a.output or a.path.rstrip("/").rsplit("/", 1)[-1])
        out.write_bytes(data)
        self.emit({"path": a.path, "output": str(out), "size": len(data)}, f"saved {len(data)} bytes to {out}")
        return 0

    def do_ls(self) -> int:
        for link in self.node().ls(self.args.path):
            self.emit(
                {"name": link.name, "cid": link.target.text, "size": link.subtree_size},
                f"{link.target.text} {link.subtree_size} {link.name}",
            )
        return 0

    def do_pin(self) -> int:
        a = self.args
        node = self.node()
        if a.pin_verb == "ls":
            for cid, recursive in node.pins.items():
                kind = "recursive" if recursive else "direct"
                self.emit({"cid": cid.text, "type": kind}, f"{cid.text} {kind}")
            return 0
        cid = _parse_cid(a.cid)
        if a.pin_verb == "add":
            node.pin(cid, recursive=not a.direct)
            self.emit({"cid": cid.text, "pinned": True}, f"pinned {cid.text}")
        else:
            node.unpin(cid)
            self.emit({"cid": cid.text, "pinned": False}, f"unpinned {cid.text}")
        return 0

    def do_providers(self) -> int:
        cid = _parse_cid(self.args.cid)
        node = self.node()
        records = node.find_providers(cid)
        if not records and node.can_serve(cid):
            # records are not persisted between invocations; the local store is authoritative
            records = [ProviderRecord(_key(cid), node.peer_id, node.info.addresses,
                                      node.now + node.config.provider_ttl)]
        for r in records:
            self.emit(
                {"provider": r.provider.hex(), "addresses": list(r.addresses), "expires_at": r.expires_at},
                f"{r.provider.hex()} {' '.join(r.addresses)}",
            )
        return 0

    def do_name(self) -> int:
        a = self.args
        node = self.node()
        if a.name_verb == "publish":
            name = node.ipns_publish(a.path)
            self.emit({"name": name, "value": a.path, "sequence": node.ipns_seq}, f"{name} -> {a.path}")
        else:
            target = a.name or node.name
            path = node.ipns_resolve(target)
            self.emit({"name": target, "path": path.text}, path.text)
        return 0

    def do_dnslink(self) -> int:
        try:
            table = json.loads(Path(self.args.txt).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read TXT table {self.args.txt}: {exc}") from None
        node = self.node(txt_lookup=lambda domain: table.get(domain, []))
        path = node.dnslink_resolve(self.args.domain)
        self.emit({"domain": self.args.domain, "path": path.text}, path.text)
        return 0

    def do_gateway(self) -> int:
        from .gateway import GatewayConfig, serve

        a = self.args
        config = GatewayConfig(listen_address=a.listen, request_timeout=a.timeout)
        try:
            config.host_port
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        service = serve(self.node(), config)
        self.emit({"url": service.url}, f"gateway listening on {service.url}")
        self.stdout.flush()
        stop = threading.Event()
        if threading.current_thread() is threading.main_thread():
            signal.signal(signal.SIGTERM, lambda *_: stop.set())
        try:
            stop.wait()
        except KeyboardInterrupt:
            pass
        finally:
            service.stop()
        return 0

    def do_sim(self) -> int:
        from .scenario import Runner, load, report_text

        a = self.args
        runner = Runner(load(a.script), seed=a.seed, trace=bool(a.trace))
        report = runner.run()
        if a.trace:
            Path(a.trace).write_text(runner.sim.trace_lines())
        if a.json:
            self.stdout.write((json.dumps(report, sort_keys=True) + "\n").encode())
        else:
            self.stdout.write(report_text(report).encode())
        if not report["passed"]:
            for r in report["results"]:
                if not r["ok"]:
                    self.stderr.write(f"expectation failed: step {r['step']} ({r['op']}) -> {r['outcome']}\n")
            return 1
        return 0

    def do_stats(self) -> int:
        node = self.node()
        rec = {
            "state": str(node.state_dir),
            "name": node.name,
            "blocks": len(node.store),
            "bytes": node.store.used,
            "capacity_bytes": node.store.capacity_bytes,
            "pins": len(node.pins.roots),
        }
        self.emit(rec, "\n".join(f"{k}: {v}" for k, v in rec.items()))
        return 0


def _parse_cid(text: str):
    text = text[len("/ipfs/"):] if text.startswith("/ipfs/") else text
    return cid_parse(text)


def _key(cid):
    return dht_key_for(cid)


def _read_tree(root: Path) -> dict:
    out: dict = {}
    for p in sorted(root.iterdir()):
        if p.is_dir():
            out[p.name] = _read_tree(p)
        elif p.is_file():
            out[p.name] = p.read_bytes()
    return out


def run_cli(
    argv: list[str],
    stdin: Optional[BinaryIO] = None,
    stdout: Optional[BinaryIO] = None,
    stderr: Optional[TextIO] = None,
) -> int:
    """Run one command; returns the exit status."""
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    stderr = stderr if stderr is not None else sys.stderr
    parser = build_parser()
    try:
        with contextlib.redirect_stdout(io.StringIO()) as help_out:
            args = parser.parse_args(argv)
    except UsageError as exc:
        stderr.write(f"{exc}\n")
        return 2
    except SystemExit as exc:  # --help
        stdout.write(help_out.getvalue().encode())
        return int(exc.code or 0)
    cli = Cli(args, stdin, stdout, stderr)
    try:
        return getattr(cli, f"do_{args.verb}")()
    except UsageError as exc:
        stderr.write(f"pstore: usage error: {exc}\n")
        return 2
    except ScenarioError as exc:
        stderr.write(f"pstore: {exc.kind}: {exc}\n")
        return 2
    except PstoreError as exc:
        stderr.write(f"pstore: {exc.kind}: {exc}\n")
        return 1
    except OSError as exc:
        stderr.write(f"pstore: io-error: {exc}\n")
        return 1


def main() -> None:
    code = run_cli(sys.argv[1:])
    sys.stdout.flush()
    sys.exit(code)


if __name__ == "__main__":
    main()
