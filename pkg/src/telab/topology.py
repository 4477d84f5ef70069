"""Network graph model, topology catalog, session generation and candidate paths.

Graphs are directed; link capacities are stored in bits/second and
propagation delays in seconds. Topology documents on disk use Mbps and
milliseconds (see ``load_topology``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path as FsPath

import networkx as nx
import numpy as np

MBPS = 1e6  # bits per second
DEFAULT_PROP_DELAY_S = 1e-3
DEFAULT_BUFFER_PKTS = 100
DEFAULT_CAPACITY_BPS = 100 * MBPS


class TopologyError(ValueError):
    """Malformed topology document or graph invariant violation."""


class UnreachableError(ValueError):
    """No directed path exists between the requested node pair."""


@dataclass(frozen=True)
class Link:
    src: str
    dst: str
    capacity: float      # bits/s
    prop_delay: float    # s
    buffer_limit: int    # packets


@dataclass(frozen=True)
class Path:
    """A loop-free directed walk, stored as link ids plus the node sequence."""

    link_ids: tuple[int, ...]
    nodes: tuple[str, ...]

    @property
    def hop_count(self) -> int:
        return len(self.link_ids)

    @property
    def src(self) -> str:
        return self.nodes[0]

    @property
    def dst(self) -> str:
        return self.nodes[-1]


class NetworkGraph:
    """Directed graph with per-link capacity, propagation delay and buffer size."""

    def __init__(self, nodes: list[str], links: list[Link]):
        if len(set(nodes)) != len(nodes):
            raise TopologyError("duplicate node ids")
        node_set = set(nodes)
        index: dict[tuple[str, str], int] = {}
        adj: dict[str, list[tuple[str, int]]] = {n: [] for n in nodes}
        for i, ln in enumerate(links):
            if ln.src not in node_set or ln.dst not in node_set:
                raise TopologyError(f"link {ln.src}->{ln.dst} references unknown node")
            if ln.src == ln.dst:
                raise TopologyError(f"self-loop link at node {ln.src}")
            if ln.capacity <= 0:
                raise TopologyError(f"link {ln.src}->{ln.dst} has nonpositive capacity")
            if ln.prop_delay < 0:
                raise TopologyError(f"link {ln.src}->{ln.dst} has negative propagation delay")
            if ln.buffer_limit < 1:
                raise TopologyError(f"link {ln.src}->{ln.dst} has buffer_limit < 1")
            key = (ln.src, ln.dst)
            if key in index:
                raise TopologyError(f"duplicate link {ln.src}->{ln.dst}")
            index[key] = i
            adj[ln.src].append((ln.dst, i))
        self.nodes = tuple(nodes)
        self.links = tuple(links)
        self._index = index
        self._adj = adj

    def link_id(self, src: str, dst: str) -> int:
        try:
            return self._index[(src, dst)]
        except KeyError:
            raise TopologyError(f"no link {src}->{dst}") from None

    def out_links(self, node: str) -> list[tuple[str, int]]:
        return self._adj[node]

    def path_from_nodes(self, node_seq: list[str] | tuple[str, ...]) -> Path:
        if len(node_seq) < 2:
            raise TopologyError("path needs at least two nodes")
        if len(set(node_seq)) != len(node_seq):
            raise TopologyError(f"path revisits a node: {node_seq}")
        ids = tuple(self.link_id(a, b) for a, b in zip(node_seq, node_seq[1:]))
        return Path(link_ids=ids, nodes=tuple(node_seq))

    def to_networkx(self) -> nx.DiGraph:
        G = nx.DiGraph()
        G.add_nodes_from(self.nodes)
        for ln in self.links:
            G.add_edge(ln.src, ln.dst)
        return G

    def reachable_from(self, src: str) -> set[str]:
        """Nodes reachable from src following link directions (excluding src itself
        unless it lies on a cycle)."""
        seen: set[str] = set()
        stack = [dst for dst, _ in self._adj[src]]
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            stack.extend(d for d, _ in self._adj[n] if d not in seen)
        return seen

    def is_connected_ignoring_direction(self) -> bool:
        if not self.nodes:
            return True
        und: dict[str, set[str]] = {n: set() for n in self.nodes}
        for ln in self.links:
            und[ln.src].add(ln.dst)
            und[ln.dst].add(ln.src)
        seen = {self.nodes[0]}
        stack = [self.nodes[0]]
        while stack:
            for m in und[stack.pop()]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return len(seen) == len(self.nodes)


@dataclass(frozen=True)
class SessionSpec:
    """One end-to-end communication session with its candidate paths."""

    id: int
    src: str
    dst: str
    demand_mean: float          # bits/s, mean of the Poisson arrival process
    paths: tuple[Path, ...]

    def __post_init__(self):
        if self.src == self.dst:
            raise TopologyError(f"session {self.id}: src == dst")
        if not self.paths:
            raise TopologyError(f"session {self.id}: no candidate paths")
        if self.demand_mean < 0:
            raise TopologyError(f"session {self.id}: negative demand")
        for p in self.paths:
            if p.src != self.src or p.dst != self.dst:
                raise TopologyError(f"session {self.id}: path endpoints mismatch")
        if len({p.nodes for p in self.paths}) != len(self.paths):
            raise TopologyError(f"session {self.id}: duplicate candidate paths")


def load_topology(source: str | FsPath | dict) -> NetworkGraph:
    """Parse a topology document into a validated NetworkGraph.

    Document schema (JSON)::

        {"nodes": ["A", ...],
         "links": [{"src": "A", "dst": "B", "capacity_mbps": 100,
                    "prop_delay_ms": 1.0, "buffer_pkts": 100}, ...]}

    ``prop_delay_ms`` defaults to 1.0 and ``buffer_pkts`` to 100 when omitted.
    """
    if isinstance(source, dict):
        doc = source
    else:
        try:
            doc = json.loads(FsPath(source).read_text())
        except json.JSONDecodeError as e:
            raise TopologyError(f"cannot parse topology document {source}: {e}") from e
    if not isinstance(doc, dict) or "nodes" not in doc or "links" not in doc:
        raise TopologyError("topology document must contain 'nodes' and 'links'")
    nodes = [str(n) for n in doc["nodes"]]
    links = []
    for i, entry in enumerate(doc["links"]):
        try:
            cap = float(entry["capacity_mbps"]) * MBPS
        except KeyError:
            raise TopologyError(f"link entry {i} missing capacity_mbps") from None
        links.append(Link(
            src=str(entry["src"]),
            dst=str(entry["dst"]),
            capacity=cap,
            prop_delay=float(entry.get("prop_delay_ms", 1.0)) * 1e-3,
            buffer_limit=int(entry.get("buffer_pkts", DEFAULT_BUFFER_PKTS)),
        ))
    return NetworkGraph(nodes, links)


def dump_topology(g: NetworkGraph, path: str | FsPath) -> None:
    doc = {
        "nodes": list(g.nodes),
        "links": [
            {"src": ln.src, "dst": ln.dst, "capacity_mbps": ln.capacity / MBPS,
             "prop_delay_ms": ln.prop_delay * 1e3, "buffer_pkts": ln.buffer_limit}
            for ln in g.links
        ],
    }
    FsPath(path).write_text(json.dumps(doc, indent=1))


def bundled_topology(name: str) -> NetworkGraph:
    """Load one of the topology documents shipped with the package.

    Known names: ``nsfnet``, ``arpanet``, ``random20``.
    """
    ref = resources.files("telab.data").joinpath(f"{name}.json")
    try:
        text = ref.read_text()
    except FileNotFoundError:
        raise TopologyError(f"no bundled topology named {name!r}") from None
    return load_topology(json.loads(text))


def generate_random_topology(
    n_nodes: int,
    n_links: int,
    seed: int,
    capacity: float = DEFAULT_CAPACITY_BPS,
    prop_delay: float = DEFAULT_PROP_DELAY_S,
    buffer_limit: int = DEFAULT_BUFFER_PKTS,
) -> NetworkGraph:
    """Random connected directed graph with exactly n_links links.

    A random spanning tree (random edge orientations) guarantees connectivity
    when directions are ignored; the remaining links are drawn uniformly from
    the unused ordered node pairs. Deterministic for a fixed seed.
    """
    if n_nodes < 2:
        raise TopologyError("need at least 2 nodes")
    if n_links < n_nodes - 1 or n_links > n_nodes * (n_nodes - 1):
        raise TopologyError(
            f"n_links={n_links} infeasible for {n_nodes} nodes "
            f"(must be in [{n_nodes - 1}, {n_nodes * (n_nodes - 1)}])")
    rng = np.random.default_rng(seed)
    nodes = [f"n{i}" for i in range(n_nodes)]
    order = rng.permutation(n_nodes)
    used: set[tuple[int, int]] = set()
    for i in range(1, n_nodes):
        a = order[rng.integers(0, i)]
        b = order[i]
        if rng.random() < 0.5:
            a, b = b, a
        used.add((int(a), int(b)))
    candidates = [(a, b) for a in range(n_nodes) for b in range(n_nodes)
                  if a != b and (a, b) not in used]
    extra = n_links - len(used)
    if extra > 0:
        picks = rng.choice(len(candidates), size=extra, replace=False)
        for idx in picks:
            used.add(candidates[idx])
    links = [Link(nodes[a], nodes[b], capacity, prop_delay, buffer_limit)
             for a, b in sorted(used)]
    return NetworkGraph(nodes, links)


def k_shortest_paths(g: NetworkGraph, src: str, dst: str, k: int) -> list[Path]:
    """Up to k loop-free paths ordered by (hop count, lexicographic node sequence).

    Raises UnreachableError when no directed path exists.
    """
    if src == dst:
        raise TopologyError("src == dst")
    if k < 1:
        raise TopologyError("k must be >= 1")
    G = g.to_networkx()
    collected: list[tuple[str, ...]] = []
    try:
        for node_seq in nx.shortest_simple_paths(G, src, dst):
            hops = len(node_seq) - 1
            # generator yields nondecreasing hop counts; once we have k paths we
            # only need the remaining ties of the k-th hop count for the sort
            if len(collected) >= k and hops > len(collected[k - 1]) - 1:
                break
            collected.append(tuple(node_seq))
    except nx.NetworkXNoPath:
        raise UnreachableError(f"{dst} unreachable from {src}") from None
    collected.sort(key=lambda seq: (len(seq), seq))
    return [g.path_from_nodes(seq) for seq in collected[:k]]


def make_sessions(
    g: NetworkGraph,
    k_sessions: int,
    window: tuple[float, float],
    seed: int,
    n_paths: int = 3,
) -> list[SessionSpec]:
    """Generate k_sessions sessions with distinct reachable (src, dst) pairs.

    Demand means are uniform in [window[0], window[1]] bits/s. With a fixed
    seed the chosen pairs and the relative position of each demand inside the
    window are both reproducible, so sliding the window shifts demands without
    reshuffling pairs.
    """
    lo, hi = window
    if lo < 0 or hi <= lo:
        raise TopologyError(f"bad demand window [{lo}, {hi}]")
    if k_sessions < 1:
        raise TopologyError("k_sessions must be >= 1")
    pairs = [(s, d) for s in g.nodes for d in sorted(g.reachable_from(s)) if s != d]
    if len(pairs) < k_sessions:
        raise TopologyError(
            f"graph admits only {len(pairs)} reachable pairs, need {k_sessions}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(pairs), size=k_sessions, replace=False)
    rel = rng.random(k_sessions)
    sessions = []
    for i, pair_idx in enumerate(chosen):
        s, d = pairs[int(pair_idx)]
        paths = k_shortest_paths(g, s, d, n_paths)
        sessions.append(SessionSpec(
            id=i + 1, src=s, dst=d,
            demand_mean=lo + (hi - lo) * float(rel[i]),
            paths=tuple(paths),
        ))
    return sessions


def load_sessions(source: str | FsPath | dict, g: NetworkGraph,
                  n_paths: int = 3) -> list[SessionSpec]:
    """Load a session document ``{"sessions": [{"id","src","dst","demand_mbps"}]}``
    and compute candidate paths on the given graph."""
    if isinstance(source, dict):
        doc = source
    else:
        doc = json.loads(FsPath(source).read_text())
    if "sessions" not in doc:
        raise TopologyError("session document must contain 'sessions'")
    out = []
    for entry in doc["sessions"]:
        paths = k_shortest_paths(g, str(entry["src"]), str(entry["dst"]), n_paths)
        out.append(SessionSpec(
            id=int(entry["id"]), src=str(entry["src"]), dst=str(entry["dst"]),
            demand_mean=float(entry["demand_mbps"]) * MBPS, paths=tuple(paths)))
    return out


def dump_sessions(sessions: list[SessionSpec], path: str | FsPath) -> None:
    doc = {"sessions": [
        {"id": s.id, "src": s.src, "dst": s.dst, "demand_mbps": s.demand_mean / MBPS}
        for s in sessions
    ]}
    FsPath(path).write_text(json.dumps(doc, indent=1))
