"""Pipe-network topology: parsing, boundary classification, refinement and
incidence matrices.

Networks are read from a header-less CSV with seven columns::

    kind,from,to,length,diameter,incline,roughness

where ``kind`` is one of ``pipe``, ``shortcut``, ``compressor``, ``valve``.
Lines starting with ``#`` are comments.  Node and edge orderings follow the
order of first appearance, so all derived matrices are reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

EDGE_KINDS = ("pipe", "shortcut", "compressor", "valve")


class NetworkError(ValueError):
    """Raised for malformed or topologically invalid networks."""


@dataclass(frozen=True)
class Edge:
    kind: str
    source: str
    target: str
    length: float
    diameter: float
    incline: float = 0.0
    roughness: float = 0.0

    def __post_init__(self):
        if self.kind not in EDGE_KINDS:
            raise NetworkError(f"unknown edge kind {self.kind!r}")
        if self.source == self.target:
            raise NetworkError(f"self-loop at node {self.source!r}")
        if self.roughness < 0:
            raise NetworkError("roughness must be non-negative")
        if self.kind == "pipe" and (self.length <= 0 or self.diameter <= 0):
            raise NetworkError(
                f"pipe {self.source}->{self.target} needs positive length and diameter")


@dataclass(frozen=True)
class Network:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    supply: tuple[str, ...] = ()
    demand: tuple[str, ...] = ()
    internal: tuple[str, ...] = ()

    @property
    def index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.nodes)}

    @property
    def compressors(self) -> list[int]:
        return [j for j, e in enumerate(self.edges) if e.kind == "compressor"]

    @property
    def valves(self) -> list[int]:
        return [j for j, e in enumerate(self.edges) if e.kind == "valve"]


@dataclass(frozen=True)
class TopologyMatrices:
    A: sp.csr_matrix
    A0: sp.csr_matrix
    AR: sp.csr_matrix
    AL: sp.csr_matrix
    A0R: sp.csr_matrix
    A0L: sp.csr_matrix
    Bs: sp.csr_matrix
    Bd: sp.csr_matrix
    reduced_rows: np.ndarray  # node index of each A0 row
    supply_rows: np.ndarray
    demand_rows: np.ndarray


@dataclass(frozen=True)
class RefinementResult:
    refined: Network
    friction_scale: np.ndarray
    virtual_of: np.ndarray  # refined edge -> original edge
    dx: float


def _parse_float(value: str, lineno: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise NetworkError(f"line {lineno}: not a number: {value!r}") from None


def parse_net(text: str) -> Network:
    """Parse a .net CSV document into a classified :class:`Network`."""
    nodes: dict[str, None] = {}
    edges: list[Edge] = []
    seen: set[tuple[str, str, str]] = set()
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        row = [c.strip() for c in row]
        if len(row) != 7:
            raise NetworkError(f"line {lineno}: expected 7 fields, got {len(row)}")
        kind, src, dst = row[0].lower(), row[1], row[2]
        if kind not in EDGE_KINDS:
            raise NetworkError(f"line {lineno}: unknown edge kind {row[0]!r}")
        key = (kind, src, dst)
        if key in seen:
            raise NetworkError(f"line {lineno}: duplicate {kind} {src}->{dst}")
        seen.add(key)
        length, diameter, incline, rough = (_parse_float(v, lineno) for v in row[3:])
        try:
            edges.append(Edge(kind, src, dst, length, diameter, incline, rough))
        except NetworkError as err:
            raise NetworkError(f"line {lineno}: {err}") from None
        nodes.setdefault(src)
        nodes.setdefault(dst)
    if not edges:
        raise NetworkError("network has no edges")
    return classify_boundary(Network(tuple(nodes), tuple(edges)))


def load_net(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return parse_net(fh.read())


def _components(net: Network) -> int:
    parent = list(range(len(net.nodes)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    idx = net.index
    for e in net.edges:
        a, b = find(idx[e.source]), find(idx[e.target])
        if a != b:
            parent[a] = b
    return len({find(i) for i in range(len(net.nodes))})


def classify_boundary(net: Network) -> Network:
    """Mark leaves as supply (edge leaves) or demand (edge enters)."""
    if _components(net) != 1:
        raise NetworkError("network is not connected")
    out_deg = {n: 0 for n in net.nodes}
    in_deg = {n: 0 for n in net.nodes}
    for e in net.edges:
        out_deg[e.source] += 1
        in_deg[e.target] += 1
    supply, demand, internal = [], [], []
    for n in net.nodes:
        deg = out_deg[n] + in_deg[n]
        if deg == 0:
            raise NetworkError(f"isolated node {n!r}")
        if deg == 1:
            (supply if out_deg[n] == 1 else demand).append(n)
        else:
            internal.append(n)
    supply_set = set(supply)
    for e in net.edges:
        if e.source in supply_set and e.target in supply_set:
            raise NetworkError(f"supplies {e.source!r} and {e.target!r} directly connected")
    if not supply:
        raise NetworkError("network has no supply node")
    return replace(net, supply=tuple(supply), demand=tuple(demand), internal=tuple(internal))


def nominal_length(dt: float, v_max: float, eps: float = 0.01) -> float:
    """CFL-nominal pipe length (1 - eps) * v_max * dt."""
    if dt <= 0 or v_max <= 0 or not 0 <= eps < 1:
        raise ValueError("need dt > 0, v_max > 0 and 0 <= eps < 1")
    return (1.0 - eps) * v_max * dt


def refine(net: Network, dx: float) -> RefinementResult:
    """Split pipes into virtual pipes of length ``dx``.

    Each pipe yields floor(L/dx) full segments plus one remainder segment whose
    friction is scaled by remainder/dx.  Non-pipe edges become a single
    frictionless nominal-length edge.
    """
    if dx <= 0:
        raise ValueError("dx must be positive")
    nodes = list(net.nodes)
    edges: list[Edge] = []
    scale: list[float] = []
    origin: list[int] = []
    for j, e in enumerate(net.edges):
        if e.kind != "pipe":
            kind = "compressor" if e.kind == "compressor" else "shortcut"
            edges.append(replace(e, kind=kind, length=dx, incline=0.0))
            scale.append(0.0)
            origin.append(j)
            continue
        ratio = e.length / dx
        full = math.floor(ratio + 1e-9)
        rest = e.length - full * dx
        parts = [dx] * full
        if rest > 1e-9 * dx:
            parts.append(rest)
        chain = [e.source]
        for i in range(1, len(parts)):
            name = f"{e.source}~{e.target}~{i}"
            nodes.append(name)
            chain.append(name)
        chain.append(e.target)
        for i, sub in enumerate(parts):
            rise = e.incline * sub / e.length
            edges.append(Edge("pipe", chain[i], chain[i + 1], dx, e.diameter, rise, e.roughness))
            scale.append(min(sub / dx, 1.0))
            origin.append(j)
    refined = replace(net, nodes=tuple(nodes), edges=tuple(edges),
                      internal=net.internal + tuple(nodes[len(net.nodes):]))
    return RefinementResult(refined, np.array(scale), np.array(origin, dtype=int), dx)


def incidence(net: Network) -> TopologyMatrices:
    """Signed incidence A (-1 where an edge leaves, +1 where it enters) and its parts."""
    idx = net.index
    n, m = len(net.nodes), len(net.edges)
    rows, cols, vals = [], [], []
    for j, e in enumerate(net.edges):
        rows += [idx[e.source], idx[e.target]]
        cols += [j, j]
        vals += [-1.0, 1.0]
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, m))
    absA = abs(A)
    AR = ((A + absA) * 0.5).tocsr()
    AL = ((A - absA) * 0.5).tocsr()
    AR.eliminate_zeros()
    AL.eliminate_zeros()
    supply_rows = np.array([idx[s] for s in net.supply], dtype=int)
    demand_rows = np.array([idx[d] for d in net.demand], dtype=int)
    keep = np.setdiff1d(np.arange(n), supply_rows)
    Bd = sp.csr_matrix((np.ones(len(demand_rows)), (demand_rows, np.arange(len(demand_rows)))),
                       shape=(n, len(demand_rows)))
    return TopologyMatrices(
        A=A, A0=A[keep], AR=AR, AL=AL, A0R=AR[keep], A0L=AL[keep],
        Bs=A[supply_rows], Bd=Bd, reduced_rows=keep,
        supply_rows=supply_rows, demand_rows=demand_rows)


def network_hash(net: Network) -> str:
    h = hashlib.sha256()
    for e in net.edges:
        h.update(repr((e.kind, e.source, e.target, e.length, e.diameter, e.incline,
                       e.roughness)).encode())
    return h.hexdigest()[:16]
