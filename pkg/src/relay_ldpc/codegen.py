"""Finite-length code construction for the two-level scheme.

h1 (k1 x n) is the source code decoded by the relay. h2 (k2 x n) adds the
bin-index checks: s = h2 c. The relay code (k3 x n, k3 = n - k2) carries s
as its message. Graphs are grown by progressive edge growth (PEG); h2 is
grown on top of h1 so the stacked graph avoids short cycles as well.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import NotACodeword, RankDeficient, UnrealizableDistribution
from .exitchart import DegreeDistribution
from .gf2 import SystematicEncoder, row_reduce
from .optimizer import TwoLevelDesign

CODE_FORMAT = "relay-ldpc-code"
CODE_FORMAT_VERSION = 1
PEG_DEPTH = 3
REPAIR_ATTEMPTS = 10


@dataclass(frozen=True)
class TannerGraph:
    n: int
    m: int
    adjacency: tuple  # per check, sorted variable indices
    var_degrees: np.ndarray = field(repr=False)
    check_degrees: np.ndarray = field(repr=False)

    def __post_init__(self):
        adj = tuple(np.unique(np.asarray(a, dtype=np.int64)) for a in self.adjacency)
        if len(adj) != self.m:
            raise ValueError("adjacency length differs from m")
        for a, raw in zip(adj, self.adjacency):
            if len(a) != len(raw):
                raise ValueError("repeated edge within a check")
            if len(a) and (a[0] < 0 or a[-1] >= self.n):
                raise ValueError("variable index out of range")
        object.__setattr__(self, "adjacency", adj)
        cdeg = np.array([len(a) for a in adj], dtype=np.int64)
        vdeg = np.bincount(np.concatenate(adj) if adj else np.zeros(0, np.int64),
                           minlength=self.n)
        object.__setattr__(self, "check_degrees", cdeg)
        object.__setattr__(self, "var_degrees", vdeg)

    @classmethod
    def from_adjacency(cls, n: int, adjacency) -> "TannerGraph":
        return cls(n, len(adjacency), tuple(adjacency), None, None)

    @classmethod
    def from_dense(cls, H) -> "TannerGraph":
        H = np.asarray(H)
        return cls.from_adjacency(H.shape[1], [np.flatnonzero(row) for row in H])

    @property
    def edges(self) -> int:
        return int(self.check_degrees.sum())

    def edge_arrays(self):
        """(check index, variable index) per edge, check-major order."""
        chk = np.repeat(np.arange(self.m), self.check_degrees)
        var = np.concatenate(self.adjacency) if self.m else np.zeros(0, np.int64)
        return chk, var

    def matrix(self) -> sparse.csr_matrix:
        chk, var = self.edge_arrays()
        return sparse.csr_matrix((np.ones(chk.size, dtype=np.int64), (chk, var)),
                                 shape=(self.m, self.n))

    def dense(self) -> np.ndarray:
        H = np.zeros((self.m, self.n), dtype=np.uint8)
        chk, var = self.edge_arrays()
        H[chk, var] = 1
        return H

    def syndrome(self, bits) -> np.ndarray:
        bits = np.asarray(bits)
        flat = bits.reshape(-1, self.n).astype(np.int64)
        out = (self.matrix() @ flat.T).T & 1
        return out.astype(np.uint8).reshape(bits.shape[:-1] + (self.m,))

    def four_cycles(self) -> int:
        H = self.matrix()
        overlap = (H @ H.T).tocoo()
        off = overlap.row < overlap.col
        c = overlap.data[off]
        return int(np.sum(c * (c - 1) // 2))

    def edge_fractions(self, side: str = "var") -> dict[int, float]:
        deg = self.var_degrees if side == "var" else self.check_degrees
        deg = deg[deg > 0]
        total = deg.sum()
        vals, counts = np.unique(deg, return_counts=True)
        return {int(d): float(d * c / total) for d, c in zip(vals, counts)}

    def stack(self, other: "TannerGraph") -> "TannerGraph":
        if other.n != self.n:
            raise ValueError("graphs do not share the variable set")
        return TannerGraph.from_adjacency(self.n, list(self.adjacency) + list(other.adjacency))

    def to_list(self) -> list[list[int]]:
        return [a.tolist() for a in self.adjacency]


# ---------------------------------------------------------------------------
# degree sequences

def _node_counts(dist: DegreeDistribution, node_count: int) -> dict[int, int]:
    """Largest-remainder rounding of node-perspective fractions."""
    nf = dist.node_fractions()
    degs = sorted(nf)
    ideal = np.array([node_count * nf[d] for d in degs])
    base = np.floor(ideal).astype(int)
    short = node_count - base.sum()
    order = np.argsort(-(ideal - base), kind="stable")
    base[order[:short]] += 1
    return {d: int(c) for d, c in zip(degs, base)}


def sample_degree_sequence(dist: DegreeDistribution, node_count: int, seed) -> np.ndarray:
    """Node degrees realizing an edge-perspective distribution, in shuffled order."""
    if node_count < dist.max_degree:
        raise UnrealizableDistribution(
            f"{node_count} nodes cannot host degree {dist.max_degree}")
    counts = _node_counts(dist, node_count)
    seq = np.concatenate([np.full(c, d, dtype=np.int64) for d, c in counts.items()])
    rng = np.random.default_rng(seed)
    return rng.permutation(seq)


def match_edge_total(degrees: np.ndarray, total: int, lo: int = 1) -> np.ndarray:
    """Shift node degrees by +-1 until they sum to `total`.

    Decrements hit the highest-degree nodes, increments the highest-degree
    nodes as well, one per node per pass, so the distribution shape is kept.
    """
    deg = np.array(degrees, dtype=np.int64)
    diff = int(total - deg.sum())
    if diff == 0:
        return deg
    order = np.argsort(-deg, kind="stable")
    step = 1 if diff > 0 else -1
    while diff:
        moved = False
        for i in order:
            if diff == 0:
                break
            if step < 0 and deg[i] <= lo:
                continue
            deg[i] += step
            diff -= step
            moved = True
        if not moved:
            raise UnrealizableDistribution(f"cannot reach edge total {total}")
    return deg


# ---------------------------------------------------------------------------
# progressive edge growth

def _peg(var_degrees, check_degrees, rng, depth, base=None):
    """Grow edges for m new checks, optionally on top of a base graph.

    The base graph's edges take part in the distance search; its checks are
    never connected to. Returns the adjacency of the new checks and the number
    of placements that closed a 4-cycle or exceeded a check's target degree.
    """
    var_degrees = np.asarray(var_degrees, dtype=np.int64)
    cap = np.asarray(check_degrees, dtype=np.int64)
    n, m = var_degrees.size, cap.size
    offset = base.m if base is not None else 0
    total = offset + m
    base_vdeg = base.var_degrees if base is not None else np.zeros(n, np.int64)
    vwidth = int((base_vdeg + var_degrees).max(initial=1))
    cwidth = int(max(cap.max(initial=1), base.check_degrees.max(initial=1) if base else 1)) + 16
    vt = np.full((n, vwidth), -1, dtype=np.int64)
    ct = np.full((total + 1, cwidth), -1, dtype=np.int64)  # last row is a -1 sentinel
    vdeg = np.zeros(n, dtype=np.int64)
    cdeg = np.zeros(total, dtype=np.int64)
    if base is not None:
        for c, row in enumerate(base.adjacency):
            ct[c, :row.size] = row
            cdeg[c] = row.size
            vt[row, vdeg[row]] = c
            vdeg[row] += 1
    fill = np.zeros(m, dtype=np.int64)
    far = depth + 1
    weight = 4 * (cwidth + 1)
    compromises = 0
    order = np.lexsort((rng.random(n), var_degrees))
    for v in order:
        for _ in range(int(var_degrees[v])):
            level = np.full(m, far, dtype=np.int64)
            cmark = np.zeros(total + 1, dtype=bool)
            vmark = np.zeros(n, dtype=bool)
            vmark[v] = True
            cur = vt[v, :vdeg[v]]
            cmark[cur] = True
            own = cur[cur >= offset] - offset
            level[own] = 1
            room = cap - fill
            open_new = room > 0
            open_new[own] = False
            for lvl in range(2, depth + 1):
                # deeper levels only matter while some open check is unreached
                if cur.size == 0 or not np.any(open_new & (level == far)):
                    break
                vs = ct[cur].ravel()
                vs = vs[vs >= 0]
                vs = vs[~vmark[vs]]
                if vs.size == 0:
                    break
                vmark[vs] = True
                cs = vt[vs].ravel()
                cs = cs[cs >= 0]
                cs = cs[~cmark[cs]]
                if cs.size == 0:
                    break
                before = cmark.copy()
                cmark[cs] = True
                cs = np.flatnonzero(cmark & ~before)
                level[cs[cs >= offset] - offset] = lvl
                cur = cs
            adjacent = np.zeros(m, dtype=bool)
            adjacent[own] = True
            ok = (room > 0) & ~adjacent
            if not ok.any():
                ok = ~adjacent
                if not ok.any():
                    raise UnrealizableDistribution(f"variable {v} is adjacent to every check")
                compromises += 1
            score = np.where(ok, level * weight + room, np.iinfo(np.int64).min)
            best = np.flatnonzero(score == score.max())
            c = int(best[rng.integers(best.size)])
            if level[c] <= 2:
                compromises += 1
            g = c + offset
            if cdeg[g] >= cwidth:
                raise UnrealizableDistribution("check degree overflow during PEG")
            fill[c] += 1
            vt[v, vdeg[v]] = g
            vdeg[v] += 1
            ct[g, cdeg[g]] = v
            cdeg[g] += 1
    adj = [np.sort(ct[offset + j, :cdeg[offset + j]]) for j in range(m)]
    return adj, compromises


def construct_graph(var_degrees, check_degrees, seed, girth_target: str = "4-free",
                    depth: int = PEG_DEPTH) -> TannerGraph:
    """PEG Tanner graph with the given node degrees.

    girth_target "4-free" makes each placement avoid checks within two hops
    whenever a check with spare sockets exists elsewhere; "best-effort" accepts
    whatever the search finds. The number of compromised placements is
    available via `construct_graph_report`.
    """
    graph, _ = construct_graph_report(var_degrees, check_degrees, seed, girth_target, depth)
    return graph


def construct_graph_report(var_degrees, check_degrees, seed, girth_target="4-free",
                           depth=PEG_DEPTH):
    var_degrees = np.asarray(var_degrees, dtype=np.int64)
    check_degrees = np.asarray(check_degrees, dtype=np.int64)
    if var_degrees.sum() != check_degrees.sum():
        raise UnrealizableDistribution(
            f"edge totals differ: {var_degrees.sum()} vs {check_degrees.sum()}")
    if girth_target not in ("4-free", "best-effort"):
        raise ValueError(f"unknown girth target {girth_target!r}")
    if np.any(var_degrees > len(check_degrees)):
        raise UnrealizableDistribution("variable degree exceeds number of checks")
    depth = max(depth, 2) if girth_target == "4-free" else max(depth, 1)
    rng = np.random.default_rng(seed)
    adj, comp = _peg(var_degrees, check_degrees, rng, depth)
    g = TannerGraph.from_adjacency(len(var_degrees), adj)
    return g, {"compromises": comp, "four_cycles": g.four_cycles()}


def _grow_on(base: TannerGraph, var_degrees, check_degrees, rng, depth) -> TannerGraph:
    adj, _ = _peg(var_degrees, check_degrees, rng, depth, base=base)
    return TannerGraph.from_adjacency(base.n, adj)


def _swap_repair(graph: TannerGraph, rows, rng, offset=0) -> TannerGraph:
    """Swap one edge of each listed row with a random edge elsewhere (degrees kept)."""
    adj = [list(a) for a in graph.to_list()]
    sets = [set(a) for a in adj]
    for r in rows:
        r = r - offset
        if r < 0 or r >= graph.m or not adj[r]:
            continue
        for _ in range(200):
            other = int(rng.integers(graph.m))
            if other == r or not adj[other]:
                continue
            v = adj[r][int(rng.integers(len(adj[r])))]
            u = adj[other][int(rng.integers(len(adj[other])))]
            if u in sets[r] or v in sets[other]:
                continue
            adj[r][adj[r].index(v)] = u
            adj[other][adj[other].index(u)] = v
            sets[r].discard(v); sets[r].add(u)
            sets[other].discard(u); sets[other].add(v)
            break
    return TannerGraph.from_adjacency(graph.n, adj)


def _full_rank(graph: TannerGraph, rng, base: TannerGraph | None = None) -> TannerGraph:
    """Repair rank deficiency of `graph` (stacked under `base` if given)."""
    offset = base.m if base is not None else 0
    for _ in range(REPAIR_ATTEMPTS + 1):
        full = base.stack(graph) if base is not None else graph
        _, piv, _, dependent = row_reduce(full.dense())
        if piv.size == full.m:
            return graph
        graph = _swap_repair(graph, dependent, rng, offset)
    raise RankDeficient(f"rank still deficient after {REPAIR_ATTEMPTS} repair attempts")


# ---------------------------------------------------------------------------
# codes

class TwoLevelCode:
    def __init__(self, h1: TannerGraph, h2: TannerGraph, meta: dict | None = None):
        if h1.n != h2.n:
            raise ValueError("h1 and h2 must share the variable set")
        self.h1, self.h2 = h1, h2
        self.n, self.k1, self.k2 = h1.n, h1.m, h2.m
        self.encoder = SystematicEncoder(h1.dense(), required_rank=h1.m)
        self.stacked = h1.stack(h2)
        self.meta = dict(meta or {})

    @property
    def message_length(self) -> int:
        return self.n - self.k1

    def stacked_rank(self) -> int:
        return int(row_reduce(self.stacked.dense())[1].size)

    def realized_mu(self) -> float:
        return self.h1.edges / (self.h1.edges + self.h2.edges)


class RelayCode:
    def __init__(self, graph: TannerGraph, meta: dict | None = None):
        self.graph = graph
        self.n, self.k3 = graph.n, graph.m
        self.encoder = SystematicEncoder(graph.dense(), required_rank=graph.m)
        self.meta = dict(meta or {})

    @property
    def message_length(self) -> int:
        return self.n - self.k3


def encode(code, message) -> np.ndarray:
    """Systematic encoding against h1 (TwoLevelCode) or the relay graph (RelayCode)."""
    return code.encoder.encode(message)


def compute_bin_index(code: TwoLevelCode, codeword, check: bool = True) -> np.ndarray:
    """s = h2 c over GF(2)."""
    codeword = np.asarray(codeword)
    if check and np.any(code.h1.syndrome(codeword)):
        raise NotACodeword("h1 syndrome is nonzero")
    return code.h2.syndrome(codeword)


def _host_order(h1: TannerGraph, rng) -> np.ndarray:
    """Variables in the order they should receive bin-index sockets.

    Degree-2 variables of h1 are edges between checks; a cycle among them is a
    low-weight codeword. A random spanning forest of that check graph is kept,
    the remaining degree-2 variables (each closing one cycle) come first,
    shortest cycle first, then everything else by ascending h1 degree.
    """
    n, m = h1.n, h1.m
    deg2 = np.flatnonzero(h1.var_degrees == 2)
    deg2 = deg2[rng.permutation(deg2.size)]
    ends = {}
    for c, row in enumerate(h1.adjacency):
        for v in row:
            if h1.var_degrees[v] == 2:
                ends.setdefault(int(v), []).append(c)
    parent = np.arange(m)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree, extra = [], []
    for v in deg2:
        a, b = ends[int(v)]
        ra, rb = find(a), find(b)
        if ra == rb:
            extra.append(int(v))
        else:
            parent[ra] = rb
            tree.append(int(v))
    first = np.zeros(0, dtype=np.int64)
    if extra:
        pairs = np.array([ends[v] for v in tree], dtype=np.int64).reshape(-1, 2)
        forest = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                                   shape=(m, m)).tocsr()
        xe = np.array([ends[v] for v in extra], dtype=np.int64)
        src, inv = np.unique(xe[:, 0], return_inverse=True)
        dist = csgraph.shortest_path(forest, directed=False, unweighted=True, indices=src)
        length = dist[inv, xe[:, 1]]
        first = np.array(extra, dtype=np.int64)[np.argsort(length, kind="stable")]
    rest = np.setdiff1d(np.arange(n), first)
    rest = rest[np.lexsort((rng.random(rest.size), h1.var_degrees[rest]))]
    return np.concatenate([first, rest])


def _h2_degrees(design: TwoLevelDesign, h1: TannerGraph, k2: int, rng):
    """Bin-index degree sequences (per variable, per check) hosted by _host_order."""
    n = h1.n
    chk = sample_degree_sequence(design.rho2prime, max(k2, design.rho2prime.max_degree), rng)[:k2]
    edges = int(chk.sum())
    n2 = int(round(edges * design.lambda2prime.inverse_mean()))
    if n2 > n or n2 < design.lambda2prime.max_degree:
        raise UnrealizableDistribution(
            f"lambda2' needs {n2} variables for {edges} bin-index edges, have {n}")
    deg = sample_degree_sequence(design.lambda2prime, n2, rng)
    deg = match_edge_total(deg, edges, lo=1)
    hosts = _host_order(h1, rng)[:n2]
    var = np.zeros(n, dtype=np.int64)
    var[hosts] = deg
    return var, chk


def build_two_level_code(design: TwoLevelDesign, n: int, seed, depth: int = PEG_DEPTH):
    """Construct (TwoLevelCode, RelayCode) at block length n.

    k2 = round(n r0*) first, k3 = n - k2, k1 = round(n (1 - r)).
    """
    k2 = int(round(n * design.r0_star))
    k3 = n - k2
    k1 = int(round(n * (1.0 - design.r)))
    if not (0 < k1 < n and 0 <= k2 and k1 + k2 < n and 0 < k3 < n):
        raise UnrealizableDistribution(f"invalid check counts k1={k1}, k2={k2}, k3={k3}")
    ss = np.random.SeedSequence(seed)
    r1, r2, r3 = (np.random.default_rng(s) for s in ss.spawn(3))

    var1 = sample_degree_sequence(design.lambda1, n, r1)
    chk1 = sample_degree_sequence(design.rho1, max(k1, design.rho1.max_degree), r1)[:k1]
    chk1 = match_edge_total(chk1, int(var1.sum()), lo=2)
    h1 = TannerGraph.from_adjacency(n, _peg(var1, chk1, r1, depth)[0])
    h1 = _full_rank(h1, r1)

    if k2:
        var2, chk2 = _h2_degrees(design, h1, k2, r2)
        # the stacked graph is dense; a two-hop search already finds all it can
        h2 = _grow_on(h1, var2, chk2, r2, min(depth, 2))
        h2 = _full_rank(h2, r2, base=h1)
    else:
        h2 = TannerGraph.from_adjacency(n, [])

    var3 = sample_degree_sequence(design.lambda3, n, r3)
    chk3 = sample_degree_sequence(design.rho3, max(k3, design.rho3.max_degree), r3)[:k3]
    chk3 = match_edge_total(chk3, int(var3.sum()), lo=2)
    g3 = TannerGraph.from_adjacency(n, _peg(var3, chk3, r3, depth)[0])
    g3 = _full_rank(g3, r3)

    meta = {"seed": seed if isinstance(seed, int) else str(seed),
            "design_digest": design.digest(), "depth": depth}
    code = TwoLevelCode(h1, h2, meta)
    if code.stacked_rank() != k1 + k2:
        raise RankDeficient("stacked matrix lost rank")
    relay = RelayCode(g3, meta)
    return code, relay


# ---------------------------------------------------------------------------
# code files

def code_document(code: TwoLevelCode, relay: RelayCode, design: TwoLevelDesign | None = None,
                  extra: dict | None = None) -> dict:
    doc = {
        "format": CODE_FORMAT,
        "format_version": CODE_FORMAT_VERSION,
        "n": code.n, "k1": code.k1, "k2": code.k2, "k3": relay.k3,
        "h1": code.h1.to_list(), "h2": code.h2.to_list(), "relay": relay.graph.to_list(),
        "seed": code.meta.get("seed"),
        "design_digest": code.meta.get("design_digest"),
        "realized_mu": code.realized_mu(),
    }
    if design is not None:
        doc["design"] = design.to_dict()
    if extra:
        doc.update(extra)
    return doc


def dump_code(path, code, relay, design=None, extra=None):
    doc = code_document(code, relay, design, extra)
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    with open(path, "w") as fh:
        fh.write(text + "\n")
    return hashlib.sha256(text.encode()).hexdigest()


def load_code(path):
    """Returns (TwoLevelCode, RelayCode, document)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CODE_FORMAT or doc.get("format_version") != CODE_FORMAT_VERSION:
        raise ValueError(f"{path} is not a version-{CODE_FORMAT_VERSION} code file")
    n = int(doc["n"])
    meta = {"seed": doc.get("seed"), "design_digest": doc.get("design_digest")}
    code = TwoLevelCode(TannerGraph.from_adjacency(n, doc["h1"]),
                        TannerGraph.from_adjacency(n, doc["h2"]), meta)
    relay = RelayCode(TannerGraph.from_adjacency(n, doc["relay"]), meta)
    return code, relay, doc
