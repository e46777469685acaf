"""Platoon disposition index on a lane-discretized node graph.

The road is reduced to nodes (one per vehicle/obstacle, free filler nodes
tiled between them), edges connect adjacent nodes, and each edge carries an
equivalence distance: normalized Euclidean length plus a lane-change
penalty.  The index is the equivalent length of the cheapest path from the
platoon's first vehicle to its last, solved as a 0-1 shortest-path integer
program; ``dijkstra_oracle`` answers the same question with label-setting
search and exists purely to cross-check the IP solver.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import config

FREE = "free"
OCCUPIED = "occupied_by_platoon"
BLOCKED = "blocked"

START = "start"
END = "end"
INTERIOR = "interior"


class PdiError(ValueError):
    pass


@dataclass(frozen=True)
class PdiParams:
    k_lane: float = config.DEFAULTS.pdi.k_lane
    d_norm: float = config.DEFAULTS.pdi.d_norm
    d_node_min: float = config.DEFAULTS.pdi.d_node_min
    d_node_max: float = config.DEFAULTS.pdi.d_node_max
    node_spacing: float = config.DEFAULTS.pdi.node_spacing
    infeasible_factor: float = config.DEFAULTS.pdi.infeasible_factor

    def __post_init__(self):
        if self.k_lane <= 0 or self.d_norm <= 0:
            raise PdiError("k_lane and d_norm must be positive")
        if not (self.d_node_min <= self.node_spacing < self.d_node_max):
            raise PdiError("node spacing must lie in [d_node_min, d_node_max)")


@dataclass
class RoadNode:
    id: int
    lane: int
    x: float
    y: float
    status: str = FREE
    role: str = INTERIOR


@dataclass
class RoadNodeGraph:
    nodes: list
    edges: list                     # (node_id_i, node_id_j, ed_weight), undirected
    node_spacing: float
    start: int
    end: int

    def node(self, nid: int) -> RoadNode:
        return self.nodes[nid]


def adjacent(a: RoadNode, b: RoadNode, p: PdiParams) -> bool:
    """Definition of node adjacency: same lane within the max spacing, or
    laterally neighboring lanes within the max spacing."""
    dx = abs(a.x - b.x)
    if a.lane == b.lane:
        return 0.0 < dx < p.d_node_max or (dx == 0.0 and a.id != b.id)
    return abs(a.lane - b.lane) == 1 and dx < p.d_node_max


def equivalence_distance(a: RoadNode, b: RoadNode, p: PdiParams) -> float:
    """Edge weight: Euclidean distance over the normalizer plus the
    lane-change penalty per lane crossed."""
    if not adjacent(a, b, p):
        raise PdiError(f"nodes {a.id} and {b.id} are not adjacent")
    d = math.hypot(a.x - b.x, a.y - b.y)
    return d / p.d_norm + p.k_lane * abs(a.lane - b.lane)


def _fill_spacings(gap: float, p: PdiParams):
    """Number of interior filler nodes for a same-lane gap, spacing closest
    to the preferred value while staying inside [d_node_min, d_node_max)."""
    if gap < p.d_node_max:
        return 0
    best_k, best_err = None, math.inf
    k_max = int(math.ceil(gap / p.d_node_min))
    for k in range(1, k_max + 1):
        s = gap / (k + 1)
        if p.d_node_min <= s < p.d_node_max:
            err = abs(s - p.node_spacing)
            if err < best_err:
                best_k, best_err = k, err
    if best_k is None:
        # very short leftover; a single midpoint keeps the chain connected
        best_k = max(int(math.ceil(gap / p.d_node_max)) - 1, 1)
    return best_k


def build_node_graph(road, platoon, background, p: PdiParams | None = None,
                     lane_width: float | None = None) -> RoadNodeGraph:
    """Node map for the current scene.

    Platoon vehicles anchor pathable nodes at their rear-axle centers (the
    frontmost is the start, the rearmost the end); background vehicles and
    obstacles anchor blocked nodes at their outline centers; remaining gaps
    in every lane are tiled with evenly spaced free nodes.
    """
    p = p or PdiParams()
    if not platoon:
        raise PdiError("platoon must be non-empty")
    lane_width = lane_width if lane_width is not None else road.lane_width
    for v in platoon:
        if not road.contains(v.x):
            raise PdiError(f"platoon vehicle {v.id} outside the road")

    ordered = sorted(platoon, key=lambda v: -v.x)
    first, last = ordered[0], ordered[-1]
    anchors = []  # (x, lane, status, role)
    for v in ordered:
        role = START if v.id == first.id else END if v.id == last.id else INTERIOR
        anchors.append((v.x - 0.25 * v.length, v.lane, OCCUPIED, role))
    x_hi = max(a[0] for a in anchors)
    x_lo = min(a[0] for a in anchors)
    for v in background:
        if x_lo - 1.0 <= v.x <= x_hi + 1.0 and 0 <= v.lane < road.lane_count:
            anchors.append((v.x, v.lane, BLOCKED, INTERIOR))

    by_lane = {lane: [] for lane in range(road.lane_count)}
    for x, lane, status, role in anchors:
        by_lane[lane].append((x, status, role))

    status_rank = {BLOCKED: 2, OCCUPIED: 1, FREE: 0}
    nodes = []

    def add_node(x, lane, status, role):
        for n in nodes:
            if n.lane == lane and abs(n.x - x) < 1.0:
                if status_rank[status] > status_rank[n.status]:
                    n.status = status
                if role != INTERIOR:
                    n.role = role
                return n
        n = RoadNode(id=len(nodes), lane=lane, x=x, y=lane * lane_width,
                     status=status, role=role)
        nodes.append(n)
        return n

    for lane in range(road.lane_count):
        entries = sorted(by_lane[lane])
        xs = []
        for x, status, role in entries:
            add_node(x, lane, status, role)
            xs.append(x)
        # tile corridor ends and gaps with free nodes
        pts = sorted(set([x_lo, x_hi] + xs))
        for x in (x_lo, x_hi):
            add_node(x, lane, FREE, INTERIOR)
        for a, b in zip(pts, pts[1:]):
            gap = b - a
            k = _fill_spacings(gap, p)
            for i in range(1, k + 1):
                add_node(a + gap * i / (k + 1), lane, FREE, INTERIOR)

    start_id = next(n.id for n in nodes if n.role == START)
    end_id = next(n.id for n in nodes if n.role == END)

    edges = []
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if a.status == BLOCKED or b.status == BLOCKED:
                continue
            if adjacent(a, b, p):
                edges.append((a.id, b.id, equivalence_distance(a, b, p)))
    return RoadNodeGraph(nodes=nodes, edges=edges, node_spacing=p.node_spacing,
                         start=start_id, end=end_id)


@dataclass
class PdiResult:
    value: float
    infeasible: bool = False
    path: list = field(default_factory=list)   # node ids start..end


def infeasible_sentinel(graph: RoadNodeGraph,
                        factor: float = config.DEFAULTS.pdi.infeasible_factor) -> float:
    total = sum(w for _, _, w in graph.edges)
    return factor * max(total, 1.0)


def _path_value(graph: RoadNodeGraph, path, weights) -> float:
    total = 0.0
    for a, b in zip(path, path[1:]):
        total += weights[(a, b)]
    return total


def dijkstra_oracle(graph: RoadNodeGraph) -> PdiResult:
    """Label-setting shortest path on the same graph; verification oracle."""
    if graph.start == graph.end:
        return PdiResult(value=0.0, path=[graph.start])
    adj = {}
    for i, j, w in graph.edges:
        adj.setdefault(i, []).append((j, w))
        adj.setdefault(j, []).append((i, w))
    dist = {graph.start: 0.0}
    prev = {}
    heap = [(0.0, graph.start)]
    seen = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in seen:
            continue
        seen.add(u)
        if u == graph.end:
            break
        for v, w in adj.get(u, ()):
            nd = d + w
            if v not in dist or nd < dist[v] - 1e-15:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if graph.end not in seen:
        return PdiResult(value=infeasible_sentinel(graph), infeasible=True)
    path = [graph.end]
    while path[-1] != graph.start:
        path.append(prev[path[-1]])
    path.reverse()
    return PdiResult(value=dist[graph.end], path=path)


def _lp_relaxation(costs, a_eq, b_eq, fixed):
    bounds = []
    for k in range(len(costs)):
        lo, hi = 0.0, 1.0
        if k in fixed:
            lo = hi = float(fixed[k])
        bounds.append((lo, hi))
    res = linprog(costs, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
    return res


def compute_pdi(graph: RoadNodeGraph, factor: float | None = None) -> PdiResult:
    """Equivalent length of the cheapest start-to-end path, via a 0-1 integer
    program over directed edge variables with branch-and-bound on the LP
    relaxation.

    Unit flow leaves the start and enters the end; interior nodes conserve
    flow; blocked nodes carry no edges.  An unreachable end yields the
    infeasible sentinel so game-layer callers keep a finite comparable value.
    """
    if graph.start == graph.end:
        return PdiResult(value=0.0, path=[graph.start])

    arcs = []
    costs = []
    weights = {}
    for i, j, w in graph.edges:
        weights[(i, j)] = w
        weights[(j, i)] = w
        arcs.append((i, j))
        costs.append(w)
        arcs.append((j, i))
        costs.append(w)
    sentinel = infeasible_sentinel(graph) if factor is None else factor
    if not arcs:
        return PdiResult(value=sentinel, infeasible=True)

    n_arcs = len(arcs)
    out_of = {}
    in_to = {}
    for k, (i, j) in enumerate(arcs):
        out_of.setdefault(i, []).append(k)
        in_to.setdefault(j, []).append(k)

    rows = []
    rhs = []

    def add_row(arc_idx, value):
        row = np.zeros(n_arcs)
        row[arc_idx] = 1.0
        rows.append(row)
        rhs.append(value)

    add_row(out_of.get(graph.start, []), 1.0)   # unit flow out of the start
    add_row(in_to.get(graph.start, []), 0.0)    # nothing returns to the start
    add_row(in_to.get(graph.end, []), 1.0)      # unit flow into the end
    add_row(out_of.get(graph.end, []), 0.0)     # nothing leaves the end
    for node in graph.nodes:
        nid = node.id
        if nid in (graph.start, graph.end):
            continue
        ins = in_to.get(nid, [])
        outs = out_of.get(nid, [])
        if not ins and not outs:
            continue
        row = np.zeros(n_arcs)
        row[ins] = 1.0
        row[outs] -= 1.0
        rows.append(row)
        rhs.append(0.0)

    a_eq = np.vstack(rows)
    b_eq = np.array(rhs)
    c = np.array(costs)

    best_value = math.inf
    best_x = None
    stack = [dict()]
    expansions = 0
    while stack:
        fixed = stack.pop()
        expansions += 1
        if expansions > 2000:
            raise PdiError("branch-and-bound expansion budget exceeded")
        res = _lp_relaxation(c, a_eq, b_eq, fixed)
        if res.status != 0:
            continue
        if res.fun >= best_value - 1e-12:
            continue
        x = res.x
        frac = np.abs(x - np.round(x))
        worst = int(np.argmax(frac))
        if frac[worst] <= 1e-6:
            if res.fun < best_value:
                best_value = res.fun
                best_x = np.round(x)
            continue
        for v in (0, 1):
            child = dict(fixed)
            child[worst] = v
            stack.append(child)

    if best_x is None:
        return PdiResult(value=sentinel, infeasible=True)

    # walk the chosen arcs from the start so the float summation order
    # matches a path traversal
    succ = {}
    for k, (i, j) in enumerate(arcs):
        if best_x[k] > 0.5:
            succ[i] = j
    path = [graph.start]
    guard = 0
    while path[-1] != graph.end:
        nxt = succ.get(path[-1])
        if nxt is None or guard > len(arcs):
            return PdiResult(value=float(best_value), infeasible=False, path=[])
        path.append(nxt)
        guard += 1
    return PdiResult(value=_path_value(graph, path, weights), path=path)


def random_node_graph(rng, lane_count: int | None = None, n_nodes: int | None = None,
                      blocked_frac: float | None = None,
                      p: PdiParams | None = None) -> RoadNodeGraph:
    """Synthetic graph for solver cross-checks: 2-4 lanes, nodes at random
    legal spacings, a random share of blocked nodes, start/end on free nodes."""
    p = p or PdiParams()
    lane_count = lane_count if lane_count is not None else int(rng.integers(2, 5))
    n_nodes = n_nodes if n_nodes is not None else int(rng.integers(5, 41))
    blocked_frac = blocked_frac if blocked_frac is not None else float(rng.uniform(0.0, 0.3))

    nodes = []
    lane_x = {lane: float(rng.uniform(0.0, 10.0)) for lane in range(lane_count)}
    for _ in range(n_nodes):
        lane = int(rng.integers(0, lane_count))
        lane_x[lane] += float(rng.uniform(p.d_node_min, p.d_node_max - 1e-6))
        nodes.append(RoadNode(id=len(nodes), lane=lane, x=lane_x[lane],
                              y=lane * config.LANE_WIDTH, status=FREE))
    n_blocked = int(blocked_frac * len(nodes))
    blocked_ids = rng.choice(len(nodes), size=n_blocked, replace=False) if n_blocked else []
    for nid in blocked_ids:
        nodes[nid].status = BLOCKED
    free_ids = [n.id for n in nodes if n.status == FREE]
    if len(free_ids) < 2:
        nodes[0].status = FREE
        nodes[1].status = FREE
        free_ids = [0, 1]
    start, end = rng.choice(free_ids, size=2, replace=False)
    nodes[int(start)].role = START
    nodes[int(end)].role = END

    edges = []
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if a.status == BLOCKED or b.status == BLOCKED:
                continue
            if adjacent(a, b, p):
                edges.append((a.id, b.id, equivalence_distance(a, b, p)))
    return RoadNodeGraph(nodes=nodes, edges=edges, node_spacing=p.node_spacing,
                         start=int(start), end=int(end))
