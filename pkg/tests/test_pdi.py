import math

import numpy as np
import pytest

from platoonreorg.pdi import (
    BLOCKED,
    END,
    FREE,
    OCCUPIED,
    START,
    PdiError,
    PdiParams,
    RoadNode,
    RoadNodeGraph,
    adjacent,
    build_node_graph,
    compute_pdi,
    dijkstra_oracle,
    equivalence_distance,
    random_node_graph,
)
from platoonreorg.world import RoadMap, VehicleState

P = PdiParams()


def node(nid, lane, x, status=FREE, role="interior"):
    return RoadNode(id=nid, lane=lane, x=x, y=lane * 4.0, status=status, role=role)


def chain_graph(xs, lane=0, blocked=(), start=0, end=None):
    nodes = [node(i, lane, x) for i, x in enumerate(xs)]
    for b in blocked:
        nodes[b].status = BLOCKED
    end = len(xs) - 1 if end is None else end
    nodes[start].role = START
    nodes[end].role = END
    edges = []
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if a.status == BLOCKED or b.status == BLOCKED:
                continue
            if adjacent(a, b, P):
                edges.append((a.id, b.id, equivalence_distance(a, b, P)))
    return RoadNodeGraph(nodes=nodes, edges=edges, node_spacing=15.0, start=start, end=end)


class TestEquivalenceDistance:
    def test_same_lane(self):
        a, b = node(0, 0, 0.0), node(1, 0, 15.0)
        assert equivalence_distance(a, b, P) == pytest.approx(0.75)

    def test_adjacent_lane(self):
        a, b = node(0, 0, 0.0), node(1, 1, 15.0)
        expected = math.sqrt(15.0 ** 2 + 4.0 ** 2) / 20.0 + 10.0
        assert equivalence_distance(a, b, P) == pytest.approx(expected)
        assert expected == pytest.approx(10.776, abs=1e-3)

    def test_coincident_degenerate(self):
        a, b = node(0, 0, 5.0), node(1, 0, 5.0)
        assert equivalence_distance(a, b, P) == 0.0

    def test_non_adjacent_rejected(self):
        a, b = node(0, 0, 0.0), node(1, 0, 25.0)
        with pytest.raises(PdiError):
            equivalence_distance(a, b, P)
        c = node(2, 2, 5.0)
        with pytest.raises(PdiError):
            equivalence_distance(a, c, P)


class TestComputePdi:
    def test_start_equals_end(self):
        g = chain_graph([0.0, 15.0], start=0, end=0)
        assert compute_pdi(g).value == 0.0

    def test_collinear_chain(self):
        g = chain_graph([0.0, 15.0, 30.0, 45.0, 60.0])
        res = compute_pdi(g)
        oracle = dijkstra_oracle(g)
        assert res.value == pytest.approx(3.0, abs=1e-9)
        assert res.value == pytest.approx(oracle.value, abs=1e-12)

    def test_single_edge(self):
        g = chain_graph([0.0, 12.0])
        res = dijkstra_oracle(g)
        assert res.value == pytest.approx(12.0 / 20.0)
        assert compute_pdi(g).value == pytest.approx(res.value, abs=1e-12)

    def test_blocked_detour_matches_oracle(self):
        # two lanes; middle of lane 0 blocked, lane 1 free at same spacing
        nodes = []
        for i, x in enumerate([0.0, 15.0, 30.0, 45.0, 60.0]):
            nodes.append(node(i, 0, x))
        for j, x in enumerate([0.0, 15.0, 30.0, 45.0, 60.0]):
            nodes.append(node(5 + j, 1, x))
        nodes[2].status = BLOCKED
        nodes[0].role = START
        nodes[4].role = END
        edges = []
        for i, a in enumerate(nodes):
            for b in nodes[i + 1:]:
                if a.status == BLOCKED or b.status == BLOCKED:
                    continue
                if adjacent(a, b, P):
                    edges.append((a.id, b.id, equivalence_distance(a, b, P)))
        g = RoadNodeGraph(nodes=nodes, edges=edges, node_spacing=15.0, start=0, end=4)
        res = compute_pdi(g)
        oracle = dijkstra_oracle(g)
        assert not res.infeasible
        assert res.value == pytest.approx(oracle.value, abs=1e-9)
        assert res.value > 20.0  # two lane changes dominate

    def test_fully_blocked_single_lane(self):
        g = chain_graph([0.0, 15.0, 30.0], blocked=(1,))
        res = compute_pdi(g)
        oracle = dijkstra_oracle(g)
        assert res.infeasible and oracle.infeasible
        assert res.value == pytest.approx(oracle.value)

    def test_blockage_never_decreases(self):
        xs = [0.0, 14.0, 28.0, 42.0, 56.0]
        nodes0 = chain_graph(xs)
        base = compute_pdi(nodes0).value
        g2 = chain_graph(xs, blocked=(2,))
        assert compute_pdi(g2).value >= base - 1e-12


class TestOracleEquivalence:
    def test_random_graphs_small(self):
        rng = np.random.default_rng(2024)
        for _ in range(120):
            g = random_node_graph(rng)
            a = compute_pdi(g)
            b = dijkstra_oracle(g)
            assert a.infeasible == b.infeasible
            assert a.value == pytest.approx(b.value, abs=1e-9)


class TestBuildNodeGraph:
    def setup_method(self):
        self.road = RoadMap(lane_count=3, length=1000.0)

    def platoon(self, xs, lane=1):
        return [VehicleState(id=i, kind="CAV", x=x, y=4.0, speed=25.0,
                             lane=lane, target_lane=lane)
                for i, x in enumerate(xs)]

    def test_compact_platoon_roles(self):
        plat = self.platoon([120.0, 110.0, 100.0])
        g = build_node_graph(self.road, plat, [], P)
        start, end = g.node(g.start), g.node(g.end)
        assert start.role == START and end.role == END
        assert start.x > end.x
        assert all(n.status != BLOCKED for n in g.nodes)
        res = compute_pdi(g)
        # spacing 10 m, two hops in-lane
        assert res.value == pytest.approx(2 * 10.0 / 20.0, abs=1e-9)

    def test_background_blocks(self):
        plat = self.platoon([140.0, 100.0])
        bg = [VehicleState(id=99, kind="HDV", x=120.0, y=4.0, speed=20.0,
                           lane=1, target_lane=1)]
        g = build_node_graph(self.road, plat, bg, P)
        blocked = [n for n in g.nodes if n.status == BLOCKED]
        assert len(blocked) == 1
        assert blocked[0].lane == 1
        res = compute_pdi(g)
        assert not res.infeasible  # detour through lanes 0/2
        assert res.value > 20.0

    def test_gap_tiling_spacing(self):
        plat = self.platoon([200.0, 100.0])
        g = build_node_graph(self.road, plat, [], P)
        lane1 = sorted(n.x for n in g.nodes if n.lane == 1)
        gaps = [b - a for a, b in zip(lane1, lane1[1:])]
        assert all(g_ < P.d_node_max for g_ in gaps)
        res = compute_pdi(g)
        assert res.value == pytest.approx(dijkstra_oracle(g).value, abs=1e-9)

    def test_same_lane_adjacency_rule(self):
        # 25 m apart is NOT adjacent; interleaving a free node makes both halves adjacent
        a, b = node(0, 0, 0.0), node(1, 0, 25.0)
        assert not adjacent(a, b, P)
        mid = node(2, 0, 12.5)
        assert adjacent(a, mid, P) and adjacent(mid, b, P)

    def test_rejects_off_road_platoon(self):
        plat = self.platoon([2000.0, 1990.0])
        with pytest.raises(PdiError):
            build_node_graph(self.road, plat, [], P)

    def test_rejects_empty_platoon(self):
        with pytest.raises(PdiError):
            build_node_graph(self.road, [], [], P)
