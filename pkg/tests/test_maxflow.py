import itertools

import numpy as np

from mavnav.maxflow import FlowNetwork


def brute_force_min_cut(n, source_caps, sink_caps, edges):
    """Enumerate every labeling (True = source side) and return min energy."""
    best = float("inf")
    for bits in itertools.product([False, True], repeat=n):
        e = 0.0
        for v in range(n):
            if not bits[v]:
                e += source_caps[v]
            else:
                e += sink_caps[v]
        for u, v, w in edges:
            if bits[u] != bits[v]:
                e += w
        best = min(best, e)
    return best


def test_two_node_chain():
    net = FlowNetwork(2)
    net.add_source_cap(0, 5.0)
    net.add_sink_cap(1, 5.0)
    net.add_edge(0, 1, 2.0, 2.0)
    assert net.solve() == 2.0
    side = net.min_cut_source_side()
    assert side == [True, False]


def test_source_saturation():
    net = FlowNetwork(1)
    net.add_source_cap(0, 1.0)
    net.add_sink_cap(0, 3.0)
    assert net.solve() == 1.0
    assert net.min_cut_source_side() == [False]


def test_matches_brute_force_on_random_graphs():
    rng = np.random.default_rng(17)
    for trial in range(30):
        n = int(rng.integers(2, 9))
        source_caps = rng.uniform(0, 4, n)
        sink_caps = rng.uniform(0, 4, n)
        edges = []
        for u in range(n):
            for v in range(u + 1, n):
                if rng.random() < 0.5:
                    edges.append((u, v, float(rng.uniform(0.1, 3))))
        net = FlowNetwork(n)
        for v in range(n):
            net.add_source_cap(v, float(source_caps[v]))
            net.add_sink_cap(v, float(sink_caps[v]))
        for u, v, w in edges:
            net.add_edge(u, v, w, w)
        flow = net.solve()
        oracle = brute_force_min_cut(n, source_caps, sink_caps, edges)
        assert abs(flow - oracle) < 1e-9, f"trial {trial}"
        # the reported side must achieve the same energy
        side = net.min_cut_source_side()
        e = sum(source_caps[v] for v in range(n) if not side[v])
        e += sum(sink_caps[v] for v in range(n) if side[v])
        e += sum(w for u, v, w in edges if side[u] != side[v])
        assert abs(e - oracle) < 1e-9
