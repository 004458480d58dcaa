"""Exact s-t min-cut via Dinic's augmenting-path max-flow.

Capacities are floats; residuals below 1e-12 count as saturated. Sized
for desk-scale graphs (tens of thousands of nodes), where exactness of
the cut matters and speed does not.
"""

from __future__ import annotations

from collections import deque

_EPS = 1e-12


class FlowNetwork:
    """Flow network over nodes 0..n-1 plus implicit source and sink."""

    def __init__(self, n_nodes: int):
        self.n = n_nodes
        self.source = n_nodes
        self.sink = n_nodes + 1
        self._to: list[int] = []
        self._cap: list[float] = []
        self._adj: list[list[int]] = [[] for _ in range(n_nodes + 2)]
        self.source_cap = [0.0] * n_nodes
        self.sink_cap = [0.0] * n_nodes
        self._finalized = False

    def add_edge(self, u: int, v: int, cap: float, rcap: float = 0.0) -> None:
        if cap < 0 or rcap < 0:
            raise ValueError("negative capacity")
        self._adj[u].append(len(self._to))
        self._to.append(v)
        self._cap.append(cap)
        self._adj[v].append(len(self._to))
        self._to.append(u)
        self._cap.append(rcap)

    def add_source_cap(self, v: int, cap: float) -> None:
        self.source_cap[v] += cap

    def add_sink_cap(self, v: int, cap: float) -> None:
        self.sink_cap[v] += cap

    def _finalize(self) -> None:
        if self._finalized:
            return
        for v in range(self.n):
            if self.source_cap[v] > 0:
                self.add_edge(self.source, v, self.source_cap[v])
            if self.sink_cap[v] > 0:
                self.add_edge(v, self.sink, self.sink_cap[v])
        self._finalized = True

    def solve(self) -> float:
        """Max-flow value == min-cut energy."""
        self._finalize()
        to, cap, adj = self._to, self._cap, self._adj
        s, t = self.source, self.sink
        total = 0.0
        while True:
            level = [-1] * (self.n + 2)
            level[s] = 0
            q = deque([s])
            while q:
                u = q.popleft()
                for eid in adj[u]:
                    v = to[eid]
                    if level[v] < 0 and cap[eid] > _EPS:
                        level[v] = level[u] + 1
                        q.append(v)
            if level[t] < 0:
                return total
            it = [0] * (self.n + 2)
            while True:
                pushed = self._dfs(s, t, float("inf"), level, it)
                if pushed <= 0.0:
                    break
                total += pushed

    def _dfs(self, u, t, limit, level, it) -> float:
        # iterative blocking-flow DFS to keep deep graphs off the stack
        to, cap, adj = self._to, self._cap, self._adj
        path: list[int] = []
        node = u
        while True:
            if node == t:
                push = min(limit, min(cap[eid] for eid in path))
                for eid in path:
                    cap[eid] -= push
                    cap[eid ^ 1] += push
                return push
            advanced = False
            while it[node] < len(adj[node]):
                eid = adj[node][it[node]]
                v = to[eid]
                if cap[eid] > _EPS and level[v] == level[node] + 1:
                    path.append(eid)
                    node = v
                    advanced = True
                    break
                it[node] += 1
            if not advanced:
                level[node] = -1
                if not path:
                    return 0.0
                node_eid = path.pop()
                node = to[node_eid ^ 1]
                it[node] += 1

    def min_cut_source_side(self) -> list[bool]:
        """After solve(): nodes reachable from the source in the residual."""
        seen = [False] * (self.n + 2)
        seen[self.source] = True
        q = deque([self.source])
        while q:
            u = q.popleft()
            for eid in self._adj[u]:
                v = self._to[eid]
                if not seen[v] and self._cap[eid] > _EPS:
                    seen[v] = True
                    q.append(v)
        return seen[: self.n]
