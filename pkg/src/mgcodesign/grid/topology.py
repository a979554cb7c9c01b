"""Physical topology: bipartite DG/line graph and seeded random generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PhysicalTopology:
    """Directed DG-line interconnection with its signed bi-adjacency matrix.

    Column l of ``bi_adjacency`` carries +1 at the line's tail DG and -1 at
    its head; the underlying undirected DG graph must be connected.
    """

    n_dgs: int
    lines: tuple[tuple[int, int], ...]
    bi_adjacency: np.ndarray
    positions: np.ndarray | None = None   # generator output, unit square
    distances: np.ndarray | None = None   # pairwise Euclidean distances

    def __post_init__(self):
        B = self.bi_adjacency
        if B.shape != (self.n_dgs, len(self.lines)):
            raise ValueError("bi-adjacency shape inconsistent with line list")
        for l, (tail, head) in enumerate(self.lines):
            col = B[:, l]
            if not (0 <= tail < self.n_dgs and 0 <= head < self.n_dgs):
                raise ValueError(f"line {l} endpoints out of range")
            ok = (col[tail] == 1 and col[head] == -1
                  and np.count_nonzero(col) == 2)
            if not ok:
                raise ValueError(f"bi-adjacency column {l} does not encode its line")
        if not _connected(self.n_dgs, self.lines):
            raise ValueError("physical DG graph is not connected")

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def neighbors(self, i: int) -> list[int]:
        """Line indices incident to DG i."""
        return [l for l, (a, b) in enumerate(self.lines) if i in (a, b)]

    def adjacency_pairs(self) -> set[tuple[int, int]]:
        """Unordered DG pairs joined by at least one physical line."""
        out = set()
        for a, b in self.lines:
            out.add((min(a, b), max(a, b)))
        return out


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def _connected(n: int, edges) -> bool:
    if n <= 1:
        return True
    uf = _UnionFind(n)
    for a, b in edges:
        uf.union(a, b)
    root = uf.find(0)
    return all(uf.find(i) == root for i in range(n))


def bi_adjacency_from_lines(n_dgs: int, lines) -> np.ndarray:
    B = np.zeros((n_dgs, len(lines)))
    for l, (tail, head) in enumerate(lines):
        B[tail, l] = 1.0
        B[head, l] = -1.0
    return B


def topology_from_edges(n_dgs: int, edges) -> PhysicalTopology:
    """Topology from an explicit edge list, orienting tail -> head as given."""
    lines = tuple((int(a), int(b)) for a, b in edges)
    return PhysicalTopology(n_dgs, lines, bi_adjacency_from_lines(n_dgs, lines))


def random_geometric_topology(n_dgs: int, connectivity: float, seed: int,
                              max_resamples: int = 200) -> PhysicalTopology:
    """Seeded random geometric graph over DGs placed in the unit square.

    DG pairs closer than ``connectivity`` are joined by a line oriented from
    the lower to the higher index; positions are resampled until the graph
    is connected.  Reproducible: the same seed gives a bit-identical result.
    """
    if n_dgs < 1:
        raise ValueError("need at least one DG")
    if not (0.0 < connectivity <= np.sqrt(2.0) + 1e-12):
        raise ValueError("connectivity radius must be in (0, sqrt(2)]")
    rng = np.random.default_rng(seed)
    for _ in range(max_resamples):
        pos = rng.uniform(0.0, 1.0, (n_dgs, 2))
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        edges = [(i, j) for i in range(n_dgs) for j in range(i + 1, n_dgs)
                 if dist[i, j] <= connectivity]
        if _connected(n_dgs, edges):
            lines = tuple(edges)
            return PhysicalTopology(n_dgs, lines,
                                    bi_adjacency_from_lines(n_dgs, lines),
                                    positions=pos, distances=dist)
    raise RuntimeError(
        f"could not draw a connected geometric graph in {max_resamples} tries "
        f"(n={n_dgs}, radius={connectivity})")
