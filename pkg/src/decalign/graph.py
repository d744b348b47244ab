"""Communication topology: which single-modality client talks to which."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass


class GraphStructureError(ValueError):
    """Self-loops, duplicate edges, or out-of-range node indices."""


class ConnectivityError(GraphStructureError):
    """Graph is not connected; the message lists the components."""


@dataclass(frozen=True)
class CommGraph:
    """Undirected, connected graph of clients; immutable for the whole run.

    `edges` is canonical: each pair stored as (low, high) and the list sorted,
    so every iteration over edges is deterministic.
    """

    node_count: int
    modalities: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]

    def _check_node(self, i: int) -> None:
        if not 0 <= i < self.node_count:
            raise GraphStructureError(
                f"node {i} out of range for graph with {self.node_count} nodes"
            )

    def neighbors(self, i: int) -> list[int]:
        self._check_node(i)
        out = set()
        for a, b in self.edges:
            if a == i:
                out.add(b)
            elif b == i:
                out.add(a)
        return sorted(out)

    def directed_edges(self) -> list[tuple[int, int]]:
        """Both directions of every edge, ordered by (low, high, direction)."""
        out: list[tuple[int, int]] = []
        for a, b in self.edges:
            out.append((a, b))
            out.append((b, a))
        return out

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in set(self.edges)


def _components(node_count: int, adjacency: dict[int, set[int]]) -> list[list[int]]:
    seen: set[int] = set()
    components = []
    for start in range(node_count):
        if start in seen:
            continue
        queue = deque([start])
        seen.add(start)
        component = []
        while queue:
            node = queue.popleft()
            component.append(node)
            for nxt in adjacency[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        components.append(sorted(component))
    return components


def build_graph(node_count, edges, modalities=None) -> CommGraph:
    """Validate and canonicalize a client graph.

    Rejects self-loops, duplicates, bad indices, and disconnected topologies.
    """
    if node_count < 1:
        raise GraphStructureError(f"need at least one node, got {node_count}")
    canonical: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    adjacency: dict[int, set[int]] = {i: set() for i in range(node_count)}
    for k, (i, j) in enumerate(edges):
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise GraphStructureError(
                f"edge {k} = ({i}, {j}) references a node outside [0, {node_count})"
            )
        if i == j:
            raise GraphStructureError(f"edge {k} = ({i}, {j}) is a self-loop")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphStructureError(f"edge {k} = ({i}, {j}) duplicates {key}")
        seen.add(key)
        canonical.append(key)
        adjacency[i].add(j)
        adjacency[j].add(i)

    components = _components(node_count, adjacency)
    if len(components) > 1:
        raise ConnectivityError(f"graph is disconnected; components: {components}")

    if modalities is None:
        modalities = tuple(range(node_count))
    else:
        modalities = tuple(int(m) for m in modalities)
        if len(modalities) != node_count:
            raise GraphStructureError(
                f"got {len(modalities)} modality tags for {node_count} nodes"
            )
    return CommGraph(node_count, modalities, tuple(sorted(canonical)))


def fully_connected(node_count: int, modalities=None) -> CommGraph:
    edges = [(i, j) for i in range(node_count) for j in range(i + 1, node_count)]
    return build_graph(node_count, edges, modalities)
