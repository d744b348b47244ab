"""Per-node embedding spaces, per-edge comparison spaces, and the linear maps
between them.

Each node i carries a stalk R^{d_i}; each edge {i, j} carries a comparison
space whose default width is half the smaller endpoint stalk. A restriction
map projects a node's embeddings into an incident edge's comparison space;
a dual map lifts comparison-space vectors back into the node's stalk (used
to reconstruct a neighbor's missing embedding).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .graph import CommGraph, GraphStructureError
from .seeding import seed_stream


class SheafConfigWarning(UserWarning):
    """Allowed but suspicious sheaf configuration (e.g. oversized edge space)."""


def default_edge_dim(d_i: int, d_j: int) -> int:
    """Half the smaller endpoint stalk, rounded up."""
    return (min(d_i, d_j) + 1) // 2


@dataclass
class SheafStructure:
    """Stalk dims, edge dims, and the per-directed-edge restriction/dual maps.

    restriction[(i, j)] maps stalk i into the comparison space of edge {i, j}
    (shape edge_dim x d_i); dual[(i, j)] maps that comparison space back into
    stalk i (shape d_i x edge_dim). Immutable between optimizer steps.
    """

    stalk_dims: tuple[int, ...]
    edge_dims: dict[tuple[int, int], int]
    restriction: dict[tuple[int, int], Tensor]
    dual: dict[tuple[int, int], Tensor]

    def edge_dim(self, i: int, j: int) -> int:
        return self.edge_dims[(min(i, j), max(i, j))]

    def _check_directed_edge(self, i: int, j: int) -> None:
        if (i, j) not in self.restriction:
            raise GraphStructureError(f"({i}, {j}) is not a directed edge of this sheaf")

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """All maps in canonical directed-edge order."""
        out = []
        for i, j in sorted(self.restriction):
            out.append((f"sheaf/restriction/{i}_{j}", self.restriction[(i, j)]))
        for i, j in sorted(self.dual):
            out.append((f"sheaf/dual/{i}_{j}", self.dual[(i, j)]))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


@dataclass
class Batch:
    """Per-node embedding matrices plus the per-sample presence mask.

    Rows of `embeddings[i]` where `presence[:, i]` is False are never read by
    any loss; they may hold arbitrary values.
    """

    embeddings: dict[int, Tensor]
    presence: np.ndarray  # sample_count x node_count, bool

    def __post_init__(self):
        self.presence = np.asarray(self.presence, dtype=bool)
        if self.presence.ndim != 2:
            raise ValueError(f"presence mask must be 2-D, got {self.presence.shape}")

    @property
    def sample_count(self) -> int:
        return self.presence.shape[0]

    def present_indices(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.presence[:, i])

    def pair_present(self, i: int, j: int) -> np.ndarray:
        """Indices of samples observed at both i and j."""
        return np.flatnonzero(self.presence[:, i] & self.presence[:, j])

    def is_degenerate(self) -> bool:
        """True when no sample is observed at two or more nodes."""
        return not bool((self.presence.sum(axis=1) >= 2).any())


def _scaled_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_sheaf(graph: CommGraph, stalk_dims, edge_dims=None, seed: int = 0) -> SheafStructure:
    """Seeded random restriction and dual maps over the graph's edges.

    `stalk_dims` is one int (uniform) or a per-node sequence; `edge_dims` is
    None (half rule), one int, or a per-edge mapping/sequence aligned with
    graph.edges. Oversized edge dims are allowed but warned about: the
    restriction maps cannot be injective onto them.
    """
    n = graph.node_count
    if isinstance(stalk_dims, (int, np.integer)):
        stalks = tuple(int(stalk_dims) for _ in range(n))
    else:
        stalks = tuple(int(d) for d in stalk_dims)
        if len(stalks) != n:
            raise ValueError(f"got {len(stalks)} stalk dims for {n} nodes")
    if any(d < 1 for d in stalks):
        raise ValueError(f"stalk dims must be >= 1, got {stalks}")

    dims: dict[tuple[int, int], int] = {}
    for k, (a, b) in enumerate(graph.edges):
        if edge_dims is None:
            d_e = default_edge_dim(stalks[a], stalks[b])
        elif isinstance(edge_dims, (int, np.integer)):
            d_e = int(edge_dims)
        elif isinstance(edge_dims, dict):
            d_e = int(edge_dims[(a, b)])
        else:
            d_e = int(edge_dims[k])
        if d_e < 1:
            raise ValueError(f"edge dim for {(a, b)} must be >= 1, got {d_e}")
        if d_e > min(stalks[a], stalks[b]):
            warnings.warn(
                f"edge {(a, b)} comparison space ({d_e}) is wider than the smaller "
                f"stalk ({min(stalks[a], stalks[b])}); projection cannot be injective",
                SheafConfigWarning,
            )
        dims[(a, b)] = d_e

    rng = seed_stream(seed, "sheaf-init")
    restriction: dict[tuple[int, int], Tensor] = {}
    dual: dict[tuple[int, int], Tensor] = {}
    for a, b in graph.edges:
        d_e = dims[(a, b)]
        for i, j in ((a, b), (b, a)):
            restriction[(i, j)] = Tensor(
                _scaled_uniform(rng, d_e, stalks[i]), requires_grad=True
            )
            dual[(i, j)] = Tensor(
                _scaled_uniform(rng, stalks[i], d_e), requires_grad=True
            )
    return SheafStructure(stalks, dims, restriction, dual)


def project(s: SheafStructure, i: int, j: int, h: Tensor) -> Tensor:
    """Rows of h (stalk i) mapped into the comparison space of edge {i, j}."""
    s._check_directed_edge(i, j)
    return h @ s.restriction[(i, j)].transpose()


def lift(s: SheafStructure, i: int, j: int, p: Tensor) -> Tensor:
    """Comparison-space rows mapped back into stalk i through the dual map."""
    s._check_directed_edge(i, j)
    return p @ s.dual[(i, j)].transpose()


def stalk_offsets(stalk_dims) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(stalk_dims)])


def assemble_laplacian(s: SheafStructure, graph: CommGraph) -> np.ndarray:
    """Dense block operator whose quadratic form sums the per-edge projected
    disagreements. Diagnostic/testing path only; training always uses the
    edge-wise form, which this matrix is proven equal to.
    """
    offsets = stalk_offsets(s.stalk_dims)
    total = int(offsets[-1])
    lap = np.zeros((total, total))
    for a, b in graph.edges:
        map_a = s.restriction[(a, b)].data
        map_b = s.restriction[(b, a)].data
        sl_a = slice(offsets[a], offsets[a + 1])
        sl_b = slice(offsets[b], offsets[b + 1])
        lap[sl_a, sl_a] += map_a.T @ map_a
        lap[sl_b, sl_b] += map_b.T @ map_b
        lap[sl_a, sl_b] -= map_a.T @ map_b
        lap[sl_b, sl_a] -= map_b.T @ map_a
    return lap


def quadratic_form_edgewise(
    s: SheafStructure, graph: CommGraph, batch: Batch
) -> tuple[np.ndarray, Tensor]:
    """Per-sample projected disagreement and its differentiable batch total.

    For each edge {i, j} and each sample observed at both endpoints, adds
    the squared distance between the two projections into the edge's
    comparison space. Equals h^T L h from `assemble_laplacian` on fully
    present batches.
    """
    per_sample = np.zeros(batch.sample_count)
    total: Tensor | None = None
    for a, b in graph.edges:
        idx = batch.pair_present(a, b)
        if idx.size == 0:
            continue
        proj_a = project(s, a, b, batch.embeddings[a].take_rows(idx))
        proj_b = project(s, b, a, batch.embeddings[b].take_rows(idx))
        diff = proj_a - proj_b
        row_sq = (diff * diff).sum_rows()
        per_sample[idx] += row_sq.data[:, 0]
        term = row_sq.sum()
        total = term if total is None else total + term
    if total is None:
        total = Tensor(0.0)
    return per_sample, total
