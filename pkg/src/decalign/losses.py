"""The three training objectives and their composition.

Per edge {i, j} with both endpoints' projections in the shared comparison
space:

  consistency  - squared distance between the two projections, summed over
                 co-observed samples (the edge-wise quadratic form);
  contrast     - InfoNCE over cosine similarities, same-sample projections
                 as the positive pair, co-observed batch mates as negatives;
  recon        - squared error of reconstructing a node's embedding from its
                 neighbor's projection through the dual map, both directions.

All terms read only co-observed rows. Presence masking is equivalent to row
deletion at matched normalization: absent samples never enter an anchor set,
a negative pool, or a reconstruction target.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, logsumexp_rows, rowwise_cosine_similarity
from .graph import CommGraph
from .sheaf import Batch, SheafStructure, lift, project, quadratic_form_edgewise


@dataclass(frozen=True)
class LossWeights:
    """Weights balancing consistency, discriminative alignment, and
    reconstruction, plus the softmax temperature."""

    consistency: float = 1.0
    contrast: float = 1.0
    recon: float = 0.1
    temperature: float = 0.1

    def __post_init__(self):
        for name in ("consistency", "contrast", "recon"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} weight must be >= 0, got {getattr(self, name)}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be strictly positive, got {self.temperature}")


@dataclass
class ProjectedEdge:
    """One edge's co-observed embeddings and their comparison-space
    projections; the unit both losses and the transport work from."""

    node_lo: int
    node_hi: int
    indices: np.ndarray           # co-observed sample positions in the batch
    emb_lo: Tensor                # [P x d_lo]
    emb_hi: Tensor                # [P x d_hi]
    proj_lo: Tensor               # [P x d_e]
    proj_hi: Tensor               # [P x d_e]
    edge_dim: int

    @property
    def present_count(self) -> int:
        return int(self.indices.size)


def project_edge(s: SheafStructure, batch: Batch, a: int, b: int) -> ProjectedEdge | None:
    """Project both endpoints' co-observed rows; None when nothing co-observed."""
    lo, hi = min(a, b), max(a, b)
    idx = batch.pair_present(lo, hi)
    if idx.size == 0:
        return None
    emb_lo = batch.embeddings[lo].take_rows(idx)
    emb_hi = batch.embeddings[hi].take_rows(idx)
    return ProjectedEdge(
        node_lo=lo,
        node_hi=hi,
        indices=idx,
        emb_lo=emb_lo,
        emb_hi=emb_hi,
        proj_lo=project(s, lo, hi, emb_lo),
        proj_hi=project(s, hi, lo, emb_hi),
        edge_dim=s.edge_dim(lo, hi),
    )


def _sum_scalars(terms: list[Tensor]) -> Tensor:
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def laplacian_loss(s: SheafStructure, graph: CommGraph, batch: Batch) -> Tensor:
    """Batch total of the edge-wise quadratic form (unweighted)."""
    _, total = quadratic_form_edgewise(s, graph, batch)
    return total


def _infonce(anchors: Tensor, others: Tensor, temperature: float, norm_count: int) -> Tensor:
    """-1/norm_count * sum_n [ sim(n,n)/t - logsumexp_m sim(n,m)/t ]."""
    scores = rowwise_cosine_similarity(anchors, others) * (1.0 / temperature)
    per_anchor = logsumexp_rows(scores) - scores.diagonal()
    return per_anchor.sum() * (1.0 / norm_count)


def contrastive_edge_loss(
    proj_i: Tensor,
    proj_j: Tensor,
    present: np.ndarray | None,
    temperature: float,
    norm_count: int | None = None,
) -> Tensor:
    """InfoNCE over one edge's projections, anchored on the i side.

    Same-index rows are the positive pairs; every present j-side projection
    in the batch is a negative. Masked samples contribute no anchor and no
    negative (a projection that was never computed cannot be exchanged).
    The prefactor divides by `norm_count`, by default the full batch size,
    even when some anchors are masked.
    """
    if proj_i.shape != proj_j.shape:
        raise ValueError(f"projection shapes differ: {proj_i.shape} vs {proj_j.shape}")
    batch_rows = proj_i.rows
    if present is None:
        idx = np.arange(batch_rows)
    else:
        present = np.asarray(present, dtype=bool)
        if present.shape != (batch_rows,):
            raise ValueError(f"mask shape {present.shape} does not match batch {batch_rows}")
        idx = np.flatnonzero(present)
    if idx.size == 0:
        raise ValueError("contrastive loss needs at least one present sample")
    if idx.size != batch_rows:
        proj_i = proj_i.take_rows(idx)
        proj_j = proj_j.take_rows(idx)
    norm = int(norm_count) if norm_count is not None else batch_rows
    return _infonce(proj_i, proj_j, temperature, norm)


def reconstruction_loss(
    s: SheafStructure,
    i: int,
    j: int,
    emb_i: Tensor,
    emb_j: Tensor,
    present: np.ndarray | None,
    norm_count: int | None = None,
) -> Tensor:
    """Mean squared error of rebuilding node i's embeddings from neighbor j.

    Neighbor j's co-observed embeddings travel through j's restriction map
    into the shared space, then through i's dual map back into stalk i.
    """
    batch_rows = emb_i.rows
    if present is None:
        idx = np.arange(batch_rows)
    else:
        present = np.asarray(present, dtype=bool)
        idx = np.flatnonzero(present)
    norm = int(norm_count) if norm_count is not None else batch_rows
    if idx.size == 0:
        return Tensor(0.0)
    target = emb_i.take_rows(idx) if idx.size != batch_rows else emb_i
    source = emb_j.take_rows(idx) if idx.size != batch_rows else emb_j
    rebuilt = lift(s, i, j, project(s, j, i, source))
    diff = rebuilt - target
    return (diff * diff).sum_rows().sum() * (1.0 / norm)


def _edge_terms(
    s: SheafStructure,
    edge: ProjectedEdge,
    norm_count: int,
    weights: LossWeights,
    symmetric_contrastive: bool,
) -> tuple[Tensor, Tensor, Tensor]:
    """(consistency, contrast, recon) for one projected edge, unweighted."""
    diff = edge.proj_lo - edge.proj_hi
    consistency = (diff * diff).sum_rows().sum()

    contrast = _infonce(edge.proj_lo, edge.proj_hi, weights.temperature, norm_count)
    if symmetric_contrastive:
        reverse = _infonce(edge.proj_hi, edge.proj_lo, weights.temperature, norm_count)
        contrast = (contrast + reverse) * 0.5

    rebuilt_lo = lift(s, edge.node_lo, edge.node_hi, edge.proj_hi)
    rebuilt_hi = lift(s, edge.node_hi, edge.node_lo, edge.proj_lo)
    diff_lo = rebuilt_lo - edge.emb_lo
    diff_hi = rebuilt_hi - edge.emb_hi
    recon = (
        (diff_lo * diff_lo).sum_rows().sum() + (diff_hi * diff_hi).sum_rows().sum()
    ) * (1.0 / norm_count)
    return consistency, contrast, recon


def total_loss_from_projections(
    s: SheafStructure,
    projected: list[ProjectedEdge],
    batch: Batch,
    weights: LossWeights,
    symmetric_contrastive: bool = False,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted total over already-exchanged projections, plus the raw
    per-term breakdown for logging."""
    consistency_terms, contrast_terms, recon_terms = [], [], []
    for edge in projected:
        cons, cont, rec = _edge_terms(
            s, edge, batch.sample_count, weights, symmetric_contrastive
        )
        consistency_terms.append(cons)
        contrast_terms.append(cont)
        recon_terms.append(rec)
    consistency = _sum_scalars(consistency_terms)
    contrast = _sum_scalars(contrast_terms)
    recon = _sum_scalars(recon_terms)
    total = (
        consistency * weights.consistency
        + contrast * weights.contrast
        + recon * weights.recon
    )
    breakdown = {
        "total": total.item(),
        "lap": consistency.item(),
        "contrast": contrast.item(),
        "recon": recon.item(),
    }
    return total, breakdown


def total_loss(
    s: SheafStructure,
    graph: CommGraph,
    batch: Batch,
    weights: LossWeights,
    symmetric_contrastive: bool = False,
) -> tuple[Tensor, dict[str, float]]:
    """Project every edge's co-observed rows, then combine the three terms."""
    projected = []
    for a, b in graph.edges:
        edge = project_edge(s, batch, a, b)
        if edge is not None:
            projected.append(edge)
    return total_loss_from_projections(s, projected, batch, weights, symmetric_contrastive)


def node_loss(
    s: SheafStructure,
    graph: CommGraph,
    i: int,
    batch: Batch,
    weights: LossWeights,
    symmetric_contrastive: bool = False,
) -> Tensor:
    """Restriction of the total loss to node i's incident edges.

    Every term of the total objective that touches any parameter owned by
    node i lives on an incident edge, so the gradients of this restriction
    match the centralized gradients parameter-for-parameter.
    """
    graph._check_node(i)
    incident = [(a, b) for a, b in graph.edges if i in (a, b)]
    if not incident:
        warnings.warn(f"node {i} has no incident edges; its loss is 0", stacklevel=2)
        return Tensor(0.0)
    terms: list[Tensor] = []
    for a, b in incident:
        edge = project_edge(s, batch, a, b)
        if edge is None:
            continue
        cons, cont, rec = _edge_terms(
            s, edge, batch.sample_count, weights, symmetric_contrastive
        )
        terms.append(
            cons * weights.consistency
            + cont * weights.contrast
            + rec * weights.recon
        )
    return _sum_scalars(terms)
