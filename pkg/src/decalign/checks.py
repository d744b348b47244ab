"""Built-in invariant suite behind the `check` subcommand.

Fast spot checks of the numerical core: backward against central finite
differences for every loss term, dense-Laplacian versus edge-wise
equivalence, coboundary factorization, and the contrastive closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, finite_difference_gradient
from .graph import build_graph, fully_connected
from .losses import LossWeights, contrastive_edge_loss, total_loss
from .seeding import seed_stream
from .sheaf import Batch, SheafStructure, assemble_laplacian, init_sheaf, quadratic_form_edgewise


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    detail: str


def _random_setup(rng: np.random.Generator, n_nodes: int = 3):
    graph = fully_connected(n_nodes)
    stalks = [int(rng.integers(2, 5)) for _ in range(n_nodes)]
    sheaf = init_sheaf(graph, stalks, seed=int(rng.integers(2**31)))
    batch_size = int(rng.integers(2, 5))
    embeddings = {
        i: Tensor(rng.standard_normal((batch_size, stalks[i])), requires_grad=True)
        for i in range(n_nodes)
    }
    batch = Batch(embeddings, np.ones((batch_size, n_nodes), dtype=bool))
    return graph, sheaf, batch


def check_loss_gradients(trials: int = 3, tolerance: float = 1e-4) -> CheckOutcome:
    rng = seed_stream(20, "check-grad")
    weights = LossWeights(1.0, 1.0, 0.1, 0.5)
    worst = 0.0
    for _ in range(trials):
        graph, sheaf, batch = _random_setup(rng)
        loss, _ = total_loss(sheaf, graph, batch, weights)
        loss.backward()
        probes = list(batch.embeddings.values()) + sheaf.parameters()
        for leaf in probes:
            analytic = leaf.grad_or_zero().copy()
            numeric = finite_difference_gradient(
                lambda _x: total_loss(sheaf, graph, batch, weights)[0].item(), leaf
            )
            scale = max(np.abs(numeric).max(), 1.0)
            worst = max(worst, np.abs(analytic - numeric).max() / scale)
    return CheckOutcome(
        "loss gradients vs finite differences", worst <= tolerance,
        f"max relative error {worst:.2e} (tolerance {tolerance:.0e})",
    )


def check_laplacian_equivalence(trials: int = 20, tolerance: float = 1e-10) -> CheckOutcome:
    rng = seed_stream(21, "check-lap")
    worst = 0.0
    for _ in range(trials):
        graph, sheaf, batch = _random_setup(rng, n_nodes=int(rng.integers(3, 6)))
        per_sample, _ = quadratic_form_edgewise(sheaf, graph, batch)
        lap = assemble_laplacian(sheaf, graph)
        stacked = np.hstack([batch.embeddings[i].data for i in range(graph.node_count)])
        dense = np.einsum("ni,ij,nj->n", stacked, lap, stacked)
        worst = max(worst, np.abs(per_sample - dense).max() / max(np.abs(dense).max(), 1e-30))
    return CheckOutcome(
        "edge-wise quadratic form equals dense Laplacian", worst <= tolerance,
        f"max relative error {worst:.2e} (tolerance {tolerance:.0e})",
    )


def check_coboundary_factorization(trials: int = 10, tolerance: float = 1e-10) -> CheckOutcome:
    rng = seed_stream(22, "check-cob")
    worst_factor = 0.0
    worst_sym = 0.0
    for _ in range(trials):
        graph, sheaf, _ = _random_setup(rng, n_nodes=int(rng.integers(3, 6)))
        lap = assemble_laplacian(sheaf, graph)
        offsets = np.concatenate([[0], np.cumsum(sheaf.stalk_dims)])
        rows = sum(sheaf.edge_dims[e] for e in graph.edges)
        delta = np.zeros((rows, offsets[-1]))
        row = 0
        for a, b in graph.edges:
            d_e = sheaf.edge_dims[(a, b)]
            delta[row : row + d_e, offsets[a] : offsets[a + 1]] = sheaf.restriction[(a, b)].data
            delta[row : row + d_e, offsets[b] : offsets[b + 1]] = -sheaf.restriction[(b, a)].data
            row += d_e
        scale = max(np.abs(lap).max(), 1e-30)
        worst_factor = max(worst_factor, np.abs(lap - delta.T @ delta).max() / scale)
        worst_sym = max(worst_sym, np.abs(lap - lap.T).max())
    passed = worst_factor <= tolerance and worst_sym <= 1e-12
    return CheckOutcome(
        "Laplacian factors as coboundary^T coboundary", passed,
        f"factorization error {worst_factor:.2e}, asymmetry {worst_sym:.2e}",
    )


def check_contrastive_closed_forms() -> CheckOutcome:
    single = contrastive_edge_loss(
        Tensor([[1.0, 2.0]]), Tensor([[0.5, -1.0]]), None, temperature=0.7
    ).item()
    ok_single = abs(single) <= 1e-12

    batch = 5
    same = np.tile([[1.0, 1.0, 0.0]], (batch, 1))
    uniform = contrastive_edge_loss(Tensor(same), Tensor(same), None, temperature=0.3).item()
    ok_uniform = abs(uniform - math.log(batch)) <= 1e-9

    basis = np.eye(2)
    ortho = contrastive_edge_loss(Tensor(basis), Tensor(basis), None, temperature=1.0).item()
    ok_ortho = abs(ortho - math.log(1.0 + math.exp(-1.0))) <= 1e-9

    passed = ok_single and ok_uniform and ok_ortho
    return CheckOutcome(
        "contrastive closed forms (single pair, uniform, orthonormal)", passed,
        f"B=1 -> {single:.2e}, uniform -> {uniform:.6f} (ln B {math.log(batch):.6f}), "
        f"orthonormal -> {ortho:.6f}",
    )


def check_logsumexp_bounds(trials: int = 50) -> CheckOutcome:
    from .autodiff import logsumexp_rows

    rng = seed_stream(23, "check-lse")
    ok = True
    for _ in range(trials):
        x = rng.standard_normal((4, 6)) * rng.uniform(0.1, 100)
        out = logsumexp_rows(Tensor(x)).data[:, 0]
        row_max = x.max(axis=1)
        ok = ok and bool((out >= row_max).all())
        ok = ok and bool((out <= row_max + math.log(x.shape[1])).all())
    return CheckOutcome(
        "logsumexp bounded by [rowmax, rowmax + ln(cols)]", ok,
        f"{trials} random matrices",
    )


def run_all_checks() -> list[CheckOutcome]:
    return [
        check_loss_gradients(),
        check_laplacian_equivalence(),
        check_coboundary_factorization(),
        check_contrastive_closed_forms(),
        check_logsumexp_bounds(),
    ]
