"""Tests for the three objective terms and their composition.

Closed forms are frozen from independent hand evaluation; random instances
are checked against direct numpy oracles and finite differences. Masking a
sample must act exactly like deleting its rows at matched normalization.
"""

import math

import numpy as np
import pytest

from decalign.autodiff import Tensor, finite_difference_gradient
from decalign.graph import build_graph, fully_connected
from decalign.losses import (
    LossWeights,
    contrastive_edge_loss,
    laplacian_loss,
    node_loss,
    reconstruction_loss,
    total_loss,
)
from decalign.sheaf import Batch, assemble_laplacian, init_sheaf


def make_batch(rng, graph, sheaf, batch_size, presence=None):
    if presence is None:
        presence = np.ones((batch_size, graph.node_count), dtype=bool)
    emb = {
        i: Tensor(
            rng.standard_normal((batch_size, sheaf.stalk_dims[i])), requires_grad=True
        )
        for i in range(graph.node_count)
    }
    return Batch(emb, presence)


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert (w.consistency, w.contrast, w.recon, w.temperature) == (1.0, 1.0, 0.1, 0.1)

    def test_zero_temperature_rejected(self):
        with pytest.raises(ValueError, match="temperature"):
            LossWeights(temperature=0.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(recon=-0.1)


class TestLaplacianLoss:
    def test_aligned_projections_give_zero(self):
        g = build_graph(2, [(0, 1)])
        s = init_sheaf(g, 2, edge_dims=2, seed=0)
        s.restriction[(0, 1)].data = np.eye(2)
        s.restriction[(1, 0)].data = np.eye(2)
        h = np.array([[0.3, -0.7], [1.0, 2.0]])
        batch = Batch({0: Tensor(h), 1: Tensor(h.copy())}, np.ones((2, 2), dtype=bool))
        assert laplacian_loss(s, g, batch).item() == pytest.approx(0.0, abs=1e-12)

    def test_unit_difference(self):
        g = build_graph(2, [(0, 1)])
        s = init_sheaf(g, 2, edge_dims=2, seed=0)
        s.restriction[(0, 1)].data = np.eye(2)
        s.restriction[(1, 0)].data = np.eye(2)
        batch = Batch(
            {0: Tensor([[1.0, 1.0]]), 1: Tensor([[0.0, 0.0]])},
            np.ones((1, 2), dtype=bool),
        )
        assert laplacian_loss(s, g, batch).item() == pytest.approx(2.0, abs=1e-12)

    def test_matches_dense_assembly(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            n = int(rng.integers(3, 6))
            g = fully_connected(n)
            s = init_sheaf(g, [int(rng.integers(2, 6)) for _ in range(n)],
                           seed=int(rng.integers(2**31)))
            batch = make_batch(rng, g, s, int(rng.integers(1, 5)))
            lap = assemble_laplacian(s, g)
            stacked = np.hstack([batch.embeddings[i].data for i in range(n)])
            expected = np.einsum("ni,ij,nj->", stacked, lap, stacked)
            assert laplacian_loss(s, g, batch).item() == pytest.approx(expected, rel=1e-10)


class TestContrastiveLoss:
    def test_single_pair_is_zero(self):
        loss = contrastive_edge_loss(
            Tensor([[0.4, -2.0]]), Tensor([[5.0, 1.0]]), None, temperature=0.37
        )
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_identical_projections_give_log_batch(self):
        batch = 6
        rows = np.tile([[2.0, -1.0, 0.5]], (batch, 1))
        loss = contrastive_edge_loss(Tensor(rows), Tensor(rows), None, temperature=0.1)
        assert loss.item() == pytest.approx(math.log(batch), abs=1e-9)

    def test_two_sample_orthonormal_closed_form(self):
        basis = np.eye(2)
        loss = contrastive_edge_loss(Tensor(basis), Tensor(basis), None, temperature=1.0)
        # hand evaluation: -log(e / (e + 1)) per anchor = ln(1 + e^-1)
        assert loss.item() == pytest.approx(0.31326168751822286, abs=1e-9)

    def test_non_negative(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            b, d = int(rng.integers(1, 8)), int(rng.integers(2, 5))
            loss = contrastive_edge_loss(
                Tensor(rng.standard_normal((b, d))),
                Tensor(rng.standard_normal((b, d))),
                None,
                temperature=float(rng.uniform(0.05, 2.0)),
            )
            assert loss.item() >= 0.0

    def test_masked_anchors_match_row_deletion(self):
        # masked samples leave both the anchor set and the negative pool,
        # exactly like deleting their rows, at matched normalization
        rng = np.random.default_rng(22)
        proj_a = rng.standard_normal((5, 3))
        proj_b = rng.standard_normal((5, 3))
        present = np.array([True, False, True, True, False])
        masked = contrastive_edge_loss(
            Tensor(proj_a), Tensor(proj_b), present, temperature=0.2
        )
        deleted = contrastive_edge_loss(
            Tensor(proj_a[present]), Tensor(proj_b[present]), None,
            temperature=0.2, norm_count=5,
        )
        assert masked.item() == pytest.approx(deleted.item(), abs=1e-12)

    def test_masked_uniform_value(self):
        # all projections identical, 3 of 5 present: (3/5) * ln 3 under
        # deletion-consistent negatives
        rows = np.tile([[1.0, 2.0]], (5, 1))
        present = np.array([True, True, True, False, False])
        loss = contrastive_edge_loss(Tensor(rows), Tensor(rows), present, temperature=0.7)
        assert loss.item() == pytest.approx(3 / 5 * math.log(3), abs=1e-9)

    def test_all_masked_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            contrastive_edge_loss(
                Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))),
                np.array([False, False]), temperature=1.0,
            )


class TestReconstructionLoss:
    def _identity_sheaf(self):
        g = build_graph(2, [(0, 1)])
        s = init_sheaf(g, 2, edge_dims=2, seed=0)
        for key in s.restriction:
            s.restriction[key].data = np.eye(2)
            s.dual[key].data = np.eye(2)
        return g, s

    def test_perfect_reconstruction_is_zero(self):
        _, s = self._identity_sheaf()
        h = Tensor(np.random.default_rng(0).standard_normal((3, 2)))
        loss = reconstruction_loss(s, 0, 1, h, Tensor(h.data.copy()), None)
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_all_masked_is_zero(self):
        _, s = self._identity_sheaf()
        h = Tensor(np.ones((3, 2)))
        loss = reconstruction_loss(s, 0, 1, h, h, np.zeros(3, dtype=bool))
        assert loss.item() == 0.0

    def test_random_matches_direct_oracle(self):
        rng = np.random.default_rng(23)
        g = build_graph(2, [(0, 1)])
        s = init_sheaf(g, [3, 4], edge_dims=2, seed=7)
        h0 = rng.standard_normal((5, 3))
        h1 = rng.standard_normal((5, 4))
        # direct evaluation of mean ||dual_01 @ restriction_10 h1 - h0||^2
        rebuilt = h1 @ s.restriction[(1, 0)].data.T @ s.dual[(0, 1)].data.T
        expected = ((rebuilt - h0) ** 2).sum() / 5
        loss = reconstruction_loss(s, 0, 1, Tensor(h0), Tensor(h1), None)
        assert loss.item() == pytest.approx(expected, rel=1e-12)


class TestTotalLoss:
    def test_zero_weights_give_zero(self):
        rng = np.random.default_rng(24)
        g = fully_connected(3)
        s = init_sheaf(g, 3, seed=1)
        batch = make_batch(rng, g, s, 4)
        total, breakdown = total_loss(s, g, batch, LossWeights(0.0, 0.0, 0.0, 0.1))
        assert total.item() == 0.0
        assert breakdown["total"] == 0.0

    def test_consistency_only_equals_laplacian(self):
        rng = np.random.default_rng(25)
        g = fully_connected(3)
        s = init_sheaf(g, 3, seed=2)
        batch = make_batch(rng, g, s, 4)
        total, _ = total_loss(s, g, batch, LossWeights(1.0, 0.0, 0.0, 0.1))
        assert total.item() == pytest.approx(laplacian_loss(s, g, batch).item(), rel=1e-12)

    def test_term_isolation(self):
        rng = np.random.default_rng(26)
        g = build_graph(2, [(0, 1)])
        s = init_sheaf(g, [3, 4], seed=3)
        batch = make_batch(rng, g, s, 5)
        weights = LossWeights(1.0, 1.0, 0.1, 0.1)
        total, breakdown = total_loss(s, g, batch, weights)

        lap = laplacian_loss(s, g, batch).item()
        idx = batch.pair_present(0, 1)
        p0 = batch.embeddings[0].data @ s.restriction[(0, 1)].data.T
        p1 = batch.embeddings[1].data @ s.restriction[(1, 0)].data.T
        contrast = contrastive_edge_loss(
            Tensor(p0), Tensor(p1), batch.presence[:, 0] & batch.presence[:, 1], 0.1
        ).item()
        recon = (
            reconstruction_loss(
                s, 0, 1, batch.embeddings[0], batch.embeddings[1], None
            ).item()
            + reconstruction_loss(
                s, 1, 0, batch.embeddings[1], batch.embeddings[0], None
            ).item()
        )
        assert idx.size == 5
        assert breakdown["lap"] == pytest.approx(lap, rel=1e-12)
        assert breakdown["contrast"] == pytest.approx(contrast, rel=1e-12)
        assert breakdown["recon"] == pytest.approx(recon, rel=1e-12)
        assert total.item() == pytest.approx(
            1.0 * lap + 1.0 * contrast + 0.1 * recon, rel=1e-12
        )

    def test_recon_weight_zero_leaves_dual_maps_unreached(self):
        rng = np.random.default_rng(27)
        g = fully_connected(3)
        s = init_sheaf(g, 3, seed=4)
        batch = make_batch(rng, g, s, 3)
        total, _ = total_loss(s, g, batch, LossWeights(1.0, 1.0, 0.0, 0.1))
        total.backward()
        for key in s.dual:
            np.testing.assert_array_equal(
                s.dual[key].grad_or_zero(), np.zeros_like(s.dual[key].data)
            )

    def test_symmetric_contrastive_averages_directions(self):
        rng = np.random.default_rng(28)
        g = build_graph(2, [(0, 1)])
        s = init_sheaf(g, 3, seed=5)
        batch = make_batch(rng, g, s, 4)
        w = LossWeights(0.0, 1.0, 0.0, 0.3)
        forward, _ = total_loss(s, g, batch, w, symmetric_contrastive=False)
        both, _ = total_loss(s, g, batch, w, symmetric_contrastive=True)
        p0 = batch.embeddings[0].data @ s.restriction[(0, 1)].data.T
        p1 = batch.embeddings[1].data @ s.restriction[(1, 0)].data.T
        reverse = contrastive_edge_loss(Tensor(p1), Tensor(p0), None, 0.3).item()
        assert both.item() == pytest.approx((forward.item() + reverse) / 2, rel=1e-12)


class TestMasking:
    def test_masking_equals_row_deletion_for_every_term(self):
        rng = np.random.default_rng(29)
        g = fully_connected(3)
        s = init_sheaf(g, 3, seed=6)
        full = make_batch(rng, g, s, 5)
        weights = LossWeights(1.0, 1.0, 0.1, 0.2)

        removed = 2
        presence = np.ones((5, 3), dtype=bool)
        presence[removed, :] = False
        masked = Batch(
            {i: Tensor(full.embeddings[i].data.copy()) for i in range(3)}, presence
        )
        keep = np.array([0, 1, 3, 4])
        deleted = Batch(
            {i: Tensor(full.embeddings[i].data[keep].copy()) for i in range(3)},
            np.ones((4, 3), dtype=bool),
        )
        _, masked_breakdown = total_loss(s, g, masked, weights)
        # matched normalization: the deleted batch reports per-5-sample terms
        deleted_total, deleted_breakdown = total_loss(s, g, deleted, weights)
        for key in ("lap",):
            assert masked_breakdown[key] == pytest.approx(
                deleted_breakdown[key], abs=1e-12
            )
        for key in ("contrast", "recon"):
            assert masked_breakdown[key] == pytest.approx(
                deleted_breakdown[key] * 4 / 5, abs=1e-12
            )

    def test_masked_rows_never_read(self):
        rng = np.random.default_rng(30)
        g = fully_connected(3)
        s = init_sheaf(g, 3, seed=7)
        presence = rng.random((6, 3)) > 0.3
        presence[0, :] = True  # keep at least one co-observed sample
        base = make_batch(rng, g, s, 6, presence=presence)
        weights = LossWeights(1.0, 1.0, 0.1, 0.2)
        _, clean = total_loss(s, g, base, weights)

        poisoned = {}
        for i in range(3):
            data = base.embeddings[i].data.copy()
            data[~presence[:, i]] = 1e9  # garbage in unread rows
            poisoned[i] = Tensor(data)
        _, dirty = total_loss(s, g, Batch(poisoned, presence), weights)
        for key in clean:
            assert clean[key] == pytest.approx(dirty[key], rel=1e-12)


class TestNodeLoss:
    def test_triangle_double_counts_edges(self):
        rng = np.random.default_rng(31)
        g = fully_connected(3)
        s = init_sheaf(g, 3, seed=8)
        batch = make_batch(rng, g, s, 4)
        weights = LossWeights(1.0, 1.0, 0.1, 0.1)
        total, _ = total_loss(s, g, batch, weights)
        node_sum = sum(node_loss(s, g, i, batch, weights).item() for i in range(3))
        assert node_sum == pytest.approx(2.0 * total.item(), rel=1e-10)

    def test_two_node_graph_each_node_sees_everything(self):
        rng = np.random.default_rng(32)
        g = build_graph(2, [(0, 1)])
        s = init_sheaf(g, 3, seed=9)
        batch = make_batch(rng, g, s, 3)
        weights = LossWeights(1.0, 1.0, 0.1, 0.1)
        total, _ = total_loss(s, g, batch, weights)
        assert node_loss(s, g, 0, batch, weights).item() == pytest.approx(
            total.item(), rel=1e-12
        )
        assert node_loss(s, g, 1, batch, weights).item() == pytest.approx(
            total.item(), rel=1e-12
        )

    def test_node_without_present_samples_is_zero(self):
        g = fully_connected(3)
        s = init_sheaf(g, 2, seed=10)
        presence = np.ones((3, 3), dtype=bool)
        presence[:, 2] = False
        batch = Batch(
            {i: Tensor(np.random.default_rng(0).standard_normal((3, 2))) for i in range(3)},
            presence,
        )
        assert node_loss(s, g, 2, batch, LossWeights()).item() == 0.0

    def test_isolated_node_warns(self):
        g = build_graph(1, [])
        s = init_sheaf(g, 2, seed=0)
        batch = Batch({0: Tensor(np.ones((2, 2)))}, np.ones((2, 1), dtype=bool))
        with pytest.warns(UserWarning, match="no incident edges"):
            assert node_loss(s, g, 0, batch, LossWeights()).item() == 0.0


class TestLossGradients:
    def test_every_term_matches_finite_differences(self):
        rng = np.random.default_rng(33)
        g = build_graph(2, [(0, 1)])
        s = init_sheaf(g, [3, 2], edge_dims=2, seed=11)
        batch = make_batch(rng, g, s, 3)
        weights = LossWeights(1.0, 1.0, 0.1, 0.5)

        loss, _ = total_loss(s, g, batch, weights)
        loss.backward()
        leaves = list(batch.embeddings.values()) + s.parameters()
        for leaf in leaves:
            analytic = leaf.grad_or_zero().copy()
            numeric = finite_difference_gradient(
                lambda _t: total_loss(s, g, batch, weights)[0].item(), leaf
            )
            denom = max(np.abs(numeric).max(), 1.0)
            assert np.abs(analytic - numeric).max() / denom <= 1e-4
