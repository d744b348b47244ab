"""Scikit-learn style front end.

`SheafAligner.fit` takes one observation matrix per view, trains the
per-view encoders and the edge comparison-space maps jointly, and
`transform` returns the aligned embeddings, so the whole method drops into
ordinary sklearn pipelines and model-selection tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .autodiff import Tensor
from .evaluation import infer_missing
from .graph import build_graph, fully_connected
from .losses import LossWeights
from .data import MultiViewDataset
from .sheaf import project
from .training import TrainConfig, build_model, train


class SheafAligner(BaseEstimator, TransformerMixin):
    """Aligns multi-view data through learned per-edge comparison spaces.

    Parameters
    ----------
    stalk_dim : embedding width per view.
    edge_dim : comparison-space width per edge; None means half the smaller
        endpoint embedding, rounded up.
    hidden : tuple of hidden-layer widths for every encoder; None means one
        hidden layer of twice the embedding width.
    edges : iterable of view-index pairs; None means fully connected.
    consistency_weight, contrast_weight, recon_weight, temperature :
        objective weights and softmax temperature.
    """

    def __init__(
        self,
        stalk_dim: int = 32,
        edge_dim: int | None = None,
        hidden=None,
        nonlinearity: str = "relu",
        epochs: int = 50,
        batch_size: int = 128,
        learning_rate: float = 1e-3,
        consistency_weight: float = 1.0,
        contrast_weight: float = 1.0,
        recon_weight: float = 0.1,
        temperature: float = 0.1,
        edges=None,
        symmetric_contrastive: bool = False,
        random_state: int = 0,
    ):
        self.stalk_dim = stalk_dim
        self.edge_dim = edge_dim
        self.hidden = hidden
        self.nonlinearity = nonlinearity
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.consistency_weight = consistency_weight
        self.contrast_weight = contrast_weight
        self.recon_weight = recon_weight
        self.temperature = temperature
        self.edges = edges
        self.symmetric_contrastive = symmetric_contrastive
        self.random_state = random_state

    def _validate_views(self, X) -> list[np.ndarray]:
        if isinstance(X, np.ndarray) and X.ndim == 3:
            views = [X[v] for v in range(X.shape[0])]
        else:
            views = list(X)
        if len(views) < 1:
            raise ValueError("need at least one view")
        views = [
            check_array(v, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
            for v in views
        ]
        counts = {v.shape[0] for v in views}
        if len(counts) > 1:
            raise ValueError(f"views disagree on sample count: {sorted(counts)}")
        return views

    def fit(self, X, y=None, presence=None):
        """Learn encoders and maps from per-view observations.

        X is a sequence of [n_samples x n_features_v] arrays (or one 3-D
        array views x samples x features); `presence` optionally marks which
        (sample, view) observations exist.
        """
        views = self._validate_views(X)
        n_views = len(views)
        n_samples = views[0].shape[0]
        if presence is None:
            presence = np.ones((n_samples, n_views), dtype=bool)
        else:
            presence = np.asarray(presence, dtype=bool)
            if presence.shape != (n_samples, n_views):
                raise ValueError(
                    f"presence shape {presence.shape} does not match "
                    f"({n_samples}, {n_views})"
                )
        if self.edges is None:
            graph = fully_connected(n_views)
        else:
            graph = build_graph(n_views, [tuple(e) for e in self.edges])

        seed = int(self.random_state)
        encoders, sheaf = build_model(
            [v.shape[1] for v in views],
            graph,
            self.stalk_dim,
            self.edge_dim,
            hidden=None if self.hidden is None else tuple(self.hidden),
            nonlinearity=self.nonlinearity,
            seed=seed,
        )

        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weights=LossWeights(
                self.consistency_weight,
                self.contrast_weight,
                self.recon_weight,
                self.temperature,
            ),
            seed=seed,
            symmetric_contrastive=self.symmetric_contrastive,
        )
        ds = MultiViewDataset(views, presence)
        result = train(ds, graph, encoders, sheaf, cfg)

        self.n_views_ = n_views
        self.input_dims_ = tuple(v.shape[1] for v in views)
        self.graph_ = result.graph
        self.encoders_ = result.encoders
        self.sheaf_ = result.sheaf
        self.metrics_ = result.metrics
        self.ledger_ = result.ledger
        return self

    def _encoded_views(self, X) -> list[np.ndarray]:
        views = self._validate_views(X)
        if len(views) != self.n_views_:
            raise ValueError(f"expected {self.n_views_} views, got {len(views)}")
        for v, view in enumerate(views):
            if view.shape[1] != self.input_dims_[v]:
                raise ValueError(
                    f"view {v} has {view.shape[1]} features, expected {self.input_dims_[v]}"
                )
        from .evaluation import encode_views

        return encode_views(self.encoders_, views)

    def transform(self, X) -> np.ndarray:
        """Embed every view and concatenate: [n_samples x sum(stalk dims)]."""
        check_is_fitted(self, "encoders_")
        return np.hstack(self._encoded_views(X))

    def encode(self, X, view: int) -> np.ndarray:
        """Embeddings of a single view."""
        check_is_fitted(self, "encoders_")
        return self._encoded_views(X)[view]

    def pair_projections(self, X, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Both endpoints' projections in the comparison space of edge {i, j};
        the natural coordinates for cross-view retrieval."""
        check_is_fitted(self, "encoders_")
        encoded = self._encoded_views(X)
        proj_i = project(self.sheaf_, i, j, Tensor(encoded[i])).data
        proj_j = project(self.sheaf_, j, i, Tensor(encoded[j])).data
        return proj_i, proj_j

    def infer_view(self, X_source, source: int, target: int) -> np.ndarray:
        """Reconstruct the target view's embeddings from the source view's
        observations alone, through the trained maps (missing-modality path)."""
        check_is_fitted(self, "encoders_")
        obs = check_array(X_source, dtype=np.float64, ensure_2d=True)
        if obs.shape[1] != self.input_dims_[source]:
            raise ValueError(
                f"view {source} has {obs.shape[1]} features, "
                f"expected {self.input_dims_[source]}"
            )
        from .evaluation import encode_views

        encoded = encode_views([self.encoders_[source]], [obs])[0]
        return infer_missing(self.sheaf_, target, source, encoded)
