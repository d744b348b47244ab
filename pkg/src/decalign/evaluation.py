"""Evaluation of trained models: cross-modal retrieval, probes, and the
missing-modality substitution experiment with its byte accounting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, logsumexp_rows
from .encoders import Encoder, encode_batch
from .graph import CommGraph
from .seeding import seed_stream
from .sheaf import SheafStructure, lift, project
from .training import WIRE_BYTES_PER_VALUE


def encode_views(encoders: list[Encoder], observations: list[np.ndarray]) -> list[np.ndarray]:
    """Frozen forward pass per node; no gradient tracking."""
    return [
        encode_batch(enc, Tensor(obs)).data for enc, obs in zip(encoders, observations)
    ]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return x / norms


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _unit_rows(a) @ _unit_rows(b).T


def recall_at_k(query_proj: np.ndarray, gallery_proj: np.ndarray, k: int) -> float:
    """Fraction of queries whose same-index counterpart ranks in the top k
    by cosine similarity; ties broken toward the lower gallery index."""
    n = query_proj.shape[0]
    if gallery_proj.shape[0] != n:
        raise ValueError(
            f"query and gallery sizes differ: {n} vs {gallery_proj.shape[0]}"
        )
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    sims = cosine_matrix(query_proj, gallery_proj)
    # stable sort on negated scores: equal scores keep index order
    ranking = np.argsort(-sims, axis=1, kind="stable")
    hits = (ranking[:, :k] == np.arange(n)[:, None]).any(axis=1)
    return float(hits.mean())


@dataclass
class RetrievalReport:
    """Recall@K per directed modality pair plus the mean across pairs."""

    per_pair: dict[tuple[int, int], dict[int, float]]
    mean: dict[int, float]

    def to_json_dict(self) -> dict:
        pairs = {
            f"{i}->{j}": {f"r{k}": v for k, v in sorted(scores.items())}
            for (i, j), scores in sorted(self.per_pair.items())
        }
        return {"pairs": pairs, "mean": {f"r{k}": v for k, v in sorted(self.mean.items())}}


def retrieval_report(
    s: SheafStructure,
    graph: CommGraph,
    embeddings: list[np.ndarray],
    k_values=(1, 5, 10),
) -> RetrievalReport:
    """Rank in the shared comparison space of each directed pair's edge."""
    per_pair: dict[tuple[int, int], dict[int, float]] = {}
    for i, j in graph.directed_edges():
        query = project(s, i, j, Tensor(embeddings[i])).data
        gallery = project(s, j, i, Tensor(embeddings[j])).data
        per_pair[(i, j)] = {k: recall_at_k(query, gallery, k) for k in k_values}
    mean = {
        k: float(np.mean([scores[k] for scores in per_pair.values()]))
        for k in k_values
    }
    return RetrievalReport(per_pair, mean)


@dataclass
class LinearProbe:
    """Multinomial logistic head over frozen embeddings."""

    weight: np.ndarray  # d x C
    bias: np.ndarray    # 1 x C
    majority_class: int

    def logits(self, embeddings: np.ndarray) -> np.ndarray:
        return embeddings @ self.weight + self.bias

    def predict(self, embeddings: np.ndarray) -> np.ndarray:
        return self.logits(embeddings).argmax(axis=1)


def train_linear_probe(
    embeddings: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    iterations: int = 200,
    learning_rate: float = 0.1,
) -> LinearProbe:
    """Full-batch gradient descent on softmax cross-entropy, zero init.

    Hyperparameters are fixed for reproducibility; the probe is deterministic
    in its inputs.
    """
    n, d = embeddings.shape
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), labels] = 1.0
    x = Tensor(embeddings)
    target = Tensor(onehot)
    weight = Tensor(np.zeros((d, num_classes)), requires_grad=True)
    bias = Tensor(np.zeros((1, num_classes)), requires_grad=True)
    for _ in range(iterations):
        logits = x @ weight + bias
        picked = (logits * target).sum_rows()
        loss = (logsumexp_rows(logits) - picked).sum() * (1.0 / n)
        loss.backward()
        weight.data -= learning_rate * weight.grad
        bias.data -= learning_rate * bias.grad
        weight.zero_grad()
        bias.zero_grad()
    counts = np.bincount(labels, minlength=num_classes)
    return LinearProbe(weight.data, bias.data, int(counts.argmax()))


def few_shot_probe(
    train_embeddings: np.ndarray,
    train_labels: np.ndarray,
    test_embeddings: np.ndarray,
    test_labels: np.ndarray,
    shots_per_class: int,
    seed: int = 0,
    num_classes: int | None = None,
) -> float:
    """Probe trained on a seeded draw of `shots_per_class` labeled samples
    per class, evaluated on the held-out set."""
    if shots_per_class < 1:
        raise ValueError(f"shots_per_class must be >= 1, got {shots_per_class}")
    if num_classes is None:
        num_classes = int(train_labels.max()) + 1
    rng = seed_stream(seed, "few-shot")
    chosen = []
    for c in range(num_classes):
        rows = np.flatnonzero(train_labels == c)
        if rows.size < shots_per_class:
            raise ValueError(
                f"class {c} has {rows.size} samples, fewer than {shots_per_class} shots"
            )
        chosen.append(rng.choice(rows, size=shots_per_class, replace=False))
    idx = np.concatenate(chosen)
    probe = train_linear_probe(train_embeddings[idx], train_labels[idx], num_classes)
    return float((probe.predict(test_embeddings) == test_labels).mean())


def zero_shot_prototype(
    s: SheafStructure,
    reference: int,
    target: int,
    reference_embeddings: np.ndarray,
    reference_labels: np.ndarray,
    target_embeddings: np.ndarray,
    target_labels: np.ndarray,
    num_classes: int | None = None,
) -> float:
    """Label-free transfer through the comparison space of edge
    (reference, target): class prototypes are per-class means of the
    reference node's projections; each target sample takes the class of its
    nearest prototype by cosine, ties toward the lower class index."""
    if num_classes is None:
        num_classes = int(reference_labels.max()) + 1
    ref_proj = project(s, reference, target, Tensor(reference_embeddings)).data
    tgt_proj = project(s, target, reference, Tensor(target_embeddings)).data
    prototypes = np.stack(
        [ref_proj[reference_labels == c].mean(axis=0) for c in range(num_classes)]
    )
    sims = cosine_matrix(tgt_proj, prototypes)
    predictions = sims.argmax(axis=1)  # argmax takes the first (lowest) max
    return float((predictions == target_labels).mean())


def infer_missing(s: SheafStructure, i: int, j: int, emb_j) -> np.ndarray:
    """Reconstruct node i's embeddings from neighbor j's: project j's rows
    into the shared space, then lift into stalk i through the dual map."""
    h = emb_j if isinstance(emb_j, Tensor) else Tensor(emb_j)
    return lift(s, i, j, project(s, j, i, h)).data


@dataclass
class InferenceReport:
    """Accuracy and exact transmitted bytes under sensor dropout."""

    p_drop: float
    accuracy_with_substitution: float
    accuracy_without_substitution: float
    substitutions: int
    transmitted_bytes: int
    counterfactual_bytes: int

    def to_json_dict(self) -> dict:
        return {
            "p_drop": self.p_drop,
            "accuracy_with_substitution": self.accuracy_with_substitution,
            "accuracy_without_substitution": self.accuracy_without_substitution,
            "substitutions": self.substitutions,
            "transmitted_bytes": self.transmitted_bytes,
            "counterfactual_bytes": self.counterfactual_bytes,
        }


def reconstruction_quality(
    s: SheafStructure, graph: CommGraph, target: int, embeddings: list[np.ndarray]
) -> dict[int, float]:
    """Mean squared reconstruction error of the target node's embeddings from
    each neighbor; used by the best-reconstruction neighbor strategy."""
    truth = embeddings[target]
    out = {}
    for j in graph.neighbors(target):
        rebuilt = infer_missing(s, target, j, embeddings[j])
        out[j] = float(((rebuilt - truth) ** 2).mean())
    return out


def dropout_inference_experiment(
    s: SheafStructure,
    graph: CommGraph,
    task_node: int,
    embeddings: list[np.ndarray],
    labels: np.ndarray,
    probe: LinearProbe,
    p_drop: float,
    seed: int = 0,
    neighbor_strategy: str = "lowest_index",
) -> InferenceReport:
    """Classify at the task node while sensors drop out independently.

    When the task node's modality is absent for a sample, one present
    neighbor transmits its comparison-space projection (edge_dim float32
    values, credited exactly) and the task node substitutes the lifted
    reconstruction before probing. The counterfactual cost of shipping the
    neighbor's full embedding instead is reported alongside. Without
    substitution, dropped samples fall back to the probe's majority class.
    """
    if not 0.0 <= p_drop < 1.0:
        raise ValueError(f"p_drop must be in [0, 1), got {p_drop}")
    if neighbor_strategy not in ("lowest_index", "best_reconstruction"):
        raise ValueError(f"unknown neighbor strategy {neighbor_strategy!r}")
    n_samples = labels.shape[0]
    n_nodes = graph.node_count
    rng = seed_stream(seed, "inference-dropout")
    present = rng.random((n_samples, n_nodes)) >= p_drop
    dead = np.flatnonzero(~present.any(axis=1))
    while dead.size:
        present[dead] = rng.random((dead.size, n_nodes)) >= p_drop
        dead = dead[~present[dead].any(axis=1)]

    neighbor_order = graph.neighbors(task_node)
    if neighbor_strategy == "best_reconstruction":
        quality = reconstruction_quality(s, graph, task_node, embeddings)
        neighbor_order = sorted(neighbor_order, key=lambda j: (quality[j], j))

    features = embeddings[task_node].copy()
    dropped = np.flatnonzero(~present[:, task_node])
    substitutions = 0
    transmitted = 0
    counterfactual = 0
    for n in dropped:
        donor = next((j for j in neighbor_order if present[n, j]), None)
        if donor is None:
            # re-rolling guarantees some modality survives, but the task
            # node's neighbors might not include it on sparse graphs
            continue
        features[n] = infer_missing(
            s, task_node, donor, embeddings[donor][n : n + 1]
        )[0]
        substitutions += 1
        transmitted += s.edge_dim(task_node, donor) * WIRE_BYTES_PER_VALUE
        counterfactual += s.stalk_dims[donor] * WIRE_BYTES_PER_VALUE

    predictions = probe.predict(features)
    accuracy_with = float((predictions == labels).mean())

    fallback = probe.predict(embeddings[task_node])
    fallback[dropped] = probe.majority_class
    accuracy_without = float((fallback == labels).mean())

    return InferenceReport(
        p_drop=p_drop,
        accuracy_with_substitution=accuracy_with,
        accuracy_without_substitution=accuracy_without,
        substitutions=substitutions,
        transmitted_bytes=transmitted,
        counterfactual_bytes=counterfactual,
    )
