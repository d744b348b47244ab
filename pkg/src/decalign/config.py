"""One JSON config document drives generation, training, and evaluation.

Validation is strict: unknown keys are rejected with a dotted locator, and
omitted training fields fall back to the standard defaults (batch size 128,
50 epochs, learning rate 1e-3, temperature 0.1, weights 1.0/1.0/0.1).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

from .graph import CommGraph, build_graph, fully_connected
from .losses import LossWeights
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid run configuration; message carries a dotted field locator."""


_SCHEMA: dict[str, dict] = {
    "graph": {
        "nodes": int,
        "edges": (list, str),         # explicit pair list or "full"
        "modalities": (list, type(None)),
    },
    "sheaf": {
        "stalk_dims": (int, list),
        "edge_dims": (int, list, type(None)),  # None -> half rule
    },
    "encoder": {
        "hidden": (list, type(None)),  # None -> one hidden layer, 2x output
        "nonlinearity": str,
    },
    "train": {
        "epochs": int,
        "batch_size": int,
        "learning_rate": (int, float),
        "consistency": (int, float),
        "contrast": (int, float),
        "recon": (int, float),
        "temperature": (int, float),
        "seed": int,
        "shuffle": bool,
        "optimizer": str,
        "symmetric_contrastive": bool,
        "count_gradient_messages": bool,
    },
    "data": {
        "path": (str, type(None)),
        "num_classes": int,
        "samples_per_class": int,
        "shared_dim": int,
        "unique_dim": int,
        "noise_sigma": (int, float),
        "view_dim": (int, type(None)),
        "class_separation": (int, float),
        "identity_transforms": bool,
        "seed": int,
    },
    "eval": {
        "recall_k": list,
        "shots": list,
        "p_drop": list,
        "reference_node": int,
        "task_node": int,
        "train_per_class": int,
        "seed": int,
    },
}

_DEFAULTS: dict[str, dict] = {
    "graph": {"nodes": 3, "edges": "full", "modalities": None},
    "sheaf": {"stalk_dims": 32, "edge_dims": None},
    "encoder": {"hidden": None, "nonlinearity": "relu"},
    "train": {
        "epochs": 50,
        "batch_size": 128,
        "learning_rate": 1e-3,
        "consistency": 1.0,
        "contrast": 1.0,
        "recon": 0.1,
        "temperature": 0.1,
        "seed": 0,
        "shuffle": True,
        "optimizer": "adam",
        "symmetric_contrastive": False,
        "count_gradient_messages": False,
    },
    "data": {
        "path": None,
        "num_classes": 3,
        "samples_per_class": 200,
        "shared_dim": 8,
        "unique_dim": 4,
        "noise_sigma": 0.1,
        "view_dim": None,
        "class_separation": 2.0,
        "identity_transforms": False,
        "seed": 0,
    },
    "eval": {
        "recall_k": [1, 5, 10],
        "shots": [1, 2, 4, 8],
        "p_drop": [0.01, 0.1],
        "reference_node": 0,
        "task_node": 0,
        "train_per_class": 200,
        "seed": 0,
    },
}


@dataclass
class RunConfig:
    """Validated, fully resolved run configuration."""

    resolved: dict

    @property
    def graph_section(self) -> dict:
        return self.resolved["graph"]

    def build_graph(self) -> CommGraph:
        section = self.graph_section
        if section["edges"] == "full":
            return fully_connected(section["nodes"], section["modalities"])
        try:
            return build_graph(
                section["nodes"],
                [tuple(e) for e in section["edges"]],
                section["modalities"],
            )
        except ValueError as exc:
            raise ConfigError(f"graph.edges: {exc}") from exc

    def loss_weights(self) -> LossWeights:
        t = self.resolved["train"]
        return LossWeights(t["consistency"], t["contrast"], t["recon"], t["temperature"])

    def train_config(self, checkpoint_path=None) -> TrainConfig:
        t = self.resolved["train"]
        return TrainConfig(
            epochs=t["epochs"],
            batch_size=t["batch_size"],
            learning_rate=t["learning_rate"],
            weights=self.loss_weights(),
            seed=t["seed"],
            shuffle=t["shuffle"],
            checkpoint_path=checkpoint_path,
            optimizer=t["optimizer"],
            symmetric_contrastive=t["symmetric_contrastive"],
            count_gradient_messages=t["count_gradient_messages"],
        )

    def stalk_dims(self, n_nodes: int) -> list[int]:
        dims = self.resolved["sheaf"]["stalk_dims"]
        if isinstance(dims, int):
            return [dims] * n_nodes
        if len(dims) != n_nodes:
            raise ConfigError(
                f"sheaf.stalk_dims: got {len(dims)} entries for {n_nodes} nodes"
            )
        return list(dims)

    def digest(self) -> str:
        """Stable digest of the training-relevant sections; ties checkpoints
        to the exact graph, model, and data they were trained under.

        The eval section is deliberately excluded so evaluation settings can
        change without invalidating a checkpoint.
        """
        trained_under = {
            k: self.resolved[k] for k in ("graph", "sheaf", "encoder", "train", "data")
        }
        canonical = json.dumps(trained_under, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _validate_section(name: str, given: dict, schema: dict, defaults: dict) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{name}: expected an object, got {type(given).__name__}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in schema:
            raise ConfigError(f"{name}.{key}: unknown key")
        expected = schema[key]
        if not isinstance(expected, tuple):
            expected = (expected,)
        if isinstance(value, bool) and bool not in expected:
            raise ConfigError(f"{name}.{key}: unexpected boolean")
        if not isinstance(value, expected):
            names = "/".join(t.__name__ for t in expected)
            raise ConfigError(
                f"{name}.{key}: expected {names}, got {type(value).__name__}"
            )
        out[key] = value
    return out


def _check_semantics(resolved: dict) -> None:
    graph = resolved["graph"]
    if graph["nodes"] < 1:
        raise ConfigError("graph.nodes: must be >= 1")
    if isinstance(graph["edges"], str) and graph["edges"] != "full":
        raise ConfigError(f'graph.edges: string form must be "full", got {graph["edges"]!r}')
    if isinstance(graph["edges"], list):
        for k, edge in enumerate(graph["edges"]):
            if (not isinstance(edge, list) or len(edge) != 2
                    or not all(isinstance(x, int) for x in edge)):
                raise ConfigError(f"graph.edges[{k}]: expected a pair of node ids")
            if not all(0 <= x < graph["nodes"] for x in edge):
                raise ConfigError(
                    f"graph.edges[{k}]: node out of range [0, {graph['nodes']})"
                )
    train = resolved["train"]
    if train["epochs"] < 1:
        raise ConfigError("train.epochs: must be >= 1")
    if train["batch_size"] < 1:
        raise ConfigError("train.batch_size: must be >= 1")
    if not train["learning_rate"] > 0:
        raise ConfigError("train.learning_rate: must be > 0")
    if not train["temperature"] > 0:
        raise ConfigError("train.temperature: must be strictly positive")
    for key in ("consistency", "contrast", "recon"):
        if train[key] < 0:
            raise ConfigError(f"train.{key}: must be >= 0")
    if train["seed"] < 0:
        raise ConfigError("train.seed: must be >= 0")
    if train["optimizer"] not in ("adam", "sgd"):
        raise ConfigError(f'train.optimizer: expected "adam" or "sgd", got {train["optimizer"]!r}')
    if resolved["encoder"]["nonlinearity"] not in ("relu", "tanh", "identity"):
        raise ConfigError(
            f'encoder.nonlinearity: unknown tag {resolved["encoder"]["nonlinearity"]!r}'
        )
    for key in ("reference_node", "task_node"):
        if not 0 <= resolved["eval"][key] < graph["nodes"]:
            raise ConfigError(f"eval.{key}: node out of range [0, {graph['nodes']})")
    for k_value in resolved["eval"]["recall_k"]:
        if not isinstance(k_value, int) or k_value < 1:
            raise ConfigError("eval.recall_k: entries must be integers >= 1")
    for p in resolved["eval"]["p_drop"]:
        if not isinstance(p, (int, float)) or not 0 <= p < 1:
            raise ConfigError("eval.p_drop: entries must lie in [0, 1)")


def resolve_config(document: dict) -> RunConfig:
    if not isinstance(document, dict):
        raise ConfigError(f"top level: expected an object, got {type(document).__name__}")
    resolved = {}
    for section in document:
        if section not in _SCHEMA:
            raise ConfigError(f"{section}: unknown section")
    for section, schema in _SCHEMA.items():
        resolved[section] = _validate_section(
            section, document.get(section, {}), schema, _DEFAULTS[section]
        )
    _check_semantics(resolved)
    return RunConfig(resolved)


def parse_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            document = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return resolve_config(document)


def apply_overrides(document: dict, overrides: list[str]) -> dict:
    """Apply `--set section.key=value` pairs; values parse as JSON first,
    falling back to bare strings."""
    out = copy.deepcopy(document)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected path=value")
        path, raw = item.split("=", 1)
        parts = path.split(".")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {path!r}: {part} is not a section")
        node[parts[-1]] = value
    return out
