"""The decentralized training loop and its supporting machinery.

Every epoch runs synchronous rounds: each node encodes its minibatch
locally, projects onto each incident comparison space, exchanges the
projections with the edge's other endpoint (credited byte-exactly in the
transport ledger), and applies an optimizer step to its own parameters:
its encoder and the restriction/dual maps of its outgoing directed edges.

Neighbor data enters every loss term only through the exchanged
projections, so no gradient messages cross the wire; the ledger counts
projection payloads (float32) unless gradient-message accounting is
switched on for sensitivity studies.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .data import MultiViewDataset
from .encoders import Encoder, default_widths, encode_batch, init_encoder
from .graph import CommGraph, build_graph
from .losses import LossWeights, ProjectedEdge, project_edge, total_loss_from_projections
from .seeding import seed_stream
from .sheaf import Batch, SheafStructure, init_sheaf

log = logging.getLogger(__name__)

WIRE_BYTES_PER_VALUE = 4  # float32 payloads on the simulated links
THREADS_ENV_VAR = "SHEAF_THREADS"


class CheckpointError(ValueError):
    """Corrupt, mismatched, or unreadable checkpoint file."""


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    shuffle: bool = True
    checkpoint_path: str | None = None
    optimizer: str = "adam"  # "adam" | "sgd" (sgd exists for parity checks)
    symmetric_contrastive: bool = False
    count_gradient_messages: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


class TransportLedger:
    """Exact per-message byte accounting for the simulated links."""

    def __init__(self):
        self.messages: list[tuple[int, int, int, int]] = []  # round, src, dst, bytes
        self._node_totals: dict[int, int] = {}
        self._total = 0

    def record(self, round_id: int, src: int, dst: int, nbytes: int) -> None:
        self.messages.append((round_id, src, dst, nbytes))
        self._node_totals[src] = self._node_totals.get(src, 0) + nbytes
        self._total += nbytes

    @property
    def total_bytes(self) -> int:
        return self._total

    @property
    def message_count(self) -> int:
        return len(self.messages)

    def node_total(self, i: int) -> int:
        """Bytes sent by node i."""
        return self._node_totals.get(i, 0)

    def edge_total(self, src: int, dst: int) -> int:
        return sum(b for _, s, d, b in self.messages if (s, d) == (src, dst))

    def round_bytes(self, round_id: int) -> int:
        return sum(b for r, _, _, b in self.messages if r == round_id)


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    Parameters whose adjoint is None (unreachable from the loss) are left
    untouched. In-place updates bump each tensor's version stamp.
    """

    def __init__(self, params: list[Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.step_count += 1
        correct1 = 1.0 - self.beta1 ** self.step_count
        correct2 = 1.0 - self.beta2 ** self.step_count
        for k, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / correct1
            v_hat = self.v[k] / correct2
            p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
            p.version += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Sgd:
    """Plain gradient descent; exists so one decentralized round can be
    compared against one centralized step without optimizer state."""

    def __init__(self, params: list[Tensor], learning_rate: float):
        self.params = params
        self.learning_rate = learning_rate
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        for p in self.params:
            if p.grad is None:
                continue
            p.data -= self.learning_rate * p.grad
            p.version += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def build_model(
    input_dims,
    graph: CommGraph,
    stalk_dims,
    edge_dims=None,
    hidden=None,
    nonlinearity: str = "relu",
    seed: int = 0,
) -> tuple[list[Encoder], SheafStructure]:
    """Seeded encoders (one per node) plus the sheaf over the graph.

    `hidden` is a tuple of hidden widths shared by every encoder; None uses
    the default one-hidden-layer rule.
    """
    if isinstance(stalk_dims, (int, np.integer)):
        stalk_dims = [int(stalk_dims)] * graph.node_count
    encoders = []
    for i in range(graph.node_count):
        if hidden is None:
            widths = default_widths(input_dims[i], stalk_dims[i])
        else:
            widths = (input_dims[i], *hidden, stalk_dims[i])
        node_seed = int(seed_stream(seed, "encoder", i).integers(2**31))
        encoders.append(init_encoder(widths, nonlinearity, seed=node_seed))
    sheaf = init_sheaf(graph, stalk_dims, edge_dims, seed=seed)
    return encoders, sheaf


def node_owned_parameters(
    graph: CommGraph, encoders: list[Encoder], sheaf: SheafStructure, i: int
) -> list[Tensor]:
    """Node i owns its encoder and the maps of its outgoing directed edges."""
    params = list(encoders[i].parameters())
    for j in graph.neighbors(i):
        params.append(sheaf.restriction[(i, j)])
        params.append(sheaf.dual[(i, j)])
    return params


def build_optimizers(graph, encoders, sheaf, cfg: TrainConfig):
    make = Adam if cfg.optimizer == "adam" else Sgd
    return [
        make(node_owned_parameters(graph, encoders, sheaf, i), cfg.learning_rate)
        for i in range(graph.node_count)
    ]


def _worker_count(node_count: int) -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        requested = int(raw)
    except ValueError:
        log.warning("ignoring non-integer %s=%r", THREADS_ENV_VAR, raw)
        requested = 1
    return max(1, min(requested, node_count))


def make_batch(
    ds: MultiViewDataset, encoders: list[Encoder], indices: np.ndarray, workers: int = 1
) -> Batch:
    """Encode one minibatch at every node; nodes may run in parallel since
    their parameters and data are disjoint. Results are keyed by node, so
    thread scheduling cannot change anything downstream."""

    def encode_node(i: int) -> Tensor:
        return encode_batch(encoders[i], Tensor(ds.observations[i][indices]))

    node_ids = range(ds.num_views)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            encoded = list(pool.map(encode_node, node_ids))
    else:
        encoded = [encode_node(i) for i in node_ids]
    return Batch(dict(enumerate(encoded)), ds.presence[indices])


def exchange_projections(
    graph: CommGraph,
    sheaf: SheafStructure,
    batch: Batch,
    round_id: int,
    ledger: TransportLedger,
) -> list[ProjectedEdge]:
    """Project per edge and deliver both directions over ideal links.

    Each endpoint transmits one float32 row per co-observed sample, so a
    directed message costs present_count * edge_dim * 4 bytes. Edges with no
    co-observed samples send nothing.
    """
    projected = []
    for a, b in graph.edges:
        edge = project_edge(sheaf, batch, a, b)
        if edge is None:
            continue
        nbytes = edge.present_count * edge.edge_dim * WIRE_BYTES_PER_VALUE
        ledger.record(round_id, a, b, nbytes)
        ledger.record(round_id, b, a, nbytes)
        projected.append(edge)
    return projected


@dataclass
class TrainResult:
    encoders: list[Encoder]
    sheaf: SheafStructure
    graph: CommGraph
    optimizers: list
    metrics: list[dict]
    ledger: TransportLedger
    epochs_done: int


def train(
    ds: MultiViewDataset,
    graph: CommGraph,
    encoders: list[Encoder],
    sheaf: SheafStructure,
    cfg: TrainConfig,
    optimizers=None,
    epochs_done: int = 0,
    ledger: TransportLedger | None = None,
    config_digest: str = "",
) -> TrainResult:
    """Run epochs [epochs_done, cfg.epochs); resuming from a checkpoint with
    the same config continues the identical trajectory.

    Per-epoch shuffling draws from a stream keyed by (seed, epoch), so the
    schedule does not depend on how training was segmented.
    """
    if ds.num_views != graph.node_count:
        raise ValueError(
            f"dataset has {ds.num_views} views but graph has {graph.node_count} nodes"
        )
    for i, enc in enumerate(encoders):
        if enc.input_dim != ds.input_dims[i]:
            raise ValueError(
                f"encoder {i} expects {enc.input_dim} features, "
                f"dataset provides {ds.input_dims[i]}"
            )
        if enc.output_dim != sheaf.stalk_dims[i]:
            raise ValueError(
                f"encoder {i} emits {enc.output_dim} dims but stalk {i} "
                f"has {sheaf.stalk_dims[i]}"
            )
    if optimizers is None:
        optimizers = build_optimizers(graph, encoders, sheaf, cfg)
    if ledger is None:
        ledger = TransportLedger()

    workers = _worker_count(graph.node_count)
    samples = ds.sample_count
    steps_per_epoch = math.ceil(samples / cfg.batch_size)
    metrics: list[dict] = []
    round_id = epochs_done * steps_per_epoch

    for epoch in range(epochs_done, cfg.epochs):
        if cfg.shuffle:
            order = seed_stream(cfg.seed, "shuffle", epoch).permutation(samples)
        else:
            order = np.arange(samples)
        sums = {"total": 0.0, "lap": 0.0, "contrast": 0.0, "recon": 0.0}
        batches_used = 0
        for step in range(steps_per_epoch):
            idx = order[step * cfg.batch_size : (step + 1) * cfg.batch_size]
            batch = make_batch(ds, encoders, idx, workers)
            projected = exchange_projections(graph, sheaf, batch, round_id, ledger)
            round_id += 1
            if not projected:
                log.warning(
                    "epoch %d step %d: no co-observed pair on any edge; batch skipped",
                    epoch, step,
                )
                continue
            total, breakdown = total_loss_from_projections(
                sheaf, projected, batch, cfg.weights, cfg.symmetric_contrastive
            )
            total.backward()
            if cfg.count_gradient_messages:
                for edge in projected:
                    nbytes = edge.present_count * edge.edge_dim * WIRE_BYTES_PER_VALUE
                    ledger.record(round_id - 1, edge.node_lo, edge.node_hi, nbytes)
                    ledger.record(round_id - 1, edge.node_hi, edge.node_lo, nbytes)
            for opt in optimizers:
                opt.step()
            for opt in optimizers:
                opt.zero_grad()
            for key in sums:
                sums[key] += breakdown[key]
            batches_used += 1
        denom = max(batches_used, 1)
        metrics.append(
            {
                "epoch": epoch,
                "total": sums["total"] / denom,
                "lap": sums["lap"] / denom,
                "contrast": sums["contrast"] / denom,
                "recon": sums["recon"] / denom,
                "bytes_cum": ledger.total_bytes,
            }
        )

    result = TrainResult(encoders, sheaf, graph, optimizers, metrics, ledger, cfg.epochs)
    if cfg.checkpoint_path:
        save_checkpoint(cfg.checkpoint_path, result, config_digest)
    return result


def write_metrics(metrics: list[dict], path) -> None:
    """One JSON object per epoch, one per line."""
    with open(path, "w") as fh:
        for entry in metrics:
            fh.write(json.dumps(entry) + "\n")


# -- checkpoints ---------------------------------------------------------------
#
# magic "SHCK1\0" | u32 header length + header JSON (sorted keys) |
# u32 array count | per array <u16 name length, name, u32 rows, u32 cols,
# float64 row-major data> | sha256 of everything before the trailer.
# No timestamps anywhere, so identical state gives identical bytes.

CHECKPOINT_MAGIC = b"SHCK1\x00"
CHECKPOINT_VERSION = 1


def _named_state(result: TrainResult) -> list[tuple[str, np.ndarray]]:
    arrays: list[tuple[str, np.ndarray]] = []
    for i, enc in enumerate(result.encoders):
        for name, tensor in enc.named_parameters(prefix=f"encoder/{i}"):
            arrays.append((name, tensor.data))
    for name, tensor in result.sheaf.named_parameters():
        arrays.append((name, tensor.data))
    for i, opt in enumerate(result.optimizers):
        if isinstance(opt, Adam):
            for k in range(len(opt.params)):
                arrays.append((f"adam/{i}/{k}/m", opt.m[k]))
                arrays.append((f"adam/{i}/{k}/v", opt.v[k]))
    return arrays


def save_checkpoint(path, result: TrainResult, config_digest: str = "") -> None:
    graph = result.graph
    header = {
        "version": CHECKPOINT_VERSION,
        "epochs_done": result.epochs_done,
        "config_digest": config_digest,
        "nodes": graph.node_count,
        "modalities": list(graph.modalities),
        "edges": [list(e) for e in graph.edges],
        "stalk_dims": list(result.sheaf.stalk_dims),
        "edge_dims": {f"{a}-{b}": d for (a, b), d in sorted(result.sheaf.edge_dims.items())},
        "encoder_widths": [list(enc.widths) for enc in result.encoders],
        "nonlinearity": result.encoders[0].nonlinearity if result.encoders else "relu",
        "optimizer": "adam" if result.optimizers and isinstance(result.optimizers[0], Adam) else "sgd",
        "optimizer_steps": [opt.step_count for opt in result.optimizers],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays = _named_state(result)
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(header_bytes)), header_bytes]
    chunks.append(struct.pack("<I", len(arrays)))
    for name, data in arrays:
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<II", data.shape[0], data.shape[1]))
        chunks.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


@dataclass
class CheckpointBundle:
    graph: CommGraph
    encoders: list[Encoder]
    sheaf: SheafStructure
    optimizers: list
    epochs_done: int
    config_digest: str


def load_checkpoint(path, expect_config_digest: str | None = None,
                    learning_rate: float = 1e-3) -> CheckpointBundle:
    """Rebuild the full training state; verifies the checksum and, when
    given, the resolved-config digest."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(CHECKPOINT_MAGIC) + 36:
        raise CheckpointError("checkpoint file too short")
    body, trailer = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    if not body.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"bad checkpoint magic {body[:6]!r}")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    header = json.loads(body[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    if header["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header['version']}")
    if expect_config_digest is not None and header["config_digest"] != expect_config_digest:
        raise CheckpointError(
            "config digest mismatch: checkpoint was written under a different "
            f"resolved configuration ({header['config_digest'][:12]}... vs "
            f"{expect_config_digest[:12]}...)"
        )
    (n_arrays,) = struct.unpack_from("<I", body, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<H", body, offset)
        offset += 2
        name = body[offset : offset + name_len].decode("utf-8")
        offset += name_len
        rows, cols = struct.unpack_from("<II", body, offset)
        offset += 8
        nbytes = rows * cols * 8
        data = np.frombuffer(body, dtype="<f8", count=rows * cols, offset=offset)
        arrays[name] = data.reshape(rows, cols).astype(np.float64)
        offset += nbytes

    graph = build_graph(header["nodes"], [tuple(e) for e in header["edges"]],
                        header["modalities"])
    encoders = []
    for i, widths in enumerate(header["encoder_widths"]):
        enc = init_encoder(widths, header["nonlinearity"], seed=0)
        for name, tensor in enc.named_parameters(prefix=f"encoder/{i}"):
            tensor.data = arrays[name]
        encoders.append(enc)
    edge_dims = {
        tuple(int(x) for x in key.split("-")): d
        for key, d in header["edge_dims"].items()
    }
    sheaf = init_sheaf(graph, header["stalk_dims"], edge_dims, seed=0)
    for name, tensor in sheaf.named_parameters():
        tensor.data = arrays[name]

    cfg = TrainConfig(
        epochs=max(header["epochs_done"], 1),
        learning_rate=learning_rate,
        optimizer=header["optimizer"],
    )
    optimizers = build_optimizers(graph, encoders, sheaf, cfg)
    for i, opt in enumerate(optimizers):
        opt.step_count = header["optimizer_steps"][i]
        if isinstance(opt, Adam):
            for k in range(len(opt.params)):
                opt.m[k] = arrays[f"adam/{i}/{k}/m"].copy()
                opt.v[k] = arrays[f"adam/{i}/{k}/v"].copy()
    return CheckpointBundle(
        graph, encoders, sheaf, optimizers, header["epochs_done"], header["config_digest"]
    )
