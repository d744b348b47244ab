"""Decentralized multimodal alignment over per-edge comparison spaces.

Single-modality clients on a communication graph learn local encoders whose
embeddings are aligned pairwise: each edge carries a shared comparison space
reached through learned restriction maps, trained with a consistency
(sheaf-Laplacian) term, an edge-wise contrastive term, and a dual-map
reconstruction term, with exact byte accounting on the simulated links and
missing-modality inference through the trained maps.
"""

from .autodiff import (
    DegenerateEmbeddingError,
    ShapeMismatchError,
    Tensor,
    finite_difference_gradient,
    logsumexp_rows,
    rowwise_cosine_similarity,
)
from .config import ConfigError, RunConfig, parse_config, resolve_config
from .data import (
    DatasetFormatError,
    MultiViewDataset,
    RedundancyControl,
    apply_presence_dropout,
    class_balanced_split,
    generate_multiview,
    read_dataset,
    write_dataset,
)
from .encoders import Encoder, encode_batch, init_encoder
from .estimator import SheafAligner
from .evaluation import (
    InferenceReport,
    LinearProbe,
    RetrievalReport,
    dropout_inference_experiment,
    encode_views,
    few_shot_probe,
    infer_missing,
    recall_at_k,
    retrieval_report,
    train_linear_probe,
    zero_shot_prototype,
)
from .graph import CommGraph, ConnectivityError, GraphStructureError, build_graph, fully_connected
from .losses import (
    LossWeights,
    contrastive_edge_loss,
    laplacian_loss,
    node_loss,
    reconstruction_loss,
    total_loss,
)
from .sheaf import (
    Batch,
    SheafStructure,
    assemble_laplacian,
    init_sheaf,
    lift,
    project,
    quadratic_form_edgewise,
)
from .training import (
    Adam,
    CheckpointError,
    TrainConfig,
    TrainResult,
    TransportLedger,
    build_model,
    exchange_projections,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Batch",
    "CheckpointError",
    "CommGraph",
    "ConfigError",
    "ConnectivityError",
    "DatasetFormatError",
    "DegenerateEmbeddingError",
    "Encoder",
    "GraphStructureError",
    "InferenceReport",
    "LinearProbe",
    "LossWeights",
    "MultiViewDataset",
    "RedundancyControl",
    "RetrievalReport",
    "RunConfig",
    "ShapeMismatchError",
    "SheafAligner",
    "SheafStructure",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "TransportLedger",
    "apply_presence_dropout",
    "assemble_laplacian",
    "build_graph",
    "build_model",
    "class_balanced_split",
    "contrastive_edge_loss",
    "dropout_inference_experiment",
    "encode_batch",
    "encode_views",
    "exchange_projections",
    "few_shot_probe",
    "finite_difference_gradient",
    "fully_connected",
    "generate_multiview",
    "infer_missing",
    "init_encoder",
    "init_sheaf",
    "laplacian_loss",
    "lift",
    "load_checkpoint",
    "logsumexp_rows",
    "node_loss",
    "parse_config",
    "project",
    "quadratic_form_edgewise",
    "read_dataset",
    "recall_at_k",
    "reconstruction_loss",
    "resolve_config",
    "retrieval_report",
    "rowwise_cosine_similarity",
    "save_checkpoint",
    "total_loss",
    "train",
    "train_linear_probe",
    "write_dataset",
    "zero_shot_prototype",
]
