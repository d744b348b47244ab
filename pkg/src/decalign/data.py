"""Synthetic multi-view datasets with a controllable redundancy split, plus
the SHAF1 on-disk format.

Every view observes the same underlying samples. A sample's latent is a
class-anchored shared vector concatenated with a per-view unique vector;
each view sees (shared + its own unique part) through a fixed seeded linear
mix plus Gaussian noise. Shrinking `shared_dim` against `unique_dim` lowers
the information the views have in common.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .seeding import seed_stream

MAGIC = b"SHAF1\x00"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    """Malformed SHAF1 file; message carries the byte offset and section."""


@dataclass(frozen=True)
class RedundancyControl:
    """Knobs for how much information views share.

    shared_dim + unique_dim is the latent width each view observes;
    class_separation scales the distance between class anchors in the
    shared part. view_dim defaults to the latent width; identity transforms
    require them equal.
    """

    shared_dim: int = 8
    unique_dim: int = 4
    noise_sigma: float = 0.1
    view_dim: int | None = None
    class_separation: float = 2.0
    identity_transforms: bool = False

    def __post_init__(self):
        if self.shared_dim < 0 or self.unique_dim < 0:
            raise ValueError("shared_dim and unique_dim must be >= 0")
        if self.shared_dim + self.unique_dim < 1:
            raise ValueError("need at least one latent dimension")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        latent = self.shared_dim + self.unique_dim
        if self.identity_transforms and self.view_dim not in (None, latent):
            raise ValueError("identity transforms require view_dim == shared_dim + unique_dim")

    @property
    def latent_dim(self) -> int:
        return self.shared_dim + self.unique_dim

    @property
    def observed_dim(self) -> int:
        return self.latent_dim if self.view_dim is None else self.view_dim


@dataclass
class MultiViewDataset:
    """Co-observed samples: one observation matrix per view, a presence mask,
    and optional class labels."""

    observations: list[np.ndarray]  # each sample_count x in_dim_v, float64
    presence: np.ndarray            # sample_count x num_views, bool
    labels: np.ndarray | None = None
    num_classes: int = 0

    def __post_init__(self):
        self.presence = np.asarray(self.presence, dtype=bool)
        counts = {obs.shape[0] for obs in self.observations}
        if len(counts) > 1:
            raise ValueError(f"views disagree on sample count: {sorted(counts)}")
        if self.presence.shape != (self.sample_count, self.num_views):
            raise ValueError(
                f"presence shape {self.presence.shape} does not match "
                f"{self.sample_count} samples x {self.num_views} views"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.sample_count,):
                raise ValueError("labels must be one integer per sample")
            if self.num_classes < 1:
                raise ValueError("labeled dataset needs num_classes >= 1")
            if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
                raise ValueError(
                    f"labels must lie in [0, {self.num_classes}), "
                    f"got range [{self.labels.min()}, {self.labels.max()}]"
                )

    @property
    def sample_count(self) -> int:
        return self.observations[0].shape[0] if self.observations else 0

    @property
    def num_views(self) -> int:
        return len(self.observations)

    @property
    def input_dims(self) -> tuple[int, ...]:
        return tuple(obs.shape[1] for obs in self.observations)

    def subset(self, indices) -> "MultiViewDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return MultiViewDataset(
            observations=[obs[idx].copy() for obs in self.observations],
            presence=self.presence[idx].copy(),
            labels=None if self.labels is None else self.labels[idx].copy(),
            num_classes=self.num_classes,
        )


def generate_multiview(
    num_classes: int,
    samples_per_class: int,
    ctrl: RedundancyControl,
    n_views: int = 3,
    seed: int = 0,
) -> MultiViewDataset:
    """Seeded synthetic dataset; identical (params, seed) give identical data.

    Rows are grouped by class (exactly samples_per_class each); shuffling is
    the trainer's job.
    """
    if num_classes < 1 or samples_per_class < 1 or n_views < 1:
        raise ValueError("num_classes, samples_per_class, and n_views must be >= 1")
    rng = seed_stream(seed, "datagen")
    total = num_classes * samples_per_class
    labels = np.repeat(np.arange(num_classes), samples_per_class)

    anchors = rng.standard_normal((num_classes, ctrl.shared_dim)) * ctrl.class_separation
    shared = anchors[labels] + rng.standard_normal((total, ctrl.shared_dim))

    transforms = []
    for _ in range(n_views):
        if ctrl.identity_transforms:
            transforms.append(np.eye(ctrl.latent_dim))
        else:
            scale = 1.0 / np.sqrt(ctrl.latent_dim)
            transforms.append(
                rng.standard_normal((ctrl.observed_dim, ctrl.latent_dim)) * scale
            )

    observations = []
    for v in range(n_views):
        unique = rng.standard_normal((total, ctrl.unique_dim))
        latent = np.concatenate([shared, unique], axis=1)
        noise = rng.standard_normal((total, ctrl.observed_dim))
        observations.append(latent @ transforms[v].T + ctrl.noise_sigma * noise)

    presence = np.ones((total, n_views), dtype=bool)
    return MultiViewDataset(observations, presence, labels, num_classes)


def apply_presence_dropout(ds: MultiViewDataset, p_drop: float, seed: int = 0) -> MultiViewDataset:
    """Mark each (sample, view) absent with probability p_drop, independently.

    Samples left with zero present views get their draw re-rolled until at
    least one view survives; deterministic per seed.
    """
    if not 0.0 <= p_drop < 1.0:
        raise ValueError(f"p_drop must be in [0, 1), got {p_drop}")
    rng = seed_stream(seed, "presence-dropout")
    keep = rng.random(ds.presence.shape) >= p_drop
    new_presence = ds.presence & keep
    dead = np.flatnonzero(~new_presence.any(axis=1))
    while dead.size:
        keep = rng.random((dead.size, ds.num_views)) >= p_drop
        new_presence[dead] = ds.presence[dead] & keep
        dead = dead[~new_presence[dead].any(axis=1)]
    return replace(ds, presence=new_presence)


def class_balanced_split(
    ds: MultiViewDataset, train_per_class: int
) -> tuple[MultiViewDataset, MultiViewDataset]:
    """First train_per_class rows of each class for training, rest held out."""
    if ds.labels is None:
        raise ValueError("class-balanced split needs a labeled dataset")
    train_idx, test_idx = [], []
    for c in range(ds.num_classes):
        rows = np.flatnonzero(ds.labels == c)
        if rows.size < train_per_class:
            raise ValueError(
                f"class {c} has {rows.size} samples, fewer than train_per_class={train_per_class}"
            )
        train_idx.append(rows[:train_per_class])
        test_idx.append(rows[train_per_class:])
    return ds.subset(np.concatenate(train_idx)), ds.subset(np.concatenate(test_idx))


# -- SHAF1 serialization ------------------------------------------------------
#
# magic "SHAF1\0" | header <u32 version, u32 n_nodes, u64 n_samples,
# u32 num_classes (0 = unlabeled)> | per node <u32 node_id, u32 in_dim,
# float32 row-major matrix> | presence mask packed bits (sample-major,
# node-minor, MSB first) | u32 labels when num_classes > 0.
# All integers little-endian.

_HEADER = struct.Struct("<IIQI")
_NODE_HEADER = struct.Struct("<II")


def write_dataset(ds: MultiViewDataset, path) -> None:
    chunks = [MAGIC]
    chunks.append(_HEADER.pack(FORMAT_VERSION, ds.num_views, ds.sample_count, ds.num_classes))
    for node_id, obs in enumerate(ds.observations):
        chunks.append(_NODE_HEADER.pack(node_id, obs.shape[1]))
        chunks.append(np.ascontiguousarray(obs, dtype="<f4").tobytes())
    chunks.append(np.packbits(ds.presence.astype(np.uint8).ravel()).tobytes())
    if ds.num_classes > 0:
        chunks.append(np.ascontiguousarray(ds.labels, dtype="<u4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def read(self, n: int, section: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise DatasetFormatError(
                f"truncated {section} at byte {self.offset}: "
                f"need {n} bytes, have {len(self.blob) - self.offset}"
            )
        out = self.blob[self.offset : self.offset + n]
        self.offset += n
        return out


def read_dataset(path) -> MultiViewDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    cur = _Cursor(blob)
    magic = cur.read(len(MAGIC), "magic")
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic at offset 0: {magic!r}")
    version, n_nodes, n_samples, num_classes = _HEADER.unpack(
        cur.read(_HEADER.size, "header")
    )
    if version != FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported format version {version} at byte {len(MAGIC)} "
            f"(expected {FORMAT_VERSION})"
        )
    observations = []
    for k in range(n_nodes):
        node_id, in_dim = _NODE_HEADER.unpack(
            cur.read(_NODE_HEADER.size, f"node {k} header")
        )
        if node_id != k:
            raise DatasetFormatError(
                f"node header {k} at byte {cur.offset - _NODE_HEADER.size} "
                f"declares id {node_id}"
            )
        raw = cur.read(4 * n_samples * in_dim, f"node {k} observations")
        observations.append(
            np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(n_samples, in_dim)
        )
    mask_bytes = (n_samples * n_nodes + 7) // 8
    raw = cur.read(mask_bytes, "presence mask")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[: n_samples * n_nodes]
    presence = bits.astype(bool).reshape(n_samples, n_nodes)
    labels = None
    if num_classes > 0:
        raw = cur.read(4 * n_samples, "labels")
        labels = np.frombuffer(raw, dtype="<u4").astype(np.int64)
    if cur.offset != len(blob):
        raise DatasetFormatError(
            f"{len(blob) - cur.offset} trailing bytes at offset {cur.offset}"
        )
    return MultiViewDataset(observations, presence, labels, int(num_classes))
