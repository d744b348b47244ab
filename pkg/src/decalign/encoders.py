"""Per-node MLP encoders mapping raw observations to stalk embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeMismatchError, Tensor
from .seeding import seed_stream
from .sheaf import _scaled_uniform

NONLINEARITIES = ("relu", "tanh", "identity")


@dataclass
class Encoder:
    """Fully connected stack; weights are [in x out], biases [1 x out].

    The nonlinearity is applied between layers, never after the last one,
    so tag "identity" makes the whole encoder linear.
    """

    widths: tuple[int, ...]
    weights: list[Tensor]
    biases: list[Tensor]
    nonlinearity: str

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    def named_parameters(self, prefix: str = "encoder") -> list[tuple[str, Tensor]]:
        out = []
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{prefix}/w{layer}", w))
            out.append((f"{prefix}/b{layer}", b))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.parameters())


def default_widths(input_dim: int, output_dim: int) -> tuple[int, ...]:
    """One hidden layer, twice the embedding width."""
    return (input_dim, 2 * output_dim, output_dim)


def init_encoder(widths, nonlinearity: str = "relu", seed: int = 0,
                 zero_init: bool = False) -> Encoder:
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise ValueError(f"encoder needs at least [in, out] widths, got {widths}")
    if any(w < 1 for w in widths):
        raise ValueError(f"encoder widths must be >= 1, got {widths}")
    if nonlinearity not in NONLINEARITIES:
        raise ValueError(f"unknown nonlinearity {nonlinearity!r}; use {NONLINEARITIES}")
    rng = seed_stream(seed, "encoder-init")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        if zero_init:
            w = np.zeros((fan_in, fan_out))
        else:
            w = _scaled_uniform(rng, fan_in, fan_out)
        weights.append(Tensor(w, requires_grad=True))
        biases.append(Tensor(np.zeros((1, fan_out)), requires_grad=True))
    return Encoder(widths, weights, biases, nonlinearity)


def encode_batch(enc: Encoder, x: Tensor) -> Tensor:
    """Forward pass over a [B x input_dim] batch; traced for gradients."""
    if x.cols != enc.input_dim:
        raise ShapeMismatchError(
            f"encoder expects {enc.input_dim} input features, got {x.cols}"
        )
    h = x
    last = len(enc.weights) - 1
    for layer, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        h = h @ w + b
        if layer != last:
            if enc.nonlinearity == "relu":
                h = h.relu()
            elif enc.nonlinearity == "tanh":
                h = h.tanh()
    return h
