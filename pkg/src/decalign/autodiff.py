"""Dense 2-D float64 matrices with reverse-mode differentiation.

This is the numeric currency of the whole package: encoder layers,
restriction/dual maps, and every loss term are built from the handful of
primitives here. Each traced operation records its parent tensors and a
closure that pushes the output adjoint back onto them; `backward()` walks
the recorded graph once, in reverse topological order.

Parents are stored in tuples (never sets) so the traversal order, and with
it the floating-point accumulation order, is identical on every run.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

COSINE_NORM_FLOOR = 1e-12


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DegenerateEmbeddingError(ValueError):
    """A cosine-similarity row has (near-)zero norm.

    A zero row means an encoder collapsed. Padding the norm with an epsilon
    would silently mask that failure, so it is a hard error instead.
    """


def _as_matrix(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeMismatchError(f"tensors are 2-D matrices, got shape {arr.shape}")
    return arr


class Tensor:
    """A rows x cols float64 matrix, optionally traced for backward().

    Tensors are treated as immutable values once created; the only sanctioned
    mutation is the optimizer's in-place parameter update between steps,
    which bumps `version` (used to assert update ownership in tests).
    """

    __slots__ = ("data", "grad", "requires_grad", "version", "_parents", "_push")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_matrix(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.version = 0
        self._parents: tuple[Tensor, ...] = ()
        self._push: Callable[[], None] | None = None

    # -- shape helpers ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeMismatchError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- gradient bookkeeping ---------------------------------------------

    def _add_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g)
        else:
            self.grad = self.grad + g

    def grad_or_zero(self) -> np.ndarray:
        """Adjoint after backward(); leaves unreachable from the output get 0."""
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate adjoints of every traced tensor reachable from this scalar."""
        if self.data.shape != (1, 1):
            raise ShapeMismatchError(
                f"backward() requires a 1x1 scalar output, got {self.shape}"
            )
        if not self.requires_grad:
            raise ValueError("backward() called on an untraced tensor")
        order = _topological_order(self)
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._push is not None:
                node._push()

    # -- primitives --------------------------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        if self.cols != other.rows:
            raise ShapeMismatchError(
                f"matmul inner dims differ: {self.shape} x {other.shape}"
            )
        out_data = self.data @ other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(out_data)
        out = Tensor(out_data, requires_grad=True)
        out._parents = (self, other)

        def push() -> None:
            g = out.grad
            if self.requires_grad:
                self._add_grad(g @ other.data.T)
            if other.requires_grad:
                other._add_grad(self.data.T @ g)

        out._push = push
        return out

    __matmul__ = matmul

    def transpose(self) -> "Tensor":
        out_data = self.data.T.copy()
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, requires_grad=True)
        out._parents = (self,)

        def push() -> None:
            self._add_grad(out.grad.T)

        out._push = push
        return out

    def __add__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            return NotImplemented
        broadcast_other = other.shape != self.shape and other.shape == (1, self.cols)
        if other.shape != self.shape and not broadcast_other:
            raise ShapeMismatchError(f"add shapes differ: {self.shape} + {other.shape}")
        out_data = self.data + other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(out_data)
        out = Tensor(out_data, requires_grad=True)
        out._parents = (self, other)

        def push() -> None:
            g = out.grad
            if self.requires_grad:
                self._add_grad(g)
            if other.requires_grad:
                other._add_grad(g.sum(axis=0, keepdims=True) if broadcast_other else g)

        out._push = push
        return out

    def __sub__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            return NotImplemented
        if other.shape != self.shape:
            raise ShapeMismatchError(f"sub shapes differ: {self.shape} - {other.shape}")
        out_data = self.data - other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(out_data)
        out = Tensor(out_data, requires_grad=True)
        out._parents = (self, other)

        def push() -> None:
            g = out.grad
            if self.requires_grad:
                self._add_grad(g)
            if other.requires_grad:
                other._add_grad(-g)

        out._push = push
        return out

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            c = float(other)
            out_data = self.data * c
            if not self.requires_grad:
                return Tensor(out_data)
            out = Tensor(out_data, requires_grad=True)
            out._parents = (self,)

            def push_scalar() -> None:
                self._add_grad(out.grad * c)

            out._push = push_scalar
            return out
        if isinstance(other, Tensor):
            if other.shape != self.shape:
                raise ShapeMismatchError(
                    f"elementwise mul shapes differ: {self.shape} * {other.shape}"
                )
            out_data = self.data * other.data
            if not (self.requires_grad or other.requires_grad):
                return Tensor(out_data)
            out = Tensor(out_data, requires_grad=True)
            out._parents = (self, other)

            def push() -> None:
                g = out.grad
                if self.requires_grad:
                    self._add_grad(g * other.data)
                if other.requires_grad:
                    other._add_grad(g * self.data)

            out._push = push
            return out
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return self * (1.0 / float(other))
        return NotImplemented

    def sum(self) -> "Tensor":
        out_data = np.array([[self.data.sum()]])
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, requires_grad=True)
        out._parents = (self,)

        def push() -> None:
            self._add_grad(np.full_like(self.data, out.grad[0, 0]))

        out._push = push
        return out

    def sum_rows(self) -> "Tensor":
        """Row-wise sum: [B x d] -> [B x 1]."""
        out_data = self.data.sum(axis=1, keepdims=True)
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, requires_grad=True)
        out._parents = (self,)

        def push() -> None:
            self._add_grad(np.broadcast_to(out.grad, self.data.shape))

        out._push = push
        return out

    def relu(self) -> "Tensor":
        out_data = np.maximum(self.data, 0.0)
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, requires_grad=True)
        out._parents = (self,)

        def push() -> None:
            self._add_grad((self.data > 0.0) * out.grad)

        out._push = push
        return out

    def tanh(self) -> "Tensor":
        out_data = np.tanh(self.data)
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, requires_grad=True)
        out._parents = (self,)

        def push() -> None:
            self._add_grad((1.0 - out_data * out_data) * out.grad)

        out._push = push
        return out

    def take_rows(self, indices) -> "Tensor":
        """Gather the given rows; masked-out rows are never touched."""
        idx = np.asarray(indices, dtype=np.intp)
        out_data = self.data[idx]
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, requires_grad=True)
        out._parents = (self,)

        def push() -> None:
            scattered = np.zeros_like(self.data)
            np.add.at(scattered, idx, out.grad)
            self._add_grad(scattered)

        out._push = push
        return out

    def diagonal(self) -> "Tensor":
        """Diagonal of a square matrix as a [B x 1] column."""
        if self.rows != self.cols:
            raise ShapeMismatchError(f"diagonal() needs a square matrix, got {self.shape}")
        n = self.rows
        out_data = self.data.diagonal().reshape(n, 1).copy()
        if not self.requires_grad:
            return Tensor(out_data)
        out = Tensor(out_data, requires_grad=True)
        out._parents = (self,)

        def push() -> None:
            scattered = np.zeros_like(self.data)
            scattered[np.arange(n), np.arange(n)] = out.grad[:, 0]
            self._add_grad(scattered)

        out._push = push
        return out


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def rowwise_cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs cosine similarity of rows: [B x d], [B x d] -> [B x B].

    Entry (n, m) compares row n of `a` against row m of `b`. Rows with norm
    below COSINE_NORM_FLOOR raise DegenerateEmbeddingError.
    """
    if a.shape != b.shape:
        raise ShapeMismatchError(f"cosine shapes differ: {a.shape} vs {b.shape}")
    norm_a = np.linalg.norm(a.data, axis=1, keepdims=True)
    norm_b = np.linalg.norm(b.data, axis=1, keepdims=True)
    for name, norms in (("left", norm_a), ("right", norm_b)):
        if norms.min() < COSINE_NORM_FLOOR:
            row = int(norms.argmin())
            raise DegenerateEmbeddingError(
                f"{name} row {row} has norm {norms.min():.3e}; embeddings collapsed"
            )
    unit_a = a.data / norm_a
    unit_b = b.data / norm_b
    out_data = unit_a @ unit_b.T
    if not (a.requires_grad or b.requires_grad):
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True)
    out._parents = (a, b)

    def push() -> None:
        g = out.grad
        weighted = g * out_data
        if a.requires_grad:
            a._add_grad((g @ unit_b - weighted.sum(axis=1, keepdims=True) * unit_a) / norm_a)
        if b.requires_grad:
            b._add_grad((g.T @ unit_a - weighted.sum(axis=0, keepdims=True).T * unit_b) / norm_b)

    out._push = push
    return out


def logsumexp_rows(x: Tensor) -> Tensor:
    """Row-wise log-sum-exp with max shift: [B x C] -> [B x 1]."""
    shift = x.data.max(axis=1, keepdims=True)
    out_data = shift + np.log(np.exp(x.data - shift).sum(axis=1, keepdims=True))
    if not x.requires_grad:
        return Tensor(out_data)
    out = Tensor(out_data, requires_grad=True)
    out._parents = (x,)

    def push() -> None:
        x._add_grad(np.exp(x.data - out_data) * out.grad)

    out._push = push
    return out


def finite_difference_gradient(
    f: Callable[[Tensor], float], x: Tensor, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of scalar f with respect to x, entry by entry.

    Mutates x.data in place during probing and restores it; f is re-evaluated
    from scratch for every probe, so it stays independent of backward().
    """
    base = x.data
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        saved = base[idx]
        base[idx] = saved + step
        f_plus = float(f(x))
        base[idx] = saved - step
        f_minus = float(f(x))
        base[idx] = saved
        grad[idx] = (f_plus - f_minus) / (2.0 * step)
    return grad
