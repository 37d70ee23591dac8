"""Minimal reverse-mode autodiff over dense float64 matrices.

Every value is a 2-d array: scalars are (1, 1), vectors are (1, n).
Ops build a define-by-run graph of Node objects; ``backward`` walks it
once in reverse topological order. Graphs are rebuilt every step, so a
Node is cheap and owns nothing beyond its value, grad and parents.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy import special

# When True (the default), every op output is checked for NaN/Inf.
# Turning it off saves a pass over each array on large graphs.
CHECK_FINITE = True


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    pass


class DomainError(AutodiffError):
    pass


class NonFiniteError(AutodiffError):
    pass


def _as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"only rank-1/2 values supported, got shape {a.shape}")
    return np.ascontiguousarray(a)


def _check_finite(value: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = _as_matrix(value)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() on non-scalar node of shape {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Node(shape={self.shape}, leaf={self.is_leaf()})"


def constant(x) -> Node:
    return Node(x)


class Parameter(Node):
    """A named leaf node with learnable value."""

    __slots__ = ("name",)

    def __init__(self, name: str, value):
        super().__init__(value)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class ParamSet:
    """Ordered registry of uniquely named parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, value)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad[:] = 0.0

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, p in self._params.items():
            v = values[k]
            if v.shape != p.value.shape:
                raise ShapeError(f"value for {k!r} has shape {v.shape}, expected {p.value.shape}")
            p.value[:] = v


def _node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum grad over axes that were broadcast up from a size-1 dim."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise ShapeError(f"cannot reduce grad of shape {grad.shape} to {shape}")
    return out


def _broadcastable(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return all(x == y or x == 1 or y == 1 for x, y in zip(a, b))


def _elementwise(a: Node, b: Node, op: str, value: np.ndarray, da, db) -> Node:
    _check_finite(value, op)
    out = Node(value, parents=(a, b))

    def backward():
        a.grad += _unbroadcast(da(out.grad), a.shape)
        b.grad += _unbroadcast(db(out.grad), b.shape)

    out._backward = backward
    return out


def add(a, b) -> Node:
    a, b = _node(a), _node(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _elementwise(a, b, "add", a.value + b.value, lambda g: g, lambda g: g)


def sub(a, b) -> Node:
    a, b = _node(a), _node(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return _elementwise(a, b, "sub", a.value - b.value, lambda g: g, lambda g: -g)


def mul(a, b) -> Node:
    a, b = _node(a), _node(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    return _elementwise(a, b, "mul", a.value * b.value,
                        lambda g: g * b.value, lambda g: g * a.value)


def scale(a, s: float) -> Node:
    a = _node(a)
    s = float(s)
    out = Node(a.value * s, parents=(a,))
    _check_finite(out.value, "scale")

    def backward():
        a.grad += out.grad * s

    out._backward = backward
    return out


def matmul(a, b) -> Node:
    a, b = _node(a), _node(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} @ {b.shape}")
    out = Node(a.value @ b.value, parents=(a, b))
    _check_finite(out.value, "matmul")

    def backward():
        a.grad += out.grad @ b.value.T
        b.grad += a.value.T @ out.grad

    out._backward = backward
    return out


def sparse_matmul(a_sparse, b) -> Node:
    """Left-multiply by a constant scipy sparse matrix: out = A @ b."""
    b = _node(b)
    if not sp.issparse(a_sparse):
        raise ShapeError("sparse_matmul expects a scipy sparse matrix on the left")
    if a_sparse.shape[1] != b.shape[0]:
        raise ShapeError(f"sparse_matmul: inner dims disagree, {a_sparse.shape} @ {b.shape}")
    a_csr = a_sparse.tocsr()
    out = Node(np.asarray(a_csr @ b.value), parents=(b,))
    _check_finite(out.value, "sparse_matmul")

    def backward():
        b.grad += np.asarray(a_csr.T @ out.grad)

    out._backward = backward
    return out


def relu(x) -> Node:
    x = _node(x)
    out = Node(np.maximum(x.value, 0.0), parents=(x,))

    def backward():
        x.grad += out.grad * (x.value > 0.0)

    out._backward = backward
    return out


def sigmoid(x) -> Node:
    x = _node(x)
    out = Node(special.expit(x.value), parents=(x,))
    _check_finite(out.value, "sigmoid")

    def backward():
        x.grad += out.grad * out.value * (1.0 - out.value)

    out._backward = backward
    return out


def tanh(x) -> Node:
    x = _node(x)
    out = Node(np.tanh(x.value), parents=(x,))

    def backward():
        x.grad += out.grad * (1.0 - out.value ** 2)

    out._backward = backward
    return out


def log(x) -> Node:
    x = _node(x)
    if np.any(x.value <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    out = Node(np.log(x.value), parents=(x,))
    _check_finite(out.value, "log")

    def backward():
        x.grad += out.grad / x.value

    out._backward = backward
    return out


def exp(x) -> Node:
    x = _node(x)
    with np.errstate(over="ignore"):
        out = Node(np.exp(x.value), parents=(x,))
    _check_finite(out.value, "exp")

    def backward():
        x.grad += out.grad * out.value

    out._backward = backward
    return out


def clip(x, lo: float, hi: float) -> Node:
    """Clamp values to [lo, hi]; clamped entries get zero gradient."""
    x = _node(x)
    out = Node(np.clip(x.value, lo, hi), parents=(x,))
    inside = (x.value >= lo) & (x.value <= hi)

    def backward():
        x.grad += out.grad * inside

    out._backward = backward
    return out


def softmax_rows(x) -> Node:
    """Row-wise softmax with max-subtraction for stability."""
    x = _node(x)
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Node(s, parents=(x,))
    _check_finite(out.value, "softmax_rows")

    def backward():
        g = out.grad
        dot = (g * out.value).sum(axis=1, keepdims=True)
        x.grad += out.value * (g - dot)

    out._backward = backward
    return out


def logsumexp_rows(x) -> Node:
    """Row-wise log(sum(exp(x))), returned as an (n, 1) column."""
    x = _node(x)
    m = x.value.max(axis=1, keepdims=True)
    e = np.exp(x.value - m)
    sums = e.sum(axis=1, keepdims=True)
    out = Node(m + np.log(sums), parents=(x,))
    softmax = e / sums
    _check_finite(out.value, "logsumexp_rows")

    def backward():
        x.grad += softmax * out.grad

    out._backward = backward
    return out


def total_sum(x) -> Node:
    x = _node(x)
    out = Node(x.value.sum(), parents=(x,))
    _check_finite(out.value, "total_sum")

    def backward():
        x.grad += out.grad[0, 0]

    out._backward = backward
    return out


def mean(x) -> Node:
    x = _node(x)
    n = x.value.size
    out = Node(x.value.sum() / n, parents=(x,))
    _check_finite(out.value, "mean")

    def backward():
        x.grad += out.grad[0, 0] / n

    out._backward = backward
    return out


def concat_rows(nodes) -> Node:
    nodes = [_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat_rows of empty list")
    cols = nodes[0].shape[1]
    for n in nodes:
        if n.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts differ, {n.shape[1]} vs {cols}")
    out = Node(np.vstack([n.value for n in nodes]), parents=tuple(nodes))
    offsets = np.cumsum([0] + [n.shape[0] for n in nodes])

    def backward():
        for n, i0, i1 in zip(nodes, offsets[:-1], offsets[1:]):
            n.grad += out.grad[i0:i1, :]

    out._backward = backward
    return out


def concat_cols(nodes) -> Node:
    nodes = [_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat_cols of empty list")
    rows = nodes[0].shape[0]
    for n in nodes:
        if n.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ, {n.shape[0]} vs {rows}")
    out = Node(np.hstack([n.value for n in nodes]), parents=tuple(nodes))
    offsets = np.cumsum([0] + [n.shape[1] for n in nodes])

    def backward():
        for n, j0, j1 in zip(nodes, offsets[:-1], offsets[1:]):
            n.grad += out.grad[:, j0:j1]

    out._backward = backward
    return out


def slice_rows(x, i0: int, i1: int) -> Node:
    x = _node(x)
    if not (0 <= i0 <= i1 <= x.shape[0]):
        raise ShapeError(f"slice_rows [{i0}:{i1}] out of range for shape {x.shape}")
    out = Node(x.value[i0:i1, :], parents=(x,))

    def backward():
        x.grad[i0:i1, :] += out.grad

    out._backward = backward
    return out


def slice_cols(x, j0: int, j1: int) -> Node:
    x = _node(x)
    if not (0 <= j0 <= j1 <= x.shape[1]):
        raise ShapeError(f"slice_cols [{j0}:{j1}] out of range for shape {x.shape}")
    out = Node(x.value[:, j0:j1], parents=(x,))

    def backward():
        x.grad[:, j0:j1] += out.grad

    out._backward = backward
    return out


def embedding_rows(table, indices) -> Node:
    """Gather rows of a matrix; backward scatters only into gathered rows."""
    table = _node(table)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"row index out of range: valid [0, {table.shape[0]}), got "
            f"[{idx.min()}, {idx.max()}]")
    out = Node(table.value[idx], parents=(table,))

    def backward():
        np.add.at(table.grad, idx, out.grad)

    out._backward = backward
    return out


# Gathering from any node (not just parameter tables) is the same op.
gather_rows = embedding_rows


def row_dot(a, b) -> Node:
    """Per-row dot product of two same-shape matrices, as an (n, 1) column."""
    a, b = _node(a), _node(b)
    if a.shape != b.shape:
        raise ShapeError(f"row_dot: shapes differ, {a.shape} vs {b.shape}")
    out = Node((a.value * b.value).sum(axis=1, keepdims=True), parents=(a, b))
    _check_finite(out.value, "row_dot")

    def backward():
        a.grad += out.grad * b.value
        b.grad += out.grad * a.value

    out._backward = backward
    return out


def reshape(x, rows: int, cols: int) -> Node:
    x = _node(x)
    if rows * cols != x.value.size:
        raise ShapeError(f"cannot reshape {x.shape} to ({rows}, {cols})")
    out = Node(x.value.reshape(rows, cols), parents=(x,))

    def backward():
        x.grad += out.grad.reshape(x.shape)

    out._backward = backward
    return out


def transpose(x) -> Node:
    x = _node(x)
    out = Node(x.value.T.copy(), parents=(x,))

    def backward():
        x.grad += out.grad.T

    out._backward = backward
    return out


def _toposort(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Populate grads of every leaf reachable from a scalar loss.

    Interior node grads are reset at the start of each call, so leaf
    grads accumulate across calls (two backwards double them).
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    for node in order:
        if not node.is_leaf():
            node.grad[:] = 0.0
    if loss.is_leaf():
        loss.grad += 1.0
        return
    loss.grad[:] = 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


def grad_check(f, inputs, eps: float = 1e-5, floor: float = 1e-8) -> float:
    """Compare analytic grads of a scalar function against central differences.

    ``f`` takes the given Nodes and returns a scalar Node; it must rebuild
    its graph on every call. Returns the max relative error over all input
    elements, with ``floor`` as the denominator's absolute floor.
    """
    inputs = [_node(x) for x in inputs]
    for x in inputs:
        x.grad[:] = 0.0
    loss = f(*inputs)
    backward(loss)
    analytic = [x.grad.copy() for x in inputs]

    worst = 0.0
    for x, an in zip(inputs, analytic):
        flat = x.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f(*inputs).item()
            flat[i] = orig - eps
            down = f(*inputs).item()
            flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            a = an.reshape(-1)[i]
            denom = max(abs(a), abs(fd), floor)
            worst = max(worst, abs(a - fd) / denom)
    return worst


def format_grad_check_report(results: dict[str, float], tol: float) -> str:
    """Plain-text table of per-op gradient check results for CI logs."""
    lines = ["gradient check (max relative error, tol %.1e)" % tol]
    for name, err in results.items():
        status = "ok" if err <= tol else "FAIL"
        lines.append(f"  {name:<24} {err:12.3e}  {status}")
    return "\n".join(lines)
