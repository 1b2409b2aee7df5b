"""Dense float64 tensors with tape-recorded reverse-mode differentiation.

A :class:`Tape` collects every operation executed while it is active (via
``with Tape() as tape:``). Operations append nodes in execution order,
which is already a topological order, so :func:`backward` is a single
reverse sweep that accumulates gradients additively for shared inputs.
Without an active tape, ops run forward-only (used for evaluation).

All values are float64. Every op validates that its output is finite and
raises ``ValueError`` otherwise.
"""

from __future__ import annotations

import numpy as np

_GUARD = 1e-12  # floor for log arguments
_MASK_NEG = -1e9  # additive mask bias; exp() underflows to exactly 0.0


class Tensor:
    """Immutable-by-convention wrapper around a float64 ndarray."""

    __slots__ = ("data", "name")

    def __init__(self, values, name: str | None = None):
        self.data = np.asarray(values, dtype=np.float64)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Arithmetic sugar; delegates to the taped ops below.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class _Node:
    __slots__ = ("out", "inputs", "bwd")

    def __init__(self, out, inputs, bwd):
        self.out = out
        self.inputs = inputs
        self.bwd = bwd


_ACTIVE: "Tape | None" = None


class Tape:
    """Single-owner record of ops for one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        global _ACTIVE
        self._prev = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = self._prev
        return False

    def __len__(self):
        return len(self.nodes)


class Gradients:
    """Gradient lookup keyed by tensor identity; absent tensors get zeros."""

    def __init__(self, by_id: dict[int, np.ndarray]):
        self._by_id = by_id

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._by_id.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._by_id


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse sweep over the tape from a scalar loss.

    Leaves that are not on any path to ``loss`` get zero gradient.
    """
    if loss.shape != ():
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.out))
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.bwd(g)):
            if gi is None:
                continue
            acc = grads.get(id(inp))
            if acc is None:
                grads[id(inp)] = gi.copy() if gi.base is not None or gi is g else gi
            else:
                acc += gi
    return Gradients(grads)


def _record(out: Tensor, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    if not np.all(np.isfinite(out.data)):
        raise ValueError("non-finite values produced by an op")
    if _ACTIVE is not None:
        _ACTIVE.nodes.append(_Node(out, inputs, bwd))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return np.ascontiguousarray(g)


# ---------------------------------------------------------------------
# core ops
# ---------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)

    def bwd(g):
        return (g * c,)

    return _record(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        ga = _unbroadcast(np.matmul(g, bt), a.shape)
        gb = _unbroadcast(np.matmul(at, g), b.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError(f"transpose expects a matrix, got shape {a.shape}")
    out = Tensor(a.data.T)

    def bwd(g):
        return (g.T,)

    return _record(out, (a,), bwd)


def swap_last2(a: Tensor) -> Tensor:
    out = Tensor(np.swapaxes(a.data, -1, -2))

    def bwd(g):
        return (np.swapaxes(g, -1, -2),)

    return _record(out, (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        return (g.reshape(a.shape),)

    return _record(out, (a,), bwd)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bwd)


def gather_rows(table: Tensor, indices) -> Tensor:
    """Row lookup (embedding gather); backward scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(table.data[idx])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), bwd)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def bwd(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean())

    def bwd(g):
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _record(out, (a,), bwd)


def sum_last(a: Tensor) -> Tensor:
    """Sum over the last axis, keeping it as size 1."""
    out = Tensor(a.data.sum(axis=-1, keepdims=True))

    def bwd(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), bwd)


def powc(a: Tensor, p: float) -> Tensor:
    """Elementwise power by a constant exponent (a must stay positive if p<1)."""
    out = Tensor(np.power(a.data, p))

    def bwd(g):
        return (g * p * np.power(a.data, p - 1.0),)

    return _record(out, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def bwd(g):
        return (g * (a.data > 0.0),)

    return _record(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _record(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)

    def bwd(g):
        return (g * y,)

    return _record(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    """Natural log with its argument floored at 1e-12 (flat below the floor)."""
    out = Tensor(np.log(np.maximum(a.data, _GUARD)))

    def bwd(g):
        return (np.where(a.data > _GUARD, g / np.maximum(a.data, _GUARD), 0.0),)

    return _record(out, (a,), bwd)


def softmax(a: Tensor) -> Tensor:
    """Max-subtracted softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(gain.data * xhat + bias.data)

    def bwd(g):
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        dxhat = g * gain.data
        # standard layer-norm backward, fully vectorized over leading axes
        dx = inv / d * (d * dxhat
                        - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return dx, ggain, gbias

    return _record(out, (x, gain, bias), bwd)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0,1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * keep)

    def bwd(g):
        return (g * keep,)

    return _record(out, (x,), bwd)


def pairwise_sqdist(x: Tensor, y: Tensor) -> Tensor:
    """Squared euclidean distances between all row pairs: (m,d),(t,d) -> (m,t)."""
    diff = x.data[:, None, :] - y.data[None, :, :]
    out = Tensor((diff * diff).sum(axis=-1))

    def bwd(g):
        gx = 2.0 * (x.data * g.sum(axis=1, keepdims=True) - g @ y.data)
        gy = 2.0 * (y.data * g.sum(axis=0)[:, None] - g.T @ x.data)
        return gx, gy

    return _record(out, (x, y), bwd)


def masked_mean_rows(x: Tensor, mask) -> Tensor:
    """Mean over the rows of x selected by a boolean mask: (n,d) -> (1,d)."""
    m = np.asarray(mask, dtype=bool)
    count = int(m.sum())
    if count == 0:
        raise ValueError("masked_mean_rows: all rows masked out")
    out = Tensor(x.data[m].mean(axis=0, keepdims=True))

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[m] = g / count
        return (gx,)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------
# composites (taped via the primitives above)
# ---------------------------------------------------------------------


def cosine_rows(x: Tensor, y: Tensor) -> Tensor:
    """Rowwise cosine similarity: (n,d),(n,d) -> (n,1)."""
    nx = powc(sum_last(mul(x, x)), 0.5)
    ny = powc(sum_last(mul(y, y)), 0.5)
    if np.any(nx.data == 0.0) or np.any(ny.data == 0.0):
        raise ValueError("cosine similarity undefined for a zero row")
    dots = sum_last(mul(x, y))
    return mul(dots, powc(mul(nx, ny), -1.0))


def normalize_rows(x: Tensor) -> Tensor:
    """Scale each row to unit euclidean norm; zero rows are an error."""
    n2 = sum_last(mul(x, x))
    if np.any(n2.data == 0.0):
        raise ValueError("cannot normalize a zero row")
    return mul(x, powc(n2, -0.5))


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Add a non-differentiable constant array (e.g. an attention mask bias)."""
    out = Tensor(a.data + c)

    def bwd(g):
        return (_unbroadcast(g, a.shape),)

    return _record(out, (a,), bwd)
