"""Small reverse-mode autodiff engine on top of numpy.

Every node is a :class:`Value` wrapping a float64 array of rank 0, 1 or 2.
Operations record a closure that maps the upstream gradient to one gradient
per parent; :meth:`Value.backward` walks the graph once in reverse
topological order and accumulates.  Broadcasting is limited to what numpy
does between rank <= 2 operands (row/column vectors against matrices).
"""

from __future__ import annotations

import json
import math
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_grad_enabled = True


@contextmanager
def no_grad():
    """Build values without recording the graph (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Value:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 2:
            raise DimensionError(f"rank {self.data.ndim} values are not supported")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Value, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Value(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into every reachable requires-grad node."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {self.shape}")
        order: list[Value] = []
        seen: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data) if self.grad is None else self.grad + 1.0
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for p, g in zip(node._parents, grads):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _node(data: np.ndarray, parents: tuple[Value, ...], backward: Callable) -> Value:
    out = Value(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Value, b: Value) -> tuple[int, ...]:
    if a.shape == b.shape:
        return a.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    return _node(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def neg(a: Value) -> Value:
    return _node(-a.data, (a,), lambda g: (-g,))


def tanh(a: Value) -> Value:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Value) -> Value:
    y = _sigmoid(a.data)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def exp(a: Value) -> Value:
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,))


def log(a: Value) -> Value:
    x = a.data
    return _node(np.log(x), (a,), lambda g: (g / x,))


def elementwise(kind: str, *operands) -> Value:
    """Dispatch by name: ``add``, ``mul``, ``tanh`` or ``sigmoid``."""
    table = {"add": (add, 2), "mul": (mul, 2), "tanh": (tanh, 1), "sigmoid": (sigmoid, 1)}
    if kind not in table:
        raise ValueError(f"unknown elementwise op {kind!r}")
    fn, arity = table[kind]
    if len(operands) != arity:
        raise ContractError(f"{kind} takes {arity} operand(s), got {len(operands)}")
    return fn(*operands)


# ------------------------------------------------------------------ reductions


def sum(a: Value, axis: int | None = None, keepdims: bool = False) -> Value:  # noqa: A001
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(out, (a,), backward)


def mean(a: Value, axis: int | None = None) -> Value:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Value, b: Value) -> Value:
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _node(ad @ bd, (a, b), backward)


def concat(values: Sequence[Value], axis: int = -1) -> Value:
    values = [as_value(v) for v in values]
    try:
        out = np.concatenate([v.data for v in values], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(values), backward)


def slice_cols(a: Value, start: int, stop: int) -> Value:
    """Columns ``start:stop`` of a rank-2 value."""
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _node(a.data[:, start:stop], (a,), backward)


def embedding(table: Value, index) -> Value:
    """Row lookup.  ``index`` is an int (returns a row) or an int array (rows)."""
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise IndexError("embedding index must be integral")
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise IndexError(f"embedding index out of range [0, {rows})")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _node(table.data[idx].copy(), (table,), backward)


# -------------------------------------------------------------------- softmax


def _log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(a: Value) -> Value:
    """Softmax over the last axis."""
    y = np.exp(_log_softmax(a.data))

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (a,), backward)


def log_softmax(a: Value) -> Value:
    ls = _log_softmax(a.data)
    p = np.exp(ls)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node(ls, (a,), backward)


def _check_targets(logits: np.ndarray, target) -> np.ndarray:
    t = np.asarray(target)
    if logits.ndim == 1:
        if t.ndim != 0:
            raise DimensionError("vector logits take a single integer target")
    elif t.shape != (logits.shape[0],):
        raise DimensionError(f"targets {t.shape} do not match logits {logits.shape}")
    n = logits.shape[-1]
    if t.size and (t.min() < 0 or t.max() >= n):
        raise IndexError(f"target out of range [0, {n})")
    return t.astype(np.int64)


def softmax_cross_entropy(logits: Value, target) -> Value:
    """``-log softmax(logits)[target]``; a scalar for vector logits, else one loss per row."""
    t = _check_targets(logits.data, target)
    ls = _log_softmax(logits.data)
    p = np.exp(ls)
    if ls.ndim == 1:
        loss = -ls[t]
    else:
        loss = -ls[np.arange(ls.shape[0]), t]

    def backward(g):
        d = p.copy()
        if d.ndim == 1:
            d[t] -= 1.0
            return (d * g,)
        d[np.arange(d.shape[0]), t] -= 1.0
        return (d * g[:, None],)

    return _node(loss, (logits,), backward)


def log_prob(logits: Value, target) -> Value:
    """Log-probability of ``target`` under ``softmax(logits)``."""
    return neg(softmax_cross_entropy(logits, target))


def softmax_entropy(logits: Value) -> Value:
    """Entropy (nats) of ``softmax(logits)`` over the last axis."""
    ls = _log_softmax(logits.data)
    p = np.exp(ls)
    plogp = np.where(p > 0, p * ls, 0.0)
    h = -plogp.sum(axis=-1)

    def backward(g):
        return (-np.expand_dims(g, -1) * (plogp + p * np.expand_dims(h, -1)),)

    return _node(h, (logits,), backward)


# ---------------------------------------------------------------- parameters


class Parameters:
    """Named trainable values plus the optimizer moments that go with them."""

    def __init__(self) -> None:
        self._values: dict[str, Value] = {}
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.steps = 0

    def add(self, name: str, data) -> Value:
        if name in self._values:
            raise ContractError(f"duplicate parameter name {name!r}")
        v = Value(np.array(data, dtype=np.float64), requires_grad=True)
        self._values[name] = v
        return v

    def init_uniform(self, name: str, shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> Value:
        bound = 1.0 / math.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def __getitem__(self, name: str) -> Value:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def items(self) -> Iterable[tuple[str, Value]]:
        return self._values.items()

    def values(self) -> Iterable[Value]:
        return self._values.values()

    def zero_grad(self) -> None:
        for v in self._values.values():
            v.grad = None

    def n_scalars(self) -> int:
        return int(np.sum([v.data.size for v in self._values.values()]))


def optimizer_step(
    params: Parameters,
    lr: float = 1e-3,
    kind: str = "adam",
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Apply one update from the populated gradients, then clear them.

    Parameters that took no part in the last graph (``grad is None``) are
    left untouched; it is an error if none of them has a gradient.
    """
    if not any(v.grad is not None for v in params.values()):
        raise ContractError("optimizer_step called with no populated gradients")
    if kind == "sgd":
        for v in params.values():
            if v.grad is not None:
                v.data -= lr * v.grad
    elif kind == "adam":
        params.steps += 1
        b1, b2 = betas
        c1 = 1.0 - b1**params.steps
        c2 = 1.0 - b2**params.steps
        for name, v in params.items():
            if v.grad is None:
                continue
            if name not in params.moments:
                params.moments[name] = (np.zeros_like(v.data), np.zeros_like(v.data))
            m, s = params.moments[name]
            m *= b1
            m += (1.0 - b1) * v.grad
            s *= b2
            s += (1.0 - b2) * (v.grad * v.grad)
            v.data -= (lr / c1) * m / (np.sqrt(s / c2) + eps)
    else:
        raise ValueError(f"unknown optimizer kind {kind!r}")
    params.zero_grad()


# ------------------------------------------------------------------- GRU


def init_gru(params: Parameters, prefix: str, input_size: int, hidden_size: int, rng) -> None:
    # gate blocks are packed as [update | reset | candidate]
    params.init_uniform(f"{prefix}.w_in", (input_size, 3 * hidden_size), hidden_size, rng)
    params.init_uniform(f"{prefix}.w_hid", (hidden_size, 3 * hidden_size), hidden_size, rng)
    params.init_uniform(f"{prefix}.b_in", (1, 3 * hidden_size), hidden_size, rng)
    params.init_uniform(f"{prefix}.b_hid", (1, 3 * hidden_size), hidden_size, rng)


def gru_cell(params: Parameters, prefix: str, x: Value, h: Value) -> Value:
    """One GRU step on a batch: ``x`` is (B, I), ``h`` is (B, H).

    z = sigmoid(x Wz + h Uz + b)          update gate
    r = sigmoid(x Wr + h Ur + b)          reset gate
    n = tanh(x Wn + (r * h) Un + b)       candidate
    h' = (1 - z) * n + z * h

    Implemented as a single graph node with a hand-written backward.
    """
    w_in, w_hid = params[f"{prefix}.w_in"], params[f"{prefix}.w_hid"]
    b_in, b_hid = params[f"{prefix}.b_in"], params[f"{prefix}.b_hid"]
    hs = w_hid.shape[0]
    if x.data.ndim != 2 or h.data.ndim != 2:
        raise DimensionError(f"gru_cell expects rank-2 input and state, got {x.shape}, {h.shape}")
    if x.shape[1] != w_in.shape[0] or h.shape[1] != hs or x.shape[0] != h.shape[0]:
        raise DimensionError(
            f"gru_cell shape mismatch: input {x.shape}, state {h.shape}, weights {w_in.shape}"
        )
    xd, hd, wi, wh = x.data, h.data, w_in.data, w_hid.data
    bias = b_in.data + b_hid.data
    gi = xd @ wi + bias
    zr = _sigmoid(gi[:, : 2 * hs] + hd @ wh[:, : 2 * hs])
    z, r = zr[:, :hs], zr[:, hs:]
    rh = r * hd
    n = np.tanh(gi[:, 2 * hs :] + rh @ wh[:, 2 * hs :])
    out = n + z * (hd - n)

    def backward(g):
        dn = g * (1.0 - z)
        da_n = dn * (1.0 - n * n)
        d_rh = da_n @ wh[:, 2 * hs :].T
        dz = g * (hd - n)
        dr = d_rh * hd
        da = np.empty((g.shape[0], 3 * hs))
        da[:, :hs] = dz * z * (1.0 - z)
        da[:, hs : 2 * hs] = dr * r * (1.0 - r)
        da[:, 2 * hs :] = da_n
        da_zr = da[:, : 2 * hs]
        dh = g * z + d_rh * r + da_zr @ wh[:, : 2 * hs].T if h.requires_grad else None
        dx = da @ wi.T if x.requires_grad else None
        dwh = None
        if w_hid.requires_grad:
            dwh = np.empty_like(wh)
            dwh[:, : 2 * hs] = hd.T @ da_zr
            dwh[:, 2 * hs :] = rh.T @ da_n
        dwi = xd.T @ da if w_in.requires_grad else None
        db = da.sum(axis=0, keepdims=True)
        return dx, dh, dwi, dwh, db, db

    return _node(out, (x, h, w_in, w_hid, b_in, b_hid), backward)


# ------------------------------------------------------------- gradient check


def grad_check(
    loss_builder: Callable[[], Value],
    params: Parameters | Sequence[Value],
    eps: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Worst relative error of analytic vs central-difference gradients.

    ``relerr = |a - n| / max(|a|, |n|, floor)`` over every coordinate of every
    parameter; ``floor`` keeps coordinates whose true gradient is zero from
    dividing roundoff by roundoff.
    """
    values = list(params.values()) if isinstance(params, Parameters) else list(params)
    for v in values:
        v.grad = None
    loss_builder().backward()
    analytic = [np.zeros_like(v.data) if v.grad is None else v.grad.copy() for v in values]
    for v in values:
        v.grad = None

    worst = 0.0
    with no_grad():
        for v, a in zip(values, analytic):
            flat = v.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = loss_builder().item()
                flat[i] = orig - eps
                fm = loss_builder().item()
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                an = a.reshape(-1)[i]
                err = abs(an - num) / max(abs(an), abs(num), floor)
                worst = max(worst, err)
    return worst


# ------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = "emcomm-parameters"
CHECKPOINT_VERSION = 1


def save_parameters(path, params: Parameters, tags: dict | None = None) -> None:
    """Text checkpoint: header, JSON tags, then ``name TAB shape TAB values``.

    Values are written with ``repr`` of Python floats, which round-trips
    float64 exactly.
    """
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", json.dumps(tags or {}, sort_keys=True)]
    for name, v in params.items():
        shape = "x".join(str(d) for d in v.shape) or "scalar"
        vals = " ".join(repr(x) for x in v.data.reshape(-1).tolist())
        lines.append(f"{name}\t{shape}\t{vals}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_parameters(path) -> tuple[Parameters, dict]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != CHECKPOINT_MAGIC:
            raise ContractError(f"{path}: not a parameter checkpoint")
        if int(header[1]) != CHECKPOINT_VERSION:
            raise ContractError(f"{path}: unsupported checkpoint version {header[1]}")
        tags = json.loads(fh.readline())
        params = Parameters()
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            name, shape_s, vals = line.split("\t")
            shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split("x"))
            data = np.array([float(x) for x in vals.split()], dtype=np.float64).reshape(shape)
            params.add(name, data)
    return params, tags
