"""Small dense tensor type with tape-based reverse-mode autodiff.

Only the operators the spatial-temporal cells need are provided. Every
operation builds a node whose id is drawn from a global counter, so a
reverse sort by id is a valid reverse topological order of the tape.
"""

from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

__all__ = [
    "DimensionError",
    "ContractError",
    "NonFiniteError",
    "Tensor",
    "ParamStore",
    "tensor",
    "no_grad",
    "set_default_dtype",
    "get_default_dtype",
    "matmul",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "relu",
    "elu_plus_one",
    "absolute",
    "softmax_rows",
    "concat_last",
    "split_last",
    "reshape",
    "transpose",
    "sum_all",
    "sum_axis",
    "mean_all",
    "take_last_step",
    "backward",
    "check_finite",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RuntimeError):
    """A precondition of the autodiff machinery was violated."""


class NonFiniteError(FloatingPointError):
    """A tensor contains NaN or Inf."""


_ids = itertools.count()
_state = threading.local()
_DEFAULT_DTYPE = [np.float64]


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE[0] = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE[0]


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation mode)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """Immutable n-d array plus the tape bookkeeping needed for backward."""

    __slots__ = ("data", "grad", "requires_grad", "op", "id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or get_default_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.id = next(_ids)
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

    def backward(self):
        backward(self)

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __truediv__ = lambda self, other: div(self, other)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, op: str, parents: tuple, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.id = next(_ids)
    needs = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    # never update in place: an upstream g may be shared between parents
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# linear algebra


def _rows_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # numpy's stacked loop beats one folded GEMM once both sides are wide
    # enough; for very thin weights the folded call wins
    k, n = w.shape
    if k >= 8 and n >= 8:
        return np.matmul(x, w)
    return (x.reshape(-1, k) @ w).reshape(x.shape[:-1] + (n,))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's stacking rules.

    The two layouts used by the model get dedicated gradient paths: a batch
    of feature rows times a weight matrix (``X @ W``) and a node-mixing
    matrix applied to every time slice (``A @ X``).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # X @ W: fold the stack into rows so BLAS sees one matrix
        k, n = b.shape
        out = _rows_matmul(a.data, b.data)

        def _bw(g):
            if a.requires_grad:
                _accumulate(a, _rows_matmul(g, np.ascontiguousarray(b.data.T)))
            if b.requires_grad:
                _accumulate(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))

        return _node(out, "matmul", (a, b), _bw)

    if a.ndim == 2 and b.ndim > 2:
        # A @ X applied to every stacked slice
        out = np.matmul(a.data, b.data)
        stack_axes = tuple(range(b.ndim - 2)) + (b.ndim - 1,)

        def _bw(g):
            if a.requires_grad:
                _accumulate(a, np.tensordot(g, b.data, axes=(stack_axes, stack_axes)))
            if b.requires_grad:
                _accumulate(b, np.matmul(a.data.T, g))

        return _node(out, "matmul", (a, b), _bw)

    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: cannot stack {a.shape} and {b.shape}") from None

    def _bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.shape))

    return _node(out, "matmul", (a, b), _bw)


# --------------------------------------------------------------------------
# pointwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    out = a.data + b.data

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(out, "add", (a, b), _bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(out, "sub", (a, b), _bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    out = a.data * b.data

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(out, "mul", (a, b), _bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * out / b.data, b.shape))

    return _node(out, "div", (a, b), _bw)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = np.maximum(a.data, 0.0)

    def _bw(g):
        _accumulate(a, g * mask)

    return _node(out, "relu", (a,), _bw)


def elu_plus_one(a) -> Tensor:
    """Positive feature map: ``x + 1`` for ``x >= 0``, ``exp(x)`` otherwise."""
    a = _as_tensor(a)
    ex = np.exp(np.minimum(a.data, 0.0))
    out = ex + np.maximum(a.data, 0.0)

    def _bw(g):
        # derivative is exp(x) below zero and exactly 1 above, i.e. ex
        _accumulate(a, g * ex)

    return _node(out, "elu_plus_one", (a,), _bw)


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    sign = np.sign(a.data)

    def _bw(g):
        _accumulate(a, g * sign)

    return _node(np.abs(a.data), "abs", (a,), _bw)


_UNARY = {"relu": relu, "elu_plus_one": elu_plus_one}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name to one of the pointwise operators."""
    if op in _UNARY:
        if b is not None:
            raise ContractError(f"{op} is unary")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


# --------------------------------------------------------------------------
# reductions and shape plumbing


def softmax_rows(a) -> Tensor:
    """Softmax along the last axis with row-max subtraction."""
    a = _as_tensor(a)
    if a.ndim < 1 or a.shape[-1] < 1:
        raise DimensionError(f"softmax_rows needs a non-empty last axis, got {a.shape}")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def _bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        _accumulate(a, out * (g - dot))

    return _node(out, "softmax_rows", (a,), _bw)


def concat_last(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_last: leading shapes differ, {a.shape} vs {b.shape}")
    ca = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)

    def _bw(g):
        _accumulate(a, g[..., :ca])
        _accumulate(b, g[..., ca:])

    return _node(out, "concat_last", (a, b), _bw)


def _slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    out = a.data[..., start:stop]

    def _bw(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        _accumulate(a, full)

    return _node(out, "slice_last", (a,), _bw)


def split_last(a, first: int) -> tuple:
    """Inverse of ``concat_last``: split the last axis at ``first``."""
    a = _as_tensor(a)
    if not 0 <= first <= a.shape[-1]:
        raise DimensionError(f"split point {first} outside last axis of {a.shape}")
    return _slice_last(a, 0, first), _slice_last(a, first, a.shape[-1])


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from None

    def _bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _node(out, "reshape", (a,), _bw)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def _bw(g):
        _accumulate(a, g.transpose(inv))

    return _node(out, "transpose", (a,), _bw)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)

    def _bw(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _node(np.asarray(a.data.sum()), "sum", (a,), _bw)


def sum_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _node(out, "sum_axis", (a,), _bw)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.size

    def _bw(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape))

    return _node(np.asarray(a.data.mean()), "mean", (a,), _bw)


def take_last_step(a, axis: int, keepdims: bool = False) -> Tensor:
    """Select index -1 along ``axis``; the axis is dropped unless ``keepdims``."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(-1, None) if keepdims else -1
    idx = tuple(idx)
    out = np.ascontiguousarray(a.data[idx])

    def _bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accumulate(a, full)

    return _node(out, "take_last", (a,), _bw)


# --------------------------------------------------------------------------
# backward pass


def _tape_nodes(root: Tensor) -> list:
    seen = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.id in seen:
            continue
        seen[t.id] = t
        stack.extend(p for p in t._parents if p.requires_grad)
    return [seen[k] for k in sorted(seen, reverse=True)]


def backward(loss: Tensor, store: "ParamStore | None" = None) -> list:
    """Reverse sweep from a scalar ``loss``.

    Gradients accumulate into ``.grad`` of every leaf that requires them;
    ``store`` is accepted so callers can express which parameters they care
    about, the store's slots alias the leaves. The tape behind ``loss`` is
    released afterwards. Returns the visited node ids in visit order.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        # constant loss: every gradient stays zero
        return []
    if loss.op != "leaf" and loss._backward is None:
        raise ContractError("tape already consumed")
    order = _tape_nodes(loss)
    loss.grad = np.ones_like(loss.data)
    visited = []
    for node in order:
        visited.append(node.id)
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if node.op != "leaf":
            node._backward = None
            node._parents = ()
            node.grad = None
    return visited


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"{what} contains non-finite values")
    return t


# --------------------------------------------------------------------------
# parameters and optimizer state


class ParamStore:
    """Named leaf tensors plus Adam moment accumulators."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name}")
        value = np.asarray(value)
        dtype = value.dtype if value.dtype.kind == "f" else None
        t = Tensor(value, requires_grad=True, dtype=dtype)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def grad(self, name: str) -> np.ndarray:
        t = self.params[name]
        return t.grad if t.grad is not None else np.zeros_like(t.data)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_dict(self) -> dict:
        return {k: t.data.copy() for k, t in self.params.items()}

    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> None:
        self.step_count += 1
        c1 = 1.0 - beta1 ** self.step_count
        c2 = 1.0 - beta2 ** self.step_count
        for name, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad
            m = self.m[name]
            v = self.v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            if lr == 0.0:
                continue
            t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
