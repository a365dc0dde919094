"""Dense float64 tensors with reverse-mode automatic differentiation.

Every forward operation records its inputs and a vector-Jacobian product
on a per-expression tape; :func:`backward` walks the tape once in reverse
topological order and accumulates gradients additively into ``.grad``.
The tape is rebuilt on every forward pass and garbage-collected with the
tensors that reference it.

Conventions used throughout the library:

* arrays are C-contiguous float64; operations never mutate their inputs;
* binary ops require equal shapes, or equal rank with broadcasting
  restricted to axes of length 1;
* batches are laid out along the *last* axis, so a batch of B feature
  vectors of dimension d is a ``[d, B]`` tensor and weight matrices apply
  from the left.
"""

import itertools
from contextlib import contextmanager

import numpy as np

from . import backend


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Operand values are outside an operation's domain (e.g. log of <= 0)."""


_node_ids = itertools.count(1)
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (pure evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense n-dimensional float64 array, optionally on the gradient tape.

    ``requires_grad`` marks differentiable leaves (parameters) and any
    value computed from one; plain data tensors carry no node id and are
    skipped during backward traversal.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids) if self.requires_grad else None
        self._parents = ()
        self._vjp = None

    @classmethod
    def _from_op(cls, data, parents, vjp):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.node_id = next(_node_ids)
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out.requires_grad = False
            out.node_id = None
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def backward(self) -> None:
        backward(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    # operator sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data) -> Tensor:
    """A differentiable leaf tensor."""
    return Tensor(data, requires_grad=True)


def _as_tensor(x, like: Tensor) -> Tensor:
    """Promote a Python scalar to a constant tensor broadcastable to `like`."""
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        return Tensor(np.full((1,) * like.data.ndim, float(x)))
    return Tensor(x)


def _check_broadcast(sa, sb):
    if sa == sb:
        return
    if len(sa) != len(sb) or any(
        m != n and m != 1 and n != 1 for m, n in zip(sa, sb)
    ):
        raise ShapeError(f"cannot broadcast shapes {list(sa)} and {list(sb)}")


# -- binary elementwise --------------------------------------------------

def _binary(a, b, fwd, vjp_factory):
    if not isinstance(a, Tensor):
        a = _as_tensor(a, b)
    b = _as_tensor(b, a)
    _check_broadcast(a.shape, b.shape)
    data = fwd(a.data, b.data)
    return Tensor._from_op(data, (a, b), vjp_factory(a, b))


def add(a, b) -> Tensor:
    def vjp(a, b):
        def run(g):
            return (backend.K.sum_to(g, a.shape), backend.K.sum_to(g, b.shape))
        return run
    return _binary(a, b, lambda x, y: backend.K.add(x, y), vjp)


def sub(a, b) -> Tensor:
    def vjp(a, b):
        def run(g):
            return (backend.K.sum_to(g, a.shape),
                    backend.K.neg(backend.K.sum_to(g, b.shape)))
        return run
    return _binary(a, b, lambda x, y: backend.K.sub(x, y), vjp)


def mul(a, b) -> Tensor:
    def vjp(a, b):
        def run(g):
            ga = backend.K.sum_to(backend.K.mul(g, b.data), a.shape)
            gb = backend.K.sum_to(backend.K.mul(g, a.data), b.shape)
            return (ga, gb)
        return run
    return _binary(a, b, lambda x, y: backend.K.mul(x, y), vjp)


# -- unary elementwise ----------------------------------------------------

def _unary(t: Tensor, fwd, vjp_factory) -> Tensor:
    data = fwd(t.data)
    return Tensor._from_op(data, (t,), vjp_factory(t, data))


def tanh(t: Tensor) -> Tensor:
    return _unary(t, backend.K.tanh,
                  lambda t, y: lambda g: (backend.K.tanh_grad(y, g),))


def sigmoid(t: Tensor) -> Tensor:
    return _unary(t, backend.K.sigmoid,
                  lambda t, y: lambda g: (backend.K.sigmoid_grad(y, g),))


def softplus(t: Tensor) -> Tensor:
    return _unary(t, backend.K.softplus,
                  lambda t, y: lambda g: (backend.K.softplus_grad(t.data, g),))


def exp(t: Tensor) -> Tensor:
    return _unary(t, backend.K.exp,
                  lambda t, y: lambda g: (backend.K.exp_grad(y, g),))


def log(t: Tensor) -> Tensor:
    if np.any(t.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    return _unary(t, backend.K.log,
                  lambda t, y: lambda g: (backend.K.log_grad(t.data, g),))


def square(t: Tensor) -> Tensor:
    return _unary(t, backend.K.square,
                  lambda t, y: lambda g: (backend.K.square_grad(t.data, g),))


def neg(t: Tensor) -> Tensor:
    return _unary(t, backend.K.neg,
                  lambda t, y: lambda g: (backend.K.neg(g),))


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul,
    "tanh": tanh, "sigmoid": sigmoid, "softplus": softplus,
    "exp": exp, "log": log, "square": square,
}


def elementwise(op_tag: str, *operands) -> Tensor:
    """Dispatch an elementwise op by tag (see _ELEMENTWISE for the set)."""
    try:
        fn = _ELEMENTWISE[op_tag]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_tag!r}") from None
    return fn(*operands)


# -- structural ops --------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of rank-2 tensors; goes straight to BLAS."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul requires rank-2 operands, got {list(a.shape)} and {list(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {list(a.shape)} vs {list(b.shape)}")
    data = a.data @ b.data

    def vjp(g):
        return (g @ b.data.T, a.data.T @ g)

    return Tensor._from_op(data, (a, b), vjp)


def concat(parts, axis: int = 0) -> Tensor:
    """Concatenate tensors along `axis`; all other axes must agree."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of an empty list")
    rank = parts[0].data.ndim
    if axis >= rank or axis < 0:
        raise ShapeError(f"concat axis {axis} out of range for rank {rank}")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.data.ndim != rank or any(
            i != axis and p.shape[i] != ref[i] for i in range(rank)
        ):
            raise ShapeError(
                f"concat shapes disagree off axis {axis}: "
                f"{[list(p.shape) for p in parts]}")
    data = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.shape[axis] for p in parts])

    def vjp(g):
        sl = [slice(None)] * rank
        outs = []
        for k in range(len(parts)):
            sl[axis] = slice(offsets[k], offsets[k + 1])
            outs.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(outs)

    return Tensor._from_op(data, parts, vjp)


def _reduce(t: Tensor, axis, keepdims: bool, is_mean: bool) -> Tensor:
    if axis is not None and (axis < 0 or axis >= t.data.ndim):
        raise ShapeError(f"reduce axis {axis} out of range for shape {list(t.shape)}")
    if axis is None:
        count = t.data.size
        data = np.sum(t.data)
        if keepdims:
            data = data.reshape((1,) * t.data.ndim)
    else:
        count = t.shape[axis]
        data = np.sum(t.data, axis=axis, keepdims=keepdims)
    if is_mean:
        data = data * (1.0 / count)
    shape = t.shape
    rank = t.data.ndim

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None and not keepdims:
            g = g.reshape((1,) * rank)
        out = np.empty(shape)
        out[...] = g if not is_mean else g * (1.0 / count)
        return (out,)

    return Tensor._from_op(np.asarray(data), (t,), vjp)


def reduce_sum(t: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return _reduce(t, axis, keepdims, is_mean=False)


def reduce_mean(t: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return _reduce(t, axis, keepdims, is_mean=True)


def reduce(op_tag: str, t: Tensor, axis: int | None = None,
           keepdims: bool = False) -> Tensor:
    """Dispatch a reduction by tag ('sum' or 'mean')."""
    if op_tag == "sum":
        return reduce_sum(t, axis, keepdims)
    if op_tag == "mean":
        return reduce_mean(t, axis, keepdims)
    raise ValueError(f"unknown reduction {op_tag!r}")


# -- backward pass ---------------------------------------------------------

def _topo_order(root: Tensor):
    """Reverse topological order (root first) over the grad subgraph."""
    seen = {id(root)}
    post = []
    stack = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        pushed = False
        for p in it:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                pushed = True
                break
        if not pushed:
            post.append(node)
            stack.pop()
    post.reverse()
    return post


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every differentiable tensor reachable from `loss`.

    Gradients accumulate additively: calling backward twice without
    clearing doubles them, and a tensor consumed by k ops receives the
    sum of the k contributions.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    local = {id(loss): np.ones_like(loss.data)}
    for node in order:
        g = local.pop(id(node))
        node.grad = g if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        contribs = node._vjp(g)
        for p, c in zip(node._parents, contribs):
            if not p.requires_grad or c is None:
                continue
            key = id(p)
            if key in local:
                local[key] += c
            else:
                # own the buffer: contributions may be views
                local[key] = np.array(c) if not c.flags.owndata else c
