"""Dense N-d tensors with reverse-mode automatic differentiation.

Activations use the N x C x H x W layout throughout. Training runs in
float32; gradient checking runs the same code in float64.
"""

import numpy as np

from .errors import NonFiniteError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A numpy array plus optional gradient storage and a backward closure.

    Every primitive op returns a Tensor whose `_backward` closure scatters
    the upstream gradient into its parents; calling `backward()` on a
    scalar replays the recorded graph in reverse topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, parents=(), backward_fn=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _scalar_err()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        """Add an upstream gradient contribution (fan-out sums additively)."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def in_graph(self):
        """True when a gradient flowing here matters (leaf param or interior node)."""
        return self.requires_grad or bool(self._parents)

    def assert_finite(self, what="tensor"):
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("%s contains NaN/Inf values" % what)

    def backward(self):
        """Reverse-mode gradient propagation from a scalar output."""
        if self.size != 1:
            raise ShapeError("backward requires a scalar output, got shape %s" % (self.shape,))
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Small generic ops, enough for oracles and tests; heavy kernels live in ops.py.

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src_shape = self.data.shape
        out = Tensor(self.data.reshape(shape), parents=(self,))
        out.requires_grad = self.in_graph()

        def _bw(g):
            if self.in_graph():
                self.accumulate_grad(g.reshape(src_shape))

        out._backward = _bw
        return out

    def sum(self):
        out = Tensor(np.asarray(self.data.sum(), dtype=self.dtype), parents=(self,))
        out.requires_grad = self.in_graph()

        def _bw(g):
            if self.in_graph():
                self.accumulate_grad(np.broadcast_to(g, self.data.shape).astype(self.dtype))

        out._backward = _bw
        return out

    def __add__(self, other):
        other = _lift(other, self.dtype)
        if other.shape != self.shape:
            raise ShapeError("add shape mismatch: %s vs %s" % (self.shape, other.shape))
        out = Tensor(self.data + other.data, parents=(self, other))
        out.requires_grad = self.in_graph() or other.in_graph()

        def _bw(g):
            if self.in_graph():
                self.accumulate_grad(g)
            if other.in_graph():
                other.accumulate_grad(g)

        out._backward = _bw
        return out

    def __mul__(self, other):
        if isinstance(other, Tensor):
            if other.shape != self.shape:
                raise ShapeError("mul shape mismatch: %s vs %s" % (self.shape, other.shape))
            out = Tensor(self.data * other.data, parents=(self, other))
            out.requires_grad = self.in_graph() or other.in_graph()
            a, b = self, other

            def _bw(g):
                if a.in_graph():
                    a.accumulate_grad(g * b.data)
                if b.in_graph():
                    b.accumulate_grad(g * a.data)

            out._backward = _bw
            return out
        c = self.dtype.type(other)
        out = Tensor(self.data * c, parents=(self,))
        out.requires_grad = self.in_graph()

        def _bw(g):
            if self.in_graph():
                self.accumulate_grad(g * c)

        out._backward = _bw
        return out

    __rmul__ = __mul__

    def __repr__(self):
        return "Tensor(shape=%s, dtype=%s, requires_grad=%s)" % (
            self.shape, self.dtype, self.requires_grad)


def _lift(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _scalar_err():
    raise ShapeError("item() requires a scalar tensor")


def _toposort(root):
    """Iterative DFS topological order; each recorded op visited exactly once."""
    order = []
    seen = set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order
