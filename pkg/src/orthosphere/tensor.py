"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array plus an optional gradient. Applying an
operation records a backward closure and the parent nodes, so the
computation graph is the implicit DAG of ``_prev`` links; ``backward()`` on
a scalar root topologically sorts that DAG and sweeps it once in exact
reverse recording order, accumulating adjoints into every ``requires_grad``
node on a path to the root.

Computation runs in float32 by default (``DEFAULT_DTYPE``); passing a
float64 array keeps float64, which is how the gradient-check suite runs the
identical code paths in double precision.
"""

import numpy as np

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = True


class no_grad:
    """Context manager that suspends graph recording (e.g. teacher passes)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


def grad_enabled():
    return _GRAD_ENABLED


def _as_array(data, dtype=None):
    if isinstance(data, Tensor):
        raise TypeError("cannot build a Tensor from a Tensor; use .detach()")
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev = ()
        self._op = ""

    # -- construction of op results -------------------------------------

    @staticmethod
    def _result(data, parents, op):
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._prev = tuple(parents)
            out._op = op
        return out

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, copy=True)
        else:
            self.grad += g

    # -- basic properties -------------------------------------------------

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
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() needs a scalar tensor, got shape {self.shape}")

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # -- autodiff ----------------------------------------------------------

    def topo_order(self):
        """All graph nodes reachable from self, parents before children."""
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self):
        if self.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {self.shape}")
        order = self.topo_order()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic (numpy broadcasting rules) ----------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        out = Tensor._result(self.data + other.data, (self, other), "add")
        if out._prev:
            def _bw(g, a=self, b=other):
                if a.requires_grad:
                    a._accum(_unbroadcast(g, a.shape))
                if b.requires_grad:
                    b._accum(_unbroadcast(g, b.shape))
            out._backward = _bw
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = self._coerce(other)
        out = Tensor._result(self.data * other.data, (self, other), "mul")
        if out._prev:
            def _bw(g, a=self, b=other):
                if a.requires_grad:
                    a._accum(_unbroadcast(g * b.data, a.shape))
                if b.requires_grad:
                    b._accum(_unbroadcast(g * a.data, b.shape))
            out._backward = _bw
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = Tensor._result(-self.data, (self,), "neg")
        if out._prev:
            def _bw(g, a=self):
                a._accum(-g)
            out._backward = _bw
        return out

    def __sub__(self, other):
        other = self._coerce(other)
        out = Tensor._result(self.data - other.data, (self, other), "sub")
        if out._prev:
            def _bw(g, a=self, b=other):
                if a.requires_grad:
                    a._accum(_unbroadcast(g, a.shape))
                if b.requires_grad:
                    b._accum(_unbroadcast(-g, b.shape))
            out._backward = _bw
        return out

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __truediv__(self, other):
        other = self._coerce(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return self._coerce(other) * self ** -1.0

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = Tensor._result(self.data ** p, (self,), f"pow{p}")
        if out._prev:
            def _bw(g, a=self, p=p):
                a._accum(g * (p * a.data ** (p - 1)))
            out._backward = _bw
        return out

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")
        if out._prev:
            def _bw(g, a=self, axis=axis, keepdims=keepdims):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                a._accum(np.broadcast_to(g, a.shape))
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else np.prod(
            [self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- shape manipulation -------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor._result(self.data.reshape(shape), (self,), "reshape")
        if out._prev:
            def _bw(g, a=self):
                a._accum(g.reshape(a.shape))
            out._backward = _bw
        return out

    def transpose(self, axes=None):
        out = Tensor._result(self.data.transpose(axes), (self,), "transpose")
        if out._prev:
            inv = None if axes is None else np.argsort(axes)
            def _bw(g, a=self, inv=inv):
                a._accum(g.transpose(inv))
            out._backward = _bw
        return out

    @property
    def T(self):
        return self.transpose()

    # -- pointwise functions -------------------------------------------------

    def log(self):
        out = Tensor._result(np.log(self.data), (self,), "log")
        if out._prev:
            def _bw(g, a=self):
                a._accum(g / a.data)
            out._backward = _bw
        return out

    def exp(self):
        out = Tensor._result(np.exp(self.data), (self,), "exp")
        if out._prev:
            def _bw(g, out=out, a=self):
                a._accum(g * out.data)
            out._backward = _bw
        return out

    def sqrt(self):
        out = Tensor._result(np.sqrt(self.data), (self,), "sqrt")
        if out._prev:
            def _bw(g, out=out, a=self):
                a._accum(g * (0.5 / out.data))
            out._backward = _bw
        return out

    def arccos(self):
        """arccos with input clamped to [-1, 1]; derivative denominator floored
        at 1e-12 so coincident unit vectors stay finite."""
        x = np.clip(self.data, -1.0, 1.0)
        out = Tensor._result(np.arccos(x), (self,), "arccos")
        if out._prev:
            def _bw(g, a=self, x=x):
                denom = np.sqrt(np.maximum(1.0 - x * x, 1e-12))
                a._accum(g * (-1.0 / denom))
            out._backward = _bw
        return out

    def clamp_min(self, lo):
        """max(x, lo); gradient passes only where x > lo."""
        out = Tensor._result(np.maximum(self.data, lo), (self,), "clamp_min")
        if out._prev:
            mask = self.data > lo
            def _bw(g, a=self, mask=mask):
                a._accum(g * mask)
            out._backward = _bw
        return out

    # -- linear algebra --------------------------------------------------------

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=self.dtype))
        if self.ndim != other.ndim or self.ndim not in (2, 3):
            raise ValueError(
                f"matmul expects two 2-D or two 3-D operands, got {self.shape} @ {other.shape}"
            )
        out = Tensor._result(self.data @ other.data, (self, other), "matmul")
        if out._prev:
            def _bw(g, a=self, b=other):
                if a.requires_grad:
                    a._accum(g @ b.data.swapaxes(-1, -2))
                if b.requires_grad:
                    b._accum(a.data.swapaxes(-1, -2) @ g)
            out._backward = _bw
        return out

    # -- indexing ---------------------------------------------------------------

    def take_rows(self, idx):
        """Gather rows (axis 0); backward scatter-adds into the source."""
        idx = np.asarray(idx, dtype=np.int64)
        out = Tensor._result(self.data[idx], (self,), "take_rows")
        if out._prev:
            def _bw(g, a=self, idx=idx):
                buf = np.zeros_like(a.data)
                np.add.at(buf, idx, g)
                a._accum(buf)
            out._backward = _bw
        return out

    def select_columns(self, idx):
        """Per-row column pick: (N,K) x idx(N,) -> (N,)."""
        idx = np.asarray(idx, dtype=np.int64)
        rows = np.arange(self.shape[0])
        out = Tensor._result(self.data[rows, idx], (self,), "select_columns")
        if out._prev:
            def _bw(g, a=self, rows=rows, idx=idx):
                buf = np.zeros_like(a.data)
                np.add.at(buf, (rows, idx), g)
                a._accum(buf)
            out._backward = _bw
        return out


def grad_check(f, x, eps=1e-5):
    """Max relative error between reverse-mode and central-difference gradients.

    `f` maps a Tensor to a scalar Tensor and must be deterministic. The
    relative error per element is |a - n| / max(|a|, |n|, 1e-8).
    """
    x = Tensor(np.array(x.data if isinstance(x, Tensor) else x, copy=True), requires_grad=True)
    out = f(x)
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(x.data)).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(x.data)).data)
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
