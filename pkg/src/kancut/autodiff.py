"""Dense float64 tensors with reverse-mode autodiff on a linear tape.

One module-level tape records operations in execution order, which is a
valid topological order by construction; ``backward`` sweeps it once in
reverse. Everything is float64: the whole package is verified against
central finite differences, and desk-scale sizes make speed secondary to
that headroom.

Broadcasting follows trailing-dimension alignment (the numpy rule) and
nothing more exotic; gradients of broadcast operands are summed back over
the broadcast axes.
"""

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, DomainError, ParameterError


class _Node:
    __slots__ = ("op", "inputs", "backward", "leaf")

    def __init__(self, op, inputs, backward, leaf=None):
        self.op = op
        self.inputs = inputs
        self.backward = backward
        self.leaf = leaf


class Tape:
    """Ordered record of operations; inputs of a node always precede it."""

    def __init__(self):
        self.nodes = []
        self.epoch = 0
        self.enabled = True

    def reset(self):
        """Drop all recorded nodes; previously built tensors become leaves."""
        self.nodes.clear()
        self.epoch += 1


_TAPE = Tape()


def get_tape():
    return _TAPE


def reset_tape():
    _TAPE.reset()


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        self._prior = _TAPE.enabled
        _TAPE.enabled = False
        return self

    def __exit__(self, *exc):
        _TAPE.enabled = self._prior
        return False


class Tensor:
    """N-dimensional float64 array, optionally participating in the tape."""

    __slots__ = ("data", "grad", "grad_enabled", "_nid", "_epoch")

    def __init__(self, data, grad_enabled=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.grad_enabled = bool(grad_enabled)
        self._nid = None
        self._epoch = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad_enabled={self.grad_enabled})"

    # operator sugar; everything funnels into the functional ops below
    def __add__(self, other):
        return elementwise_binary(self, _wrap(other), "add")

    def __radd__(self, other):
        return elementwise_binary(_wrap(other), self, "add")

    def __sub__(self, other):
        return elementwise_binary(self, _wrap(other), "sub")

    def __rsub__(self, other):
        return elementwise_binary(_wrap(other), self, "sub")

    def __mul__(self, other):
        return elementwise_binary(self, _wrap(other), "mul")

    def __rmul__(self, other):
        return elementwise_binary(_wrap(other), self, "mul")

    def __truediv__(self, other):
        return elementwise_binary(self, _wrap(other), "div")

    def __rtruediv__(self, other):
        return elementwise_binary(_wrap(other), self, "div")

    def __neg__(self):
        return elementwise_unary(self, "neg")

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None, keepdims=False):
        return reduce(self, axes, "sum", keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce(self, axes, "mean", keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


def param(data):
    """Leaf tensor that accumulates gradients."""
    return Tensor(data, grad_enabled=True)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _leaf_id(t):
    if t._epoch == _TAPE.epoch and t._nid is not None:
        return t._nid
    nid = len(_TAPE.nodes)
    _TAPE.nodes.append(_Node("leaf", (), None, t))
    t._nid = nid
    t._epoch = _TAPE.epoch
    return nid


def _record(op, parents, out_data, backward):
    """Wrap op output; register on the tape if any parent participates."""
    out = Tensor(out_data)
    if not (_TAPE.enabled and any(p.grad_enabled for p in parents)):
        return out
    ids = tuple(_leaf_id(p) if p.grad_enabled else -1 for p in parents)
    if op in _CORRUPT_OPS:
        clean = backward
        backward = lambda g: tuple(None if pg is None else 1.5 * pg for pg in clean(g))
    nid = len(_TAPE.nodes)
    _TAPE.nodes.append(_Node(op, ids, backward))
    out._nid = nid
    out._epoch = _TAPE.epoch
    out.grad_enabled = True
    return out


def record_op(name, parents, out_data, backward_fn):
    """Hook for modules that define their own differentiable primitives."""
    return _record(name, parents, out_data, backward_fn)


# Test hook: ops listed here get a deliberately wrong backward (x1.5), so the
# gradient-check harness can prove it catches bad derivatives.
_CORRUPT_OPS = set()


def set_backward_corruption(ops):
    _CORRUPT_OPS.clear()
    _CORRUPT_OPS.update(ops)


def backward(root):
    """Accumulate dRoot/dLeaf into every reachable grad-enabled leaf.

    Repeated calls without resetting leaf grads accumulate.
    """
    if not isinstance(root, Tensor):
        raise ContractError("backward root must be a Tensor")
    if root.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.data.shape}")
    if not root.grad_enabled or root._epoch != _TAPE.epoch or root._nid is None:
        raise ContractError("backward root is not recorded on the active tape")
    grads = [None] * len(_TAPE.nodes)
    grads[root._nid] = np.ones_like(root.data)
    for nid in range(root._nid, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        node = _TAPE.nodes[nid]
        if node.op == "leaf":
            t = node.leaf
            t.grad = g.copy() if t.grad is None else t.grad + g
        else:
            for pid, pg in zip(node.inputs, node.backward(g)):
                if pid < 0 or pg is None:
                    continue
                grads[pid] = pg if grads[pid] is None else grads[pid] + pg
        grads[nid] = None


def zero_grads(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return g @ bd.T, ad.T @ g

    return _record("matmul", (a, b), ad @ bd, back)


_UNARY = {
    "tanh": (np.tanh, lambda x, y, g: g * (1.0 - y * y)),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x, y, g: g * (x > 0.0)),
    "exp": (np.exp, lambda x, y, g: g * y),
    "log": (np.log, lambda x, y, g: g / x),
    "neg": (np.negative, lambda x, y, g: -g),
    "square": (np.square, lambda x, y, g: g * 2.0 * x),
}


def elementwise_unary(x, kind):
    if kind == "silu":
        s = 1.0 / (1.0 + np.exp(-x.data))
        y = x.data * s

        def back(g):
            return (g * (s * (1.0 + x.data * (1.0 - s))),)

        return _record("silu", (x,), y, back)
    if kind not in _UNARY:
        raise ParameterError(f"unknown unary op {kind!r}")
    if kind == "log" and np.any(x.data <= 0.0):
        raise DomainError("log requires strictly positive entries")
    fwd, dfn = _UNARY[kind]
    xd = x.data
    y = fwd(xd)

    def back(g):
        return (dfn(xd, y, g),)

    return _record(kind, (x,), y, back)


def tanh(x):
    return elementwise_unary(x, "tanh")


def silu(x):
    return elementwise_unary(x, "silu")


def relu(x):
    return elementwise_unary(x, "relu")


def exp(x):
    return elementwise_unary(x, "exp")


def log(x):
    return elementwise_unary(x, "log")


def square(x):
    return elementwise_unary(x, "square")


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast to reach g.shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def elementwise_binary(a, b, kind):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from e
    ad, bd = a.data, b.data
    if kind == "add":
        y = ad + bd

        def back(g):
            return _unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)
    elif kind == "sub":
        y = ad - bd

        def back(g):
            return _unbroadcast(g, ad.shape), _unbroadcast(-g, bd.shape)
    elif kind == "mul":
        y = ad * bd

        def back(g):
            return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)
    elif kind == "div":
        if np.any(bd == 0.0):
            raise DomainError("division by exact zero")
        y = ad / bd

        def back(g):
            return (_unbroadcast(g / bd, ad.shape),
                    _unbroadcast(-g * ad / (bd * bd), bd.shape))
    else:
        raise ParameterError(f"unknown binary op {kind!r}")
    return _record(kind, (a, b), y, back)


def concat_last(a, b):
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_last leading dims disagree: {a.shape} vs {b.shape}")
    p = a.shape[-1]

    def back(g):
        return g[..., :p], g[..., p:]

    return _record("concat_last", (a, b), np.concatenate([a.data, b.data], axis=-1), back)


def reduce(x, axes=None, kind="sum", keepdims=False):
    if kind not in ("sum", "mean"):
        raise ParameterError(f"unknown reduction {kind!r}")
    if axes is None:
        ax = tuple(range(x.ndim))
    else:
        ax = (axes,) if isinstance(axes, int) else tuple(axes)
        ax = tuple(a + x.ndim if a < 0 else a for a in ax)
        if any(a < 0 or a >= x.ndim for a in ax):
            raise DimensionError(f"reduce axis out of range for shape {x.shape}: {axes}")
    n = int(np.prod([x.shape[a] for a in ax])) if ax else 1
    fn = np.sum if kind == "sum" else np.mean
    y = fn(x.data, axis=ax if ax else None, keepdims=keepdims)
    xshape = x.shape

    def back(g):
        if not keepdims:
            expand = list(xshape)
            for a in ax:
                expand[a] = 1
            g = g.reshape(expand)
        g = np.broadcast_to(g, xshape)
        return (g / n if kind == "mean" else g.copy(),)

    return _record(kind, (x,), y, back)


def l2_normalize_rows(x, eps=1e-12):
    if x.ndim != 2:
        raise DimensionError(f"l2_normalize_rows needs a 2-D input, got {x.shape}")
    xd = x.data
    norms = np.sqrt(np.sum(xd * xd, axis=1))
    denom = np.maximum(norms, eps)
    y = xd / denom[:, None]

    def back(g):
        gy = np.sum(g * y, axis=1, keepdims=True)
        live = (norms > eps)[:, None]
        return (np.where(live, (g - y * gy) / denom[:, None], g / eps),)

    return _record("l2norm", (x,), y, back)


_REFLECT_CACHE = {}


def _reflect_fold_index(n, c, h, w, pad):
    """Combined scatter index for the adjoint of reflect padding."""
    key = (n, c, h, w, pad)
    cached = _REFLECT_CACHE.get(key)
    if cached is None:
        idx = np.arange(h * w, dtype=np.intp).reshape(h, w)
        idx = np.pad(idx, pad, mode="reflect").ravel()
        base = np.arange(n * c, dtype=np.intp)
        cached = (base[:, None] * (h * w) + idx[None, :]).ravel()
        _REFLECT_CACHE[key] = cached
    return cached


def conv2d(x, kernel, bias=None, stride=1, pad=0, pad_mode="zero"):
    """Cross-correlation with optional bias. pad_mode is 'zero' or 'reflect'."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError("conv2d expects x[n,c,h,w] and kernel[o,c,kh,kw]")
    n, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if ck != c:
        raise DimensionError(f"conv2d channels disagree: input {c}, kernel {ck}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ParameterError(f"pad must be >= 0, got {pad}")
    if pad_mode not in ("zero", "reflect"):
        raise ParameterError(f"pad_mode must be 'zero' or 'reflect', got {pad_mode!r}")
    if pad_mode == "reflect" and pad >= min(h, w):
        raise ParameterError("reflect pad must be smaller than the spatial extent")
    hp, wp = h + 2 * pad, w + 2 * pad
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"bias must have shape ({o},), got {bias.shape}")

    if pad == 0:
        xp = x.data
    elif pad_mode == "zero":
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
    y = kernels.conv2d_forward(xp, kernel.data, stride)
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    kd = kernel.data

    def back(g):
        gxp = kernels.conv2d_grad_input(g, kd, stride, hp, wp)
        if pad == 0:
            gx = gxp
        elif pad_mode == "zero":
            gx = gxp[:, :, pad : pad + h, pad : pad + w]
        else:
            comb = _reflect_fold_index(n, c, h, w, pad)
            gx = np.bincount(comb, weights=gxp.ravel(), minlength=n * c * h * w)
            gx = gx.reshape(n, c, h, w)
        gk = kernels.conv2d_grad_kernel(g, xp, stride, kh, kw)
        gb = None if bias is None else g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    if bias is None:
        return _record("conv2d", parents, y, lambda g: back(g)[:2])
    return _record("conv2d", parents, y, back)


def instance_norm2d(x, scale, shift, eps=1e-5):
    """Per-sample, per-channel standardization over (h, w), then affine."""
    if x.ndim != 4:
        raise DimensionError(f"instance_norm2d expects [n,c,h,w], got {x.shape}")
    n, c, h, w = x.shape
    if h * w < 2:
        raise DimensionError("instance_norm2d needs at least 2 spatial elements")
    if scale.shape != (c,) or shift.shape != (c,):
        raise DimensionError(f"scale/shift must have shape ({c},)")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = np.mean((x.data - mu) ** 2, axis=(2, 3), keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xn = (x.data - mu) * istd
    y = xn * scale.data[None, :, None, None] + shift.data[None, :, None, None]
    m = h * w

    def back(g):
        gxn = g * scale.data[None, :, None, None]
        mean_gxn = gxn.mean(axis=(2, 3), keepdims=True)
        mean_gxn_xn = (gxn * xn).mean(axis=(2, 3), keepdims=True)
        gx = istd * (gxn - mean_gxn - xn * mean_gxn_xn)
        gscale = (g * xn).sum(axis=(0, 2, 3))
        gshift = g.sum(axis=(0, 2, 3))
        return gx, gscale, gshift

    return _record("instance_norm2d", (x, scale, shift), y, back)


def upsample_nearest(x, factor):
    if not isinstance(factor, int) or factor < 1:
        raise ParameterError(f"upsample factor must be an int >= 1, got {factor}")
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest expects [n,c,h,w], got {x.shape}")
    n, c, h, w = x.shape
    y = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def back(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _record("upsample_nearest", (x,), y, back)


def reshape(x, shape):
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    old = x.shape

    def back(g):
        return (g.reshape(old),)

    return _record("reshape", (x,), x.data.reshape(shape), back)


def transpose(x, axes=None):
    ax = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(ax))

    def back(g):
        return (g.transpose(inv),)

    return _record("transpose", (x,), x.data.transpose(ax), back)


def gather_rows(x, ids):
    if x.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-D input, got {x.shape}")
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1:
        raise ParameterError("ids must be a 1-D index array")
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[0]):
        raise ParameterError(f"row id out of range for {x.shape[0]} rows")
    nrows = x.shape[0]

    def back(g):
        gx = np.zeros((nrows, x.shape[1]))
        np.add.at(gx, ids, g)
        return (gx,)

    return _record("gather_rows", (x,), x.data[ids], back)


def linear(x, weight, bias=None):
    """x[batch, n_in] @ weight[n_out, n_in]^T (+ bias) — row-major convention."""
    y = matmul(x, transpose(weight))
    if bias is not None:
        y = y + bias
    return y


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamState:
    """Per-parameter first/second moments plus step count."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state):
    """Standard Adam update with bias correction; mutates params in place.

    ``grads`` may be None to use each parameter's accumulated ``.grad``;
    missing gradients count as zero (which leaves the parameter unchanged).
    """
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise DimensionError("params, grads and state must have matching lengths")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {p.data.shape}")
        m, v = state.m[i], state.v[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
