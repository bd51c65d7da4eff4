"""Dense arrays with reverse-mode automatic differentiation.

A Tensor wraps one numpy array. Every operation returns a fresh Tensor
that remembers its parents and a closure computing parent gradients
from its own, so calling backward() on a scalar loss fills in .grad on
every reachable tensor that has requires_grad set. The graph is built
dynamically per call and garbage-collected with the tensors, which
keeps memory flat across training steps.

Arithmetic is float64 unless the caller feeds float32 arrays through,
in which case results stay float32. Shapes are checked strictly; there
is no implicit broadcasting apart from add_bias, which is explicit
about what it broadcasts over.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import DataError, NumericsError, ShapeError, UsageError

__all__ = [
    "Tensor",
    "make_op",
    "set_finite_checks",
    "backward",
    "add",
    "add_bias",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "relu",
    "sigmoid",
    "tensor_sum",
    "tensor_mean",
    "conv2d",
    "maxpool2",
    "softmax_cross_entropy",
]

_ids = itertools.count()
_finite_checks = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle the per-op nan/inf scan. Returns the previous setting."""
    global _finite_checks
    previous = _finite_checks
    _finite_checks = bool(enabled)
    return previous


class Tensor:
    """A numpy array plus its position in the autodiff graph.

    Attributes
    ----------
    data : np.ndarray
        The values. Mutating it in place is allowed for leaves (that is
        how optimizers update parameters) but undefined for op outputs.
    grad : np.ndarray or None
        Accumulated gradient, same shape as data. Stays None until a
        backward pass reaches this tensor. Repeated backward passes add.
    requires_grad : bool
        Whether backward should deposit a gradient here.
    visits : int
        How many times backward passes have processed this node. Purely
        diagnostic; each backward call touches a reachable node once.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "visits",
                 "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype != np.float32:
            arr = arr.astype(np.float64, copy=False)
        # ascontiguousarray would promote 0-d scalars to 1-d, so only
        # copy when the layout actually needs it.
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids)
        self.visits = 0
        self._parents = ()
        self._grad_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # A little operator sugar so short scripts read naturally.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def make_op(data: np.ndarray, parents, grad_fn, op_name: str = "op") -> Tensor:
    """Wrap a computed array as a graph node.

    grad_fn maps the output gradient to a tuple of parent gradients
    (None for parents that need nothing). Extension point for ops
    defined outside this module; every builtin goes through here too.
    """
    if _finite_checks and not np.isfinite(data).all():
        raise NumericsError(f"non-finite values produced by {op_name}")
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def backward(root: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar root.

    Nodes are processed in decreasing creation order, which is a valid
    reverse topological order because an op's output is always created
    after its inputs. Each reachable node is handled exactly once per
    call; gradients on requires_grad tensors accumulate across calls.
    """
    if not isinstance(root, Tensor):
        raise UsageError("backward expects a Tensor")
    if root.data.size != 1:
        raise UsageError(
            f"backward needs a scalar root, got shape {root.data.shape}")

    reachable = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.node_id in reachable:
            continue
        reachable[node.node_id] = node
        stack.extend(node._parents)

    flows = {root.node_id: np.ones_like(root.data)}
    for node in sorted(reachable.values(), key=lambda n: n.node_id,
                       reverse=True):
        node.visits += 1
        g = flows.pop(node.node_id, None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._grad_fn is None:
            continue
        parent_grads = node._grad_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            held = flows.get(parent.node_id)
            flows[parent.node_id] = pg if held is None else held + pg


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"add needs matching shapes, got {a.data.shape} and {b.data.shape}")
    return make_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a vector bias over the trailing feature axis.

    2-d input [batch, features] takes b of length features; 4-d input
    [batch, channels, h, w] takes b of length channels and broadcasts
    it over every spatial position.
    """
    x, b = _as_tensor(x), _as_tensor(b)
    if b.data.ndim != 1:
        raise ShapeError(f"bias must be 1-d, got shape {b.data.shape}")
    if x.data.ndim == 2:
        if x.data.shape[1] != b.data.shape[0]:
            raise ShapeError(
                f"bias length {b.data.shape[0]} does not fit "
                f"input {x.data.shape}")
        return make_op(x.data + b.data[None, :], (x, b),
                       lambda g: (g, g.sum(axis=0)), "add_bias")
    if x.data.ndim == 4:
        if x.data.shape[1] != b.data.shape[0]:
            raise ShapeError(
                f"bias length {b.data.shape[0]} does not fit "
                f"input {x.data.shape}")
        return make_op(x.data + b.data[None, :, None, None], (x, b),
                       lambda g: (g, g.sum(axis=(0, 2, 3))), "add_bias")
    raise ShapeError(f"add_bias expects 2-d or 4-d input, got {x.data.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"mul needs matching shapes, got {a.data.shape} and {b.data.shape}")
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)
    return make_op(x.data * c, (x,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul works on 2-d arrays, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}")
    ad, bd = a.data, b.data
    return make_op(ad @ bd, (a, b),
                   lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose works on 2-d arrays, got {x.data.shape}")
    return make_op(np.ascontiguousarray(x.data.T), (x,),
                   lambda g: (g.T,), "transpose")


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    old = x.data.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {shape}") from exc
    return make_op(data, (x,), lambda g: (g.reshape(old),), "reshape")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    keep = x.data > 0
    return make_op(x.data * keep, (x,), lambda g: (g * keep,), "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split on sign so exp never overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = _sigmoid(x.data)
    return make_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tensor_sum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape = x.data.shape
    dt = x.data.dtype
    return make_op(np.asarray(x.data.sum(), dtype=dt), (x,),
                   lambda g: (np.broadcast_to(g, shape).astype(dt, copy=True),),
                   "sum")


def tensor_mean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape = x.data.shape
    n = x.data.size
    dt = x.data.dtype
    return make_op(np.asarray(x.data.mean(), dtype=dt), (x,),
                   lambda g: ((np.broadcast_to(g, shape) / n).astype(dt, copy=True),),
                   "mean")


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation with 3x3 kernels.

    x is [batch, in_channels, h, w], kernel is [out_channels,
    in_channels, 3, 3]. Output height is (h + 2*pad - 3) // stride + 1
    and must divide exactly; same for width. Implemented by lowering
    the input windows to a matrix (im2col) so the heavy lifting is one
    matmul each way.
    """
    from .errors import ConfigError

    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-d, got {x.data.shape}")
    if kernel.data.ndim != 4 or kernel.data.shape[2:] != (3, 3):
        raise ShapeError(
            f"conv2d kernel must be [out, in, 3, 3], got {kernel.data.shape}")
    if x.data.shape[1] != kernel.data.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.data.shape} vs "
            f"kernel {kernel.data.shape}")
    stride, pad = int(stride), int(pad)
    if stride < 1 or pad < 0:
        raise ConfigError(f"conv2d stride={stride} pad={pad} out of range")

    n, c, h, w = x.data.shape
    o = kernel.data.shape[0]
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < 3 or wp < 3 or (hp - 3) % stride or (wp - 3) % stride:
        raise ConfigError(
            f"conv2d output extent is not an integer for input {h}x{w}, "
            f"pad {pad}, stride {stride}")
    ho = (hp - 3) // stride + 1
    wo = (wp - 3) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad \
        else x.data
    sn, sc, sh, sw = xp.strides
    windows = as_strided(
        xp, shape=(n, c, ho, wo, 3, 3),
        strides=(sn, sc, stride * sh, stride * sw, sh, sw))
    cols = np.ascontiguousarray(
        windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * 9)
    w2 = kernel.data.reshape(o, c * 9)
    out = np.ascontiguousarray(
        (cols @ w2.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    kdata = kernel.data

    def grad_fn(g):
        gm = np.ascontiguousarray(
            g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        dk = (gm.T @ cols).reshape(kdata.shape)
        dcols = (gm @ w2).reshape(n, ho, wo, c, 3, 3)
        dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
        for a in range(3):
            for b in range(3):
                dxp[:, :, a:a + stride * ho:stride,
                    b:b + stride * wo:stride] += \
                    dcols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad:hp - pad, pad:wp - pad] if pad else dxp
        return dx, dk

    return make_op(out, (x, kernel), grad_fn, "conv2d")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2. Ties keep the first position
    in row-major window order, and the gradient flows only there."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2 input must be 4-d, got {x.data.shape}")
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(
            f"maxpool2 needs even spatial extents, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = np.ascontiguousarray(
        x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    ).reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        dwin = np.zeros((n, c, h2, w2, 4), dtype=g.dtype)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        return (np.ascontiguousarray(
            dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        ).reshape(n, c, h, w),)

    return make_op(out, (x,), grad_fn, "maxpool2")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under a softmax.

    Computed through a log-sum-exp shift so large logits cannot
    overflow. Labels must be a 1-d integer array with one entry per
    row, each inside [0, classes).
    """
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(
            f"softmax_cross_entropy wants [batch, classes] logits, "
            f"got {logits.data.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.data.shape[0]:
        raise ShapeError(
            f"labels shape {labels.shape} does not match logits "
            f"{logits.data.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError(f"labels must be integers, got dtype {labels.dtype}")
    batch, classes = logits.data.shape
    if labels.min() < 0 or labels.max() >= classes:
        raise DataError(
            f"label out of range: valid span is [0, {classes}), "
            f"saw min {labels.min()} max {labels.max()}")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(batch), labels].mean()
    probs = np.exp(logp)

    def grad_fn(g):
        d = probs.copy()
        d[np.arange(batch), labels] -= 1.0
        return (d * (g / batch),)

    return make_op(np.asarray(loss, dtype=logits.data.dtype),
                   (logits,), grad_fn, "softmax_cross_entropy")
