"""Context-gated units.

Each gated unit owns a small bank of segment weight vectors living in
context space. For a given context c the unit picks the segment whose
response u_j . c has the largest magnitude (lowest index on ties),
squashes that signed response through a sigmoid, and multiplies its
feedforward pre-activation by the result. Dense layers gate per unit;
conv layers gate whole channels, so one scalar scales an entire
feature map.

Gradients flow into the feedforward path and into the selected
segment only; the selection itself is treated as constant, the same
way a max pool treats its argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, UsageError
from .tensor import Tensor, _sigmoid, make_op


class DendriteBank:
    """Segment weights for one gated layer: [units, segments, context].

    Segments init uniform with a Kaiming-style limit sqrt(6 / fan_in),
    where fan_in defaults to the context dimension. For contexts where
    only a few components are ever nonzero at once (a one-hot task id
    activates exactly one), pass the effective fan-in instead so the
    initial gate responses land in the sigmoid's responsive range
    rather than collapsing toward 0.5.
    """

    def __init__(self, units: int, num_segments: int, context_dim: int,
                 rng: np.random.Generator, dtype=np.float64,
                 fan_in: int | None = None):
        if units < 1 or num_segments < 1 or context_dim < 1:
            raise ConfigError(
                f"bank dims must be positive, got units={units} "
                f"segments={num_segments} context={context_dim}")
        fan_in = context_dim if fan_in is None else fan_in
        if fan_in < 1:
            raise ConfigError(f"fan_in must be positive, got {fan_in}")
        lim = np.sqrt(6.0 / fan_in)
        self.segments = Tensor(
            rng.uniform(-lim, lim,
                        size=(units, num_segments, context_dim)).astype(dtype),
            requires_grad=True)

    @property
    def units(self):
        return self.segments.data.shape[0]

    @property
    def num_segments(self):
        return self.segments.data.shape[1]

    @property
    def context_dim(self):
        return self.segments.data.shape[2]


def _context_array(context, dim):
    c = context.data if isinstance(context, Tensor) else np.asarray(context)
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if c.shape[0] != dim:
        raise ShapeError(
            f"context has length {c.shape[0]}, bank expects {dim}")
    return c


def select_segments(bank: DendriteBank, context):
    """Per unit: index and signed value of the max-|response| segment."""
    c = _context_array(context, bank.context_dim)
    v = bank.segments.data @ c                      # [units, segments]
    idx = np.abs(v).argmax(axis=1)                  # first max on ties
    vals = v[np.arange(v.shape[0]), idx]
    return vals, idx


def gate(pre: Tensor, context, bank: DendriteBank) -> Tensor:
    """Scale [batch, units] pre-activations by per-unit context gates."""
    if pre.data.ndim != 2:
        raise ShapeError(f"gate expects [batch, units], got {pre.data.shape}")
    if pre.data.shape[1] != bank.units:
        raise ShapeError(
            f"pre-activation width {pre.data.shape[1]} does not match "
            f"bank units {bank.units}")
    c = _context_array(context, bank.context_dim)
    vals, idx = select_segments(bank, c)
    s = _sigmoid(vals)
    pre_data = pre.data
    seg_shape = bank.segments.data.shape

    def grad_fn(g):
        dpre = g * s[None, :]
        dgate = (g * pre_data).sum(axis=0)
        dvals = dgate * s * (1.0 - s)
        dseg = np.zeros(seg_shape, dtype=g.dtype)
        dseg[np.arange(seg_shape[0]), idx] = dvals[:, None] * c[None, :]
        return dpre, dseg

    return make_op(pre.data * s[None, :], (pre, bank.segments), grad_fn,
                   "dendrite_gate")


def gate_conv(pre: Tensor, context, bank: DendriteBank) -> Tensor:
    """Scale [batch, channels, h, w] maps by per-channel context gates."""
    if pre.data.ndim != 4:
        raise ShapeError(
            f"gate_conv expects [n, c, h, w], got {pre.data.shape}")
    if pre.data.shape[1] != bank.units:
        raise ShapeError(
            f"channel count {pre.data.shape[1]} does not match "
            f"bank units {bank.units}")
    c = _context_array(context, bank.context_dim)
    vals, idx = select_segments(bank, c)
    s = _sigmoid(vals)
    pre_data = pre.data
    seg_shape = bank.segments.data.shape

    def grad_fn(g):
        dpre = g * s[None, :, None, None]
        dgate = (g * pre_data).sum(axis=(0, 2, 3))
        dvals = dgate * s * (1.0 - s)
        dseg = np.zeros(seg_shape, dtype=g.dtype)
        dseg[np.arange(seg_shape[0]), idx] = dvals[:, None] * c[None, :]
        return dpre, dseg

    return make_op(pre.data * s[None, :, None, None], (pre, bank.segments),
                   grad_fn, "dendrite_gate_conv")


@dataclass(frozen=True)
class ContextSpec:
    """How to produce the context vector for a task.

    kind "onehot": dim entries, one per task, task_id hot.
    kind "zeros": the all-zero vector (every gate lands on exactly 0.5,
        which is the no-information ablation).
    kind "mean_input": the mean flattened training input of the task.
    """
    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in ("onehot", "zeros", "mean_input"):
            raise ConfigError(f"unknown context kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigError(f"context dim must be positive, got {self.dim}")

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(kind=d["kind"], dim=int(d["dim"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad context dict: {exc}") from exc


def make_context(spec: ContextSpec, task_id: int,
                 task_inputs: np.ndarray | None = None) -> np.ndarray:
    """Build the context vector a task presents to gated layers."""
    if spec.kind == "onehot":
        if not 0 <= task_id < spec.dim:
            raise ConfigError(
                f"task id {task_id} outside [0, {spec.dim}) for onehot")
        c = np.zeros(spec.dim)
        c[task_id] = 1.0
        return c
    if spec.kind == "zeros":
        return np.zeros(spec.dim)
    if task_inputs is None:
        raise UsageError("mean_input context needs the task's inputs")
    flat = np.asarray(task_inputs, dtype=np.float64)
    flat = flat.reshape(flat.shape[0], -1)
    if flat.shape[1] != spec.dim:
        raise ShapeError(
            f"inputs flatten to {flat.shape[1]}, context dim is {spec.dim}")
    return flat.mean(axis=0)


def attach_dendrites(model, context_dim: int, num_segments: int = 10,
                     seed: int = 0, dtype=None,
                     context_fan_in: int | None = None) -> list:
    """Give every hidden dense and conv layer a segment bank.

    The final dense layer (the classifier head) stays ungated. Banks
    are drawn from their own seeded generator, in layer order, and the
    new parameters are folded into the model's initial snapshot so
    rewinds restore them too. context_fan_in sets the init scale for
    sparse contexts (see DendriteBank). Returns the gated layer names.
    """
    dtype = dtype or model.dtype
    dense_ids = [i for i, l in enumerate(model.layers)
                 if l.__class__.__name__ == "_DenseLayer"]
    if not dense_ids:
        raise ConfigError("model has no dense layers to gate")
    head = dense_ids[-1]
    rng = np.random.default_rng(seed)
    gated = []
    for i, layer in enumerate(model.layers):
        cls = layer.__class__.__name__
        if i == head or cls not in ("_DenseLayer", "_ConvLayer"):
            continue
        units = layer.spec.width
        layer.bank = DendriteBank(units, num_segments, context_dim, rng,
                                  dtype=dtype, fan_in=context_fan_in)
        model.initial_state[f"{layer.name}.segments"] = \
            layer.bank.segments.data.copy()
        gated.append(layer.name)
    return gated
