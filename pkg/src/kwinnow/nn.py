"""Layers, k-winner activations, and declarative architecture specs.

An ArchitectureSpec is a plain, JSON-serializable description of a
stack of layers. Model turns one into live parameter tensors with a
seeded init and exposes forward(). Keeping the description separate
from the parameters is what lets run records replay architectures
byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError, UsageError
from .tensor import Tensor, make_op


def active_count(width: int, frac: float) -> int:
    """Number of winners for an activation fraction over width units."""
    k = int(round(frac * width))
    if not 1 <= k <= width:
        raise ConfigError(
            f"activation fraction {frac} gives k={k} for width {width}, "
            f"needs 1 <= k <= width")
    return k


def kwta(x: Tensor, k: int) -> Tensor:
    """Keep the k largest entries of each row, zero the rest.

    Ties at the k-th value resolve toward the lowest index. Backward
    passes gradients through the kept positions only; the winner set
    is treated as locally constant.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"kwta expects [batch, units], got {x.data.shape}")
    n = x.data.shape[1]
    k = int(k)
    if not 1 <= k <= n:
        raise ConfigError(f"kwta k={k} out of range for width {n}")
    # Stable sort on the negated values: equal entries keep ascending
    # index order, so the lowest index wins a tie at the cut.
    order = np.argsort(-x.data, axis=1, kind="stable")
    mask = np.zeros(x.data.shape, dtype=bool)
    np.put_along_axis(mask, order[:, :k], True, axis=1)
    return make_op(x.data * mask, (x,), lambda g: (g * mask,), "kwta")


def kwta_conv(x: Tensor, k: int) -> Tensor:
    """k winners per sample across all channel and spatial positions."""
    if x.data.ndim != 4:
        raise ShapeError(f"kwta_conv expects [n, c, h, w], got {x.data.shape}")
    n, c, h, w = x.data.shape
    flat = T.reshape(x, (n, c * h * w))
    return T.reshape(kwta(flat, k), (n, c, h, w))


# Activation descriptors are small dicts so they can live in JSON:
#   {"kind": "relu"} | {"kind": "kwta", "frac": 0.3} | {"kind": "none"}

def _check_activation(act) -> dict:
    if act is None:
        return {"kind": "none"}
    if not isinstance(act, dict) or "kind" not in act:
        raise ConfigError(f"bad activation descriptor: {act!r}")
    kind = act["kind"]
    if kind in ("relu", "none"):
        return {"kind": kind}
    if kind == "kwta":
        frac = float(act.get("frac", 0.0))
        if not 0.0 < frac <= 1.0:
            raise ConfigError(f"kwta fraction must be in (0, 1], got {frac}")
        return {"kind": "kwta", "frac": frac}
    raise ConfigError(f"unknown activation kind {kind!r}")


@dataclass(frozen=True)
class LayerSpec:
    kind: str                      # dense | conv | maxpool | flatten
    width: int = 0                 # dense units / conv out channels
    activation: dict | None = None
    stride: int = 1
    pad: int = 1
    prunable: bool = True

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("dense", "conv"):
            d["width"] = self.width
            d["activation"] = _check_activation(self.activation)
            d["prunable"] = self.prunable
        if self.kind == "conv":
            d["stride"] = self.stride
            d["pad"] = self.pad
        return d


def dense(width, activation=None, prunable=True) -> LayerSpec:
    return LayerSpec("dense", width=int(width), activation=activation,
                     prunable=prunable)


def conv(width, activation=None, stride=1, pad=1, prunable=False) -> LayerSpec:
    return LayerSpec("conv", width=int(width), activation=activation,
                     stride=stride, pad=pad, prunable=prunable)


def maxpool() -> LayerSpec:
    return LayerSpec("maxpool")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    input_shape: tuple
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.flow_shapes()    # validate eagerly

    def flow_shapes(self) -> list:
        """Per-layer output shapes (excluding batch), checking legality."""
        shape = self.input_shape
        out = []
        for i, spec in enumerate(self.layers):
            if spec.kind == "dense":
                if len(shape) != 1:
                    raise ConfigError(
                        f"layer {i} (dense) needs flat input, has {shape}; "
                        f"insert a flatten layer")
                if spec.width < 1:
                    raise ConfigError(f"layer {i} width must be positive")
                shape = (spec.width,)
            elif spec.kind == "conv":
                if len(shape) != 3:
                    raise ConfigError(
                        f"layer {i} (conv) needs [c, h, w] input, has {shape}")
                c, h, w = shape
                hp, wp = h + 2 * spec.pad, w + 2 * spec.pad
                if hp < 3 or wp < 3 or (hp - 3) % spec.stride \
                        or (wp - 3) % spec.stride:
                    raise ConfigError(
                        f"layer {i} (conv) output extent is not an integer "
                        f"for input {h}x{w} pad {spec.pad} stride {spec.stride}")
                shape = (spec.width, (hp - 3) // spec.stride + 1,
                         (wp - 3) // spec.stride + 1)
            elif spec.kind == "maxpool":
                if len(shape) != 3:
                    raise ConfigError(
                        f"layer {i} (maxpool) needs [c, h, w], has {shape}")
                c, h, w = shape
                if h % 2 or w % 2:
                    raise ConfigError(
                        f"layer {i} (maxpool) needs even extents, has {h}x{w}")
                shape = (c, h // 2, w // 2)
            elif spec.kind == "flatten":
                shape = (int(np.prod(shape)),)
            else:
                raise ConfigError(f"layer {i} has unknown kind {spec.kind!r}")
            _check_activation(spec.activation)
            out.append(shape)
        return out

    def to_dict(self) -> dict:
        return {"name": self.name,
                "input_shape": list(self.input_shape),
                "layers": [s.describe() for s in self.layers]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        try:
            layers = []
            for ld in d["layers"]:
                layers.append(LayerSpec(
                    kind=ld["kind"],
                    width=int(ld.get("width", 0)),
                    activation=ld.get("activation"),
                    stride=int(ld.get("stride", 1)),
                    pad=int(ld.get("pad", 1)),
                    prunable=bool(ld.get("prunable", ld["kind"] == "dense"))))
            return cls(name=d["name"], input_shape=tuple(d["input_shape"]),
                       layers=tuple(layers))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad architecture dict: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ArchitectureSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"architecture is not valid JSON: {exc}") from exc
        return cls.from_dict(d)


def with_activations(spec: ArchitectureSpec, dense_act, conv_act=None,
                     name=None) -> ArchitectureSpec:
    """Copy of spec with every hidden activation swapped.

    The final dense layer keeps whatever it had (normally linear
    logits). Widths and geometry never change, so the swapped net is
    shape-for-shape identical.
    """
    last_dense = max((i for i, s in enumerate(spec.layers)
                      if s.kind == "dense"), default=None)
    out = []
    for i, s in enumerate(spec.layers):
        if s.kind == "dense" and i != last_dense:
            out.append(replace(s, activation=dense_act))
        elif s.kind == "conv":
            out.append(replace(s, activation=conv_act or dense_act))
        else:
            out.append(s)
    return ArchitectureSpec(name or spec.name, spec.input_shape, tuple(out))


class _DenseLayer:
    def __init__(self, name, spec, in_dim, rng, dtype):
        lim = np.sqrt(6.0 / in_dim)
        self.name = name
        self.spec = spec
        self.weight = Tensor(
            rng.uniform(-lim, lim, size=(spec.width, in_dim)).astype(dtype),
            requires_grad=True)
        blim = 1.0 / np.sqrt(in_dim)
        self.bias = Tensor(
            rng.uniform(-blim, blim, size=spec.width).astype(dtype),
            requires_grad=True)
        self.k = None
        act = _check_activation(spec.activation)
        if act["kind"] == "kwta":
            self.k = active_count(spec.width, act["frac"])
        self.activation = act["kind"]
        self.bank = None

    def params(self):
        d = {f"{self.name}.weight": self.weight,
             f"{self.name}.bias": self.bias}
        if self.bank is not None:
            d[f"{self.name}.segments"] = self.bank.segments
        return d

    def forward(self, x, context):
        z = T.add_bias(T.matmul(x, T.transpose(self.weight)), self.bias)
        if self.bank is not None:
            from .dendrites import gate
            if context is None:
                raise UsageError(
                    f"layer {self.name} is gated and needs a context vector")
            z = gate(z, context, self.bank)
        if self.activation == "relu":
            return T.relu(z)
        if self.activation == "kwta":
            return kwta(z, self.k)
        return z


class _ConvLayer:
    def __init__(self, name, spec, in_shape, out_shape, rng, dtype):
        c_in = in_shape[0]
        fan_in = c_in * 9
        lim = np.sqrt(6.0 / fan_in)
        self.name = name
        self.spec = spec
        self.kernel = Tensor(
            rng.uniform(-lim, lim, size=(spec.width, c_in, 3, 3)).astype(dtype),
            requires_grad=True)
        blim = 1.0 / np.sqrt(fan_in)
        self.bias = Tensor(
            rng.uniform(-blim, blim, size=spec.width).astype(dtype),
            requires_grad=True)
        self.k = None
        act = _check_activation(spec.activation)
        if act["kind"] == "kwta":
            self.k = active_count(int(np.prod(out_shape)), act["frac"])
        self.activation = act["kind"]
        self.bank = None

    def params(self):
        d = {f"{self.name}.kernel": self.kernel,
             f"{self.name}.bias": self.bias}
        if self.bank is not None:
            d[f"{self.name}.segments"] = self.bank.segments
        return d

    def forward(self, x, context):
        z = T.add_bias(
            T.conv2d(x, self.kernel, stride=self.spec.stride,
                     pad=self.spec.pad),
            self.bias)
        if self.bank is not None:
            from .dendrites import gate_conv
            if context is None:
                raise UsageError(
                    f"layer {self.name} is gated and needs a context vector")
            z = gate_conv(z, context, self.bank)
        if self.activation == "relu":
            return T.relu(z)
        if self.activation == "kwta":
            return kwta_conv(z, self.k)
        return z


class _MaxPoolLayer:
    def __init__(self, name):
        self.name = name
        self.bank = None

    def params(self):
        return {}

    def forward(self, x, context):
        return T.maxpool2(x)


class _FlattenLayer:
    def __init__(self, name, out_dim):
        self.name = name
        self.out_dim = out_dim
        self.bank = None

    def params(self):
        return {}

    def forward(self, x, context):
        return T.reshape(x, (x.data.shape[0], self.out_dim))


class Model:
    """Live parameters for an ArchitectureSpec.

    Parameter init draws from one seeded generator in layer order
    (weight then bias per layer), so the same (spec, seed, dtype)
    triple always rebuilds identical values. A copy of the freshly
    initialized state is kept on the side for rewinding.
    """

    def __init__(self, spec: ArchitectureSpec, seed: int = 0,
                 dtype=np.float64):
        self.spec = spec
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ConfigError(f"unsupported dtype {dtype}")
        rng = np.random.default_rng(self.seed)
        shapes = spec.flow_shapes()
        in_shape = spec.input_shape
        self.layers = []
        for i, ls in enumerate(spec.layers):
            name = f"{ls.kind}{i}"
            if ls.kind == "dense":
                self.layers.append(
                    _DenseLayer(name, ls, in_shape[0], rng, self.dtype))
            elif ls.kind == "conv":
                self.layers.append(
                    _ConvLayer(name, ls, in_shape, shapes[i], rng, self.dtype))
            elif ls.kind == "maxpool":
                self.layers.append(_MaxPoolLayer(name))
            else:
                self.layers.append(_FlattenLayer(name, shapes[i][0]))
            in_shape = shapes[i]
        self.initial_state = self.state()

    def parameters(self) -> dict:
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state(self, state: dict) -> None:
        params = self.parameters()
        for k, v in state.items():
            if k not in params:
                raise UsageError(f"state has unknown parameter {k!r}")
            if params[k].data.shape != v.shape:
                raise ShapeError(
                    f"state for {k} has shape {v.shape}, "
                    f"model has {params[k].data.shape}")
            params[k].data[...] = v

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def prepare_inputs(self, x: np.ndarray) -> np.ndarray:
        """Flatten image batches when the first layer is dense."""
        x = np.asarray(x)
        if len(self.spec.input_shape) == 1 and x.ndim > 2:
            return x.reshape(x.shape[0], -1)
        return x

    def forward(self, x, context=None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(self.prepare_inputs(x))
        h = x
        for layer in self.layers:
            h = layer.forward(h, context)
        return h

    def gated_layers(self) -> list:
        return [l for l in self.layers if l.bank is not None]


# Ready-made architectures. Hidden sizes are parameters so the same
# shape can run tiny on a laptop or full size.

def fc_net(input_dim=784, hidden=(300,), classes=10,
           activation=None, name="fc") -> ArchitectureSpec:
    activation = activation or {"kind": "relu"}
    layers = [dense(h, activation=activation) for h in hidden]
    layers.append(dense(classes))
    return ArchitectureSpec(name, (input_dim,), tuple(layers))


def lenet(in_shape=(1, 28, 28), classes=10, name="lenet") -> ArchitectureSpec:
    return ArchitectureSpec(name, in_shape, (
        conv(64, activation={"kind": "relu"}, pad=1),
        maxpool(),
        conv(64, activation={"kind": "relu"}, pad=1),
        maxpool(),
        flatten(),
        dense(120, activation={"kind": "relu"}),
        dense(84, activation={"kind": "relu"}),
        dense(classes),
    ))


def small_cnn(in_shape=(3, 32, 32), hidden=256, classes=10,
              conv_channels=64, name="small_cnn") -> ArchitectureSpec:
    """Two conv blocks then two dense layers, all ReLU."""
    return ArchitectureSpec(name, in_shape, (
        conv(conv_channels, activation={"kind": "relu"}, pad=1),
        maxpool(),
        conv(conv_channels, activation={"kind": "relu"}, pad=1),
        maxpool(),
        flatten(),
        dense(hidden, activation={"kind": "relu"}),
        dense(classes),
    ))


def sparse_cnn(in_shape=(3, 32, 32), hidden=256, classes=10,
               conv_channels=64, conv_frac=0.2, ff_frac=0.3,
               name="sparse_cnn") -> ArchitectureSpec:
    """small_cnn with k-winner activations in place of ReLU."""
    return with_activations(
        small_cnn(in_shape, hidden, classes, conv_channels),
        dense_act={"kind": "kwta", "frac": ff_frac},
        conv_act={"kind": "kwta", "frac": conv_frac},
        name=name)


def sparse_mlp(input_dim=784, hidden=(256, 256), classes=10, frac=0.1,
               name="sparse_mlp") -> ArchitectureSpec:
    return fc_net(input_dim, hidden, classes,
                  activation={"kind": "kwta", "frac": frac}, name=name)
