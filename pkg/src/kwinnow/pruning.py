"""Masks, magnitude pruning, rewind, and the iterative schedule.

A SparsityMask is a dict of boolean keep-arrays keyed by parameter
name. Only weight matrices and conv kernels flagged prunable in the
architecture ever get masks; biases and dendrite segments do not.

The iterative procedure: train the dense net, prune the smallest
fraction of surviving weights per layer, rewind the survivors to
their initial values, train again, and repeat until the kept density
reaches a target. Prune counts use floor(fraction * kept), so a layer
with fewer than 1/fraction survivors stops shrinking.
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, UsageError

_MAGIC = b"KWNM"
_VERSION = 1


class SparsityMask:
    """Per-parameter boolean keep masks."""

    def __init__(self, masks: dict):
        self.masks = {}
        for name, m in masks.items():
            arr = np.asarray(m)
            if arr.dtype != np.bool_:
                raise UsageError(f"mask for {name} must be boolean")
            self.masks[name] = arr

    @classmethod
    def for_model(cls, model) -> "SparsityMask":
        """All-keep mask over the model's prunable weight tensors."""
        masks = {}
        for layer in model.layers:
            spec = getattr(layer, "spec", None)
            if spec is None or not spec.prunable:
                continue
            if spec.kind == "dense":
                masks[f"{layer.name}.weight"] = np.ones(
                    layer.weight.data.shape, dtype=bool)
            elif spec.kind == "conv":
                masks[f"{layer.name}.kernel"] = np.ones(
                    layer.kernel.data.shape, dtype=bool)
        if not masks:
            raise ConfigError("model has no prunable layers")
        return cls(masks)

    def copy(self) -> "SparsityMask":
        return SparsityMask({k: v.copy() for k, v in self.masks.items()})

    def counts(self) -> dict:
        return {k: (int(v.sum()), v.size) for k, v in self.masks.items()}

    def kept(self) -> int:
        return sum(int(v.sum()) for v in self.masks.values())

    def total(self) -> int:
        return sum(v.size for v in self.masks.values())

    def density(self) -> float:
        return self.kept() / self.total()

    def apply(self, model) -> None:
        """Zero the pruned positions of the model's weights in place."""
        params = model.parameters()
        for name, m in self.masks.items():
            if name not in params:
                raise UsageError(f"mask covers unknown parameter {name!r}")
            params[name].data[~m] = 0.0

    # On disk: magic, version byte, layer count, then per layer a
    # length-prefixed utf-8 name, ndim, dims, and the mask bits packed
    # 8 per byte in row-major order. Everything little-endian.

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<BI", _VERSION, len(self.masks)))
            for name, m in self.masks.items():
                raw = name.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<B", m.ndim))
                fh.write(struct.pack(f"<{m.ndim}I", *m.shape))
                fh.write(np.packbits(m.ravel()).tobytes())

    @classmethod
    def load(cls, path) -> "SparsityMask":
        def need(fh, n, what):
            b = fh.read(n)
            if len(b) != n:
                raise DataError(f"mask file {path} truncated in {what}")
            return b

        masks = {}
        with open(path, "rb") as fh:
            magic = need(fh, 4, "header")
            if magic != _MAGIC:
                raise DataError(
                    f"bad magic {magic!r} in {path}, expected {_MAGIC!r}")
            version, count = struct.unpack("<BI", need(fh, 5, "header"))
            if version != _VERSION:
                raise DataError(f"unsupported mask version {version}")
            for _ in range(count):
                (nlen,) = struct.unpack("<H", need(fh, 2, "name"))
                name = need(fh, nlen, "name").decode("utf-8")
                (ndim,) = struct.unpack("<B", need(fh, 1, "dims"))
                shape = struct.unpack(f"<{ndim}I", need(fh, 4 * ndim, "dims"))
                size = int(np.prod(shape))
                nbytes = (size + 7) // 8
                bits = np.frombuffer(need(fh, nbytes, f"bits of {name}"),
                                     dtype=np.uint8)
                masks[name] = np.unpackbits(bits)[:size].astype(bool) \
                    .reshape(shape)
            if fh.read(1):
                raise DataError(f"mask file {path} has trailing bytes")
        return cls(masks)

    def to_json(self) -> str:
        layers = {}
        for name, m in self.masks.items():
            layers[name] = {
                "shape": list(m.shape),
                "kept": int(m.sum()),
                "bits": base64.b64encode(
                    np.packbits(m.ravel()).tobytes()).decode("ascii"),
            }
        return json.dumps({"version": _VERSION, "layers": layers}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SparsityMask":
        try:
            d = json.loads(text)
            masks = {}
            for name, rec in d["layers"].items():
                shape = tuple(rec["shape"])
                size = int(np.prod(shape))
                bits = np.frombuffer(
                    base64.b64decode(rec["bits"]), dtype=np.uint8)
                m = np.unpackbits(bits)[:size].astype(bool).reshape(shape)
                if int(m.sum()) != rec["kept"]:
                    raise DataError(
                        f"mask json kept-count mismatch for {name}")
                masks[name] = m
            return cls(masks)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad mask json: {exc}") from exc


def prune_magnitude(weights: dict, mask: SparsityMask,
                    fraction: float) -> SparsityMask:
    """Drop the smallest-magnitude floor(fraction * kept) weights per
    layer among those the mask still keeps. Ties at the cut go in flat
    index order, lowest pruned first."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"prune fraction must be in (0, 1), got {fraction}")
    new = mask.copy()
    for name, m in new.masks.items():
        if name not in weights:
            raise UsageError(f"no weights supplied for masked {name!r}")
        w = np.asarray(weights[name])
        if w.shape != m.shape:
            raise UsageError(
                f"weights for {name} have shape {w.shape}, mask {m.shape}")
        kept_idx = np.flatnonzero(m.ravel())
        n_prune = int(np.floor(fraction * kept_idx.size))
        if n_prune == 0:
            continue
        vals = np.abs(w.ravel()[kept_idx])
        order = np.argsort(vals, kind="stable")
        flat = m.ravel().copy()
        flat[kept_idx[order[:n_prune]]] = False
        new.masks[name] = flat.reshape(m.shape)
    return new


def prune_random(mask: SparsityMask, fraction: float,
                 rng: np.random.Generator) -> SparsityMask:
    """Same per-layer counts as prune_magnitude, positions uniform."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"prune fraction must be in (0, 1), got {fraction}")
    new = mask.copy()
    for name, m in new.masks.items():
        kept_idx = np.flatnonzero(m.ravel())
        n_prune = int(np.floor(fraction * kept_idx.size))
        if n_prune == 0:
            continue
        drop = rng.choice(kept_idx, size=n_prune, replace=False)
        flat = m.ravel().copy()
        flat[drop] = False
        new.masks[name] = flat.reshape(m.shape)
    return new


def randomized_like(mask: SparsityMask, seed: int) -> SparsityMask:
    """Fresh mask with the same per-layer kept counts as the given one
    but uniformly random positions. The control arm for tickets."""
    rng = np.random.default_rng(seed)
    masks = {}
    for name, m in mask.masks.items():
        kept = int(m.sum())
        flat = np.zeros(m.size, dtype=bool)
        flat[rng.choice(m.size, size=kept, replace=False)] = True
        masks[name] = flat.reshape(m.shape)
    return SparsityMask(masks)


def random_mask_at_round(model, fraction: float, round_index: int,
                         seed: int) -> SparsityMask:
    """Random mask with exactly the per-layer counts the magnitude
    schedule reaches after round_index prune events. The counts only
    depend on the floor arithmetic, so running the same schedule with
    random victims lands on the same per-layer density."""
    mask = SparsityMask.for_model(model)
    rng = np.random.default_rng(seed)
    for _ in range(int(round_index)):
        mask = prune_random(mask, fraction, rng)
    return mask


def random_mask_at_density(model, density: float, seed: int) -> SparsityMask:
    """Random mask keeping round(density * size) weights per layer."""
    if not 0.0 < density <= 1.0:
        raise ConfigError(f"density must be in (0, 1], got {density}")
    template = SparsityMask.for_model(model)
    rng = np.random.default_rng(seed)
    masks = {}
    for name, m in template.masks.items():
        kept = int(round(density * m.size))
        if kept < 1:
            raise ConfigError(
                f"density {density} keeps no weights in {name}")
        flat = np.zeros(m.size, dtype=bool)
        flat[rng.choice(m.size, size=kept, replace=False)] = True
        masks[name] = flat.reshape(m.shape)
    return SparsityMask(masks)


def rewind(model, mask: SparsityMask) -> None:
    """Reset every parameter to its initial snapshot, then re-apply the
    mask so pruned positions are exactly zero."""
    model.load_state(model.initial_state)
    mask.apply(model)


@dataclass(frozen=True)
class PruneSchedule:
    fraction: float = 0.125
    target_density: float = 0.011
    max_rounds: int = 100

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ConfigError(f"bad prune fraction {self.fraction}")
        if not 0.0 < self.target_density < 1.0:
            raise ConfigError(f"bad target density {self.target_density}")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be at least 1")

    def plan(self, layer_sizes) -> list:
        """Exact kept-count trajectory for given layer sizes, one entry
        per prune event, computed with the same floor arithmetic the
        real pruning uses."""
        kept = list(layer_sizes)
        total = sum(kept)
        out = []
        for _ in range(self.max_rounds):
            kept = [k - int(np.floor(self.fraction * k)) for k in kept]
            out.append(sum(kept) / total)
            if out[-1] <= self.target_density:
                break
        return out


def iterative_prune(model, schedule: PruneSchedule, train_fn,
                    on_round=None) -> tuple:
    """Run the train / prune / rewind loop.

    train_fn(model, mask, round_index) trains the masked model in
    place and returns a metrics dict (at minimum {"accuracy": float}).
    Round 0 is the dense net. After each training round the mask is
    tightened and the survivors rewound, until density reaches the
    schedule target; the final mask is trained once more so the last
    row of the history holds the target-density result.

    Returns (mask, history) where history rows carry round, density,
    and the metrics train_fn reported. on_round, when given, receives
    (row, mask) after each round, before the next prune.
    """
    mask = SparsityMask.for_model(model)
    history = []
    for round_index in range(schedule.max_rounds + 1):
        mask.apply(model)
        metrics = dict(train_fn(model, mask, round_index))
        row = {"round": round_index, "density": mask.density(),
               "counts": mask.counts()}
        row.update(metrics)
        history.append(row)
        if on_round is not None:
            on_round(row, mask)
        if mask.density() <= schedule.target_density:
            return mask, history
        weights = {name: model.parameters()[name].data
                   for name in mask.masks}
        tightened = prune_magnitude(weights, mask, schedule.fraction)
        if tightened.kept() == mask.kept():
            raise ConfigError(
                f"pruning stalled at density {mask.density():.4f}: every "
                f"layer is below 1/fraction weights, target "
                f"{schedule.target_density} is unreachable")
        mask = tightened
        rewind(model, mask)
    raise ConfigError(
        f"target density {schedule.target_density} not reached within "
        f"{schedule.max_rounds} rounds")
