"""Experiment harness: training loops, protocols, and run records.

Every experiment is a pure function of its config dict. All randomness
is drawn from generators seeded by stable derivations of the single
config seed, so running the same config twice gives the same numbers,
file or no file, worker pool or no worker pool. A RunRecord captures
config plus an append-only event stream; replaying the config and
comparing trails is the determinism check.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import multiprocessing
import time
from pathlib import Path

import numpy as np

from . import data as D
from . import nn
from .dendrites import ContextSpec, attach_dendrites, make_context
from .errors import ConfigError, DataError, KwinnowError, UsageError
from .optim import build_optimizer
from .pruning import (PruneSchedule, SparsityMask, iterative_prune,
                      random_mask_at_density, random_mask_at_round, rewind)
from .tensor import Tensor, softmax_cross_entropy

# Tags for deriving independent seed streams from the one config seed.
_DATA, _MODEL, _BANKS, _MASK, _TRAIN, _NOISE, _POINT = range(7)


def subseed(master: int, *tags: int) -> int:
    """Stable derived seed for a named stream."""
    seq = np.random.SeedSequence([int(master), *[int(t) for t in tags]])
    return int(seq.generate_state(1)[0])


def _jsonify(x):
    if isinstance(x, dict):
        return {str(k): _jsonify(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonify(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonify(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, Path):
        return str(x)
    return x


def canonical_json(obj) -> str:
    return json.dumps(_jsonify(obj), sort_keys=True, separators=(",", ":"))


class RunRecord:
    """Config plus an append-only JSONL event stream.

    When backed by a file, the first line is a header carrying the
    config and every event is written and flushed as it happens, so a
    crash loses at most the line being written. load() tolerates a
    torn final line and reports it.
    """

    VERSION = 1

    def __init__(self, config: dict, path=None):
        self.config = json.loads(canonical_json(config))
        self.events = []
        self.torn = False
        self.path = Path(path) if path is not None else None
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w")
            self._fh.write(json.dumps(
                {"kind": "header", "version": self.VERSION,
                 "config_hash": self.config_hash,
                 "config": self.config}) + "\n")
            self._fh.flush()

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(
            canonical_json(self.config).encode()).hexdigest()[:16]

    def log(self, kind: str, **fields) -> dict:
        event = {"kind": kind}
        event.update(_jsonify(fields))
        self.events.append(event)
        if self._fh is not None:
            self._fh.write(json.dumps(event) + "\n")
            self._fh.flush()
        return event

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def events_of(self, kind: str) -> list:
        return [e for e in self.events if e["kind"] == kind]

    @classmethod
    def load(cls, path) -> "RunRecord":
        path = Path(path)
        try:
            lines = path.read_text().split("\n")
        except OSError as exc:
            raise DataError(f"cannot read record {path}: {exc}") from exc
        if not lines or not lines[0].strip():
            raise DataError(f"record {path} is empty")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise DataError(f"record {path} has a bad header: {exc}") from exc
        if header.get("kind") != "header":
            raise DataError(f"record {path} does not start with a header")
        record = cls.__new__(cls)
        record.config = header["config"]
        record.events = []
        record.torn = False
        record.path = path
        record._fh = None
        body = [l for l in lines[1:] if l != ""]
        for i, line in enumerate(body):
            try:
                record.events.append(json.loads(line))
            except json.JSONDecodeError:
                if i == len(body) - 1:
                    record.torn = True
                    break
                raise DataError(
                    f"record {path} line {i + 2} is corrupt") from None
        return record


def metric_trail(record: RunRecord) -> str:
    """Canonical string of everything replay must reproduce exactly.

    Wall-clock fields are dropped and grid point events are ordered by
    index, since a worker pool may finish them in any order."""
    drop = {"wall_seconds"}
    events = []
    for e in record.events:
        if e["kind"] == "header":
            continue
        events.append({k: v for k, v in e.items() if k not in drop})
    points = sorted((e for e in events if e["kind"] == "point"),
                    key=lambda e: e["index"])
    rest = [e for e in events if e["kind"] != "point"]
    return canonical_json(points + rest)


# ---------------------------------------------------------------- training

def evaluate(model, dset: D.LabeledSet, batch_size: int = 512,
             context=None) -> float:
    """Top-1 accuracy, deterministic batching, no gradient bookkeeping."""
    n = len(dset)
    if n == 0:
        raise UsageError("cannot evaluate on an empty set")
    correct = 0
    for lo in range(0, n, batch_size):
        x = dset.inputs[lo:lo + batch_size]
        logits = model.forward(x, context=context)
        pred = logits.data.argmax(axis=1)
        correct += int((pred == dset.labels[lo:lo + batch_size]).sum())
    return correct / n


def train_epochs(model, train_set: D.LabeledSet, optimizer, epochs: int,
                 batch_size: int, shuffle_seed: int, context=None,
                 eval_set=None, record=None, **log_fields) -> list:
    """Plain minibatch training. Returns one row per epoch."""
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(shuffle_seed)
    n = len(train_set)
    rows = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            optimizer.zero_grad()
            logits = model.forward(train_set.inputs[idx], context=context)
            loss = softmax_cross_entropy(logits, train_set.labels[idx])
            loss.backward()
            optimizer.step()
            losses.append(float(loss.data))
        row = {"epoch": epoch, "loss": float(np.mean(losses))}
        if eval_set is not None:
            row["accuracy"] = evaluate(model, eval_set, context=context)
        rows.append(row)
        if record is not None:
            record.log("epoch", **log_fields, **row)
    return rows


# ------------------------------------------------------------ config glue

_ARCH_PRESETS = {
    "fc": nn.fc_net,
    "sparse_mlp": nn.sparse_mlp,
    "lenet": nn.lenet,
    "small_cnn": nn.small_cnn,
    "sparse_cnn": nn.sparse_cnn,
}


def resolve_arch(arch) -> nn.ArchitectureSpec:
    if isinstance(arch, nn.ArchitectureSpec):
        return arch
    if not isinstance(arch, dict):
        raise ConfigError(f"arch must be a dict, got {type(arch).__name__}")
    if "layers" in arch:
        return nn.ArchitectureSpec.from_dict(arch)
    spec = dict(arch)
    preset = spec.pop("preset", None)
    if preset not in _ARCH_PRESETS:
        raise ConfigError(
            f"unknown arch preset {preset!r}, have {sorted(_ARCH_PRESETS)}")
    if "hidden" in spec and isinstance(spec["hidden"], list):
        spec["hidden"] = tuple(spec["hidden"])
    if "in_shape" in spec and isinstance(spec["in_shape"], list):
        spec["in_shape"] = tuple(spec["in_shape"])
    try:
        return _ARCH_PRESETS[preset](**spec)
    except TypeError as exc:
        raise ConfigError(f"bad arch options for {preset!r}: {exc}") from exc


def _dtype_of(config) -> type:
    name = config.get("dtype", "float64")
    if name in ("float32", "f32"):
        return np.float32
    if name in ("float64", "f64"):
        return np.float64
    raise ConfigError(f"unknown dtype {name!r}")


def load_dataset(config: dict, seed: int):
    """(train, test) for a config. Subsets are seeded draws."""
    name = config.get("dataset", "mnist")
    dtype = _dtype_of(config)
    data_dir = config.get("data_dir", "data")
    if name == "mnist":
        train, test = D.load_mnist(data_dir, dtype=dtype)
    elif name == "cifar100":
        train, test = D.load_cifar100(data_dir, dtype=dtype)
    elif name == "blobs":
        classes = int(config.get("classes", 4))
        train = D.toy_blobs(int(config.get("train_count") or 400), classes,
                            seed=subseed(seed, _DATA, 0), dtype=dtype)
        test = D.toy_blobs(int(config.get("test_count") or 200), classes,
                           seed=subseed(seed, _DATA, 1), dtype=dtype)
        return train, test
    else:
        raise ConfigError(f"unknown dataset {name!r}")
    rng = np.random.default_rng(subseed(seed, _DATA))
    tc = config.get("train_count")
    if tc:
        if not 0 < tc <= len(train):
            raise ConfigError(f"train_count {tc} outside (0, {len(train)}]")
        train = train.subset(rng.permutation(len(train))[:int(tc)])
    ec = config.get("test_count")
    if ec:
        if not 0 < ec <= len(test):
            raise ConfigError(f"test_count {ec} outside (0, {len(test)}]")
        test = test.subset(rng.permutation(len(test))[:int(ec)])
    return train, test


def _require(config, *keys):
    for k in keys:
        if k not in config:
            raise ConfigError(f"config is missing required key {k!r}")


def _static_mask_for(config, model, seed):
    """Fixed random sparsity for runs that never prune.

    Reads the optional weight_density key, thins the prunable layers
    to that density, and returns the mask so the optimizer can keep
    the dropped weights at zero. Returns None when the config asks
    for a fully dense net.
    """
    density = config.get("weight_density")
    if density is None or float(density) >= 1.0:
        return None
    mask = random_mask_at_density(model, float(density),
                                  subseed(seed, _MASK))
    mask.apply(model)
    return mask


# ------------------------------------------------------------- protocols

def train_experiment(config: dict, out_dir=None):
    """One training run: build, train, evaluate."""
    seed = int(config.get("seed", 0))
    record = RunRecord(config, _record_path(out_dir))
    train_set, test_set = load_dataset(config, seed)
    model = nn.Model(resolve_arch(config["arch"]),
                     seed=subseed(seed, _MODEL), dtype=_dtype_of(config))
    mask = _static_mask_for(config, model, seed)
    if mask is not None:
        record.log("static_mask", density=mask.density(),
                   counts={k: list(v) for k, v in mask.counts().items()})
    opt = build_optimizer(config.get("optimizer", "adam"),
                          model.parameters(), lr=config.get("lr", 1e-3),
                          weight_decay=config.get("weight_decay", 0.0),
                          mask=mask)
    t0 = time.monotonic()
    train_epochs(model, train_set, opt,
                 epochs=int(config.get("epochs", 3)),
                 batch_size=int(config.get("batch_size", 128)),
                 shuffle_seed=subseed(seed, _TRAIN),
                 eval_set=test_set, record=record)
    final = evaluate(model, test_set)
    record.log("summary", accuracy=final,
               wall_seconds=time.monotonic() - t0)
    return record, {"model": model, "data": (train_set, test_set)}


def _round_train(config, model, mask, round_index, train_set, test_set):
    seed = int(config.get("seed", 0))
    opt = build_optimizer(config.get("optimizer", "adam"),
                          model.parameters(),
                          lr=config.get("lr", 1.2e-3),
                          weight_decay=config.get("weight_decay", 1e-4),
                          mask=mask)
    rows = train_epochs(model, train_set, opt,
                        epochs=int(config.get("epochs_per_round", 3)),
                        batch_size=int(config.get("batch_size", 128)),
                        shuffle_seed=subseed(seed, _TRAIN, round_index))
    return {"accuracy": evaluate(model, test_set),
            "loss": rows[-1]["loss"]}


def imp_experiment(config: dict, out_dir=None):
    """Iterative magnitude pruning with rewind, plus a random-ticket
    control arm at selected rounds."""
    seed = int(config.get("seed", 0))
    _require(config, "arch")
    record = RunRecord(config, _record_path(out_dir))
    train_set, test_set = load_dataset(config, seed)
    model = nn.Model(resolve_arch(config["arch"]),
                     seed=subseed(seed, _MODEL), dtype=_dtype_of(config))
    schedule = PruneSchedule(
        fraction=config.get("prune_fraction", 0.125),
        target_density=config.get("target_density", 0.011),
        max_rounds=int(config.get("max_rounds", 100)))
    keep_rounds = set(int(r) for r in config.get("random_rounds", []))
    keep_rounds |= set(int(r) for r in config.get("save_mask_rounds", []))
    masks = {}
    t0 = time.monotonic()

    def train_fn(m, mask, r):
        return _round_train(config, m, mask, r, train_set, test_set)

    def on_round(row, mask):
        record.log("round", arm="magnitude", **row)
        if row["round"] in keep_rounds:
            masks[row["round"]] = mask.copy()
        if out_dir is not None and \
                row["round"] in set(config.get("save_mask_rounds", [])):
            mask.save(Path(out_dir) / f"mask_round{row['round']}.bin")

    final_mask, history = iterative_prune(model, schedule, train_fn,
                                          on_round=on_round)
    masks[history[-1]["round"]] = final_mask.copy()
    if out_dir is not None:
        final_mask.save(Path(out_dir) / "mask_final.bin")

    for r in sorted(int(r) for r in config.get("random_rounds", [])):
        if r >= len(history):
            raise ConfigError(
                f"random_rounds entry {r} beyond last round "
                f"{len(history) - 1}")
        rmask = random_mask_at_round(model, schedule.fraction, r,
                                     subseed(seed, _MASK, r))
        rewind(model, rmask)
        metrics = _round_train(config, model, rmask, r, train_set, test_set)
        record.log("round", arm="random", round=r,
                   density=rmask.density(), counts=rmask.counts(),
                   **metrics)

    record.log("summary", rounds=history[-1]["round"],
               final_density=history[-1]["density"],
               wall_seconds=time.monotonic() - t0)
    return record, {"model": model, "masks": masks, "history": history,
                    "data": (train_set, test_set)}


def noise_experiment(config: dict, out_dir=None, imp_artifacts=None):
    """Accuracy under pixel corruption for a family of nets.

    Arms are defined against an embedded pruning run: each arm names a
    round (0 means dense) and optionally randomizes that round's mask.
    The arm is rebuilt by rewinding to the shared init, applying its
    mask, and retraining with the identical per-round seed derivation,
    so the arm at p = 0 is bit-for-bit the net the pruning run scored.
    """
    seed = int(config.get("seed", 0))
    _require(config, "imp", "arms")
    record = RunRecord(config, _record_path(out_dir))
    imp_cfg = dict(config["imp"])
    imp_cfg.setdefault("seed", seed)
    if imp_artifacts is None:
        needed = set()
        for arm in config["arms"]:
            needed.add(int(arm.get("imp_round", 0)))
        imp_cfg = dict(imp_cfg)
        imp_cfg["save_mask_rounds"] = sorted(
            set(imp_cfg.get("save_mask_rounds", [])) | needed)
        _, imp_artifacts = imp_experiment(imp_cfg, out_dir=None)
    model = imp_artifacts["model"]
    masks = imp_artifacts["masks"]
    train_set, test_set = imp_artifacts["data"]
    history = imp_artifacts["history"]
    t0 = time.monotonic()

    arms = []
    for arm in config["arms"]:
        name = arm["name"]
        r = int(arm.get("imp_round", 0))
        if r == 0:
            mask = SparsityMask.for_model(model)
        elif r in masks:
            mask = masks[r].copy()
        else:
            raise ConfigError(
                f"arm {name!r} wants round {r} but the pruning run kept "
                f"masks for {sorted(masks)}")
        if arm.get("randomize"):
            mask = random_mask_at_round(model,
                                        imp_cfg.get("prune_fraction", 0.125),
                                        r, subseed(seed, _MASK, r))
        rewind(model, mask)
        metrics = _round_train(imp_cfg, model, mask, r, train_set, test_set)
        arms.append((name, model.state(), mask))
        record.log("arm", arm=name, imp_round=r, density=mask.density(),
                   clean_accuracy=metrics["accuracy"])

    ps = [float(p) for p in config.get(
        "ps", [round(0.05 * i, 2) for i in range(11)])]
    for i, p in enumerate(ps):
        noisy = D.inject_noise(test_set, p, seed=subseed(seed, _NOISE, i))
        for name, state, mask in arms:
            model.load_state(state)
            acc = evaluate(model, noisy)
            record.log("noise", arm=name, p=p, accuracy=acc)
    record.log("summary", arms=[a[0] for a in arms], ps=ps,
               wall_seconds=time.monotonic() - t0)
    return record, {"history": history, "arms": [a[0] for a in arms]}


def _context_spec_for(config, arch: nn.ArchitectureSpec) -> ContextSpec:
    kind = config["context"]
    num_tasks = int(config.get("num_tasks", 10))
    if kind in ("onehot", "zeros"):
        return ContextSpec(kind, num_tasks)
    if kind == "mean_input":
        return ContextSpec(kind, int(np.prod(arch.input_shape)))
    raise ConfigError(f"unknown context kind {kind!r}")


def continual_experiment(config: dict, out_dir=None):
    """Sequential tasks, one after another, scoring memory of all
    tasks seen so far after each."""
    seed = int(config.get("seed", 0))
    _require(config, "arch")
    record = RunRecord(config, _record_path(out_dir))
    num_tasks = int(config.get("num_tasks", 10))
    dtype = _dtype_of(config)

    stream_kind = config.get("stream", "permuted")
    if stream_kind == "permuted":
        stream = D.permuted_mnist(
            num_tasks, seed=subseed(seed, _DATA),
            data_dir=config.get("data_dir", "data"),
            train_count=config.get("train_count"),
            test_count=config.get("test_count"), dtype=dtype)
    elif stream_kind == "class_split":
        stream = D.split_cifar100(
            num_tasks, seed=subseed(seed, _DATA),
            data_dir=config.get("data_dir", "data"), dtype=dtype)
    else:
        raise ConfigError(f"unknown stream {stream_kind!r}")

    arch = resolve_arch(config["arch"])
    model = nn.Model(arch, seed=subseed(seed, _MODEL), dtype=dtype)

    ctx_spec = None
    if config.get("context"):
        ctx_spec = _context_spec_for(config, arch)
        segs = int((config.get("dendrites") or {}).get("segments", 10))
        # One-hot and zero contexts light up at most one component, so
        # the bank init should scale for a fan-in of 1, not the full
        # context width; otherwise every gate starts pinned near 0.5.
        fan_in = 1 if ctx_spec.kind in ("onehot", "zeros") else ctx_spec.dim
        attach_dendrites(model, ctx_spec.dim, num_segments=segs,
                         seed=subseed(seed, _BANKS), dtype=dtype,
                         context_fan_in=fan_in)
        record.log("gating", context=ctx_spec.to_dict(), segments=segs)

    mask = _static_mask_for(config, model, seed)
    if mask is not None:
        record.log("static_mask", density=mask.density(),
                   counts={k: list(v) for k, v in mask.counts().items()})

    t0 = time.monotonic()
    contexts = []
    for tid in range(num_tasks):
        task_train = stream.task(tid).train_set()
        ctx = None
        if ctx_spec is not None:
            ctx = make_context(ctx_spec, tid, task_train.inputs)
        contexts.append(ctx)
        opt = build_optimizer(config.get("optimizer", "adam"),
                              model.parameters(),
                              lr=config.get("lr", 5e-4),
                              weight_decay=config.get("weight_decay", 0.0),
                              mask=mask)
        train_epochs(model, task_train, opt,
                     epochs=int(config.get("epochs_per_task", 3)),
                     batch_size=int(config.get("batch_size", 128)),
                     shuffle_seed=subseed(seed, _TRAIN, tid), context=ctx)
        per_task = [evaluate(model, stream.task(j).test_set(),
                             context=contexts[j]) for j in range(tid + 1)]
        record.log("task", task=tid, latest=per_task[-1],
                   average_seen=float(np.mean(per_task)),
                   per_task=per_task)
    record.log("summary",
               final_average=record.events_of("task")[-1]["average_seen"],
               wall_seconds=time.monotonic() - t0)
    return record, {"model": model, "stream": stream, "contexts": contexts}


# ------------------------------------------------------------ grid search

_GRID_SHARED = {}


def grid_points(axes: dict) -> list:
    """Cartesian product in the (insertion) order the axes were given."""
    if not axes:
        raise ConfigError("grid needs at least one axis")
    names = list(axes)
    for n in names:
        if not isinstance(axes[n], list) or not axes[n]:
            raise ConfigError(f"grid axis {n!r} must be a non-empty list")
    return [dict(zip(names, combo))
            for combo in itertools.product(*(axes[n] for n in names))]


def grid_report(axes: dict, baseline_axes: dict | None,
                claimed_ratio=None) -> dict:
    """Size bookkeeping for a sweep against its baseline sweep."""
    points = len(grid_points(axes))
    report = {"points": points}
    if baseline_axes:
        base = len(grid_points(baseline_axes))
        report["baseline_points"] = base
        report["ratio"] = points / base
        if claimed_ratio is not None:
            report["claimed_ratio"] = float(claimed_ratio)
            report["claim_matches"] = report["ratio"] == float(claimed_ratio)
    return report


def apply_point(config: dict, point: dict) -> dict:
    """Overlay one grid point onto a config copy. Dotted axis names
    reach into nested dicts, so "arch.ff_frac" lands in config["arch"]."""
    cfg = json.loads(canonical_json(config))
    for key, value in point.items():
        node = cfg
        parts = str(key).split(".")
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(
                    f"axis {key!r} descends through non-dict key {part!r}")
            node = nxt
        node[parts[-1]] = value
    return cfg


def _grid_worker(args):
    index, point, fixed, seed = args
    cfg = apply_point(fixed, point)
    cfg["seed"] = seed
    try:
        shared = _GRID_SHARED.get("data")
        t0 = time.monotonic()
        model = nn.Model(resolve_arch(cfg["arch"]),
                         seed=subseed(seed, _MODEL), dtype=_dtype_of(cfg))
        train_set, test_set = shared if shared is not None \
            else load_dataset(cfg, int(fixed.get("seed", 0)))
        mask = _static_mask_for(cfg, model, seed)
        opt = build_optimizer(cfg.get("optimizer", "adam"),
                              model.parameters(), lr=cfg.get("lr", 1e-3),
                              weight_decay=cfg.get("weight_decay", 0.0),
                              mask=mask)
        train_epochs(model, train_set, opt,
                     epochs=int(cfg.get("epochs", 2)),
                     batch_size=int(cfg.get("batch_size", 64)),
                     shuffle_seed=subseed(seed, _TRAIN))
        score = evaluate(model, test_set)
        return index, "ok", score, time.monotonic() - t0
    except Exception as exc:   # quarantine the point, keep the sweep
        return index, "failed", f"{type(exc).__name__}: {exc}", 0.0


def grid_experiment(config: dict, out_dir=None):
    """Hyperparameter sweep with per-point seeds, failure quarantine,
    and resume-from-record.

    Point i always runs with the same derived seed no matter how many
    workers run the sweep or in which order points finish, so the
    result table is worker-count independent.
    """
    seed = int(config.get("seed", 0))
    _require(config, "axes", "fixed")
    axes = config["axes"]
    fixed = dict(config["fixed"])
    fixed.setdefault("seed", seed)
    points = grid_points(axes)

    done = {}
    resume_path = _record_path(out_dir)
    if resume_path is not None and Path(resume_path).exists() \
            and config.get("resume", True):
        old = RunRecord.load(resume_path)
        if old.config != json.loads(canonical_json(config)):
            raise ConfigError(
                "existing record at the output path was produced by a "
                "different config; refusing to resume over it")
        for e in old.events_of("point"):
            done[e["index"]] = e
        record = RunRecord.__new__(RunRecord)
        record.config = old.config
        record.events = list(old.events)
        record.torn = False
        record.path = Path(resume_path)
        record._fh = open(resume_path, "a")
    else:
        record = RunRecord(config, resume_path)
        for e in record.events_of("point"):
            done[e["index"]] = e

    report = grid_report(axes, config.get("baseline_axes"),
                         config.get("claimed_ratio"))
    if not record.events_of("grid_report"):
        record.log("grid_report", **report)

    todo = [(i, pt, fixed, subseed(seed, _POINT, i))
            for i, pt in enumerate(points) if i not in done]
    if not todo and record.events_of("summary"):
        return record, {"points": points, "report": report,
                        "results": {i: dict(e) for i, e in done.items()}}
    workers = int(config.get("workers", 1))
    t0 = time.monotonic()
    if workers > 1 and todo:
        _GRID_SHARED["data"] = load_dataset(fixed, int(fixed["seed"]))
        try:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(workers) as pool:
                for index, status, payload, secs in \
                        pool.imap_unordered(_grid_worker, todo):
                    done[index] = _log_point(record, points, index, status,
                                             payload)
        finally:
            _GRID_SHARED.clear()
    else:
        for args in todo:
            index, status, payload, secs = _grid_worker(args)
            done[index] = _log_point(record, points, index, status, payload)

    ok = [(i, e["score"]) for i, e in sorted(done.items())
          if e["status"] == "ok"]
    summary = {"points": len(points), "completed": len(done),
               "failed": sum(1 for e in done.values()
                             if e["status"] == "failed"),
               "wall_seconds": time.monotonic() - t0}
    if ok:
        best_index, best_score = max(ok, key=lambda t: (t[1], -t[0]))
        record.log("best", index=best_index, params=points[best_index],
                   score=best_score)
        summary["best_index"] = best_index
    record.log("summary", **summary)
    return record, {"points": points, "report": report,
                    "results": {i: dict(e) for i, e in done.items()}}


def _log_point(record, points, index, status, payload):
    if status == "ok":
        return record.log("point", index=index, params=points[index],
                          status="ok", score=payload)
    return record.log("point", index=index, params=points[index],
                      status="failed", error=payload)


# ------------------------------------------------------------- dispatch

_PROTOCOLS = {
    "train": train_experiment,
    "imp": imp_experiment,
    "noise": noise_experiment,
    "continual": continual_experiment,
    "grid": grid_experiment,
}


def _record_path(out_dir):
    return None if out_dir is None else Path(out_dir) / "record.jsonl"


def run_experiment(config: dict, out_dir=None):
    """Dispatch a config to its protocol. Returns (record, artifacts)."""
    if not isinstance(config, dict):
        raise ConfigError("config must be a dict")
    protocol = config.get("protocol")
    if protocol not in _PROTOCOLS:
        raise ConfigError(
            f"unknown protocol {protocol!r}, have {sorted(_PROTOCOLS)}")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    return _PROTOCOLS[protocol](config, out_dir)


def replay(record: RunRecord):
    """Rerun a record's config and compare metric trails.

    Returns (matches, fresh_record). Exact equality is the bar: same
    config and seeds must reproduce every logged number bit for bit.
    """
    fresh, _ = run_experiment(record.config, out_dir=None)
    return metric_trail(fresh) == metric_trail(record), fresh


# ------------------------------------------------------------- plot data

def emit_plotdata(records, out_dir) -> dict:
    """Write plain numeric .dat tables plus a manifest for whatever is
    plottable in the given records."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"files": []}

    def write(name, columns, rows, record):
        path = out / name
        with open(path, "w") as fh:
            fh.write("# " + "\t".join(columns) + "\n")
            for row in rows:
                fh.write("\t".join(repr(float(v)) for v in row) + "\n")
        manifest["files"].append({
            "file": name, "columns": columns, "rows": len(rows),
            "protocol": record.config.get("protocol"),
            "config_hash": record.config_hash})

    for rec in records:
        record = rec if isinstance(rec, RunRecord) else RunRecord.load(rec)
        proto = record.config.get("protocol")
        tag = record.config_hash[:8]
        if proto == "imp":
            arms = {}
            for e in record.events_of("round"):
                arms.setdefault(e["arm"], []).append(
                    (e["round"], e["density"], e["accuracy"]))
            for arm, rows in arms.items():
                write(f"imp_{tag}_{arm}.dat",
                      ["round", "density", "accuracy"], sorted(rows), record)
        elif proto == "noise":
            arms = {}
            for e in record.events_of("noise"):
                arms.setdefault(e["arm"], []).append((e["p"], e["accuracy"]))
            for arm, rows in arms.items():
                write(f"noise_{tag}_{arm}.dat", ["p", "accuracy"],
                      sorted(rows), record)
        elif proto == "continual":
            rows = [(e["task"], e["latest"], e["average_seen"])
                    for e in record.events_of("task")]
            write(f"continual_{tag}.dat",
                  ["task", "latest", "average_seen"], rows, record)
        elif proto == "grid":
            rows = [(e["index"], 1.0 if e["status"] == "ok" else 0.0,
                     e.get("score", float("nan")))
                    for e in record.events_of("point")]
            write(f"grid_{tag}.dat", ["index", "ok", "score"],
                  sorted(rows), record)
        elif proto == "train":
            rows = [(e["epoch"], e["loss"], e.get("accuracy", float("nan")))
                    for e in record.events_of("epoch")]
            write(f"train_{tag}.dat", ["epoch", "loss", "accuracy"],
                  rows, record)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def parse_plotdata(out_dir) -> dict:
    """Read emit_plotdata output back into {file: {columns, data}}."""
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json under {out}")
    manifest = json.loads(manifest_path.read_text())
    tables = {}
    for entry in manifest["files"]:
        path = out / entry["file"]
        lines = path.read_text().strip().split("\n")
        if not lines or not lines[0].startswith("# "):
            raise DataError(f"{path} is missing its header line")
        columns = lines[0][2:].split("\t")
        if columns != entry["columns"]:
            raise DataError(
                f"{path} columns {columns} disagree with manifest "
                f"{entry['columns']}")
        data = [[float(tok) for tok in line.split("\t")]
                for line in lines[1:]]
        if len(data) != entry["rows"]:
            raise DataError(
                f"{path} has {len(data)} rows, manifest says "
                f"{entry['rows']}")
        tables[entry["file"]] = {"columns": columns, "data": data}
    return tables
