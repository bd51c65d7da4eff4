"""Ready-to-run experiment configs.

Each protocol has a desk-scale config that finishes in minutes on a
laptop and a full-scale config for overnight runs. Desk configs trade
sample count and epochs for speed but keep every structural choice:
same architectures, same schedules, same seed derivations. Everything
here is a plain JSON-dict, so a preset can be dumped, edited, and fed
back through the config file path.
"""

from __future__ import annotations

import json

from . import nn
from .errors import ConfigError

_PS = [round(0.05 * i, 2) for i in range(11)]


def _copy(obj):
    return json.loads(json.dumps(obj))


def _imp_config(full: bool) -> dict:
    cfg = {
        "protocol": "imp",
        "seed": 0,
        "dataset": "mnist",
        "data_dir": "data",
        "dtype": "float32",
        "arch": {"preset": "fc", "input_dim": 784, "hidden": [300],
                 "classes": 10},
        "optimizer": "adam",
        "lr": 1.2e-3,
        "weight_decay": 1e-4,
        "epochs_per_round": 5,
        "batch_size": 60,
        "prune_fraction": 0.125,
        "target_density": 0.011,
        "max_rounds": 100,
        "random_rounds": [9, 18, 27],
    }
    if full:
        cfg["epochs_per_round"] = 10
    else:
        cfg["train_count"] = 10000
    return cfg


def _noise_config(full: bool) -> dict:
    imp = _imp_config(full)
    for key in ("protocol", "random_rounds", "seed"):
        imp.pop(key)
    return {
        "protocol": "noise",
        "seed": 0,
        "imp": imp,
        "arms": [
            {"name": "dense", "imp_round": 0},
            {"name": "winning_30", "imp_round": 9},
            {"name": "winning_3", "imp_round": 27},
            {"name": "random_30", "imp_round": 9, "randomize": True},
        ],
        "ps": list(_PS),
    }


def task_mlp_arch(hidden=(256, 256), kwta_frac=None, classes=10,
                  input_dim=784) -> dict:
    """The sequential-task net: two hidden layers, prunable, and a
    head that a static sparsity mask must never touch."""
    if kwta_frac is None:
        act = {"kind": "relu"}
    else:
        act = {"kind": "kwta", "frac": float(kwta_frac)}
    layers = tuple(nn.dense(h, activation=act) for h in hidden)
    spec = nn.ArchitectureSpec(
        "task_mlp", (int(input_dim),),
        layers + (nn.dense(classes, prunable=False),))
    return spec.to_dict()


def _continual_config(full: bool) -> dict:
    cfg = {
        "protocol": "continual",
        "seed": 0,
        "stream": "permuted",
        "num_tasks": 10,
        "data_dir": "data",
        "dtype": "float32",
        "optimizer": "adam",
        "lr": 1e-3,
        "weight_decay": 0.0,
        "epochs_per_task": 3,
        "batch_size": 128,
        "arch": task_mlp_arch(kwta_frac=0.1),
        "context": "onehot",
        "dendrites": {"segments": 10},
        "weight_density": 0.5,
    }
    if not full:
        cfg["train_count"] = 10000
        cfg["test_count"] = 2000
    return cfg


def continual_arms(base: dict) -> dict:
    """Expand one sequential-task config into its comparison arms.

    mlp        plain dense ReLU net, no context, no masking
    adn_zeros  gated net that always sees an all-zero context
    adn_onehot gated net told which task it is on
    """
    arms = {}
    mlp = _copy(base)
    mlp["arch"] = task_mlp_arch(kwta_frac=None)
    mlp["context"] = None
    mlp["dendrites"] = None
    mlp["weight_density"] = None
    arms["mlp"] = mlp
    for name, kind in (("adn_zeros", "zeros"), ("adn_onehot", "onehot")):
        cfg = _copy(base)
        cfg["context"] = kind
        arms[name] = cfg
    return arms


def _grid_config(full: bool) -> dict:
    if full:
        # The sparse net sweeps activation and weight sparsity on top
        # of the shared optimizer axes; the dense baseline sweeps
        # weight decay instead. 162 points against 27.
        shared = {
            "lr": [1e-5, 1e-4, 1e-3],
            "batch_size": [32, 64, 128],
        }
        axes = dict(shared)
        axes["arch.conv_frac"] = [0.1, 0.2, 0.3]
        axes["arch.ff_frac"] = [0.1, 0.3]
        axes["weight_density"] = [0.3, 0.5, 0.7]
        baseline = dict(shared)
        baseline["weight_decay"] = [0.0, 1e-5, 1e-4]
        return {
            "protocol": "grid",
            "seed": 0,
            "fixed": {
                "dataset": "cifar100",
                "data_dir": "data",
                "dtype": "float32",
                "arch": {"preset": "sparse_cnn", "in_shape": [3, 32, 32],
                         "classes": 100},
                "optimizer": "adam",
                "weight_decay": 0.0,
                "epochs": 3,
            },
            "axes": axes,
            "baseline_axes": baseline,
            "claimed_ratio": 12.0,
            "workers": 1,
        }
    return {
        "protocol": "grid",
        "seed": 0,
        "fixed": {
            "dataset": "blobs",
            "classes": 4,
            "train_count": 160,
            "test_count": 80,
            "dtype": "float64",
            "arch": {"preset": "fc", "input_dim": 16, "hidden": [16],
                     "classes": 4},
            "optimizer": "adam",
            "epochs": 3,
            "batch_size": 32,
        },
        "axes": {
            "lr": [0.03, 0.01],
            "weight_decay": [0.0, 1e-4],
        },
        "workers": 1,
    }


def _train_config(full: bool) -> dict:
    cfg = {
        "protocol": "train",
        "seed": 0,
        "dataset": "mnist",
        "data_dir": "data",
        "dtype": "float32",
        "arch": {"preset": "fc", "input_dim": 784, "hidden": [300],
                 "classes": 10},
        "optimizer": "adam",
        "lr": 1.2e-3,
        "weight_decay": 1e-4,
        "epochs": 3,
        "batch_size": 128,
    }
    if not full:
        cfg["train_count"] = 10000
    return cfg


_BUILDERS = {
    "train": _train_config,
    "imp": _imp_config,
    "noise": _noise_config,
    "continual": _continual_config,
    "grid": _grid_config,
}


def default_config(protocol: str, full: bool = False) -> dict:
    """Desk-scale (default) or full-scale starting config."""
    if protocol not in _BUILDERS:
        raise ConfigError(
            f"no preset for protocol {protocol!r}, have {sorted(_BUILDERS)}")
    return _BUILDERS[protocol](bool(full))


# Keys where a supplied dict states the whole intent, so merging it
# with preset entries would smuggle in axes or layers nobody asked for.
_ATOMIC_KEYS = {"axes", "baseline_axes"}


def merge_config(base: dict, override: dict) -> dict:
    """Overlay override onto base. Dicts merge key by key; lists and
    scalars replace. Grid axes and explicit layer lists replace whole,
    since those spell out the complete sweep or architecture."""
    out = _copy(base)
    for key, value in override.items():
        mergeable = (isinstance(value, dict)
                     and isinstance(out.get(key), dict)
                     and key not in _ATOMIC_KEYS
                     and "layers" not in value)
        if mergeable:
            out[key] = merge_config(out[key], value)
        else:
            out[key] = _copy(value) if isinstance(value, (dict, list)) \
                else value
    return out
