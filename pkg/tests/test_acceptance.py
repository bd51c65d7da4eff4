"""Acceptance checks for the whole package, one criterion per test.

These run the desk-scale experiment presets end to end, so the module
takes several minutes. Each test prints a single ACCEPTANCE line to
the real stdout (bypassing capture) naming what passed or failed;
heavyweight runs are built once in module fixtures and shared by the
criteria that read them.
"""

import contextlib
import math
import sys
import time

import numpy as np
import pytest

from kwinnow import nn
from kwinnow import tensor as T
from kwinnow.data import LabeledSet, permuted_mnist, split_cifar100
from kwinnow.dendrites import DendriteBank, attach_dendrites, gate, \
    gate_conv, select_segments
from kwinnow.gradcheck import analytic_gradient, check_gradients
from kwinnow.harness import continual_experiment, evaluate, \
    grid_experiment, imp_experiment, load_dataset, noise_experiment, \
    replay, resolve_arch, train_epochs
from kwinnow.nn import kwta
from kwinnow.optim import build_optimizer
from kwinnow.presets import continual_arms, default_config, merge_config
from kwinnow.pruning import PruneSchedule, iterative_prune
from kwinnow.tensor import Tensor

TOL = 1e-4
H = 1e-5
SEEDS = (0, 1, 2)


# One line per criterion.  Printed immediately (visible under -s) and
# kept here so conftest can replay them after capture is torn down.
RESULTS: list[str] = []


def _line(num, status, label, detail=""):
    text = f"ACCEPTANCE {num:02d} {status}: {label}"
    if detail:
        text += f" ({detail})"
    RESULTS.append(text)
    print(text, file=sys.__stdout__, flush=True)


@contextlib.contextmanager
def criterion(num, label):
    """Print exactly one pass/fail line for the enclosed assertions."""
    info = {}
    try:
        yield info
    except BaseException as exc:
        _line(num, "FAIL", label, str(exc).splitlines()[0][:160])
        raise
    _line(num, "PASS", label, info.get("detail", ""))


# ---------------------------------------------------- shared desk runs

def _desk_imp_config(seed, data_dir):
    cfg = default_config("imp")
    cfg["seed"] = seed
    cfg["data_dir"] = str(data_dir)
    cfg["target_density"] = 0.028      # stops exactly at round 27
    cfg["random_rounds"] = [9, 27]
    return cfg


@pytest.fixture(scope="module")
def imp_runs(data_dir):
    """Desk pruning runs for three seeds: seed -> (record, artifacts,
    wall seconds, config)."""
    runs = {}
    for seed in SEEDS:
        cfg = _desk_imp_config(seed, data_dir)
        t0 = time.monotonic()
        record, artifacts = imp_experiment(cfg)
        runs[seed] = (record, artifacts, time.monotonic() - t0, cfg)
    return runs


@pytest.fixture(scope="module")
def noise_run(data_dir, imp_runs):
    """Desk noise table chained onto the seed-0 pruning artifacts."""
    imp_cfg = _desk_imp_config(0, data_dir)
    embedded = {k: v for k, v in imp_cfg.items()
                if k not in ("protocol", "random_rounds", "seed")}
    cfg = default_config("noise")
    cfg["seed"] = 0
    cfg["imp"] = embedded
    record, artifacts = noise_experiment(
        cfg, imp_artifacts=imp_runs[0][1])
    return record, artifacts


@pytest.fixture(scope="module")
def continual_runs(data_dir):
    """Sequential-task desk runs: (arm, seed) -> record, plus total
    wall seconds."""
    base = default_config("continual")
    base["data_dir"] = str(data_dir)
    arms = continual_arms(base)
    out = {}
    wall = 0.0
    for arm in ("mlp", "adn_zeros", "adn_onehot"):
        for seed in SEEDS:
            cfg = merge_config(arms[arm], {"seed": seed})
            t0 = time.monotonic()
            record, _ = continual_experiment(cfg)
            wall += time.monotonic() - t0
            out[(arm, seed)] = record
    return out, wall


@pytest.fixture(scope="module")
def grid_run():
    cfg = default_config("grid")
    record, artifacts = grid_experiment(cfg)
    return record, artifacts


@pytest.fixture(scope="module")
def blobs_imp_run():
    cfg = {
        "protocol": "imp",
        "seed": 5,
        "dataset": "blobs",
        "classes": 4,
        "train_count": 160,
        "test_count": 80,
        "dtype": "float64",
        "arch": {"preset": "fc", "input_dim": 16, "hidden": [12],
                 "classes": 4},
        "optimizer": "adam",
        "lr": 0.02,
        "weight_decay": 1e-4,
        "epochs_per_round": 2,
        "batch_size": 16,
        "prune_fraction": 0.25,
        "target_density": 0.3,
        "random_rounds": [2],
    }
    record, artifacts = imp_experiment(cfg)
    return record, artifacts


# --------------------------------------------- 01 gradient correctness

def _rand_dims(rng, count, lo=1, hi=7):
    return tuple(int(rng.integers(lo, hi)) for _ in range(count))


def _check(build, params):
    report = check_gradients(build, params, h=H)
    return max(report.values())


def _dense_case(rng, masked):
    b, i, o = _rand_dims(rng, 3)
    x = Tensor(rng.normal(size=(b, i)), requires_grad=True)
    w = Tensor(rng.normal(size=(o, i)), requires_grad=True)
    bias = Tensor(rng.normal(size=o), requires_grad=True)
    r = Tensor(rng.normal(size=(b, o)))
    m = None
    if masked:
        keep = rng.random((o, i)) < 0.5
        keep.reshape(-1)[int(rng.integers(o * i))] = True
        m = Tensor(keep.astype(np.float64))

    def build():
        wm = T.mul(w, m) if m is not None else w
        out = T.add_bias(T.matmul(x, T.transpose(wm)), bias)
        return T.tensor_sum(T.mul(out, r))

    worst = _check(build, {"x": x, "w": w, "b": bias})
    if masked:
        ana = analytic_gradient(build, w)
        assert not ana[m.data == 0.0].any(), \
            "gradient leaked into masked weights"
    return worst


def _conv_case(rng):
    n, ci, co = _rand_dims(rng, 3, 1, 4)
    while True:
        h, w = (int(rng.integers(3, 7)) for _ in range(2))
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        if (h + 2 * pad - 3) % stride == 0 and \
                (w + 2 * pad - 3) % stride == 0:
            break
    x = Tensor(rng.normal(size=(n, ci, h, w)), requires_grad=True)
    k = Tensor(rng.normal(size=(co, ci, 3, 3)), requires_grad=True)
    out_shape = T.conv2d(Tensor(x.data.copy()), Tensor(k.data.copy()),
                         stride=stride, pad=pad).data.shape
    r = Tensor(rng.normal(size=out_shape))

    def build():
        return T.tensor_sum(T.mul(T.conv2d(x, k, stride=stride, pad=pad), r))

    return _check(build, {"x": x, "k": k})


def _pool_case(rng):
    n, c = _rand_dims(rng, 2, 1, 4)
    h = 2 * int(rng.integers(1, 4))
    w = 2 * int(rng.integers(1, 4))
    while True:
        vals = rng.normal(size=(n, c, h, w))
        windows = vals.reshape(n, c, h // 2, 2, w // 2, 2) \
            .transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4)
        top2 = np.sort(windows, axis=1)[:, -2:]
        if np.min(top2[:, 1] - top2[:, 0]) > 1e-3:
            break
    x = Tensor(vals, requires_grad=True)
    r = Tensor(rng.normal(size=(n, c, h // 2, w // 2)))

    def build():
        return T.tensor_sum(T.mul(T.maxpool2(x), r))

    return _check(build, {"x": x})


def _relu_case(rng):
    shape = _rand_dims(rng, 2, 1, 8)
    mag = rng.uniform(0.05, 2.0, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    x = Tensor(mag * sign, requires_grad=True)
    r = Tensor(rng.normal(size=shape))

    def build():
        return T.tensor_sum(T.mul(T.relu(x), r))

    return _check(build, {"x": x})


def _sigmoid_case(rng):
    shape = _rand_dims(rng, 2, 1, 8)
    x = Tensor(rng.uniform(-3.0, 3.0, size=shape), requires_grad=True)
    r = Tensor(rng.normal(size=shape))

    def build():
        return T.tensor_sum(T.mul(T.sigmoid(x), r))

    return _check(build, {"x": x})


def _kwta_case(rng):
    b = int(rng.integers(1, 5))
    n = int(rng.integers(2, 11))
    k = int(rng.integers(1, n + 1))
    while True:
        vals = rng.normal(size=(b, n))
        if k == n:
            break
        ranked = np.sort(vals, axis=1)[:, ::-1]
        if np.min(ranked[:, k - 1] - ranked[:, k]) > 0.05:
            break
    x = Tensor(vals, requires_grad=True)
    r = Tensor(rng.normal(size=(b, n)))

    def build():
        return T.tensor_sum(T.mul(kwta(x, k), r))

    return _check(build, {"x": x})


def _gate_case(rng):
    b, i = _rand_dims(rng, 2, 1, 5)
    units = int(rng.integers(1, 5))
    segs = int(rng.integers(1, 4))
    dim = int(rng.integers(1, 5))
    x = Tensor(rng.normal(size=(b, i)), requires_grad=True)
    w = Tensor(rng.normal(size=(units, i)), requires_grad=True)
    bias = Tensor(rng.normal(size=units), requires_grad=True)
    r = Tensor(rng.normal(size=(b, units)))
    ctx = rng.normal(size=dim)
    # Resample the bank until every unit's winning segment leads its
    # runner-up by a margin no finite-difference wiggle can flip.
    for _ in range(500):
        bank = DendriteBank(units, segs, dim,
                            np.random.default_rng(int(rng.integers(2**31))))
        resp = np.abs(bank.segments.data @ ctx)
        if segs == 1:
            break
        gap = np.sort(resp, axis=1)
        if np.min(gap[:, -1] - gap[:, -2]) > 0.2:
            break
    else:
        raise AssertionError("no well-separated segment bank found")

    def build():
        pre = T.add_bias(T.matmul(x, T.transpose(w)), bias)
        return T.tensor_sum(T.mul(gate(pre, ctx, bank), r))

    worst = _check(build, {"w": w, "b": bias, "segments": bank.segments})
    _, idx = select_segments(bank, ctx)
    ana = analytic_gradient(build, bank.segments)
    for u in range(units):
        others = [j for j in range(segs) if j != idx[u]]
        assert not ana[u, others].any(), \
            "gradient reached a non-selected segment"
    return worst


def test_01_gradient_checks():
    with criterion(1, "central-difference gradient checks") as info:
        t0 = time.monotonic()
        rng = np.random.default_rng(20240817)
        cases = {
            "dense": lambda: _dense_case(rng, masked=False),
            "masked_dense": lambda: _dense_case(rng, masked=True),
            "conv2d": lambda: _conv_case(rng),
            "maxpool2": lambda: _pool_case(rng),
            "relu": lambda: _relu_case(rng),
            "sigmoid": lambda: _sigmoid_case(rng),
            "kwta": lambda: _kwta_case(rng),
            "dendrite_gate": lambda: _gate_case(rng),
        }
        worst = {}
        for name, case in cases.items():
            errs = [case() for _ in range(20)]
            worst[name] = max(errs)
            assert worst[name] < TOL, \
                f"{name} rel err {worst[name]:.2e} >= {TOL}"
        elapsed = time.monotonic() - t0
        assert elapsed < 60.0, f"gradient checks took {elapsed:.1f}s"
        top = max(worst, key=worst.get)
        info["detail"] = (f"8 ops x 20 shapes, worst rel err "
                          f"{worst[top]:.2e} in {top}, {elapsed:.1f}s")


# ------------------------------------------------ 02 kwta sort oracle

def test_02_kwta_matches_sort_oracle():
    with criterion(2, "kwta equals stable-sort oracle on 1000 vectors") \
            as info:
        rng = np.random.default_rng(77)
        ties = 0
        for trial in range(1000):
            n = int(rng.integers(1, 65))
            k = int(rng.integers(1, n + 1))
            if trial % 2:
                v = rng.integers(-3, 4, size=n).astype(np.float64)
            else:
                v = rng.normal(size=n)
            order = np.argsort(-v, kind="stable")
            expected = np.zeros(n)
            expected[order[:k]] = v[order[:k]]
            got = kwta(Tensor(v[None, :].copy()), k).data[0]
            assert np.array_equal(got, expected), \
                f"trial {trial}: n={n} k={k}"
            if k < n and np.sort(v)[::-1][k - 1] == np.sort(v)[::-1][k]:
                ties += 1
        info["detail"] = f"1000 vectors, {ties} with a tie at the cut"


# -------------------------------------------- 03 schedule arithmetic

def test_03_prune_schedule_arithmetic(imp_runs):
    with criterion(3, "prune schedule follows floor-count recursion") \
            as info:
        assert default_config("imp")["prune_fraction"] == 0.125
        sched = PruneSchedule(fraction=0.125, target_density=0.011)
        plan = sched.plan([10**6])
        assert len(plan) == 34, f"expected 34 rounds, got {len(plan)}"
        assert plan[-1] <= 0.011 < plan[-2]
        kept = 10**6
        for n, density in enumerate(plan, start=1):
            kept = kept - math.floor(0.125 * kept)
            assert density == kept / 10**6, f"round {n} drifted"
            assert abs(density - 0.875**n) < 1e-3, \
                f"round {n}: {density} vs {0.875**n}"

        # The recorded desk trajectory must be the plan, float for float.
        desk_plan = PruneSchedule(0.125, 0.028).plan([235200, 3000])
        record = imp_runs[0][0]
        rows = [e for e in record.events_of("round")
                if e["arm"] == "magnitude"]
        assert rows[0]["density"] == 1.0
        recorded = [row["density"] for row in rows[1:]]
        assert recorded == desk_plan
        for name in rows[0]["counts"]:
            kept_by_round = [row["counts"][name][0] for row in rows]
            for a, b in zip(kept_by_round, kept_by_round[1:]):
                assert b == a - math.floor(0.125 * a), \
                    f"{name}: {a} -> {b} breaks the recursion"
        info["detail"] = (f"1e6-weight plan stops at round {len(plan)}, "
                          f"desk trajectory matches all "
                          f"{len(desk_plan)} rounds")


# ------------------------------------------- 04 rewind and mask holds

def test_04_rewind_restores_init_and_mask_holds():
    with criterion(4, "rewind restores init; masks pin weights at zero") \
            as info:
        cfg = {"dataset": "blobs", "classes": 4, "train_count": 160,
               "test_count": 80, "dtype": "float64"}
        train_set, test_set = load_dataset(cfg, seed=3)
        model = nn.Model(resolve_arch({"preset": "fc", "input_dim": 16,
                                       "hidden": [12], "classes": 4}),
                         seed=3, dtype=np.float64)
        init = {k: v.copy() for k, v in model.initial_state.items()}
        checked = {"rounds": 0}

        def train_fn(m, mask, r):
            params = m.parameters()
            for name, keep in mask.masks.items():
                weights = params[name].data
                assert np.array_equal(weights[keep], init[name][keep]), \
                    f"round {r}: survivors in {name} drifted from init"
                assert not weights[~keep].any(), \
                    f"round {r}: pruned weights in {name} nonzero"
            checked["rounds"] += 1
            opt = build_optimizer("adam", params, lr=0.02,
                                  weight_decay=1e-4, mask=mask)
            train_epochs(m, train_set, opt, epochs=2, batch_size=16,
                         shuffle_seed=100 + r)
            return {"accuracy": evaluate(m, test_set)}

        schedule = PruneSchedule(fraction=0.25, target_density=0.3)
        mask, history = iterative_prune(model, schedule, train_fn)
        assert checked["rounds"] == len(history) >= 2
        assert history[-1]["density"] <= 0.3

        # 200 more masked optimizer steps must not revive a single zero.
        opt = build_optimizer("adam", model.parameters(), lr=1e-3,
                              weight_decay=1e-4, mask=mask)
        train_epochs(model, train_set, opt, epochs=20, batch_size=16,
                     shuffle_seed=999)
        steps = 20 * (len(train_set) // 16)
        assert steps >= 200
        for name, keep in mask.masks.items():
            weights = model.parameters()[name].data
            assert not weights[~keep].any(), \
                f"{name} masked weights moved off zero"
            assert weights[keep].any()
        info["detail"] = (f"{checked['rounds']} rounds verified, masked "
                          f"weights exactly zero after {steps} more steps")


# --------------------------------------------- 05 lottery-ticket trend

def test_05_desk_lottery_ticket_trend(imp_runs):
    with criterion(5, "winning tickets hold up at desk scale") as info:
        diffs, gaps = [], []
        for seed in SEEDS:
            record = imp_runs[seed][0]
            mag = {e["round"]: e for e in record.events_of("round")
                   if e["arm"] == "magnitude"}
            rand = {e["round"]: e for e in record.events_of("round")
                    if e["arm"] == "random"}
            assert 0.28 <= mag[9]["density"] <= 0.32
            assert mag[27]["density"] <= 0.10
            diff = 100.0 * (mag[9]["accuracy"] - mag[0]["accuracy"])
            gap = 100.0 * (mag[27]["accuracy"] - rand[27]["accuracy"])
            assert abs(diff) <= 1.5, \
                f"seed {seed}: 30%-density ticket off dense by {diff:.2f}"
            assert gap >= 2.0, \
                f"seed {seed}: ticket beats random by only {gap:.2f}"
            diffs.append(diff)
            gaps.append(gap)
        mean_diff = float(np.mean(diffs))
        mean_gap = float(np.mean(gaps))
        assert abs(mean_diff) <= 1.5 and mean_gap >= 2.0
        wall = sum(imp_runs[s][2] for s in SEEDS)
        assert wall < 1800.0, f"pruning runs took {wall:.0f}s"
        info["detail"] = (f"30% ticket vs dense {mean_diff:+.2f} pts, "
                          f"3% ticket vs random {mean_gap:+.2f} pts, "
                          f"{wall:.0f}s for 3 seeds")


# ------------------------------------------------- 06 noise protocol

def test_06_noise_protocol_table(noise_run, imp_runs):
    with criterion(6, "noise table complete and anchored to clean runs") \
            as info:
        record, _ = noise_run
        expected_ps = [round(0.05 * i, 2) for i in range(11)]
        arms = {e["arm"]: e for e in record.events_of("arm")}
        assert list(arms) == ["dense", "winning_30", "winning_3",
                              "random_30"]
        noise = record.events_of("noise")
        assert len(noise) == 4 * 11
        by_arm = {name: {e["p"]: e["accuracy"] for e in noise
                         if e["arm"] == name} for name in arms}
        for name, table in by_arm.items():
            assert sorted(table) == expected_ps
            assert table[0.0] == arms[name]["clean_accuracy"], \
                f"{name}: p=0 row differs from clean accuracy"

        imp_record = imp_runs[0][0]
        mag = {e["round"]: e for e in imp_record.events_of("round")
               if e["arm"] == "magnitude"}
        rand = {e["round"]: e for e in imp_record.events_of("round")
                if e["arm"] == "random"}
        chain = {"dense": mag[0], "winning_30": mag[9],
                 "winning_3": mag[27], "random_30": rand[9]}
        for name, row in chain.items():
            assert arms[name]["clean_accuracy"] == row["accuracy"], \
                f"{name}: clean accuracy differs from the pruning run"
        info["detail"] = "4 arms x 11 noise levels, p=0 rows exact"


# ------------------------------------------- 07 sequential-task gains

def test_07_context_gating_beats_plain_mlp(continual_runs):
    with criterion(7, "context gating clears the plain MLP by 10 points") \
            as info:
        runs, wall = continual_runs
        finals = {arm: [runs[(arm, s)].events_of("summary")[-1]
                        ["final_average"] for s in SEEDS]
                  for arm in ("mlp", "adn_zeros", "adn_onehot")}
        mean = {arm: 100.0 * float(np.mean(v)) for arm, v in finals.items()}
        gap = mean["adn_onehot"] - mean["mlp"]
        assert gap >= 10.0, f"one-hot gating ahead by only {gap:.2f} points"
        between = mean["mlp"] <= mean["adn_zeros"] <= mean["adn_onehot"]
        close = abs(mean["adn_onehot"] - mean["adn_zeros"]) <= 2.0
        assert between or close, \
            f"zero-context arm at {mean['adn_zeros']:.2f} is outside both"
        for s, a, b in zip(SEEDS, finals["mlp"], finals["adn_onehot"]):
            assert b > a, f"seed {s}: one-hot arm did not beat the MLP"
        assert wall < 2700.0, f"sequential-task runs took {wall:.0f}s"
        info["detail"] = (f"mlp {mean['mlp']:.2f}, zeros "
                          f"{mean['adn_zeros']:.2f}, one-hot "
                          f"{mean['adn_onehot']:.2f}, gap {gap:+.2f} pts, "
                          f"{wall:.0f}s for 9 runs")


# --------------------------------------------- 08 task-stream contract

def test_08_task_stream_properties():
    with criterion(8, "task streams permute, split, and reproduce "
                      "exactly") as info:
        # A base set whose pixel values are all distinct makes the
        # permutation recoverable from any single image.
        n_tr, n_te = 32, 16
        tr = LabeledSet("tr", np.arange(n_tr * 784, dtype=np.float64)
                        .reshape(n_tr, 1, 28, 28),
                        np.arange(n_tr) % 10, 10)
        te = LabeledSet("te", (np.arange(n_te * 784, dtype=np.float64)
                               + 10_000_000).reshape(n_te, 1, 28, 28),
                        np.arange(n_te) % 10, 10)
        stream = permuted_mnist(num_tasks=6, seed=11, base=(tr, te))
        assert np.array_equal(stream.task(0).train_set().inputs, tr.inputs)
        perms = []
        for tid in range(1, 6):
            task = stream.task(tid)
            flat = task.train_set().inputs.reshape(n_tr, 784)
            perm = flat[0].astype(np.int64)
            assert np.array_equal(np.sort(perm), np.arange(784)), \
                f"task {tid} is not a bijection"
            base_flat = tr.inputs.reshape(n_tr, 784)
            assert np.array_equal(flat, base_flat[:, perm]), \
                f"task {tid} permutes rows inconsistently"
            test_flat = task.test_set().inputs.reshape(n_te, 784)
            assert np.array_equal(
                test_flat, te.inputs.reshape(n_te, 784)[:, perm]), \
                f"task {tid} permutes the test split differently"
            perms.append(perm)
        assert any(not np.array_equal(p, np.arange(784)) for p in perms)

        again = permuted_mnist(num_tasks=6, seed=11, base=(tr, te))
        assert np.array_equal(again.task(3).train_set().inputs,
                              stream.task(3).train_set().inputs)
        other = permuted_mnist(num_tasks=6, seed=12, base=(tr, te))
        assert not np.array_equal(other.task(1).train_set().inputs,
                                  stream.task(1).train_set().inputs)

        # Class-split stream over a synthetic 100-class base with the
        # real per-class counts: 500 train and 100 test images each.
        ctr = LabeledSet("ctr", np.zeros((50000, 3, 4, 4), np.float32),
                         np.repeat(np.arange(100), 500), 100)
        cte = LabeledSet("cte", np.zeros((10000, 3, 4, 4), np.float32),
                         np.repeat(np.arange(100), 100), 100)
        split = split_cifar100(num_tasks=10, seed=5, base=(ctr, cte))
        owned = []
        for tid in range(10):
            task = split.task(tid)
            strain, stest = task.train_set(), task.test_set()
            assert len(strain) == 5000 and len(stest) == 1000
            assert strain.num_classes == 10
            counts = np.bincount(strain.labels, minlength=10)
            assert np.array_equal(counts, np.full(10, 500))
            owned.append(set(task.descriptor["classes"]))
        assert all(len(c) == 10 for c in owned)
        assert set().union(*owned) == set(range(100))
        assert sum(len(c) for c in owned) == 100, "tasks share classes"
        split2 = split_cifar100(num_tasks=10, seed=5, base=(ctr, cte))
        assert split2.descriptors() == split.descriptors()
        split3 = split_cifar100(num_tasks=10, seed=6, base=(ctr, cte))
        assert split3.descriptors() != split.descriptors()
        info["detail"] = ("5 permutations bijective and reproducible, "
                          "10 class splits disjoint at 5000/1000")


# -------------------------------------------- 09 conv gating identity

def test_09_conv_gate_halving_and_ratio():
    with criterion(9, "conv gates: zero context halves, hand ratio "
                      "matches") as info:
        rng = np.random.default_rng(41)
        pre = Tensor(rng.normal(size=(2, 3, 4, 4)))
        bank = DendriteBank(3, 4, 5, np.random.default_rng(7))
        out = gate_conv(pre, np.zeros(5), bank)
        assert np.array_equal(out.data, 0.5 * pre.data)

        arch = nn.ArchitectureSpec(
            "probe", (2, 6, 6),
            (nn.conv(3), nn.flatten(), nn.dense(4)))
        model = nn.Model(arch, seed=3, dtype=np.float64)
        x = Tensor(rng.normal(size=(2, 2, 6, 6)))
        ungated = model.layers[0].forward(x, None).data.copy()
        attach_dendrites(model, context_dim=5, num_segments=4, seed=9)
        gated = model.layers[0].forward(x, np.zeros(5)).data
        assert np.array_equal(gated, 0.5 * ungated)

        hand = DendriteBank(2, 1, 2, np.random.default_rng(1))
        hand.segments.data[:] = [[[5.0, 0.0]], [[-5.0, 0.0]]]
        ones = Tensor(np.ones((1, 2, 3, 3)))
        maps = gate_conv(ones, np.array([1.0, 0.0]), hand).data
        assert np.all(maps[0, 0] == maps[0, 0, 0, 0])
        assert np.all(maps[0, 1] == maps[0, 1, 0, 0])
        ratio = float(maps[0, 0, 0, 0] / maps[0, 1, 0, 0])
        s5 = 1.0 / (1.0 + math.exp(-5.0))
        sm5 = 1.0 / (1.0 + math.exp(5.0))
        assert abs(ratio - s5 / sm5) <= 1e-9, \
            f"gate ratio {ratio!r} vs {s5 / sm5!r}"
        assert abs(ratio - math.exp(5.0)) <= 1e-9 * math.exp(5.0)
        info["detail"] = (f"zero-context maps exactly halved, "
                          f"hand ratio {ratio:.9f}")


# ------------------------------------------------- 10 exact replays

def test_10_replay_reproduces_every_metric(blobs_imp_run, grid_run,
                                           continual_runs, noise_run):
    with criterion(10, "records replay to bit-identical metrics") as info:
        targets = {
            "imp": blobs_imp_run[0],
            "grid": grid_run[0],
            "continual": continual_runs[0][("mlp", 0)],
            "noise": noise_run[0],
        }
        for name, record in targets.items():
            matches, _ = replay(record)
            assert matches, f"{name} replay diverged from its record"
        info["detail"] = f"{len(targets)} protocols replayed bit-identically"
