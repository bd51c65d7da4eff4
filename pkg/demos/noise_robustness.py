"""Accuracy under pixel corruption for dense and pruned nets.

A small pruning run produces the arms: the dense net, a winning
ticket kept at moderate density, a much sparser ticket, and a random
mask of the moderate size. Each is then scored on test sets where a
growing fraction of pixel positions is overwritten with an extreme
value. At p=0 every arm reproduces its clean accuracy exactly; the
rest of the table shows how gracefully each one degrades.

Run from the repository root:

    python3 demos/noise_robustness.py
"""

from kwinnow.harness import noise_experiment


def main():
    imp = {
        "dataset": "blobs", "classes": 4,
        "train_count": 320, "test_count": 160, "dtype": "float64",
        "arch": {"preset": "fc", "input_dim": 16, "hidden": [24],
                 "classes": 4},
        "optimizer": "adam", "lr": 0.02, "weight_decay": 1e-4,
        "epochs_per_round": 3, "batch_size": 16,
        "prune_fraction": 0.25, "target_density": 0.1,
    }
    cfg = {
        "protocol": "noise", "seed": 0,
        "imp": imp,
        "arms": [
            {"name": "dense", "imp_round": 0},
            {"name": "winning_mid", "imp_round": 4},
            {"name": "winning_low", "imp_round": 8},
            {"name": "random_mid", "imp_round": 4, "randomize": True},
        ],
        "ps": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
    }

    record, _ = noise_experiment(cfg)
    arms = [e["arm"] for e in record.events_of("arm")]
    table = {(e["arm"], e["p"]): e["accuracy"]
             for e in record.events_of("noise")}
    ps = sorted({p for _, p in table})

    header = " ".join(f"{name:>12}" for name in arms)
    print(f"{'p':>4} {header}")
    for p in ps:
        cells = " ".join(f"{table[(name, p)]:12.3f}" for name in arms)
        print(f"{p:4.1f} {cells}")

    clean = {e["arm"]: e["clean_accuracy"] for e in record.events_of("arm")}
    assert all(table[(name, 0.0)] == clean[name] for name in arms)
    print("\np=0 column equals each arm's clean accuracy exactly.")


if __name__ == "__main__":
    main()
