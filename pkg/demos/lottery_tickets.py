"""Iterative magnitude pruning with weight rewind, in miniature.

Trains a small net on toy blobs, prunes a quarter of the surviving
weights each round, rewinds the survivors to their initial values, and
retrains. A random-ticket control prunes the same amount with no
regard for magnitude. The winning ticket keeps its accuracy far below
half density; the random ticket does not.

Run from the repository root:

    python3 demos/lottery_tickets.py

Pass --mnist to run the full desk-scale preset instead (a 784-300-10
net on a 10k-image subset, about two minutes of CPU).
"""

import argparse

from kwinnow.harness import imp_experiment
from kwinnow.presets import default_config


def toy_config():
    return {
        "protocol": "imp", "seed": 0,
        "dataset": "blobs", "classes": 4,
        "train_count": 320, "test_count": 160, "dtype": "float64",
        "arch": {"preset": "fc", "input_dim": 16, "hidden": [24],
                 "classes": 4},
        "optimizer": "adam", "lr": 0.02, "weight_decay": 1e-4,
        "epochs_per_round": 3, "batch_size": 16,
        "prune_fraction": 0.25, "target_density": 0.05,
        "random_rounds": [4, 8],
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--mnist", action="store_true",
                        help="run the desk-scale preset on real digits")
    args = parser.parse_args()

    if args.mnist:
        cfg = default_config("imp")
        cfg["target_density"] = 0.028
        cfg["random_rounds"] = [9, 27]
    else:
        cfg = toy_config()

    record, artifacts = imp_experiment(cfg)
    magnitude = [e for e in record.events_of("round")
                 if e["arm"] == "magnitude"]
    random_arm = {e["round"]: e for e in record.events_of("round")
                  if e["arm"] == "random"}

    print(f"{'round':>5} {'density':>8} {'winning':>8} {'random':>8}")
    for row in magnitude:
        r = row["round"]
        rand = random_arm.get(r)
        rand_txt = f"{rand['accuracy']:8.3f}" if rand else " " * 8
        print(f"{r:>5} {row['density']:8.3f} {row['accuracy']:8.3f} "
              f"{rand_txt}")

    dense = magnitude[0]["accuracy"]
    final = magnitude[-1]["accuracy"]
    print(f"\ndense accuracy {dense:.3f}; winning ticket at "
          f"{magnitude[-1]['density']:.1%} density: {final:.3f}")
    print("the rewound survivors repeat their original training "
          "trajectory; a random mask of the same size has to start over.")


if __name__ == "__main__":
    main()
