"""Sequential tasks with and without context gating.

Ten permuted-pixel tasks are learned one after another at the desk
preset scale. The plain MLP overwrites earlier tasks as it learns
later ones. The gated net told which task it is on routes each task
to its own subnetwork and retains far more; the same net fed an
all-zero context keeps the sparsity machinery but loses the routing,
and lands in between. Expect a couple of minutes of CPU.

Run from the repository root:

    python3 demos/continual_learning.py
"""

from kwinnow.harness import continual_experiment
from kwinnow.presets import continual_arms, default_config


def main():
    base = default_config("continual")
    finals = {}
    for name, cfg in continual_arms(base).items():
        record, _ = continual_experiment(cfg)
        tasks = record.events_of("task")
        print(f"\n{name}: accuracy on every seen task after each stage")
        for row in tasks:
            per = " ".join(f"{a:.2f}" for a in row["per_task"])
            print(f"  after task {row['task']}: [{per}]  "
                  f"average {row['average_seen']:.3f}")
        finals[name] = record.events_of("summary")[-1]["final_average"]
        print(f"  final average over all tasks: {finals[name]:.3f}")

    print("\nfinal averages:", "  ".join(
        f"{k} {v:.3f}" for k, v in finals.items()))


if __name__ == "__main__":
    main()
