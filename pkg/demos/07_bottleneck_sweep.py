"""Head rank against validation loss on one shared corpus (small edition).

Same protocol as the `bottleneck-sweep` subcommand, shrunk to run in tens of
seconds: one Markov corpus, identical training for every factored-head rank,
validation loss on held-out sequences.
"""

import csv
from pathlib import Path

from headlab import cli

OUT = Path("demos_out")
config = cli.resolve_config(
    "bottleneck-sweep",
    overrides={
        "name": "bottleneck_demo",
        "vocab_size": 128,
        "width": 16,
        "ranks": [2, 4, 8, 16],
        "seeds": [0],
        "num_seqs": 512,
        "seq_len": 48,
        "steps": 300,
        "warmup_steps": 30,
        "eval_every": 60,
    },
)
run_dir = cli._prepare_dir(OUT, config, "bottleneck-sweep")
summary = cli.run_bottleneck_sweep(config, run_dir)

with open(run_dir / "bottleneck.csv") as fh:
    rows = list(csv.DictReader(fh))
print(f"{'head':>10} {'rank':>5} {'final train':>12} {'final val':>10}")
for row in rows:
    print(
        f"{row['head']:>10} {row['rank']:>5} "
        f"{float(row['final_train_loss']):>12.4f} {float(row['final_val_loss']):>10.4f}"
    )
print()
print("spearman(val loss, rank):", round(summary["spearman_valloss_vs_rank"], 3))
if summary["speedup_ratio_mean"]:
    print("steps-to-match speedup (widest vs narrowest):",
          round(summary["speedup_ratio_mean"], 1))
print(f"outputs in {run_dir}/")
