"""Train both DeepONet operators on 900 lambda2 instances and compare all
controllers on the default scenario.

The first run takes roughly twelve minutes on one CPU core; trained
models are cached in .model_cache/ next to this directory and reused.

    python3 demos/operator_benchmark.py
"""

from pathlib import Path

from arzcontrol.bench.config import ExperimentConfig
from arzcontrol.bench.experiments import run_comparison, trained_operator

cache = Path(__file__).resolve().parents[1] / ".model_cache"
cfg = ExperimentConfig()
models = {}
for kind in ("kernel", "law"):
    models[kind], info = trained_operator(cfg, kind, cache)
    print(f"{kind} operator: best val loss {info['best_val_loss']:.2e} after {info['epochs_run']} epochs "
          f"({info['dataset_seconds'] + info['train_seconds']:.0f} s to build)")

report, trajs = run_comparison(cfg, models["kernel"], models["law"])
print()
print(report.table())
