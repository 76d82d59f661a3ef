"""Command-line entry point: ``arzcontrol <command> [--config FILE] [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 model or dataset file error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ..arz_sim import SimulationError
from ..kernel_solver import KernelSolverError, export_kernels_csv, kernel_residual, solve_kernels
from ..neural_op.datasets import DatasetError, load_dataset, save_dataset
from ..neural_op.serialization import ModelFormatError, load_model, model_hash, save_model
from ..neural_op.training import TrainingDivergence, measure_eps, train
from ..traffic_model import ConfigurationError, linearization, rho_of_lambda2
from .config import ExperimentConfig, load_config
from .experiments import ControllerFactory, build_dataset, run_comparison
from .plots import write_overlay_script, write_surface_script

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICS = 3
EXIT_MODEL_IO = 4

log = logging.getLogger("arzcontrol")


class ResidualTooLarge(RuntimeError):
    pass


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_path(cfg: ExperimentConfig, kind: str) -> Path:
    rel = Path(cfg.models.kernel_model if kind == "kernel" else cfg.models.law_model)
    return rel if rel.is_absolute() else Path(cfg.out) / rel


def _write_summary(out: Path, command: str, payload: dict) -> Path:
    path = out / f"summary_{command}.json"
    path.write_text(json.dumps({"command": command, **payload}, indent=1, default=float))
    return path


def cmd_solve_kernels(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    params = cfg.params()
    eq, ch = linearization(cfg.rho_star(), params)
    t0 = time.perf_counter()
    k = solve_kernels(ch, params.L, cfg.kernels.n)
    elapsed = time.perf_counter() - t0
    rep = kernel_residual(k)
    export_kernels_csv(k, out / "kernels.csv")
    ok = rep.res_kw <= cfg.kernels.residual_tol and rep.res_kv <= cfg.kernels.residual_tol and rep.res_bc <= 1e-12
    _write_summary(out, "solve-kernels", {
        "lambda1": ch.lambda1, "lambda2": ch.lambda2, "r": ch.r, "n": k.n, "h": k.h,
        "res_kw": rep.res_kw, "res_kv": rep.res_kv, "res_bc": rep.res_bc,
        "residual_tol": cfg.kernels.residual_tol, "passed": ok, "solve_seconds": elapsed,
        "kernels_csv": "kernels.csv",
    })
    print(f"lambda1={ch.lambda1:g} lambda2={ch.lambda2:g} n={k.n} res_kw={rep.res_kw:.3e} "
          f"res_kv={rep.res_kv:.3e} res_bc={rep.res_bc:.3e} ({elapsed * 1e3:.1f} ms)")
    if not ok:
        raise ResidualTooLarge(f"kernel residuals above tolerance {cfg.kernels.residual_tol:g}: {rep}")
    return EXIT_OK


def _dataset_dir(cfg: ExperimentConfig, kind: str) -> Path:
    return Path(cfg.out) / "datasets" / kind


def cmd_gen_dataset(cfg: ExperimentConfig, kind: str) -> int:
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    ds = build_dataset(cfg, kind)
    directory = save_dataset(ds, _dataset_dir(cfg, kind))
    _write_summary(out, f"gen-dataset-{kind}", {
        "kind": ds.kind, "directory": str(directory), "n_samples": int(ds.lambda2.size),
        "lambda2_span": [float(ds.lambda2.min()), float(ds.lambda2.max())],
        "config_hash": ds.config_hash, "seconds": time.perf_counter() - t0,
    })
    print(f"{ds.kind}: {ds.lambda2.size} samples, lambda2 in [{ds.lambda2.min():g}, {ds.lambda2.max():g}] -> {directory}")
    return EXIT_OK


def _load_dataset(cfg: ExperimentConfig, kind: str):
    directory = _dataset_dir(cfg, kind)
    if not (directory / "manifest.json").exists():
        raise DatasetError(f"no {kind} dataset in {directory}; run `gen-dataset --kind {kind}` first")
    return load_dataset(directory)


def cmd_train(cfg: ExperimentConfig, kind: str) -> int:
    out = _out_dir(cfg)
    ds = _load_dataset(cfg, kind)
    tcfg = cfg.train_config()
    t0 = time.perf_counter()
    model, hist = train(ds, tcfg, callback=lambda e, a, b: log.info("epoch %d train %.3e val %.3e", e, a, b)
                        if e % 100 == 0 else None)
    seconds = time.perf_counter() - t0
    path = save_model(model, _model_path(cfg, kind))
    hist_path = out / f"train_history_{kind}.csv"
    with hist_path.open("w") as fh:
        fh.write("epoch,train_loss,val_loss,best_val\n")
        for row in zip(hist.epoch, hist.train_loss, hist.val_loss, hist.best_val):
            fh.write(",".join(repr(float(x)) if i else str(x) for i, x in enumerate(row)) + "\n")
    digest = model_hash(model)
    _write_summary(out, f"train-{kind}", {
        "model": str(path), "model_sha256": digest, "dataset_hash": ds.config_hash,
        "best_epoch": hist.best_epoch, "best_val_loss": hist.best_val[-1], "epochs_run": len(hist.epoch),
        "seconds": seconds, "hyperparams": tcfg.to_dict(),
    })
    print(f"trained {ds.kind} in {seconds:.1f} s, best val loss {hist.best_val[-1]:.3e} -> {path} ({digest[:12]})")
    return EXIT_OK


def _law_oracle(cfg: ExperimentConfig):
    fac_cfg = cfg

    def oracle(lam: float):
        sim_cfg = fac_cfg.sim_config(float(rho_of_lambda2(lam, fac_cfg.params())))
        traj = ControllerFactory(fac_cfg, sim_cfg).run("backstepping")
        return traj.t, traj.U

    return oracle


def eps_test_grid(cfg: ExperimentConfig, n: int = 21) -> np.ndarray:
    """Held-out lambda2 values: midpoints between an n+1 point sweep."""
    edges = np.linspace(cfg.dataset.lambda2_min, cfg.dataset.lambda2_max, n + 1)
    return 0.5 * (edges[:-1] + edges[1:])


def cmd_measure_eps(cfg: ExperimentConfig, kind: str, n_test: int) -> int:
    out = _out_dir(cfg)
    mkind = "kernel_operator" if kind == "kernel" else "law_operator"
    model = load_model(_model_path(cfg, kind), kind=mkind)
    grid = eps_test_grid(cfg, n_test)
    params = cfg.params()
    if kind == "kernel":
        def oracle(lam):
            _, ch = linearization(float(rho_of_lambda2(lam, params)), params)
            return solve_kernels(ch, params.L, cfg.dataset.kernel_n)
    else:
        oracle = _law_oracle(cfg)
    rep = measure_eps(model, grid, oracle)
    with (out / f"eps_{kind}.csv").open("w") as fh:
        fh.write("lambda2,eps_sup\n")
        for lam, e in rep.per_lambda2:
            fh.write(f"{lam!r},{e!r}\n")
    _write_summary(out, f"measure-eps-{kind}", {"eps_sup": rep.eps_sup, "eps_l2": rep.eps_l2,
                                                "test_lambda2": grid.tolist()})
    print(f"{mkind}: eps_sup={rep.eps_sup:.3e} eps_l2={rep.eps_l2:.3e} over {grid.size} held-out lambda2")
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, controller: str | None) -> int:
    out = _out_dir(cfg)
    name = controller or cfg.controllers.simulate
    sim_cfg = cfg.sim_config()
    fac = ControllerFactory(cfg, sim_cfg)
    if name == "no_kernels":
        fac._models["no_kernels"] = load_model(_model_path(cfg, "kernel"), kind="kernel_operator")
    elif name == "no_law":
        fac._models["no_law"] = load_model(_model_path(cfg, "law"), kind="law_operator")
    traj = fac.run(name)
    paths = traj.export_csv(out, prefix=f"{name}_")
    script = write_surface_script(out, f"{name}_", f"{name} controller")
    _write_summary(out, f"simulate-{name}", {
        "controller": name, "rho_star": sim_cfg.eq.rho_star, "v_star": sim_cfg.eq.v_star,
        "initial_norm": float(traj.norm[0]), "final_norm": float(traj.norm[-1]),
        "final_rho_range": [float(traj.rho[-1].min()), float(traj.rho[-1].max())],
        "final_v_range": [float(traj.v[-1].min()), float(traj.v[-1].max())],
        "steps": traj.n_steps, "warnings": traj.warnings,
        "files": {k: p.name for k, p in paths.items()} | {"plot": script.name},
    })
    print(f"{name}: |(w,v)| {traj.norm[0]:.3e} -> {traj.norm[-1]:.3e} over {sim_cfg.t_end:g} s")
    for w in traj.warnings:
        print(f"warning: {w}")
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    names = list(cfg.controllers.compare)
    km = load_model(_model_path(cfg, "kernel"), kind="kernel_operator") if "no_kernels" in names else None
    lm = load_model(_model_path(cfg, "law"), kind="law_operator") if "no_law" in names else None
    report, trajs = run_comparison(cfg, km, lm, names=names)
    for n, tr in trajs.items():
        tr.export_csv(out, prefix=f"{n}_")
    report.to_csv(out / "comparison.csv")
    write_overlay_script(out, list(trajs))
    _write_summary(out, "compare", report.to_dict())
    print(report.table())
    return EXIT_OK


def _common(parser: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="YAML experiment configuration")
    parser.add_argument("--seed", type=int, default=default, help="override the configured seed")
    parser.add_argument("--out", default=default, help="output directory (overrides config)")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arzcontrol", description=__doc__.splitlines()[0])
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve-kernels", help="solve the gain kernels and report residuals")
    _common(p, True)
    for name, hlp in (("gen-dataset", "generate an operator training set"),
                      ("train", "train a DeepONet on a generated dataset")):
        p = sub.add_parser(name, help=hlp)
        _common(p, True)
        p.add_argument("--kind", choices=["kernel", "law"], required=True)
    p = sub.add_parser("measure-eps", help="measure operator error against its oracle")
    _common(p, True)
    p.add_argument("--kind", choices=["kernel", "law"], required=True)
    p.add_argument("--n-test", type=int, default=21)
    p = sub.add_parser("simulate", help="run one closed loop and write CSVs + plot script")
    _common(p, True)
    p.add_argument("--controller", choices=["backstepping", "no_kernels", "no_law", "pi", "zero"])
    p = sub.add_parser("compare", help="run all controllers and write the comparison table")
    _common(p, True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        if args.command == "solve-kernels":
            return cmd_solve_kernels(cfg)
        if args.command == "gen-dataset":
            return cmd_gen_dataset(cfg, args.kind)
        if args.command == "train":
            return cmd_train(cfg, args.kind)
        if args.command == "measure-eps":
            return cmd_measure_eps(cfg, args.kind, args.n_test)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.controller)
        if args.command == "compare":
            return cmd_compare(cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, KernelSolverError, TrainingDivergence, ResidualTooLarge) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except (ModelFormatError, DatasetError) as exc:
        print(f"model/dataset file error: {exc}", file=sys.stderr)
        return EXIT_MODEL_IO
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
