"""Experiment configuration: a YAML file with fixed sections and keys.

Densities are written in veh/km in the file and converted to veh/m here;
everything downstream is SI. Missing keys take the defaults below, unknown
keys are rejected with their line number.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..arz_sim import SimConfig
from ..neural_op.training import TrainConfig
from ..traffic_model import ConfigurationError, ModelParams, equilibrium


@dataclass
class ModelSection:
    v_f: float = 40.0
    rho_m_veh_km: float = 160.0
    gamma: float = 1.0
    tau: float = 60.0
    L: float = 500.0


@dataclass
class EquilibriumSection:
    rho_star_veh_km: float = 120.0


@dataclass
class SimSection:
    nx: int = 100
    t_end: float = 300.0
    cfl: float = 0.8
    mode: str = "nonlinear"
    record_every: float = 1.0


@dataclass
class InitialSection:
    amplitude: float = 0.1
    wavenumber: int = 3


@dataclass
class KernelSection:
    n: int = 101
    residual_tol: float = 1e-6


@dataclass
class ControllerSection:
    simulate: str = "backstepping"
    compare: list = field(default_factory=lambda: ["backstepping", "no_kernels", "no_law", "pi"])
    # Tuned by coarse grid search (bench.experiments.tune_pi) on the default scenario.
    pi_kp: float = -0.4
    pi_ki: float = 0.0


@dataclass
class DatasetSection:
    lambda2_min: float = 5.0
    lambda2_max: float = 25.0
    n_samples: int = 900
    kernel_n: int = 51
    n_val: int = 100


@dataclass
class TrainingSection:
    width: int = 64
    depth: int = 3
    p: int = 32
    lr: float = 1e-3
    lr_final: float = 1e-4
    batch_samples: int = 16
    batch_points: int = 256
    epochs: int = 2000
    patience: int = 100


@dataclass
class ModelsSection:
    kernel_model: str = "models/kernel_operator.bin"
    law_model: str = "models/law_operator.bin"


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    equilibrium: EquilibriumSection = field(default_factory=EquilibriumSection)
    sim: SimSection = field(default_factory=SimSection)
    initial: InitialSection = field(default_factory=InitialSection)
    kernels: KernelSection = field(default_factory=KernelSection)
    controllers: ControllerSection = field(default_factory=ControllerSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    models: ModelsSection = field(default_factory=ModelsSection)
    seed: int = 0
    out: str = "out"

    # -- derived SI objects --------------------------------------------------
    def params(self) -> ModelParams:
        m = self.model
        return ModelParams(v_f=m.v_f, rho_m=m.rho_m_veh_km / 1000.0, gamma=m.gamma, tau=m.tau, L=m.L)

    def rho_star(self) -> float:
        return self.equilibrium.rho_star_veh_km / 1000.0

    def sim_config(self, rho_star: float | None = None) -> SimConfig:
        params = self.params()
        eq = equilibrium(self.rho_star() if rho_star is None else rho_star, params)
        s = self.sim
        return SimConfig(params, eq, nx=s.nx, t_end=s.t_end, cfl=s.cfl, mode=s.mode,
                         record_every=s.record_every)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **dataclasses.asdict(self.training))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


class ConfigError(ConfigurationError):
    pass


def _key_lines(text: str) -> dict[tuple[str, ...], int]:
    """1-based line of every mapping key, addressed by its path."""
    lines: dict[tuple[str, ...], int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = (*path, str(k.value))
                lines[key] = k.start_mark.line + 1
                walk(v, key)

    walk(yaml.compose(text), ())
    return lines


def _coerce(value: Any, default: Any, where: str):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {value!r}")
    return value


def config_from_dict(data: dict | None, lines: dict | None = None) -> ExperimentConfig:
    lines = lines or {}
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping of sections")
    cfg = ExperimentConfig()

    def where(path):
        line = lines.get(path)
        name = ".".join(path)
        return f"key '{name}' (line {line})" if line else f"key '{name}'"

    for key, value in data.items():
        top = getattr(cfg, key, None) if key in {f.name for f in dataclasses.fields(cfg)} else None
        if top is None and key not in ("seed", "out"):
            raise ConfigError(f"unknown {where((key,))}")
        if dataclasses.is_dataclass(top):
            if not isinstance(value, dict):
                raise ConfigError(f"{where((key,))}: expected a mapping")
            names = {f.name for f in dataclasses.fields(top)}
            for sub, sval in value.items():
                if sub not in names:
                    raise ConfigError(f"unknown {where((key, sub))}")
                setattr(top, sub, _coerce(sval, getattr(top, sub), where((key, sub))))
        else:
            setattr(cfg, key, _coerce(value, getattr(cfg, key), where((key,))))
    validate(cfg, where)
    return cfg


def validate(cfg: ExperimentConfig, where=lambda p: ".".join(p)):
    try:
        cfg.params()
    except ConfigurationError as exc:
        raise ConfigError(f"section 'model': {exc}") from exc
    try:
        cfg.sim_config()
    except ConfigurationError as exc:
        raise ConfigError(f"{where(('equilibrium', 'rho_star_veh_km'))} or section 'sim': {exc}") from exc
    known = {"backstepping", "no_kernels", "no_law", "pi", "zero"}
    if cfg.controllers.simulate not in known:
        raise ConfigError(f"{where(('controllers', 'simulate'))}: unknown controller {cfg.controllers.simulate!r}")
    for c in cfg.controllers.compare:
        if c not in known:
            raise ConfigError(f"{where(('controllers', 'compare'))}: unknown controller {c!r}")
    if cfg.dataset.lambda2_min >= cfg.dataset.lambda2_max:
        raise ConfigError(f"{where(('dataset', 'lambda2_min'))}: lambda2_min must be < lambda2_max")
    if cfg.kernels.n < 5:
        raise ConfigError(f"{where(('kernels', 'n'))}: need at least 5 nodes per side")


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(text) if data else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        at = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"malformed YAML{at}: {getattr(exc, 'problem', exc)}") from exc
    return config_from_dict(data, lines)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
