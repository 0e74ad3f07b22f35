"""Run configuration: TOML file merged over defaults.

Unknown sections or keys are errors. Keys whose default depends on another
choice (beta on the objective, tau on the statistic, the learning rate on
the objective) resolve to concrete numbers, so the echoed config fully
describes the run.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import fields

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InvalidConfig
from .gate import DEFAULT_TAU, GateConfig, Statistic
from .lm.data import SyntheticSpec
from .lm.train import DEFAULT_LR, OptimizerConfig
from .objectives import DEFAULT_BETA, LossConfig, Objective

EXPERIMENTS = ("toy", "strict-vs-loose", "train", "sweep", "sweep-tau", "sweep-alpha", "massdyn", "gradcheck", "compare")

# None marks values resolved from other keys.
DEFAULTS = {
    "experiment": "",
    "seed": 0,
    "threads": 1,
    "output_dir": "runs/out",
    "objective": {"name": "DPO", "gated": False, "beta": None, "beta_in_sigmoid": False},
    "gate": {"statistic": "seq", "tau": None, "alpha": 50.0, "q": 0.10},
    "optimizer": {"name": "sgd", "lr": None, "batch_size": 4, "epochs": 5, "decay": 0.99, "eps": 1e-8, "shuffle": True},
    "dataset": {
        "path": "",
        "eval_path": "",
        **{f.name: f.default for f in fields(SyntheticSpec)},
        "sft_epochs": 3,
        "sft_lr": 0.5,
    },
    "toy": {"scenarios": ["A", "B", "C", "D", "E"], "d": 8},
    "sweep": {"param": "tau", "tau_grid": [0.001, 0.05, 0.10, 0.15, 0.20], "alpha_grid": [10.0, 30.0, 50.0, 70.0, 90.0]},
    "massdyn": {
        "variants": "",
        "reference": "",
        "policies": {},
        "canonical_only": False,
        "destructive_others": -5.0,
    },
    "gradcheck": {"n_pairs": 1000, "h": 1e-5, "param_h": 1e-4, "non_detached": False, "single_pair": -1},
    "compare": {"runs": {}},
}

# Sections whose values are free-form tables rather than fixed keys.
_OPEN_TABLES = {("massdyn", "policies"), ("compare", "runs")}


def _merge(base: dict, over: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = ".".join((*path, k))
        if k not in base:
            raise InvalidConfig(f"unknown config key {where!r}")
        if isinstance(base[k], dict) and (*path, k) not in _OPEN_TABLES:
            if not isinstance(v, dict):
                raise InvalidConfig(f"config key {where!r} must be a table")
            out[k] = _merge(base[k], v, (*path, k))
        else:
            out[k] = v
    return out


def load(path=None, overrides: dict | None = None) -> dict:
    raw = {}
    if path:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise InvalidConfig(f"{path}: {e}") from e
    cfg = _merge(DEFAULTS, raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    return resolve(cfg)


def resolve(cfg: dict) -> dict:
    """Fill dependent defaults and validate by building the typed configs."""
    cfg = copy.deepcopy(cfg)
    if cfg["experiment"] and cfg["experiment"] not in EXPERIMENTS:
        raise InvalidConfig(f"unknown experiment {cfg['experiment']!r}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise InvalidConfig("seed must be a non-negative integer")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise InvalidConfig("threads must be a positive integer")
    try:
        obj = Objective(cfg["objective"]["name"])
        stat = Statistic(cfg["gate"]["statistic"])
    except ValueError as e:
        raise InvalidConfig(str(e)) from e
    if cfg["objective"]["beta"] is None:
        cfg["objective"]["beta"] = DEFAULT_BETA[obj]
    if cfg["gate"]["tau"] is None:
        cfg["gate"]["tau"] = DEFAULT_TAU[stat]
    if cfg["optimizer"]["lr"] is None:
        cfg["optimizer"]["lr"] = DEFAULT_LR[obj]
    if cfg["sweep"]["param"] not in ("tau", "alpha"):
        raise InvalidConfig("sweep.param must be 'tau' or 'alpha'")
    try:
        loss_config(cfg)
        optimizer_config(cfg)
        synthetic_spec(cfg).check()
    except ValueError as e:
        raise InvalidConfig(str(e)) from e
    return cfg


def gate_config(cfg: dict) -> GateConfig:
    g = cfg["gate"]
    return GateConfig(Statistic(g["statistic"]), float(g["tau"]), float(g["alpha"]), float(g["q"]))


def loss_config(cfg: dict) -> LossConfig:
    o = cfg["objective"]
    return LossConfig(Objective(o["name"]), bool(o["gated"]), float(o["beta"]), gate_config(cfg), bool(o["beta_in_sigmoid"]))


def optimizer_config(cfg: dict) -> OptimizerConfig:
    o = cfg["optimizer"]
    return OptimizerConfig(
        o["name"], float(o["lr"]), int(o["batch_size"]), int(o["epochs"]), float(o["decay"]), float(o["eps"]), bool(o["shuffle"])
    )


def synthetic_spec(cfg: dict) -> SyntheticSpec:
    d = cfg["dataset"]
    return SyntheticSpec(**{f.name: d[f.name] for f in fields(SyntheticSpec)})


def dumps(cfg: dict) -> str:
    return tomli_w.dumps(cfg)
