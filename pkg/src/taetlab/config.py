"""Experiment configuration: parsing, strict validation, canonical
serialization, and the run manifest.

Configs are JSON with five sections (dataset, model, train, eval, output).
Validation is strict: unknown keys are hard errors (a silently ignored typo
would corrupt a sweep), every error names the offending field path, and all
randomness must come from seeds named in the config.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .attacks import AttackConfig, CwConfig
from .losses import HelWeights
from .metrics import EvalAttack
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "DatasetConfig",
    "ModelConfig",
    "EvalConfig",
    "OutputConfig",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "config_to_dict",
    "serialize_config",
    "config_hash",
]


class ConfigError(ValueError):
    """Invalid experiment config; the message carries the field path."""


def _expect(mapping: dict, path: str, required: dict, optional: dict | None = None) -> dict:
    """Validate keys/types of one config section and return defaults-filled values."""
    optional = optional or {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected an object, got {type(mapping).__name__}")
    unknown = set(mapping) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    out = {}
    for key, check in required.items():
        if key not in mapping:
            raise ConfigError(f"{path}.{key}: missing required key")
        out[key] = check(mapping[key], f"{path}.{key}")
    for key, (check, default) in optional.items():
        out[key] = check(mapping[key], f"{path}.{key}") if key in mapping else default
    return out


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _boolean(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    return value


def _string(value, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _int_list(value, path: str) -> tuple[int, ...]:
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list of integers, got {value!r}")
    return tuple(_integer(v, f"{path}[{i}]") for i, v in enumerate(value))


@dataclass(frozen=True)
class DatasetConfig:
    source: str
    seed: int
    num_classes: int = 0
    feature_dim: int = 0
    class_separation: float = 0.0
    train_pool_per_class: int = 0
    test_per_class: int = 0
    imbalance_ratio: float = 1.0
    train_path: str = ""
    test_path: str = ""
    train_labels_path: str = ""
    test_labels_path: str = ""


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: tuple[int, ...]
    seed: int


@dataclass(frozen=True)
class EvalConfig:
    seed: int
    tail_classes: int
    attacks: tuple[EvalAttack, ...]


@dataclass(frozen=True)
class OutputConfig:
    directory: str
    formats: tuple[str, ...] = ("json", "csv")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    model: ModelConfig
    train: TrainConfig
    eval: EvalConfig
    output: OutputConfig


def _parse_dataset(raw, path: str) -> DatasetConfig:
    head = _expect(
        raw,
        path,
        required={"source": _string, "seed": _integer},
        optional={k: (lambda v, p: v, None) for k in (
            "num_classes", "feature_dim", "class_separation", "train_pool_per_class",
            "test_per_class", "imbalance_ratio", "train_path", "test_path",
            "train_labels_path", "test_labels_path",
        )},
    )
    source = head["source"]
    if source == "gaussian":
        vals = _expect(
            raw,
            path,
            required={
                "source": _string,
                "seed": _integer,
                "num_classes": _integer,
                "feature_dim": _integer,
                "class_separation": _number,
                "train_pool_per_class": _integer,
                "test_per_class": _integer,
            },
            optional={"imbalance_ratio": (_number, 1.0)},
        )
        return DatasetConfig(**vals)
    if source == "csv":
        vals = _expect(
            raw,
            path,
            required={"source": _string, "seed": _integer, "train_path": _string, "test_path": _string},
        )
        return DatasetConfig(**vals)
    if source == "idx":
        vals = _expect(
            raw,
            path,
            required={
                "source": _string,
                "seed": _integer,
                "train_path": _string,
                "train_labels_path": _string,
                "test_path": _string,
                "test_labels_path": _string,
            },
        )
        return DatasetConfig(**vals)
    raise ConfigError(f"{path}.source: expected one of 'gaussian', 'csv', 'idx', got {source!r}")


def _parse_attack_config(raw, path: str, default_steps: int | None = None) -> AttackConfig:
    vals = _expect(
        raw,
        path,
        required={"epsilon": _number, "step_size": _number, "num_steps": _integer},
        optional={"random_init": (_boolean, True), "clip_min": (_number, 0.0), "clip_max": (_number, 1.0)},
    )
    try:
        return AttackConfig(**vals)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_eval_attack(raw, path: str, seed: int) -> EvalAttack:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    kind = raw.get("kind")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{path}.name: every eval attack needs a non-empty name")
    body = {k: v for k, v in raw.items() if k not in ("name", "kind")}
    if kind == "fgsm":
        vals = _expect(body, path, required={"epsilon": _number}, optional={"clip_min": (_number, 0.0), "clip_max": (_number, 1.0)})
        cfg = AttackConfig(epsilon=vals["epsilon"], step_size=max(vals["epsilon"], 1e-12), num_steps=1,
                           random_init=False, clip_min=vals["clip_min"], clip_max=vals["clip_max"])
        return EvalAttack(name, "fgsm", cfg, seed)
    if kind == "pgd":
        return EvalAttack(name, "pgd", _parse_attack_config(body, path), seed)
    if kind == "cw":
        vals = _expect(
            body,
            path,
            required={"c_const": _number, "num_iters": _integer, "step_size": _number},
            optional={"kappa": (_number, 0.0), "clip_min": (_number, 0.0), "clip_max": (_number, 1.0)},
        )
        try:
            return EvalAttack(name, "cw", CwConfig(**vals), seed)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}.kind: expected one of 'fgsm', 'pgd', 'cw', got {kind!r}")


def parse_config(raw: dict) -> ExperimentConfig:
    top = _expect(
        raw,
        "config",
        required={
            "dataset": lambda v, p: v,
            "model": lambda v, p: v,
            "train": lambda v, p: v,
            "eval": lambda v, p: v,
            "output": lambda v, p: v,
        },
    )
    dataset = _parse_dataset(top["dataset"], "config.dataset")

    model_vals = _expect(top["model"], "config.model", required={"hidden_dims": _int_list, "seed": _integer})
    model = ModelConfig(**model_vals)

    train_raw = top["train"]
    tvals = _expect(
        train_raw,
        "config.train",
        required={
            "method": _string,
            "total_epochs": _integer,
            "ce_epochs": _integer,
            "batch_size": _integer,
            "seed": _integer,
            "attack": lambda v, p: v,
        },
        optional={
            "learning_rate": (_number, 0.1),
            "momentum": (_number, 0.9),
            "weight_decay": (_number, 5e-4),
            "lr_milestones": (_int_list, ()),
            "lr_decay_factor": (_number, 10.0),
            "hel_weights": (lambda v, p: v, None),
            "bsl_tau": (_number, 1.0),
            "probe_size": (_integer, 128),
            "probe_steps": (_integer, 5),
        },
    )
    attack = _parse_attack_config(tvals.pop("attack"), "config.train.attack")
    hw_raw = tvals.pop("hel_weights")
    if hw_raw is None:
        hel_weights = HelWeights()
    else:
        hvals = _expect(hw_raw, "config.train.hel_weights", required={"bcl": _number, "hdl": _number, "rcel": _number})
        try:
            hel_weights = HelWeights(hvals["bcl"], hvals["hdl"], hvals["rcel"])
        except ValueError as exc:
            raise ConfigError(f"config.train.hel_weights: {exc}") from exc
    try:
        train = TrainConfig(attack=attack, hel_weights=hel_weights, **tvals)
    except ValueError as exc:
        raise ConfigError(f"config.train: {exc}") from exc

    evals = _expect(
        top["eval"],
        "config.eval",
        required={"seed": _integer, "attacks": lambda v, p: v},
        optional={"tail_classes": (_integer, 0)},
    )
    if not isinstance(evals["attacks"], list):
        raise ConfigError("config.eval.attacks: expected a list")
    attacks = tuple(
        _parse_eval_attack(a, f"config.eval.attacks[{i}]", evals["seed"]) for i, a in enumerate(evals["attacks"])
    )
    names = [a.name for a in attacks]
    if len(set(names)) != len(names):
        raise ConfigError(f"config.eval.attacks: duplicate names in {names}")
    eval_cfg = EvalConfig(seed=evals["seed"], tail_classes=evals["tail_classes"], attacks=attacks)

    out_vals = _expect(
        top["output"],
        "config.output",
        required={"directory": _string},
        optional={"formats": (lambda v, p: tuple(_string(s, p) for s in v), ("json", "csv"))},
    )
    output = OutputConfig(**out_vals)
    return ExperimentConfig(dataset=dataset, model=model, train=train, eval=eval_cfg, output=output)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(raw)


def _dataset_to_dict(d: DatasetConfig) -> dict:
    if d.source == "gaussian":
        out = {
            "source": d.source,
            "seed": d.seed,
            "num_classes": d.num_classes,
            "feature_dim": d.feature_dim,
            "class_separation": d.class_separation,
            "train_pool_per_class": d.train_pool_per_class,
            "test_per_class": d.test_per_class,
            "imbalance_ratio": d.imbalance_ratio,
        }
    elif d.source == "csv":
        out = {"source": d.source, "seed": d.seed, "train_path": d.train_path, "test_path": d.test_path}
    else:
        out = {
            "source": d.source,
            "seed": d.seed,
            "train_path": d.train_path,
            "train_labels_path": d.train_labels_path,
            "test_path": d.test_path,
            "test_labels_path": d.test_labels_path,
        }
    return out


def _eval_attack_to_dict(a: EvalAttack) -> dict:
    if a.kind == "fgsm":
        return {"name": a.name, "kind": "fgsm", "epsilon": a.config.epsilon,
                "clip_min": a.config.clip_min, "clip_max": a.config.clip_max}
    if a.kind == "pgd":
        c = a.config
        return {"name": a.name, "kind": "pgd", "epsilon": c.epsilon, "step_size": c.step_size,
                "num_steps": c.num_steps, "random_init": c.random_init,
                "clip_min": c.clip_min, "clip_max": c.clip_max}
    c = a.config
    return {"name": a.name, "kind": "cw", "c_const": c.c_const, "kappa": c.kappa,
            "num_iters": c.num_iters, "step_size": c.step_size,
            "clip_min": c.clip_min, "clip_max": c.clip_max}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    t = cfg.train
    return {
        "dataset": _dataset_to_dict(cfg.dataset),
        "model": {"hidden_dims": list(cfg.model.hidden_dims), "seed": cfg.model.seed},
        "train": {
            "method": t.method,
            "total_epochs": t.total_epochs,
            "ce_epochs": t.ce_epochs,
            "batch_size": t.batch_size,
            "seed": t.seed,
            "learning_rate": t.learning_rate,
            "momentum": t.momentum,
            "weight_decay": t.weight_decay,
            "lr_milestones": list(t.lr_milestones),
            "lr_decay_factor": t.lr_decay_factor,
            "attack": {
                "epsilon": t.attack.epsilon,
                "step_size": t.attack.step_size,
                "num_steps": t.attack.num_steps,
                "random_init": t.attack.random_init,
                "clip_min": t.attack.clip_min,
                "clip_max": t.attack.clip_max,
            },
            "hel_weights": {
                "bcl": t.hel_weights.weight_bcl,
                "hdl": t.hel_weights.weight_hdl,
                "rcel": t.hel_weights.weight_rcel,
            },
            "bsl_tau": t.bsl_tau,
            "probe_size": t.probe_size,
            "probe_steps": t.probe_steps,
        },
        "eval": {
            "seed": cfg.eval.seed,
            "tail_classes": cfg.eval.tail_classes,
            "attacks": [_eval_attack_to_dict(a) for a in cfg.eval.attacks],
        },
        "output": {"directory": cfg.output.directory, "formats": list(cfg.output.formats)},
    }


def serialize_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, indent=2) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()
