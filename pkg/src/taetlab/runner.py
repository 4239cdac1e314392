"""Experiment pipeline: data generation, training, evaluation, efficiency
prediction, reporting, and plot-data export.

Each stage is runnable standalone against the previous stage's files, so a
deleted downstream artifact can be regenerated without retraining. A run owns
its output directory through a lock file, and a manifest records the config
hash plus a checksum of every file the run produced. Timing lives only in the
epoch CSV's last column, the efficiency report and the manifest; everything
else is byte-reproducible from the config's seeds.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_hash, serialize_config
from .data import (
    Dataset,
    ImbalanceProfile,
    gen_gaussian_mixture,
    load_csv_dataset,
    load_external,
    split_per_class,
    subsample_longtail,
    write_csv_dataset,
)
from .efficiency import MemoryModel, TimeModel, measure_phase_costs, peak_memory, predict_eta, predicted_epoch_cost, predict_memory_saving
from .metrics import report, report_to_dict, write_per_class_csv, attack_batch, EVAL_BATCH
from .attacks import write_attack_csv
from .network import ModelSpec, init_model, load_checkpoint, save_checkpoint
from .training import STAGE_ADV, STAGE_CE, train_run

__all__ = [
    "MissingArtifactError",
    "OutputDirLockedError",
    "resolve_output_dir",
    "stage_gen_data",
    "stage_train",
    "stage_eval",
    "stage_efficiency",
    "stage_report",
    "stage_export_plots",
    "run_experiment",
]

OUTPUT_ROOT_ENV = "TAETLAB_OUTPUT_ROOT"

TRAIN_CSV = "train.csv"
TEST_CSV = "test.csv"
DATA_META = "data_meta.json"
EPOCHS_CSV = "epochs.csv"
CHECKPOINT = "model.ckpt"
METRICS_JSON = "metrics.json"
EFFICIENCY_JSON = "efficiency.json"
REPORT_JSON = "report.json"
PER_CLASS_CSV = "per_class_bars.csv"
CURVES_CSV = "training_curves.csv"
MANIFEST_JSON = "manifest.json"
CONFIG_JSON = "config.json"
LOCK_FILE = ".lock"


class MissingArtifactError(FileNotFoundError):
    """A stage prerequisite file is absent."""


class OutputDirLockedError(RuntimeError):
    """Another run holds the output directory."""


def resolve_output_dir(cfg: ExperimentConfig) -> Path:
    """Config output directory, optionally re-rooted by $TAETLAB_OUTPUT_ROOT."""
    out = Path(cfg.output.directory)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def _need(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"expected {path} (produced by the {producer} stage)")
    return path


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_json(path: Path, producer: str) -> dict:
    return json.loads(_need(path, producer).read_text())


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, dict]:
    """Construct (train, test) per the dataset section; test stays balanced."""
    d = cfg.dataset
    if d.source == "gaussian":
        pool = gen_gaussian_mixture(
            d.num_classes, d.feature_dim, d.class_separation,
            d.train_pool_per_class + d.test_per_class, d.seed,
        )
        source, test = split_per_class(pool, d.test_per_class, d.seed)
        profile = ImbalanceProfile(d.num_classes, d.train_pool_per_class, d.imbalance_ratio)
        train = subsample_longtail(source, profile, d.seed)
        mapping = {}
    elif d.source == "csv":
        train, mapping = load_csv_dataset(d.train_path)
        test, _ = load_csv_dataset(d.test_path)
    else:
        train, mapping = load_external(d.train_path, "idx", d.train_labels_path)
        test, _ = load_external(d.test_path, "idx", d.test_labels_path)
    counts = train.class_counts
    meta = {
        "num_classes": train.num_classes,
        "feature_dim": train.feature_dim,
        "train_class_counts": counts.tolist(),
        "test_class_counts": test.class_counts.tolist(),
        "imbalance_ratio": float(counts.max() / max(counts.min(), 1)),
        "test_distribution": "balanced" if test.class_counts.min() == test.class_counts.max() else "imbalanced",
        "label_mapping": {str(k): v for k, v in mapping.items()},
    }
    return train, test, meta


def stage_gen_data(cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    train, test, meta = build_datasets(cfg)
    write_csv_dataset(out / TRAIN_CSV, train)
    write_csv_dataset(out / TEST_CSV, test)
    _write_json(out / DATA_META, meta)


def _load_stage_data(out: Path) -> tuple[Dataset, Dataset, dict]:
    train, _ = load_csv_dataset(_need(out / TRAIN_CSV, "gen-data"))
    test, _ = load_csv_dataset(_need(out / TEST_CSV, "gen-data"))
    meta = _load_json(out / DATA_META, "gen-data")
    return train, test, meta


def _write_epochs_csv(path: Path, records) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,stage,loss,clean_ba,robust_ba,lr,seconds\n")
        for r in records:
            fh.write(f"{r.epoch},{r.stage},{r.loss!r},{r.clean_ba!r},{r.robust_ba!r},{r.lr!r},{r.seconds:.6f}\n")


def _read_epochs_csv(path: Path) -> list[dict]:
    rows = []
    lines = _need(path, "train").read_text().splitlines()
    header = lines[0].split(",")
    for line in lines[1:]:
        parts = line.split(",")
        row = dict(zip(header, parts))
        rows.append(row)
    return rows


def stage_train(cfg: ExperimentConfig, out: Path) -> None:
    train_data, test_data, _ = _load_stage_data(out)
    spec = ModelSpec(train_data.feature_dim, cfg.model.hidden_dims, train_data.num_classes)
    model = init_model(spec, cfg.model.seed)
    outcome = train_run(model, train_data, cfg.train, probe_data=test_data)
    _write_epochs_csv(out / EPOCHS_CSV, outcome.records)
    save_checkpoint(out / CHECKPOINT, outcome.model, outcome.state, cfg.train.total_epochs)


def stage_eval(cfg: ExperimentConfig, out: Path) -> None:
    _, test_data, _ = _load_stage_data(out)
    model, _, _ = load_checkpoint(_need(out / CHECKPOINT, "train"))
    tail = cfg.eval.tail_classes or None
    rep = report(model, test_data, list(cfg.eval.attacks), tail_classes=tail)
    payload = report_to_dict(rep)
    payload["config_hash"] = config_hash(cfg)
    _write_json(out / METRICS_JSON, payload)
    if "csv" in cfg.output.formats:
        for atk in cfg.eval.attacks:
            feats, labs = test_data.features, test_data.labels
            adv = np.concatenate(
                [attack_batch(model, feats[s : s + EVAL_BATCH], labs[s : s + EVAL_BATCH], atk, k)
                 for k, s in enumerate(range(0, len(test_data), EVAL_BATCH))]
            )
            write_attack_csv(out / f"attack_{atk.name}.csv", model, feats, labs, adv)


def stage_efficiency(cfg: ExperimentConfig, out: Path) -> None:
    train_data, _, _ = _load_stage_data(out)
    model, _, _ = load_checkpoint(_need(out / CHECKPOINT, "train"))
    rows = _read_epochs_csv(out / EPOCHS_CSV)

    costs = measure_phase_costs(model, train_data, cfg.train.attack.num_steps, batch_size=cfg.train.batch_size)
    t = cfg.train
    tm = TimeModel(n_ce=t.ce_epochs, n_at=t.total_epochs - t.ce_epochs, f=costs["f"], b=costs["b"], b_adv=costs["b_adv"], kappa=costs["kappa"])

    by_stage: dict[str, list[float]] = {STAGE_CE: [], STAGE_ADV: []}
    for row in rows:
        by_stage[row["stage"]].append(float(row["seconds"]))
    mean_secs = {k: (float(np.mean(v)) if v else None) for k, v in by_stage.items()}

    n_params = model.num_parameters()
    mm = MemoryModel(
        m_model=n_params * 8,
        m_data=t.batch_size * train_data.feature_dim * 8,
        m_grad=n_params * 8,
        batch=t.batch_size,
        channels=1,
        height=1,
        width=train_data.feature_dim,
        bytes_per_element=8,
    )
    ce_fraction = t.ce_epochs / t.total_epochs
    _write_json(
        out / EFFICIENCY_JSON,
        {
            "phase_costs_seconds": {"f": costs["f"], "b": costs["b"], "b_adv": costs["b_adv"]},
            "kappa": costs["kappa"],
            "rho": tm.rho,
            "gamma_time": tm.gamma_time,
            "predicted_eta": predict_eta(tm),
            "predicted_epoch_cost": {
                "CE": predicted_epoch_cost(tm, STAGE_CE),
                "ADV": predicted_epoch_cost(tm, STAGE_ADV),
            },
            "measured_mean_epoch_seconds": mean_secs,
            "memory": {
                "m_delta_bytes": mm.m_delta,
                "xi_bytes": predict_memory_saving(mm, ce_fraction),
                "ce_fraction": ce_fraction,
                "peak_bytes_adv_stage": peak_memory(mm),
                "peak_bytes_ce_stage": peak_memory(dataclasses.replace(mm, delta_flag=0)),
            },
        },
    )


def stage_report(cfg: ExperimentConfig, out: Path) -> None:
    metrics = _load_json(out / METRICS_JSON, "eval")
    efficiency = _load_json(out / EFFICIENCY_JSON, "efficiency")
    _write_json(out / REPORT_JSON, {
        "artifact_version": __version__,
        "config_hash": config_hash(cfg),
        "metrics": metrics,
        "efficiency": efficiency,
    })


def stage_export_plots(cfg: ExperimentConfig, out: Path) -> None:
    metrics = _load_json(out / METRICS_JSON, "eval")
    meta = _load_json(out / DATA_META, "gen-data")
    rows = _read_epochs_csv(out / EPOCHS_CSV)

    attack_names = sorted(metrics["balanced_robustness"])
    with open(out / PER_CLASS_CSV, "w") as fh:
        header = ["class", "train_count", "clean_recall"] + [f"robust_recall_{a}" for a in attack_names]
        fh.write(",".join(header) + "\n")
        for c in range(metrics["num_classes"]):
            vals = [str(c), str(meta["train_class_counts"][c])]
            clean = metrics["per_class_clean_recall"][c]
            vals.append("" if clean is None else repr(clean))
            for a in attack_names:
                v = metrics["per_class_robust_recall"][a][c]
                vals.append("" if v is None else repr(v))
            fh.write(",".join(vals) + "\n")

    with open(out / CURVES_CSV, "w") as fh:
        fh.write("epoch,stage,clean_ba,robust_ba\n")
        for row in rows:
            fh.write(f"{row['epoch']},{row['stage']},{row['clean_ba']},{row['robust_ba']}\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


STAGES = (
    ("gen-data", stage_gen_data),
    ("train", stage_train),
    ("eval", stage_eval),
    ("efficiency", stage_efficiency),
    ("report", stage_report),
    ("export-plots", stage_export_plots),
)


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Execute every stage in order and write the run manifest.

    On mid-run failure, partial outputs stay in place and the manifest names
    the failed stage; re-running with the same config and seeds reproduces all
    non-timing outputs byte-identically.
    """
    out = resolve_output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_FILE
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputDirLockedError(f"{out} is locked by another run (remove {lock} if stale)") from None
    os.close(fd)

    (out / CONFIG_JSON).write_text(serialize_config(cfg))
    t_start = time.perf_counter()
    train_seconds = 0.0
    status, failure_stage, error = "ok", None, None
    try:
        for name, stage in STAGES:
            t0 = time.perf_counter()
            try:
                stage(cfg, out)
            except Exception as exc:
                status, failure_stage, error = "failed", name, exc
                break
            if name == "train":
                train_seconds = time.perf_counter() - t0
    finally:
        files = sorted(
            p.name for p in out.iterdir()
            if p.is_file() and p.name not in (MANIFEST_JSON, LOCK_FILE)
        )
        _write_json(out / MANIFEST_JSON, {
            "artifact_version": __version__,
            "config_hash": config_hash(cfg),
            "status": status,
            "failure_stage": failure_stage,
            "files": {name: _sha256(out / name) for name in files},
            "wall_clock": {
                "total_seconds": time.perf_counter() - t_start,
                "train_seconds": train_seconds,
            },
        })
        os.unlink(lock)
    if error is not None:
        raise error
    return out
