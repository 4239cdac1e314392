"""Command-line entry points for the experiment pipeline.

Exit codes: 0 on success, 2 on configuration errors, 3 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .efficiency import TimeModel, eta_from_components, predict_eta
from .runner import (
    MissingArtifactError,
    OutputDirLockedError,
    resolve_output_dir,
    run_experiment,
    stage_efficiency,
    stage_eval,
    stage_export_plots,
    stage_gen_data,
    stage_report,
    stage_train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_STAGE_COMMANDS = {
    "gen-data": stage_gen_data,
    "train": stage_train,
    "eval": stage_eval,
    "report": stage_report,
    "export-plots": stage_export_plots,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taetlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute the full pipeline for a config")
    run_p.add_argument("config", type=Path)

    for name in ("gen-data", "train", "eval", "report", "export-plots"):
        p = sub.add_parser(name, help=f"run only the {name} stage")
        p.add_argument("config", type=Path)

    eff = sub.add_parser("predict-eta", help="predict the two-stage speedup from measured costs")
    eff.add_argument("costs", type=Path, help="JSON with n_ce, n_at, kappa and either f/b/b_adv or rho/gamma_time")

    return parser


def _predict_eta_cmd(costs_path: Path) -> int:
    data = json.loads(costs_path.read_text())
    required = {"n_ce", "n_at", "kappa"}
    missing = required - set(data)
    if missing:
        raise ConfigError(f"{costs_path}: missing key(s) {sorted(missing)}")
    if {"f", "b", "b_adv"} <= set(data):
        tm = TimeModel(n_ce=data["n_ce"], n_at=data["n_at"], f=data["f"], b=data["b"], b_adv=data["b_adv"], kappa=data["kappa"])
        eta, rho, gamma = predict_eta(tm), tm.rho, tm.gamma_time
    elif {"rho", "gamma_time"} <= set(data):
        rho, gamma = data["rho"], data["gamma_time"]
        eta = eta_from_components(data["n_ce"], data["n_at"], data["kappa"], rho, gamma)
    else:
        raise ConfigError(f"{costs_path}: provide either f/b/b_adv or rho/gamma_time")
    print(json.dumps({"eta": eta, "rho": rho, "gamma_time": gamma}, sort_keys=True, indent=2))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "predict-eta":
            return _predict_eta_cmd(args.costs)
        cfg = load_config(args.config)
        if args.command == "run":
            out = run_experiment(cfg)
            print(f"run complete: {out}")
            return EXIT_OK
        stage = _STAGE_COMMANDS[args.command]
        out = resolve_output_dir(cfg)
        out.mkdir(parents=True, exist_ok=True)
        stage(cfg, out)
        print(f"{args.command} complete: {out}")
        return EXIT_OK
    except (ConfigError, FileNotFoundError) as exc:
        if isinstance(exc, MissingArtifactError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OutputDirLockedError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
