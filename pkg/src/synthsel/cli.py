"""Command-line entry point: ``synthsel {train,generate,select,infer,graph,simulate}``."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable

import yaml

from . import __version__
from .aggregate import (DEFAULT_THRESHOLDS, BootstrapGenerator, DiffusionGenerator, GraphRule,
                        run_graph_selection, run_inference, threshold_candidates, tune_selection)
from .data import Dataset, load_csv, load_schema, write_csv
from .diffusion import TrainConfig, generate, load_checkpoint, save_checkpoint, train
from .numerics import RngStream, derive_seed
from .simbench.experiment import METHODS, ExperimentConfig, run_experiment

log = logging.getLogger("synthsel")

COMMANDS = ("train", "generate", "select", "infer", "graph", "simulate")
CSV_HEADER = ("trial", "method", "precision", "recall", "f1")
OUTPUT_NAMES = {
    "train": ("model.ckpt",),
    "generate": ("synthetic.csv",),
    "select": ("selection.json",),
    "infer": ("inference.json",),
    "graph": ("graph.json",),
    "simulate": ("report.json", "report.csv"),
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


# -- configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class Field:
    kind: type | tuple
    default: Any = None
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    required: bool = False


def _pos(x):
    return x >= 1


def _unit_open_closed(x):
    return 0 < x <= 1


def _thresholds(xs):
    return len(xs) > 0 and all(isinstance(v, (int, float)) and 0 < v <= 1 for v in xs)


GENERATOR = Field(str, "diffusion", lambda v: v in ("diffusion", "bootstrap"),
                  "one of diffusion, bootstrap")
N_SYN = Field(int, None, _pos, ">= 1")

SECTIONS: dict[str, dict[str, Field]] = {
    "data": {
        "csv": Field(str),
        "schema": Field(str),
    },
    "model": {
        "checkpoint": Field(str),
    },
    "generate": {
        "n_syn": N_SYN,
    },
    "selection": {
        "B": Field(int, 20, _pos, ">= 1"),
        "thresholds": Field(list, list(DEFAULT_THRESHOLDS), _thresholds, "values in (0, 1]"),
        "gamma": Field(float, 1.0, lambda v: v >= 0, ">= 0"),
        "grid_size": Field(int, 50, lambda v: v >= 2, ">= 2"),
        "lam": Field(float, None, lambda v: v >= 0, ">= 0"),
        "generator": GENERATOR,
        "n_syn": N_SYN,
    },
    "inference": {
        "B": Field(int, 20, _pos, ">= 1"),
        "alpha_level": Field(float, 0.05, lambda v: 0 < v < 1, "in (0, 1)"),
        "generator": GENERATOR,
        "n_syn": N_SYN,
    },
    "graph": {
        "B": Field(int, 20, _pos, ">= 1"),
        "pi_thres": Field(float, 0.5, _unit_open_closed, "in (0, 1]"),
        "rule": Field(str, "or", lambda v: v in ("or", "and"), "one of or, and"),
        "gamma": Field(float, 1.0, lambda v: v >= 0, ">= 0"),
        "grid_size": Field(int, 50, lambda v: v >= 2, ">= 2"),
        "generator": GENERATOR,
        "n_syn": N_SYN,
    },
    "simulate": {
        "scenario": Field(str, "Block5", lambda v: v in ("IidS5", "Ar10", "Block5", "LogisticBlock5",
                                                        "SmallWorld"),
                          "one of IidS5, Ar10, Block5, LogisticBlock5, SmallWorld"),
        "p": Field(int, 50, _pos, ">= 1"),
        "n": Field(int, 500, lambda v: v >= 4, ">= 4"),
        "trials": Field(int, 10, _pos, ">= 1"),
        "methods": Field(list, ["raw_lasso", "cpss", "aggregate_oracle"],
                         lambda v: len(v) > 0 and all(m in METHODS for m in v),
                         f"a non-empty list drawn from {', '.join(METHODS)}"),
        "B": Field(int, 20, _pos, ">= 1"),
        "thresholds": Field(list, list(DEFAULT_THRESHOLDS), _thresholds, "values in (0, 1]"),
        "gamma": Field(float, 1.0, lambda v: v >= 0, ">= 0"),
        "grid_size": Field(int, 50, lambda v: v >= 2, ">= 2"),
        "sigma": Field(float, 1.0, lambda v: v >= 0, ">= 0"),
        "perturb_sd": Field(float, 0.1, lambda v: v >= 0, ">= 0"),
        "n_syn": N_SYN,
        "pretrain_n": Field(int, 2000, lambda v: v >= 2, ">= 2"),
        "finetune_epochs": Field(int, None, _pos, ">= 1"),
        "cpss_pairs": Field(int, 50, _pos, ">= 1"),
        "cpss_q": Field(int, None, _pos, ">= 1"),
        "cpss_tau": Field(float, 0.6, lambda v: 0.5 < v <= 1, "in (0.5, 1]"),
        "graph_rule": Field(str, "or", lambda v: v in ("or", "and"), "one of or, and"),
        "graph_threshold": Field(float, 0.5, _unit_open_closed, "in (0, 1]"),
        "k_neighbors": Field(int, 4, lambda v: v >= 2 and v % 2 == 0, "even and >= 2"),
        "rewire_prob": Field(float, 0.1, lambda v: 0 <= v <= 1, "in [0, 1]"),
        "coupling": Field(float, 0.2, lambda v: v > 0, "> 0"),
    },
}

TRAIN_FIELDS = {f.name for f in fields(TrainConfig)} - {"seed"}


def _coerce(value, f: Field, key: str):
    if value is None:
        if f.required:
            raise ConfigError(f"missing required key '{key}'")
        return None
    kind = f.kind
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, float) and value.is_integer():
        value = int(value)
    if isinstance(value, bool) or not isinstance(value, kind):
        name = kind.__name__ if isinstance(kind, type) else str(kind)
        raise ConfigError(f"key '{key}' must be of type {name}, got {value!r}")
    if f.check is not None and not f.check(value):
        raise ConfigError(f"key '{key}' out of range: {value!r} (expected {f.rule})")
    return value


def _parse_section(name: str, raw) -> dict:
    spec = SECTIONS[name]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    for key in raw:
        if key not in spec:
            raise ConfigError(f"unknown key '{name}.{key}'")
    return {key: _coerce(raw.get(key, copy.deepcopy(f.default)), f, f"{name}.{key}")
            for key, f in spec.items()}


def _parse_diffusion(raw) -> list[dict]:
    """A single mapping or a list of mappings (a hyperparameter grid)."""
    if raw is None:
        raw = [{}]
    if isinstance(raw, dict):
        raw = [raw]
    if not isinstance(raw, list) or not raw:
        raise ConfigError("section 'diffusion' must be a mapping or a non-empty list of mappings")
    out = []
    for i, entry in enumerate(raw):
        where = f"diffusion[{i}]" if len(raw) > 1 else "diffusion"
        if not isinstance(entry, dict):
            raise ConfigError(f"section '{where}' must be a mapping")
        for key in entry:
            if key not in TRAIN_FIELDS:
                raise ConfigError(f"unknown key '{where}.{key}'")
        try:
            cfg = TrainConfig(**entry)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid '{where}': {exc}") from None
        d = cfg.to_dict()
        d.pop("seed")
        out.append(d)
    return out


def parse_config(source: str | Path | dict, base_dir: str | Path | None = None) -> dict:
    """Validate a YAML config (path or already-loaded mapping) and fill defaults.

    Relative data paths are resolved against ``base_dir`` (the config file's
    directory when a path is given).
    """
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
        base = Path(base_dir or ".")
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file is not valid YAML: {exc}".replace("\n", " ")) from None
        base = Path(base_dir) if base_dir is not None else path.parent
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections")
    known = {"seed", "diffusion", *SECTIONS}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown key '{key}'")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"key 'seed' must be an integer in [0, 2^64), got {seed!r}")
    cfg = {"seed": seed, "diffusion": _parse_diffusion(raw.get("diffusion"))}
    for name in SECTIONS:
        cfg[name] = _parse_section(name, raw.get(name))
    for section, key in (("data", "csv"), ("data", "schema"), ("model", "checkpoint")):
        value = cfg[section][key]
        if value is not None and not Path(value).is_absolute():
            cfg[section][key] = str(base / value)
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True)


# -- report emission ------------------------------------------------------------

def _canonical(obj):
    """Floats to 10 significant digits; non-finite floats as strings; tuples as lists."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
        return float(f"{obj:.10g}")
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if hasattr(obj, "item"):
        return _canonical(obj.item())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def emit_report(result: dict, path: str | Path, fmt: str = "json", *, config: dict | None = None,
                seed: int | None = None, command: str | None = None) -> None:
    """Write ``result`` as JSON (with provenance) or as the fixed-header CSV table."""
    path = Path(path)
    if fmt == "json":
        doc = {"tool": "synthsel", "version": __version__, "command": command, "seed": seed,
               "config": config, "result": result}
        text = json.dumps(_canonical(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"
        path.write_text(text, encoding="utf-8")
    elif fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for row in result["rows"]:
                w.writerow([row["trial"], row["method"]]
                           + [f"{float(row[k]):.10g}" for k in CSV_HEADER[2:]])
    else:
        raise ValueError(f"unknown report format {fmt!r}")


# -- commands ---------------------------------------------------------------------

def _require(cfg: dict, section: str, key: str):
    value = cfg[section][key]
    if value is None:
        raise ConfigError(f"missing required key '{section}.{key}'")
    return value


def _load_data(cfg: dict) -> Dataset:
    return load_csv(_require(cfg, "data", "csv"), load_schema(_require(cfg, "data", "schema")))


def _train_configs(cfg: dict) -> list[TrainConfig]:
    seed = cfg["seed"]
    return [TrainConfig(**d, seed=derive_seed(seed, 7, i) % 2**63 if i else seed % 2**63)
            for i, d in enumerate(cfg["diffusion"])]


def _diffusion_generators(cfg: dict, data: Dataset | None, n_syn: int) -> list[DiffusionGenerator]:
    ckpt = cfg["model"]["checkpoint"]
    if ckpt is not None:
        return [DiffusionGenerator(load_checkpoint(ckpt), n_syn, label=Path(ckpt).name)]
    if data is None:
        raise ConfigError("missing required key 'model.checkpoint' (or 'data.csv' to train)")
    return [DiffusionGenerator(train(data, tc), n_syn, label=f"diffusion[{i}]")
            for i, tc in enumerate(_train_configs(cfg))]


def _generators(cfg: dict, section: str, data: Dataset):
    n_syn = cfg[section]["n_syn"] or data.n
    if cfg[section]["generator"] == "bootstrap":
        return [BootstrapGenerator(data, n_syn)]
    return _diffusion_generators(cfg, data, n_syn)


def cmd_train(cfg: dict, out: Path, workers: int) -> None:
    data = _load_data(cfg)
    if len(cfg["diffusion"]) > 1:
        log.warning("train uses the first diffusion config of the grid")
    model = train(data, _train_configs(cfg)[0])
    save_checkpoint(model, out / "model.ckpt")


def cmd_generate(cfg: dict, out: Path, workers: int) -> None:
    data = _load_data(cfg) if cfg["data"]["csv"] is not None else None
    n_syn = cfg["generate"]["n_syn"] or (data.n if data is not None else None)
    if n_syn is None:
        raise ConfigError("missing required key 'generate.n_syn'")
    gen = _diffusion_generators(cfg, data, n_syn)[0]
    write_csv(generate(gen.model, n_syn, RngStream(cfg["seed"], 0)), out / "synthetic.csv")


def cmd_select(cfg: dict, out: Path, workers: int) -> dict:
    data = _load_data(cfg)
    sel = cfg["selection"]
    gens = _generators(cfg, "selection", data)
    result, _ = tune_selection(threshold_candidates(gens, sel["thresholds"]), data, sel["B"],
                               sel["gamma"], cfg["seed"], grid_size=sel["grid_size"],
                               lam=sel["lam"], workers=workers)
    return result.to_dict()


def cmd_infer(cfg: dict, out: Path, workers: int) -> dict:
    data = _load_data(cfg)
    inf = cfg["inference"]
    g = _generators(cfg, "inference", data)[0]
    result = run_inference(g, inf["B"], inf["alpha_level"], cfg["seed"], workers=workers)
    result.feature_names = [data.schema.names[j] for j in data.schema.feature_indices]
    return result.to_dict()


def cmd_graph(cfg: dict, out: Path, workers: int) -> dict:
    data = _load_data(cfg)
    gr = cfg["graph"]
    g = _generators(cfg, "graph", data)[0]
    result = run_graph_selection(g, gr["B"], gr["pi_thres"], GraphRule(gr["rule"]), cfg["seed"],
                                 gamma=gr["gamma"], grid_size=gr["grid_size"], workers=workers)
    return result.to_dict()


def experiment_config(cfg: dict) -> ExperimentConfig:
    sim = dict(cfg["simulate"])
    return ExperimentConfig(seed=cfg["seed"], diffusion=_train_configs(cfg), **sim)


def cmd_simulate(cfg: dict, out: Path, workers: int) -> dict:
    return run_experiment(experiment_config(cfg))


HANDLERS = {"train": cmd_train, "generate": cmd_generate, "select": cmd_select,
            "infer": cmd_infer, "graph": cmd_graph, "simulate": cmd_simulate}


# -- entry point ------------------------------------------------------------------

def _workers(flag: int | None) -> int:
    if flag is not None:
        value, source = flag, "--workers"
    else:
        env = os.environ.get("SYNTHSEL_WORKERS")
        if env is None:
            return 1
        try:
            value, source = int(env), "SYNTHSEL_WORKERS"
        except ValueError:
            raise ConfigError(f"SYNTHSEL_WORKERS must be an integer, got {env!r}") from None
    if value < 1:
        raise ConfigError(f"{source} must be >= 1, got {value}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthsel", description=__doc__)
    parser.add_argument("--version", action="version", version=f"synthsel {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML configuration file")
    parser.add_argument("--seed", type=_seed, help="overrides the config seed")
    parser.add_argument("--workers", type=int, help="worker processes (default $SYNTHSEL_WORKERS or 1)")
    parser.add_argument("--out", default=".", help="output directory (created if missing)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    return parser


def run(command: str, cfg: dict, out: Path, workers: int = 1) -> list[Path]:
    """Execute one command; outputs appear only if it succeeds."""
    out.mkdir(parents=True, exist_ok=True)
    finals = [out / name for name in OUTPUT_NAMES[command]]
    staging = out / f".synthsel-{command}.partial"
    staging.mkdir(exist_ok=True)
    moved: list[Path] = []
    try:
        result = HANDLERS[command](cfg, staging, workers)
        if command in ("select", "infer", "graph", "simulate"):
            emit_report(result, staging / finals[0].name, "json", config=cfg, seed=cfg["seed"],
                        command=command)
        if command == "simulate":
            emit_report(result, staging / "report.csv", "csv")
        for final in finals:
            os.replace(staging / final.name, final)
            moved.append(final)
    except BaseException:
        # never leave half of a multi-file result behind
        for final in moved:
            final.unlink(missing_ok=True)
        raise
    finally:
        for leftover in staging.iterdir():
            leftover.unlink()
        staging.rmdir()
    return finals


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        workers = _workers(args.workers)
        paths = run(args.command, cfg, Path(args.out), workers)
    except KeyboardInterrupt:
        print("synthsel: error: Interrupted: run cancelled", file=sys.stderr)
        return 130
    except Exception as exc:
        message = " ".join(str(exc).split()) or type(exc).__name__
        print(f"synthsel: error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
