"""Command-line entry point: train, eval, predict, rationale.

Every option can also be given in a ``key = value`` config file (``--config``),
using the option name with dashes replaced by underscores. Command-line flags
win over the config file, which wins over built-in defaults.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .episodes import (
    DatasetFormatError,
    SamplingError,
    TrainConfig,
    evaluate,
    load_dataset,
    load_split,
    meta_train,
)
from .mcts import SearchConfig, extract_rationales, format_report, format_summary, support_prototypes
from .model import AdaptMol, ModelConfig
from .smiles import SmilesError, parse_smiles

log = logging.getLogger("adaptmol")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


@dataclass(frozen=True)
class Option:
    name: str
    type: Callable[[str], Any]
    default: Any
    help: str
    required: bool = False

    @property
    def key(self) -> str:
        return self.name.replace("-", "_")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(text: str) -> str:
    if text not in ("json", "text"):
        raise ValueError(f"format must be json or text, got {text!r}")
    return text


_d_train, _d_model, _d_search = TrainConfig(), ModelConfig(), SearchConfig()

COMMON = [
    Option("seed", int, 0, "seed for every random choice"),
    Option("format", _fmt, "text", "report format: json or text"),
]
MODEL_OPTIONS = [
    Option("hidden", int, _d_model.hidden, "GIN hidden width"),
    Option("gin-layers", int, _d_model.gin_layers, "number of GIN layers"),
    Option("hash-dim", int, _d_model.hash_dim, "hashed n-gram dimension"),
    Option("seq-dim", int, _d_model.seq_dim, "PCA sequence feature dimension"),
    Option("heads", int, _d_model.heads, "local attention heads"),
    Option("beta-min", float, _d_model.beta_min, "lower adaptive weight"),
    Option("beta-max", float, _d_model.beta_max, "upper adaptive weight"),
    Option("k", float, _d_model.k, "adaptive weight scaling factor"),
]
TRAIN_OPTIONS = [
    Option("dataset", str, None, "dataset CSV", required=True),
    Option("split", str, None, "task split file", required=True),
    Option("out", str, "model.npz", "checkpoint path"),
    Option("log-file", str, None, "training log path (default: <out>.log)"),
    Option("shots", int, _d_train.shots, "support examples per class"),
    Option("query-size", int, _d_train.query_size, "training query size"),
    Option("test-query-size", int, _d_train.test_query_size, "validation query size"),
    Option("lr", float, _d_train.lr, "learning rate"),
    Option("optimizer", str, _d_train.optimizer, "sgd or adam"),
    Option("episodes", int, _d_train.episodes, "training episodes"),
    Option("patience", int, _d_train.patience, "validation rounds without improvement before stopping"),
    Option("eval-every", int, _d_train.eval_every, "episodes between validation rounds"),
    Option("val-fraction", float, _d_train.val_fraction, "fraction of training tasks held out"),
    Option("val-episodes", int, _d_train.val_episodes, "validation episodes per held-out task"),
] + MODEL_OPTIONS
EVAL_OPTIONS = [
    Option("checkpoint", str, None, "trained checkpoint", required=True),
    Option("dataset", str, None, "dataset CSV", required=True),
    Option("tasks", str, None, "comma-separated test tasks (default: the checkpoint's test split)"),
    Option("split", str, None, "split file whose test tasks are evaluated"),
    Option("shots", int, 10, "support examples per class"),
    Option("runs", int, 10, "independent sampling runs"),
    Option("query-size", int, 32, "query size per episode"),
    Option("jobs", int, 1, "parallel runs"),
    Option("out", str, None, "write the report here instead of stdout"),
]
PREDICT_OPTIONS = [
    Option("checkpoint", str, None, "trained checkpoint", required=True),
    Option("support", str, None, "support CSV with smiles,label columns", required=True),
    Option("query", str, None, "file with one SMILES per line", required=True),
    Option("out", str, None, "write predictions here instead of stdout"),
]
RATIONALE_OPTIONS = [
    Option("checkpoint", str, None, "trained checkpoint", required=True),
    Option("support", str, None, "support CSV with smiles,label columns", required=True),
    Option("molecules", str, None, "file with one positive SMILES per line", required=True),
    Option("max-atoms", int, _d_search.max_atoms, "largest rationale size"),
    Option("min-atoms", int, _d_search.min_atoms, "smallest rationale size"),
    Option("delta", float, _d_search.delta, "score threshold"),
    Option("c-puct", float, _d_search.c_puct, "exploration constant"),
    Option("iterations", int, _d_search.iterations, "rollouts per molecule"),
    Option("out", str, None, "write the report here instead of stdout"),
    Option("summary", str, None, "write a per-molecule summary here"),
]

COMMANDS: dict[str, tuple[list[Option], str]] = {
    "train": (TRAIN_OPTIONS, "meta-train a model and save a checkpoint"),
    "eval": (EVAL_OPTIONS, "evaluate a checkpoint on held-out tasks"),
    "predict": (PREDICT_OPTIONS, "predict query molecules against a support set"),
    "rationale": (RATIONALE_OPTIONS, "extract substructure rationales by tree search"),
}


def build_parser() -> _Parser:
    parser = _Parser(prog="adaptmol", description="Few-shot molecular property prediction.")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (options, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, help="key = value config file")
        for opt in COMMON + options:
            # None means "not given"; defaults are applied after the config overlay
            p.add_argument(f"--{opt.name}", type=opt.type, default=None,
                           help=f"{opt.help} (default: {opt.default})")
    return parser


def read_config(path: str) -> dict[str, str]:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve(command: str, args: argparse.Namespace) -> dict[str, Any]:
    """Overlay flags on config-file values on defaults."""
    options = COMMON + COMMANDS[command][0]
    known = {o.key: o for o in options}
    file_values = read_config(args.config) if args.config else {}
    unknown = set(file_values) - set(known)
    if unknown:
        raise DataError(f"{args.config}: unknown key(s) {', '.join(sorted(unknown))}")
    out = {}
    for key, opt in known.items():
        flag = getattr(args, key)
        if flag is not None:
            out[key] = flag
        elif key in file_values:
            try:
                out[key] = opt.type(file_values[key])
            except ValueError as exc:
                raise DataError(f"{args.config}: {key}: {exc}") from None
        else:
            out[key] = opt.default
        if opt.required and out[key] is None:
            raise UsageError(f"{command}: --{opt.name} is required")
    return out


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def read_smiles_list(path: str) -> list[str]:
    out = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            smi = line.split(",")[0].split()[0]
            if smi.lower() == "smiles":
                continue
            out.append(smi)
    if not out:
        raise DataError(f"{path}: no SMILES found")
    return out


def read_support(path: str) -> tuple[list[str], list[int]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows or rows[0][0].strip() != "smiles" or len(rows[0]) < 2:
        raise DataError(f"{path}:1: header must be 'smiles,<label column>'")
    smiles, labels = [], []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) < 2 or row[1].strip() not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1")
        smi = row[0].strip()
        parse_smiles(smi)
        smiles.append(smi)
        labels.append(int(row[1].strip()))
    if not (0 in labels and 1 in labels):
        raise DataError(f"{path}: support set needs both classes")
    return smiles, labels


def _load_checkpoint(path: str) -> AdaptMol:
    try:
        return AdaptMol.load(path)
    except (KeyError, ValueError, OSError) as exc:
        raise DataError(f"{path}: cannot load checkpoint ({exc})") from None


# ---------------------------------------------------------------- commands

def cmd_train(cfg: dict[str, Any]) -> int:
    model_cfg = ModelConfig(**{f.replace("-", "_"): cfg[f.replace("-", "_")]
                               for f in (o.name for o in MODEL_OPTIONS)})
    train_cfg = TrainConfig(
        shots=cfg["shots"], query_size=cfg["query_size"], test_query_size=cfg["test_query_size"],
        lr=cfg["lr"], optimizer=cfg["optimizer"], episodes=cfg["episodes"], patience=cfg["patience"],
        eval_every=cfg["eval_every"], val_fraction=cfg["val_fraction"],
        val_episodes=cfg["val_episodes"], seed=cfg["seed"], model=model_cfg,
    )
    ds = load_dataset(cfg["dataset"])
    split = load_split(cfg["split"])
    model, history = meta_train(ds, split, train_cfg)
    model.save(cfg["out"])
    log_path = cfg["log_file"] or cfg["out"] + ".log"
    with open(log_path, "w") as fh:
        fh.write("config\t" + json.dumps(cfg, sort_keys=True) + "\n")
        for step, loss in enumerate(history.losses, 1):
            fh.write(f"loss\t{step}\t{loss:.6f}\n")
        for step, score in history.validation:
            fh.write(f"val\t{step}\t{score:.6f}\n")
        fh.write(f"best\t{history.best_episode}\n")
        fh.write(f"stopped_early\t{history.stopped_early}\n")
    summary = {"checkpoint": cfg["out"], "log": log_path, "episodes": len(history.losses),
               "best_episode": history.best_episode, "validation": history.validation}
    if cfg["format"] == "json":
        sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    else:
        sys.stdout.write("".join(f"{k}\t{v}\n" for k, v in summary.items()))
    return EXIT_OK


def cmd_eval(cfg: dict[str, Any]) -> int:
    model = _load_checkpoint(cfg["checkpoint"])
    ds = load_dataset(cfg["dataset"])
    if cfg["tasks"]:
        tasks = [t.strip() for t in cfg["tasks"].split(",") if t.strip()]
    elif cfg["split"]:
        tasks = list(load_split(cfg["split"]).test)
    else:
        tasks = list(model.extra.get("split", {}).get("test", []))
    if not tasks:
        raise UsageError("eval: no test tasks (use --tasks or --split)")
    unknown = [t for t in tasks if t not in ds.task_names]
    if unknown:
        raise DataError(f"{cfg['dataset']}: unknown task(s) {', '.join(unknown)}")
    report = evaluate(model, ds, tasks, cfg["shots"], runs=cfg["runs"], seed=cfg["seed"],
                      query_size=cfg["query_size"], jobs=cfg["jobs"])
    _emit(report.to_json() + "\n" if cfg["format"] == "json" else report.to_text(), cfg["out"])
    return EXIT_OK


def cmd_predict(cfg: dict[str, Any]) -> int:
    model = _load_checkpoint(cfg["checkpoint"])
    sup_smiles, sup_labels = read_support(cfg["support"])
    query = read_smiles_list(cfg["query"])
    protos = support_prototypes(model, sup_smiles, sup_labels)
    probs = model.predict([model.prepare(parse_smiles(s)) for s in query], protos)
    if cfg["format"] == "json":
        text = json.dumps([{"smiles": s, "probability": float(p)} for s, p in zip(query, probs)],
                          indent=2) + "\n"
    else:
        text = "".join(f"{s}\t{p:.6f}\n" for s, p in zip(query, probs))
    _emit(text, cfg["out"])
    return EXIT_OK


def cmd_rationale(cfg: dict[str, Any]) -> int:
    try:
        search = SearchConfig(max_atoms=cfg["max_atoms"], delta=cfg["delta"], c_puct=cfg["c_puct"],
                              iterations=cfg["iterations"], min_atoms=cfg["min_atoms"])
    except ValueError as exc:
        raise UsageError(f"rationale: {exc}") from None
    model = _load_checkpoint(cfg["checkpoint"])
    sup_smiles, sup_labels = read_support(cfg["support"])
    molecules = read_smiles_list(cfg["molecules"])
    protos = support_prototypes(model, sup_smiles, sup_labels)
    results = extract_rationales(model, protos, molecules, search)
    if cfg["format"] == "json":
        payload = [
            {"smiles": smi, "rationales": [{"atoms": list(e.atoms), "score": e.score} for e in entries]}
            for smi, entries in results
        ]
        _emit(json.dumps(payload, indent=2) + "\n", cfg["out"])
    else:
        _emit(format_report(results), cfg["out"])
    if cfg["summary"]:
        _emit(format_summary(results), cfg["summary"])
    return EXIT_OK


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "rationale": cmd_rationale}


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "adaptmol: error: a command is required")
        logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(args.command, args)
        log.info("resolved configuration for %s: %s", args.command, json.dumps(cfg, sort_keys=True))
        return HANDLERS[args.command](cfg)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (DataError, DatasetFormatError, SamplingError, SmilesError, KeyError, OSError) as exc:
        sys.stderr.write(f"adaptmol: error: {exc}\n")
        return EXIT_DATA
    except ValueError as exc:
        # invalid hyperparameter combinations (for example a learning rate out of range)
        sys.stderr.write(f"adaptmol: error: {exc}\n")
        return EXIT_USAGE


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
