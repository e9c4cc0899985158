"""Command-line entry point: gen-data / train / eval / report.

Every command is driven by a JSON run config (schema-versioned, unknown
keys rejected) so experiments are reproducible from the config file and
seeds alone. ``--override key=value`` tweaks nested fields with dotted
paths; ``--seed`` and ``--out`` are shorthands for the common two.

Exit codes: 0 success, 2 config error, 3 data error, 4 divergence,
1 anything else. HOMOL2O_LOG={debug,info,warning} controls verbosity.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .acopf import AcopfProblem, load_case
from .errors import ConfigError, DataError, DivergenceError, Homol2oError
from .nn import PolicyNet
from .problem import ViolationStats
from .randnlp import RandNlpProblem, RandNlpSpec, generate_system, hidden_width, xi_dim
from .training import (EvalReport, TrainConfig, evaluate_from_config, format_table,
                       report_csv, split_dataset, table_csv, train)

log = logging.getLogger("homol2o")

CONFIG_SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "label", "problem", "method", "transforms",
             "homotopy", "weights", "net", "training", "data", "paths"}
_PROBLEM_KEYS = {"family", "case", "pullup_eps", "use_pullup", "n", "seed",
                 "margin", "box", "spec_path"}
_HOMOTOPY_KEYS = {"delta_lambda", "eps_h", "eps_l", "eps_minus", "eps_plus", "delta_short"}
_WEIGHT_KEYS = {"w_eq", "w_ineq", "w_pullup", "w_warm"}
_NET_KEYS = {"hidden_layers", "hidden_width", "activation"}
_TRAIN_KEYS = {"epochs", "stage_epochs", "batch_size", "lr", "lr_step", "lr_gamma",
               "lr_floor", "warmup", "patience", "stage_warmup", "stage_patience", "seed"}
_DATA_KEYS = {"size", "seed", "split", "eval_subset"}
_PATH_KEYS = {"out_dir", "dataset"}


def _reject_unknown(section, allowed, label):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{label}: unknown keys {sorted(unknown)}")


def load_run_config(path, overrides=(), seed=None, out=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if doc.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {doc.get('schema_version')!r}")
    for key, value in (parse_override(o) for o in overrides):
        _apply_override(doc, key, value)
    if seed is not None:
        doc.setdefault("training", {})["seed"] = seed
    if out is not None:
        doc.setdefault("paths", {})["out_dir"] = out
    validate_run_config(doc)
    return doc


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return key, value


def _apply_override(doc, dotted, value):
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {dotted!r} crosses a non-object")
    node[parts[-1]] = value


def validate_run_config(doc):
    _reject_unknown(doc, _TOP_KEYS, "config")
    problem = doc.get("problem")
    if not isinstance(problem, dict) or "family" not in problem:
        raise ConfigError("config needs a problem section with a family")
    _reject_unknown(problem, _PROBLEM_KEYS, "problem")
    if problem["family"] not in ("acopf", "randnlp"):
        raise ConfigError(f"unknown problem family {problem['family']!r}")
    _reject_unknown(doc.get("homotopy", {}), _HOMOTOPY_KEYS, "homotopy")
    _reject_unknown(doc.get("weights", {}), _WEIGHT_KEYS, "weights")
    _reject_unknown(doc.get("net", {}), _NET_KEYS, "net")
    _reject_unknown(doc.get("training", {}), _TRAIN_KEYS, "training")
    _reject_unknown(doc.get("data", {}), _DATA_KEYS, "data")
    _reject_unknown(doc.get("paths", {}), _PATH_KEYS, "paths")


def build_problem(problem_cfg):
    family = problem_cfg["family"]
    if family == "acopf":
        case = load_case(problem_cfg.get("case", "case30"))
        return AcopfProblem(case, pullup_eps=problem_cfg.get("pullup_eps", 0.01),
                            use_pullup=problem_cfg.get("use_pullup", True))
    spec_path = problem_cfg.get("spec_path")
    if spec_path:
        spec = RandNlpSpec.from_json(spec_path)
    else:
        if "n" not in problem_cfg:
            raise ConfigError("randnlp problem needs 'n' (or a spec_path)")
        spec = generate_system(problem_cfg["n"], problem_cfg.get("seed", 0),
                               margin=problem_cfg.get("margin", 0.5),
                               box=problem_cfg.get("box", 2.0))
    return RandNlpProblem(spec)


def family_defaults(doc, problem):
    """Fill weights / net / batch defaults the problem family implies."""
    family = doc["problem"]["family"]
    weights = dict(doc.get("weights", {}))
    net = dict(doc.get("net", {}))
    training = dict(doc.get("training", {}))
    if family == "acopf":
        weights.setdefault("w_eq", 1e5)
        weights.setdefault("w_ineq", 1e6)
        net.setdefault("hidden_layers", 2)
        net.setdefault("hidden_width", 200)
        training.setdefault("batch_size", 1024)
    else:
        weights.setdefault("w_eq", 50.0)
        weights.setdefault("w_ineq", 50.0)
        net.setdefault("hidden_layers", 4)
        net.setdefault("hidden_width", hidden_width(problem.dim_x))
        training.setdefault("batch_size", 256)
    return weights, net, training


def make_train_config(doc, problem):
    weights, net, training = family_defaults(doc, problem)
    data = doc.get("data", {})
    return TrainConfig(
        problem=doc["problem"],
        method=doc.get("method", "penalty"),
        transforms=tuple(doc.get("transforms", ())),
        **doc.get("homotopy", {}),
        **weights,
        **net,
        **training,
        dataset_size=data.get("size", 50_000),
        split=tuple(data.get("split", (0.8, 0.1, 0.1))),
        eval_subset=data.get("eval_subset", 100),
        data_seed=data.get("seed", 0),
    )


def _paths(doc):
    paths = doc.get("paths", {})
    out_dir = Path(paths.get("out_dir", "runs/run"))
    dataset = Path(paths.get("dataset", out_dir / "dataset.csv"))
    return out_dir, dataset


def _dataset_columns(problem):
    if isinstance(problem, AcopfProblem):
        return problem.xi_column_names()
    return [f"xi_{i}" for i in range(problem.dim_xi)]


def write_dataset(path, columns, xi):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in xi:
            w.writerow([f"{v:.17g}" for v in row])


def read_dataset(path, problem):
    if not Path(path).exists():
        raise DataError(f"dataset file not found: {path}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != problem.dim_xi:
        raise DataError(
            f"dataset has {data.shape[1]} columns, problem expects {problem.dim_xi}")
    return data


def cmd_gen_data(doc):
    problem = build_problem(doc["problem"])
    data = doc.get("data", {})
    count = data.get("size", 50_000)
    if count <= 0:
        raise ConfigError(f"data.size must be positive, got {count}")
    out_dir, dataset_path = _paths(doc)
    rng = np.random.default_rng(data.get("seed", 0))
    xi = problem.sample_parameters(count, rng)
    write_dataset(dataset_path, _dataset_columns(problem), xi)
    log.info("wrote %d instances to %s", count, dataset_path)
    if isinstance(problem, RandNlpProblem):
        spec_path = dataset_path.with_name(dataset_path.stem + "_spec.json")
        problem.spec.to_json(spec_path)
        log.info("wrote problem spec to %s", spec_path)
    return 0


def cmd_train(doc):
    problem = build_problem(doc["problem"])
    cfg = make_train_config(doc, problem)
    out_dir, dataset_path = _paths(doc)
    dataset = read_dataset(dataset_path, problem)
    result = train(problem, cfg, dataset)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.net.save(out_dir / "checkpoint.json",
                    problem_fingerprint=problem.fingerprint())
    (out_dir / "train_log.csv").write_text(result.log_csv())
    summary = {
        "label": doc.get("label", cfg.method),
        "method": cfg.method,
        "transforms": list(cfg.transforms),
        "final_val_loss": f"{result.final_val_loss:.17g}",
        "total_steps": result.total_steps,
        "stages": [
            {"stage": s.stage, "lambda": s.lam, "epochs_run": s.epochs_run,
             "best_val_loss": f"{s.best_val_loss:.17g}",
             "start_hash": s.start_hash, "end_hash": s.end_hash}
            for s in result.stages
        ],
        "config": doc,
    }
    with open(out_dir / "result.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    log.info("trained %s: final val loss %s after %d steps",
             summary["label"], summary["final_val_loss"], result.total_steps)
    return 0


def cmd_eval(doc):
    problem = build_problem(doc["problem"])
    cfg = make_train_config(doc, problem)
    out_dir, dataset_path = _paths(doc)
    ckpt = out_dir / "checkpoint.json"
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    net = PolicyNet.load(ckpt)
    if net._fingerprint is not None and net._fingerprint != problem.fingerprint():
        raise DataError(
            f"checkpoint was trained on {net._fingerprint}, config says "
            f"{problem.fingerprint()}")
    dataset = read_dataset(dataset_path, problem)
    label = doc.get("label", cfg.method)
    report = evaluate_from_config(net, problem, cfg, dataset, label)
    kind = "acopf" if doc["problem"]["family"] == "acopf" else "randnlp"
    (out_dir / "report.csv").write_text(report_csv(report))
    (out_dir / "report_table.txt").write_text(format_table([report], kind=kind) + "\n")
    (out_dir / "report_agg.csv").write_text(table_csv([report], kind=kind))
    log.info("evaluated %s on %d instances", label, report.stats.n_instances)
    return 0


def cmd_report(configs, out):
    reports = []
    kind = "acopf"
    for path in configs:
        doc = load_run_config(path)
        kind = "acopf" if doc["problem"]["family"] == "acopf" else "randnlp"
        out_dir, _ = _paths(doc)
        per_instance = out_dir / "report.csv"
        result_file = out_dir / "result.json"
        if not per_instance.exists():
            raise DataError(f"no report.csv under {out_dir}; run eval first")
        label = doc.get("label")
        if label is None and result_file.exists():
            label = json.loads(result_file.read_text()).get("label")
        reports.append(_report_from_csv(per_instance, label or out_dir.name))
    table = format_table(reports, kind=kind)
    out_path = Path(out or "combined")
    out_path.mkdir(parents=True, exist_ok=True)
    (out_path / "combined_table.txt").write_text(table + "\n")
    (out_path / "combined.csv").write_text(table_csv(reports, kind=kind))
    print(table)
    return 0


def _report_from_csv(path, label):
    rows = list(csv.DictReader(open(path)))
    if not rows:
        raise DataError(f"empty report {path}")
    cols = {k: np.array([float(r[k]) for r in rows])
            for k in ("objective", "mean_eq", "max_eq", "mean_ineq", "max_ineq")}
    stats = ViolationStats(**cols)
    subset = np.array([int(r["instance"]) for r in rows])
    return EvalReport(label=label, stats=stats, subset=subset)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="homol2o",
        description="Self-supervised training of neural solution maps with "
                    "homotopy continuation schedules.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train", "eval"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--override", action="append", default=[])
    p = sub.add_parser("report")
    p.add_argument("--config", action="append", required=True,
                   help="run configs, one per trained method, in table order")
    p.add_argument("--out", default="combined")

    args = parser.parse_args(argv)
    level = os.environ.get("HOMOL2O_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "report":
            return cmd_report(args.config, args.out)
        doc = load_run_config(args.config, overrides=args.override,
                              seed=args.seed, out=args.out)
        if args.command == "gen-data":
            return cmd_gen_data(doc)
        if args.command == "train":
            return cmd_train(doc)
        return cmd_eval(doc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4
    except Homol2oError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
