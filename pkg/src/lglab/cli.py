"""Command line entry point.

Subcommands::

    lglab check [--suite NAME]
    lglab train --config PATH --out DIR
    lglab sweep --config PATH --out DIR
    lglab plot  --csv PATH --metric NAME --out PATH

Exit codes are stable: 0 on success, 1 when a check suite fails, 2 on
usage or configuration errors.  ``LGL_THREADS`` caps how many runs
execute concurrently (default: available cores); output files are
written atomically and are byte-deterministic given config and seeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from itertools import product
from pathlib import Path
from typing import Dict, List, Sequence

from . import harness, oracles
from .errors import ConfigError, LglabError
from .estimators import EstimatorConfig, InitPoint, Rule
from .harness import ModelConfig, OptimizerConfig, TaskKind, TaskSpec
from .model import Activation, LossKind
from .svgplot import render_line_chart

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2

# Exact-gradient baselines every sweep carries so surrogate results are
# always read against exact methods.
BASELINE_RULES = (Rule.RELAXED, Rule.MIN_RISK)


def _threads() -> int:
    raw = os.environ.get("LGL_THREADS", "").strip()
    if raw:
        n = int(raw)
        if n < 1:
            raise ConfigError("LGL_THREADS must be at least 1")
        return n
    return os.cpu_count() or 1


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require_keys(doc: dict, allowed: Sequence[str], required: Sequence[str], where: str) -> None:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}")
    missing = sorted(set(required) - set(doc))
    if missing:
        raise ConfigError(f"missing key(s) {missing} in {where}")


def _parse_task(doc: dict) -> TaskSpec:
    _require_keys(
        doc,
        ["kind", "family", "D_x", "D_y", "noise_sigma", "n_train", "n_eval", "seed"],
        ["kind", "family", "D_x", "D_y", "n_train", "n_eval", "seed"],
        "task",
    )
    try:
        kind = TaskKind(doc["kind"])
    except ValueError:
        raise ConfigError(f"unknown task kind {doc['kind']!r}")
    return TaskSpec(
        kind=kind,
        family=doc["family"],
        d_x=int(doc["D_x"]),
        d_y=int(doc["D_y"]),
        noise_sigma=float(doc.get("noise_sigma", 0.0)),
        n_train=int(doc["n_train"]),
        n_eval=int(doc["n_eval"]),
        seed=int(doc["seed"]),
    )


def _parse_model(doc: dict) -> ModelConfig:
    _require_keys(
        doc,
        ["hidden", "activation", "loss", "decoder_uses_x", "decoder_init"],
        [],
        "model",
    )
    try:
        return ModelConfig(
            hidden=int(doc.get("hidden", 32)),
            activation=Activation(doc.get("activation", "tanh")),
            decoder_uses_x=bool(doc.get("decoder_uses_x", True)),
            decoder_init=str(doc.get("decoder_init", "uniform")),
            loss=LossKind(doc["loss"]) if "loss" in doc else None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def _parse_optimizer(doc: dict) -> OptimizerConfig:
    _require_keys(
        doc, ["algo", "lr", "epochs", "batch", "decoder_lr_scale"], ["lr", "epochs"], "optimizer"
    )
    try:
        return OptimizerConfig(
            algo=str(doc.get("algo", "sgd")),
            lr=float(doc["lr"]),
            epochs=int(doc["epochs"]),
            batch=int(doc.get("batch", 16)),
            decoder_lr_scale=float(doc.get("decoder_lr_scale", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def _parse_estimator(doc: dict) -> EstimatorConfig:
    _require_keys(doc, ["rule", "eta", "steps", "init", "temperature"], ["rule"], "estimator")
    try:
        return EstimatorConfig.from_dict(doc)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad estimator config: {exc}")


def _parse_grid(doc: dict) -> List[EstimatorConfig]:
    axes = ["rule", "eta", "steps", "init", "temperature"]
    defaults = {"eta": [1.0], "steps": [1], "init": ["map_vertex"], "temperature": [1.0]}
    _require_keys(doc, axes, ["rule"], "grid")
    lists: Dict[str, list] = {}
    for axis in axes:
        values = doc.get(axis, defaults.get(axis))
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid axis {axis!r} must be a non-empty list")
        lists[axis] = values
    cells = []
    for rule, eta, steps, init, temp in product(
        lists["rule"], lists["eta"], lists["steps"], lists["init"], lists["temperature"]
    ):
        cells.append(
            _parse_estimator(
                {"rule": rule, "eta": eta, "steps": steps, "init": init, "temperature": temp}
            )
        )
    present = {c.rule for c in cells}
    for rule in BASELINE_RULES:
        if rule not in present:
            cells.append(
                EstimatorConfig(
                    rule=rule,
                    eta=float(lists["eta"][0]),
                    steps=1,
                    init=InitPoint.MAP_VERTEX,
                    temperature=float(lists["temperature"][0]),
                )
            )
    return cells


def load_config(path: str, mode: str):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    top_allowed = ["task", "model", "optimizer", "seeds", "estimators" if mode == "train" else "grid"]
    _require_keys(doc, top_allowed, ["task", "optimizer", "seeds"], "config")
    task = _parse_task(doc["task"])
    model_cfg = _parse_model(doc.get("model", {}))
    optimizer = _parse_optimizer(doc["optimizer"])
    seeds = doc["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    if mode == "train":
        raw = doc.get("estimators")
        if not isinstance(raw, list) or not raw:
            raise ConfigError("estimators must be a non-empty list")
        cells = [_parse_estimator(e) for e in raw]
    else:
        if "grid" not in doc:
            raise ConfigError("sweep config needs a grid section")
        cells = _parse_grid(doc["grid"])
    return task, model_cfg, optimizer, cells, seeds


def _execute_runs(task_spec, model_cfg, optimizer, cells, seeds):
    task = harness.generate_task(task_spec)
    jobs = []
    idx = 0
    for cell in cells:
        for seed in seeds:
            run_id = f"r{idx:03d}_{cell.rule.value}"
            jobs.append((run_id, cell, seed))
            idx += 1
    workers = min(_threads(), len(jobs))
    if workers <= 1:
        results = [
            harness.train_run(task, seed, cell, optimizer, model_cfg, run_id=run_id)
            for run_id, cell, seed in jobs
        ]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(
                    harness.train_run, task, seed, cell, optimizer, model_cfg, run_id=run_id
                )
                for run_id, cell, seed in jobs
            ]
            results = [f.result() for f in futures]
    return results


def cmd_check(args) -> int:
    names = list(oracles.SUITES) if args.suite is None else [args.suite]
    for name in names:
        if name not in oracles.SUITES:
            print(f"unknown suite {name!r}; available: {', '.join(oracles.SUITES)}")
            return EXIT_CONFIG
    all_ok = True
    for result in oracles.run_suites(names):
        status = "ok" if result.ok else "FAILED"
        print(f"suite {result.name}: {result.n_pass} passed, {result.n_fail} failed [{status}]")
        for failure in result.failures:
            print(f"  failing case: {failure}")
        all_ok = all_ok and result.ok
    return EXIT_OK if all_ok else EXIT_CHECK_FAILED


def cmd_train(args) -> int:
    task_spec, model_cfg, optimizer, cells, seeds = load_config(args.config, "train")
    records = _execute_runs(task_spec, model_cfg, optimizer, cells, seeds)
    out_dir = Path(args.out)
    _atomic_write(out_dir / "runs.csv", harness.records_to_csv(records))
    for rec in records:
        final = rec.epochs[-1]
        tag = "diverged" if rec.diverged else f"eval_loss={final.eval_loss:.6g} latent_exact={final.latent_exact:.4g}"
        print(f"{rec.run_id} rule={rec.estimator.rule.value} seed={rec.seed} epochs={final.epoch} {tag} wall_ms={rec.wall_ms:.1f}")
    print(f"wrote {out_dir / 'runs.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    task_spec, model_cfg, optimizer, cells, seeds = load_config(args.config, "sweep")
    records = _execute_runs(task_spec, model_cfg, optimizer, cells, seeds)
    out_dir = Path(args.out)
    _atomic_write(out_dir / "sweep.csv", harness.records_to_csv(records))
    summary = harness.summarize_records(records)
    _atomic_write(out_dir / "summary.csv", summary)
    print(summary, end="")
    print(f"wrote {out_dir / 'sweep.csv'} and {out_dir / 'summary.csv'}")
    return EXIT_OK


def cmd_plot(args) -> int:
    path = Path(args.csv)
    try:
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        print(f"cannot read csv: {exc}")
        return EXIT_CONFIG
    if not rows:
        print("csv has no data rows")
        return EXIT_CONFIG
    columns = list(rows[0])
    if args.metric not in columns:
        print(f"metric {args.metric!r} not in columns: {', '.join(columns)}")
        return EXIT_CONFIG
    for needed in ("rule", "eta", "epoch", "seed"):
        if needed not in columns:
            print(f"column {needed!r} missing; columns: {', '.join(columns)}")
            return EXIT_CONFIG
    # mean over seeds per (rule, eta) cell, skipping diverged rows
    cells: Dict[tuple, Dict[int, list]] = {}
    for row in rows:
        if row[args.metric] == harness.DIVERGED:
            continue
        key = (row["rule"], row["eta"])
        cells.setdefault(key, {}).setdefault(int(row["epoch"]), []).append(
            float(row[args.metric])
        )
    series = []
    for key in sorted(cells):
        epochs = sorted(cells[key])
        ys = [sum(cells[key][e]) / len(cells[key][e]) for e in epochs]
        series.append((f"{key[0]} eta={key[1]}", [float(e) for e in epochs], ys))
    svg = render_line_chart(series, title=args.metric, x_label="epoch", y_label=args.metric)
    _atomic_write(Path(args.out), svg)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lglab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="run the oracle property suites")
    p_check.add_argument("--suite", default=None, help="run a single suite by name")
    p_check.set_defaults(fn=cmd_check)

    p_train = sub.add_parser("train", help="train runs from a config document")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(fn=cmd_train)

    p_sweep = sub.add_parser("sweep", help="grid sweep from a config document")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_plot = sub.add_parser("plot", help="render a metric-vs-epoch SVG from a run CSV")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--metric", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}")
        return EXIT_CONFIG
    except LglabError as exc:
        print(f"error: {exc}")
        return EXIT_CHECK_FAILED


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
