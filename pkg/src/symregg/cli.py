"""Dataset ingestion, run orchestration, trace/report emission, and the
success-probability experiment harness.

Every flag can also be set through a ``SYMREGG_<NAME>`` environment variable
(dashes become underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from .expr import DEFAULT_OPS, Dataset
from .fit import FitConfig
from .paes import default_paes_fit, run_paes
from .search import RunResult, SearchConfig, TraceRecord, pareto_front, run


class IngestionError(ValueError):
    pass


def load_csv(path, target_column: str) -> Dataset:
    """Read a headered numeric CSV; the target column becomes y, remaining
    columns become X in header order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise IngestionError(
                f"{path}: target column {target_column!r} not in header {header}"
            )
        t_idx = header.index(target_column)
        rows = []
        for i, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}: row {i} has {len(row)} cells, expected {len(header)}"
                )
            vals = []
            for j, cell in enumerate(row, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise IngestionError(
                        f"{path}: non-numeric cell {cell!r} at row {i}, column {j}"
                    ) from None
            rows.append(vals)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    y = data[:, t_idx]
    X = np.delete(data, t_idx, axis=1)
    columns = tuple(h for k, h in enumerate(header) if k != t_idx)
    return Dataset(X, y, columns)


# ---------------------------------------------------------------------------
# Trace files: one tab-separated record per line

def format_trace_record(r: TraceRecord) -> str:
    params = ",".join(repr(p) for p in r.params)
    return "\t".join([
        str(r.eval_index), r.method, str(r.size),
        repr(r.train_loss), repr(r.val_loss), r.expression, params,
    ])


def write_trace(path, trace):
    with open(path, "w") as fh:
        for r in trace:
            fh.write(format_trace_record(r) + "\n")


def read_trace(path) -> list[TraceRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            idx, method, size, train, val, expression = fields[:6]
            params = fields[6] if len(fields) > 6 else ""
            out.append(TraceRecord(
                eval_index=int(idx),
                method=method,
                size=int(size),
                train_loss=float(train),
                val_loss=float(val),
                expression=expression,
                params=tuple(float(p) for p in params.split(",") if p),
            ))
    return out


# ---------------------------------------------------------------------------
# Success-probability harness

def best_so_far(trace) -> list[float]:
    """Best training loss after each evaluation, index 0 = after 1 eval."""
    out = []
    best = math.inf
    for r in trace:
        best = min(best, r.train_loss)
        out.append(best)
    return out


def run_experiment(data: Dataset, config: SearchConfig, runs: int, thresholds):
    """Seeded repetitions; rows (threshold, eval_count, probability) where the
    probability is the fraction of runs at or below the threshold within the
    given number of evaluations."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    thresholds = list(thresholds)
    if not thresholds:
        raise ValueError("at least one threshold required")
    curves = []
    results = []
    for r in range(runs):
        cfg = SearchConfig(**{**config.__dict__, "seed": config.seed + r})
        try:
            result = run(data, cfg)
        except Exception as exc:
            raise RuntimeError(f"run with seed {cfg.seed} failed: {exc}") from exc
        curves.append(best_so_far(result.trace))
        results.append(result)
    n_evals = max(len(c) for c in curves)
    rows = []
    for t in thresholds:
        for c in range(1, n_evals + 1):
            hits = sum(
                1 for curve in curves
                if len(curve) >= c and curve[c - 1] <= t
            )
            rows.append((t, c, hits / runs))
    return rows, results


def write_table(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "eval_count", "probability"])
        for row in rows:
            w.writerow(row)


# ---------------------------------------------------------------------------
# Entry point

def _env(name, default):
    return os.environ.get("SYMREGG_" + name.upper().replace("-", "_"), default)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="symregg",
        description="Equality-graph assisted symbolic regression",
    )
    a = p.add_argument
    a("--dataset", default=_env("dataset", None), required=_env("dataset", None) is None)
    a("--target", default=_env("target", None), required=_env("target", None) is None)
    a("--algorithm", choices=["symregg", "paes"],
      default=_env("algorithm", "symregg"))
    a("--evals", type=int, default=int(_env("evals", 1000)))
    a("--max-size", type=int, default=int(_env("max-size", 10)))
    a("--ops", default=_env("ops", ",".join(DEFAULT_OPS)),
      help="comma-separated operator symbols")
    a("--max-params", type=int, default=None if _env("max-params", None) is None
      else int(_env("max-params", None)))
    a("--train-ratio", type=float, default=float(_env("train-ratio", 1.0)))
    a("--loss", default=_env("loss", "mse"))
    a("--opt-iters", type=int, default=int(_env("opt-iters", 100)))
    a("--opt-retries", type=int, default=int(_env("opt-retries", 2)))
    a("--top-per-size", type=int, default=int(_env("top-per-size", 50)))
    a("--top-overall", type=int, default=int(_env("top-overall", 100)))
    a("--seed", type=int, default=int(_env("seed", 0)))
    a("--node-budget", type=int, default=int(_env("node-budget", 10_000)))
    a("--trace-out", default=_env("trace-out", None))
    a("--report-out", default=_env("report-out", None))
    a("--runs", type=int, default=int(_env("runs", 1)),
      help="repetitions for the success-probability harness")
    a("--thresholds", default=_env("thresholds", None),
      help="comma-separated MSE thresholds; enables the harness table")
    a("--table-out", default=_env("table-out", None))
    return p


def _search_config(args) -> SearchConfig:
    fit_cfg = FitConfig(
        loss=args.loss,
        opt_iterations=args.opt_iters,
        retries=args.opt_retries,
        train_ratio=args.train_ratio,
        seed=args.seed,
    )
    return SearchConfig(
        n_evals=args.evals,
        max_size=args.max_size,
        top_per_size=args.top_per_size,
        top_overall=args.top_overall,
        ops=tuple(s.strip() for s in args.ops.split(",") if s.strip()),
        max_params=args.max_params,
        fit=fit_cfg,
        seed=args.seed,
        node_budget=args.node_budget,
    )


def _report(args, config, result: RunResult) -> dict:
    return {
        "config": {
            "algorithm": args.algorithm,
            "evals": config.n_evals,
            "max_size": config.max_size,
            "ops": list(config.ops),
            "max_params": config.max_params,
            "train_ratio": config.fit.train_ratio,
            "loss": config.fit.loss,
            "opt_iterations": config.fit.opt_iterations,
            "opt_retries": config.fit.retries,
            "top_per_size": config.top_per_size,
            "top_overall": config.top_overall,
            "seed": config.seed,
        },
        "status": result.status,
        "wall_time": result.stats.get("wall_time"),
        "evaluations": result.stats.get("evaluations"),
        "egraph": {
            "classes": result.stats.get("classes"),
            "nodes": result.stats.get("nodes"),
            "merges": result.stats.get("merges"),
        },
        "front": [
            {
                "size": e.size,
                "expression": e.expression,
                "train_loss": e.train_loss,
                "val_loss": e.val_loss,
                "params": list(e.params),
            }
            for e in result.front
        ],
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    data = load_csv(args.dataset, args.target)
    config = _search_config(args)

    if args.thresholds:
        thresholds = [float(t) for t in args.thresholds.split(",")]
        rows, results = run_experiment(data, config, args.runs, thresholds)
        if args.table_out:
            write_table(args.table_out, rows)
        else:
            print("threshold\teval_count\tprobability")
            for t, c, prob in rows:
                print(f"{t}\t{c}\t{prob}")
        if args.trace_out:
            write_trace(args.trace_out, results[0].trace)
        return 0

    t0 = time.monotonic()
    if args.algorithm == "paes":
        fit_cfg = FitConfig(
            loss=args.loss,
            opt_iterations=args.opt_iters,
            retries=args.opt_retries,
            train_ratio=args.train_ratio,
            seed=args.seed,
        )
        trace = run_paes(
            data, args.max_size, config.terminals(data.d), config.ops,
            fit_cfg=fit_cfg, seed=args.seed, n_evals=args.evals,
        )
        result = RunResult(
            trace, pareto_front(trace), None, "completed",
            {"evaluations": len(trace), "wall_time": time.monotonic() - t0},
        )
    else:
        result = run(data, config)

    if args.trace_out:
        write_trace(args.trace_out, result.trace)
    report = _report(args, config, result)
    if args.report_out:
        with open(args.report_out, "w") as fh:
            json.dump(report, fh, indent=2)
    else:
        json.dump(report, sys.stdout, indent=2)
        print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
