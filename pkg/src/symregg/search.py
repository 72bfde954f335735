"""The main search loop: initialization, the four-stage generation cascade,
evaluation budgeting, and Pareto-front reporting.

Each iteration tries, in order: (1) perturb/recombine parents drawn from the
per-size top lists, (2) the same from the overall top list, (3) evaluating a
random not-yet-evaluated e-class, (4) inserting a random expression. The
first stage that produces an unvisited expression wins; the expression is
inserted, one saturation step runs, and the smallest equivalent form is
fitted and recorded.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

import numpy as np

from .egraph import EGraph
from .expr import (
    DEFAULT_OPS,
    Dataset,
    Expr,
    Param,
    Var,
    random_expr,
    relabel_params,
)
from .fit import EvaluationCounter, FitConfig, fit_params
from .rewrite import default_rules, saturate_one_step
from .variation import perturb, recombine

STATUS_COMPLETED = "completed"
STATUS_EXHAUSTED = "exhausted"


@dataclass
class SearchConfig:
    n_evals: int = 1000
    max_size: int = 10
    top_per_size: int = 50
    top_overall: int = 100
    p_perturb: float = 0.5
    ops: tuple = DEFAULT_OPS
    max_params: int | None = None  # None: single anonymous placeholder
    fit: FitConfig = field(default_factory=FitConfig)
    seed: int = 0
    node_budget: int = 10_000
    stage12_attempts: int = 20
    stage4_attempts: int = 100

    def __post_init__(self):
        if not 0.0 <= self.p_perturb <= 1.0:
            raise ValueError("p_perturb must be in [0, 1]")

    def terminals(self, d: int) -> list[Expr]:
        out = [Var(j) for j in range(d)]
        if self.max_params is None:
            out.append(Param())
        else:
            out.extend(Param(i) for i in range(self.max_params + 1))
        return out


@dataclass(frozen=True)
class TraceRecord:
    eval_index: int
    method: str
    size: int
    train_loss: float
    val_loss: float
    expression: str
    params: tuple


@dataclass(frozen=True)
class FrontEntry:
    size: int
    expression: str
    train_loss: float
    val_loss: float
    params: tuple


@dataclass
class RunResult:
    trace: list
    front: list
    egraph: EGraph
    status: str
    stats: dict


def pareto_front(trace) -> list[FrontEntry]:
    """Per-size best records, dominance-filtered so losses strictly improve
    with increasing size."""
    best = {}
    for r in trace:
        cur = best.get(r.size)
        if cur is None or (r.val_loss, r.eval_index) < (cur.val_loss, cur.eval_index):
            best[r.size] = r
    front = []
    bound = float("inf")
    for s in sorted(best):
        r = best[s]
        if r.val_loss < bound:
            front.append(
                FrontEntry(s, r.expression, r.train_loss, r.val_loss, r.params)
            )
            bound = r.val_loss
    return front


class _Runner:
    def __init__(self, data: Dataset, config: SearchConfig):
        if config.n_evals < len(config.terminals(data.d)) + 1:
            raise ValueError("evaluation budget below initialization cost")
        self.data = data
        self.config = config
        self.rng = random.Random(config.seed)
        self.nprng = np.random.default_rng(config.seed)
        self.egraph = EGraph()
        self.rules = default_rules(config.ops)
        self.counter = EvaluationCounter()
        self.trace: list[TraceRecord] = []
        self.terminals = config.terminals(data.d)

    # -- evaluation of one candidate ---------------------------------------

    def evaluate_candidate(self, expr: Expr, method: str) -> bool:
        """Insert, saturate one step, fit the smallest form, record. Returns
        False (no budget spent) when the candidate turns out visited."""
        g = self.egraph
        touched: set = set()
        cid = g.insert(expr, collect=touched)
        if g.classes[cid].info.evaluated:
            return False
        saturate_one_step(
            g, self.rules, node_budget=self.config.node_budget, classes=touched
        )
        cid = g.find(cid)
        if g.classes[cid].info.evaluated:
            return False
        return self._fit_class(cid, method)

    def evaluate_class(self, cid: int, method: str) -> bool:
        """Stage 3: evaluate an existing unevaluated class directly."""
        g = self.egraph
        touched: set = set()
        g.insert(g.extract_smallest(cid), as_root=False, collect=touched)
        saturate_one_step(
            g, self.rules, node_budget=self.config.node_budget, classes=touched
        )
        cid = g.find(cid)
        if g.classes[cid].info.evaluated:
            return False
        return self._fit_class(cid, method)

    def _fit_class(self, cid: int, method: str) -> bool:
        g = self.egraph
        smallest = g.extract_smallest(cid)
        fit_expr = relabel_params(smallest)
        result = fit_params(
            fit_expr, self.data, self.config.fit,
            rng=self.nprng, counter=self.counter,
        )
        index = self.counter.count
        g.mark_evaluated(
            cid, result.train_loss, result.val_loss, result.params, index
        )
        self.trace.append(
            TraceRecord(
                eval_index=index,
                method=method,
                size=smallest.size,
                train_loss=result.train_loss,
                val_loss=result.val_loss,
                expression=str(fit_expr),
                params=tuple(float(p) for p in result.params),
            )
        )
        return True

    # -- phases -------------------------------------------------------------

    def initialize(self):
        for t in self.terminals:
            ok = self.evaluate_candidate(t, "init")
            if not ok:
                raise RuntimeError(f"terminal {t} unexpectedly visited")
        for _ in range(self.config.stage4_attempts):
            e = random_expr(
                self.config.max_size, self.terminals, self.config.ops, self.rng
            )
            if self.evaluate_candidate(e, "init"):
                return
        raise RuntimeError("could not find an unvisited random expression at init")

    def _variation_from_pool(self, pool, method) -> bool:
        cfg = self.config
        g = self.egraph
        if not pool:
            return False
        for _ in range(cfg.stage12_attempts):
            if self.rng.random() < cfg.p_perturb:
                parent = g.extract_smallest(pool[self.rng.randrange(len(pool))])
                cand = perturb(
                    g, parent, self.rng,
                    max_size=cfg.max_size, ops=cfg.ops, terminals=self.terminals,
                )
            else:
                p1 = g.extract_smallest(pool[self.rng.randrange(len(pool))])
                p2 = g.extract_smallest(pool[self.rng.randrange(len(pool))])
                cand = recombine(g, p1, p2, self.rng, max_size=cfg.max_size)
            if cand is not None and self.evaluate_candidate(cand, method):
                return True
        return False

    def attempt(self) -> bool:
        cfg = self.config
        g = self.egraph
        if self._variation_from_pool(g.top_pool_by_size(cfg.top_per_size), "stage1"):
            return True
        if self._variation_from_pool(g.top_overall(cfg.top_overall), "stage2"):
            return True
        cid = g.random_unevaluated(self.rng)
        if cid is not None and self.evaluate_class(cid, "stage3"):
            return True
        for _ in range(cfg.stage4_attempts):
            e = random_expr(cfg.max_size, self.terminals, cfg.ops, self.rng)
            if self.evaluate_candidate(e, "stage4"):
                return True
        return False

    def run(self) -> RunResult:
        t0 = time.monotonic()
        self.initialize()
        status = STATUS_COMPLETED
        while self.counter.count < self.config.n_evals:
            if not self.attempt():
                status = STATUS_EXHAUSTED
                break
        g = self.egraph
        stats = {
            "evaluations": self.counter.count,
            "classes": g.num_classes,
            "nodes": g.num_nodes,
            "merges": g.merge_count,
            "wall_time": time.monotonic() - t0,
        }
        return RunResult(self.trace, pareto_front(self.trace), g, status, stats)


def run(data: Dataset, config: SearchConfig) -> RunResult:
    """Run the full search until the evaluation budget is spent (or the
    search space at this size limit is exhausted)."""
    return _Runner(data, config).run()
