"""Desk-scale permuted exhaustive search and the semantic-fingerprint oracle.

Enumerates every structurally distinct expression up to a size bound
(deduplicated by parameter folding and commutative argument ordering), draws
them in a uniform random order without replacement, and fits each with a
high-effort budget. The fingerprint utility gives tests an independent
semantic-equivalence oracle.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .egraph import PARAM_FOLD_BINARY
from .expr import (
    CONST,
    OP,
    PARAM,
    VAR,
    Dataset,
    Expr,
    Op,
    apply_op,
    arity,
    relabel_params,
)
from .fit import EvaluationCounter, FitConfig, fit_params
from .search import TraceRecord

COMMUTATIVE = ("+", "*")


def _is_param(e: Expr) -> bool:
    return e.kind == PARAM


def normalize(e: Expr) -> Expr:
    """Tree-level counterpart of the e-graph's insertion normalization:
    parameter folding plus canonical ordering of commutative arguments."""
    if not e.children:
        return e
    children = [normalize(c) for c in e.children]
    return _normalize_top(e.value, children)


def _normalize_top(sym: str, children) -> Expr:
    if len(children) == 1:
        return Op(sym, children[0])
    a, b = children
    if sym in PARAM_FOLD_BINARY and _is_param(a) and _is_param(b):
        return a
    if sym == "/" and _is_param(b):
        return _normalize_top("*", [a, b])
    if sym in ("+", "*"):
        if _is_param(b) and _absorbs(a, sym):
            return a
        if _is_param(a) and _absorbs(b, sym):
            return b
    if sym in COMMUTATIVE and str(b) < str(a):
        a, b = b, a
    return Op(sym, a, b)


def _absorbs(e: Expr, sym: str) -> bool:
    return e.kind == OP and e.value == sym and any(_is_param(c) for c in e.children)


def projected_tree_count(max_size: int, n_terminals: int, ops) -> int:
    """Raw (pre-deduplication) count of well-formed trees up to ``max_size``."""
    n_unary = sum(1 for o in ops if arity(o) == 1)
    n_binary = sum(1 for o in ops if arity(o) == 2)
    count = [0] * (max_size + 1)
    if max_size >= 1:
        count[1] = n_terminals
    for s in range(2, max_size + 1):
        c = n_unary * count[s - 1]
        for s1 in range(1, s - 1):
            c += n_binary * count[s1] * count[s - 1 - s1]
        count[s] = c
    return sum(count)


def enumerate_expressions(max_size, terminals, ops, *, guard=10_000_000):
    """Every well-formed expression of size <= ``max_size`` exactly once,
    up to normalization; ordered by (size, printed form)."""
    terminals = list(terminals)
    ops = list(ops)
    projected = projected_tree_count(max_size, len(terminals), ops)
    if projected > guard:
        raise ValueError(
            f"projected search space of {projected} trees exceeds the "
            f"desk-scale guard ({guard})"
        )
    seen = set()
    by_size = {s: [] for s in range(1, max_size + 1)}

    def admit(e: Expr):
        if e not in seen:
            seen.add(e)
            by_size[e.size].append(e)

    for t in terminals:
        admit(normalize(t))
    for s in range(2, max_size + 1):
        for sym in ops:
            if arity(sym) == 1:
                for child in by_size[s - 1]:
                    admit(_normalize_top(sym, [child]))
            else:
                for s1 in range(1, s - 1):
                    for a in by_size[s1]:
                        for b in by_size[s - 1 - s1]:
                            admit(_normalize_top(sym, [a, b]))
    out = []
    for s in range(1, max_size + 1):
        out.extend(sorted(by_size[s], key=str))
    return out


def permuted_sample(expressions, seed: int):
    """Uniform random permutation of the enumerated set, as a stream."""
    pool = list(expressions)
    random.Random(seed).shuffle(pool)
    yield from pool


# ---------------------------------------------------------------------------
# Fingerprint oracle

@dataclass(frozen=True)
class Probe:
    """Fixed probe assignments: one row of variables and one shared parameter
    value per point. All parameter occurrences share the point's value, which
    matches the e-graph's single-placeholder semantics."""

    X: np.ndarray
    theta: np.ndarray


def make_probe(d: int, n_points: int = 100, seed: int = 12345,
               low: float = 0.5, high: float = 2.0) -> Probe:
    rng = np.random.default_rng(seed)
    return Probe(
        X=rng.uniform(low, high, size=(n_points, d)),
        theta=rng.uniform(low, high, size=n_points),
    )


def _eval_shared(e: Expr, probe: Probe) -> np.ndarray:
    if e.kind == VAR:
        return probe.X[:, e.value]
    if e.kind == PARAM:
        return probe.theta
    if e.kind == CONST:
        return np.full(probe.X.shape[0], float(e.value))
    args = [_eval_shared(c, probe) for c in e.children]
    with np.errstate(all="ignore"):
        return np.asarray(apply_op(e.value, *args), dtype=np.float64)


def fingerprint(e: Expr, probe: Probe) -> tuple:
    """Evaluation vector rounded to 9 significant digits; non-finite entries
    are kept as distinguished symbols. Equal fingerprints signal candidate
    semantic equivalence on the probe."""
    values = _eval_shared(e, probe)
    out = []
    for v in values:
        if np.isnan(v):
            out.append("nan")
        elif np.isinf(v):
            out.append("inf" if v > 0 else "-inf")
        else:
            out.append(float(f"{v:.9g}"))
    return tuple(out)


# ---------------------------------------------------------------------------
# PAES runs

def default_paes_fit() -> FitConfig:
    return FitConfig(opt_iterations=1000, retries=50)


def run_paes(
    data: Dataset,
    max_size: int,
    terminals,
    ops,
    fit_cfg: FitConfig | None = None,
    seed: int = 0,
    n_evals: int | None = None,
    counter: EvaluationCounter | None = None,
) -> list[TraceRecord]:
    """Fit a uniformly permuted enumeration of the search space, producing
    the same trace records as the main search (method ``paes``)."""
    if fit_cfg is None:
        fit_cfg = default_paes_fit()
    if counter is None:
        counter = EvaluationCounter()
    rng = np.random.default_rng(seed)
    trace = []
    for e in permuted_sample(enumerate_expressions(max_size, terminals, ops), seed):
        if n_evals is not None and counter.count >= n_evals:
            break
        fit_expr = relabel_params(e)
        result = fit_params(fit_expr, data, fit_cfg, rng=rng, counter=counter)
        trace.append(
            TraceRecord(
                eval_index=counter.count,
                method="paes",
                size=e.size,
                train_loss=result.train_loss,
                val_loss=result.val_loss,
                expression=str(fit_expr),
                params=tuple(float(p) for p in result.params),
            )
        )
    return trace
