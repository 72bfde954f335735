"""Equality-graph assisted symbolic regression."""

from .egraph import ClassInfo, EGraph, ExtractionError
from .expr import (
    BINARY_OPS,
    DEFAULT_OPS,
    UNARY_OPS,
    Const,
    Dataset,
    Expr,
    Op,
    Param,
    ParseError,
    Var,
    evaluate,
    parse,
    random_expr,
    relabel_params,
)
from .fit import EvaluationCounter, FitConfig, FitResult, fit_params, mse, split
from .paes import (
    enumerate_expressions,
    fingerprint,
    make_probe,
    normalize,
    permuted_sample,
    run_paes,
)
from .rewrite import (
    Rule,
    default_rules,
    load_rules,
    match_all,
    parse_rule,
    saturate,
    saturate_one_step,
)
from .search import RunResult, SearchConfig, TraceRecord, pareto_front, run
from .variation import is_visited, perturb, recombine

__all__ = [
    "BINARY_OPS",
    "DEFAULT_OPS",
    "UNARY_OPS",
    "ClassInfo",
    "Const",
    "Dataset",
    "EGraph",
    "EvaluationCounter",
    "Expr",
    "ExtractionError",
    "FitConfig",
    "FitResult",
    "Op",
    "Param",
    "ParseError",
    "Rule",
    "RunResult",
    "SearchConfig",
    "TraceRecord",
    "Var",
    "default_rules",
    "enumerate_expressions",
    "evaluate",
    "fingerprint",
    "fit_params",
    "is_visited",
    "load_rules",
    "make_probe",
    "match_all",
    "mse",
    "normalize",
    "pareto_front",
    "parse",
    "parse_rule",
    "permuted_sample",
    "perturb",
    "random_expr",
    "recombine",
    "relabel_params",
    "run",
    "run_paes",
    "saturate",
    "saturate_one_step",
    "split",
]

__version__ = "0.1.0"
