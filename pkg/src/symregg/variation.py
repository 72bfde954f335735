"""E-graph-aware perturbation and recombination.

Both operators restrict their edit choices so the produced expression maps to
an e-class that has not been evaluated yet. Returning ``None`` signals an
exhausted neighborhood, not an error.
"""

from __future__ import annotations

from .egraph import EGraph
from .expr import (
    Expr,
    Op,
    arity,
    random_expr,
    relabel_params,
    replace_subtree,
    subtrees,
)


def is_visited(egraph: EGraph, e: Expr) -> bool:
    """Whether ``e`` (after insertion-time normalization) maps to an evaluated
    class. Pure lookup; never grows the graph."""
    cid = egraph.lookup(e)
    return cid is not None and egraph.classes[cid].info.evaluated


def perturb(egraph: EGraph, parent: Expr, rng, *, max_size, ops, terminals):
    """Replace a uniformly chosen subtree with a random one; if the result is
    already visited, fall back to same-arity substitutions at that node
    (operator swaps, or terminal swaps at a leaf). ``None`` when every choice
    is visited."""
    index = rng.randrange(parent.size)
    old = subtrees(parent)[index]
    budget = max_size - (parent.size - old.size)
    fresh = random_expr(budget, terminals, ops, rng)
    candidate = replace_subtree(parent, index, fresh)
    if candidate.size <= max_size and not is_visited(egraph, candidate):
        return candidate
    if old.kind == "op":
        replacements = [
            Op(sym, *old.children)
            for sym in ops
            if sym != old.value and arity(sym) == arity(old.value)
        ]
    else:
        replacements = [t for t in terminals if t != old]
    survivors = []
    for rep in replacements:
        cand = replace_subtree(parent, index, rep)
        if cand.size <= max_size and not is_visited(egraph, cand):
            survivors.append(cand)
    if not survivors:
        return None
    return survivors[rng.randrange(len(survivors))]


def recombine(egraph: EGraph, parent1: Expr, parent2: Expr, rng, *, max_size):
    """Replace a uniformly chosen subtree of ``parent1`` with a subtree of
    ``parent2``, sampled uniformly among the ones yielding an unvisited
    expression within the size limit. ``None`` when none survive."""
    index = rng.randrange(parent1.size)
    old = subtrees(parent1)[index]
    base = parent1.size - old.size
    survivors = []
    seen = set()
    for sub in subtrees(parent2):
        if sub in seen:
            continue
        seen.add(sub)
        if base + sub.size > max_size:
            continue
        cand = replace_subtree(parent1, index, sub)
        if not is_visited(egraph, cand):
            survivors.append(cand)
    if not survivors:
        return None
    return survivors[rng.randrange(len(survivors))]
