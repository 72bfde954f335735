"""Rewrite rules, e-graph pattern matching, one-step equality saturation.

A pattern is an expression tree that may contain pattern variables
(``?name``); each pattern variable matches a whole e-class. A saturation
step finds every match of every rule first, then instantiates and merges all
right-hand sides, then re-canonicalizes the graph. No fixpoint iteration.

The step is incremental: classes untouched since the previous step with the
same rule set cannot yield matches that were not already applied, so only
dirty classes (and their ancestors up to the deepest pattern) are rematched.
The observable behavior is identical to rematching the whole graph.
"""

from __future__ import annotations

from dataclasses import dataclass

from .egraph import EGraph
from .expr import CONST, OP, PARAM, VAR, Expr, arity, parse


@dataclass(frozen=True)
class Rule:
    """Directed (or bidirectional) rewrite pattern pair."""

    name: str
    lhs: Expr
    rhs: Expr
    bidirectional: bool = False
    # human-readable validity domain; rules are sound inside it only
    domain: str = "all reals"

    def __post_init__(self):
        lv, rv = pattern_vars(self.lhs), pattern_vars(self.rhs)
        if not rv <= lv:
            raise ValueError(f"rule {self.name}: rhs variables {rv - lv} unbound")
        if self.bidirectional and not lv <= rv:
            raise ValueError(
                f"rule {self.name}: bidirectional but lhs variables {lv - rv} "
                "unbound on the right"
            )
        if self.lhs == self.rhs:
            raise ValueError(f"rule {self.name}: lhs equals rhs")

    def __str__(self):
        sep = "<=>" if self.bidirectional else "=>"
        return f"{self.lhs} {sep} {self.rhs}"


def pattern_vars(p: Expr) -> set:
    out = set()
    stack = [p]
    while stack:
        node = stack.pop()
        if node.kind == "pvar":
            out.add(node.value)
        stack.extend(node.children)
    return out


def pattern_depth(p: Expr) -> int:
    if not p.children:
        return 1
    return 1 + max(pattern_depth(c) for c in p.children)


def pattern_ops(p: Expr) -> set:
    out = set()
    stack = [p]
    while stack:
        node = stack.pop()
        if node.kind == OP:
            out.add(node.value)
        stack.extend(node.children)
    return out


def directed_rules(rules) -> list[tuple[str, Expr, Expr]]:
    """Expand bidirectional rules into two directed ones."""
    out = []
    for r in rules:
        out.append((r.name, r.lhs, r.rhs))
        if r.bidirectional:
            out.append((r.name + "-rev", r.rhs, r.lhs))
    return out


# ---------------------------------------------------------------------------
# Rule database

_DEFAULT_RULES = [
    ("add-comm", "(?a + ?b)", "(?b + ?a)", False, "all reals"),
    ("mul-comm", "(?a * ?b)", "(?b * ?a)", False, "all reals"),
    ("add-assoc", "((?a + ?b) + ?c)", "(?a + (?b + ?c))", True, "all reals"),
    ("mul-assoc", "((?a * ?b) * ?c)", "(?a * (?b * ?c))", True, "all reals"),
    ("distrib", "(?a * (?b + ?c))", "((?a * ?b) + (?a * ?c))", True, "all reals"),
    ("add-zero", "(?a + 0)", "?a", False, "all reals"),
    ("sub-zero", "(?a - 0)", "?a", False, "all reals"),
    ("mul-one", "(?a * 1)", "?a", False, "all reals"),
    ("div-one", "(?a / 1)", "?a", False, "all reals"),
    ("mul-zero", "(?a * 0)", "0", False, "all reals"),
    ("sub-self", "(?a - ?a)", "0", False, "all reals"),
    ("div-self", "(?a / ?a)", "1", False, "a != 0"),
    ("recip-recip", "recip(recip(?a))", "?a", False, "a != 0"),
    ("recip-div", "recip((?a / ?b))", "(?b / ?a)", False, "a != 0, b != 0"),
    ("double", "(?a + ?a)", "(2 * ?a)", True, "all reals"),
    ("powabs-one", "powabs(?a, 1)", "abs(?a)", False, "all reals"),
    (
        "powabs-split",
        "powabs(?a, (?b + ?c))",
        "(powabs(?a, ?b) * powabs(?a, ?c))",
        True,
        "a != 0",
    ),
    ("log-product", "log((?a * ?b))", "(log(?a) + log(?b))", True, "a > 0, b > 0"),
    ("exp-sum", "exp((?a + ?b))", "(exp(?a) * exp(?b))", True, "all reals"),
]


def _make_rule(name, lhs, rhs, bidirectional, domain) -> Rule:
    return Rule(
        name,
        parse(lhs, allow_pattern_vars=True),
        parse(rhs, allow_pattern_vars=True),
        bidirectional,
        domain,
    )


def default_rules(ops=None) -> list[Rule]:
    """The curated rule set, restricted to rules whose operators are all
    available when ``ops`` is given."""
    rules = [_make_rule(*spec) for spec in _DEFAULT_RULES]
    if ops is None:
        return rules
    enabled = set(ops)
    return [
        r for r in rules
        if pattern_ops(r.lhs) | pattern_ops(r.rhs) <= enabled
    ]


def parse_rule(line: str, name: str | None = None) -> Rule:
    """Parse one ``lhs => rhs`` or ``lhs <=> rhs`` line."""
    if "<=>" in line:
        lhs, rhs = line.split("<=>")
        bidir = True
    elif "=>" in line:
        lhs, rhs = line.split("=>")
        bidir = False
    else:
        raise ValueError(f"rule line needs '=>' or '<=>': {line!r}")
    return Rule(
        name or line.strip(),
        parse(lhs.strip(), allow_pattern_vars=True),
        parse(rhs.strip(), allow_pattern_vars=True),
        bidir,
    )


def load_rules(path) -> list[Rule]:
    """Load rules from a plain-text file, one per line; '#' starts a comment."""
    rules = []
    with open(path) as fh:
        for i, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            rules.append(parse_rule(line, name=f"line{i}"))
    return rules


# ---------------------------------------------------------------------------
# Matching

def match_in_class(egraph: EGraph, pattern: Expr, cid: int) -> list[dict]:
    """All substitutions under which ``pattern`` matches class ``cid``."""

    def mm(p: Expr, c: int, subst: dict):
        c = egraph.find(c)
        if p.kind == "pvar":
            bound = subst.get(p.value)
            if bound is None:
                s2 = dict(subst)
                s2[p.value] = c
                yield s2
            elif egraph.find(bound) == c:
                yield subst
            return
        cls = egraph.classes[c]
        if p.kind == OP:
            want = (OP, p.value)
            n = len(p.children)
            for node in list(cls.nodes):
                if node[0] != want or len(node) - 1 != n:
                    continue
                substs = [subst]
                for pc, ch in zip(p.children, node[1:]):
                    substs = [s2 for s in substs for s2 in mm(pc, ch, s)]
                    if not substs:
                        break
                yield from substs
        else:
            head = (p.kind, float(p.value) if p.kind == CONST else p.value)
            if any(len(node) == 1 and node[0] == head for node in cls.nodes):
                yield subst

    seen = set()
    out = []
    for s in mm(pattern, cid, {}):
        key = frozenset((k, egraph.find(v)) for k, v in s.items())
        if key not in seen:
            seen.add(key)
            out.append(s)
    return out


def match_all(egraph: EGraph, rules) -> list[tuple]:
    """Every (rule name, class, substitution) occurrence in the whole graph."""
    out = []
    for cid in sorted(egraph.classes):
        for name, lhs, rhs in directed_rules(rules):
            for subst in match_in_class(egraph, lhs, cid):
                out.append((name, cid, subst))
    return out


def instantiate(egraph: EGraph, pattern: Expr, subst: dict) -> int:
    if pattern.kind == "pvar":
        return egraph.find(subst[pattern.value])
    if pattern.kind == VAR:
        return egraph.add_node((VAR, pattern.value))
    if pattern.kind == PARAM:
        return egraph.add_node((PARAM, pattern.value))
    if pattern.kind == CONST:
        return egraph.add_node((CONST, float(pattern.value)))
    children = tuple(instantiate(egraph, c, subst) for c in pattern.children)
    return egraph.add_node((OP, pattern.value), children)


# ---------------------------------------------------------------------------
# One-step saturation

def saturate_one_step(egraph: EGraph, rules, node_budget: int = 10_000,
                      classes=None) -> int:
    """One match-apply-merge pass; returns the number of class merges.

    All matches are collected before any right-hand side is instantiated.
    With ``classes=None`` the whole graph is matched (incrementally, via the
    dirty set). With an explicit collection of class ids, matching is scoped
    to those classes only — the search loop uses this to expand just the
    freshly inserted expression and its subexpressions, which keeps graph
    growth proportional to the number of insertions instead of creeping
    toward full saturation.

    Graph growth beyond ``node_budget`` new nodes aborts the step cleanly:
    already-applied matches stay and the graph is re-canonicalized; in
    whole-graph mode every class is re-marked dirty so nothing is lost on
    the next step.
    """
    egraph.rebuild()
    dirs = directed_rules(rules)
    if classes is not None:
        candidates = {egraph.find(c) for c in classes if c in egraph._uf}
    else:
        rules_key = tuple((n, str(l), str(r)) for n, l, r in dirs)
        pending = egraph.dirty
        egraph.dirty = set()
        if egraph._rules_key != rules_key:
            egraph._rules_key = rules_key
            candidates = set(egraph.classes)
        else:
            candidates = {egraph.find(c) for c in pending if c in egraph._uf}
            depth = max((pattern_depth(l) for _, l, _ in dirs), default=1)
            frontier = set(candidates)
            for _ in range(depth - 1):
                parents = set()
                for c in frontier:
                    if c not in egraph.classes:
                        continue
                    for _, pcid in egraph.classes[c].parents:
                        parents.add(egraph.find(pcid))
                frontier = parents - candidates
                if not frontier:
                    break
                candidates |= frontier
    candidates = sorted(c for c in candidates if c in egraph.classes)

    matches = []
    for cid in candidates:
        for name, lhs, rhs in dirs:
            for subst in match_in_class(egraph, lhs, cid):
                matches.append((cid, rhs, subst))

    start_nodes = egraph.created_nodes
    start_merges = egraph.merge_count
    aborted = False
    for cid, rhs, subst in matches:
        if egraph.created_nodes - start_nodes > node_budget:
            aborted = True
            break
        rid = instantiate(egraph, rhs, subst)
        egraph.merge(cid, rid)
    egraph.rebuild()
    if aborted and classes is None:
        egraph.dirty.update(egraph.classes)
    return egraph.merge_count - start_merges


def saturate(egraph: EGraph, rules, max_steps: int = 50,
             node_budget: int = 1_000_000) -> int:
    """Run one-step saturation to fixpoint (small graphs only)."""
    total = 0
    for _ in range(max_steps):
        merged = saturate_one_step(egraph, rules, node_budget=node_budget)
        total += merged
        if merged == 0:
            break
    return total
