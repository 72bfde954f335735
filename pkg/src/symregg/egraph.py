"""Multi-root equality graph with hash-consing and per-class analyses.

Every expression visited by the search lives here. E-nodes are tuples
``(head, child_class_id, ...)`` where ``head`` is one of ``("var", j)``,
``("param", i_or_None)``, ``("const", value)``, ``("op", symbol)``.
Insertion is bottom-up with eager constant folding and parameter folding, so
semantically redundant nodes (``2 + 3``, ``t / t``) never enter the graph.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field

from .expr import (
    CONST,
    OP,
    PARAM,
    VAR,
    Const,
    Expr,
    Op,
    Param,
    Var,
    fold_constants,
)

PARAM_FOLD_BINARY = frozenset({"+", "-", "*", "/", "powabs"})


class ExtractionError(RuntimeError):
    """No finite extraction exists for a class (analysis inconsistency)."""


@dataclass
class ClassInfo:
    """Analysis record attached to each e-class."""

    best_size: int
    best_node: tuple
    const_value: float | None = None
    has_param: bool = False
    # operators for which this class holds a node with a parameter child;
    # used to stop redundant parameters from nesting (e.g. (t*x)*t -> t*x)
    absorbing_ops: set = field(default_factory=set)
    evaluated: bool = False
    train_loss: float | None = None
    val_loss: float | None = None
    params: tuple | None = None
    eval_index: int | None = None
    is_root: bool = False


@dataclass
class EClass:
    id: int
    nodes: set
    info: ClassInfo
    parents: list  # (node, class_id) pairs registered at node creation


class EGraph:
    """Single-owner mutable e-graph with deferred congruence repair."""

    def __init__(self):
        self._uf = {}
        self.classes = {}  # canonical id -> EClass
        self.hashcons = {}
        self.roots = []  # insertion-ordered class ids (possibly stale)
        self.worklist = []
        self.dirty = set()  # classes touched since the last saturation step
        self.merge_count = 0
        self.created_nodes = 0
        self._next_id = 0
        self._size_dirty = set()
        self._rules_key = None  # owned by rewrite.saturate_one_step

    # -- union-find ---------------------------------------------------------

    def find(self, cid: int) -> int:
        root = cid
        while self._uf[root] != root:
            root = self._uf[root]
        while self._uf[cid] != root:
            self._uf[cid], cid = root, self._uf[cid]
        return root

    def canonicalize(self, node: tuple) -> tuple:
        if len(node) == 1:
            return node
        return (node[0],) + tuple(self.find(c) for c in node[1:])

    # -- node construction --------------------------------------------------

    def _is_param_class(self, cid: int) -> bool:
        return self.classes[self.find(cid)].info.has_param

    def add_node(self, head: tuple, children=(), create: bool = True):
        """Hash-consed node addition with constant and parameter folding.

        With ``create=False`` this is a pure lookup returning ``None`` when
        the (folded) node is absent.
        """
        children = tuple(self.find(c) for c in children)
        if head[0] == OP:
            sym = head[1]
            vals = [self.classes[c].info.const_value for c in children]
            if all(v is not None for v in vals):
                v = fold_constants(sym, vals)
                if math.isfinite(v):
                    return self.add_node((CONST, v), (), create=create)
            folded = self._fold_params(sym, children, create)
            if folded is not _NO_FOLD:
                return folded
        node = (head,) + children
        cid = self.hashcons.get(node)
        if cid is not None:
            return self.find(cid)
        if not create:
            return None
        return self._new_class(node)

    def _fold_params(self, sym, children, create):
        if len(children) == 1:
            return _NO_FOLD
        is_p = [self._is_param_class(c) for c in children]
        a, b = children
        if sym in PARAM_FOLD_BINARY and is_p[0] and is_p[1]:
            return a
        if sym == "/" and is_p[1]:
            return self.add_node((OP, "*"), (a, b), create=create)
        if sym in ("+", "*"):
            if is_p[1] and sym in self.classes[a].info.absorbing_ops:
                return a
            if is_p[0] and sym in self.classes[b].info.absorbing_ops:
                return b
        return _NO_FOLD

    def _new_class(self, node: tuple) -> int:
        cid = self._next_id
        self._next_id += 1
        self._uf[cid] = cid
        head = node[0]
        best_size = 1 + sum(self.classes[c].info.best_size for c in node[1:])
        info = ClassInfo(best_size=best_size, best_node=node)
        if head[0] == CONST:
            info.const_value = head[1]
        elif head[0] == PARAM:
            info.has_param = True
        elif head[0] == OP and any(self._is_param_class(c) for c in node[1:]):
            info.absorbing_ops.add(head[1])
        self.classes[cid] = EClass(cid, {node}, info, [])
        for c in set(node[1:]):
            self.classes[c].parents.append((node, cid))
        self.hashcons[node] = cid
        self.dirty.add(cid)
        self.created_nodes += 1
        return cid

    # -- expression insertion ----------------------------------------------

    def insert(self, e: Expr, as_root: bool = True, collect: set | None = None) -> int:
        """Bottom-up insertion; returns the canonical class id.

        When ``collect`` is given, the class id of every subexpression is
        added to it (used to scope saturation to a fresh insertion).
        """
        cid = self._insert_rec(e, collect)
        if as_root:
            info = self.classes[cid].info
            if not info.is_root:
                info.is_root = True
                self.roots.append(cid)
        return cid

    def _insert_rec(self, e: Expr, collect: set | None = None) -> int:
        if e.kind == VAR:
            cid = self.add_node((VAR, e.value))
        elif e.kind == PARAM:
            cid = self.add_node((PARAM, e.value))
        elif e.kind == CONST:
            cid = self.add_node((CONST, float(e.value)))
        else:
            children = tuple(self._insert_rec(c, collect) for c in e.children)
            cid = self.add_node((OP, e.value), children)
        if collect is not None:
            collect.add(cid)
        return cid

    def lookup(self, e: Expr) -> int | None:
        """Class id of ``e`` after insertion-time normalization, or ``None``
        if it is not represented in the graph. Never mutates the graph."""
        if e.kind == VAR:
            return self.add_node((VAR, e.value), create=False)
        if e.kind == PARAM:
            return self.add_node((PARAM, e.value), create=False)
        if e.kind == CONST:
            return self.add_node((CONST, float(e.value)), create=False)
        children = []
        for c in e.children:
            cid = self.lookup(c)
            if cid is None:
                return None
            children.append(cid)
        return self.add_node((OP, e.value), tuple(children), create=False)

    # -- merging and repair -------------------------------------------------

    def merge(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        ca, cb = self.classes[ra], self.classes[rb]
        if (len(ca.parents), -ra) >= (len(cb.parents), -rb):
            leader, sub = ra, rb
        else:
            leader, sub = rb, ra
        lc, sc = self.classes[leader], self.classes[sub]
        self._uf[sub] = leader
        self._combine_info(lc.info, sc.info)
        lc.nodes |= sc.nodes
        self.worklist.extend(sc.parents)
        lc.parents.extend(sc.parents)
        del self.classes[sub]
        self.dirty.discard(sub)
        self.dirty.add(leader)
        self._size_dirty.add(leader)
        self.merge_count += 1
        return leader

    @staticmethod
    def _combine_info(li: ClassInfo, si: ClassInfo):
        # evaluation record first: the policy compares pre-merge best sizes
        if si.evaluated:
            keep_sub = not li.evaluated or (
                (si.best_size, si.eval_index) < (li.best_size, li.eval_index)
            )
            if keep_sub:
                li.evaluated = True
                li.train_loss = si.train_loss
                li.val_loss = si.val_loss
                li.params = si.params
                li.eval_index = si.eval_index
        if si.best_size < li.best_size:
            li.best_size = si.best_size
            li.best_node = si.best_node
        if li.const_value is None:
            li.const_value = si.const_value
        li.has_param |= si.has_param
        li.absorbing_ops |= si.absorbing_ops
        li.is_root |= si.is_root

    def rebuild(self):
        """Restore congruence closure and re-relax the size analysis."""
        while self.worklist:
            todo = self.worklist
            self.worklist = []
            for node, cid in todo:
                self._repair(node, cid)
        self._relax_sizes()

    def _repair(self, node, cid):
        self.hashcons.pop(node, None)
        canon = self.canonicalize(node)
        c = self.find(cid)
        existing = self.hashcons.get(canon)
        if existing is not None and self.find(existing) != c:
            c = self.merge(existing, c)
        self.hashcons[canon] = c
        cls = self.classes[c]
        if canon != node and node in cls.nodes:
            cls.nodes.discard(node)
            cls.nodes.add(canon)
            if canon[0][0] == OP and any(
                self._is_param_class(ch) for ch in canon[1:]
            ):
                cls.info.absorbing_ops.add(canon[0][1])

    def _relax_sizes(self):
        queue = deque(self.find(c) for c in self._size_dirty)
        self._size_dirty.clear()
        while queue:
            c = self.find(queue.popleft())
            for node, pcid in self.classes[c].parents:
                p = self.find(pcid)
                canon = self.canonicalize(node)
                size = 1 + sum(
                    self.classes[self.find(ch)].info.best_size for ch in canon[1:]
                )
                info = self.classes[p].info
                if size < info.best_size:
                    info.best_size = size
                    info.best_node = canon
                    queue.append(p)

    # -- extraction ---------------------------------------------------------

    def extract_smallest(self, cid: int) -> Expr:
        """Smallest expression extractable from a class; equal-size ties are
        broken by the lexicographically smaller printed form."""
        memo: dict[int, Expr] = {}

        def ext(c: int) -> Expr:
            c = self.find(c)
            if c in memo:
                return memo[c]
            info = self.classes[c].info
            best = None
            for node in self.classes[c].nodes:
                canon = self.canonicalize(node)
                size = 1 + sum(
                    self.classes[ch].info.best_size for ch in canon[1:]
                )
                if size != info.best_size:
                    continue
                children = [ext(ch) for ch in canon[1:]]
                e = _node_to_expr(canon[0], children)
                s = str(e)
                if best is None or s < best[0]:
                    best = (s, e)
            if best is None:
                raise ExtractionError(
                    f"class {c} has no extraction of size {info.best_size}"
                )
            memo[c] = best[1]
            return best[1]

        return ext(cid)

    # -- evaluation bookkeeping --------------------------------------------

    def mark_evaluated(self, cid, train_loss, val_loss, params, eval_index):
        cid = self.find(cid)
        info = self.classes[cid].info
        if info.evaluated:
            raise ValueError(f"class {cid} was already evaluated (search-loop bug)")
        info.evaluated = True
        info.train_loss = float(train_loss) if not math.isnan(train_loss) else math.inf
        info.val_loss = float(val_loss) if not math.isnan(val_loss) else math.inf
        info.params = tuple(float(p) for p in params)
        info.eval_index = int(eval_index)
        if not info.is_root:
            info.is_root = True
            self.roots.append(cid)

    def root_classes(self) -> list[int]:
        seen = set()
        out = []
        for r in self.roots:
            c = self.find(r)
            if c not in seen:
                seen.add(c)
                out.append(c)
        return out

    def evaluated_classes(self) -> list[int]:
        return [c for c in sorted(self.classes) if self.classes[c].info.evaluated]

    def top_by_size(self, k: int) -> dict[int, list[int]]:
        """Per expression size, the <= k best evaluated classes by validation
        loss (ties by earlier evaluation index)."""
        groups = defaultdict(list)
        for c in self.evaluated_classes():
            groups[self.classes[c].info.best_size].append(c)
        out = {}
        for s in sorted(groups):
            ranked = sorted(
                groups[s],
                key=lambda c: (
                    self.classes[c].info.val_loss,
                    self.classes[c].info.eval_index,
                ),
            )
            out[s] = ranked[:k]
        return out

    def top_pool_by_size(self, k: int) -> list[int]:
        pool = []
        for members in self.top_by_size(k).values():
            pool.extend(members)
        return pool

    def top_overall(self, k: int) -> list[int]:
        ranked = sorted(
            self.evaluated_classes(),
            key=lambda c: (
                self.classes[c].info.val_loss,
                self.classes[c].info.eval_index,
            ),
        )
        return ranked[:k]

    def random_unevaluated(self, rng) -> int | None:
        candidates = [
            c for c in sorted(self.classes) if not self.classes[c].info.evaluated
        ]
        if not candidates:
            return None
        return candidates[rng.randrange(len(candidates))]

    # -- introspection ------------------------------------------------------

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def num_nodes(self) -> int:
        return len(self.hashcons)

    def dump(self) -> str:
        """Deterministic text serialization for golden-file tests."""
        lines = []
        for c in sorted(self.classes):
            cls = self.classes[c]
            info = cls.info
            nodes = sorted(_node_str(self.canonicalize(n)) for n in cls.nodes)
            parts = [f"class {c}:", "{" + ", ".join(nodes) + "}",
                     f"size={info.best_size}"]
            if info.const_value is not None:
                parts.append(f"const={info.const_value!r}")
            if info.has_param:
                parts.append("param")
            if info.is_root:
                parts.append("root")
            if info.evaluated:
                parts.append(
                    f"evaluated(train={info.train_loss!r}, val={info.val_loss!r}, "
                    f"params={list(info.params)!r}, index={info.eval_index})"
                )
            lines.append(" ".join(parts))
        return "\n".join(lines) + "\n"


_NO_FOLD = object()


def _node_to_expr(head, children) -> Expr:
    kind = head[0]
    if kind == VAR:
        return Var(head[1])
    if kind == PARAM:
        return Param(head[1])
    if kind == CONST:
        return Const(head[1])
    return Op(head[1], *children)


def _node_str(node) -> str:
    head = node[0]
    label = {VAR: lambda h: f"x{h[1]}",
             PARAM: lambda h: "t" if h[1] is None else f"t{h[1]}",
             CONST: lambda h: repr(h[1]),
             OP: lambda h: h[1]}[head[0]](head)
    if len(node) == 1:
        return label
    return f"{label}({', '.join(str(c) for c in node[1:])})"
