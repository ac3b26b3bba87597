"""Independent semantics-level validation: the privacy bound is checked
directly on exact output distributions, with no use of the verifier.

The distance between two distributions is the maximum over output sets of
mu1(S) - exp(eps)*mu2(S); the pointwise-greedy sum realizes the subset
maximum because exactly the points with positive margin belong to the
maximizing set.
"""

from __future__ import annotations

import itertools
import math
import warnings as _warnings
from dataclasses import dataclass, field

from .config import Config
from .errors import BudgetError, DpspError, EvalError
from .interp import initial_memory, interpret_unit, lap_dist
from .syntax import (GraphDomain, HistDomain, ListDomain, MultisetDomain,
                     ProgramUnit)
from .values import BuiltinRegistry, Dist, Memory, value_key


def eps_distance(mu1: Dist, mu2: Dist, eps: float) -> float:
    """max over S of mu1(S) - exp(eps)*mu2(S), realized pointwise."""
    if eps < 0:
        raise ValueError("epsilon must be nonnegative")
    factor = math.exp(eps)
    terms = []
    for a in set(mu1.support()) | set(mu2.support()):
        margin = mu1.mass(a) - factor * mu2.mass(a)
        if margin > 0:
            terms.append(margin)
    return math.fsum(terms)


# ---------------------------------------------------------------------------
# Adjacency enumeration

ADJACENCY_KINDS = ("one-entry-pm1", "add-remove", "one-edge", "custom")


def adjacency_pairs(unit: ProgramUnit, kind: str, var: str | None = None,
                    registry: BuiltinRegistry | None = None):
    """Yield ordered (Memory, Memory) input pairs related by the adjacency
    relation; non-varying variables take their domain defaults."""
    if kind not in ADJACENCY_KINDS:
        raise DpspError(f"unknown adjacency kind '{kind}' "
                        f"(choose from {', '.join(ADJACENCY_KINDS)})")
    if kind == "custom":
        yield from _custom_pairs(unit, registry)
        return
    var = var or infer_adjacency_var(unit)
    dom = unit.domains.get(var)
    if dom is None:
        raise DpspError(f"adjacency variable '{var}' has no declared domain")
    emitted = 0
    for v1, v2 in _value_pairs(dom, kind):
        emitted += 1
        yield (initial_memory(unit, {var: v1}),
               initial_memory(unit, {var: v2}))
    if emitted == 0:
        _warnings.warn(f"adjacency enumeration for '{var}' is empty")


def infer_adjacency_var(unit: ProgramUnit) -> str:
    """The input variable both of whose tagged copies appear in the
    precondition, when unique."""
    from .formulas import formula_vars
    from .syntax import untag
    tags = {}
    for v in formula_vars(unit.pre):
        base, tag = untag(v)
        if tag is not None:
            tags.setdefault(base, set()).add(tag)
    cands = sorted(b for b, t in tags.items() if t == {1, 2}
                   and b in unit.decls)
    if len(cands) != 1:
        raise DpspError("cannot infer the adjacency variable from the "
                        "precondition; pass it explicitly")
    return cands[0]


def default_adjacency_kind(unit: ProgramUnit, var: str) -> str:
    dom = unit.domains.get(var)
    if isinstance(dom, MultisetDomain):
        return "add-remove"
    if isinstance(dom, GraphDomain):
        return "one-edge"
    return "one-entry-pm1"


def _value_pairs(dom, kind):
    vals = dom.values()
    inset = set(vals)
    if kind == "one-entry-pm1":
        for v in vals:
            for i in range(len(v)):
                for d in (-1, 1):
                    w = v[:i] + (v[i] + d,) + v[i + 1:]
                    if w in inset:
                        yield v, w
    elif kind == "add-remove":
        for v in vals:
            seen = set()
            for i in range(len(v)):
                w = v[:i] + v[i + 1:]
                if w not in seen and w in inset:
                    seen.add(w)
                    yield v, w
                    yield w, v
    elif kind == "one-edge":
        if not isinstance(dom, GraphDomain):
            raise DpspError("one-edge adjacency needs a graph domain")
        n = dom.nodes
        for v in vals:
            for i in range(n, len(v)):
                w = v[:i] + (1 - v[i],) + v[i + 1:]
                if w in inset:
                    yield v, w
    else:  # pragma: no cover
        raise DpspError(f"unhandled adjacency kind {kind}")


def _custom_pairs(unit, registry):
    """All domain pairs satisfying the precondition; desk scale only."""
    from .formulas import EvalEnv, eval_formula, formula_vars
    from .syntax import untag, tagged
    registry = registry or _default_reg()
    env = EvalEnv(registry=registry, range_values=unit.range_values,
                  domains=unit.domains)
    varying = sorted({untag(v)[0] for v in formula_vars(unit.pre)
                      if untag(v)[1] is not None})
    doms = []
    for b in varying:
        d = unit.domains.get(b)
        if d is None:
            raise DpspError(f"variable '{b}' has no declared domain")
        doms.append(d.values())
    emitted = 0
    for combo1 in itertools.product(*doms):
        for combo2 in itertools.product(*doms):
            probe = {}
            for b, v1, v2 in zip(varying, combo1, combo2):
                probe[tagged(b, 1)] = v1
                probe[tagged(b, 2)] = v2
            probe["__alpha"] = 0.0
            probe["__delta"] = 0.0
            if eval_formula(unit.pre, Memory(probe), env):
                emitted += 1
                yield (initial_memory(unit, dict(zip(varying, combo1))),
                       initial_memory(unit, dict(zip(varying, combo2))))
    if emitted == 0:
        _warnings.warn("custom adjacency enumeration is empty")


def _default_reg():
    from .values import default_registry
    return default_registry()


# ---------------------------------------------------------------------------
# End-to-end distribution check

@dataclass
class DpCheckReport:
    eps: float
    delta: float
    tol: float
    pairs_checked: int = 0
    max_distance: float = 0.0
    witness_pair: tuple | None = None
    passed: bool = True

    def to_json(self):
        wit = None
        if self.witness_pair is not None:
            wit = [self.witness_pair[0].to_json(), self.witness_pair[1].to_json()]
        return {"eps": self.eps, "delta": self.delta, "tol": self.tol,
                "pairs_checked": self.pairs_checked,
                "max_distance": self.max_distance,
                "witness_pair": wit, "pass": self.passed}


def default_tol(unit: ProgramUnit, config: Config) -> float:
    """Ten times the per-call truncation tail bound, the only approximation
    in the exact pipeline."""
    if config.tol is not None:
        return config.tol
    return 10.0 * config.tail_tol


def dp_check(unit: ProgramUnit, pairs, eps: float, delta: float,
             registry: BuiltinRegistry, config: Config | None = None,
             tol: float | None = None) -> DpCheckReport:
    """Interpret the program on every related input pair and check that the
    output-distribution distance stays within delta + tol."""
    config = config or Config()
    tol = default_tol(unit, config) if tol is None else tol
    report = DpCheckReport(eps=eps, delta=delta, tol=tol)
    cache: dict[Memory, Dist] = {}

    def out_dist(m: Memory) -> Dist:
        if m not in cache:
            cache[m] = interpret_unit(unit, m, registry, config)
        return cache[m]

    for m1, m2 in pairs:
        d = eps_distance(out_dist(m1), out_dist(m2), eps)
        report.pairs_checked += 1
        if d > report.max_distance:
            report.max_distance = d
            report.witness_pair = (m1, m2)
        if d > delta + tol:
            report.passed = False
    return report


# ---------------------------------------------------------------------------
# Mechanism tail check

def tail_check(eps: float, T: int, window: int | None = None,
               config: Config | None = None):
    """Mass of the centered discrete Laplace outside [-T, T], against the
    analytic bound 2*exp(-T*eps/2). Returns (measured, bound)."""
    config = config or Config()
    if T <= 0:
        raise ValueError("T must be a positive integer")
    w = window if window is not None else max(config.lap_window(eps), T + 1)
    if w <= T:
        return 0.0, 2.0 * math.exp(-T * eps / 2.0)
    d = lap_dist(eps, 0, w, config.tail_tol if window is None else 2.0)
    measured = math.fsum(p for v, p in d.items() if abs(v) > T)
    bound = 2.0 * math.exp(-T * eps / 2.0)
    return measured, bound


# ---------------------------------------------------------------------------
# Distance to instability

def dist_to_instability(query, d, dom: MultisetDomain, max_radius: int | None = None) -> int:
    """Largest x such that every database within add/remove distance x of d
    (inside the declared universe) has the same query value; exhaustive
    ball search at toy scale."""
    if not dom.contains(d):
        raise EvalError(f"database {d!r} outside the declared universe")
    limit = max_radius if max_radius is not None else 2 * dom.maxlen + 1
    qd = query(d)
    frontier = {d}
    seen = {d}
    radius = 0
    while radius < limit:
        nxt = set()
        for cur in frontier:
            for nb in _neighbors(cur, dom):
                if nb not in seen:
                    seen.add(nb)
                    nxt.add(nb)
        if not nxt:
            return radius if radius < limit else limit
        if any(query(nb) != qd for nb in nxt):
            return radius
        frontier = nxt
        radius += 1
    raise BudgetError(f"instability search exceeded radius {limit}")


def _neighbors(d, dom: MultisetDomain):
    out = set()
    for i in range(len(d)):
        out.add(d[:i] + d[i + 1:])
    if len(d) < dom.maxlen:
        for e in dom.entries:
            out.add(tuple(sorted(d + (e,))))
    return out


def make_dti_builtin(query, dom: MultisetDomain):
    """Registry implementation of the distance-to-instability builtin for a
    fixed query over a fixed toy universe."""
    cache = {}

    def dti(d):
        if d not in cache:
            cache[d] = dist_to_instability(query, d, dom)
        return cache[d]

    return dti
