"""Bounded enumeration semantics of the nondeterministic target language.

Execution maps a memory to the set of reachable memories; a failing assert
collapses the whole run to BOTTOM (absorbing through sequencing and
nondeterministic unions). Nondeterministic choices range over the declared
finite domain of the assigned variable, so enumeration both tests the
product construction and cross-checks verified Hoare triples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import BudgetError, EvalError
from .formulas import EvalEnv, eval_expr, eval_formula, subst_formula
from .syntax import (GHOST_ALPHA, GHOST_DELTA, TAssert, TAssign,
                     TCustomInvoke, TExpInvoke, TIf, TLapInvoke, TReturn,
                     TSeq, TSkip, TWhile, TargetCmd, tagged, untag)
from .values import Memory, ScoreMap, _acc


class _BottomSignal(Exception):
    pass


class _Bottom:
    def __repr__(self):
        return "BOTTOM"


BOTTOM = _Bottom()


@dataclass
class RunContext:
    env: EvalEnv
    budget: int = 1_000_000
    axioms: dict = field(default_factory=dict)   # mech name -> CustomAxiom
    created: int = 0

    def charge(self, n: int):
        self.created += n
        if self.created > self.budget:
            raise BudgetError(
                f"enumeration budget of {self.budget} memories exhausted; "
                "result would be partial")

    def domain_of(self, var: str):
        base, _ = untag(var)
        dom = self.env.domains.get(base) or self.env.domains.get(var)
        if dom is None:
            raise EvalError(f"no finite domain declared for '{base}'")
        return dom.values()


def run_target(cmd: TargetCmd, m: Memory, ctx: RunContext):
    """Set of final memories, or BOTTOM if any execution fails an assert."""
    try:
        return frozenset(_run(cmd, frozenset([m]), ctx))
    except _BottomSignal:
        return BOTTOM


def _run(cmd: TargetCmd, ms: frozenset, ctx: RunContext) -> frozenset:
    if isinstance(cmd, TSkip):
        return ms
    if isinstance(cmd, TSeq):
        return _run(cmd.second, _run(cmd.first, ms, ctx), ctx)
    if isinstance(cmd, TAssign):
        out = set()
        for m in ms:
            out.add(m.set(cmd.var, eval_expr(cmd.expr, m, ctx.env)))
        ctx.charge(len(out))
        return frozenset(out)
    if isinstance(cmd, TAssert):
        for m in ms:
            v = eval_expr(cmd.cond, m, ctx.env)
            if not isinstance(v, bool):
                raise EvalError("assert condition is not boolean", cmd.span)
            if not v:
                raise _BottomSignal()
        return ms
    if isinstance(cmd, TLapInvoke):
        return _lap_invoke(cmd, ms, ctx)
    if isinstance(cmd, TExpInvoke):
        return _exp_invoke(cmd, ms, ctx)
    if isinstance(cmd, TCustomInvoke):
        return _custom_invoke(cmd, ms, ctx)
    if isinstance(cmd, TIf):
        out = set()
        for m in ms:
            g = eval_expr(cmd.guard, m, ctx.env)
            branch = cmd.then if g else cmd.els
            out |= _run(branch, frozenset([m]), ctx)
        return frozenset(out)
    if isinstance(cmd, TWhile):
        # wave iteration over sets; a memory revisited on a cycle can never
        # produce a new exit, so it is processed once
        done = set()
        seen = set(ms)
        active = ms
        while active:
            ctx.charge(len(active))
            stepping = set()
            for m in active:
                if eval_expr(cmd.guard, m, ctx.env):
                    stepping.add(m)
                else:
                    done.add(m)
            if not stepping:
                break
            nxt = _run(cmd.body, frozenset(stepping), ctx)
            active = frozenset(nxt - seen)
            seen |= active
        return frozenset(done)
    if isinstance(cmd, TReturn):
        out = set()
        for m in ms:
            out.add(m.set_many({tagged("out", 1): eval_expr(cmd.e1, m, ctx.env),
                                tagged("out", 2): eval_expr(cmd.e2, m, ctx.env)}))
        return frozenset(out)
    raise TypeError(f"not a target command: {cmd!r}")


def _ghosts(m: Memory):
    a = m.get(GHOST_ALPHA)
    d = m.get(GHOST_DELTA)
    if a is None or d is None:
        raise EvalError("target memory must bind __alpha and __delta")
    return a, d


def _lap_invoke(cmd: TLapInvoke, ms, ctx: RunContext) -> frozenset:
    x1, x2 = cmd.vars
    eps = float(cmd.eps)
    dom = ctx.domain_of(cmd.base)
    out = set()
    for m in ms:
        a, d = _ghosts(m)
        c1 = eval_expr(cmd.e1, m, ctx.env)
        c2 = eval_expr(cmd.e2, m, ctx.env)
        cost = abs(c1 - c2) * eps
        choices = dom
        new_delta = d
        if cmd.spec.kind == "accuracy":
            new_delta = d + float(cmd.spec.delta)
            if c1 == c2:
                width = _acc(eps, float(cmd.spec.delta))
                choices = [v for v in dom if abs(v - c1) <= width]
        for v in choices:
            out.add(m.set_many({x1: v, x2: v, GHOST_ALPHA: a + cost,
                                GHOST_DELTA: new_delta}))
        ctx.charge(len(choices))
    return frozenset(out)


def _exp_invoke(cmd: TExpInvoke, ms, ctx: RunContext) -> frozenset:
    x1, x2 = cmd.vars
    eps = float(cmd.eps)
    rng = ctx.env.range_values
    if not rng:
        raise EvalError("exponential invocation needs a declared range")
    out = set()
    for m in ms:
        a, d = _ghosts(m)
        s1 = eval_expr(cmd.s1, m, ctx.env)
        s2 = eval_expr(cmd.s2, m, ctx.env)
        if not (isinstance(s1, ScoreMap) and isinstance(s2, ScoreMap)):
            raise EvalError("exponential invocation scores must be score maps")
        if s1 != s2:
            raise _BottomSignal()
        i1 = eval_expr(cmd.e1, m, ctx.env)
        i2 = eval_expr(cmd.e2, m, ctx.env)
        gap = max(abs(s1.get(i1, r) - s1.get(i2, r)) for r in rng)
        for r in rng:
            out.add(m.set_many({x1: r, x2: r, GHOST_ALPHA: a + eps * gap,
                                GHOST_DELTA: d}))
        ctx.charge(len(rng))
    return frozenset(out)


def _custom_invoke(cmd: TCustomInvoke, ms, ctx: RunContext) -> frozenset:
    axiom = ctx.axioms.get(cmd.mech)
    if axiom is None:
        raise EvalError(f"no axioms supplied for custom mechanism "
                        f"'{cmd.mech}'", cmd.span)
    x1, x2 = cmd.vars
    dom = ctx.domain_of(cmd.base)
    out = set()
    for m in ms:
        a, d = _ghosts(m)
        any_case = False
        for case in axiom.cases:
            pre, post, ce, cd = axiom.instantiate(case, cmd)
            if not eval_formula(pre, m, ctx.env):
                continue
            any_case = True
            cost_e = eval_expr(ce, m, ctx.env)
            cost_d = eval_expr(cd, m, ctx.env)
            for v1 in dom:
                for v2 in dom:
                    m2 = m.set_many({x1: v1, x2: v2,
                                     GHOST_ALPHA: a + cost_e,
                                     GHOST_DELTA: d + cost_d})
                    if eval_formula(post, m2, ctx.env):
                        out.add(m2)
            ctx.charge(len(dom) * len(dom))
        if not any_case:
            raise _BottomSignal()
    return frozenset(out)


def initial_target_memory(unit, pair=None, overrides=None) -> Memory:
    """Tagged memory with ghosts initialized to zero. `pair` optionally maps
    untagged input variables to (value1, value2)."""
    from .interp import _type_default
    vals = {GHOST_ALPHA: 0.0, GHOST_DELTA: 0.0}
    for name, ty in unit.decls.items():
        dom = unit.domains.get(name)
        dflt = dom.default() if dom is not None else _type_default(ty)
        v1 = v2 = dflt
        if pair and name in pair:
            v1, v2 = pair[name]
        vals[tagged(name, 1)] = v1
        vals[tagged(name, 2)] = v2
    if overrides:
        vals.update(overrides)
    return Memory(vals)
