"""Weakest-precondition verification-condition generation for the target
language, the end-to-end privacy goal, and a ground falsifier that checks
obligations by enumeration over the declared finite domains.

The backward pass is rule-per-rule: assignments substitute; asserts
conjoin; mechanism invocations universally quantify their fresh output
over the assigned variable's domain (or the declared range) and push the
ghost-budget increment into the postcondition by substitution; loops use
their invariant/variant annotation and emit three side obligations.

The Laplace invocation carrying an accuracy budget gets the combined
schema: outputs equated, the high-probability window assumed only when
the two inputs agree, epsilon charged by input distance and the delta
budget charged unconditionally. Splitting the window off as a hard
input-equality requirement would reject stability-test pipelines whose
inputs agree only in one case of the precondition.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

from .config import Config
from .errors import BudgetError, DpspError, EvalError
from .formulas import (And, Atom, EvalEnv, Forall, Formula, Iff, Implies,
                       Not, Or, RangeDom, VarDom, compile_formula, conj,
                       formula_vars, subst_formula)
from .syntax import (GHOST_ALPHA, GHOST_DELTA, BinOp, Call, Lit, MaxGap,
                     ProgramUnit, RealSetDomain, TAssert, TAssign,
                     TCustomInvoke, TExpInvoke, TIf, TLapInvoke, TReturn,
                     TSeq, TSkip, TWhile, TargetCmd, UnOp, Var, tagged,
                     untag)
from .values import BuiltinRegistry, Memory


@dataclass
class Obligation:
    ident: str
    formula: Formula
    provenance: str
    span: tuple = (1, 1)
    status: str = "unverified"
    counterexample: Memory | None = None
    note: str = ""

    def to_json(self):
        from .frontend import pretty_formula
        out = {"id": self.ident, "provenance": self.provenance,
               "span": list(self.span) if self.span else None,
               "formula": pretty_formula(self.formula),
               "status": self.status}
        if self.counterexample is not None:
            out["counterexample"] = self.counterexample.to_json()
        if self.note:
            out["note"] = self.note
        return out


@dataclass
class HoareTriple:
    pre: Formula
    cmd: TargetCmd
    post: Formula


class WpContext:
    def __init__(self, unit: ProgramUnit, axioms=None):
        self.unit = unit
        self.axioms = axioms or {}
        self._n = 0
        self.obligations = []
        self.unsound_extension = False

    def fresh(self, prefix: str) -> str:
        self._n += 1
        return f"_{prefix}{self._n}"

    def add(self, formula, provenance, span):
        ident = f"ob{len(self.obligations)}"
        self.obligations.append(Obligation(ident, formula, provenance,
                                           span or (1, 1)))


def _subst_many(f: Formula, pairs) -> Formula:
    for name, repl in pairs:
        f = subst_formula(f, name, repl)
    return f


def _ghost_bump(var: str, cost) -> tuple:
    return (var, BinOp("+", Var(var), cost))


def _abs_gap(e1, e2):
    return UnOp("abs", BinOp("-", e1, e2))


def wp(cmd: TargetCmd, post: Formula, ctx: WpContext) -> Formula:
    """Weakest precondition; side obligations accumulate on the context."""
    if isinstance(cmd, TSkip):
        return post
    if isinstance(cmd, TSeq):
        return wp(cmd.first, wp(cmd.second, post, ctx), ctx)
    if isinstance(cmd, TAssign):
        return subst_formula(post, cmd.var, cmd.expr)
    if isinstance(cmd, TAssert):
        return conj([Atom(cmd.cond, span=cmd.span), post])
    if isinstance(cmd, TLapInvoke):
        x1, x2 = cmd.vars
        v = ctx.fresh("v")
        eps = Lit(float(cmd.eps))
        cost = BinOp("*", _abs_gap(cmd.e1, cmd.e2), eps)
        body = _subst_many(post, [(x1, Var(v)), (x2, Var(v)),
                                  _ghost_bump(GHOST_ALPHA, cost)])
        if cmd.spec.kind == "accuracy":
            dc = Lit(float(cmd.spec.delta))
            body = _subst_many(body, [_ghost_bump(GHOST_DELTA, dc)])
            width = Call("acc", [eps, dc])
            window = Implies(
                Atom(BinOp("=", cmd.e1, cmd.e2)),
                Atom(BinOp("<=", _abs_gap(Var(v), cmd.e1), width)))
            return Forall(v, VarDom(cmd.base), Implies(window, body),
                          span=cmd.span)
        return Forall(v, VarDom(cmd.base), body, span=cmd.span)
    if isinstance(cmd, TExpInvoke):
        x1, x2 = cmd.vars
        r = ctx.fresh("r")
        cost = BinOp("*", Lit(float(cmd.eps)), MaxGap(cmd.s1, cmd.e1, cmd.e2))
        body = _subst_many(post, [(x1, Var(r)), (x2, Var(r)),
                                  _ghost_bump(GHOST_ALPHA, cost)])
        return conj([Atom(BinOp("=", cmd.s1, cmd.s2), span=cmd.span),
                     Forall(r, RangeDom(), body, span=cmd.span)])
    if isinstance(cmd, TCustomInvoke):
        return _wp_custom(cmd, post, ctx)
    if isinstance(cmd, TIf):
        g = Atom(cmd.guard)
        return conj([Implies(g, wp(cmd.then, post, ctx)),
                     Implies(Not(g), wp(cmd.els, post, ctx))])
    if isinstance(cmd, TWhile):
        if cmd.annot is None:
            raise DpspError("while without invariant/variant annotation")
        inv = cmd.annot.invariant
        variant = cmd.annot.variant
        g = Atom(cmd.guard)
        k = ctx.fresh("k")
        # exit is forced once the variant is nonpositive
        ctx.add(Implies(conj([inv, Atom(BinOp("<=", variant, Lit(0)))]),
                        Not(g)),
                "while-variant-exit", cmd.span)
        # one iteration preserves the invariant and decreases the variant;
        # the logical constant for the entry value is pinned to the variant
        # and substituted away
        body_post = conj([inv, Atom(BinOp("<", variant, Var(k)))])
        wpb = wp(cmd.body, body_post, ctx)
        ctx.add(Implies(conj([inv, g]), subst_formula(wpb, k, variant)),
                "while-body", cmd.span)
        ctx.add(Implies(conj([inv, Not(g)]), post), "while-post", cmd.span)
        return inv
    if isinstance(cmd, TReturn):
        return _subst_many(post, [(tagged("out", 1), cmd.e1),
                                  (tagged("out", 2), cmd.e2)])
    raise TypeError(f"not a target command: {cmd!r}")


def _wp_custom(cmd: TCustomInvoke, post: Formula, ctx: WpContext) -> Formula:
    axiom = ctx.axioms.get(cmd.mech)
    if axiom is None:
        raise DpspError(f"custom mechanism '{cmd.mech}' needs an axiom file "
                        "(--axioms)")
    ctx.unsound_extension = True
    x1, x2 = cmd.vars
    parts = []
    pres = []
    for case in axiom.cases:
        pre_c, post_c, ce, cd = axiom.instantiate(case, cmd)
        v1 = ctx.fresh("v")
        v2 = ctx.fresh("v")
        post_c = _subst_many(post_c, [(x1, Var(v1)), (x2, Var(v2))])
        q = _subst_many(post, [(x1, Var(v1)), (x2, Var(v2)),
                               _ghost_bump(GHOST_ALPHA, ce),
                               _ghost_bump(GHOST_DELTA, cd)])
        inner = Forall(v1, VarDom(cmd.base),
                       Forall(v2, VarDom(cmd.base), Implies(post_c, q)))
        parts.append(Implies(pre_c, inner))
        pres.append(pre_c)
    # some axiom case must apply, or the invocation blocks
    parts.insert(0, Or(pres) if len(pres) > 1 else pres[0])
    return conj(parts)


def privacy_goal(unit: ProgramUnit, product: TargetCmd) -> HoareTriple:
    """The end-to-end goal: from related inputs with zeroed ghost budgets,
    the product ends with equal outputs and budgets within target."""
    pre = conj([unit.pre,
                Atom(BinOp("=", Var(GHOST_ALPHA), Lit(0.0))),
                Atom(BinOp("=", Var(GHOST_DELTA), Lit(0.0)))])
    post = conj([Atom(BinOp("=", Var(tagged("out", 1)), Var(tagged("out", 2)))),
                 Atom(BinOp("<=", Var(GHOST_ALPHA),
                            Lit(float(unit.eps_target)))),
                 Atom(BinOp("<=", Var(GHOST_DELTA),
                            Lit(float(unit.delta_target))))])
    return HoareTriple(pre, product, post)


def generate_obligations(unit: ProgramUnit, product: TargetCmd,
                         axioms=None) -> tuple:
    """All proof obligations for the privacy goal of a product program.
    Returns (obligations, triple, unsound_extension_flag)."""
    triple = privacy_goal(unit, product)
    ctx = WpContext(unit, axioms)
    pre_wp = wp(product, triple.post, ctx)
    goal = Obligation(f"ob{len(ctx.obligations)}",
                      Implies(triple.pre, pre_wp), "goal", (1, 1))
    obs = ctx.obligations + [goal]
    return obs, triple, ctx.unsound_extension


# ---------------------------------------------------------------------------
# Ghost grids

def ghost_grids(unit: ProgramUnit, config: Config):
    """Finite real grids for the ghost accumulators: multiples of the
    smallest per-site mechanism cost step, covering the target with margin.
    Grids bound falsification coverage, never its soundness."""
    site_eps, site_delta = [], []

    def walk(c):
        from .syntax import (SCustomAssign, SExpAssign, SIf, SLapAssign,
                             SSeq, SWhile)
        if isinstance(c, SSeq):
            walk(c.first), walk(c.second)
        elif isinstance(c, SLapAssign):
            site_eps.append(float(c.eps))
            if c.spec.kind == "accuracy":
                site_delta.append(float(c.spec.delta))
        elif isinstance(c, (SExpAssign, SCustomAssign)):
            site_eps.append(float(c.eps))
        elif isinstance(c, SIf):
            walk(c.then), walk(c.els)
        elif isinstance(c, SWhile):
            walk(c.body)

    walk(unit.body)
    eps_t = float(unit.eps_target)
    delta_t = float(unit.delta_target)

    if site_eps:
        step = min(site_eps) / max(1, config.ghost_step_divisor)
        top = eps_t + 2 * max(site_eps)
    else:
        step = max(eps_t, 1.0)
        top = eps_t + step
    n = min(int(top / step) + 1, 80)
    alpha = tuple(step * k for k in range(n + 1))

    if site_delta:
        dstep = min(site_delta)
        dtop = delta_t + 2 * max(site_delta)
        dn = min(int(dtop / dstep) + 1, 16)
        delta = tuple(dstep * k for k in range(dn + 1))
    elif delta_t > 0:
        delta = (0.0, delta_t, 2 * delta_t)
    else:
        delta = (0.0,)
    return {GHOST_ALPHA: RealSetDomain(alpha), GHOST_DELTA: RealSetDomain(delta)}


# ---------------------------------------------------------------------------
# Falsifier

@dataclass
class FalsifyResult:
    ok: bool
    counterexample: Memory | None = None
    assignments: int = 0
    note: str = ""


def _flatten_implications(f: Formula):
    """Split  P1 -> (P2 -> ... -> Q)  into (premise conjuncts, Q)."""
    premises = []
    while isinstance(f, Implies):
        lhs = f.lhs
        premises.extend(lhs.parts if isinstance(lhs, And) else [lhs])
        f = f.rhs
    return premises, f


def _var_domain(name, unit, env, grids, overrides):
    base, _tag = untag(name)
    for table in (overrides or {}, grids, unit.domains):
        if name in table:
            return table[name]
        if base in table:
            return table[base]
    return None


def falsify(ob: Obligation, unit: ProgramUnit, registry: BuiltinRegistry,
            config: Config | None = None, domain_overrides=None) -> FalsifyResult:
    """Enumerate assignments of the obligation's free variables over their
    declared domains; return the first violating memory or certify validity
    over the grid.

    Premise conjuncts are evaluated as soon as their variables are bound,
    pruning the assignment tree.
    """
    config = config or Config()
    grids = ghost_grids(unit, config)
    env = EvalEnv(registry=registry, range_values=unit.range_values,
                  domains=dict(unit.domains))
    if domain_overrides:
        env.domains.update(domain_overrides)

    free = sorted(formula_vars(ob.formula))
    domains = {}
    for v in free:
        dom = _var_domain(v, unit, env, grids, domain_overrides)
        if dom is None:
            raise EvalError(f"no finite domain for free variable '{v}' "
                            f"in obligation {ob.ident}")
        domains[v] = dom.values()

    premises, conclusion = _flatten_implications(ob.formula)
    prem_items = [(formula_vars(p), compile_formula(p, env)) for p in premises]
    concl_fn = compile_formula(conclusion, env)

    order = _order_vars(free, domains, prem_items)
    # schedule each premise conjunct at the depth where it becomes evaluable
    schedule = [[] for _ in range(len(order) + 1)]
    bound = set()
    depth_of = {}
    for i, v in enumerate(order):
        bound.add(v)
        depth_of[v] = i
    for needs, fn in prem_items:
        d = max((depth_of[v] for v in needs), default=-1)
        schedule[d + 1].append(fn)

    budget = config.falsify_budget
    counter = [0]
    assignment = {}

    def dfs(depth):
        counter[0] += 1
        if counter[0] > budget:
            raise BudgetError(f"falsifier budget of {budget} assignment "
                              "nodes exhausted")
        for fn in schedule[depth]:
            if not fn(assignment):
                return None
        if depth == len(order):
            if not concl_fn(assignment):
                return Memory(dict(assignment))
            return None
        var = order[depth]
        for val in domains[var]:
            assignment[var] = val
            hit = dfs(depth + 1)
            if hit is not None:
                return hit
        del assignment[var]
        return None

    cex = dfs(0)
    if cex is not None:
        return FalsifyResult(False, cex, counter[0])
    return FalsifyResult(True, None, counter[0])


def _order_vars(free, domains, prem_items):
    """Greedy order: repeatedly pick the variable completing the most
    premise conjuncts, breaking ties toward small domains."""
    remaining = set(free)
    pending = [set(needs) for needs, _ in prem_items]
    order = []
    while remaining:
        best, best_key = None, None
        for v in sorted(remaining):
            completed = sum(1 for needs in pending
                            if v in needs and needs <= (set(order) | {v}))
            key = (-completed, len(domains[v]), v)
            if best_key is None or key < best_key:
                best, best_key = v, key
        order.append(best)
        remaining.discard(best)
    return order


def check_obligations(obs, unit, registry, config=None, domain_overrides=None):
    """Falsify every obligation, updating statuses in place. Returns the
    list of falsified obligations."""
    bad = []
    for ob in obs:
        res = falsify(ob, unit, registry, config, domain_overrides)
        if res.ok:
            ob.status = "ground-verified"
            ob.note = f"{res.assignments} assignments"
        else:
            ob.status = "falsified"
            ob.counterexample = res.counterexample
            bad.append(ob)
    return bad
