"""First-order assertions over program and ghost variables, plus the
evaluation semantics shared by the interpreters and the falsifier.

Quantifiers are bounded: they range over a declared variable domain, the
mechanism range, or an explicit value set, so every formula evaluates to a
boolean on a concrete memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .errors import EvalError
from .syntax import (BinOp, Call, Expr, Lit, MaxGap, ScoreApp, Span, UnOp, Var,
                     structurally_equal, subst_expr)
from .values import BuiltinRegistry, Memory, ScoreMap


# ---------------------------------------------------------------------------
# Evaluation environment

@dataclass
class EvalEnv:
    registry: BuiltinRegistry
    range_values: tuple = ()
    domains: dict = field(default_factory=dict)

    def domain_values(self, var: str):
        from .syntax import untag
        base, _ = untag(var)
        dom = self.domains.get(var) or self.domains.get(base)
        if dom is None:
            raise EvalError(f"no finite domain declared for '{var}'")
        return dom.values()


# ---------------------------------------------------------------------------
# Expression evaluation

def _num(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise EvalError(f"{what} expects a number, got {v!r}")
    return v


def eval_expr(e: Expr, m: Memory, env: EvalEnv):
    if isinstance(e, Var):
        return m[e.name]
    if isinstance(e, Lit):
        v = e.value
        return float(v) if isinstance(v, Fraction) else v
    if isinstance(e, UnOp):
        a = eval_expr(e.arg, m, env)
        return apply_unop(e.op, a)
    if isinstance(e, BinOp):
        if e.op == "and":
            return bool(eval_expr(e.left, m, env)) and bool(eval_expr(e.right, m, env))
        if e.op == "or":
            return bool(eval_expr(e.left, m, env)) or bool(eval_expr(e.right, m, env))
        if e.op == "->":
            return (not eval_expr(e.left, m, env)) or bool(eval_expr(e.right, m, env))
        a = eval_expr(e.left, m, env)
        b = eval_expr(e.right, m, env)
        return apply_binop(e.op, a, b)
    if isinstance(e, Call):
        args = [eval_expr(a, m, env) for a in e.args]
        return env.registry.call(e.name, args)
    if isinstance(e, ScoreApp):
        s = eval_expr(e.score, m, env)
        if not isinstance(s, ScoreMap):
            raise EvalError("score application on a non-score value")
        return s.get(eval_expr(e.input, m, env), eval_expr(e.elem, m, env))
    if isinstance(e, MaxGap):
        s = eval_expr(e.score, m, env)
        if not isinstance(s, ScoreMap):
            raise EvalError("maxgap on a non-score value")
        i1 = eval_expr(e.e1, m, env)
        i2 = eval_expr(e.e2, m, env)
        if not env.range_values:
            raise EvalError("maxgap needs a declared range")
        return max(abs(s.get(i1, r) - s.get(i2, r)) for r in env.range_values)
    raise TypeError(f"not an expression: {e!r}")


def apply_unop(op, a):
    if op == "neg":
        return -_num(a, "neg")
    if op == "not":
        return not a
    if op == "abs":
        return abs(_num(a, "abs"))
    if op == "sqrt":
        v = _num(a, "sqrt")
        if v < 0:
            raise EvalError("sqrt of a negative number")
        return math.sqrt(v)
    if op == "hd":
        if not a:
            raise EvalError("hd of empty list")
        return a[0]
    if op == "tl":
        if not a:
            raise EvalError("tl of empty list")
        return a[1:]
    if op == "length":
        return len(a)
    raise EvalError(f"unknown unary operator '{op}'")


def apply_binop(op, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            raise EvalError("division by zero")
        return a / b
    if op == "div":
        if b == 0:
            raise EvalError("division by zero")
        return a // b
    if op == "mod":
        if b == 0:
            raise EvalError("modulo by zero")
        return a % b
    if op == "min":
        return min(a, b)
    if op == "max":
        return max(a, b)
    if op == "::":
        return (a,) + b
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise EvalError(f"unknown binary operator '{op}'")


# ---------------------------------------------------------------------------
# Formulas

@dataclass(eq=False)
class Formula:
    span: Optional[Span] = field(default=None, kw_only=True, repr=False)


@dataclass(eq=False)
class Atom(Formula):
    expr: Expr


@dataclass(eq=False)
class Not(Formula):
    body: Formula


@dataclass(eq=False)
class And(Formula):
    parts: list


@dataclass(eq=False)
class Or(Formula):
    parts: list


@dataclass(eq=False)
class Implies(Formula):
    lhs: Formula
    rhs: Formula


@dataclass(eq=False)
class Iff(Formula):
    lhs: Formula
    rhs: Formula


class DomainRef:
    pass


@dataclass(eq=False)
class RangeDom(DomainRef):
    """The declared exponential-mechanism range."""


@dataclass(eq=False)
class VarDom(DomainRef):
    """The declared finite domain of a program variable."""
    var: str


@dataclass(eq=False)
class SetDom(DomainRef):
    values: tuple


@dataclass(eq=False)
class Forall(Formula):
    var: str
    dom: DomainRef
    body: Formula


@dataclass(eq=False)
class Exists(Formula):
    var: str
    dom: DomainRef
    body: Formula


TRUE = Atom(Lit(True))


def conj(parts) -> Formula:
    parts = [p for p in parts if not is_trivially_true(p)]
    if not parts:
        return Atom(Lit(True))
    if len(parts) == 1:
        return parts[0]
    flat = []
    for p in parts:
        flat.extend(p.parts if isinstance(p, And) else [p])
    return And(flat)


def is_trivially_true(f: Formula) -> bool:
    return isinstance(f, Atom) and isinstance(f.expr, Lit) and f.expr.value is True


def atom_cmp(op, a: Expr, b: Expr) -> Formula:
    return Atom(BinOp(op, a, b))


def formula_equal(a, b) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, Atom):
        return structurally_equal(a.expr, b.expr)
    if isinstance(a, Not):
        return formula_equal(a.body, b.body)
    if isinstance(a, (And, Or)):
        return (len(a.parts) == len(b.parts)
                and all(formula_equal(x, y) for x, y in zip(a.parts, b.parts)))
    if isinstance(a, (Implies, Iff)):
        return formula_equal(a.lhs, b.lhs) and formula_equal(a.rhs, b.rhs)
    if isinstance(a, (Forall, Exists)):
        return (a.var == b.var and domref_equal(a.dom, b.dom)
                and formula_equal(a.body, b.body))
    raise TypeError(f"not a formula: {a!r}")


def domref_equal(a: DomainRef, b: DomainRef) -> bool:
    if type(a) is not type(b):
        return False
    if isinstance(a, VarDom):
        return a.var == b.var
    if isinstance(a, SetDom):
        return a.values == b.values
    return True


def formula_vars(f: Formula) -> set:
    from .syntax import expr_vars
    if isinstance(f, Atom):
        return expr_vars(f.expr)
    if isinstance(f, Not):
        return formula_vars(f.body)
    if isinstance(f, (And, Or)):
        out = set()
        for p in f.parts:
            out |= formula_vars(p)
        return out
    if isinstance(f, (Implies, Iff)):
        return formula_vars(f.lhs) | formula_vars(f.rhs)
    if isinstance(f, (Forall, Exists)):
        return formula_vars(f.body) - {f.var}
    raise TypeError(f"not a formula: {f!r}")


def subst_formula(f: Formula, name: str, repl: Expr) -> Formula:
    """f[name := repl]; quantified variables shadow the substitution. Bound
    variables are generated fresh, so capture cannot occur."""
    if isinstance(f, Atom):
        return Atom(subst_expr(f.expr, name, repl), span=f.span)
    if isinstance(f, Not):
        return Not(subst_formula(f.body, name, repl), span=f.span)
    if isinstance(f, And):
        return And([subst_formula(p, name, repl) for p in f.parts], span=f.span)
    if isinstance(f, Or):
        return Or([subst_formula(p, name, repl) for p in f.parts], span=f.span)
    if isinstance(f, Implies):
        return Implies(subst_formula(f.lhs, name, repl),
                       subst_formula(f.rhs, name, repl), span=f.span)
    if isinstance(f, Iff):
        return Iff(subst_formula(f.lhs, name, repl),
                   subst_formula(f.rhs, name, repl), span=f.span)
    if isinstance(f, (Forall, Exists)):
        if f.var == name:
            return f
        cls = type(f)
        return cls(f.var, f.dom, subst_formula(f.body, name, repl), span=f.span)
    raise TypeError(f"not a formula: {f!r}")


def _dom_values(dom: DomainRef, env: EvalEnv):
    if isinstance(dom, RangeDom):
        if not env.range_values:
            raise EvalError("no declared range for quantifier")
        return env.range_values
    if isinstance(dom, VarDom):
        return env.domain_values(dom.var)
    if isinstance(dom, SetDom):
        return dom.values
    raise TypeError(f"not a domain reference: {dom!r}")


def eval_formula(f: Formula, m: Memory, env: EvalEnv) -> bool:
    if isinstance(f, Atom):
        v = eval_expr(f.expr, m, env)
        if not isinstance(v, bool):
            raise EvalError("formula atom did not evaluate to a boolean")
        return v
    if isinstance(f, Not):
        return not eval_formula(f.body, m, env)
    if isinstance(f, And):
        return all(eval_formula(p, m, env) for p in f.parts)
    if isinstance(f, Or):
        return any(eval_formula(p, m, env) for p in f.parts)
    if isinstance(f, Implies):
        return (not eval_formula(f.lhs, m, env)) or eval_formula(f.rhs, m, env)
    if isinstance(f, Iff):
        return eval_formula(f.lhs, m, env) == eval_formula(f.rhs, m, env)
    if isinstance(f, Forall):
        return all(eval_formula(f.body, m.set(f.var, v), env)
                   for v in _dom_values(f.dom, env))
    if isinstance(f, Exists):
        return any(eval_formula(f.body, m.set(f.var, v), env)
                   for v in _dom_values(f.dom, env))
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# Compilation to closures (the falsifier's hot path)

def compile_expr(e: Expr, env: EvalEnv):
    """Compile an expression to a closure over a mutable name->value dict."""
    if isinstance(e, Var):
        name = e.name
        def run(d, _n=name):
            try:
                return d[_n]
            except KeyError:
                raise EvalError(f"unbound variable '{_n}'")
        return run
    if isinstance(e, Lit):
        v = e.value
        if isinstance(v, Fraction):
            v = float(v)
        return lambda d, _v=v: _v
    if isinstance(e, UnOp):
        f = compile_expr(e.arg, env)
        op = e.op
        if op == "not":
            return lambda d: not f(d)
        if op == "neg":
            return lambda d: -f(d)
        if op == "abs":
            return lambda d: abs(f(d))
        if op == "length":
            return lambda d: len(f(d))
        return lambda d, _op=op: apply_unop(_op, f(d))
    if isinstance(e, BinOp):
        l = compile_expr(e.left, env)
        r = compile_expr(e.right, env)
        op = e.op
        table = {
            "+": lambda d: l(d) + r(d),
            "-": lambda d: l(d) - r(d),
            "*": lambda d: l(d) * r(d),
            "=": lambda d: l(d) == r(d),
            "!=": lambda d: l(d) != r(d),
            "<": lambda d: l(d) < r(d),
            "<=": lambda d: l(d) <= r(d),
            ">": lambda d: l(d) > r(d),
            ">=": lambda d: l(d) >= r(d),
            "and": lambda d: bool(l(d)) and bool(r(d)),
            "or": lambda d: bool(l(d)) or bool(r(d)),
            "->": lambda d: (not l(d)) or bool(r(d)),
            "::": lambda d: (l(d),) + r(d),
            "min": lambda d: min(l(d), r(d)),
            "max": lambda d: max(l(d), r(d)),
        }
        if op in table:
            return table[op]
        return lambda d, _op=op: apply_binop(_op, l(d), r(d))
    if isinstance(e, Call):
        fns = [compile_expr(a, env) for a in e.args]
        entry = env.registry.lookup(e.name)
        if entry is None:
            name = e.name
            def run(d, _n=name):
                raise EvalError(f"no implementation registered for builtin '{_n}'")
            return run
        arity, fn = entry
        if arity != len(fns):
            raise EvalError(f"builtin '{e.name}' expects {arity} args, got {len(fns)}")
        if arity == 1:
            f0 = fns[0]
            return lambda d: fn(f0(d))
        if arity == 2:
            f0, f1 = fns
            return lambda d: fn(f0(d), f1(d))
        if arity == 3:
            f0, f1, f2 = fns
            return lambda d: fn(f0(d), f1(d), f2(d))
        return lambda d: fn(*[g(d) for g in fns])
    if isinstance(e, ScoreApp):
        fs = compile_expr(e.score, env)
        fi = compile_expr(e.input, env)
        fe = compile_expr(e.elem, env)
        return lambda d: fs(d).get(fi(d), fe(d))
    if isinstance(e, MaxGap):
        fs = compile_expr(e.score, env)
        f1 = compile_expr(e.e1, env)
        f2 = compile_expr(e.e2, env)
        rng = env.range_values
        if not rng:
            raise EvalError("maxgap needs a declared range")
        def run(d):
            s = fs(d)
            a, b = f1(d), f2(d)
            return max(abs(s.get(a, r) - s.get(b, r)) for r in rng)
        return run
    raise TypeError(f"not an expression: {e!r}")


def compile_formula(f: Formula, env: EvalEnv):
    if isinstance(f, Atom):
        return compile_expr(f.expr, env)
    if isinstance(f, Not):
        g = compile_formula(f.body, env)
        return lambda d: not g(d)
    if isinstance(f, And):
        gs = [compile_formula(p, env) for p in f.parts]
        return lambda d: all(g(d) for g in gs)
    if isinstance(f, Or):
        gs = [compile_formula(p, env) for p in f.parts]
        return lambda d: any(g(d) for g in gs)
    if isinstance(f, Implies):
        gl = compile_formula(f.lhs, env)
        gr = compile_formula(f.rhs, env)
        return lambda d: (not gl(d)) or bool(gr(d))
    if isinstance(f, Iff):
        gl = compile_formula(f.lhs, env)
        gr = compile_formula(f.rhs, env)
        return lambda d: bool(gl(d)) == bool(gr(d))
    if isinstance(f, (Forall, Exists)):
        body = compile_formula(f.body, env)
        values = _dom_values(f.dom, env)
        var = f.var
        if isinstance(f, Forall):
            def run_all(d):
                old = d.get(var, _MISSING)
                try:
                    for v in values:
                        d[var] = v
                        if not body(d):
                            return False
                    return True
                finally:
                    _restore(d, var, old)
            return run_all
        def run_any(d):
            old = d.get(var, _MISSING)
            try:
                for v in values:
                    d[var] = v
                    if body(d):
                        return True
                return False
            finally:
                _restore(d, var, old)
        return run_any
    raise TypeError(f"not a formula: {f!r}")


_MISSING = object()


def _restore(d, var, old):
    if old is _MISSING:
        d.pop(var, None)
    else:
        d[var] = old
