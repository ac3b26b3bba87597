"""Abstract syntax for the probabilistic source language, the
nondeterministic target language, and the declaration headers.

AST nodes are plain dataclasses with identity equality; use
`structurally_equal` to compare trees modulo spans and inferred types.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Optional

Span = tuple  # (line, col)

# ---------------------------------------------------------------------------
# Semantic types

T_INT = "int"
T_REAL = "real"
T_BOOL = "bool"
T_INTLIST = "intlist"
T_SCORE = "score"

NUMERIC = (T_INT, T_REAL)

RESERVED_PREFIX = "__"
GHOST_ALPHA = "__alpha"
GHOST_DELTA = "__delta"
RESULT_VAR = "out"


def tagged(name: str, tag: int) -> str:
    return f"{name}_{tag}"


def untag(name: str) -> tuple[str, Optional[int]]:
    """Split a product variable into (base, tag); ghosts and untagged names
    return tag None."""
    if name.endswith("_1"):
        return name[:-2], 1
    if name.endswith("_2"):
        return name[:-2], 2
    return name, None


# ---------------------------------------------------------------------------
# Expressions

UNARY_OPS = ("neg", "not", "hd", "tl", "length", "abs", "sqrt")
BINARY_OPS = (
    "+", "-", "*", "div", "mod", "/", "min", "max", "::",
    "=", "!=", "<", "<=", ">", ">=", "and", "or", "->",
)


@dataclass(eq=False)
class Expr:
    span: Optional[Span] = field(default=None, kw_only=True, repr=False)
    ty: Optional[str] = field(default=None, kw_only=True, repr=False)


@dataclass(eq=False)
class Var(Expr):
    name: str


@dataclass(eq=False)
class Lit(Expr):
    # int, float, bool, tuple-of-ints (list literal), or ScoreMap
    value: object


@dataclass(eq=False)
class UnOp(Expr):
    op: str
    arg: Expr


@dataclass(eq=False)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(eq=False)
class Call(Expr):
    """Registered-builtin application."""
    name: str
    args: list


@dataclass(eq=False)
class ScoreApp(Expr):
    """Score-function application s(input, range-element)."""
    score: Expr
    input: Expr
    elem: Expr


@dataclass(eq=False)
class MaxGap(Expr):
    """max over the declared range r of |s(e1, r) - s(e2, r)|."""
    score: Expr
    e1: Expr
    e2: Expr


# ---------------------------------------------------------------------------
# Annotations

@dataclass(eq=False)
class LoopAnnotation:
    invariant: object            # Formula (dpsp.formulas)
    variant: Expr                # integer-valued, tag-1 variables


@dataclass(eq=False)
class LapSpec:
    kind: str = "pure"           # "pure" | "accuracy"
    delta: Optional[Fraction] = None

    def __post_init__(self):
        if self.kind == "accuracy" and (self.delta is None or self.delta <= 0):
            raise ValueError("accuracy spec needs a positive delta budget")


PURE_SPEC = LapSpec("pure")


# ---------------------------------------------------------------------------
# Source commands

@dataclass(eq=False)
class SourceCmd:
    span: Optional[Span] = field(default=None, kw_only=True, repr=False)


@dataclass(eq=False)
class SSkip(SourceCmd):
    pass


@dataclass(eq=False)
class SSeq(SourceCmd):
    first: SourceCmd
    second: SourceCmd


@dataclass(eq=False)
class SAssign(SourceCmd):
    var: str
    expr: Expr


@dataclass(eq=False)
class SLapAssign(SourceCmd):
    var: str
    eps: Fraction
    expr: Expr
    spec: LapSpec = field(default_factory=lambda: PURE_SPEC)


@dataclass(eq=False)
class SExpAssign(SourceCmd):
    var: str
    eps: Fraction
    score: Expr
    input: Expr


@dataclass(eq=False)
class SCustomAssign(SourceCmd):
    """Extension point: user-axiomatized probabilistic primitive."""
    var: str
    mech: str
    eps: Fraction
    args: list


@dataclass(eq=False)
class SIf(SourceCmd):
    guard: Expr
    then: SourceCmd
    els: SourceCmd


@dataclass(eq=False)
class SWhile(SourceCmd):
    guard: Expr
    body: SourceCmd
    annot: Optional[LoopAnnotation] = None


@dataclass(eq=False)
class SReturn(SourceCmd):
    expr: Expr


# ---------------------------------------------------------------------------
# Target commands

@dataclass(eq=False)
class TargetCmd:
    span: Optional[Span] = field(default=None, kw_only=True, repr=False)


@dataclass(eq=False)
class TSkip(TargetCmd):
    pass


@dataclass(eq=False)
class TSeq(TargetCmd):
    first: TargetCmd
    second: TargetCmd


@dataclass(eq=False)
class TAssign(TargetCmd):
    var: str
    expr: Expr


@dataclass(eq=False)
class TAssert(TargetCmd):
    cond: Expr


@dataclass(eq=False)
class TLapInvoke(TargetCmd):
    base: str                    # untagged assigned variable
    vars: tuple                  # (x_1, x_2)
    eps: Fraction
    e1: Expr = None
    e2: Expr = None
    spec: LapSpec = field(default_factory=lambda: PURE_SPEC)


@dataclass(eq=False)
class TExpInvoke(TargetCmd):
    base: str
    vars: tuple
    eps: Fraction
    s1: Expr = None
    e1: Expr = None
    s2: Expr = None
    e2: Expr = None


@dataclass(eq=False)
class TCustomInvoke(TargetCmd):
    mech: str
    base: str
    vars: tuple
    eps: Fraction
    args: list = field(default_factory=list)


@dataclass(eq=False)
class TIf(TargetCmd):
    guard: Expr
    then: TargetCmd
    els: TargetCmd


@dataclass(eq=False)
class TWhile(TargetCmd):
    guard: Expr
    body: TargetCmd
    annot: Optional[LoopAnnotation] = None


@dataclass(eq=False)
class TReturn(TargetCmd):
    e1: Expr
    e2: Expr


# ---------------------------------------------------------------------------
# Finite domains for declarations

class Domain:
    """A finite, enumerable value domain attached to a declared variable."""

    kind = "abstract"

    def values(self):
        raise NotImplementedError

    def contains(self, v) -> bool:
        return v in set(self.values())

    def default(self):
        return self.values()[0]

    def pretty(self) -> str:
        raise NotImplementedError


class IntSetDomain(Domain):
    kind = "intset"

    def __init__(self, values, lo=None, hi=None):
        self._values = tuple(sorted(set(values)))
        self._range = (lo, hi)  # remembered for pretty-printing only
        if not self._values:
            raise ValueError("empty domain")

    def values(self):
        return self._values

    def contains(self, v):
        return isinstance(v, int) and not isinstance(v, bool) and v in self._values

    def default(self):
        return 0 if 0 in self._values else self._values[0]

    def pretty(self):
        lo, hi = self._range
        if lo is not None:
            return f"{{{lo}..{hi}}}"
        return "{" + ", ".join(str(v) for v in self._values) + "}"


class RealSetDomain(Domain):
    kind = "realset"

    def __init__(self, values):
        self._values = tuple(sorted(set(float(v) for v in values)))
        if not self._values:
            raise ValueError("empty domain")

    def values(self):
        return self._values

    def default(self):
        return 0.0 if 0.0 in self._values else self._values[0]

    def pretty(self):
        return "{" + ", ".join(repr(v) for v in self._values) + "}"


class BoolDomain(Domain):
    kind = "bool"

    def values(self):
        return (False, True)

    def default(self):
        return False

    def pretty(self):
        return "bool"


class ListDomain(Domain):
    """All int tuples of length <= maxlen with entries from a set."""

    kind = "list"

    def __init__(self, maxlen, entries):
        self.maxlen = int(maxlen)
        self.entries = tuple(sorted(set(entries)))
        vals = []
        for n in range(self.maxlen + 1):
            vals.extend(itertools.product(self.entries, repeat=n))
        self._values = tuple(vals)

    def values(self):
        return self._values

    def contains(self, v):
        return (isinstance(v, tuple) and len(v) <= self.maxlen
                and all(x in self.entries for x in v))

    def default(self):
        return ()

    def pretty(self):
        ent = "{" + ", ".join(str(e) for e in self.entries) + "}"
        return f"list({self.maxlen}, {ent})"


class MultisetDomain(Domain):
    """Sorted int tuples (multisets) of size <= maxlen over an entry set;
    the add/remove-record metric lives on this carrier."""

    kind = "mset"

    def __init__(self, maxlen, entries):
        self.maxlen = int(maxlen)
        self.entries = tuple(sorted(set(entries)))
        vals = []
        for n in range(self.maxlen + 1):
            vals.extend(itertools.combinations_with_replacement(self.entries, n))
        self._values = tuple(vals)

    def values(self):
        return self._values

    def contains(self, v):
        return (isinstance(v, tuple) and len(v) <= self.maxlen
                and tuple(sorted(v)) == v
                and all(x in self.entries for x in v))

    def default(self):
        return ()

    def pretty(self):
        ent = "{" + ", ".join(str(e) for e in self.entries) + "}"
        return f"mset({self.maxlen}, {ent})"


class HistDomain(Domain):
    """Histograms: int tuples of fixed bin count with nonnegative counts
    summing to at most maxtotal."""

    kind = "hist"

    def __init__(self, bins, maxtotal):
        self.bins = int(bins)
        self.maxtotal = int(maxtotal)
        vals = [t for t in itertools.product(range(self.maxtotal + 1), repeat=self.bins)
                if sum(t) <= self.maxtotal]
        self._values = tuple(sorted(vals))

    def values(self):
        return self._values

    def contains(self, v):
        return (isinstance(v, tuple) and len(v) == self.bins
                and all(isinstance(x, int) and x >= 0 for x in v)
                and sum(v) <= self.maxtotal)

    def default(self):
        return (0,) * self.bins

    def pretty(self):
        return f"hist({self.bins}, {self.maxtotal})"


class GraphDomain(Domain):
    """Graphs over n named nodes, encoded as a bit tuple: n node-presence
    bits followed by C(n,2) edge bits (lexicographic pair order). An edge
    bit may be set only when both endpoints are present."""

    kind = "graph"

    def __init__(self, nodes):
        self.nodes = int(nodes)
        self.pairs = list(itertools.combinations(range(self.nodes), 2))
        vals = []
        for bits in itertools.product((0, 1), repeat=self.nodes + len(self.pairs)):
            present = bits[: self.nodes]
            edges = bits[self.nodes:]
            if all(present[a] and present[b] for (a, b), e in zip(self.pairs, edges) if e):
                vals.append(bits)
        self._values = tuple(vals)

    def values(self):
        return self._values

    def contains(self, v):
        return v in set(self._values)

    def default(self):
        return (0,) * (self.nodes + len(self.pairs))

    def pretty(self):
        return f"graph({self.nodes})"


# ---------------------------------------------------------------------------
# Program unit

@dataclass(eq=False)
class BuiltinDecl:
    name: str
    arg_types: tuple
    ret_type: str


@dataclass(eq=False)
class ProgramUnit:
    decls: dict                      # var -> semantic type
    domains: dict                    # var -> Domain
    builtins: dict                   # name -> BuiltinDecl
    range_name: Optional[str]        # exponential-mechanism range label
    range_values: tuple              # finite list of values
    pre: object                      # Formula over tagged variables
    eps_target: Fraction
    delta_target: Fraction
    body: SourceCmd
    source_name: str = "<unit>"

    def var_type(self, name: str) -> Optional[str]:
        base, tag = untag(name)
        if name in (GHOST_ALPHA, GHOST_DELTA):
            return T_REAL
        if tag is not None and base in self.decls:
            return self.decls[base]
        return self.decls.get(name)


# ---------------------------------------------------------------------------
# Structural equality and generic walking

def _is_node(x):
    return isinstance(x, (Expr, SourceCmd, TargetCmd, LoopAnnotation, LapSpec))


def structurally_equal(a, b) -> bool:
    """Tree equality ignoring spans, inferred types, and sequence
    association."""
    from . import formulas  # cycle-free at call time
    if isinstance(a, formulas.Formula) or isinstance(b, formulas.Formula):
        return formulas.formula_equal(a, b)
    if isinstance(a, (SSeq, TSeq)) or isinstance(b, (SSeq, TSeq)):
        if not (isinstance(a, (SourceCmd, TargetCmd))
                and isinstance(b, (SourceCmd, TargetCmd))):
            return False
        fa, fb = list(flatten_seq(a)), list(flatten_seq(b))
        return (len(fa) == len(fb)
                and all(structurally_equal(x, y) for x, y in zip(fa, fb)))
    if _is_node(a) or _is_node(b):
        if type(a) is not type(b):
            return False
        for f in fields(a):
            if f.name in ("span", "ty"):
                continue
            if not structurally_equal(getattr(a, f.name), getattr(b, f.name)):
                return False
        return True
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(structurally_equal(x, y) for x, y in zip(a, b))
    return type(a) is type(b) and a == b


def expr_vars(e: Expr) -> set:
    """Free variable names of an expression."""
    out = set()

    def go(x):
        if isinstance(x, Var):
            out.add(x.name)
        elif isinstance(x, Lit):
            pass
        elif isinstance(x, UnOp):
            go(x.arg)
        elif isinstance(x, BinOp):
            go(x.left), go(x.right)
        elif isinstance(x, Call):
            for a in x.args:
                go(a)
        elif isinstance(x, ScoreApp):
            go(x.score), go(x.input), go(x.elem)
        elif isinstance(x, MaxGap):
            go(x.score), go(x.e1), go(x.e2)
        else:
            raise TypeError(f"not an expression: {x!r}")

    go(e)
    return out


def subst_expr(e: Expr, name: str, repl: Expr) -> Expr:
    """Capture-free substitution e[name := repl]; expressions bind nothing."""
    if isinstance(e, Var):
        return repl if e.name == name else e
    if isinstance(e, Lit):
        return e
    if isinstance(e, UnOp):
        return UnOp(e.op, subst_expr(e.arg, name, repl), span=e.span, ty=e.ty)
    if isinstance(e, BinOp):
        return BinOp(e.op, subst_expr(e.left, name, repl),
                     subst_expr(e.right, name, repl), span=e.span, ty=e.ty)
    if isinstance(e, Call):
        return Call(e.name, [subst_expr(a, name, repl) for a in e.args],
                    span=e.span, ty=e.ty)
    if isinstance(e, ScoreApp):
        return ScoreApp(subst_expr(e.score, name, repl),
                        subst_expr(e.input, name, repl),
                        subst_expr(e.elem, name, repl), span=e.span, ty=e.ty)
    if isinstance(e, MaxGap):
        return MaxGap(subst_expr(e.score, name, repl),
                      subst_expr(e.e1, name, repl),
                      subst_expr(e.e2, name, repl), span=e.span, ty=e.ty)
    raise TypeError(f"not an expression: {e!r}")


def seq_of(cmds, cls_seq, cls_skip):
    """Right-nested sequence of a command list."""
    cmds = [c for c in cmds if c is not None]
    if not cmds:
        return cls_skip()
    out = cmds[-1]
    for c in reversed(cmds[:-1]):
        out = cls_seq(c, out, span=c.span)
    return out


def source_seq(cmds):
    return seq_of(cmds, SSeq, SSkip)


def target_seq(cmds):
    return seq_of(cmds, TSeq, TSkip)


def flatten_seq(cmd):
    """Yield the statements of a (possibly nested) sequence in order."""
    cls = SSeq if isinstance(cmd, SourceCmd) else TSeq
    if isinstance(cmd, cls):
        yield from flatten_seq(cmd.first)
        yield from flatten_seq(cmd.second)
    else:
        yield cmd
