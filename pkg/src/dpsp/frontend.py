"""Concrete syntax: lexing, parsing, type checking and pretty-printing for
annotated source programs, target programs, and assertion formulas.

Header clauses (all terminated by ';'):

    decl x : int in {0..5};
    decl l : intlist in list(3, {0, 1});
    range R = [0, 1];
    builtin update : (intlist, int, int) -> intlist;
    pre { adjacent(l_1, l_2) };
    target (2, 0);

Loop annotations are structured comments placed before the loop:

    @invariant{ ... }  @variant{ length l_1 }

and a Laplace call site may carry `@lapspec{ pure }` or
`@lapspec{ accuracy(3/5) }`.
"""

from __future__ import annotations

import re
from fractions import Fraction

from .errors import ParseError, TypecheckError
from .formulas import (And, Atom, Exists, Forall, Formula, Iff, Implies, Not,
                       Or, RangeDom, SetDom, VarDom)
from .syntax import (BinOp, BoolDomain, BuiltinDecl, Call, Expr, GraphDomain,
                     HistDomain, IntSetDomain, LapSpec, ListDomain, Lit,
                     LoopAnnotation, MaxGap, MultisetDomain, ProgramUnit,
                     RealSetDomain, SAssign, SCustomAssign, SExpAssign, SIf,
                     SLapAssign, SReturn, SSeq, SSkip, SWhile, ScoreApp,
                     SourceCmd, TAssert, TAssign, TCustomInvoke, TExpInvoke,
                     TIf, TLapInvoke, TReturn, TSeq, TSkip, TWhile, TargetCmd,
                     UnOp, Var, GHOST_ALPHA, GHOST_DELTA, RESERVED_PREFIX,
                     T_BOOL, T_INT, T_INTLIST, T_REAL, T_SCORE, NUMERIC,
                     source_seq, target_seq, untag)
from .values import PRELUDE_SIGNATURES, ScoreMap

# ---------------------------------------------------------------------------
# Lexer

_TOKEN_RE = re.compile(r"""
    (?P<WS>[ \t\r]+)
  | (?P<COMMENT>\#[^\n]*)
  | (?P<NL>\n)
  | (?P<REAL>\d+\.\d+)
  | (?P<INT>\d+)
  | (?P<IDENT>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<SYM><->|->|<>|::|:=|<=|>=|!=|\.\.|[;:,(){}\[\]<>=+\-*/@.])
""", re.VERBOSE)


class Token:
    __slots__ = ("kind", "value", "line", "col")

    def __init__(self, kind, value, line, col):
        self.kind = kind
        self.value = value
        self.line = line
        self.col = col

    @property
    def span(self):
        return (self.line, self.col)

    def __repr__(self):
        return f"Token({self.kind}, {self.value!r}, {self.line}:{self.col})"


def tokenize(text: str):
    toks = []
    line, col, i = 1, 1, 0
    n = len(text)
    while i < n:
        m = _TOKEN_RE.match(text, i)
        if not m:
            raise ParseError(f"unexpected character {text[i]!r}", (line, col))
        kind = m.lastgroup
        val = m.group()
        if kind == "NL":
            line += 1
            col = 1
        elif kind in ("WS", "COMMENT"):
            col += len(val)
        else:
            if kind == "INT":
                toks.append(Token("INT", int(val), line, col))
            elif kind == "REAL":
                toks.append(Token("REAL", float(val), line, col))
            else:
                toks.append(Token(kind, val, line, col))
            col += len(val)
        i = m.end()
    toks.append(Token("EOF", None, line, col))
    return toks


KEYWORDS = {
    "skip", "if", "then", "else", "while", "do", "return", "assert",
    "decl", "in", "range", "pre", "target", "builtin", "ghost",
    "true", "false", "and", "or", "not", "forall", "exists", "dom",
    "score", "list", "mset", "hist", "graph",
    "int", "real", "bool", "intlist",
    "div", "mod", "min", "max", "hd", "tl", "length", "abs", "sqrt",
    "maxgap", "Lap", "Exp",
}

_TYPES = {"int": T_INT, "real": T_REAL, "bool": T_BOOL,
          "intlist": T_INTLIST, "score": T_SCORE}


# ---------------------------------------------------------------------------
# Parser

class Parser:
    def __init__(self, text: str, name: str = "<input>"):
        self.toks = tokenize(text)
        self.pos = 0
        self.name = name

    # -- token plumbing ------------------------------------------------------

    def peek(self, k=0) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "EOF":
            self.pos += 1
        return t

    def at(self, value, k=0) -> bool:
        t = self.peek(k)
        return t.value == value and t.kind in ("SYM", "IDENT")

    def accept(self, value) -> bool:
        if self.at(value):
            self.next()
            return True
        return False

    def expect(self, value) -> Token:
        t = self.peek()
        if not self.at(value):
            raise ParseError(f"expected '{value}', found {self._show(t)}", t.span)
        return self.next()

    def ident(self, what="identifier") -> Token:
        t = self.peek()
        if t.kind != "IDENT":
            raise ParseError(f"expected {what}, found {self._show(t)}", t.span)
        if t.value in KEYWORDS:
            raise ParseError(f"keyword '{t.value}' cannot be used as {what}", t.span)
        return self.next()

    @staticmethod
    def _show(t: Token) -> str:
        return "end of input" if t.kind == "EOF" else f"'{t.value}'"

    # -- literals -------------------------------------------------------------

    def rational(self) -> Fraction:
        neg = self.accept("-")
        t = self.peek()
        if t.kind == "REAL":
            self.next()
            r = Fraction(str(t.value))
        elif t.kind == "INT":
            self.next()
            r = Fraction(t.value)
            if self.accept("/"):
                d = self.peek()
                if d.kind != "INT":
                    raise ParseError("expected denominator", d.span)
                self.next()
                r = Fraction(t.value, d.value)
        else:
            raise ParseError(f"expected a number, found {self._show(t)}", t.span)
        return -r if neg else r

    def signed_int(self) -> int:
        neg = self.accept("-")
        t = self.peek()
        if t.kind != "INT":
            raise ParseError(f"expected an integer, found {self._show(t)}", t.span)
        self.next()
        return -t.value if neg else t.value

    def value_literal(self):
        t = self.peek()
        if t.kind == "IDENT" and t.value in ("true", "false"):
            self.next()
            return t.value == "true"
        if self.at("["):
            self.next()
            items = []
            if not self.at("]"):
                items.append(self.signed_int())
                while self.accept(","):
                    items.append(self.signed_int())
            self.expect("]")
            return tuple(items)
        neg = self.accept("-")
        t = self.peek()
        if t.kind == "REAL":
            self.next()
            return -t.value if neg else t.value
        if t.kind == "INT":
            self.next()
            return -t.value if neg else t.value
        raise ParseError(f"expected a value literal, found {self._show(t)}", t.span)

    # -- expressions -----------------------------------------------------------
    # precedence: cmp < :: < +- < * div mod / < unary < atoms
    # (boolean connectives live at the formula level)

    def expr(self) -> Expr:
        return self._cmp()

    _CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")

    def _cmp(self) -> Expr:
        e = self._cons()
        t = self.peek()
        if t.kind == "SYM" and t.value in self._CMP_OPS:
            self.next()
            rhs = self._cons()
            e = BinOp(t.value, e, rhs, span=t.span)
            t2 = self.peek()
            if t2.kind == "SYM" and t2.value in self._CMP_OPS:
                raise ParseError("chained comparisons are not supported", t2.span)
        return e

    def _cons(self) -> Expr:
        e = self._add()
        if self.at("::"):
            sp = self.next().span
            return BinOp("::", e, self._cons(), span=sp)
        return e

    def _add(self) -> Expr:
        e = self._mul()
        while True:
            t = self.peek()
            if t.kind == "SYM" and t.value in ("+", "-"):
                self.next()
                e = BinOp(t.value, e, self._mul(), span=t.span)
            else:
                return e

    def _mul(self) -> Expr:
        e = self._unary()
        while True:
            t = self.peek()
            if (t.kind == "SYM" and t.value in ("*", "/")) or \
               (t.kind == "IDENT" and t.value in ("div", "mod")):
                self.next()
                e = BinOp(t.value, e, self._unary(), span=t.span)
            else:
                return e

    def _unary(self) -> Expr:
        t = self.peek()
        if t.kind == "SYM" and t.value == "-":
            self.next()
            return UnOp("neg", self._unary(), span=t.span)
        if t.kind == "IDENT" and t.value in ("hd", "tl", "length"):
            self.next()
            return UnOp(t.value, self._unary(), span=t.span)
        return self._postfix()

    def _postfix(self) -> Expr:
        # `name(a, b)` parses as Call; the typechecker rewrites it to a
        # score application when `name` is a score-typed variable.
        return self._primary()

    def _primary(self) -> Expr:
        t = self.peek()
        if t.kind == "INT" or t.kind == "REAL":
            self.next()
            return Lit(t.value, span=t.span)
        if self.at("("):
            self.next()
            e = self.expr()
            self.expect(")")
            return e
        if self.at("["):
            sp = t.span
            val = self.value_literal()
            return Lit(val, span=sp)
        if t.kind == "IDENT":
            if t.value in ("true", "false"):
                self.next()
                return Lit(t.value == "true", span=t.span)
            if t.value in ("abs", "sqrt"):
                self.next()
                self.expect("(")
                a = self.expr()
                self.expect(")")
                return UnOp(t.value, a, span=t.span)
            if t.value in ("min", "max"):
                self.next()
                self.expect("(")
                a = self.expr()
                self.expect(",")
                b = self.expr()
                self.expect(")")
                return BinOp(t.value, a, b, span=t.span)
            if t.value == "maxgap":
                self.next()
                self.expect("(")
                s = self.expr()
                self.expect(",")
                a = self.expr()
                self.expect(",")
                b = self.expr()
                self.expect(")")
                return MaxGap(s, a, b, span=t.span)
            if t.value == "score":
                return self._score_literal()
            if t.value in KEYWORDS:
                raise ParseError(f"unexpected keyword '{t.value}'", t.span)
            name = self.next().value
            if self.at("("):
                args, sp = self._call_args()
                return Call(name, args, span=t.span)
            return Var(name, span=t.span)
        raise ParseError(f"expected an expression, found {self._show(t)}", t.span)

    def _call_args(self):
        sp = self.expect("(").span
        args = []
        if not self.at(")"):
            args.append(self.expr())
            while self.accept(","):
                args.append(self.expr())
        self.expect(")")
        return args, sp

    def _score_literal(self) -> Expr:
        sp = self.expect("score").span
        self.expect("{")
        entries = {}
        while not self.at("}"):
            self.expect("(")
            k = self.value_literal()
            self.expect(",")
            r = self.value_literal()
            self.expect(")")
            self.expect(":")
            neg = self.accept("-")
            t = self.peek()
            if t.kind not in ("INT", "REAL"):
                raise ParseError("expected a numeric score", t.span)
            self.next()
            entries[(k, r)] = -float(t.value) if neg else float(t.value)
            if not self.accept(","):
                break
        self.expect("}")
        return Lit(ScoreMap(entries), span=sp)

    # -- formulas ---------------------------------------------------------------

    def formula(self) -> Formula:
        return self._iff_f()

    def _iff_f(self) -> Formula:
        f = self._imp_f()
        while self.at("<->"):
            sp = self.next().span
            f = Iff(f, self._imp_f(), span=sp)
        return f

    def _imp_f(self) -> Formula:
        f = self._or_f()
        if self.at("->"):
            sp = self.next().span
            return Implies(f, self._imp_f(), span=sp)
        return f

    def _or_f(self) -> Formula:
        f = self._and_f()
        parts = [f]
        while self.at("or"):
            self.next()
            parts.append(self._and_f())
        return parts[0] if len(parts) == 1 else Or(parts, span=parts[0].span)

    def _and_f(self) -> Formula:
        f = self._not_f()
        parts = [f]
        while self.at("and"):
            self.next()
            parts.append(self._not_f())
        return parts[0] if len(parts) == 1 else And(parts, span=parts[0].span)

    def _not_f(self) -> Formula:
        if self.at("not"):
            sp = self.next().span
            return Not(self._not_f(), span=sp)
        return self._atom_f()

    def _atom_f(self) -> Formula:
        t = self.peek()
        if t.value in ("forall", "exists") and t.kind == "IDENT":
            self.next()
            v = self.ident("quantified variable").value
            self.expect("in")
            dom = self._domref()
            self.expect(".")
            body = self._imp_f()
            cls = Forall if t.value == "forall" else Exists
            return cls(v, dom, body, span=t.span)
        if self.at("("):
            # may be a parenthesized formula or an arithmetic group
            save = self.pos
            self.next()
            try:
                f = self.formula()
                self.expect(")")
            except ParseError:
                self.pos = save
            else:
                nxt = self.peek()
                arith_follow = (nxt.kind == "SYM" and nxt.value in
                                ("+", "-", "*", "/", "=", "!=", "<", "<=", ">",
                                 ">=", "::")) or nxt.value in ("div", "mod")
                if not arith_follow:
                    return f
                self.pos = save
        e = self.expr()
        return self._lift(e)

    def _lift(self, e: Expr) -> Formula:
        """Promote boolean operators parsed at the expression level into
        formula connectives, so conjunct structure stays visible."""
        if isinstance(e, BinOp) and e.op == "and":
            return And([self._lift(e.left), self._lift(e.right)], span=e.span)
        if isinstance(e, BinOp) and e.op == "or":
            return Or([self._lift(e.left), self._lift(e.right)], span=e.span)
        if isinstance(e, UnOp) and e.op == "not":
            return Not(self._lift(e.arg), span=e.span)
        return Atom(e, span=e.span)

    def _domref(self):
        t = self.peek()
        if t.value == "range":
            self.next()
            return RangeDom()
        if t.value == "dom":
            self.next()
            self.expect("(")
            v = self.ident("variable").value
            self.expect(")")
            return VarDom(v)
        if self.at("{"):
            self.next()
            vals = [self.value_literal()]
            while self.accept(","):
                vals.append(self.value_literal())
            self.expect("}")
            return SetDom(tuple(vals))
        raise ParseError(f"expected a quantifier domain, found {self._show(t)}",
                         t.span)

    # -- annotations --------------------------------------------------------------

    def _annotations(self):
        """Collect @invariant/@variant/@lapspec blocks preceding a statement."""
        inv = var = spec = None
        while self.at("@"):
            sp = self.next().span
            name = self.ident("annotation name").value
            self.expect("{")
            if name == "invariant":
                inv = self.formula()
            elif name == "variant":
                var = self.expr()
            elif name == "lapspec":
                t = self.peek()
                if t.value == "pure":
                    self.next()
                    spec = LapSpec("pure")
                elif t.value == "accuracy":
                    self.next()
                    self.expect("(")
                    d = self.rational()
                    self.expect(")")
                    spec = LapSpec("accuracy", d)
                else:
                    raise ParseError("lapspec must be 'pure' or 'accuracy(delta)'",
                                     t.span)
            else:
                raise ParseError(f"unknown annotation '@{name}'", sp)
            self.expect("}")
        return inv, var, spec

    # -- source statements ----------------------------------------------------------

    def source_block(self) -> SourceCmd:
        self.expect("{")
        body = self.source_stmts(until="}")
        self.expect("}")
        return body

    def source_stmts(self, until="EOF") -> SourceCmd:
        stmts = [self.source_stmt()]
        while self.accept(";"):
            if self.at(until) or self.peek().kind == "EOF":
                break
            stmts.append(self.source_stmt())
        return source_seq(stmts)

    def source_stmt(self) -> SourceCmd:
        inv, var, spec = self._annotations()
        t = self.peek()
        if (inv is not None or var is not None) and not self.at("while"):
            raise ParseError("loop annotation attached to a non-loop statement",
                             t.span)
        if spec is not None:
            stmt = self.source_stmt()
            if not isinstance(stmt, SLapAssign):
                raise ParseError("@lapspec may only precede a Laplace assignment",
                                 t.span)
            stmt.spec = spec
            return stmt

        if self.at("skip"):
            return SSkip(span=self.next().span)
        if self.at("if"):
            sp = self.next().span
            g = self.expr()
            self.expect("then")
            then = self.source_block()
            self.expect("else")
            els = self.source_block()
            return SIf(g, then, els, span=sp)
        if self.at("while"):
            sp = self.next().span
            g = self.expr()
            self.expect("do")
            body = self.source_block()
            if inv is None or var is None:
                raise ParseError("missing loop annotation "
                                 "(@invariant{...} @variant{...})", sp)
            return SWhile(g, body, LoopAnnotation(inv, var), span=sp)
        if self.at("return"):
            sp = self.next().span
            return SReturn(self.expr(), span=sp)

        name_tok = self.ident("variable")
        self.expect(":=")
        t = self.peek()
        if t.kind == "IDENT" and self.peek(1).value == "[" and \
                self.peek(1).kind == "SYM" and t.value[:1].isupper():
            mech = self.next().value
            self.expect("[")
            eps = self.rational()
            self.expect("]")
            if eps <= 0:
                raise ParseError("mechanism epsilon must be positive", t.span)
            args, _ = self._call_args()
            if mech == "Lap":
                if len(args) != 1:
                    raise ParseError("Lap takes one argument", t.span)
                return SLapAssign(name_tok.value, eps, args[0],
                                  span=name_tok.span)
            if mech == "Exp":
                if len(args) != 2:
                    raise ParseError("Exp takes a score and an input", t.span)
                return SExpAssign(name_tok.value, eps, args[0], args[1],
                                  span=name_tok.span)
            return SCustomAssign(name_tok.value, mech, eps, args,
                                 span=name_tok.span)
        return SAssign(name_tok.value, self.expr(), span=name_tok.span)

    # -- target statements -------------------------------------------------------------

    def target_block(self) -> TargetCmd:
        self.expect("{")
        body = self.target_stmts(until="}")
        self.expect("}")
        return body

    def target_stmts(self, until="EOF") -> TargetCmd:
        stmts = [self.target_stmt()]
        while self.accept(";"):
            if self.at(until) or self.peek().kind == "EOF":
                break
            stmts.append(self.target_stmt())
        return target_seq(stmts)

    def target_stmt(self) -> TargetCmd:
        inv, var, _spec = self._annotations()
        t = self.peek()
        if (inv is not None or var is not None) and not self.at("while"):
            raise ParseError("loop annotation attached to a non-loop statement",
                             t.span)
        if self.at("skip"):
            return TSkip(span=self.next().span)
        if self.at("assert"):
            sp = self.next().span
            self.expect("(")
            e = self.expr()
            self.expect(")")
            return TAssert(e, span=sp)
        if self.at("if"):
            sp = self.next().span
            g = self.expr()
            self.expect("then")
            then = self.target_block()
            self.expect("else")
            els = self.target_block()
            return TIf(g, then, els, span=sp)
        if self.at("while"):
            sp = self.next().span
            g = self.expr()
            self.expect("do")
            body = self.target_block()
            if inv is None or var is None:
                raise ParseError("missing loop annotation "
                                 "(@invariant{...} @variant{...})", sp)
            return TWhile(g, body, LoopAnnotation(inv, var), span=sp)
        if self.at("return"):
            sp = self.next().span
            self.expect("(")
            e1 = self.expr()
            self.expect(",")
            e2 = self.expr()
            self.expect(")")
            return TReturn(e1, e2, span=sp)
        if self.at("("):
            sp = self.next().span
            v1 = self.ident("variable").value
            self.expect(",")
            v2 = self.ident("variable").value
            self.expect(")")
            self.expect(":=")
            mech_tok = self.peek()
            if mech_tok.kind != "IDENT":
                raise ParseError("expected a mechanism name", mech_tok.span)
            mech = self.next().value
            self.expect("<>")
            self.expect("[")
            eps = self.rational()
            self.expect("]")
            spec = LapSpec("pure")
            if self.at("{"):
                self.next()
                kw = self.peek()
                if kw.value == "accuracy":
                    self.next()
                    self.expect("(")
                    d = self.rational()
                    self.expect(")")
                    spec = LapSpec("accuracy", d)
                else:
                    self.expect("pure")
                self.expect("}")
            args, _ = self._call_args()
            base1, tag1 = untag(v1)
            base2, tag2 = untag(v2)
            if tag1 != 1 or tag2 != 2 or base1 != base2:
                raise ParseError("invocation targets must be x_1, x_2", sp)
            if mech == "Lap":
                if len(args) != 2:
                    raise ParseError("Lap<> takes two arguments", sp)
                return TLapInvoke(base1, (v1, v2), eps, args[0], args[1],
                                  spec, span=sp)
            if mech == "Exp":
                if len(args) != 4:
                    raise ParseError("Exp<> takes (s1, e1, s2, e2)", sp)
                return TExpInvoke(base1, (v1, v2), eps, args[0], args[1],
                                  args[2], args[3], span=sp)
            return TCustomInvoke(mech, base1, (v1, v2), eps, args, span=sp)

        name_tok = self.ident("variable")
        self.expect(":=")
        return TAssign(name_tok.value, self.expr(), span=name_tok.span)

    # -- header ----------------------------------------------------------------------

    def unit_header(self):
        decls, domains, builtins = {}, {}, {}
        range_name, range_values = None, ()
        pre, target = None, None
        while True:
            t = self.peek()
            if t.value == "decl":
                self.next()
                nm = self.ident("variable name")
                if nm.value.startswith(RESERVED_PREFIX):
                    raise ParseError("names starting with '__' are reserved",
                                     nm.span)
                b, tag = untag(nm.value)
                if tag is not None:
                    raise ParseError("declared names may not end in _1/_2 "
                                     "(reserved for the product)", nm.span)
                if nm.value in decls:
                    raise ParseError(f"duplicate declaration of '{nm.value}'",
                                     nm.span)
                self.expect(":")
                ty_tok = self.peek()
                if ty_tok.value not in _TYPES:
                    raise ParseError(f"unknown type '{ty_tok.value}'", ty_tok.span)
                self.next()
                ty = _TYPES[ty_tok.value]
                dom = None
                if self.accept("in"):
                    dom = self.domain(ty)
                elif ty == T_BOOL:
                    dom = BoolDomain()
                decls[nm.value] = ty
                if dom is not None:
                    domains[nm.value] = dom
                self.expect(";")
            elif t.value == "range":
                self.next()
                if self.peek().kind == "IDENT" and not self.at("="):
                    range_name = self.ident("range name").value
                self.expect("=")
                self.expect("[")
                vals = [self.value_literal()]
                while self.accept(","):
                    vals.append(self.value_literal())
                self.expect("]")
                self.expect(";")
                range_values = tuple(vals)
            elif t.value == "builtin":
                self.next()
                nm = self.ident("builtin name")
                if nm.value in builtins:
                    raise ParseError(f"duplicate builtin '{nm.value}'", nm.span)
                self.expect(":")
                self.expect("(")
                argtys = []
                if not self.at(")"):
                    argtys.append(self._type_name())
                    while self.accept(","):
                        argtys.append(self._type_name())
                self.expect(")")
                self.expect("->")
                rty = self._type_name()
                self.expect(";")
                builtins[nm.value] = BuiltinDecl(nm.value, tuple(argtys), rty)
            elif t.value == "pre":
                self.next()
                self.expect("{")
                pre = self.formula()
                self.expect("}")
                self.expect(";")
            elif t.value == "target":
                self.next()
                sp = self.expect("(").span
                eps = self.rational()
                self.expect(",")
                delta = self.rational()
                self.expect(")")
                self.expect(";")
                if eps < 0 or delta < 0:
                    raise ParseError("privacy targets must be nonnegative", sp)
                target = (eps, delta)
            else:
                break
        if pre is None:
            pre = Atom(Lit(True))
        if target is None:
            target = (Fraction(0), Fraction(0))
        return decls, domains, builtins, range_name, range_values, pre, target

    def _type_name(self) -> str:
        t = self.peek()
        if t.value not in _TYPES:
            raise ParseError(f"unknown type '{t.value}'", t.span)
        self.next()
        return _TYPES[t.value]

    def domain(self, ty):
        t = self.peek()
        if t.value == "list" or t.value == "mset":
            kind = self.next().value
            self.expect("(")
            n = self.signed_int()
            self.expect(",")
            ent = self._int_set()
            self.expect(")")
            return ListDomain(n, ent) if kind == "list" else MultisetDomain(n, ent)
        if t.value == "hist":
            self.next()
            self.expect("(")
            bins = self.signed_int()
            self.expect(",")
            total = self.signed_int()
            self.expect(")")
            return HistDomain(bins, total)
        if t.value == "graph":
            self.next()
            self.expect("(")
            n = self.signed_int()
            self.expect(")")
            return GraphDomain(n)
        if t.value == "bool":
            self.next()
            return BoolDomain()
        if self.at("{"):
            if ty == T_REAL:
                self.next()
                vals = [self._signed_number()]
                while self.accept(","):
                    vals.append(self._signed_number())
                self.expect("}")
                return RealSetDomain(vals)
            return IntSetDomain(*self._int_set_with_bounds())
        raise ParseError(f"expected a domain, found {self._show(t)}", t.span)

    def _signed_number(self):
        neg = self.accept("-")
        t = self.peek()
        if t.kind not in ("INT", "REAL"):
            raise ParseError("expected a number", t.span)
        self.next()
        return -float(t.value) if neg else float(t.value)

    def _int_set(self):
        self.expect("{")
        vals, _ = self._int_set_body()
        self.expect("}")
        return vals

    def _int_set_with_bounds(self):
        self.expect("{")
        vals, bounds = self._int_set_body()
        self.expect("}")
        return vals, bounds[0], bounds[1]

    def _int_set_body(self):
        first = self.signed_int()
        if self.at(".."):
            self.next()
            last = self.signed_int()
            if last < first:
                raise ParseError("empty integer range", self.peek().span)
            return list(range(first, last + 1)), (first, last)
        vals = [first]
        while self.accept(","):
            vals.append(self.signed_int())
        return vals, (None, None)


def _int_set_values(vals):
    return IntSetDomain(vals)


# ---------------------------------------------------------------------------
# Entry points

def parse(text: str, name: str = "<input>") -> ProgramUnit:
    """Parse an annotated source program (header + body + tail return)."""
    p = Parser(text, name)
    decls, domains, builtins, rname, rvals, pre, target = p.unit_header()
    body = p.source_stmts()
    t = p.peek()
    if t.kind != "EOF":
        raise ParseError(f"trailing input: {p._show(t)}", t.span)
    _check_single_tail_return(body)
    return ProgramUnit(decls=decls, domains=domains, builtins=builtins,
                       range_name=rname, range_values=rvals, pre=pre,
                       eps_target=target[0], delta_target=target[1],
                       body=body, source_name=name)


def parse_target(text: str, name: str = "<input>"):
    """Parse a standalone target program; returns (unit-with-header, cmd)."""
    p = Parser(text, name)
    decls, domains, builtins, rname, rvals, pre, target = p.unit_header()
    body = p.target_stmts()
    t = p.peek()
    if t.kind != "EOF":
        raise ParseError(f"trailing input: {p._show(t)}", t.span)
    unit = ProgramUnit(decls=decls, domains=domains, builtins=builtins,
                       range_name=rname, range_values=rvals, pre=pre,
                       eps_target=target[0], delta_target=target[1],
                       body=SSkip(), source_name=name)
    return unit, body


def parse_formula_text(text: str) -> Formula:
    p = Parser(text)
    f = p.formula()
    t = p.peek()
    if t.kind != "EOF":
        raise ParseError(f"trailing input after formula: {p._show(t)}", t.span)
    return f


def parse_expr_text(text: str) -> Expr:
    p = Parser(text)
    e = p.expr()
    t = p.peek()
    if t.kind != "EOF":
        raise ParseError(f"trailing input after expression: {p._show(t)}", t.span)
    return e


def _check_single_tail_return(body: SourceCmd):
    from .syntax import flatten_seq
    stmts = list(flatten_seq(body))
    last = stmts[-1]
    if not isinstance(last, SReturn):
        raise ParseError("program must end in a tail 'return'",
                         last.span or (1, 1))

    def no_return(c):
        if isinstance(c, SReturn):
            raise ParseError("'return' only allowed in tail position", c.span)
        if isinstance(c, SSeq):
            no_return(c.first), no_return(c.second)
        elif isinstance(c, SIf):
            no_return(c.then), no_return(c.els)
        elif isinstance(c, SWhile):
            no_return(c.body)

    for s in stmts[:-1]:
        no_return(s)


# ---------------------------------------------------------------------------
# Type checking

class TypecheckFailure(TypecheckError):
    """Raised when a unit has type errors; .errors holds all of them."""

    def __init__(self, errors):
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors))


class _Checker:
    def __init__(self, unit: ProgramUnit, target_mode=False):
        self.unit = unit
        self.target_mode = target_mode
        self.errors = []
        self.bound = {}  # quantifier-bound variables -> type

    def fail(self, msg, span=None):
        self.errors.append(TypecheckError(msg, span))

    # -- variable resolution --------------------------------------------------

    def var_type(self, name, span, tagged_ok):
        if name in self.bound:
            return self.bound[name]
        if name in (GHOST_ALPHA, GHOST_DELTA):
            if not tagged_ok:
                self.fail(f"ghost variable '{name}' not allowed here", span)
            return T_REAL
        base, tag = untag(name)
        if tag is not None:
            if not tagged_ok:
                self.fail(f"tagged variable '{name}' not allowed in program "
                          "expressions", span)
                return None
            if base in self.unit.decls:
                return self.unit.decls[base]
            self.fail(f"unbound variable '{name}'", span)
            return None
        if name in self.unit.decls:
            if tagged_ok and not self.target_mode:
                self.fail(f"assertion variables must be tagged: use "
                          f"'{name}_1'/'{name}_2'", span)
            return self.unit.decls[name]
        self.fail(f"unbound variable '{name}'", span)
        return None

    def builtin_sig(self, name):
        if name in self.unit.builtins:
            b = self.unit.builtins[name]
            return b.arg_types, b.ret_type
        if name in PRELUDE_SIGNATURES:
            return PRELUDE_SIGNATURES[name]
        return None

    # -- expressions ------------------------------------------------------------

    def expr(self, e, tagged_ok=False):
        """Infer and annotate the type of e; returns the type or None."""
        t = self._expr(e, tagged_ok)
        e.ty = t
        return t

    def _numeric(self, t, what, span):
        if t is None:
            return None
        if t not in NUMERIC:
            self.fail(f"{what} expects a number, got {t}", span)
            return None
        return t

    def _expr(self, e, tagged_ok):
        if isinstance(e, Var):
            return self.var_type(e.name, e.span, tagged_ok)
        if isinstance(e, Lit):
            v = e.value
            if isinstance(v, bool):
                return T_BOOL
            if isinstance(v, int):
                return T_INT
            if isinstance(v, float):
                return T_REAL
            if isinstance(v, tuple):
                return T_INTLIST
            if isinstance(v, ScoreMap):
                return T_SCORE
            self.fail(f"unknown literal {v!r}", e.span)
            return None
        if isinstance(e, UnOp):
            t = self.expr(e.arg, tagged_ok)
            if e.op == "not":
                if t not in (None, T_BOOL):
                    self.fail("'not' expects a boolean", e.span)
                return T_BOOL
            if e.op in ("neg", "abs"):
                return self._numeric(t, f"'{e.op}'", e.span)
            if e.op == "sqrt":
                self._numeric(t, "'sqrt'", e.span)
                return T_REAL
            if e.op in ("hd", "tl", "length"):
                if t not in (None, T_INTLIST):
                    self.fail(f"'{e.op}' expects an int list", e.span)
                return {"hd": T_INT, "tl": T_INTLIST, "length": T_INT}[e.op]
            self.fail(f"unknown unary operator '{e.op}'", e.span)
            return None
        if isinstance(e, BinOp):
            return self._binop(e, tagged_ok)
        if isinstance(e, Call):
            return self._call(e, tagged_ok)
        if isinstance(e, ScoreApp):
            ts = self.expr(e.score, tagged_ok)
            if ts not in (None, T_SCORE):
                self.fail("score application on a non-score expression", e.span)
            self.expr(e.input, tagged_ok)
            te = self.expr(e.elem, tagged_ok)
            self._check_range_elem(e.elem, te)
            return T_REAL
        if isinstance(e, MaxGap):
            ts = self.expr(e.score, tagged_ok)
            if ts not in (None, T_SCORE):
                self.fail("maxgap on a non-score expression", e.span)
            self.expr(e.e1, tagged_ok)
            self.expr(e.e2, tagged_ok)
            if not self.unit.range_values:
                self.fail("maxgap needs a declared range", e.span)
            return T_REAL
        self.fail(f"unknown expression {e!r}", getattr(e, "span", None))
        return None

    def _check_range_elem(self, elem, te):
        """A literal range-element argument must belong to the range."""
        if isinstance(elem, Lit) and self.unit.range_values:
            if elem.value not in self.unit.range_values:
                self.fail(f"score applied outside the declared range "
                          f"(element {elem.value!r})", elem.span)
        if not self.unit.range_values:
            self.fail("score application needs a declared range", elem.span)

    def _binop(self, e, tagged_ok):
        tl_ = self.expr(e.left, tagged_ok)
        tr = self.expr(e.right, tagged_ok)
        op = e.op
        if op in ("and", "or"):
            for t, side in ((tl_, e.left), (tr, e.right)):
                if t not in (None, T_BOOL):
                    self.fail(f"'{op}' expects booleans", side.span)
            return T_BOOL
        if op == "::":
            if tl_ not in (None, T_INT):
                self.fail("'::' expects an int on the left", e.span)
            if tr not in (None, T_INTLIST):
                self.fail("'::' expects an int list on the right", e.span)
            return T_INTLIST
        if op in ("+", "-", "*", "min", "max"):
            a = self._numeric(tl_, f"'{op}'", e.span)
            b = self._numeric(tr, f"'{op}'", e.span)
            if a is None or b is None:
                return None
            return T_REAL if T_REAL in (a, b) else T_INT
        if op == "/":
            self._numeric(tl_, "'/'", e.span)
            self._numeric(tr, "'/'", e.span)
            return T_REAL
        if op in ("div", "mod"):
            for t in (tl_, tr):
                if t not in (None, T_INT):
                    self.fail(f"'{op}' expects integers", e.span)
            return T_INT
        if op in ("=", "!="):
            if tl_ is not None and tr is not None:
                if tl_ != tr and not (tl_ in NUMERIC and tr in NUMERIC):
                    self.fail(f"cannot compare {tl_} with {tr}", e.span)
            return T_BOOL
        if op in ("<", "<=", ">", ">="):
            self._numeric(tl_, f"'{op}'", e.span)
            self._numeric(tr, f"'{op}'", e.span)
            return T_BOOL
        self.fail(f"unknown operator '{op}'", e.span)
        return None

    def _call(self, e, tagged_ok):
        sig = self.builtin_sig(e.name)
        if sig is None:
            self.fail(f"unknown builtin '{e.name}'", e.span)
            for a in e.args:
                self.expr(a, tagged_ok)
            return None
        argtys, rty = sig
        if len(e.args) != len(argtys):
            self.fail(f"builtin '{e.name}' expects {len(argtys)} arguments",
                      e.span)
        for a, want in zip(e.args, argtys):
            got = self.expr(a, tagged_ok)
            if got is not None and got != want and \
                    not (want == T_REAL and got == T_INT):
                self.fail(f"builtin '{e.name}' argument expects {want}, "
                          f"got {got}", a.span)
        return rty

    # -- formulas -----------------------------------------------------------------

    def formula(self, f):
        if isinstance(f, Atom):
            t = self.expr(f.expr, tagged_ok=True)
            if t not in (None, T_BOOL):
                self.fail("formula atom must be boolean", f.span)
        elif isinstance(f, Not):
            self.formula(f.body)
        elif isinstance(f, (And, Or)):
            for p in f.parts:
                self.formula(p)
        elif isinstance(f, (Implies, Iff)):
            self.formula(f.lhs)
            self.formula(f.rhs)
        elif isinstance(f, (Forall, Exists)):
            ty = self._domref_type(f.dom, f.span)
            old = self.bound.get(f.var)
            self.bound[f.var] = ty
            self.formula(f.body)
            if old is None:
                self.bound.pop(f.var, None)
            else:
                self.bound[f.var] = old
        else:
            self.fail(f"unknown formula {f!r}", getattr(f, "span", None))

    def _domref_type(self, dom, span):
        if isinstance(dom, RangeDom):
            if not self.unit.range_values:
                self.fail("quantifier over an undeclared range", span)
                return None
            return _value_type(self.unit.range_values[0])
        if isinstance(dom, VarDom):
            base, _ = untag(dom.var)
            if base not in self.unit.decls:
                self.fail(f"quantifier domain of unbound variable "
                          f"'{dom.var}'", span)
                return None
            return self.unit.decls[base]
        if isinstance(dom, SetDom):
            return _value_type(dom.values[0])
        return None

    # -- statements ------------------------------------------------------------------

    def assignable(self, var_ty, expr_ty, span, what="assignment"):
        if var_ty is None or expr_ty is None:
            return
        if var_ty == expr_ty:
            return
        if var_ty == T_REAL and expr_ty == T_INT:
            return
        self.fail(f"{what}: cannot store {expr_ty} into {var_ty}", span)

    def source_cmd(self, c):
        if isinstance(c, SSkip):
            return
        if isinstance(c, SSeq):
            self.source_cmd(c.first)
            self.source_cmd(c.second)
            return
        if isinstance(c, SAssign):
            vt = self.var_type(c.var, c.span, tagged_ok=False)
            et = self.expr(c.expr)
            self.assignable(vt, et, c.span)
            return
        if isinstance(c, SLapAssign):
            vt = self.var_type(c.var, c.span, tagged_ok=False)
            et = self.expr(c.expr)
            if et is not None and et not in NUMERIC:
                self.fail("Laplace argument must be numeric", c.expr.span)
            elif et == T_REAL:
                self.fail("Laplace argument must be int-typed "
                          "(discrete carrier)", c.expr.span)
            self.assignable(vt, T_INT, c.span, "Laplace assignment")
            return
        if isinstance(c, SExpAssign):
            vt = self.var_type(c.var, c.span, tagged_ok=False)
            st = self.expr(c.score)
            if st not in (None, T_SCORE):
                self.fail("Exp score must be a score function", c.score.span)
            self.expr(c.input)
            if not self.unit.range_values:
                self.fail("Exp assignment needs a declared range", c.span)
            else:
                self.assignable(vt, _value_type(self.unit.range_values[0]),
                                c.span, "Exp assignment")
            return
        if isinstance(c, SCustomAssign):
            self.var_type(c.var, c.span, tagged_ok=False)
            for a in c.args:
                self.expr(a)
            return
        if isinstance(c, SIf):
            gt = self.expr(c.guard)
            if gt not in (None, T_BOOL):
                self.fail("guard not boolean", c.guard.span)
            self.source_cmd(c.then)
            self.source_cmd(c.els)
            return
        if isinstance(c, SWhile):
            gt = self.expr(c.guard)
            if gt not in (None, T_BOOL):
                self.fail("guard not boolean", c.guard.span)
            if c.annot is not None:
                self.formula(c.annot.invariant)
                vt = self.expr(c.annot.variant, tagged_ok=True)
                if vt not in (None, T_INT):
                    self.fail("loop variant must be integer-valued",
                              c.annot.variant.span)
            self.source_cmd(c.body)
            return
        if isinstance(c, SReturn):
            self.expr(c.expr)
            return
        self.fail(f"unknown statement {c!r}", getattr(c, "span", None))

    def target_cmd(self, c):
        if isinstance(c, TSkip):
            return
        if isinstance(c, TSeq):
            self.target_cmd(c.first)
            self.target_cmd(c.second)
            return
        if isinstance(c, TAssign):
            vt = self.var_type(c.var, c.span, tagged_ok=True)
            et = self.expr(c.expr, tagged_ok=True)
            self.assignable(vt, et, c.span)
            return
        if isinstance(c, TAssert):
            t = self.expr(c.cond, tagged_ok=True)
            if t not in (None, T_BOOL):
                self.fail("assert expects a boolean", c.span)
            return
        if isinstance(c, TLapInvoke):
            self.var_type(c.vars[0], c.span, tagged_ok=True)
            for e in (c.e1, c.e2):
                t = self.expr(e, tagged_ok=True)
                if t is not None and t != T_INT:
                    self.fail("Laplace invocation arguments must be int",
                              e.span)
            return
        if isinstance(c, TExpInvoke):
            self.var_type(c.vars[0], c.span, tagged_ok=True)
            for s in (c.s1, c.s2):
                t = self.expr(s, tagged_ok=True)
                if t not in (None, T_SCORE):
                    self.fail("Exp invocation scores must be score functions",
                              s.span)
            self.expr(c.e1, tagged_ok=True)
            self.expr(c.e2, tagged_ok=True)
            return
        if isinstance(c, TCustomInvoke):
            self.var_type(c.vars[0], c.span, tagged_ok=True)
            for a in c.args:
                self.expr(a, tagged_ok=True)
            return
        if isinstance(c, TIf):
            gt = self.expr(c.guard, tagged_ok=True)
            if gt not in (None, T_BOOL):
                self.fail("guard not boolean", c.guard.span)
            self.target_cmd(c.then)
            self.target_cmd(c.els)
            return
        if isinstance(c, TWhile):
            gt = self.expr(c.guard, tagged_ok=True)
            if gt not in (None, T_BOOL):
                self.fail("guard not boolean", c.guard.span)
            if c.annot is not None:
                self.formula(c.annot.invariant)
                vt = self.expr(c.annot.variant, tagged_ok=True)
                if vt not in (None, T_INT):
                    self.fail("loop variant must be integer-valued",
                              c.annot.variant.span)
            self.target_cmd(c.body)
            return
        if isinstance(c, TReturn):
            self.expr(c.e1, tagged_ok=True)
            self.expr(c.e2, tagged_ok=True)
            return
        self.fail(f"unknown statement {c!r}", getattr(c, "span", None))


def _value_type(v):
    if isinstance(v, bool):
        return T_BOOL
    if isinstance(v, int):
        return T_INT
    if isinstance(v, float):
        return T_REAL
    if isinstance(v, tuple):
        return T_INTLIST
    if isinstance(v, ScoreMap):
        return T_SCORE
    return None


def _resolve_score_calls(unit: ProgramUnit):
    """Rewrite `s(a, b)` calls into score applications when `s` names a
    score-typed variable; the parser cannot tell them apart from builtins."""
    score_vars = {n for n, t in unit.decls.items() if t == T_SCORE}

    def is_score(name):
        base, _ = untag(name)
        return base in score_vars

    def rx(e):
        if isinstance(e, (Var, Lit)):
            return e
        if isinstance(e, UnOp):
            e.arg = rx(e.arg)
            return e
        if isinstance(e, BinOp):
            e.left, e.right = rx(e.left), rx(e.right)
            return e
        if isinstance(e, Call):
            e.args = [rx(a) for a in e.args]
            if is_score(e.name) and len(e.args) == 2:
                return ScoreApp(Var(e.name, span=e.span), e.args[0], e.args[1],
                                span=e.span)
            return e
        if isinstance(e, ScoreApp):
            e.score, e.input, e.elem = rx(e.score), rx(e.input), rx(e.elem)
            return e
        if isinstance(e, MaxGap):
            e.score, e.e1, e.e2 = rx(e.score), rx(e.e1), rx(e.e2)
            return e
        return e

    def rf(f):
        if isinstance(f, Atom):
            f.expr = rx(f.expr)
        elif isinstance(f, Not):
            rf(f.body)
        elif isinstance(f, (And, Or)):
            for p in f.parts:
                rf(p)
        elif isinstance(f, (Implies, Iff)):
            rf(f.lhs), rf(f.rhs)
        elif isinstance(f, (Forall, Exists)):
            rf(f.body)

    def rc(c):
        if isinstance(c, (SSeq, TSeq)):
            rc(c.first), rc(c.second)
        elif isinstance(c, (SAssign, TAssign)):
            c.expr = rx(c.expr)
        elif isinstance(c, SLapAssign):
            c.expr = rx(c.expr)
        elif isinstance(c, SExpAssign):
            c.score, c.input = rx(c.score), rx(c.input)
        elif isinstance(c, SCustomAssign):
            c.args = [rx(a) for a in c.args]
        elif isinstance(c, (SIf, TIf)):
            c.guard = rx(c.guard)
            rc(c.then), rc(c.els)
        elif isinstance(c, (SWhile, TWhile)):
            c.guard = rx(c.guard)
            if c.annot is not None:
                rf(c.annot.invariant)
                c.annot.variant = rx(c.annot.variant)
            rc(c.body)
        elif isinstance(c, SReturn):
            c.expr = rx(c.expr)
        elif isinstance(c, TAssert):
            c.cond = rx(c.cond)
        elif isinstance(c, TLapInvoke):
            c.e1, c.e2 = rx(c.e1), rx(c.e2)
        elif isinstance(c, TExpInvoke):
            c.s1, c.e1, c.s2, c.e2 = rx(c.s1), rx(c.e1), rx(c.s2), rx(c.e2)
        elif isinstance(c, TCustomInvoke):
            c.args = [rx(a) for a in c.args]
        elif isinstance(c, TReturn):
            c.e1, c.e2 = rx(c.e1), rx(c.e2)

    rf(unit.pre)
    rc(unit.body)
    return rc, rf


def typecheck(unit: ProgramUnit) -> ProgramUnit:
    """Check and annotate a parsed source unit; raises TypecheckFailure with
    the full error list on failure."""
    _resolve_score_calls(unit)
    ck = _Checker(unit)
    if unit.range_values:
        tys = {_value_type(v) for v in unit.range_values}
        if len(tys) > 1:
            ck.fail("range values must share one type")
    ck.formula(unit.pre)
    from .formulas import formula_vars
    for v in formula_vars(unit.pre):
        base, tag = untag(v)
        if v not in (GHOST_ALPHA, GHOST_DELTA) and \
                (tag is None or base not in unit.decls):
            ck.fail(f"precondition mentions undeclared variable '{v}'")
    ck.source_cmd(unit.body)
    if ck.errors:
        raise TypecheckFailure(ck.errors)
    return unit


def typecheck_target(unit: ProgramUnit, cmd: TargetCmd) -> TargetCmd:
    rc, _rf = _resolve_score_calls(unit)
    rc(cmd)
    ck = _Checker(unit, target_mode=True)
    ck.target_cmd(cmd)
    if ck.errors:
        raise TypecheckFailure(ck.errors)
    return cmd


# ---------------------------------------------------------------------------
# Pretty-printing

_EXPR_PREC = {
    "or": 1, "and": 2,
    "=": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
    "::": 5, "+": 6, "-": 6, "*": 7, "/": 7, "div": 7, "mod": 7,
}


def pretty_rational(r: Fraction) -> str:
    return str(r.numerator) if r.denominator == 1 else f"{r.numerator}/{r.denominator}"


def pretty_expr(e: Expr, prec: int = 0) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Lit):
        v = e.value
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return "[" + ", ".join(str(x) for x in v) + "]"
        if isinstance(v, ScoreMap):
            parts = ", ".join(
                f"({_lit_str(i)}, {_lit_str(r)}): {x}" for (i, r), x in v.items())
            return "score{" + parts + "}"
        if isinstance(v, float):
            return repr(v)
        return str(v)
    if isinstance(e, UnOp):
        if e.op == "neg":
            s = "-" + pretty_expr(e.arg, 8)
        elif e.op == "not":
            s = "not " + pretty_expr(e.arg, 3)
            return f"({s})" if prec > 3 else s
        elif e.op in ("abs", "sqrt"):
            return f"{e.op}({pretty_expr(e.arg)})"
        else:
            s = f"{e.op} {pretty_expr(e.arg, 8)}"
        return f"({s})" if prec > 7 else s
    if isinstance(e, BinOp):
        if e.op in ("min", "max"):
            return f"{e.op}({pretty_expr(e.left)}, {pretty_expr(e.right)})"
        p = _EXPR_PREC[e.op]
        if e.op in ("=", "!=", "<", "<=", ">", ">="):
            lp = rp = p + 1          # comparisons do not chain
        elif e.op == "::":
            lp, rp = p + 1, p        # right associative
        else:
            lp, rp = p, p + 1        # left associative
        s = pretty_expr(e.left, lp) + f" {e.op} " + pretty_expr(e.right, rp)
        return f"({s})" if prec > p else s
    if isinstance(e, Call):
        return f"{e.name}(" + ", ".join(pretty_expr(a) for a in e.args) + ")"
    if isinstance(e, ScoreApp):
        return (f"{pretty_expr(e.score, 9)}({pretty_expr(e.input)}, "
                f"{pretty_expr(e.elem)})")
    if isinstance(e, MaxGap):
        return (f"maxgap({pretty_expr(e.score)}, {pretty_expr(e.e1)}, "
                f"{pretty_expr(e.e2)})")
    raise TypeError(f"not an expression: {e!r}")


def _lit_str(v):
    return pretty_expr(Lit(v))


_FORM_PREC = {"iff": 0, "imp": 1, "or": 2, "and": 3, "not": 4}


def pretty_formula(f: Formula, prec: int = 0) -> str:
    if isinstance(f, Atom):
        return pretty_expr(f.expr, 4 if prec > 0 else 0)
    if isinstance(f, Not):
        s = "not " + pretty_formula(f.body, 4)
        return f"({s})" if prec > 4 else s
    if isinstance(f, And):
        s = " and ".join(pretty_formula(p, 4) for p in f.parts)
        return f"({s})" if prec > 3 else s
    if isinstance(f, Or):
        s = " or ".join(pretty_formula(p, 3) for p in f.parts)
        return f"({s})" if prec > 2 else s
    if isinstance(f, Implies):
        s = pretty_formula(f.lhs, 2) + " -> " + pretty_formula(f.rhs, 1)
        return f"({s})" if prec > 1 else s
    if isinstance(f, Iff):
        s = pretty_formula(f.lhs, 1) + " <-> " + pretty_formula(f.rhs, 1)
        return f"({s})" if prec > 0 else s
    if isinstance(f, (Forall, Exists)):
        q = "forall" if isinstance(f, Forall) else "exists"
        s = f"{q} {f.var} in {pretty_domref(f.dom)}. {pretty_formula(f.body, 1)}"
        return f"({s})" if prec > 0 else s
    raise TypeError(f"not a formula: {f!r}")


def pretty_domref(dom) -> str:
    if isinstance(dom, RangeDom):
        return "range"
    if isinstance(dom, VarDom):
        return f"dom({dom.var})"
    if isinstance(dom, SetDom):
        return "{" + ", ".join(_lit_str(v) for v in dom.values) + "}"
    raise TypeError(f"not a domain reference: {dom!r}")


def _indent(lines, pad="  "):
    return [pad + ln for ln in lines]


def _annot_lines(annot) -> list:
    return [f"@invariant{{ {pretty_formula(annot.invariant)} }}",
            f"@variant{{ {pretty_expr(annot.variant)} }}"]


def _spec_suffix(spec: LapSpec) -> str:
    if spec.kind == "accuracy":
        return "{accuracy(" + pretty_rational(spec.delta) + ")}"
    return ""


def _cmd_lines(c) -> list:
    from .syntax import flatten_seq
    if isinstance(c, (SSeq, TSeq)):
        stmts = list(flatten_seq(c))
        out = []
        for i, s in enumerate(stmts):
            lines = _cmd_lines(s)
            if i < len(stmts) - 1:
                lines[-1] += ";"
            out.extend(lines)
        return out
    if isinstance(c, (SSkip, TSkip)):
        return ["skip"]
    if isinstance(c, SAssign):
        return [f"{c.var} := {pretty_expr(c.expr)}"]
    if isinstance(c, TAssign):
        return [f"{c.var} := {pretty_expr(c.expr)}"]
    if isinstance(c, SLapAssign):
        out = []
        if c.spec.kind != "pure":
            out.append(f"@lapspec{{ accuracy({pretty_rational(c.spec.delta)}) }}")
        out.append(f"{c.var} := Lap[{pretty_rational(c.eps)}]"
                   f"({pretty_expr(c.expr)})")
        return out
    if isinstance(c, SExpAssign):
        return [f"{c.var} := Exp[{pretty_rational(c.eps)}]"
                f"({pretty_expr(c.score)}, {pretty_expr(c.input)})"]
    if isinstance(c, SCustomAssign):
        args = ", ".join(pretty_expr(a) for a in c.args)
        return [f"{c.var} := {c.mech}[{pretty_rational(c.eps)}]({args})"]
    if isinstance(c, (SIf, TIf)):
        out = [f"if {pretty_expr(c.guard)} then {{"]
        out += _indent(_cmd_lines(c.then))
        out.append("} else {")
        out += _indent(_cmd_lines(c.els))
        out.append("}")
        return out
    if isinstance(c, (SWhile, TWhile)):
        out = []
        if c.annot is not None:
            out.extend(_annot_lines(c.annot))
        out.append(f"while {pretty_expr(c.guard)} do {{")
        out += _indent(_cmd_lines(c.body))
        out.append("}")
        return out
    if isinstance(c, SReturn):
        return [f"return {pretty_expr(c.expr)}"]
    if isinstance(c, TAssert):
        return [f"assert({pretty_expr(c.cond)})"]
    if isinstance(c, TLapInvoke):
        return [f"({c.vars[0]}, {c.vars[1]}) := "
                f"Lap<>[{pretty_rational(c.eps)}]{_spec_suffix(c.spec)}"
                f"({pretty_expr(c.e1)}, {pretty_expr(c.e2)})"]
    if isinstance(c, TExpInvoke):
        return [f"({c.vars[0]}, {c.vars[1]}) := "
                f"Exp<>[{pretty_rational(c.eps)}]"
                f"({pretty_expr(c.s1)}, {pretty_expr(c.e1)}, "
                f"{pretty_expr(c.s2)}, {pretty_expr(c.e2)})"]
    if isinstance(c, TCustomInvoke):
        args = ", ".join(pretty_expr(a) for a in c.args)
        return [f"({c.vars[0]}, {c.vars[1]}) := "
                f"{c.mech}<>[{pretty_rational(c.eps)}]({args})"]
    if isinstance(c, TReturn):
        return [f"return ({pretty_expr(c.e1)}, {pretty_expr(c.e2)})"]
    raise TypeError(f"not a command: {c!r}")


def pretty_cmd(c) -> str:
    """Deterministic canonical text of a source or target command."""
    return "\n".join(_cmd_lines(c))


def pretty_unit(unit: ProgramUnit, body=None) -> str:
    """Canonical text of a whole unit; pass a TargetCmd as `body` to print a
    target program under the same header."""
    lines = []
    for name, ty in unit.decls.items():
        dom = unit.domains.get(name)
        if dom is not None and not (ty == T_BOOL and dom.kind == "bool"):
            lines.append(f"decl {name} : {ty} in {dom.pretty()};")
        else:
            lines.append(f"decl {name} : {ty};")
    if unit.range_values:
        vals = ", ".join(_lit_str(v) for v in unit.range_values)
        rn = f" {unit.range_name}" if unit.range_name else ""
        lines.append(f"range{rn} = [{vals}];")
    for b in unit.builtins.values():
        args = ", ".join(b.arg_types)
        lines.append(f"builtin {b.name} : ({args}) -> {b.ret_type};")
    lines.append(f"pre {{ {pretty_formula(unit.pre)} }};")
    lines.append(f"target ({pretty_rational(unit.eps_target)}, "
                 f"{pretty_rational(unit.delta_target)});")
    lines.append("")
    lines.extend(_cmd_lines(body if body is not None else unit.body))
    return "\n".join(lines) + "\n"
