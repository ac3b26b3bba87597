"""Self-product transformation: a probabilistic source program becomes a
non-probabilistic, nondeterministic target program simulating two lockstep
executions over disjoint tag-1/tag-2 variable copies.

Control flow is synchronized with asserts on guard agreement; paired
mechanism calls become abstract invocations that equate their outputs and
charge the ghost budget variables. Ghost initialization is not inserted
here: it belongs to the verification goal's precondition and to the target
interpreter's initial memory.
"""

from __future__ import annotations

from .errors import TaintError
from .syntax import (BinOp, Call, Expr, Lit, MaxGap, SAssign, SCustomAssign,
                     SExpAssign, SIf, SLapAssign, SReturn, SSeq, SSkip,
                     SWhile, ScoreApp, SourceCmd, TAssert, TAssign,
                     TCustomInvoke, TExpInvoke, TIf, TLapInvoke, TReturn,
                     TSeq, TSkip, TWhile, TargetCmd, UnOp, Var, tagged,
                     target_seq)


def rename(e: Expr, tag: int) -> Expr:
    """Rename every variable of e with the given tag; literals and builtin
    names are unchanged."""
    if isinstance(e, Var):
        return Var(tagged(e.name, tag), span=e.span, ty=e.ty)
    if isinstance(e, Lit):
        return e
    if isinstance(e, UnOp):
        return UnOp(e.op, rename(e.arg, tag), span=e.span, ty=e.ty)
    if isinstance(e, BinOp):
        return BinOp(e.op, rename(e.left, tag), rename(e.right, tag),
                     span=e.span, ty=e.ty)
    if isinstance(e, Call):
        return Call(e.name, [rename(a, tag) for a in e.args],
                    span=e.span, ty=e.ty)
    if isinstance(e, ScoreApp):
        return ScoreApp(rename(e.score, tag), rename(e.input, tag),
                        rename(e.elem, tag), span=e.span, ty=e.ty)
    if isinstance(e, MaxGap):
        return MaxGap(rename(e.score, tag), rename(e.e1, tag),
                      rename(e.e2, tag), span=e.span, ty=e.ty)
    raise TypeError(f"not an expression: {e!r}")


def _guard_sync(guard: Expr) -> TAssert:
    return TAssert(BinOp("=", rename(guard, 1), rename(guard, 2),
                         span=guard.span), span=guard.span)


def self_product(c: SourceCmd) -> TargetCmd:
    """Structural product: deterministic statements are duplicated under the
    two tags, mechanism calls are paired, and branches/loops gain guard
    synchronization asserts."""
    if isinstance(c, SSkip):
        return TSkip(span=c.span)
    if isinstance(c, SSeq):
        return TSeq(self_product(c.first), self_product(c.second), span=c.span)
    if isinstance(c, SAssign):
        return TSeq(TAssign(tagged(c.var, 1), rename(c.expr, 1), span=c.span),
                    TAssign(tagged(c.var, 2), rename(c.expr, 2), span=c.span),
                    span=c.span)
    if isinstance(c, SLapAssign):
        return TLapInvoke(c.var, (tagged(c.var, 1), tagged(c.var, 2)), c.eps,
                          rename(c.expr, 1), rename(c.expr, 2), c.spec,
                          span=c.span)
    if isinstance(c, SExpAssign):
        return TExpInvoke(c.var, (tagged(c.var, 1), tagged(c.var, 2)), c.eps,
                          rename(c.score, 1), rename(c.input, 1),
                          rename(c.score, 2), rename(c.input, 2), span=c.span)
    if isinstance(c, SCustomAssign):
        args = [rename(a, 1) for a in c.args] + [rename(a, 2) for a in c.args]
        return TCustomInvoke(c.mech, c.var,
                             (tagged(c.var, 1), tagged(c.var, 2)), c.eps,
                             args, span=c.span)
    if isinstance(c, SIf):
        return TSeq(_guard_sync(c.guard),
                    TIf(rename(c.guard, 1), self_product(c.then),
                        self_product(c.els), span=c.span),
                    span=c.span)
    if isinstance(c, SWhile):
        body = TSeq(self_product(c.body), _guard_sync(c.guard), span=c.span)
        loop = TWhile(rename(c.guard, 1), body, c.annot, span=c.span)
        return TSeq(_guard_sync(c.guard), loop, span=c.span)
    if isinstance(c, SReturn):
        return TReturn(rename(c.expr, 1), rename(c.expr, 2), span=c.span)
    raise TypeError(f"not a source command: {c!r}")


# ---------------------------------------------------------------------------
# Taint analysis

def taint_check(c: SourceCmd, permissive: bool = False):
    """Reject programs whose loop guards read probabilistically sampled
    values (a conservative forward closure). Branch guards on sampled data
    only warn: the product's synchronization assert restores soundness
    through the equal-output mechanism specs.

    With permissive=True, loop-guard violations also downgrade to warnings
    (used for the axiomatized-extension pipeline). Returns the warning list.
    """
    warnings = []
    tainted = _fixpoint_taint(c)

    def check(cmd):
        if isinstance(cmd, SSeq):
            check(cmd.first), check(cmd.second)
        elif isinstance(cmd, SIf):
            bad = _reads_tainted(cmd.guard, tainted)
            if bad:
                warnings.append(
                    f"branch guard '{_short(cmd.guard)}' reads noise-influenced "
                    f"variable '{bad}' (synchronized by assert)")
            check(cmd.then), check(cmd.els)
        elif isinstance(cmd, SWhile):
            bad = _reads_tainted(cmd.guard, tainted)
            if bad:
                msg = (f"loop guard '{_short(cmd.guard)}' depends on "
                       f"noise-influenced variable '{bad}'")
                if not permissive:
                    raise TaintError(msg, cmd.span)
                warnings.append(msg + " (accepted in permissive mode)")
            check(cmd.body)

    check(c)
    return warnings


def _fixpoint_taint(c: SourceCmd) -> set:
    """Forward closure (iterated to a fixpoint) of variables influenced by
    mechanism outputs; control dependence through tainted branch guards is
    included."""
    from .syntax import expr_vars

    tainted: set = set()

    def assigned_vars(cmd, acc):
        if isinstance(cmd, SSeq):
            assigned_vars(cmd.first, acc), assigned_vars(cmd.second, acc)
        elif isinstance(cmd, (SAssign, SLapAssign, SExpAssign, SCustomAssign)):
            acc.add(cmd.var)
        elif isinstance(cmd, SIf):
            assigned_vars(cmd.then, acc), assigned_vars(cmd.els, acc)
        elif isinstance(cmd, SWhile):
            assigned_vars(cmd.body, acc)
        return acc

    def walk(cmd, guard_tainted):
        if isinstance(cmd, SSeq):
            walk(cmd.first, guard_tainted)
            walk(cmd.second, guard_tainted)
        elif isinstance(cmd, SAssign):
            if guard_tainted or (expr_vars(cmd.expr) & tainted):
                tainted.add(cmd.var)
        elif isinstance(cmd, (SLapAssign, SExpAssign, SCustomAssign)):
            tainted.add(cmd.var)
        elif isinstance(cmd, SIf):
            gt = guard_tainted or bool(expr_vars(cmd.guard) & tainted)
            if gt:
                assigned_vars(cmd.then, tainted)
                assigned_vars(cmd.els, tainted)
            walk(cmd.then, gt)
            walk(cmd.els, gt)
        elif isinstance(cmd, SWhile):
            gt = guard_tainted or bool(expr_vars(cmd.guard) & tainted)
            if gt:
                assigned_vars(cmd.body, tainted)
            walk(cmd.body, gt)

    while True:
        before = set(tainted)
        walk(c, False)
        if tainted == before:
            return tainted


def _reads_tainted(guard: Expr, tainted: set):
    from .syntax import expr_vars
    hit = expr_vars(guard) & tainted
    return sorted(hit)[0] if hit else None


def _short(e: Expr) -> str:
    from .frontend import pretty_expr
    return pretty_expr(e)


def has_probabilistic_nodes(c: TargetCmd) -> bool:
    """The product must be free of source mechanism assignments."""
    if isinstance(c, TSeq):
        return has_probabilistic_nodes(c.first) or has_probabilistic_nodes(c.second)
    if isinstance(c, TIf):
        return has_probabilistic_nodes(c.then) or has_probabilistic_nodes(c.els)
    if isinstance(c, TWhile):
        return has_probabilistic_nodes(c.body)
    return isinstance(c, (SLapAssign, SExpAssign, SCustomAssign))


def uses_custom_invoke(c: TargetCmd) -> bool:
    if isinstance(c, TSeq):
        return uses_custom_invoke(c.first) or uses_custom_invoke(c.second)
    if isinstance(c, TIf):
        return uses_custom_invoke(c.then) or uses_custom_invoke(c.els)
    if isinstance(c, TWhile):
        return uses_custom_invoke(c.body)
    return isinstance(c, TCustomInvoke)


def target_vars(c: TargetCmd) -> set:
    """All variable names occurring in a target command."""
    from .syntax import expr_vars
    out = set()

    def go(cmd):
        if isinstance(cmd, TSeq):
            go(cmd.first), go(cmd.second)
        elif isinstance(cmd, TAssign):
            out.add(cmd.var)
            out.update(expr_vars(cmd.expr))
        elif isinstance(cmd, TAssert):
            out.update(expr_vars(cmd.cond))
        elif isinstance(cmd, TLapInvoke):
            out.update(cmd.vars)
            out.update(expr_vars(cmd.e1) | expr_vars(cmd.e2))
        elif isinstance(cmd, TExpInvoke):
            out.update(cmd.vars)
            for e in (cmd.s1, cmd.e1, cmd.s2, cmd.e2):
                out.update(expr_vars(e))
        elif isinstance(cmd, TCustomInvoke):
            out.update(cmd.vars)
            for e in cmd.args:
                out.update(expr_vars(e))
        elif isinstance(cmd, TIf):
            out.update(expr_vars(cmd.guard))
            go(cmd.then), go(cmd.els)
        elif isinstance(cmd, TWhile):
            out.update(expr_vars(cmd.guard))
            go(cmd.body)
        elif isinstance(cmd, TReturn):
            out.update(expr_vars(cmd.e1) | expr_vars(cmd.e2))

    go(c)
    return out
