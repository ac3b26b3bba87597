"""Exact distribution semantics of the probabilistic source language.

Laplace assignments use the discrete carrier: integer support with weight
exp(-eps*|r - center|/2), truncated to a finite window and renormalized.
The window is wide enough that the analytic two-sided tail bound
2*exp(-window*eps/2) stays below the configured truncation tolerance, so
every downstream check can quantify the truncation error.

Loops are evaluated by forward iteration over the finite support: the
still-active part of the distribution is pushed through the body until the
guard is false on every support point, which agrees with the least fixed
point on terminating programs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .config import Config, min_admissible_window
from .errors import EvalError, NonterminationError
from .formulas import EvalEnv, eval_expr
from .syntax import (BinOp, Call, Lit, MaxGap, ProgramUnit, SAssign,
                     SCustomAssign, SExpAssign, SIf, SLapAssign, SReturn,
                     SSeq, SSkip, SWhile, ScoreApp, SourceCmd, UnOp, Var)
from .values import BuiltinRegistry, Dist, Memory, ScoreMap, dirac, normalize


def lap_dist(eps, center: int, window: int, tail_tol: float = 1e-9) -> Dist:
    """Discrete Laplace over {center-window .. center+window}, mass at r
    proportional to exp(-eps*|r-center|/2), renormalized.

    The window must satisfy the tail bound 2*exp(-window*eps/2) < tail_tol;
    the error names the minimal admissible window otherwise.
    """
    eps = float(eps)
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    if not isinstance(center, int) or isinstance(center, bool):
        raise EvalError("Laplace center must be an integer")
    if 2.0 * math.exp(-window * eps / 2.0) >= tail_tol:
        need = min_admissible_window(eps, tail_tol)
        raise ValueError(
            f"Laplace window {window} too small for truncation tolerance "
            f"{tail_tol}; minimal admissible window is {need}")
    weights = {center + k: math.exp(-eps * abs(k) / 2.0)
               for k in range(-window, window + 1)}
    return normalize(weights)


def exp_dist(eps, score: ScoreMap, input_value, range_values) -> Dist:
    """Exponential mechanism over the declared range: mass at r equals
    exp(eps*score(input, r)/2) normalized over the range."""
    eps = float(eps)
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    if not range_values:
        raise ValueError("exponential mechanism needs a non-empty range")
    if not isinstance(score, ScoreMap):
        raise EvalError("exponential mechanism score must be a score function")
    weights = {}
    for r in range_values:
        weights[r] = math.exp(eps * score.get(input_value, r) / 2.0)
    return normalize(weights)


@dataclass
class InterpContext:
    env: EvalEnv
    config: Config = field(default_factory=Config)
    steps: int = 0

    def charge(self, n: int):
        self.steps += n
        if self.steps > self.config.step_limit:
            raise NonterminationError(
                f"loop exceeded {self.config.step_limit} support-point steps; "
                "the program may not terminate on this input")


def interpret(cmd: SourceCmd, m: Memory, ctx: InterpContext) -> Dist:
    """Distribution over memories after running `cmd` from memory `m`."""
    return _run(cmd, dirac(m), ctx)


def _run(cmd: SourceCmd, mu: Dist, ctx: InterpContext) -> Dist:
    if isinstance(cmd, SSkip):
        return mu
    if isinstance(cmd, SSeq):
        return _run(cmd.second, _run(cmd.first, mu, ctx), ctx)
    if isinstance(cmd, SAssign):
        return mu.map(lambda m: m.set(cmd.var, eval_expr(cmd.expr, m, ctx.env)))
    if isinstance(cmd, SLapAssign):
        window = ctx.config.lap_window(float(cmd.eps))
        def lap(m):
            center = eval_expr(cmd.expr, m, ctx.env)
            if not isinstance(center, int) or isinstance(center, bool):
                raise EvalError("Laplace argument did not evaluate to an int",
                                cmd.span)
            noise = lap_dist(cmd.eps, center, window, ctx.config.tail_tol)
            return noise.map(lambda v: m.set(cmd.var, v))
        return mu.bind(lap)
    if isinstance(cmd, SExpAssign):
        def expm(m):
            s = eval_expr(cmd.score, m, ctx.env)
            inp = eval_expr(cmd.input, m, ctx.env)
            out = exp_dist(cmd.eps, s, inp, ctx.env.range_values)
            return out.map(lambda v: m.set(cmd.var, v))
        return mu.bind(expm)
    if isinstance(cmd, SCustomAssign):
        raise EvalError(f"custom mechanism '{cmd.mech}' has no exact "
                        "distribution semantics", cmd.span)
    if isinstance(cmd, SIf):
        true_part, false_part = _split(mu, cmd.guard, ctx)
        out = Dist({})
        if len(true_part):
            out = out.merged_with(_run(cmd.then, true_part, ctx))
        if len(false_part):
            out = out.merged_with(_run(cmd.els, false_part, ctx))
        return out
    if isinstance(cmd, SWhile):
        done = Dist({})
        active = mu
        while len(active):
            ctx.charge(len(active))
            true_part, false_part = _split(active, cmd.guard, ctx)
            done = done.merged_with(false_part)
            if not len(true_part):
                break
            active = _run(cmd.body, true_part, ctx)
        return done
    if isinstance(cmd, SReturn):
        # handled by interpret_unit; inside a program body this is the tail
        return mu
    raise TypeError(f"not a source command: {cmd!r}")


def _split(mu: Dist, guard, ctx: InterpContext):
    t, f = {}, {}
    for m, p in mu.items():
        g = eval_expr(guard, m, ctx.env)
        if not isinstance(g, bool):
            raise EvalError("guard did not evaluate to a boolean")
        (t if g else f)[m] = p
    return Dist(t), Dist(f)


def make_env(unit: ProgramUnit, registry: BuiltinRegistry) -> EvalEnv:
    return EvalEnv(registry=registry, range_values=unit.range_values,
                   domains=unit.domains)


def initial_memory(unit: ProgramUnit, overrides=None) -> Memory:
    """Memory assigning every declared variable its domain default (or an
    override)."""
    vals = {}
    for name, ty in unit.decls.items():
        dom = unit.domains.get(name)
        if dom is not None:
            vals[name] = dom.default()
        else:
            vals[name] = _type_default(ty)
    if overrides:
        vals.update(overrides)
    return Memory(vals)


def _type_default(ty):
    return {"int": 0, "real": 0.0, "bool": False, "intlist": (),
            "score": ScoreMap({})}[ty]


def interpret_unit(unit: ProgramUnit, m: Memory, registry: BuiltinRegistry,
                   config: Config | None = None) -> Dist:
    """Output-value distribution of the whole program (body then the tail
    return's expression pushed forward).

    Runs on the compiled engine: support sets grow multiplicatively with
    nested mechanism calls, so memories are lowered to plain tuples with
    slot-indexed access.
    """
    engine = _Engine(unit, registry, config or Config())
    return engine.run_unit(m)


def interpret_unit_reference(unit: ProgramUnit, m: Memory,
                             registry: BuiltinRegistry,
                             config: Config | None = None) -> Dist:
    """Memory-object evaluation of the same semantics; used to cross-check
    the compiled engine on small instances."""
    ctx = InterpContext(env=make_env(unit, registry),
                        config=config or Config())
    body, ret = _split_tail_return(unit.body)
    mu = _run(body, dirac(m), ctx) if body is not None else dirac(m)
    return mu.map(lambda mm: eval_expr(ret.expr, mm, ctx.env))


def _split_tail_return(body: SourceCmd):
    from .syntax import flatten_seq, source_seq
    stmts = list(flatten_seq(body))
    if not isinstance(stmts[-1], SReturn):
        raise EvalError("program has no tail return")
    prefix = stmts[:-1]
    return (source_seq(prefix) if prefix else None), stmts[-1]


# ---------------------------------------------------------------------------
# Compiled engine

class _Engine:
    """Lowers the program to closures over flat value tuples.

    States are tuples in declaration-sorted slot order; distributions are
    plain dicts keyed by state tuples. Weights and normalization match the
    reference evaluation operation for operation.
    """

    def __init__(self, unit: ProgramUnit, registry: BuiltinRegistry,
                 config: Config):
        self.unit = unit
        self.registry = registry
        self.config = config
        self.names = sorted(unit.decls)
        self.slot = {n: i for i, n in enumerate(self.names)}
        self.range_values = unit.range_values
        self.steps = 0
        self._noise_cache = {}

    # -- expressions over state tuples -------------------------------------

    def compile_expr(self, e):
        if isinstance(e, Var):
            if e.name not in self.slot:
                raise EvalError(f"unbound variable '{e.name}'", e.span)
            i = self.slot[e.name]
            return lambda s: s[i]
        if isinstance(e, Lit):
            v = e.value
            from fractions import Fraction
            if isinstance(v, Fraction):
                v = float(v)
            return lambda s: v
        if isinstance(e, UnOp):
            from .formulas import apply_unop
            f = self.compile_expr(e.arg)
            op = e.op
            if op == "hd":
                def run_hd(s):
                    v = f(s)
                    if not v:
                        raise EvalError("hd of empty list")
                    return v[0]
                return run_hd
            if op == "tl":
                def run_tl(s):
                    v = f(s)
                    if not v:
                        raise EvalError("tl of empty list")
                    return v[1:]
                return run_tl
            if op == "length":
                return lambda s: len(f(s))
            if op == "abs":
                return lambda s: abs(f(s))
            if op == "neg":
                return lambda s: -f(s)
            return lambda s, _op=op: apply_unop(_op, f(s))
        if isinstance(e, BinOp):
            from .formulas import apply_binop
            l = self.compile_expr(e.left)
            r = self.compile_expr(e.right)
            table = {
                "+": lambda s: l(s) + r(s),
                "-": lambda s: l(s) - r(s),
                "*": lambda s: l(s) * r(s),
                "=": lambda s: l(s) == r(s),
                "!=": lambda s: l(s) != r(s),
                "<": lambda s: l(s) < r(s),
                "<=": lambda s: l(s) <= r(s),
                ">": lambda s: l(s) > r(s),
                ">=": lambda s: l(s) >= r(s),
                "::": lambda s: (l(s),) + r(s),
                "mod": lambda s: l(s) % r(s),
                "min": lambda s: min(l(s), r(s)),
                "max": lambda s: max(l(s), r(s)),
            }
            if e.op in table:
                return table[e.op]
            return lambda s, _op=e.op: apply_binop(_op, l(s), r(s))
        if isinstance(e, Call):
            entry = self.registry.lookup(e.name)
            if entry is None:
                raise EvalError(f"no implementation registered for builtin "
                                f"'{e.name}'", e.span)
            arity, fn = entry
            fns = [self.compile_expr(a) for a in e.args]
            if arity != len(fns):
                raise EvalError(f"builtin '{e.name}' expects {arity} args",
                                e.span)
            if arity == 1:
                f0 = fns[0]
                return lambda s: fn(f0(s))
            if arity == 2:
                f0, f1 = fns
                return lambda s: fn(f0(s), f1(s))
            return lambda s: fn(*[g(s) for g in fns])
        if isinstance(e, ScoreApp):
            fs = self.compile_expr(e.score)
            fi = self.compile_expr(e.input)
            fe = self.compile_expr(e.elem)
            return lambda s: fs(s).get(fi(s), fe(s))
        if isinstance(e, MaxGap):
            fs = self.compile_expr(e.score)
            f1 = self.compile_expr(e.e1)
            f2 = self.compile_expr(e.e2)
            rng = self.range_values
            def run_gap(s):
                sc = fs(s)
                a, b = f1(s), f2(s)
                return max(abs(sc.get(a, r) - sc.get(b, r)) for r in rng)
            return run_gap
        raise TypeError(f"not an expression: {e!r}")

    # -- statements ----------------------------------------------------------

    _LINEAR = (SAssign, SLapAssign, SExpAssign)

    def compile_cmd(self, c):
        if isinstance(c, SSkip):
            return lambda d: d
        if isinstance(c, SSeq):
            from .syntax import flatten_seq
            stmts = self._fold_ifs(list(flatten_seq(c)))
            fns = []
            run = []
            for st in stmts:
                if isinstance(st, self._LINEAR):
                    run.append(st)
                else:
                    if run:
                        fns.append(self._compile_linear(run))
                        run = []
                    fns.append(self.compile_cmd(st))
            if run:
                fns.append(self._compile_linear(run))
            if len(fns) == 1:
                return fns[0]
            def run_seq(d):
                for f in fns:
                    d = f(d)
                return d
            return run_seq
        if isinstance(c, self._LINEAR):
            return self._compile_linear([c])
        if isinstance(c, SCustomAssign):
            def run_custom(d):
                raise EvalError(f"custom mechanism '{c.mech}' has no exact "
                                "distribution semantics", c.span)
            return run_custom
        if isinstance(c, SIf):
            g = self.compile_expr(c.guard)
            ft = self.compile_cmd(c.then)
            fe = self.compile_cmd(c.els)
            def run_if(d):
                dt, de = {}, {}
                for s, p in d.items():
                    v = g(s)
                    if not isinstance(v, bool):
                        raise EvalError("guard did not evaluate to a boolean")
                    (dt if v else de)[s] = p
                out = ft(dt) if dt else {}
                if de:
                    for s, p in fe(de).items():
                        out[s] = out.get(s, 0.0) + p
                return out
            return run_if
        if isinstance(c, SWhile):
            g = self.compile_expr(c.guard)
            body = self.compile_cmd(c.body)
            def run_while(d):
                done = {}
                active = d
                while active:
                    self.steps += len(active)
                    if self.steps > self.config.step_limit:
                        raise NonterminationError(
                            f"loop exceeded {self.config.step_limit} "
                            "support-point steps")
                    stepping = {}
                    exiting = {}
                    for s, p in active.items():
                        v = g(s)
                        if not isinstance(v, bool):
                            raise EvalError(
                                "guard did not evaluate to a boolean")
                        if v:
                            stepping[s] = p
                        else:
                            exiting[s] = p
                    if not done:
                        done = exiting
                    else:
                        dget = done.get
                        for s, p in exiting.items():
                            done[s] = dget(s, 0.0) + p
                    if not stepping:
                        break
                    active = body(stepping)
                return done
            return run_while
        if isinstance(c, SReturn):
            return lambda d: d
        raise TypeError(f"not a source command: {c!r}")

    def _fold_ifs(self, stmts):
        """Distribute trailing straight-line statements into a preceding
        conditional, so each branch compiles to one fused pass instead of
        several whole-support dictionary rebuilds."""
        stmts = list(stmts)
        i = len(stmts) - 1
        while i >= 0:
            st = stmts[i]
            if isinstance(st, SIf):
                j = i + 1
                run = []
                while j < len(stmts) and isinstance(stmts[j], self._LINEAR):
                    run.append(stmts[j])
                    j += 1
                if run:
                    stmts[i:j] = [SIf(st.guard,
                                      source_seq([st.then] + run),
                                      source_seq([st.els] + run),
                                      span=st.span)]
            i -= 1
        return stmts

    def _compile_linear(self, stmts):
        """One pass over the support for a run of (probabilistic)
        assignments: states travel as mutable lists and hit the output
        dictionary once."""
        steps = []
        for st in stmts:
            i = self.slot[st.var]
            if isinstance(st, SAssign):
                steps.append(("det", i, self.compile_expr(st.expr), None))
            elif isinstance(st, SLapAssign):
                noise = self._noise_items(float(st.eps))
                steps.append(("lap", i, self.compile_expr(st.expr), noise))
            elif isinstance(st, SExpAssign):
                fs = self.compile_expr(st.score)
                fi = self.compile_expr(st.input)
                steps.append(("exp", i, (fs, fi, st.eps), self.range_values))
            else:  # pragma: no cover
                raise TypeError(st)

        def run(d):
            out = {}
            get = out.get
            for s, p in d.items():
                frontier = [(list(s), p)]
                for kind, i, f, extra in steps:
                    if kind == "det":
                        for ls, _w in frontier:
                            ls[i] = f(ls)
                    elif kind == "lap":
                        new = []
                        append = new.append
                        for ls, w in frontier:
                            center = f(ls)
                            if not isinstance(center, int) or \
                                    isinstance(center, bool):
                                raise EvalError("Laplace argument did not "
                                                "evaluate to an int")
                            for off, nw in extra:
                                ls2 = ls.copy()
                                ls2[i] = center + off
                                append((ls2, w * nw))
                        frontier = new
                    else:
                        fs, fi, eps = f
                        new = []
                        append = new.append
                        for ls, w in frontier:
                            dist = exp_dist(eps, fs(ls), fi(ls), extra)
                            for r, nw in dist.items():
                                ls2 = ls.copy()
                                ls2[i] = r
                                append((ls2, w * nw))
                        frontier = new
                for ls, w in frontier:
                    t = tuple(ls)
                    out[t] = get(t, 0.0) + w
            return out

        return run

    def _noise_items(self, eps: float):
        key = eps
        if key not in self._noise_cache:
            window = self.config.lap_window(eps)
            d = lap_dist(eps, 0, window, self.config.tail_tol)
            self._noise_cache[key] = tuple(d.items())
        return self._noise_cache[key]

    # -- running ---------------------------------------------------------------

    def run_unit(self, m: Memory) -> Dist:
        body, ret = _split_tail_return(self.unit.body)
        state = tuple(m[n] for n in self.names)
        d = {state: 1.0}
        if body is not None:
            d = self.compile_cmd(body)(d)
        fret = self.compile_expr(ret.expr)
        out = {}
        for s, p in d.items():
            v = fret(s)
            out[v] = out.get(v, 0.0) + p
        return Dist(out)

    def run_body_memories(self, m: Memory) -> Dist:
        """Distribution over memories after the return-free body."""
        body, _ret = _split_tail_return(self.unit.body)
        state = tuple(m[n] for n in self.names)
        d = {state: 1.0}
        if body is not None:
            d = self.compile_cmd(body)(d)
        return Dist({Memory(dict(zip(self.names, s))): p
                     for s, p in d.items()})
