"""User-supplied axiom schemas for custom mechanism invocations.

An axiom file is JSON:

    {"mechanisms": [
        {"name": "Choose",
         "params": ["g", "n"],
         "cases": [
            {"pre": "<formula over g_1, n_1, g_2, n_2>",
             "post": "<formula additionally over v_1, v_2>",
             "cost_eps": "<expr>", "cost_delta": "<expr>"}]}]}

Formulas and cost expressions may mention the tagged formals, the outputs
`v_1`/`v_2`, and `eps` (the call-site epsilon). Results proved through
these schemas are stamped UNSOUND-EXTENSION: the end-to-end privacy
theorem does not cover axiomatized mechanisms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

from .syntax import Lit, Var, tagged
from .formulas import Formula, subst_formula
from .syntax import subst_expr


@dataclass
class AxiomCase:
    pre: Formula
    post: Formula
    cost_eps: object     # Expr
    cost_delta: object   # Expr


@dataclass
class CustomAxiom:
    name: str
    params: list
    cases: list

    def instantiate(self, case: AxiomCase, invoke):
        """Substitute call-site actuals for the tagged formals, outputs and
        epsilon in one case; returns (pre, post, cost_eps, cost_delta)."""
        k = len(self.params)
        if len(invoke.args) != 2 * k:
            raise ValueError(
                f"mechanism '{self.name}' expects {k} arguments per run, "
                f"got {len(invoke.args)} total")
        subs = {}
        for i, p in enumerate(self.params):
            subs[tagged(p, 1)] = invoke.args[i]
            subs[tagged(p, 2)] = invoke.args[k + i]
        subs["eps"] = Lit(float(invoke.eps))
        out_subs = dict(subs)
        out_subs[tagged("v", 1)] = Var(invoke.vars[0])
        out_subs[tagged("v", 2)] = Var(invoke.vars[1])

        def sub_f(f, table):
            for name, repl in table.items():
                f = subst_formula(f, name, repl)
            return f

        def sub_e(e, table):
            for name, repl in table.items():
                e = subst_expr(e, name, repl)
            return e

        return (sub_f(case.pre, subs), sub_f(case.post, out_subs),
                sub_e(case.cost_eps, subs), sub_e(case.cost_delta, subs))


def load_axioms(path: str) -> dict:
    """Parse an axiom file into {mechanism name: CustomAxiom}."""
    from .frontend import parse_expr_text, parse_formula_text
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return parse_axioms(data)


def parse_axioms(data: dict) -> dict:
    from .frontend import parse_expr_text, parse_formula_text
    out = {}
    for mech in data.get("mechanisms", []):
        cases = []
        for c in mech["cases"]:
            cases.append(AxiomCase(
                pre=parse_formula_text(c["pre"]),
                post=parse_formula_text(c["post"]),
                cost_eps=parse_expr_text(c.get("cost_eps", "0")),
                cost_delta=parse_expr_text(c.get("cost_delta", "0")),
            ))
        ax = CustomAxiom(mech["name"], list(mech["params"]), cases)
        out[ax.name] = ax
    return out
