"""Runtime configuration for the interpreters, falsifier and checkers.

A config file (JSON object with the same keys) can be pointed to by the
DPSP_CONFIG environment variable; CLI flags override it.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace


@dataclass
class Config:
    # Truncation tolerance for the finite Laplace carrier: the window is
    # chosen so the two-sided analytic tail bound stays below tail_tol.
    tail_tol: float = 1e-9
    # Explicit Laplace window override (None = derive from tail_tol).
    window: int | None = None
    # Cap on support-point loop steps in the exact interpreter.
    step_limit: int = 1_000_000
    # Cap on memories materialized by the bounded target enumerator.
    enum_budget: int = 1_000_000
    # Cap on assignment-tree nodes visited by the falsifier.
    falsify_budget: int = 10_000_000
    # dpcheck slack; None = 10x the per-call truncation tail bound.
    tol: float | None = None
    # Ghost grids are multiples of (min mechanism epsilon / divisor).
    ghost_step_divisor: int = 2

    def lap_window(self, eps: float) -> int:
        """Smallest window whose analytic tail bound 2*exp(-w*eps/2) is
        below tail_tol, unless an explicit override is set."""
        if self.window is not None:
            return self.window
        return min_admissible_window(eps, self.tail_tol)

    def with_overrides(self, **kw) -> "Config":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def min_admissible_window(eps: float, tau: float) -> int:
    """Least integer w with 2*exp(-w*eps/2) < tau."""
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    if not (0 < tau < 2):
        raise ValueError("truncation tolerance must be in (0, 2)")
    w = math.floor(2.0 * math.log(2.0 / tau) / eps) + 1
    while 2.0 * math.exp(-w * eps / 2.0) >= tau:  # guard against float edge
        w += 1
    return w


def load_config(path: str | None = None) -> Config:
    """Build a Config from DPSP_CONFIG (or an explicit path); missing file
    keys keep their defaults."""
    path = path or os.environ.get("DPSP_CONFIG")
    cfg = Config()
    if not path:
        return cfg
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    known = {f for f in cfg.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return replace(cfg, **data)
