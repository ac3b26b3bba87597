"""Value universe, memories, the exact finite sub-distribution monad, and
the builtin registry.

Values are immutable and hashable: Python int / float / bool, tuples of
ints for lists, and ScoreMap for finite score functions. Memories key
distributions, so they are immutable too; updates return new memories.
"""

from __future__ import annotations

import json
import math

from .errors import DegenerateNormalization, EvalError

MASS_SUM_TOL = 1e-9       # total-mass invariant slack
ALGEBRA_TOL = 1e-12       # tolerance for algebraic identities on masses


# ---------------------------------------------------------------------------
# Values

class ScoreMap:
    """Finite map from (input-key, range-element) pairs to reals.

    Compares and hashes by extensional equality on its key set.
    """

    __slots__ = ("_entries", "_lookup", "_hash")

    def __init__(self, mapping):
        items = tuple(sorted(((k[0], k[1]), float(v)) for k, v in dict(mapping).items()),
                      )
        self._entries = tuple(sorted(items, key=lambda kv: (value_key(kv[0][0]),
                                                            value_key(kv[0][1]))))
        self._lookup = dict(self._entries)
        self._hash = hash(self._entries)

    def get(self, inp, elem):
        try:
            return self._lookup[(inp, elem)]
        except KeyError:
            raise EvalError(f"score function undefined at ({format_value(inp)}, "
                            f"{format_value(elem)})")

    def __contains__(self, key):
        return key in self._lookup

    def items(self):
        return self._entries

    def __eq__(self, other):
        return isinstance(other, ScoreMap) and self._entries == other._entries

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"ScoreMap({len(self._entries)} entries)"


def is_value(v) -> bool:
    if isinstance(v, (bool, int, float, ScoreMap)):
        return True
    return isinstance(v, tuple) and all(isinstance(x, int) and not isinstance(x, bool)
                                        for x in v)


_KIND_RANK = {"bool": 0, "int": 1, "real": 2, "list": 3, "score": 4}


def value_kind(v) -> str:
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    if isinstance(v, float):
        return "real"
    if isinstance(v, tuple):
        return "list"
    if isinstance(v, ScoreMap):
        return "score"
    raise TypeError(f"not a value: {v!r}")


def value_key(v):
    """Canonical total order on values, for deterministic iteration."""
    k = value_kind(v)
    if k == "score":
        return (_KIND_RANK[k], tuple((value_key(i), value_key(r), x)
                                     for (i, r), x in v.items()))
    if k == "list":
        return (_KIND_RANK[k], v)
    return (_KIND_RANK[k], v)


def format_value(v) -> str:
    k = value_kind(v)
    if k == "bool":
        return "true" if v else "false"
    if k == "list":
        return "[" + ", ".join(str(x) for x in v) + "]"
    if k == "score":
        parts = ", ".join(f"({format_value(i)}, {format_value(r)}): {x}"
                          for (i, r), x in v.items())
        return "score{" + parts + "}"
    return repr(v) if k == "real" else str(v)


def value_to_json(v):
    k = value_kind(v)
    if k == "list":
        return list(v)
    if k == "score":
        return {"score": [[value_to_json(i), value_to_json(r), x]
                          for (i, r), x in v.items()]}
    return v


# ---------------------------------------------------------------------------
# Memories

class Memory:
    """Immutable finite map from variable names to values."""

    __slots__ = ("_items", "_dict", "_hash")

    def __init__(self, mapping):
        d = dict(mapping)
        self._items = tuple(sorted(d.items()))
        self._dict = d
        self._hash = hash(self._items)

    def __getitem__(self, name):
        try:
            return self._dict[name]
        except KeyError:
            raise EvalError(f"unbound variable '{name}'")

    def get(self, name, default=None):
        return self._dict.get(name, default)

    def __contains__(self, name):
        return name in self._dict

    def set(self, name, value) -> "Memory":
        d = dict(self._dict)
        d[name] = value
        return Memory(d)

    def set_many(self, updates) -> "Memory":
        d = dict(self._dict)
        d.update(updates)
        return Memory(d)

    def vars(self):
        return tuple(k for k, _ in self._items)

    def items(self):
        return self._items

    def sort_key(self):
        return tuple((k, value_key(v)) for k, v in self._items)

    def __eq__(self, other):
        return isinstance(other, Memory) and self._items == other._items

    def __hash__(self):
        return self._hash

    def __repr__(self):
        inner = ", ".join(f"{k}={format_value(v)}" for k, v in self._items)
        return "{" + inner + "}"

    def to_json(self):
        return {k: value_to_json(v) for k, v in self._items}


def point_key(p):
    """Canonical sort key for a distribution support point (Memory or Value)."""
    if isinstance(p, Memory):
        return (0, p.sort_key())
    return (1, value_key(p))


# ---------------------------------------------------------------------------
# Distributions

class Dist:
    """Exact finite sub-distribution over memories or values.

    Masses are binary64; zero-mass points are pruned at construction and
    total mass may not exceed 1 + 1e-9.
    """

    __slots__ = ("_m", "_total")

    def __init__(self, mapping):
        m = {}
        for k, p in mapping.items() if isinstance(mapping, dict) else mapping:
            if p < 0:
                raise ValueError(f"negative mass {p} at {k!r}")
            if p > 0:
                m[k] = m.get(k, 0.0) + p
        self._m = m
        self._total = math.fsum(m.values())
        if self._total > 1.0 + MASS_SUM_TOL:
            raise ValueError(f"total mass {self._total} exceeds 1")

    @property
    def total(self) -> float:
        return self._total

    def mass(self, point) -> float:
        return self._m.get(point, 0.0)

    def support(self):
        return sorted(self._m, key=point_key)

    def items(self):
        """Support points with masses, in canonical order."""
        return [(k, self._m[k]) for k in self.support()]

    def __len__(self):
        return len(self._m)

    def __eq__(self, other):
        return isinstance(other, Dist) and self._m == other._m

    def __hash__(self):  # pragma: no cover - dists are not dict keys
        raise TypeError("Dist is unhashable")

    def approx_equal(self, other, tol=ALGEBRA_TOL) -> bool:
        keys = set(self._m) | set(other._m)
        return all(abs(self.mass(k) - other.mass(k)) <= tol for k in keys)

    def leq(self, other, tol=0.0) -> bool:
        """Pointwise order on sub-distributions."""
        return all(p <= other.mass(k) + tol for k, p in self._m.items())

    def bind(self, f) -> "Dist":
        """Monadic bind: mass of b is sum over a of f(a)(b) * mass(a)."""
        out = {}
        for a, p in self.items():
            for b, q in f(a).items():
                out[b] = out.get(b, 0.0) + p * q
        return Dist(out)

    def map(self, g) -> "Dist":
        """Pushforward along a deterministic function."""
        out = {}
        for a, p in self.items():
            b = g(a)
            out[b] = out.get(b, 0.0) + p
        return Dist(out)

    def scale(self, c: float) -> "Dist":
        return Dist({k: p * c for k, p in self._m.items()})

    def merged_with(self, other) -> "Dist":
        out = dict(self._m)
        for k, p in other.items():
            out[k] = out.get(k, 0.0) + p
        return Dist(out)

    def sample(self, rng):
        """Draw one support point (Monte Carlo convenience; never used for
        checking)."""
        u = rng.random() * self._total
        acc = 0.0
        pts = self.items()
        for k, p in pts:
            acc += p
            if u <= acc:
                return k
        return pts[-1][0]

    def to_json(self):
        rows = []
        for k, p in self.items():
            if isinstance(k, Memory):
                rows.append({"memory": k.to_json(), "mass": p})
            else:
                rows.append({"value": value_to_json(k), "mass": p})
        return rows

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def __repr__(self):
        inner = ", ".join(f"{k!r}: {p:.6g}" for k, p in self.items())
        return "Dist{" + inner + "}"


def dirac(point) -> Dist:
    """Single-point distribution with mass 1."""
    return Dist({point: 1.0})


def bind(mu: Dist, f) -> Dist:
    return mu.bind(f)


def normalize(weights) -> Dist:
    """Turn nonnegative weights into a probability distribution by dividing
    through the total. Raises on an all-zero weight map."""
    items = list(weights.items() if isinstance(weights, dict) else weights)
    total = math.fsum(w for _, w in items)
    if total <= 0.0:
        raise DegenerateNormalization("degenerate normalization: all weights zero")
    return Dist({k: w / total for k, w in items})


# ---------------------------------------------------------------------------
# Builtin registry

class BuiltinRegistry:
    """Named, deterministic, total functions callable from expressions."""

    def __init__(self, parent: "BuiltinRegistry | None" = None):
        self._parent = parent
        self._fns = {}

    def register(self, name: str, arity: int, fn) -> "BuiltinRegistry":
        if self.lookup(name) is not None:
            raise ValueError(f"builtin '{name}' already registered")
        self._fns[name] = (arity, fn)
        return self

    def lookup(self, name: str):
        if name in self._fns:
            return self._fns[name]
        if self._parent is not None:
            return self._parent.lookup(name)
        return None

    def call(self, name: str, args):
        entry = self.lookup(name)
        if entry is None:
            raise EvalError(f"no implementation registered for builtin '{name}'")
        arity, fn = entry
        if len(args) != arity:
            raise EvalError(f"builtin '{name}' expects {arity} args, got {len(args)}")
        return fn(*args)

    def child(self) -> "BuiltinRegistry":
        return BuiltinRegistry(parent=self)


# --- prelude implementations ------------------------------------------------

def _adjacent(l1, l2):
    """Same length, at most one entry differs, and by at most 1."""
    if len(l1) != len(l2):
        return False
    diffs = [(a, b) for a, b in zip(l1, l2) if a != b]
    return len(diffs) <= 1 and all(abs(a - b) <= 1 for a, b in diffs)


def _dbdist(d1, d2):
    """Add/remove-record distance between multisets given as sorted tuples."""
    c1, c2 = {}, {}
    for x in d1:
        c1[x] = c1.get(x, 0) + 1
    for x in d2:
        c2[x] = c2.get(x, 0) + 1
    keys = set(c1) | set(c2)
    return sum(abs(c1.get(k, 0) - c2.get(k, 0)) for k in keys)


def _acc(eps, delta):
    """Half-width of the high-probability window: log(2/delta)/(2*eps)."""
    eps, delta = float(eps), float(delta)
    if eps <= 0 or delta <= 0:
        raise EvalError("acc(eps, delta) needs positive arguments")
    return math.log(2.0 / delta) / (2.0 * eps)


def _median(d):
    """Lower median of a sorted multiset; 0 for the empty database."""
    if not d:
        return 0
    return d[(len(d) - 1) // 2]


def default_registry() -> BuiltinRegistry:
    reg = BuiltinRegistry()
    reg.register("adjacent", 2, _adjacent)
    reg.register("dbdist", 2, _dbdist)
    reg.register("acc", 2, _acc)
    reg.register("median", 1, _median)
    return reg


#: Signatures of prelude builtins, usable without a header declaration.
PRELUDE_SIGNATURES = {
    "adjacent": (("intlist", "intlist"), "bool"),
    "dbdist": (("intlist", "intlist"), "int"),
    "acc": (("real", "real"), "real"),
    "median": (("intlist",), "int"),
}
