"""Jet coordinates of the Kundt metric bundle and its equation manifolds.

For spacetime dimension n the base coordinates are (u, x1..x{n-2}, v) and
the fiber carries the metric functions H, W1..W{n-2}, h11..h{n-2}{n-2}
(h stored for index pairs i <= j only).  Jet symbols are minted lazily as
total derivatives need them; an :class:`EquationSystem` marks which jet
symbols are eliminated (set to zero) and total derivatives never produce
eliminated symbols, so restricted expressions stay small.

Group-parameter jets (for the functions a^i(u,x), b(u,x), c(u)) share the
same multi-index machinery; they never carry v-derivatives and c carries
u-derivatives only.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from math import comb
from typing import Dict, Iterator, List, Optional, Tuple

from kundt.symexpr import Expr, ParseError, SingularSubstitution, Sym, symbol

__all__ = [
    "Setting",
    "Field",
    "EquationSystem",
    "SingularOnEquation",
    "total_derivative",
    "restrict",
    "dim_jet",
    "dim_E",
    "dim_ED",
    "multiindices",
]

MultiIndex = Tuple[int, ...]


class SingularOnEquation(Exception):
    """A denominator vanishes identically on the equation manifold."""


@dataclass(frozen=True)
class Field:
    """One fiber coordinate function of the Kundt ansatz."""

    name: str
    kind: str  # "H", "W" or "h"
    i: int = 0
    j: int = 0


def multiindices(nvars: int, order: int) -> Iterator[MultiIndex]:
    """All multi-indices with |sigma| == order, in lexicographic order."""
    if nvars == 1:
        yield (order,)
        return
    for first in range(order, -1, -1):
        for rest in multiindices(nvars - 1, order - first):
            yield (first,) + rest


def multiindices_upto(nvars: int, order: int) -> Iterator[MultiIndex]:
    for k in range(order + 1):
        yield from multiindices(nvars, k)


class Setting:
    """Shared jet bookkeeping for one spacetime dimension n >= 3."""

    _cache: Dict[int, "Setting"] = {}
    _cache_lock = threading.Lock()

    def __init__(self, n: int):
        if n < 3:
            raise ValueError("spacetime dimension must be >= 3")
        self.n = n
        m = n - 2  # transverse dimension
        self.base_tokens = ["u"] + [f"x{i}" for i in range(1, m + 1)] + ["v"]
        self.base: List[Sym] = [symbol(t, Sym.BASE) for t in self.base_tokens]
        self.u = self.base[0]
        self.v = self.base[-1]
        self.xs = self.base[1:-1]
        self.v_pos = n - 1

        self.fields: List[Field] = [Field("H", "H")]
        for i in range(1, m + 1):
            self.fields.append(Field(f"W{i}", "W", i))
        for i in range(1, m + 1):
            for j in range(i, m + 1):
                self.fields.append(Field(f"h{i}{j}", "h", i, j))
        self.field_by_name = {f.name: f for f in self.fields}
        self.N = len(self.fields)

        self.params = ["c", "b"] + [f"a{i}" for i in range(1, m + 1)]

        self._lock = threading.Lock()
        self._jet: Dict[Tuple[str, MultiIndex], Sym] = {}
        self._jet_info: Dict[int, Tuple[Field, MultiIndex]] = {}
        self._param: Dict[Tuple[str, MultiIndex], Sym] = {}
        self._param_info: Dict[int, Tuple[str, MultiIndex]] = {}

        # aliases accepted by the parser for the index-free 3D notation
        self._field_alias = {"W": "W1", "h": "h11"} if m == 1 else {}
        self._param_alias = {"a": "a1"} if m == 1 else {}

    @classmethod
    def get(cls, n: int) -> "Setting":
        with cls._cache_lock:
            s = cls._cache.get(n)
            if s is None:
                s = cls(n)
                cls._cache[n] = s
            return s

    # -- symbol minting ------------------------------------------------------

    def jet_name(self, field: Field, sigma: MultiIndex) -> str:
        if sum(sigma) == 0:
            return field.name
        toks = []
        for pos, count in enumerate(sigma):
            toks.extend([self.base_tokens[pos]] * count)
        return field.name + "_" + "_".join(toks)

    def jet(self, field: Field | str, sigma: MultiIndex) -> Sym:
        if isinstance(field, str):
            field = self.field_by_name[field]
        key = (field.name, sigma)
        with self._lock:
            s = self._jet.get(key)
            if s is None:
                s = symbol(self.jet_name(field, sigma), Sym.JET)
                self._jet[key] = s
                self._jet_info[s.index] = (field, sigma)
            return s

    def jet_expr(self, field: Field | str, sigma: MultiIndex) -> Expr:
        return Expr.from_sym(self.jet(field, sigma))

    def jet_info(self, s: Sym) -> Optional[Tuple[Field, MultiIndex]]:
        return self._jet_info.get(s.index)

    def jet_order(self, s: Sym) -> Optional[int]:
        info = self._jet_info.get(s.index)
        return sum(info[1]) if info else None

    def param(self, name: str, sigma: MultiIndex) -> Sym:
        if sigma[self.v_pos] != 0:
            raise ValueError("group parameters carry no v-derivatives")
        if name == "c" and any(sigma[1:-1]):
            raise ValueError("c depends on u only")
        key = (name, sigma)
        with self._lock:
            s = self._param.get(key)
            if s is None:
                if sum(sigma) == 0:
                    disp = name
                else:
                    toks = []
                    for pos, count in enumerate(sigma):
                        toks.extend([self.base_tokens[pos]] * count)
                    disp = name + "_" + "_".join(toks)
                s = symbol(disp, Sym.PARAM)
                self._param[key] = s
                self._param_info[s.index] = (name, sigma)
            return s

    def param_expr(self, name: str, sigma: MultiIndex) -> Expr:
        return Expr.from_sym(self.param(name, sigma))

    def param_info(self, s: Sym) -> Optional[Tuple[str, MultiIndex]]:
        return self._param_info.get(s.index)

    def unit(self, pos: int) -> MultiIndex:
        return tuple(1 if k == pos else 0 for k in range(self.n))

    def zero_index(self) -> MultiIndex:
        return (0,) * self.n

    # -- name resolution -----------------------------------------------------

    def _expand_tokens(self, toks: List[str]) -> List[int]:
        """Map derivative tokens (possibly compressed, e.g. 'uvv') to base
        variable positions."""
        positions: List[int] = []
        by_token = {t: i for i, t in enumerate(self.base_tokens)}
        for tok in toks:
            if tok in by_token:
                positions.append(by_token[tok])
                continue
            if tok == "x" and len(self.xs) == 1:
                positions.append(1)
                continue
            i = 0
            while i < len(tok):
                ch = tok[i]
                if ch == "u":
                    positions.append(0)
                    i += 1
                elif ch == "v":
                    positions.append(self.v_pos)
                    i += 1
                elif ch == "x":
                    j = i + 1
                    while j < len(tok) and tok[j].isdigit():
                        j += 1
                    if j == i + 1:
                        if len(self.xs) != 1:
                            raise ParseError(f"ambiguous token {tok!r}")
                        positions.append(1)
                    else:
                        k = int(tok[i + 1:j])
                        if not (1 <= k <= len(self.xs)):
                            raise ParseError(f"no base variable x{k}")
                        positions.append(k)
                    i = j
                else:
                    raise ParseError(f"bad derivative token {tok!r}")
        return positions

    def resolve(self, name: str) -> Sym:
        """Resolve a base variable, jet coordinate or parameter jet name."""
        if name in self.base_tokens:
            return self.base[self.base_tokens.index(name)]
        if name == "x" and len(self.xs) == 1:
            return self.xs[0]
        head, _, tail = name.partition("_")
        toks = tail.split("_") if tail else []
        # `h_11_v` style: the index pair may arrive as a separate token
        if toks and head + toks[0] in self.field_by_name:
            head = head + toks[0]
            toks = toks[1:]
        elif toks and head + toks[0] in self.params:
            head = head + toks[0]
            toks = toks[1:]
        else:
            head = self._field_alias.get(head, head)
        if head in self.field_by_name:
            sigma = [0] * self.n
            for pos in self._expand_tokens(toks):
                sigma[pos] += 1
            return self.jet(self.field_by_name[head], tuple(sigma))
        phead = self._param_alias.get(head, head)
        if phead in self.params:
            sigma = [0] * self.n
            for pos in self._expand_tokens(toks):
                sigma[pos] += 1
            return self.param(phead, tuple(sigma))
        raise ParseError(f"cannot resolve {name!r} in dimension {self.n}")

    def resolver(self):
        return self.resolve

    def h_matrix(self) -> List[List[Expr]]:
        """Symmetric matrix of the 0-jet transverse metric symbols."""
        m = self.n - 2
        return [
            [self.jet_expr(f"h{min(i, j)}{max(i, j)}", self.zero_index())
             for j in range(1, m + 1)]
            for i in range(1, m + 1)
        ]


# ---------------------------------------------------------------------------
# Equation manifolds
# ---------------------------------------------------------------------------

class EquationSystem:
    """The jet locus cut out by the Kundt / degenerate-Kundt conditions.

    Kinds: "jet" (no equations), "E" (h-jets with any v-derivative vanish),
    "ED" (additionally W-jets with >= 2 and H-jets with >= 3 v-derivatives
    vanish) and "EW" (E plus only the W conditions; used for the relative
    invariant on the locus where the v-quadratic part of W drops).
    All elimination sets are closed under total differentiation.
    """

    KINDS = ("jet", "E", "ED", "EW")

    def __init__(self, setting: Setting, kind: str):
        if kind not in self.KINDS:
            raise ValueError(f"unknown equation system {kind!r}")
        self.setting = setting
        self.kind = kind

    def __repr__(self) -> str:
        return f"EquationSystem(n={self.setting.n}, {self.kind})"

    @staticmethod
    def jet(n: int) -> "EquationSystem":
        return EquationSystem(Setting.get(n), "jet")

    @staticmethod
    def E(n: int) -> "EquationSystem":
        return EquationSystem(Setting.get(n), "E")

    @staticmethod
    def ED(n: int) -> "EquationSystem":
        return EquationSystem(Setting.get(n), "ED")

    @staticmethod
    def EW(n: int) -> "EquationSystem":
        return EquationSystem(Setting.get(n), "EW")

    def eliminates(self, field: Field, sigma: MultiIndex) -> bool:
        if self.kind == "jet":
            return False
        vcount = sigma[self.setting.v_pos]
        if field.kind == "h" and vcount >= 1:
            return True
        if self.kind == "E":
            return False
        if field.kind == "W" and vcount >= 2:
            return True
        if self.kind == "EW":
            return False
        return field.kind == "H" and vcount >= 3

    def is_eliminated_sym(self, s: Sym) -> bool:
        info = self.setting.jet_info(s)
        return info is not None and self.eliminates(*info)

    def dim(self, k: int) -> int:
        return self.setting.n + len(self.jet_coordinates(k))

    def jet_coordinates(self, k: int) -> List[Sym]:
        """Non-eliminated jet symbols of order <= k, in canonical order."""
        out: List[Sym] = []
        for order in range(k + 1):
            for field in self.setting.fields:
                for sigma in multiindices(self.setting.n, order):
                    if not self.eliminates(field, sigma):
                        out.append(self.setting.jet(field, sigma))
        return out


def restrict(e: Expr, eq: EquationSystem) -> Expr:
    """Set every eliminated jet symbol in e to zero."""
    dead = {
        i for i in e.support() if eq.is_eliminated_sym(_sym(i))
    }
    if not dead:
        return e
    try:
        return e.subs_zero(dead)
    except SingularSubstitution as exc:
        raise SingularOnEquation(str(exc)) from exc


def _sym(index: int) -> Sym:
    from kundt.symexpr import sym_by_index

    return sym_by_index(index)


def _sym_image(setting: Setting, eq: EquationSystem, s: Sym,
               dir_pos: int) -> Optional[Sym]:
    """Symbol obtained by one more derivative in the given direction, or
    None when the image vanishes (eliminated jets, killed parameters)."""
    if s.kind == Sym.JET:
        info = setting.jet_info(s)
        if info is None:
            return None
        field, sigma = info
        nsigma = list(sigma)
        nsigma[dir_pos] += 1
        tsigma = tuple(nsigma)
        if eq.eliminates(field, tsigma):
            return None
        return setting.jet(field, tsigma)
    if s.kind == Sym.PARAM:
        info = setting.param_info(s)
        if info is None:
            return None
        name, sigma = info
        if dir_pos == setting.v_pos or (name == "c" and dir_pos != 0):
            return None
        nsigma = list(sigma)
        nsigma[dir_pos] += 1
        return setting.param(name, tuple(nsigma))
    return None


def _poly_total(p, setting: Setting, eq: EquationSystem, direction: Sym,
                dir_pos: int):
    """Total derivative of a polynomial: a polynomial again, since the
    chain-rule images are single symbols (or zero)."""
    from kundt.symexpr import poly_add, poly_diff, poly_mul, poly_support, poly_sym

    out = poly_diff(p, direction.index)
    for idx in sorted(poly_support(p)):
        s = _sym(idx)
        if s.kind == Sym.BASE:
            continue
        img = _sym_image(setting, eq, s, dir_pos)
        if img is None:
            continue
        d = poly_diff(p, idx)
        if d:
            out = poly_add(out, poly_mul(d, poly_sym(img)))
    return out


def total_derivative(e: Expr, direction: Sym, eq: EquationSystem) -> Expr:
    """Total derivative D_mu restricted to the equation manifold.

    Acts as: explicit derivative in the base variable, plus the chain-rule
    sum over jet symbols (minting the next jet unless it is eliminated),
    plus the index shift on parameter jets (v kills a, b and c; x kills c).
    """
    from kundt.symexpr import MONO_ONE, poly_mul, poly_sub

    setting = eq.setting
    try:
        dir_pos = setting.base.index(direction)
    except ValueError:
        raise ValueError(f"{direction} is not a base variable of n={setting.n}")
    e = restrict(e, eq)
    dn = _poly_total(e.num, setting, eq, direction, dir_pos)
    if len(e.den) == 1 and MONO_ONE in e.den:
        return restrict(Expr(dn, dict(e.den), reduce=False), eq)
    dd = _poly_total(e.den, setting, eq, direction, dir_pos)
    num = poly_sub(poly_mul(dn, e.den), poly_mul(e.num, dd))
    out = Expr(num, poly_mul(e.den, e.den), reduce=False)
    return restrict(out, eq)


# ---------------------------------------------------------------------------
# Dimension formulas
# ---------------------------------------------------------------------------

def dim_jet(n: int, k: int) -> int:
    """dim J^k of the Kundt bundle: n + C(n,2)*C(n+k,n)."""
    return n + comb(n, 2) * comb(n + k, n)


def dim_E(n: int, k: int) -> int:
    """Dimension of the prolonged Kundt equation in J^k."""
    if k == 0:
        return n + comb(n, 2)
    return n + (n - 1) * comb(n + k, n) + comb(n - 1, 2) * comb(n + k - 1, n - 1)


def dim_ED(n: int, k: int) -> int:
    """Dimension of the prolonged degenerate-Kundt equation in J^k."""
    if k < 2:
        return dim_E(n, k)
    if k == 2:
        return (comb(n + 1, 2) + 1) * (comb(n, 2) + 1)
    return dim_E(n, k) - (n - 2) * comb(n + k - 2, n) - comb(n + k - 3, n)
