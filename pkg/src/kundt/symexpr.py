"""Exact multivariate rational-function arithmetic over Q.

A polynomial is a dict mapping sparse monomials to Fraction coefficients;
a monomial is a tuple of (symbol_index, exponent) pairs sorted by index.
An :class:`Expr` is a quotient of two such polynomials, kept with the
denominator integer-primitive and grlex-leading-positive.  Equality and
zero-testing are decided by cross multiplication, so they stay exact even
when a large numerator/denominator pair has not been gcd-reduced yet.

Symbols live in a global append-only registry.  The registry is shared by
all jet settings so that a display name resolves to exactly one symbol.
"""

from __future__ import annotations

import random
import re
import threading
from fractions import Fraction
from functools import cmp_to_key
from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple

__all__ = [
    "Sym",
    "Expr",
    "ExprError",
    "DivisionByZeroExpr",
    "SingularSubstitution",
    "ParseError",
    "symbol",
    "lookup",
    "parse",
    "is_zero",
]

F0 = Fraction(0)
F1 = Fraction(1)

Mono = Tuple[Tuple[int, int], ...]
PolyD = Dict[Mono, Fraction]

MONO_ONE: Mono = ()

# Ordinary arithmetic gcd-reduces results below this combined term count.
_AUTO_CANCEL_LIMIT = 120
# Forced cancellation (division, normalize) runs a full PRS gcd below this
# size; larger pairs run a cheap projection filter first (see _gcd_filter).
_FULL_CANCEL_LIMIT = 600


class ExprError(Exception):
    """Base class for exact-arithmetic errors."""


class DivisionByZeroExpr(ExprError):
    """Division by an expression that is identically zero."""


class SingularSubstitution(ExprError):
    """A substitution made some denominator identically zero."""


class ParseError(ExprError):
    """Malformed expression text."""


# ---------------------------------------------------------------------------
# Symbols
# ---------------------------------------------------------------------------

class Sym:
    """An indeterminate: a base coordinate, a jet coordinate or a group
    parameter jet.  Identity is the registry index; the display name is
    unique and round-trips through the parser."""

    __slots__ = ("index", "kind", "name")

    BASE = "base"
    JET = "jet"
    PARAM = "param"

    def __init__(self, index: int, kind: str, name: str):
        self.index = index
        self.kind = kind
        self.name = name

    def __repr__(self) -> str:
        return f"Sym({self.name!r})"

    def __str__(self) -> str:
        return self.name


class _Registry:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._by_name: Dict[str, Sym] = {}
        self._by_index: list[Sym] = []

    def sym(self, name: str, kind: str) -> Sym:
        with self._lock:
            s = self._by_name.get(name)
            if s is not None:
                if s.kind != kind:
                    raise ExprError(
                        f"symbol {name!r} already registered with kind {s.kind!r}"
                    )
                return s
            s = Sym(len(self._by_index), kind, name)
            self._by_index.append(s)
            self._by_name[name] = s
            return s

    def get(self, name: str) -> Optional[Sym]:
        return self._by_name.get(name)

    def by_index(self, index: int) -> Sym:
        return self._by_index[index]


_REGISTRY = _Registry()


def symbol(name: str, kind: str = Sym.BASE) -> Sym:
    """Register (or fetch) the symbol with this display name."""
    return _REGISTRY.sym(name, kind)


def lookup(name: str) -> Optional[Sym]:
    return _REGISTRY.get(name)


def sym_by_index(index: int) -> Sym:
    return _REGISTRY.by_index(index)


# ---------------------------------------------------------------------------
# Monomials
# ---------------------------------------------------------------------------

def mono_mul(a: Mono, b: Mono) -> Mono:
    if not a:
        return b
    if not b:
        return a
    out = []
    i = j = 0
    na, nb = len(a), len(b)
    while i < na and j < nb:
        ia, ea = a[i]
        ib, eb = b[j]
        if ia == ib:
            out.append((ia, ea + eb))
            i += 1
            j += 1
        elif ia < ib:
            out.append(a[i])
            i += 1
        else:
            out.append(b[j])
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return tuple(out)


def mono_div(a: Mono, b: Mono) -> Optional[Mono]:
    """a / b, or None when b does not divide a."""
    if not b:
        return a
    out = []
    db = dict(b)
    for idx, e in a:
        eb = db.pop(idx, 0)
        if eb > e:
            return None
        if e > eb:
            out.append((idx, e - eb))
    if db:
        return None
    return tuple(out)


def mono_gcd(a: Mono, b: Mono) -> Mono:
    if not a or not b:
        return MONO_ONE
    db = dict(b)
    out = []
    for idx, e in a:
        eb = db.get(idx, 0)
        if eb:
            out.append((idx, min(e, eb)))
    return tuple(out)


def mono_deg(m: Mono) -> int:
    return sum(e for _, e in m)


def _mono_cmp(a: Mono, b: Mono) -> int:
    """Graded lexicographic order; lower symbol index is more significant."""
    da, db = mono_deg(a), mono_deg(b)
    if da != db:
        return -1 if da < db else 1
    i = j = 0
    na, nb = len(a), len(b)
    while i < na and j < nb:
        ia, ea = a[i]
        ib, eb = b[j]
        if ia != ib:
            # the monomial carrying the more significant symbol is larger
            return 1 if ia < ib else -1
        if ea != eb:
            return 1 if ea > eb else -1
        i += 1
        j += 1
    if i < na:
        return 1
    if j < nb:
        return -1
    return 0


_mono_key = cmp_to_key(_mono_cmp)


# ---------------------------------------------------------------------------
# Polynomials
# ---------------------------------------------------------------------------

def poly_const(c: Fraction) -> PolyD:
    return {MONO_ONE: c} if c else {}


def poly_sym(s: Sym) -> PolyD:
    return {((s.index, 1),): F1}


def poly_add(a: PolyD, b: PolyD) -> PolyD:
    if not a:
        return dict(b)
    if not b:
        return dict(a)
    out = dict(a)
    for m, c in b.items():
        v = out.get(m)
        if v is None:
            out[m] = c
        else:
            v = v + c
            if v:
                out[m] = v
            else:
                del out[m]
    return out


def poly_neg(a: PolyD) -> PolyD:
    return {m: -c for m, c in a.items()}


def poly_sub(a: PolyD, b: PolyD) -> PolyD:
    if not b:
        return dict(a)
    out = dict(a)
    for m, c in b.items():
        v = out.get(m)
        if v is None:
            out[m] = -c
        else:
            v = v - c
            if v:
                out[m] = v
            else:
                del out[m]
    return out


def poly_scale(a: PolyD, c: Fraction) -> PolyD:
    if not c:
        return {}
    if c == F1:
        return dict(a)
    return {m: k * c for m, k in a.items()}


def poly_mul(a: PolyD, b: PolyD) -> PolyD:
    if not a or not b:
        return {}
    if len(a) > len(b):
        a, b = b, a
    if len(a) == 1:
        (ma, ca), = a.items()
        if ma == MONO_ONE:
            return poly_scale(b, ca)
        return {mono_mul(ma, m): ca * c for m, c in b.items()}
    out: PolyD = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            m = mono_mul(ma, mb)
            v = out.get(m)
            if v is None:
                out[m] = ca * cb
            else:
                v = v + ca * cb
                if v:
                    out[m] = v
                else:
                    del out[m]
    return out


def poly_pow(a: PolyD, k: int) -> PolyD:
    if k == 0:
        return poly_const(F1)
    out = dict(a)
    for _ in range(k - 1):
        out = poly_mul(out, a)
    return out


def poly_diff(a: PolyD, sym_index: int) -> PolyD:
    out: PolyD = {}
    for m, c in a.items():
        for pos, (idx, e) in enumerate(m):
            if idx == sym_index:
                if e == 1:
                    nm = m[:pos] + m[pos + 1:]
                else:
                    nm = m[:pos] + ((idx, e - 1),) + m[pos + 1:]
                v = out.get(nm)
                nc = c * e
                out[nm] = v + nc if v is not None else nc
                break
    return {m: c for m, c in out.items() if c}


def poly_support(a: PolyD) -> set[int]:
    out: set[int] = set()
    for m in a:
        for idx, _ in m:
            out.add(idx)
    return out


def poly_deg_in(a: PolyD, sym_index: int) -> int:
    d = 0
    for m in a:
        for idx, e in m:
            if idx == sym_index and e > d:
                d = e
    return d


def poly_total_deg(a: PolyD) -> int:
    return max((mono_deg(m) for m in a), default=0)


def poly_leading(a: PolyD) -> Tuple[Mono, Fraction]:
    m = max(a, key=_mono_key)
    return m, a[m]


def poly_mono_content(a: PolyD) -> Mono:
    """Greatest monomial dividing every term."""
    it = iter(a)
    g = next(it)
    for m in it:
        if not g:
            return MONO_ONE
        g = mono_gcd(g, m)
    return g


def poly_rat_content(a: PolyD) -> Fraction:
    """Positive rational c such that a/c has coprime integer coefficients."""
    num_gcd = 0
    den_lcm = 1
    for c in a.values():
        num_gcd = _igcd(num_gcd, c.numerator)
        den_lcm = den_lcm * c.denominator // _igcd(den_lcm, c.denominator)
    return Fraction(abs(num_gcd), den_lcm)


def _igcd(a: int, b: int) -> int:
    a, b = abs(a), abs(b)
    while b:
        a, b = b, a % b
    return a


def poly_eval(a: PolyD, values: Mapping[int, Fraction]) -> Fraction:
    """Evaluate with every support symbol present in `values`."""
    total = F0
    powers: Dict[Tuple[int, int], Fraction] = {}
    for m, c in a.items():
        term = c
        for idx, e in m:
            key = (idx, e)
            p = powers.get(key)
            if p is None:
                p = values[idx] ** e
                powers[key] = p
            term = term * p
        total += term
    return total


def poly_eval_float(a: PolyD, values: Mapping[int, float]) -> float:
    total = 0.0
    for m, c in a.items():
        term = float(c)
        for idx, e in m:
            term *= values[idx] ** e
        total += term
    return total


def poly_subs_partial(a: PolyD, values: Mapping[int, Fraction]) -> PolyD:
    """Substitute rational values for a subset of symbols."""
    out: PolyD = {}
    for m, c in a.items():
        rest = []
        coef = c
        for idx, e in m:
            v = values.get(idx)
            if v is None:
                rest.append((idx, e))
            else:
                coef = coef * v ** e
                if not coef:
                    break
        if not coef:
            continue
        nm = tuple(rest)
        prev = out.get(nm)
        coef = prev + coef if prev is not None else coef
        if coef:
            out[nm] = coef
        elif prev is not None:
            del out[nm]
    return out


def poly_kill_syms(a: PolyD, dead: frozenset[int] | set[int]) -> PolyD:
    """Substitute zero for every symbol in `dead`."""
    out: PolyD = {}
    for m, c in a.items():
        if any(idx in dead for idx, _ in m):
            continue
        out[m] = c
    return out


class _MaxMono:
    """Heap wrapper turning heapq into a max-heap under the grlex order."""

    __slots__ = ("m",)

    def __init__(self, m: Mono):
        self.m = m

    def __lt__(self, other: "_MaxMono") -> bool:
        return _mono_cmp(self.m, other.m) > 0


def _poly_exact_div(a: PolyD, b: PolyD) -> Optional[PolyD]:
    """a / b when the division is exact, else None."""
    import heapq

    if not b:
        raise ZeroDivisionError("polynomial division by zero")
    if not a:
        return {}
    if len(b) == 1:
        (mb, cb), = b.items()
        out: PolyD = {}
        for m, c in a.items():
            q = mono_div(m, mb)
            if q is None:
                return None
            out[q] = c / cb
        return out
    lm, lc = poly_leading(b)
    work = dict(a)
    heap = [_MaxMono(m) for m in work]
    heapq.heapify(heap)
    out: PolyD = {}
    while work:
        wm = heapq.heappop(heap).m
        wc = work.pop(wm, None)
        if wc is None:
            continue  # stale entry
        q = mono_div(wm, lm)
        if q is None:
            return None
        qc = wc / lc
        out[q] = qc
        # work -= (qc*q) * b  (the leading term is already removed)
        for m, c in b.items():
            if m == lm:
                continue
            mm = mono_mul(q, m)
            v = work.get(mm)
            nv = (v if v is not None else F0) - qc * c
            if nv:
                work[mm] = nv
                if v is None:
                    heapq.heappush(heap, _MaxMono(mm))
            elif v is not None:
                del work[mm]
    return out


# ---------------------------------------------------------------------------
# Multivariate gcd (primitive PRS with monomial/content fast paths)
# ---------------------------------------------------------------------------

def _poly_primitive(a: PolyD) -> PolyD:
    """Integer-primitive associate with positive grlex-leading coefficient."""
    if not a:
        return {}
    c = poly_rat_content(a)
    _, lead = poly_leading(a)
    if lead < 0:
        c = -c
    if c == F1:
        return dict(a)
    return {m: k / c for m, k in a.items()}


def _as_univariate(a: PolyD, x: int) -> Dict[int, PolyD]:
    out: Dict[int, PolyD] = {}
    for m, c in a.items():
        d = 0
        rest = []
        for idx, e in m:
            if idx == x:
                d = e
            else:
                rest.append((idx, e))
        out.setdefault(d, {})[tuple(rest)] = c
    return out


def _from_univariate(u: Dict[int, PolyD], x: int) -> PolyD:
    out: PolyD = {}
    for d, coeff in u.items():
        xm: Mono = ((x, d),) if d else MONO_ONE
        for m, c in coeff.items():
            out[mono_mul(m, xm)] = c
    return out


def _content_of_coeffs(coeffs: Iterable[PolyD], _depth: int = 0) -> PolyD:
    g: PolyD = {}
    for p in coeffs:
        g = poly_gcd(g, p, _depth)
        if len(g) == 1 and MONO_ONE in g:
            return poly_const(F1)
    return g


def _pseudo_rem(u: Dict[int, PolyD], v: Dict[int, PolyD]) -> Dict[int, PolyD]:
    """Pseudo-remainder of univariate polynomials with PolyD coefficients."""
    du = max(u)
    dv = max(v)
    lv = v[dv]
    r = {d: dict(p) for d, p in u.items()}
    while r and max(r) >= dv:
        dr = max(r)
        lr = r.pop(dr)
        # r = lv*r - lr * x^(dr-dv) * v   (with r's leading term removed)
        nr: Dict[int, PolyD] = {d: poly_mul(p, lv) for d, p in r.items()}
        for d, p in v.items():
            if d == dv:
                continue
            t = poly_mul(lr, p)
            dd = d + dr - dv
            nr[dd] = poly_sub(nr.get(dd, {}), t)
        r = {d: p for d, p in nr.items() if p}
    return r


# PRS is skipped when both inputs exceed this size (cancellation is then
# best-effort: correctness is unaffected, only canonicality of very large
# fractions).
_GCD_PRS_LIMIT = 320


_GCD_DEPTH_LIMIT = 6


def poly_gcd(a: PolyD, b: PolyD, _depth: int = 0) -> PolyD:
    """Gcd in Q[symbols], returned integer-primitive with positive leading
    coefficient.  Exact on small inputs; oversized or deeply recursive pairs
    report only their common monomial factor (an under-approximation that
    merely defers cancellation, never affects correctness)."""
    if not a:
        return _poly_primitive(b)
    if not b:
        return _poly_primitive(a)
    mca = poly_mono_content(a)
    mcb = poly_mono_content(b)
    common = mono_gcd(mca, mcb)
    if mca != MONO_ONE:
        a = {mono_div(m, mca): c for m, c in a.items()}
    if mcb != MONO_ONE:
        b = {mono_div(m, mcb): c for m, c in b.items()}
    gm: PolyD = {common: F1} if common else poly_const(F1)
    if len(a) == 1 or len(b) == 1:
        return _poly_primitive(gm)
    if a == b:
        return _poly_primitive(poly_mul(gm, a))
    if _depth > _GCD_DEPTH_LIMIT:
        return _poly_primitive(gm)
    if len(a) > _GCD_PRS_LIMIT and len(b) > _GCD_PRS_LIMIT:
        return _poly_primitive(gm)
    # the small side may divide the large side outright
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    if len(small) < len(big) and _poly_exact_div(big, small) is not None:
        return _poly_primitive(poly_mul(gm, small))
    # deeply multivariate pairs make the PRS content recursion explode;
    # fall back to kernel probing from the small side
    many_vars = len(poly_support(a) | poly_support(b)) > 8
    if many_vars:
        g = dict(gm)
        work_small, work_big = dict(small), dict(big)
        for f in _squarefree_kernels(small, _depth + 1):
            if len(f) == 1 and MONO_ONE in f:
                continue
            while True:
                qs = _poly_exact_div(work_small, f)
                if qs is None:
                    break
                qb = _poly_exact_div(work_big, f)
                if qb is None:
                    break
                work_small, work_big = qs, qb
                g = poly_mul(g, f)
        return _poly_primitive(g)
    sa, sb = poly_support(a), poly_support(b)
    shared = sa & sb
    if not shared:
        return _poly_primitive(gm)
    # main variable: smallest combined degree keeps the PRS short
    x = min(shared, key=lambda i: poly_deg_in(a, i) + poly_deg_in(b, i))
    ua, ub = _as_univariate(a, x), _as_univariate(b, x)
    ca = _content_of_coeffs(ua.values(), _depth + 1)
    cb = _content_of_coeffs(ub.values(), _depth + 1)
    cg = poly_gcd(ca, cb, _depth + 1)
    ppa = {d: _poly_exact_div(p, ca) for d, p in ua.items()}
    ppb = {d: _poly_exact_div(p, cb) for d, p in ub.items()}
    if max(ppa) < max(ppb):
        ppa, ppb = ppb, ppa
    while True:
        r = _pseudo_rem(ppa, ppb)
        if not r:
            g = _from_univariate(ppb, x)
            break
        if max(r) == 0:
            g = poly_const(F1)
            break
        rc = _content_of_coeffs(r.values(), _depth + 1)
        r = {d: _poly_exact_div(p, rc) for d, p in r.items()}
        ppa, ppb = ppb, r
    g = poly_mul(poly_mul(g, cg), gm)
    return _poly_primitive(g)


# ---------------------------------------------------------------------------
# Expr
# ---------------------------------------------------------------------------

def _canon_pair(num: PolyD, den: PolyD) -> Tuple[PolyD, PolyD]:
    """Monomial and rational-content canonicalization (cheap, always applied)."""
    if not num:
        return {}, poly_const(F1)
    mc = mono_gcd(poly_mono_content(num), poly_mono_content(den))
    if mc != MONO_ONE:
        num = {mono_div(m, mc): c for m, c in num.items()}
        den = {mono_div(m, mc): c for m, c in den.items()}
    c = poly_rat_content(den)
    _, lead = poly_leading(den)
    if lead < 0:
        c = -c
    if c != F1:
        den = {m: k / c for m, k in den.items()}
        num = {m: k / c for m, k in num.items()}
    return num, den


class Expr:
    """Immutable exact rational function of registered symbols."""

    __slots__ = ("num", "den", "_support")

    def __init__(self, num: PolyD, den: Optional[PolyD] = None, *, reduce: bool = True):
        if den is None:
            den = poly_const(F1)
        if not den:
            raise DivisionByZeroExpr("zero denominator")
        if reduce:
            num, den = _cancel(num, den, force=False)
        else:
            num, den = _canon_pair(num, den)
        self.num = num
        self.den = den
        self._support: Optional[frozenset[int]] = None

    # -- constructors ------------------------------------------------------

    @staticmethod
    def from_int(k: int | Fraction) -> "Expr":
        return Expr(poly_const(Fraction(k)))

    @staticmethod
    def from_sym(s: Sym) -> "Expr":
        return Expr(poly_sym(s))

    # -- predicates --------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.num

    def is_constant(self) -> bool:
        return (not self.num or (len(self.num) == 1 and MONO_ONE in self.num)) and \
            len(self.den) == 1 and MONO_ONE in self.den

    def as_fraction(self) -> Fraction:
        if not self.is_constant():
            raise ExprError("not a constant expression")
        if not self.num:
            return F0
        return self.num[MONO_ONE] / self.den[MONO_ONE]

    def support(self) -> frozenset[int]:
        if self._support is None:
            self._support = frozenset(poly_support(self.num) | poly_support(self.den))
        return self._support

    def support_syms(self) -> list[Sym]:
        return [sym_by_index(i) for i in sorted(self.support())]

    def max_jet_order(self, order_of: Callable[[Sym], Optional[int]]) -> int:
        best = 0
        for i in self.support():
            o = order_of(sym_by_index(i))
            if o is not None and o > best:
                best = o
        return best

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other: "Expr | int | Fraction") -> "Expr":
        other = _coerce(other)
        if self.den == other.den:
            return Expr(poly_add(self.num, other.num), dict(self.den), reduce=False)
        da, db = _den_split(self.den, other.den)
        num = poly_add(poly_mul(self.num, db), poly_mul(other.num, da))
        return Expr(num, poly_mul(self.den, db), reduce=False)

    __radd__ = __add__

    def __neg__(self) -> "Expr":
        return Expr(poly_neg(self.num), dict(self.den), reduce=False)

    def __sub__(self, other: "Expr | int | Fraction") -> "Expr":
        other = _coerce(other)
        if self.den == other.den:
            return Expr(poly_sub(self.num, other.num), dict(self.den), reduce=False)
        da, db = _den_split(self.den, other.den)
        num = poly_sub(poly_mul(self.num, db), poly_mul(other.num, da))
        return Expr(num, poly_mul(self.den, db), reduce=False)

    def __rsub__(self, other: "Expr | int | Fraction") -> "Expr":
        return _coerce(other).__sub__(self)

    def __mul__(self, other: "Expr | int | Fraction") -> "Expr":
        other = _coerce(other)
        return Expr(poly_mul(self.num, other.num), poly_mul(self.den, other.den),
                    reduce=False)

    __rmul__ = __mul__

    def __truediv__(self, other: "Expr | int | Fraction") -> "Expr":
        other = _coerce(other)
        if not other.num:
            raise DivisionByZeroExpr("division by identically zero expression")
        e = Expr(poly_mul(self.num, other.den), poly_mul(self.den, other.num),
                 reduce=False)
        return e.cancelled()

    def __rtruediv__(self, other: "Expr | int | Fraction") -> "Expr":
        return _coerce(other).__truediv__(self)

    def __pow__(self, k: int) -> "Expr":
        if not isinstance(k, int):
            raise ExprError("exponents must be integers")
        if k == 0:
            return Expr.from_int(1)
        if k < 0:
            if not self.num:
                raise DivisionByZeroExpr("negative power of zero expression")
            return Expr(poly_pow(self.den, -k), poly_pow(self.num, -k), reduce=False)
        return Expr(poly_pow(self.num, k), poly_pow(self.den, k), reduce=False)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, (int, Fraction)):
            other = Expr.from_int(other)
        if not isinstance(other, Expr):
            return NotImplemented
        if self.num == other.num and self.den == other.den:
            return True
        return not poly_sub(poly_mul(self.num, other.den),
                            poly_mul(other.num, self.den))

    __hash__ = None  # exprs are compared by value; not suitable as dict keys

    # -- calculus ------------------------------------------------------------

    def diff(self, s: Sym) -> "Expr":
        dn = poly_diff(self.num, s.index)
        dd = poly_diff(self.den, s.index)
        if not dd:
            return Expr(dn, dict(self.den), reduce=False)
        num = poly_sub(poly_mul(dn, self.den), poly_mul(self.num, dd))
        return Expr(num, poly_mul(self.den, self.den), reduce=False)

    def substitute(self, mapping: Mapping[Sym, "Expr | int | Fraction"]) -> "Expr":
        by_index = {s.index: _coerce(v) for s, v in mapping.items()}
        if not (self.support() & set(by_index)):
            return self
        num = _poly_subs_expr(self.num, by_index)
        den = _poly_subs_expr(self.den, by_index)
        if den.is_zero():
            raise SingularSubstitution("substitution vanishes on a denominator")
        return (num / den) if not num.is_zero() else Expr.from_int(0)

    def subs_zero(self, dead: frozenset[int] | set[int]) -> "Expr":
        if not (self.support() & set(dead)):
            return self
        den = poly_kill_syms(self.den, dead)
        if not den:
            raise SingularSubstitution("denominator vanishes identically at zero")
        return Expr(poly_kill_syms(self.num, dead), den, reduce=False)

    def eval_exact(self, values: Mapping[Sym, Fraction]) -> Fraction:
        by_index = {s.index: Fraction(v) for s, v in values.items()}
        d = poly_eval(self.den, by_index)
        if not d:
            raise ZeroDivisionError("denominator vanishes at the point")
        return poly_eval(self.num, by_index) / d

    def eval_float(self, values: Mapping[Sym, float]) -> Tuple[float, float]:
        """(value, denominator value); caller decides singular-locus policy."""
        by_index = {s.index: float(v) for s, v in values.items()}
        d = poly_eval_float(self.den, by_index)
        n = poly_eval_float(self.num, by_index)
        return (n / d if d != 0.0 else float("nan")), d

    # -- normalization -------------------------------------------------------

    def cancelled(self) -> "Expr":
        num, den = _cancel(self.num, self.den, force=True)
        e = Expr.__new__(Expr)
        e.num, e.den = num, den
        e._support = None
        return e

    def reduced_by(self, factors: Iterable["Expr"]) -> "Expr":
        """Divide numerator and denominator by the given candidate factor
        polynomials as often as both divisions stay exact.  Useful when the
        construction knows which factors its denominators are built from."""
        num, den = self.num, self.den
        for f in factors:
            fp = f.num if isinstance(f, Expr) else f
            if not fp or (len(fp) == 1 and MONO_ONE in fp):
                continue
            while True:
                qd = _poly_exact_div(den, fp)
                if qd is None:
                    break
                qn = _poly_exact_div(num, fp)
                if qn is None:
                    break
                num, den = qn, qd
        num, den = _canon_pair(num, den)
        e = Expr.__new__(Expr)
        e.num, e.den = num, den
        e._support = None
        return e

    def normalize(self) -> "Expr":
        return self.cancelled()

    def __str__(self) -> str:
        return expr_str(self)

    def __repr__(self) -> str:
        return f"Expr({expr_str(self)})"


def _coerce(v: "Expr | int | Fraction") -> Expr:
    if isinstance(v, Expr):
        return v
    return Expr.from_int(v)


def _den_split(da: PolyD, db: PolyD) -> Tuple[PolyD, PolyD]:
    """Cofactors (da/g, db/g) for the denominator gcd, so that sums use the
    lcm of structured denominators instead of their product.  Falls back to
    the plain product when both denominators are large."""
    if (len(da) == 1 or len(db) == 1) or (
            len(da) <= _SMALL_DEN_LIMIT and len(db) <= _SMALL_DEN_LIMIT):
        g = poly_gcd(da, db)
    else:
        g = poly_const(F1)
    if len(g) == 1 and MONO_ONE in g:
        return da, db
    qa = _poly_exact_div(da, g)
    qb = _poly_exact_div(db, g)
    if qa is None or qb is None:
        return da, db
    return qa, qb


# denominators below this term count are cancelled by square-free probing
_SMALL_DEN_LIMIT = 40


def _squarefree_kernels(p: PolyD, _depth: int = 0) -> list[PolyD]:
    """Square-free kernels of a small polynomial: repeatedly strip the gcd
    with all partial derivatives, collecting the square-free parts."""
    kernels: list[PolyD] = []
    work = dict(p)
    for _ in range(64):
        if len(work) == 1:
            break
        g = work
        for x in sorted(poly_support(work)):
            d = poly_diff(work, x)
            if d:
                g = poly_gcd(g, d, _depth + 1)
            if len(g) == 1 and MONO_ONE in g:
                break
        if len(g) == 1 and MONO_ONE in g:
            kernels.append(_poly_primitive(work))
            break
        kernel = _poly_exact_div(work, g)
        if kernel is None or (len(kernel) == 1 and MONO_ONE in kernel):
            kernels.append(_poly_primitive(work))
            break
        kernels.append(_poly_primitive(kernel))
        work = g
    return kernels


def _cancel_by_probe(num: PolyD, den: PolyD) -> Tuple[PolyD, PolyD]:
    """Cancel common factors by dividing out square-free kernels of a small
    denominator.  Exact divisions only; never slower than linear passes."""
    for f in _squarefree_kernels(den):
        if len(f) == 1 and MONO_ONE in f:
            continue
        while True:
            qd = _poly_exact_div(den, f)
            if qd is None:
                break
            qn = _poly_exact_div(num, f)
            if qn is None:
                break
            num, den = qn, qd
            if len(den) == 1 and MONO_ONE in den:
                return _canon_pair(num, den)
    return _canon_pair(num, den)


def _cancel(num: PolyD, den: PolyD, *, force: bool) -> Tuple[PolyD, PolyD]:
    num, den = _canon_pair(num, den)
    if not num or (len(den) == 1 and MONO_ONE in den):
        return num, den
    size = len(num) + len(den)
    if not force and size > _AUTO_CANCEL_LIMIT:
        return num, den
    if size > _FULL_CANCEL_LIMIT:
        if len(den) <= _SMALL_DEN_LIMIT:
            return _cancel_by_probe(num, den)
        if len(num) <= _SMALL_DEN_LIMIT:
            den, num = _cancel_by_probe(den, num)
            return _canon_pair(num, den)
        return num, den  # two large polynomials: leave uncancelled
    g = poly_gcd(num, den)
    if g and not (len(g) == 1 and g.get(MONO_ONE) == F1):
        qn = _poly_exact_div(num, g)
        qd = _poly_exact_div(den, g)
        if qn is not None and qd is not None:
            num, den = _canon_pair(qn, qd)
    return num, den


def _poly_subs_expr(a: PolyD, by_index: Mapping[int, Expr]) -> Expr:
    total = Expr.from_int(0)
    powers: Dict[Tuple[int, int], Expr] = {}
    for m, c in a.items():
        term = Expr.from_int(c)
        for idx, e in m:
            rep = by_index.get(idx)
            if rep is None:
                term = term * Expr(poly_sym(sym_by_index(idx)) if e == 1
                                   else {((idx, e),): F1}, reduce=False)
            else:
                key = (idx, e)
                p = powers.get(key)
                if p is None:
                    p = rep ** e
                    powers[key] = p
                term = term * p
        total = total + term
    return total


# ---------------------------------------------------------------------------
# Zero testing
# ---------------------------------------------------------------------------

def is_zero(e: Expr, mode: str = "exact", trials: int = 8, seed: int = 0) -> bool:
    """Exact or Schwartz-Zippel zero test.

    Probabilistic mode evaluates the numerator at uniform integer points in
    [1, 10^6]; a nonzero value proves nonzero, while `trials` zero values
    give a wrong answer with probability at most (deg/10^6)^trials.
    """
    if mode == "exact":
        return e.is_zero()
    if mode != "probabilistic":
        raise ValueError(f"unknown is_zero mode {mode!r}")
    if not e.num:
        return True
    rng = random.Random(seed)
    idxs = sorted(poly_support(e.num) | poly_support(e.den))
    for _ in range(trials):
        for _retry in range(64):
            vals = {i: Fraction(rng.randint(1, 10 ** 6)) for i in idxs}
            if poly_eval(e.den, vals):
                break
        else:
            return e.is_zero()  # fall back to the exact test
        if poly_eval(e.num, vals):
            return False
    return True


def arith(lhs: Expr, op: str, rhs: "Expr | int") -> Expr:
    """Named arithmetic entry point: op is one of '+', '-', '*', '/', '^'."""
    if op == "+":
        return lhs + rhs
    if op == "-":
        return lhs - rhs
    if op == "*":
        return lhs * rhs
    if op == "/":
        return lhs / rhs
    if op == "^":
        if isinstance(rhs, Expr):
            rhs = int(rhs.as_fraction())
        return lhs ** rhs
    raise ValueError(f"unknown operation {op!r}")


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

def _mono_str(m: Mono) -> str:
    parts = []
    for idx, e in m:
        name = sym_by_index(idx).name
        parts.append(name if e == 1 else f"{name}^{e}")
    return "*".join(parts)


def poly_str(a: PolyD) -> str:
    if not a:
        return "0"
    monos = sorted(a, key=_mono_key, reverse=True)
    chunks = []
    for m in monos:
        c = a[m]
        sign = "-" if c < 0 else "+"
        c = abs(c)
        if m == MONO_ONE:
            body = str(c)
        elif c == 1:
            body = _mono_str(m)
        else:
            body = f"{c}*{_mono_str(m)}"
        chunks.append((sign, body))
    first_sign, first_body = chunks[0]
    out = ("-" if first_sign == "-" else "") + first_body
    for sign, body in chunks[1:]:
        out += f" {sign} {body}"
    return out


def _needs_parens(a: PolyD) -> bool:
    if len(a) > 1:
        return True
    (m, c), = a.items()
    if c < 0:
        return True
    # a single positive monomial like 3*u^2 is fine bare only if unambiguous
    return not (c == 1 or m == MONO_ONE)


def expr_str(e: Expr) -> str:
    if len(e.den) == 1 and e.den.get(MONO_ONE) == F1:
        return poly_str(e.num)
    ns = poly_str(e.num)
    ds = poly_str(e.den)
    if _needs_parens(e.num):
        ns = f"({ns})"
    if _needs_parens(e.den):
        ds = f"({ds})"
    return f"{ns}/{ds}"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"\s*(?:(\d+)|([A-Za-z][A-Za-z0-9_]*)|(\*\*|[-+*/^()]))")

Resolver = Callable[[str], "Expr | Sym"]


def _default_resolver(name: str) -> Sym:
    s = lookup(name)
    if s is None:
        raise ParseError(f"unknown symbol {name!r}")
    return s


def _tokenize(text: str) -> list[Tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip():
                raise ParseError(f"bad character at position {pos}: {text[pos:pos+8]!r}")
            break
        pos = m.end()
        if m.group(1):
            tokens.append(("int", m.group(1)))
        elif m.group(2):
            tokens.append(("name", m.group(2)))
        else:
            op = m.group(3)
            tokens.append(("op", "^" if op == "**" else op))
    tokens.append(("end", ""))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Tuple[str, str]], resolver: Resolver):
        self.tokens = tokens
        self.pos = 0
        self.resolver = resolver

    def peek(self) -> Tuple[str, str]:
        return self.tokens[self.pos]

    def next(self) -> Tuple[str, str]:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def expect_op(self, op: str) -> None:
        kind, val = self.next()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}, got {val!r}")

    def parse_expr(self) -> Expr:
        e = self.parse_term()
        while True:
            kind, val = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                rhs = self.parse_term()
                e = e + rhs if val == "+" else e - rhs
            else:
                return e

    def parse_term(self) -> Expr:
        e = self.parse_factor()
        while True:
            kind, val = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                rhs = self.parse_factor()
                e = e * rhs if val == "*" else e / rhs
            else:
                return e

    def parse_factor(self) -> Expr:
        kind, val = self.peek()
        sign = 1
        while kind == "op" and val in "+-":
            self.next()
            if val == "-":
                sign = -sign
            kind, val = self.peek()
        e = self.parse_power()
        return e if sign > 0 else -e

    def parse_power(self) -> Expr:
        base = self.parse_atom()
        kind, val = self.peek()
        if kind == "op" and val == "^":
            self.next()
            k = self.parse_int_exponent()
            return base ** k
        return base

    def parse_int_exponent(self) -> int:
        kind, val = self.next()
        sign = 1
        while kind == "op" and val in "+-":
            if val == "-":
                sign = -sign
            kind, val = self.next()
        if kind != "int":
            raise ParseError(f"expected integer exponent, got {val!r}")
        return sign * int(val)

    def parse_atom(self) -> Expr:
        kind, val = self.next()
        if kind == "int":
            return Expr.from_int(int(val))
        if kind == "name":
            resolved = self.resolver(val)
            if isinstance(resolved, Sym):
                return Expr.from_sym(resolved)
            return resolved
        if kind == "op" and val == "(":
            e = self.parse_expr()
            self.expect_op(")")
            return e
        raise ParseError(f"unexpected token {val!r}")


def parse(text: str, resolver: Optional[Resolver] = None) -> Expr:
    """Parse expression text; identifiers resolve through `resolver`."""
    p = _Parser(_tokenize(text), resolver or _default_resolver)
    e = p.parse_expr()
    kind, val = p.peek()
    if kind != "end":
        raise ParseError(f"trailing input at token {val!r}")
    return e
