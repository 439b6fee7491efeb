"""The shape-preserving pseudogroup of the Kundt ansatz.

The infinitesimal generators are

    xi = c(u) d_u + a^i(u,x) d_{x^i} + (b(u,x) - c'(u) v) d_v,

lifted to the metric-function bundle and prolonged to jets.  Parameters are
either fully symbolic (jets of a, b, c become registered symbols, so a Lie
derivative is a polynomial identity in them) or concrete expressions in the
base variables (used for bracket/cocycle checks on sampled generators).

Orbit dimensions are computed by exact rank: every monomial parameter field
is prolonged, evaluated at a random rational point of the equation manifold
over the reference 0-jet (flat transverse metric, vanishing W and H), and
the stacked coefficient matrix is reduced fraction-free.
"""

from __future__ import annotations

import random
import threading
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, factorial
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from kundt import jetspace
from kundt.jetspace import (
    EquationSystem,
    MultiIndex,
    Setting,
    multiindices,
    multiindices_upto,
    restrict,
    total_derivative,
)
from kundt.linalg import rank_fractions
from kundt.symexpr import (
    Expr,
    F0,
    F1,
    MONO_ONE,
    Sym,
    poly_diff,
    poly_mul,
    poly_subs_partial,
    poly_support,
    sym_by_index,
    symbol,
)

__all__ = [
    "SymbolicParams",
    "ConcreteParams",
    "LiftedField",
    "ProlongedField",
    "prolonged",
    "lie_derivative",
    "is_absolute_invariant",
    "is_relative_invariant",
    "NotRelative",
    "orbit_dimension",
    "orbit_dimension_closed",
    "stabilizer_dimension_1jet",
    "hilbert",
    "hilbert_closed",
    "poincare_series",
    "CountReport",
    "appendix_quotient_check",
    "param_bracket",
    "DegeneratePointExhausted",
]


class DegeneratePointExhausted(Exception):
    """No admissible random point found within the retry budget."""


class _NotRelativeType:
    _instance: Optional["_NotRelativeType"] = None

    def __new__(cls) -> "_NotRelativeType":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NotRelative"


NotRelative = _NotRelativeType()


# ---------------------------------------------------------------------------
# Parameter specifications
# ---------------------------------------------------------------------------

class SymbolicParams:
    """Fully symbolic parameter jets."""

    def __init__(self, setting: Setting):
        self.setting = setting
        self.symbolic = True

    def jet(self, name: str, sigma: MultiIndex) -> Expr:
        return self.setting.param_expr(name, sigma)


class ConcreteParams:
    """Parameters given as explicit rational expressions in the base
    variables: c in u, the others in (u, x)."""

    def __init__(self, setting: Setting, values: Mapping[str, Expr]):
        self.setting = setting
        self.symbolic = False
        self.values = dict(values)
        for name in setting.params:
            if name not in self.values:
                raise ValueError(f"missing parameter {name!r}")

    def jet(self, name: str, sigma: MultiIndex) -> Expr:
        e = self.values[name]
        for pos, count in enumerate(sigma):
            for _ in range(count):
                e = e.diff(self.setting.base[pos])
        return e


# ---------------------------------------------------------------------------
# Lift and prolongation
# ---------------------------------------------------------------------------

@dataclass
class LiftedField:
    """The lift of a pseudogroup generator to the metric-function bundle."""

    setting: Setting
    params: SymbolicParams | ConcreteParams
    base: Dict[int, Expr] = field(default_factory=dict)   # base sym index -> Expr
    fiber: Dict[str, Expr] = field(default_factory=dict)  # field name -> Expr


def lifted_field(setting: Setting,
                 params: SymbolicParams | ConcreteParams | None = None) -> LiftedField:
    """Build the order-0 lift from the parameter functions."""
    if params is None:
        params = SymbolicParams(setting)
    n = setting.n
    m = n - 2
    z = setting.zero_index()
    e_u = setting.unit(0)

    def a(i: int, sigma: MultiIndex) -> Expr:
        return params.jet(f"a{i}", sigma)

    def b(sigma: MultiIndex) -> Expr:
        return params.jet("b", sigma)

    def c(order: int) -> Expr:
        return params.jet("c", tuple(order if k == 0 else 0 for k in range(n)))

    lf = LiftedField(setting, params)
    v_expr = Expr.from_sym(setting.v)
    lf.base[setting.u.index] = c(0)
    for i in range(1, m + 1):
        lf.base[setting.xs[i - 1].index] = a(i, z)
    lf.base[setting.v.index] = b(z) - c(1) * v_expr

    H = setting.jet_expr("H", z)
    W = {i: setting.jet_expr(f"W{i}", z) for i in range(1, m + 1)}

    def h(i: int, j: int) -> Expr:
        return setting.jet_expr(f"h{min(i, j)}{max(i, j)}", z)

    # d_H coefficient
    acc = 2 * c(1) * H - c(2) * v_expr + b(e_u)
    for j in range(1, m + 1):
        acc = acc + a(j, e_u) * W[j]
    lf.fiber["H"] = -acc

    # d_{W_i} coefficients
    for i in range(1, m + 1):
        e_i = setting.unit(i)
        acc = c(1) * W[i] + b(e_i)
        for j in range(1, m + 1):
            acc = acc + a(j, e_i) * W[j] + 2 * a(j, e_u) * h(i, j)
        lf.fiber[f"W{i}"] = -acc

    # d_{h_ij} coefficients, one per unordered pair
    for i in range(1, m + 1):
        for j in range(i, m + 1):
            acc = Expr.from_int(0)
            for l in range(1, m + 1):
                acc = acc + a(l, setting.unit(i)) * h(l, j) \
                          + a(l, setting.unit(j)) * h(l, i)
            lf.fiber[f"h{i}{j}"] = -acc
    return lf


class ProlongedField:
    """Prolongation of a lifted field to jets of order <= `order` on an
    equation manifold.  Coefficients are stored for eliminated jet symbols
    too, so tangency of the flow to the equations is checkable."""

    def __init__(self, eq: EquationSystem,
                 params: SymbolicParams | ConcreteParams | None = None):
        self.eq = eq
        self.setting = eq.setting
        self.lift = lifted_field(self.setting, params)
        self.order = 0
        self._coeff: Dict[Tuple[str, MultiIndex], Expr] = {}
        for f in self.setting.fields:
            self._coeff[(f.name, self.setting.zero_index())] = restrict(
                self.lift.fiber[f.name], eq)
        # total derivatives of the base coefficients, [direction][component]
        self._dxi: List[Dict[int, Expr]] = []
        for d in self.setting.base:
            row = {
                comp: total_derivative(e, d, eq)
                for comp, e in self.lift.base.items()
            }
            self._dxi.append(row)

    def extend_to(self, k: int) -> "ProlongedField":
        setting = self.setting
        while self.order < k:
            m = self.order + 1
            for f in setting.fields:
                for sigma in multiindices(setting.n, m):
                    pos = next(p for p, cnt in enumerate(sigma) if cnt > 0)
                    parent = list(sigma)
                    parent[pos] -= 1
                    parent_t = tuple(parent)
                    phi = total_derivative(
                        self._coeff[(f.name, parent_t)], setting.base[pos], self.eq)
                    for comp_pos in range(setting.n):
                        d = self._dxi[pos].get(setting.base[comp_pos].index)
                        if d is None or d.is_zero():
                            continue
                        nsigma = list(parent_t)
                        nsigma[comp_pos] += 1
                        nt = tuple(nsigma)
                        if self.eq.eliminates(f, nt):
                            continue
                        phi = phi - d * setting.jet_expr(f, nt)
                    self._coeff[(f.name, sigma)] = restrict(phi, self.eq)
            self.order = m
        return self

    def coefficient(self, s: Sym) -> Expr:
        """Coefficient of d/ds for a base or jet symbol."""
        if s.kind == Sym.BASE:
            return self.lift.base[s.index]
        info = self.setting.jet_info(s)
        if info is None:
            raise KeyError(f"{s} is not a jet symbol")
        f, sigma = info
        if sum(sigma) > self.order:
            self.extend_to(sum(sigma))
        return self._coeff[(f.name, sigma)]


_PROLONGED_CACHE: Dict[Tuple[int, str], ProlongedField] = {}
_PROLONGED_LOCK = threading.Lock()


def prolonged(eq: EquationSystem, k: int,
              params: SymbolicParams | ConcreteParams | None = None) -> ProlongedField:
    """Prolonged generic generator; symbolic fields are cached per (n, eq)."""
    if params is not None and not params.symbolic:
        return ProlongedField(eq, params).extend_to(k)
    key = (eq.setting.n, eq.kind)
    with _PROLONGED_LOCK:
        pf = _PROLONGED_CACHE.get(key)
        if pf is None:
            pf = ProlongedField(eq)
            _PROLONGED_CACHE[key] = pf
    pf.extend_to(k)
    return pf


# ---------------------------------------------------------------------------
# Lie derivatives and invariance
# ---------------------------------------------------------------------------

def lie_derivative(f: Expr, eq: EquationSystem,
                   params: SymbolicParams | ConcreteParams | None = None) -> Expr:
    """L_xi f for the generic (or given) generator, restricted to eq."""
    setting = eq.setting
    f = restrict(f, eq)
    k = f.max_jet_order(setting.jet_order)
    pf = prolonged(eq, k, params)

    def apply_poly(p) -> Expr:
        total = Expr.from_int(0)
        for idx in sorted(poly_support(p)):
            s = sym_by_index(idx)
            if s.kind == Sym.BASE and s.index in pf.lift.base:
                coeff = pf.lift.base[s.index]
            elif s.kind == Sym.JET and setting.jet_info(s) is not None:
                coeff = pf.coefficient(s)
            else:
                continue
            if coeff.is_zero():
                continue
            total = total + coeff * Expr(poly_diff(p, idx), reduce=False)
        return total

    num, den = f.num, f.den
    l_num = apply_poly(num)
    if len(den) == 1 and MONO_ONE in den:
        return restrict(l_num, eq)
    l_den = apply_poly(den)
    den_e = Expr(den, reduce=False)
    num_e = Expr(num, reduce=False)
    combined = l_num * den_e - num_e * l_den
    out = Expr(combined.num, poly_mul(poly_mul(den, den), combined.den),
               reduce=False)
    return restrict(out, eq)


def is_absolute_invariant(f: Expr, eq: EquationSystem) -> bool:
    """True iff the generic Lie derivative vanishes identically."""
    return lie_derivative(f, eq).is_zero()


def is_relative_invariant(f: Expr, eq: EquationSystem):
    """Multiplier mu with L_xi f = mu * f on eq, or NotRelative.

    mu must come out polynomial in all symbols (and it is automatically
    linear in the parameter jets); absolute invariants return mu = 0.
    """
    from kundt.symexpr import _poly_exact_div, poly_mul

    fr = restrict(f, eq)
    if fr.is_zero():
        raise ValueError("f vanishes identically on the equation")
    lf = lie_derivative(f, eq)
    if lf.is_zero():
        return Expr.from_int(0)
    num = poly_mul(lf.num, fr.den)
    den = poly_mul(lf.den, fr.num)
    q = _poly_exact_div(num, den)
    if q is None:
        return NotRelative
    return Expr(q)


# ---------------------------------------------------------------------------
# Random points on equation manifolds
# ---------------------------------------------------------------------------

def random_point(eq: EquationSystem, k: int, rng: random.Random,
                 over_reference: bool = False,
                 max_tries: int = 50) -> Dict[Sym, Fraction]:
    """Random rational point of eq^k.

    With over_reference=True the base coordinates and 0-jet are pinned to
    the transitive-action reference point (u=x=v=0, h=delta, W=H=0) and only
    jets of order 1..k are randomized.  Otherwise all coordinates are random
    with the transverse metric resampled until positive definite.
    """
    setting = eq.setting

    def rand() -> Fraction:
        return Fraction(rng.randint(-9, 9), rng.choice((1, 2, 3)))

    for _ in range(max_tries):
        point: Dict[Sym, Fraction] = {}
        if over_reference:
            for s in setting.base:
                point[s] = F0
        else:
            for s in setting.base:
                point[s] = rand()
        ok = True
        for s in eq.jet_coordinates(k):
            f, sigma = setting.jet_info(s)
            if sum(sigma) == 0 and over_reference:
                if f.kind == "h":
                    point[s] = F1 if f.i == f.j else F0
                else:
                    point[s] = F0
            else:
                point[s] = rand()
        if not over_reference:
            m = setting.n - 2
            z = setting.zero_index()
            hmat = [
                [point[setting.jet(f"h{min(i, j)}{max(i, j)}", z)]
                 for j in range(1, m + 1)]
                for i in range(1, m + 1)
            ]
            ok = _positive_definite(hmat)
        if ok:
            return point
    raise DegeneratePointExhausted(
        f"no admissible point of {eq} at order {k} in {max_tries} tries")


def _positive_definite(mat: List[List[Fraction]]) -> bool:
    n = len(mat)
    for lead in range(1, n + 1):
        sub = [row[:lead] for row in mat[:lead]]
        if _det_fractions(sub) <= 0:
            return False
    return True


def _det_fractions(mat: List[List[Fraction]]) -> Fraction:
    n = len(mat)
    if n == 1:
        return mat[0][0]
    if n == 2:
        return mat[0][0] * mat[1][1] - mat[0][1] * mat[1][0]
    total = F0
    sign = 1
    for j in range(n):
        minor = [[row[k] for k in range(n) if k != j] for row in mat[1:]]
        total += sign * mat[0][j] * _det_fractions(minor)
        sign = -sign
    return total


# ---------------------------------------------------------------------------
# Orbit dimensions by exact rank
# ---------------------------------------------------------------------------

def _param_jet_list(setting: Setting, k: int) -> List[Tuple[str, MultiIndex]]:
    """Parameter jets entering the order-k prolongation: a, b to order k+1,
    c to order k+2 (indices padded with a zero v-slot)."""
    out: List[Tuple[str, MultiIndex]] = []
    n = setting.n
    for name in [f"a{i}" for i in range(1, n - 1)] + ["b"]:
        for sigma in multiindices_upto(n - 1, k + 1):
            out.append((name, sigma + (0,)))
    for p in range(k + 3):
        out.append(("c", tuple(p if q == 0 else 0 for q in range(n))))
    return out


# The monomial basis u^p x^q for a^i, b (degree <= k+1) and u^p for c
# (degree <= k+2) is indexed by the same exponent set as the jets.
_param_monomials = _param_jet_list


def _jet_of_monomial(exponents: MultiIndex, tau: MultiIndex,
                     at: Sequence[Fraction]) -> Fraction:
    """d^tau (prod base_i^exponents_i) evaluated at `at`."""
    val = F1
    for e, t, x in zip(exponents, tau, at):
        if t > e:
            return F0
        coef = Fraction(factorial(e), factorial(e - t))
        val *= coef * x ** (e - t) if e > t else coef
        if not val:
            return F0
    return val


def _evaluation_matrix(eq: EquationSystem, k: int, point: Dict[Sym, Fraction],
                       pjets: List[Tuple[str, MultiIndex]]) -> List[List[Fraction]]:
    """Columns of per-parameter-jet evaluated field components.

    Row order: base coordinates then jet coordinates; column j collects the
    coefficient of parameter jet j, using that prolonged coefficients are
    linear homogeneous in the parameter jets.
    """
    setting = eq.setting
    pf = prolonged(eq, k)
    pj_index = {setting.param(name, sigma).index: col
                for col, (name, sigma) in enumerate(pjets)}
    by_index = {s.index: v for s, v in point.items()}
    coords = list(setting.base) + eq.jet_coordinates(k)
    rows: List[List[Fraction]] = []
    for s in coords:
        expr = pf.coefficient(s)
        reduced = poly_subs_partial(expr.num, by_index)
        den = expr.den
        scale = F1 / den[MONO_ONE] if MONO_ONE in den and len(den) == 1 else None
        if scale is None:
            raise AssertionError("prolonged coefficients must be polynomial")
        row = [F0] * len(pjets)
        for mono, c in reduced.items():
            if len(mono) != 1 or mono[0][1] != 1:
                raise AssertionError("prolonged coefficients must be linear "
                                     "homogeneous in parameter jets")
            col = pj_index.get(mono[0][0])
            if col is None:
                raise AssertionError(f"unexpected parameter jet in {s}")
            row[col] = c * scale
        rows.append(row)
    return rows


def _orbit_rank_at(eq: EquationSystem, k: int, point: Dict[Sym, Fraction]) -> int:
    setting = eq.setting
    pjets = _param_jet_list(setting, k)
    A = _evaluation_matrix(eq, k, point, pjets)  # coords x pjets
    monos = _param_monomials(setting, k)
    base_at = [point[s] for s in setting.base[:-1]]  # (u, x) values
    ncoords = len(A)
    rows: List[List[Fraction]] = []
    for name, expo in monos:
        ptau = [
            (col, _jet_of_monomial(expo[:-1], tau[:-1], base_at))
            for col, (pname, tau) in enumerate(pjets)
            if pname == name
        ]
        row = [F0] * ncoords
        for col, val in ptau:
            if not val:
                continue
            for r in range(ncoords):
                a = A[r][col]
                if a:
                    row[r] += a * val
        rows.append(row)
    return rank_fractions(rows)


_ORBIT_MEMO: Dict[Tuple[str, int, int, int, int], int] = {}


def orbit_dimension(eq: EquationSystem, k: int, seed: int = 0,
                    samples: int = 3) -> int:
    """Dimension of a generic orbit in eq^k over the reference 0-jet,
    as the maximal exact rank over `samples` random points."""
    key = (eq.kind, eq.setting.n, k, seed, samples)
    memo = _ORBIT_MEMO.get(key)
    if memo is not None:
        return memo
    rng = random.Random(seed)
    ranks = []
    for _ in range(samples):
        point = random_point(eq, k, rng, over_reference=True)
        ranks.append(_orbit_rank_at(eq, k, point))
    if len(set(ranks)) > 1:
        warnings.warn(
            f"rank varied across sample points for {eq} k={k}: {ranks}; "
            "using the maximum", stacklevel=2)
    result = max(ranks)
    _ORBIT_MEMO[key] = result
    return result


def orbit_dimension_closed(n: int, k: int) -> int:
    """Closed-form generic orbit dimension (k >= 2); k=1 has codimension 1
    and k=0 is the transitive 0-jet action."""
    if k == 0:
        return n + comb(n, 2)
    if k == 1:
        return jetspace.dim_E(n, 1) - 1
    return (n - 1) * comb(n + k, n - 1) + k + 2


def stabilizer_dimension_1jet(n: int, seed: int = 0) -> int:
    """Kernel dimension of the evaluation of 1-jet-relevant parameter jets
    (a, b to order 2; c to order 2) at a generic point of E^1 over the
    reference 0-jet.  The c-jet of order 3 pairs only with v and is checked
    to act trivially there before being excluded."""
    setting = Setting.get(n)
    eq = EquationSystem.E(n)
    rng = random.Random(seed)
    point = random_point(eq, 1, rng, over_reference=True)

    pjets_all = _param_jet_list(setting, 1)
    relevant = [(name, sigma) for name, sigma in pjets_all if sum(sigma) <= 2]
    A = _evaluation_matrix(eq, 1, point, pjets_all)
    col_of = {ps: i for i, ps in enumerate(pjets_all)}
    c3 = ("c", tuple(3 if q == 0 else 0 for q in range(n)))
    if any(row[col_of[c3]] for row in A):
        raise AssertionError("top c-jet should act trivially over v=0")
    cols = [col_of[ps] for ps in relevant]
    rows = [[row[c] for c in cols] for row in A]
    return len(cols) - rank_fractions(rows)


# ---------------------------------------------------------------------------
# Hilbert and Poincare functions
# ---------------------------------------------------------------------------

@dataclass
class CountReport:
    n: int
    k: int
    kind: str
    orbit_dim: Optional[int]
    codim: int
    hilbert: int
    closed_form: int
    match: bool


def hilbert_closed(kind: str, n: int, k: int) -> int:
    """Closed-form Hilbert function of the invariant algebra."""
    if k == 0:
        return 0
    if k == 1:
        return 1
    if kind == "E":
        if k == 2:
            return (n ** 4 - 4 * n ** 3 + 11 * n ** 2 + 16 * n - 72) // 12
        return ((n - 1) * (comb(n + k - 1, n - 1) - comb(n + k - 1, n - 2))
                + comb(n - 1, 2) * comb(n + k - 2, n - 2) - 1)
    if kind == "ED":
        if k == 2:
            return ((n - 1) * (comb(n + 2, 2) - comb(n + 2, 3))
                    + comb(n - 1, 2) * comb(n + 1, 2) - 3)
        return ((n - 1) * (comb(n + k - 1, n - 1) - comb(n + k - 1, n - 2))
                + comb(n - 1, 2) * comb(n + k - 2, n - 2)
                - (n - 2) * comb(n + k - 3, n - 1) - comb(n + k - 4, n - 1) - 1)
    raise ValueError(f"no Hilbert closed form for kind {kind!r}")


def _codim_closed(kind: str, n: int, k: int) -> int:
    return sum(hilbert_closed(kind, n, j) for j in range(k + 1))


def hilbert(eq: EquationSystem, kmax: int, seed: int = 0,
            use_ranks: bool = True) -> List[CountReport]:
    """Hilbert function H_k = s_k - s_{k-1} for k <= kmax.

    With use_ranks the codimensions s_k come from exact rank computations;
    otherwise the closed forms are tabulated (used for n=5 by default).
    """
    n = eq.setting.n
    dim = jetspace.dim_E if eq.kind == "E" else jetspace.dim_ED
    reports: List[CountReport] = []
    prev_s = 0
    for k in range(kmax + 1):
        closed = hilbert_closed(eq.kind, n, k)
        if use_ranks:
            od = orbit_dimension(eq, k, seed=seed)
            s_k = dim(n, k) - od
            h_k = s_k - prev_s
            prev_s = s_k
            reports.append(CountReport(n, k, eq.kind, od, s_k, h_k, closed,
                                       h_k == closed))
        else:
            s_k = _codim_closed(eq.kind, n, k)
            reports.append(CountReport(n, k, eq.kind, None, s_k, closed,
                                       closed, True))
    return reports


class MismatchReport(Exception):
    """Computed and closed-form Hilbert values disagree."""

    def __init__(self, mismatches: List[CountReport]):
        self.mismatches = mismatches
        detail = ", ".join(f"(n={r.n}, k={r.k}, {r.kind}): {r.hilbert} != "
                           f"{r.closed_form}" for r in mismatches)
        super().__init__(f"Hilbert mismatch: {detail}")


def check_hilbert(reports: List[CountReport]) -> None:
    bad = [r for r in reports if not r.match]
    if bad:
        raise MismatchReport(bad)


# numerator coefficients (ascending powers of z) and inverse power of (1-z)
_POINCARE_TABLE: Dict[Tuple[str, int], Tuple[List[int], int]] = {
    ("E", 3): ([0, 1, 1, 4, -6, 2], 3),
    ("E", 4): ([0, 1, 10, -6, -10, 11, -3], 4),
    ("E", 5): ([0, 1, 29, -41, 0, 33, -23, 5], 5),
    ("ED", 3): ([0, 1, 1, 4, -2], 2),
    ("ED", 4): ([0, 1, 9, 2, -8, 3], 3),
    ("ED", 5): ([0, 1, 27, -15, -15, 18, -5], 4),
}


def poincare_series(kind: str, n: int, kmax: int) -> List[int]:
    """Power-series coefficients of the rational Poincare function."""
    numer, d = _POINCARE_TABLE[(kind, n)]
    out = []
    for k in range(kmax + 1):
        coef = 0
        for j, nj in enumerate(numer):
            if j > k:
                break
            coef += nj * comb(k - j + d - 1, d - 1)
        out.append(coef)
    return out


# ---------------------------------------------------------------------------
# Bracket of generators; cocycle residual
# ---------------------------------------------------------------------------

def param_bracket(setting: Setting, p: ConcreteParams,
                  q: ConcreteParams) -> ConcreteParams:
    """Parameters of [xi_p, xi_q]; the bracket stays in the pseudogroup."""
    u = setting.u
    m = setting.n - 2

    def ddx(e: Expr, i: int) -> Expr:
        return e.diff(setting.xs[i - 1])

    pc, qc = p.values["c"], q.values["c"]
    pb, qb = p.values["b"], q.values["b"]
    out: Dict[str, Expr] = {}
    out["c"] = pc * qc.diff(u) - qc * pc.diff(u)
    for i in range(1, m + 1):
        pa, qa = p.values[f"a{i}"], q.values[f"a{i}"]
        acc = pc * qa.diff(u) - qc * pa.diff(u)
        for j in range(1, m + 1):
            acc = acc + p.values[f"a{j}"] * ddx(qa, j) \
                      - q.values[f"a{j}"] * ddx(pa, j)
        out[f"a{i}"] = acc
    acc = pc * qb.diff(u) - qc * pb.diff(u) - pb * qc.diff(u) + qb * pc.diff(u)
    for j in range(1, m + 1):
        acc = acc + p.values[f"a{j}"] * ddx(qb, j) - q.values[f"a{j}"] * ddx(pb, j)
    out["b"] = acc
    return ConcreteParams(setting, out)


def bind_multiplier(mu: Expr, params: ConcreteParams) -> Expr:
    """Evaluate a symbolic multiplier on a concrete generator."""
    setting = params.setting
    mapping: Dict[Sym, Expr] = {}
    for idx in mu.support():
        s = sym_by_index(idx)
        info = setting.param_info(s)
        if info is not None:
            mapping[s] = params.jet(*info)
    return mu.substitute(mapping)


def cocycle_residual(mu: Expr, eq: EquationSystem, p: ConcreteParams,
                     q: ConcreteParams) -> Expr:
    """L_xi omega(eta) - L_eta omega(xi) - omega([xi, eta]) for omega = mu."""
    setting = eq.setting
    w_q = bind_multiplier(mu, q)
    w_p = bind_multiplier(mu, p)
    term1 = lie_derivative(w_q, eq, params=p)
    term2 = lie_derivative(w_p, eq, params=q)
    w_br = bind_multiplier(mu, param_bracket(setting, p, q))
    return restrict(term1 - term2 - w_br, eq)


# ---------------------------------------------------------------------------
# Quotient analysis of the 2-jet fiber (n = 3)
# ---------------------------------------------------------------------------

@dataclass
class AppendixReport:
    bracket_ok: bool
    v2_kernel_ok: bool
    weights_ok: bool
    translations_span_ok: bool
    translations_project_to_zero: bool
    scaling_direction_is_v1: bool
    second_direction_structure_ok: bool
    affine_components_matching_printed: int  # out of 6, for the 2nd direction

    @property
    def ok(self) -> bool:
        return all((self.bracket_ok, self.v2_kernel_ok, self.weights_ok,
                    self.translations_span_ok,
                    self.translations_project_to_zero,
                    self.scaling_direction_is_v1,
                    self.second_direction_structure_ok))


def _quotient_fields() -> Tuple[List[Sym], List[Expr], List[Expr]]:
    zs = [symbol(f"z{i}", Sym.BASE) for i in range(1, 7)]
    z = [Expr.from_sym(s) for s in zs]
    zero = Expr.from_int(0)
    v1 = [2 * z[0], z[1], zero, -z[3], z[4], zero]
    v2 = [z[1], z[2], z[3], zero, z[2] - z[5], zero]
    return zs, v1, v2


def appendix_quotient_check(seed: int = 0) -> AppendixReport:
    """Verify the solvable quotient action on the 2-jet fiber for n=3.

    Direct checks on the printed vector fields V1, V2 in the quotient
    coordinates z1..z6 (bracket, kernel and weights) are combined with a
    reconstruction from the prolonged action: the stabilizer of a generic
    1-jet acts on the 2-jet fiber by nine translations plus a 2-dimensional
    affine part, and the affine part projected to the slice coordinates
    must be an invertible combination of V1 and V2.
    """
    zs, v1, v2 = _quotient_fields()
    z = [Expr.from_sym(s) for s in zs]

    def apply(vf: List[Expr], f: Expr) -> Expr:
        total = Expr.from_int(0)
        for s, comp in zip(zs, vf):
            total = total + comp * f.diff(s)
        return total

    # [V1, V2] = -V2
    bracket_ok = all(
        (apply(v1, v2[i]) - apply(v2, v1[i]) + v2[i]).is_zero()
        for i in range(6)
    )

    # kernel of V2 on linear forms is spanned by z4, z6
    coeff_rows = [[v2[i].diff(s).as_fraction() for s in zs] for i in range(6)]
    v2_kernel_ok = (
        apply(v2, z[3]).is_zero()
        and apply(v2, z[5]).is_zero()
        and rank_fractions(coeff_rows) == 4
    )

    weights_ok = (
        (apply(v1, z[3]) + z[3]).is_zero()      # weight -1
        and apply(v1, z[5]).is_zero()           # absolute invariant
        and apply(v2, z[5]).is_zero()
    )

    trans_ok, proj_ok, is_v1, structure_ok, n_match = \
        _quotient_from_prolongation(zs)
    return AppendixReport(bracket_ok, v2_kernel_ok, weights_ok,
                          trans_ok, proj_ok, is_v1, structure_ok, n_match)


# the nine translation directions printed for the 2-jet fiber transversal
_TRANSLATION_COORDS = ["h11_x1_x1", "h11_u_x1", "h11_u_u", "H_x1_x1",
                       "H_u_x1", "H_u_u", "H_u_v", "W1_x1_x1", "W1_u_u"]
_Z_COORDS = ["W1_u_x1", "W1_u_v", "W1_x1_v", "W1_v_v", "H_x1_v", "H_v_v"]


def _printed_translations() -> List[Dict[str, Fraction]]:
    basis = [
        {"h11_x1_x1": F1},
        {"h11_u_x1": F1},
        {"h11_u_u": F1, "W1_u_x1": F1},
        {"H_x1_x1": F1, "W1_u_x1": F1},
        {"H_u_x1": F1},
        {"H_u_u": F1},
        {"H_u_v": F1},
        {"W1_x1_x1": F1},
        {"W1_u_u": F1},
    ]
    return basis


def _quotient_from_prolongation(zs: List[Sym]) -> Tuple[bool, bool, bool, bool, int]:
    setting = Setting.get(3)
    eq = EquationSystem.E(3)
    pf = prolonged(eq, 2)
    z = [Expr.from_sym(s) for s in zs]
    w0 = Expr.from_sym(symbol("w0", Sym.BASE))
    zero = Expr.from_int(0)
    half = Expr.from_int(Fraction(1, 2))

    def J(name: str) -> Sym:
        return setting.resolve(name)

    a_u = setting.param_expr("a1", (1, 0, 0))
    c_u = setting.param_expr("c", (1, 0, 0))

    # stabilizer of the generic 1-jet: constrained parameter jets
    param_sub: Dict[Sym, Expr] = {
        setting.param("a1", (0, 0, 0)): zero,
        setting.param("b", (0, 0, 0)): zero,
        setting.param("c", (0, 0, 0)): zero,
        setting.param("a1", (0, 1, 0)): zero,
        setting.param("b", (1, 0, 0)): zero,
        setting.param("b", (0, 1, 0)): -2 * a_u,
        setting.param("a1", (2, 0, 0)): zero,
        setting.param("a1", (1, 1, 0)): zero,
        setting.param("a1", (0, 2, 0)): zero,
        setting.param("b", (2, 0, 0)): zero,
        setting.param("b", (1, 1, 0)): zero,
        setting.param("b", (0, 2, 0)): 2 * w0 * a_u,
        setting.param("c", (2, 0, 0)): w0 * a_u,
    }
    # fiber point: generic 1-jet with W_v = w0, slice coordinates in z
    jet_sub: Dict[Sym, Expr] = {s: zero for s in setting.base}
    jet_sub[J("h")] = Expr.from_int(1)
    jet_sub[J("W")] = zero
    jet_sub[J("H")] = zero
    for name in ("h_u", "h_x", "W_u", "W_x", "H_u", "H_x", "H_v"):
        jet_sub[J(name)] = zero
    jet_sub[J("W_v")] = w0
    for name in _TRANSLATION_COORDS:
        jet_sub[J(name)] = zero
    jet_sub[J("W_ux")] = -2 * z[0]
    jet_sub[J("W_uv")] = -z[1]
    jet_sub[J("W_xv")] = z[2]
    jet_sub[J("W_vv")] = half * z[3]
    jet_sub[J("H_xv")] = -half * z[1] - Expr.from_int(Fraction(3, 2)) * z[4]
    jet_sub[J("H_vv")] = Expr.from_int(Fraction(3, 4)) * z[5] - half * z[2]

    # the constrained parameters must actually stabilize the 1-jet point
    low_order = [setting.u, setting.xs[0], setting.v]
    for name in ("H", "W", "h", "h_u", "h_x", "W_u", "W_x", "W_v",
                 "H_u", "H_x", "H_v"):
        low = pf.coefficient(J(name)).substitute(param_sub).substitute(jet_sub)
        if not low.is_zero():
            return (False, False, False, False, 0)
    for s in low_order:
        low = pf.lift.base[s.index].substitute(param_sub).substitute(jet_sub)
        if not low.is_zero():
            return (False, False, False, False, 0)

    coords = _TRANSLATION_COORDS + _Z_COORDS
    values: Dict[str, Expr] = {}
    for name in coords:
        phi = pf.coefficient(J(name))
        values[name] = phi.substitute(param_sub).substitute(jet_sub)

    free_translations = [
        setting.param("a1", (3, 0, 0)), setting.param("a1", (2, 1, 0)),
        setting.param("a1", (1, 2, 0)), setting.param("a1", (0, 3, 0)),
        setting.param("b", (3, 0, 0)), setting.param("b", (2, 1, 0)),
        setting.param("b", (1, 2, 0)), setting.param("b", (0, 3, 0)),
        setting.param("c", (3, 0, 0)),
    ]
    c4 = setting.param("c", (4, 0, 0))

    def z_projection(vec: Dict[str, Expr]) -> List[Expr]:
        """Slice components after subtracting the translation flow."""
        w_ux = vec["W1_u_x1"] - vec["h11_u_u"] - vec["H_x1_x1"]
        comp = {
            "W1_u_x1": w_ux,
            "W1_u_v": vec["W1_u_v"],
            "W1_x1_v": vec["W1_x1_v"],
            "W1_v_v": vec["W1_v_v"],
            "H_x1_v": vec["H_x1_v"],
            "H_v_v": vec["H_v_v"],
        }
        third = Expr.from_int(Fraction(1, 3))
        return [
            -half * comp["W1_u_x1"],
            -comp["W1_u_v"],
            comp["W1_x1_v"],
            2 * comp["W1_v_v"],
            third * comp["W1_u_v"] - 2 * third * comp["H_x1_v"],
            2 * third * comp["W1_x1_v"] + 4 * third * comp["H_v_v"],
        ]

    # translations: constant fields spanning exactly the printed nine
    trans_rows: List[List[Fraction]] = []
    proj_zero = True
    for p in free_translations:
        vec = {name: values[name].diff(p) for name in coords}
        row: List[Fraction] = []
        constant = True
        for name in coords:
            comp = vec[name]
            if not comp.is_constant():
                constant = False
                break
            row.append(comp.as_fraction())
        if not constant:
            return (False, False, False, False, 0)
        trans_rows.append(row)
        for comp in z_projection(vec):
            if not comp.is_zero():
                proj_zero = False
    # top c-jet acts trivially on the fiber over v=0
    for name in coords:
        if not values[name].diff(c4).is_zero():
            return (False, False, False, False, 0)

    printed = _printed_translations()
    printed_rows = [
        [b.get(name, F0) for name in coords] for b in printed
    ]
    r_mine = rank_fractions(trans_rows)
    r_printed = rank_fractions(printed_rows)
    r_joint = rank_fractions(trans_rows + printed_rows)
    trans_ok = r_mine == 9 and r_printed == 9 and r_joint == 9

    # affine part, projected to the slice coordinates
    zs_set, v1, v2 = _quotient_fields()
    z = [Expr.from_sym(s) for s in zs]

    def direction_field(d: Expr) -> List[Expr]:
        (idx,) = d.support()
        s = sym_by_index(idx)
        vec = {name: values[name].diff(s) for name in coords}
        return z_projection(vec)

    cdir = direction_field(c_u)
    adir = direction_field(a_u)
    # the u-rescaling direction reproduces V1 on the nose (up to generator
    # orientation)
    is_v1 = all((cdir[i] + v1[i]).is_zero() for i in range(6))

    def apply_to(vf: List[Expr], f: Expr) -> Expr:
        total = Expr.from_int(0)
        for s, comp in zip(zs, vf):
            total = total + comp * f.diff(s)
        return total

    # the second direction carries the structure stated for V2: it is killed
    # by neither rescaling, satisfies [V1, A] = -A, annihilates z4 and z6,
    # and its kernel on linear forms is exactly 2-dimensional
    bracket_rel = all(
        (apply_to(v1, adir[i]) - apply_to(adir, v1[i]) + adir[i]).is_zero()
        for i in range(6)
    )
    kills = apply_to(adir, z[3]).is_zero() and apply_to(adir, z[5]).is_zero()
    amat = [[adir[i].diff(s).as_fraction() for s in zs] for i in range(6)]
    structure_ok = (bracket_rel and kills and rank_fractions(amat) == 4
                    and any(not c.is_zero() for c in adir))
    n_match = sum(1 for i in range(6) if (adir[i] - v2[i]).is_zero())
    return (trans_ok, proj_zero, is_v1, structure_ok, n_match)
