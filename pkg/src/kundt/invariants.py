"""Catalog of the explicit invariants and invariant frames, with checks.

Printed formulas live as text fixtures under ``kundt/catalog`` (one file per
entry) in the shared expression grammar, so each body can be diffed against
its source by eye.  Entries whose construction is algorithmic (the scalar
curvature of the transverse metric, dualized differentials, the frame
completion in the degenerate 4D case and its structure function) are built
in code.

Verification is exact: invariance means the generic Lie derivative is the
zero polynomial identity; a derivation is invariant when its coefficients
satisfy L(A^mu) = A^nu D_nu(xi^mu) for the generic generator.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from kundt.curvature import (
    HorizontalDerivation,
    covariant_derivative,
    inverse_metric,
    pair,
    scalar_curvature_h,
)
from kundt.jetspace import EquationSystem, Setting, restrict, total_derivative
from kundt.linalg import LinearSolveSingular, det_expr, inverse_expr, rank_fractions, solve_expr
from kundt.pseudogroup import DegeneratePointExhausted, lie_derivative, random_point
from kundt.symexpr import Expr, ParseError, Sym, parse, sym_by_index

__all__ = [
    "CatalogEntry",
    "UnknownEntry",
    "VerificationFailed",
    "SingularFrame",
    "build",
    "catalog_names",
    "equation_for",
    "verify_invariance",
    "is_invariant_derivation",
    "horizontal_independence",
    "jacobian_rank",
    "bracket",
    "structure_functions",
    "tresse",
    "coframe_metric",
]


class UnknownEntry(Exception):
    """No catalog entry with this (name, n, class)."""


class VerificationFailed(Exception):
    """An entry required to be invariant has a nonzero Lie residual."""

    def __init__(self, message: str, residual: Optional[Expr] = None):
        super().__init__(message)
        self.residual = residual


class SingularFrame(Exception):
    """A frame operation hit an identically singular coefficient matrix."""


@dataclass
class CatalogEntry:
    name: str
    n: int
    cls: str  # "general" or "degenerate"
    kind: str  # "invariant", "derivation" or "helper"
    order: int
    body: "Expr | HorizontalDerivation"


def equation_for(n: int, cls: str) -> EquationSystem:
    if cls == "general":
        return EquationSystem.E(n)
    if cls == "degenerate":
        return EquationSystem.ED(n)
    raise ValueError(f"unknown class {cls!r}")


# ---------------------------------------------------------------------------
# Fixture loading
# ---------------------------------------------------------------------------

_FIXTURES: Dict[Tuple[str, int, str], Dict[str, str]] = {}
_BODIES: Dict[Tuple[str, int, str], "Expr | HorizontalDerivation"] = {}


def _load_fixtures() -> Dict[Tuple[str, int, str], Dict[str, str]]:
    if _FIXTURES:
        return _FIXTURES
    folder = resources.files("kundt").joinpath("catalog")
    for item in sorted(folder.iterdir(), key=lambda p: p.name):
        if not item.name.endswith(".txt"):
            continue
        fields: Dict[str, str] = {}
        for line in item.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
        key3 = (fields["name"], int(fields["n"]), fields["class"])
        _FIXTURES[key3] = fields
    return _FIXTURES


def _entry_resolver(n: int, cls: str):
    """Resolve jet names first, then other catalog entries of the same
    (n, class) by inlining their bodies."""
    setting = Setting.get(n)

    def resolve(name: str):
        try:
            return setting.resolve(name)
        except ParseError:
            pass
        body = _body(name, n, cls)
        if isinstance(body, HorizontalDerivation):
            raise ParseError(f"{name!r} is a derivation, not an expression")
        return body

    return resolve


def _body(name: str, n: int, cls: str) -> "Expr | HorizontalDerivation":
    key = (name, n, cls)
    cached = _BODIES.get(key)
    if cached is not None:
        return cached
    builder = _BUILDERS.get(key)
    if builder is not None:
        value = builder()
        _BODIES[key] = value
        return value
    fx = _load_fixtures().get(key)
    if fx is None:
        raise UnknownEntry(f"no catalog entry {name!r} for n={n}, class={cls}")
    resolver = _entry_resolver(n, cls)
    text = fx["body"]
    if fx["kind"] == "derivation":
        comps = [parse(chunk, resolver) for chunk in text.split(",")]
        value = HorizontalDerivation.from_vector(equation_for(n, cls), comps)
    else:
        value = parse(text, resolver)
    _BODIES[key] = value
    return value


def catalog_names(n: Optional[int] = None,
                  cls: Optional[str] = None) -> List[Tuple[str, int, str, str, int]]:
    """(name, n, class, kind, order) for all entries, fixtures and built."""
    rows = []
    for (name, en, ecls), fx in _load_fixtures().items():
        rows.append((name, en, ecls, fx["kind"], int(fx["order"])))
    for (name, en, ecls), meta in _BUILDER_META.items():
        rows.append((name, en, ecls, meta[0], meta[1]))
    rows.sort(key=lambda r: (r[1], r[2], r[4], r[0]))
    return [r for r in rows
            if (n is None or r[1] == n) and (cls is None or r[2] == cls)]


def build(name: str, n: int, cls: str) -> CatalogEntry:
    """Construct a catalog entry; raises UnknownEntry when absent."""
    body = _body(name, n, cls)
    fx = _load_fixtures().get((name, n, cls))
    if fx is not None:
        kind, order = fx["kind"], int(fx["order"])
    else:
        kind, order = _BUILDER_META[(name, n, cls)]
    return CatalogEntry(name, n, cls, kind, order, body)


# ---------------------------------------------------------------------------
# Constructed entries
# ---------------------------------------------------------------------------

def _grad(eq: EquationSystem, f: Expr) -> HorizontalDerivation:
    """g-dual of the horizontal differential of f."""
    setting = eq.setting
    ginv = inverse_metric(eq)
    d = [total_derivative(f, s, eq) for s in setting.base]
    comps = []
    for mu in range(setting.n):
        acc = Expr.from_int(0)
        for nu in range(setting.n):
            if ginv[mu][nu].is_zero() or d[nu].is_zero():
                continue
            acc = acc + ginv[mu][nu] * d[nu]
        comps.append(acc)
    return HorizontalDerivation.from_vector(eq, comps)


def _build_Sh4() -> Expr:
    return scalar_curvature_h(4)


def _build_nabla4_general4() -> HorizontalDerivation:
    eq = EquationSystem.E(4)
    i1 = _body("I1", 4, "general")
    return _grad(eq, i1)


def _degenerate4_frame() -> List[HorizontalDerivation]:
    """Frame on the degenerate 4D equation: a derivation proportional to D_v
    from the u-direction combination of the three invariant differentials,
    the two dualized differentials, and the unique null completion."""
    eq = EquationSystem.ED(4)
    setting = eq.setting
    i1 = _body("I1", 4, "degenerate")
    i2a = _body("I2a", 4, "degenerate")
    i2b = _body("I2b", 4, "degenerate")
    d = {
        name: [total_derivative(f, s, eq) for s in setting.base]
        for name, f in (("I1", i1), ("I2a", i2a), ("I2b", i2b))
    }
    # v-components vanish on the degenerate equation
    for name in d:
        if not d[name][3].is_zero():
            raise VerificationFailed(f"D_v({name}) != 0 on the degenerate equation")
    mat = [[d["I2a"][1], d["I2b"][1]], [d["I2a"][2], d["I2b"][2]]]
    det2 = det_expr(mat)
    if det2.is_zero():
        raise SingularFrame("transverse differentials are dependent")
    # omega_u as one determinant ratio (Cramer combined), keeping fractions
    # a single small quotient instead of a three-way sum
    det3 = det_expr([
        [d["I1"][0], d["I2a"][0], d["I2b"][0]],
        [d["I1"][1], d["I2a"][1], d["I2b"][1]],
        [d["I1"][2], d["I2a"][2], d["I2b"][2]],
    ])
    omega_u = (det3 / det2).cancelled()
    if omega_u.is_zero():
        raise SingularFrame("u-component of the slice covector vanishes")
    zero = Expr.from_int(0)
    nabla1 = HorizontalDerivation.from_vector(eq, [zero, zero, zero, 2 * omega_u])
    nabla2 = _normalized(_grad(eq, i2a))
    nabla3 = _normalized(_grad(eq, i2b))

    # nabla4: pairings (1, 0, 0) against nabla1..3 fix an affine line whose
    # direction is the null nabla1; the null condition picks a unique point.
    # Row sparsity does most of the work: g(nabla1, .) is proportional to du,
    # so the u-component of the particular solution is 1/omega_u, and the
    # remaining x-components come from a 2x2 system.
    from kundt.curvature import metric_components

    gm = metric_components(eq)
    rows = []
    for nab in (nabla2, nabla3):
        vec = nab.as_vector()
        rows.append([
            _cap(sum((gm[mu][nu] * vec[nu] for nu in range(4)),
                     Expr.from_int(0)))
            for mu in range(4)
        ])
    pu = 1 / omega_u
    mat2 = [[rows[i][1], rows[i][2]] for i in range(2)]
    rhs2 = [-rows[i][0] * pu for i in range(2)]
    # factors the denominators are known to be built from, for cheap
    # exact-division cancellation of the Cramer output
    kernels = [omega_u, 1 / omega_u, det2, 1 / det2, det3, 1 / det3]
    for row in rows:
        for entry in row:
            kernels.append(entry)
            if not entry.is_zero():
                kernels.append(1 / entry)
    kernels.append(Expr(dict(_dethpoly(setting)), reduce=False))
    try:
        px1, px2 = solve_expr(mat2, rhs2)
    except LinearSolveSingular as exc:
        raise SingularFrame(str(exc)) from exc
    px1 = px1.reduced_by(kernels)
    px2 = px2.reduced_by(kernels)
    p = HorizontalDerivation.from_vector(eq, [pu, px1, px2, zero])
    norm = pair(p, p).reduced_by(kernels)
    nabla4 = p.plus(nabla1.scale(norm / Expr.from_int(-2)))
    return [nabla1, nabla2, nabla3,
            HorizontalDerivation(
                eq, {i: a.reduced_by(kernels) for i, a in nabla4.coeffs.items()})]


def _dethpoly(setting) -> dict:
    h = setting.h_matrix()
    return det_expr(h).num


_CAP_LIMIT = 6000


def _cap(e: Expr) -> Expr:
    """Cancel when affordable; otherwise keep the exact uncancelled form."""
    if len(e.num) + len(e.den) <= _CAP_LIMIT:
        return e.cancelled()
    return e


def _normalized(D: HorizontalDerivation) -> HorizontalDerivation:
    return HorizontalDerivation(
        D.eq, {i: _cap(a) for i, a in D.coeffs.items()})


_DEG4_FRAME: List[HorizontalDerivation] = []


def _deg4_frame() -> List[HorizontalDerivation]:
    if not _DEG4_FRAME:
        _DEG4_FRAME.extend(_degenerate4_frame())
    return _DEG4_FRAME


def _build_c231_degenerate4() -> Expr:
    """Coefficient of nabla1 in [nabla2, nabla3] for the degenerate frame.

    Uses the frame's sparsity: nabla2, nabla3 have no u-component, so the
    bracket has none either and the nabla4-coefficient vanishes; the two
    x-components give a small 2x2 system and the v-component the answer.
    """
    n1, n2, n3, n4 = _deg4_frame()
    eq = n1.eq
    setting = eq.setting
    br = bracket(n2, n3)
    if not br.coefficient(setting.u).is_zero():
        raise SingularFrame("unexpected u-component in [nabla2, nabla3]")
    x1, x2 = setting.xs
    mat2 = [[n2.coefficient(x1), n3.coefficient(x1)],
            [n2.coefficient(x2), n3.coefficient(x2)]]
    rhs2 = [br.coefficient(x1), br.coefficient(x2)]
    try:
        c2, c3 = solve_expr(mat2, rhs2)
    except LinearSolveSingular as exc:
        raise SingularFrame(str(exc)) from exc
    rest = br.coefficient(setting.v) - c2 * n2.coefficient(setting.v) \
        - c3 * n3.coefficient(setting.v)
    return _cap(rest / n1.coefficient(setting.v))


_BUILDERS: Dict[Tuple[str, int, str], Callable[[], "Expr | HorizontalDerivation"]] = {
    ("S_h", 4, "general"): _build_Sh4,
    ("nabla4", 4, "general"): _build_nabla4_general4,
    ("nabla1", 4, "degenerate"): lambda: _deg4_frame()[0],
    ("nabla2", 4, "degenerate"): lambda: _deg4_frame()[1],
    ("nabla3", 4, "degenerate"): lambda: _deg4_frame()[2],
    ("nabla4", 4, "degenerate"): lambda: _deg4_frame()[3],
    ("c23_1", 4, "degenerate"): _build_c231_degenerate4,
}

_BUILDER_META: Dict[Tuple[str, int, str], Tuple[str, int]] = {
    ("S_h", 4, "general"): ("invariant", 2),
    ("nabla4", 4, "general"): ("derivation", 2),
    ("nabla1", 4, "degenerate"): ("derivation", 3),
    ("nabla2", 4, "degenerate"): ("derivation", 3),
    ("nabla3", 4, "degenerate"): ("derivation", 3),
    ("nabla4", 4, "degenerate"): ("derivation", 3),
    ("c23_1", 4, "degenerate"): ("invariant", 4),
}


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

@dataclass
class InvarianceReport:
    entry: str
    ok: bool
    expected_invariant: bool
    detail: str = ""


def verify_invariance(entry: CatalogEntry,
                      eq: Optional[EquationSystem] = None) -> InvarianceReport:
    """Exact invariance check on the entry's equation manifold.

    Invariant entries must have identically zero Lie derivative (raises
    VerificationFailed otherwise); derivations must satisfy the commutation
    identity with the generic generator; helpers are reported as expected
    non-invariant and verified to be actually non-invariant.
    """
    eq = eq or equation_for(entry.n, entry.cls)
    if entry.kind == "derivation":
        ok = is_invariant_derivation(entry.body, eq)
        if not ok:
            raise VerificationFailed(f"derivation {entry.name} is not invariant")
        return InvarianceReport(entry.name, True, True)
    residual = lie_derivative(entry.body, eq)
    if entry.kind == "invariant":
        if not residual.is_zero():
            raise VerificationFailed(
                f"nonzero Lie residual for {entry.name}", residual)
        return InvarianceReport(entry.name, True, True)
    # helper: flagged non-invariant, and indeed not invariant
    ok = not residual.is_zero()
    return InvarianceReport(entry.name, ok, False,
                            detail="helper residual nonzero" if ok else
                            "helper unexpectedly invariant")


def is_invariant_derivation(D: HorizontalDerivation,
                            eq: Optional[EquationSystem] = None) -> bool:
    """Exact test: L(A^mu) = sum_nu A^nu D_nu(xi^mu) for the generic
    generator (equivalent to [xi, D] = 0 on the equation)."""
    eq = eq or D.eq
    setting = eq.setting
    from kundt.pseudogroup import lifted_field

    lf = lifted_field(setting)
    base_coeff = [lf.base[s.index] for s in setting.base]
    for mu, s_mu in enumerate(setting.base):
        a_mu = D.coefficient(s_mu)
        lhs = lie_derivative(a_mu, eq)
        rhs = Expr.from_int(0)
        for nu, s_nu in enumerate(setting.base):
            a_nu = D.coefficient(s_nu)
            if a_nu.is_zero():
                continue
            d = total_derivative(base_coeff[mu], s_nu, eq)
            if d.is_zero():
                continue
            rhs = rhs + a_nu * d
        if not (lhs - rhs).is_zero():
            return False
    return True


# ---------------------------------------------------------------------------
# Independence, ranks, frames
# ---------------------------------------------------------------------------

def _horizontal_jacobian(invs: Sequence[Expr], eq: EquationSystem) -> List[List[Expr]]:
    return [[total_derivative(f, s, eq) for s in eq.setting.base] for f in invs]


def _partial_value(f: Expr, s: Sym, point) -> Fraction:
    """(df/ds)(point) by the quotient rule on evaluated polynomials; avoids
    forming symbolic products for large expressions."""
    from kundt.symexpr import poly_diff, poly_eval

    by_index = {sym.index: val for sym, val in point.items()}
    qv = poly_eval(f.den, by_index)
    if not qv:
        raise ZeroDivisionError("denominator vanishes at the point")
    dn = poly_diff(f.num, s.index)
    dd = poly_diff(f.den, s.index)
    pv = poly_eval(f.num, by_index)
    dnv = poly_eval(dn, by_index) if dn else Fraction(0)
    ddv = poly_eval(dd, by_index) if dd else Fraction(0)
    return (dnv * qv - pv * ddv) / (qv * qv)


def _total_derivative_value(f: Expr, direction: Sym, eq: EquationSystem,
                            point) -> Fraction:
    """Exact value of D_direction f at the point (which must carry jet
    values one order above those appearing in f)."""
    setting = eq.setting
    dir_pos = setting.base.index(direction)
    total = Fraction(0)
    for idx in sorted(f.support()):
        s = sym_by_index(idx)
        if s.kind == Sym.BASE:
            image = Fraction(1) if s.index == direction.index else None
        elif s.kind == Sym.JET:
            field, sigma = setting.jet_info(s)
            nsigma = list(sigma)
            nsigma[dir_pos] += 1
            tsigma = tuple(nsigma)
            if eq.eliminates(field, tsigma):
                continue
            image = point[setting.jet(field, tsigma)]
        else:
            continue
        if image:
            total += _partial_value(f, s, point) * image
    return total


def horizontal_independence(invs: Sequence[Expr], eq: EquationSystem,
                            seed: int = 0, retries: int = 3) -> bool:
    """True when det[D_mu I_s] is certified nonzero at a random point of the
    equation; False when the determinant vanishes identically (certified
    symbolically after all sampled points return zero)."""
    n = eq.setting.n
    if len(invs) != n:
        raise ValueError("need exactly n invariants for horizontal independence")
    order = max(f.max_jet_order(eq.setting.jet_order) for f in invs)
    rng = random.Random(seed)
    for _ in range(retries):
        point = random_point(eq, order + 1, rng)
        try:
            rows = [
                [_total_derivative_value(f, s, eq, point)
                 for s in eq.setting.base]
                for f in invs
            ]
        except ZeroDivisionError:
            continue
        if _det_fractions_local(rows) != 0:
            return True
    det = det_expr(_horizontal_jacobian(invs, eq))
    if det.is_zero():
        return False
    raise DegeneratePointExhausted(
        "nonzero determinant never certified at sampled points")


def _det_fractions_local(mat: List[List[Fraction]]) -> Fraction:
    n = len(mat)
    if n == 1:
        return mat[0][0]
    if n == 2:
        return mat[0][0] * mat[1][1] - mat[0][1] * mat[1][0]
    total = Fraction(0)
    sign = 1
    for j in range(n):
        minor = [[row[k] for k in range(n) if k != j] for row in mat[1:]]
        total += sign * mat[0][j] * _det_fractions_local(minor)
        sign = -sign
    return total


def jacobian_rank(invs: Sequence[Expr], eq: EquationSystem,
                  seed: int = 0, retries: int = 3) -> int:
    """Exact rank of d(invs)/d(fiber jets) at a random point of eq."""
    setting = eq.setting
    order = max(f.max_jet_order(setting.jet_order) for f in invs)
    coords = eq.jet_coordinates(order)
    rng = random.Random(seed)
    best = None
    for _ in range(retries):
        point = random_point(eq, order, rng)
        try:
            rows = []
            for f in invs:
                support = f.support()
                rows.append([
                    (_partial_value(f, s, point) if s.index in support
                     else Fraction(0))
                    for s in coords
                ])
        except ZeroDivisionError:
            continue
        r = rank_fractions(rows)
        best = r if best is None else max(best, r)
    if best is None:
        raise DegeneratePointExhausted("all sample points were singular")
    return best


def bracket(X: HorizontalDerivation, Y: HorizontalDerivation) -> HorizontalDerivation:
    """Commutator of two horizontal derivations, coefficientwise."""
    eq = X.eq
    comps = []
    for s in eq.setting.base:
        comps.append(X.apply(Y.coefficient(s)) - Y.apply(X.coefficient(s)))
    return HorizontalDerivation.from_vector(eq, comps)


def structure_functions(frame: Sequence[HorizontalDerivation]) -> List[List[List[Expr]]]:
    """c[i][j][k] with [frame_i, frame_j] = sum_k c[i][j][k] frame_k."""
    eq = frame[0].eq
    n = eq.setting.n
    if len(frame) != n:
        raise SingularFrame("frame size must equal the base dimension")
    mat = [[frame[k].coefficient(s) for k in range(n)] for s in eq.setting.base]
    zero = Expr.from_int(0)
    out = [[[zero] * n for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            br = bracket(frame[i], frame[j])
            rhs = [br.coefficient(s) for s in eq.setting.base]
            try:
                coeffs = solve_expr(mat, rhs)
            except LinearSolveSingular as exc:
                raise SingularFrame(str(exc)) from exc
            for k in range(n):
                out[i][j][k] = coeffs[k]
                out[j][i][k] = -coeffs[k]
    return out


def tresse(invs: Sequence[Expr], eq: EquationSystem) -> List[HorizontalDerivation]:
    """Derivations dual to the horizontal differentials of n independent
    invariants; they annihilate each other's invariants and commute."""
    n = eq.setting.n
    if len(invs) != n:
        raise ValueError("need exactly n invariants")
    jac = _horizontal_jacobian(invs, eq)
    try:
        inv = inverse_expr(jac)
    except LinearSolveSingular as exc:
        raise SingularFrame(str(exc)) from exc
    return [
        HorizontalDerivation.from_vector(eq, [inv[mu][s] for mu in range(n)])
        for s in range(n)
    ]


def tresse_commute_check(invs: Sequence[Expr], eq: EquationSystem,
                         seed: int = 0, samples: int = 3) -> bool:
    """Certify that the Tresse derivatives of `invs` pairwise commute.

    The exact argument: the duality relations nabla_s(I_t) = delta_st are
    verified symbolically and det[D_mu I_s] is certified nonzero, so any
    bracket is a horizontal derivation annihilating all I_t and must vanish
    (the Jacobian is invertible over the function field).  The bracket
    coefficients are additionally evaluated at random points as a direct
    mechanical confirmation.
    """
    n = eq.setting.n
    derivs = tresse(invs, eq)
    for s, f in enumerate(invs):
        for t, D in enumerate(derivs):
            expected = 1 if s == t else 0
            if not (D.apply(f) - expected).is_zero():
                return False
    if det_expr(_horizontal_jacobian(invs, eq)).is_zero():
        return False
    order = 1 + max(
        max(D.coefficient(s).max_jet_order(eq.setting.jet_order)
            for s in eq.setting.base)
        for D in derivs
    )
    rng = random.Random(seed)
    checked = 0
    for _ in range(samples * 4):
        if checked >= samples:
            break
        point = random_point(eq, order + 1, rng)
        try:
            vals = {
                (i, s.index): D.coefficient(s).eval_exact(point)
                for i, D in enumerate(derivs) for s in eq.setting.base
            }
            for i in range(n):
                for j in range(i + 1, n):
                    for mu, s_mu in enumerate(eq.setting.base):
                        acc = Fraction(0)
                        for nu, s_nu in enumerate(eq.setting.base):
                            d_ij = _total_derivative_value(
                                derivs[j].coefficient(s_mu), s_nu, eq, point)
                            d_ji = _total_derivative_value(
                                derivs[i].coefficient(s_mu), s_nu, eq, point)
                            acc += vals[(i, s_nu.index)] * d_ij \
                                - vals[(j, s_nu.index)] * d_ji
                        if acc != 0:
                            return False
        except ZeroDivisionError:
            continue
        checked += 1
    return checked > 0


def coframe_metric(frame: Sequence[HorizontalDerivation]) -> List[List[Expr]]:
    """Gram matrix G_ij = g(frame_i, frame_j)."""
    k = len(frame)
    out = [[None] * k for _ in range(k)]
    for i in range(k):
        for j in range(i, k):
            val = pair(frame[i], frame[j])
            out[i][j] = val
            out[j][i] = val
    return out
