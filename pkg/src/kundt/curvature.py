"""Curvature of the horizontal Kundt metric in jet variables.

The metric components follow the line-element convention g_uu = H,
g_uv = 1/2, g_{u x^i} = W_i/2, g_{x^i x^j} = h_ij with all other entries
zero.  Christoffel symbols, the Riemann tensor and the Ricci operator are
the standard Levi-Civita formulas with total derivatives (restricted to an
equation manifold) in place of partial derivatives; restricting the result
to a metric section recovers the classical tensors of that metric.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Tuple

from kundt.jetspace import EquationSystem, Setting, total_derivative
from kundt.linalg import inverse_expr
from kundt.symexpr import Expr, Sym

__all__ = [
    "SingularMetric",
    "HorizontalDerivation",
    "metric_components",
    "inverse_metric",
    "pair",
    "christoffel",
    "covariant_derivative",
    "riemann",
    "ricci_tensor",
    "ricci_operator",
    "ricci_blocks_lower_triangular",
    "spi_trace",
    "scalar_curvature_h",
]


class SingularMetric(Exception):
    """The metric determinant vanishes identically."""


@dataclass
class HorizontalDerivation:
    """Invariant-derivation candidate: sum_mu A^mu D_mu on an equation."""

    eq: EquationSystem
    coeffs: Dict[int, Expr]  # base symbol index -> Expr

    @property
    def setting(self) -> Setting:
        return self.eq.setting

    def coefficient(self, s: Sym) -> Expr:
        return self.coeffs.get(s.index, Expr.from_int(0))

    def apply(self, f: Expr) -> Expr:
        total = Expr.from_int(0)
        for s in self.setting.base:
            a = self.coeffs.get(s.index)
            if a is None or a.is_zero():
                continue
            total = total + a * total_derivative(f, s, self.eq)
        return total

    def __call__(self, f: Expr) -> Expr:
        return self.apply(f)

    def scale(self, factor: Expr) -> "HorizontalDerivation":
        return HorizontalDerivation(
            self.eq, {i: factor * a for i, a in self.coeffs.items()})

    def plus(self, other: "HorizontalDerivation") -> "HorizontalDerivation":
        out = dict(self.coeffs)
        for i, a in other.coeffs.items():
            out[i] = out.get(i, Expr.from_int(0)) + a
        return HorizontalDerivation(self.eq, out)

    def as_vector(self) -> List[Expr]:
        return [self.coefficient(s) for s in self.setting.base]

    @staticmethod
    def from_vector(eq: EquationSystem, comps: List[Expr]) -> "HorizontalDerivation":
        return HorizontalDerivation(
            eq, {s.index: c for s, c in zip(eq.setting.base, comps)})


# ---------------------------------------------------------------------------
# Metric and inverse
# ---------------------------------------------------------------------------

_CACHE_LOCK = threading.Lock()
_METRIC_CACHE: Dict[Tuple[int, str, str], object] = {}


def _cached(eq: EquationSystem, tag: str, build):
    key = (eq.setting.n, eq.kind, tag)
    with _CACHE_LOCK:
        val = _METRIC_CACHE.get(key)
    if val is not None:
        return val
    val = build()
    with _CACHE_LOCK:
        _METRIC_CACHE[key] = val
    return val


def metric_components(eq: EquationSystem) -> List[List[Expr]]:
    """Matrix g_{mu nu} over the base order (u, x^1.., v)."""
    def build():
        setting = eq.setting
        n = setting.n
        m = n - 2
        z = setting.zero_index()
        zero = Expr.from_int(0)
        half = Expr.from_int(Fraction(1, 2))
        g = [[zero for _ in range(n)] for _ in range(n)]
        g[0][0] = setting.jet_expr("H", z)
        g[0][n - 1] = half
        g[n - 1][0] = half
        for i in range(1, m + 1):
            wi = half * setting.jet_expr(f"W{i}", z)
            g[0][i] = wi
            g[i][0] = wi
            for j in range(i, m + 1):
                hij = setting.jet_expr(f"h{i}{j}", z)
                g[i][j] = hij
                g[j][i] = hij
        return g

    return _cached(eq, "metric", build)


def inverse_metric(eq: EquationSystem) -> List[List[Expr]]:
    def build():
        g = metric_components(eq)
        try:
            return inverse_expr(g)
        except Exception as exc:  # identically singular determinant
            raise SingularMetric(str(exc)) from exc

    return _cached(eq, "inverse", build)


def pair(X: HorizontalDerivation, Y: HorizontalDerivation) -> Expr:
    """g(X, Y) for the horizontal metric on the common equation."""
    eq = X.eq
    g = metric_components(eq)
    xs = X.as_vector()
    ys = Y.as_vector()
    total = Expr.from_int(0)
    n = eq.setting.n
    for i in range(n):
        if xs[i].is_zero():
            continue
        for j in range(n):
            if g[i][j].is_zero() or ys[j].is_zero():
                continue
            total = total + g[i][j] * xs[i] * ys[j]
    return total


# ---------------------------------------------------------------------------
# Christoffel, Riemann, Ricci
# ---------------------------------------------------------------------------

def christoffel(eq: EquationSystem) -> List[List[List[Expr]]]:
    """Gamma[k][i][j], symmetric in the lower pair."""
    def build():
        setting = eq.setting
        n = setting.n
        g = metric_components(eq)
        ginv = inverse_metric(eq)
        base = setting.base
        dg = [[[total_derivative(g[i][j], base[k], eq) for j in range(n)]
               for i in range(n)] for k in range(n)]
        half = Expr.from_int(Fraction(1, 2))
        gamma = [[[None] * n for _ in range(n)] for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                for k in range(n):
                    acc = Expr.from_int(0)
                    for r in range(n):
                        if ginv[k][r].is_zero():
                            continue
                        term = dg[i][r][j] + dg[j][r][i] - dg[r][i][j]
                        if term.is_zero():
                            continue
                        acc = acc + ginv[k][r] * term
                    val = half * acc
                    gamma[k][i][j] = val
                    gamma[k][j][i] = val
        return gamma

    return _cached(eq, "christoffel", build)


def covariant_derivative(X: HorizontalDerivation,
                         Y: HorizontalDerivation) -> HorizontalDerivation:
    """Levi-Civita covariant derivative of Y along X."""
    eq = X.eq
    setting = eq.setting
    n = setting.n
    gamma = christoffel(eq)
    xs = X.as_vector()
    ys = Y.as_vector()
    comps: List[Expr] = []
    for k in range(n):
        acc = X.apply(ys[k])
        for i in range(n):
            if xs[i].is_zero():
                continue
            for j in range(n):
                if ys[j].is_zero() or gamma[k][i][j].is_zero():
                    continue
                acc = acc + gamma[k][i][j] * xs[i] * ys[j]
        comps.append(acc)
    return HorizontalDerivation.from_vector(eq, comps)


def riemann(eq: EquationSystem) -> List[List[List[List[Expr]]]]:
    """R[k][l][i][j] = coefficient of e_k in R(e_i, e_j) e_l."""
    def build():
        setting = eq.setting
        n = setting.n
        gamma = christoffel(eq)
        base = setting.base
        dgamma = [[[[total_derivative(gamma[k][i][j], base[m], eq)
                     for j in range(n)] for i in range(n)] for k in range(n)]
                  for m in range(n)]
        R = [[[[None] * n for _ in range(n)] for _ in range(n)] for _ in range(n)]
        zero = Expr.from_int(0)
        for k in range(n):
            for l in range(n):
                for i in range(n):
                    R[k][l][i][i] = zero
                    for j in range(i + 1, n):
                        acc = dgamma[i][k][j][l] - dgamma[j][k][i][l]
                        for r in range(n):
                            t1 = gamma[k][i][r] * gamma[r][j][l]
                            t2 = gamma[k][j][r] * gamma[r][i][l]
                            acc = acc + t1 - t2
                        R[k][l][i][j] = acc
                        R[k][l][j][i] = -acc
        return R

    return _cached(eq, "riemann", build)


def ricci_tensor(eq: EquationSystem) -> List[List[Expr]]:
    """Ricci tensor contracted directly from the Christoffel symbols
    (avoids materializing the full Riemann tensor)."""
    def build():
        setting = eq.setting
        n = setting.n
        gamma = christoffel(eq)
        base = setting.base
        trace = [sum((gamma[k][k][r] for k in range(n)), Expr.from_int(0))
                 for r in range(n)]
        ric = [[None] * n for _ in range(n)]
        for l in range(n):
            for j in range(l, n):
                acc = -total_derivative(trace[l], base[j], eq)
                for k in range(n):
                    acc = acc + total_derivative(gamma[k][j][l], base[k], eq)
                for r in range(n):
                    if not gamma[r][j][l].is_zero():
                        acc = acc + trace[r] * gamma[r][j][l]
                    for k in range(n):
                        t = gamma[k][j][r] * gamma[r][k][l]
                        if not t.is_zero():
                            acc = acc - t
                val = acc.cancelled()
                ric[l][j] = val
                ric[j][l] = val
        return ric

    return _cached(eq, "ricci_tensor", build)


def ricci_operator(eq: EquationSystem) -> List[List[Expr]]:
    """Ric as a (1,1)-tensor: Ric^i_j = g^{ik} R_{kj}."""
    def build():
        n = eq.setting.n
        ric = ricci_tensor(eq)
        ginv = inverse_metric(eq)
        return [[sum((ginv[i][k] * ric[k][j] for k in range(n)),
                     Expr.from_int(0)).cancelled()
                 for j in range(n)] for i in range(n)]

    return _cached(eq, "ricci_operator", build)


def ricci_blocks_lower_triangular(eq: EquationSystem) -> bool:
    """True iff every entry above the (u | transverse | v) block diagonal of
    the Ricci operator vanishes identically on eq."""
    def build():
        n = eq.setting.n
        op = ricci_operator(eq)
        upper = [op[0][j] for j in range(1, n)]
        upper += [op[i][n - 1] for i in range(1, n - 1)]
        return all(e.is_zero() for e in upper)

    return _cached(eq, "blocks", build)


def spi_trace(power: int, eq: EquationSystem) -> Expr:
    """Tr(Ric^power) of the Ricci operator.

    When the block-lower-triangular shape has been verified on eq, the trace
    is assembled from the diagonal blocks (an exact identity for triangular
    block matrices); otherwise the matrix power is expanded naively.
    """
    n = eq.setting.n
    op = ricci_operator(eq)
    if power > 1 and eq.kind == "ED" and ricci_blocks_lower_triangular(eq):
        corner = op[0][0]
        block = [[op[i][j] for j in range(1, n - 1)] for i in range(1, n - 1)]
        mat = block
        for _ in range(power - 1):
            mat = _mat_mul(mat, block)
        inner = sum((mat[i][i] for i in range(n - 2)), Expr.from_int(0))
        return 2 * corner ** power + inner
    mat = op
    for _ in range(power - 1):
        mat = _mat_mul(mat, op)
    return sum((mat[i][i] for i in range(n)), Expr.from_int(0))


def _mat_mul(a: List[List[Expr]], b: List[List[Expr]]) -> List[List[Expr]]:
    n = len(a)
    out = [[Expr.from_int(0)] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            acc = Expr.from_int(0)
            for k in range(n):
                if a[i][k].is_zero() or b[k][j].is_zero():
                    continue
                acc = acc + a[i][k] * b[k][j]
            out[i][j] = acc
    return out


# ---------------------------------------------------------------------------
# Transverse scalar curvature
# ---------------------------------------------------------------------------

def scalar_curvature_h(n: int) -> Expr:
    """Scalar curvature of the u-parametrized transverse metric h_ij(u, x),
    computed intrinsically on the slice (x-derivatives only).  For n = 3 the
    slice is one-dimensional and the curvature vanishes."""
    setting = Setting.get(n)
    eq = EquationSystem.E(n)
    m = n - 2
    if m < 2:
        return Expr.from_int(0)
    h = setting.h_matrix()
    hinv = inverse_expr(h)
    xs = setting.xs

    def d(e: Expr, i: int) -> Expr:
        return total_derivative(e, xs[i], eq)

    half = Expr.from_int(Fraction(1, 2))
    gam = [[[None] * m for _ in range(m)] for _ in range(m)]
    for i in range(m):
        for j in range(i, m):
            for k in range(m):
                acc = Expr.from_int(0)
                for r in range(m):
                    term = d(h[r][j], i) + d(h[r][i], j) - d(h[i][j], r)
                    acc = acc + hinv[k][r] * term
                val = half * acc
                gam[k][i][j] = val
                gam[k][j][i] = val

    ric = [[Expr.from_int(0)] * m for _ in range(m)]
    for l in range(m):
        for j in range(m):
            acc = Expr.from_int(0)
            for k in range(m):
                acc = acc + d(gam[k][j][l], k) - d(gam[k][k][l], j)
                for r in range(m):
                    acc = acc + gam[k][k][r] * gam[r][j][l] \
                              - gam[k][j][r] * gam[r][k][l]
            ric[l][j] = acc

    total = Expr.from_int(0)
    for i in range(m):
        for j in range(m):
            total = total + hinv[i][j] * ric[i][j]
    return total
