"""Exact linear algebra: fraction-free rank over Q and small symbolic solves.

Rank uses Bareiss elimination on integer matrices (rows are rescaled by
denominator lcms first), so every intermediate entry is an exact minor and
no rational reconstruction is needed.
"""

from __future__ import annotations

from fractions import Fraction
from typing import List, Sequence

from kundt.symexpr import Expr

__all__ = ["rank_fractions", "bareiss_rank_int", "det_expr", "solve_expr"]


class LinearSolveSingular(Exception):
    """The symbolic linear system has identically singular matrix."""


def _lcm(a: int, b: int) -> int:
    from math import gcd

    return a * b // gcd(a, b)


def rank_fractions(rows: Sequence[Sequence[Fraction]]) -> int:
    """Exact rank of a matrix with Fraction entries."""
    int_rows: List[List[int]] = []
    for row in rows:
        den = 1
        for x in row:
            den = _lcm(den, Fraction(x).denominator)
        int_rows.append([int(x * den) for x in row])
    return bareiss_rank_int(int_rows)


def bareiss_rank_int(rows: List[List[int]]) -> int:
    """Rank by fraction-free (Bareiss) elimination over the integers."""
    m = [list(r) for r in rows if any(r)]
    if not m:
        return 0
    nrows = len(m)
    ncols = len(m[0])
    rank = 0
    prev = 1
    col = 0
    while rank < nrows and col < ncols:
        piv = None
        for i in range(rank, nrows):
            if m[i][col]:
                piv = i
                break
        if piv is None:
            col += 1
            continue
        if piv != rank:
            m[rank], m[piv] = m[piv], m[rank]
        p = m[rank][col]
        for i in range(rank + 1, nrows):
            mi = m[i]
            mr = m[rank]
            f = mi[col]
            for j in range(col + 1, ncols):
                mi[j] = (mi[j] * p - f * mr[j]) // prev
            mi[col] = 0
        prev = p
        rank += 1
        col += 1
    return rank


def det_expr(mat: Sequence[Sequence[Expr]]) -> Expr:
    """Determinant of a small matrix of expressions (cofactor expansion)."""
    n = len(mat)
    if n == 0:
        return Expr.from_int(1)
    if n == 1:
        return mat[0][0]
    if n == 2:
        return mat[0][0] * mat[1][1] - mat[0][1] * mat[1][0]
    total = Expr.from_int(0)
    sign = 1
    for j in range(n):
        a = mat[0][j]
        if a.is_zero():
            sign = -sign
            continue
        minor = [[row[k] for k in range(n) if k != j] for row in mat[1:]]
        total = total + Expr.from_int(sign) * a * det_expr(minor)
        sign = -sign
    return total


def solve_expr(mat: Sequence[Sequence[Expr]], rhs: Sequence[Expr]) -> List[Expr]:
    """Solve A x = b over the rational-function field by Cramer's rule.

    Raises LinearSolveSingular when det A is identically zero.  Intended for
    the small frame systems (n <= 4).
    """
    n = len(mat)
    d = det_expr(mat)
    if d.is_zero():
        raise LinearSolveSingular("coefficient matrix has identically zero determinant")
    out: List[Expr] = []
    for j in range(n):
        col_swapped = [
            [rhs[i] if k == j else mat[i][k] for k in range(n)] for i in range(n)
        ]
        out.append(det_expr(col_swapped) / d)
    return out


def inverse_expr(mat: Sequence[Sequence[Expr]]) -> List[List[Expr]]:
    """Inverse of a small symbolic matrix via the adjugate."""
    n = len(mat)
    d = det_expr(mat)
    if d.is_zero():
        raise LinearSolveSingular("matrix has identically zero determinant")
    inv: List[List[Expr]] = [[None] * n for _ in range(n)]  # type: ignore[list-item]
    for i in range(n):
        for j in range(n):
            minor = [
                [mat[r][c] for c in range(n) if c != i]
                for r in range(n)
                if r != j
            ]
            sign = -1 if (i + j) % 2 else 1
            inv[i][j] = Expr.from_int(sign) * det_expr(minor) / d
    return inv
