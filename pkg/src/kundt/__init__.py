"""Exact jet-space calculus for Kundt metrics.

Subpackages cover exact rational-function arithmetic (:mod:`kundt.symexpr`),
jet coordinates and equation manifolds (:mod:`kundt.jetspace`), the
shape-preserving pseudogroup with its prolongations and orbit counting
(:mod:`kundt.pseudogroup`), curvature of the horizontal metric
(:mod:`kundt.curvature`), the catalog of explicit invariants
(:mod:`kundt.invariants`), and the equivalence workflow on concrete metrics
(:mod:`kundt.signature`).
"""

from kundt.symexpr import Expr, Sym, parse, symbol

__all__ = ["Expr", "Sym", "parse", "symbol"]
__version__ = "0.1.0"
