"""Short-time heat-kernel expansions for variable-coefficient parabolic operators.

The pipeline: parse coefficient expressions (:mod:`.expr`), build the Taylor
terms and Dyson-series operators exactly (:mod:`.opalg`, :mod:`.dyson`),
turn them into Gaussian-times-polynomial kernels (:mod:`.kernel`) and measure
them against reference solutions (:mod:`.verify`, :mod:`.study`).
"""
from .dyson import (
    EllipticityError,
    OperatorSpec,
    assemble_P_alpha,
    assemble_P_ell,
    bch_polynomial,
    enumerate_indices,
    simplex_integrate,
    taylor_term,
)
from .expr import ExprDomainError, ExprError, ExprSyntaxError, diff, evaluate, parse
from .grids import Grid
from .kernel import (
    BUILTIN_RULES,
    CenterRule,
    GaussData,
    KernelError,
    apply_kernel,
    approx_kernel,
    frak_P,
    gauss_eval,
    hermite_apply,
)
from .opalg import DiffOp, ScalarCoef, ad_power, commutator, compose, degree_order
from .verify import NormSpec, convergence_order, cn_solve, exact_const_kernel, norm

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_RULES",
    "CenterRule",
    "DiffOp",
    "EllipticityError",
    "ExprDomainError",
    "ExprError",
    "ExprSyntaxError",
    "GaussData",
    "Grid",
    "KernelError",
    "NormSpec",
    "OperatorSpec",
    "ScalarCoef",
    "ad_power",
    "apply_kernel",
    "approx_kernel",
    "assemble_P_alpha",
    "assemble_P_ell",
    "bch_polynomial",
    "cn_solve",
    "commutator",
    "compose",
    "convergence_order",
    "degree_order",
    "diff",
    "enumerate_indices",
    "evaluate",
    "exact_const_kernel",
    "frak_P",
    "gauss_eval",
    "hermite_apply",
    "norm",
    "parse",
    "simplex_integrate",
    "taylor_term",
]
