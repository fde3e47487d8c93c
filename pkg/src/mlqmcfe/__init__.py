"""Multi-level quasi-Monte Carlo finite element methods for elliptic PDEs with
affine-parametric coefficients.

Modules: ``field`` (coefficient expansions and decay sequences), ``wavelet``
(Haar systems and the k-orthogonality check), ``fem`` (P1 finite elements),
``qmc`` (POD weights and CBC lattice rules), ``mlqmc`` (planner and
estimators), ``oracle`` (independent references), ``experiments`` and ``cli``.
"""
from .fem import LevelSystem, build_hierarchy, make_mesh, solve
from .field import CoefficientField, Domain, SineBasis, derive_sequences, make_field
from .mlqmc import MlPlan, manual_plan, ml_estimate, plan, sl_estimate, weights_for
from .qmc import LatticeRule, cbc_construct, generate_points, lambda_q, pod_weights, rho
from .wavelet import HaarBasis1D, TensorHaar2D, check_k_orthogonality

__version__ = "0.1.0"

__all__ = [
    "CoefficientField", "Domain", "HaarBasis1D", "LatticeRule", "LevelSystem", "MlPlan",
    "SineBasis", "TensorHaar2D", "build_hierarchy", "cbc_construct", "check_k_orthogonality",
    "derive_sequences", "generate_points", "lambda_q", "make_field", "make_mesh", "manual_plan",
    "ml_estimate", "plan", "pod_weights", "rho", "sl_estimate", "solve", "weights_for",
]
