"""Multi-manifold embedding learning for distance-based OOD detection.

Hyperbolic geometry, the joint hypersphere/hyperbolic training loss, a small
autodiff engine, PKNN and Mahalanobis scoring with test-time enrollment,
FPR95/AUC metrics and seeded synthetic data.
"""

from .errors import ContractViolation, DivergenceError

__version__ = "0.1.0"

__all__ = ["ContractViolation", "DivergenceError", "__version__"]
