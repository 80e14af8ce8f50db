"""
Factorization package: conditional-law solver and identity checks.
"""

from .engine import solve_conditional_pmf, transient_pmf
from .verification import verify_corollary_1, verify_corollary_2, verify_theorem_1, verify_theorem_2

__all__ = [
    "solve_conditional_pmf",
    "transient_pmf",
    "verify_theorem_1",
    "verify_theorem_2",
    "verify_corollary_1",
    "verify_corollary_2",
]
