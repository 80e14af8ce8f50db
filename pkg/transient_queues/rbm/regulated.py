"""
Regulated Brownian motion (drift -1, variance 1) at an exponential time.

With r = sqrt(1 + 2q), alpha = r - 1 and beta = r + 1:
    E_x[e^{-q tau_0}] = e^{-alpha x},
    inf over [0, e_q] from x0: atom e^{-alpha x0} at 0, density alpha e^{-alpha (x0 - z)} on (0, x0),
    R(e_q) from x0: density
        x > x0: e^{-alpha x0} e^{-beta x} [beta + (q / r)(e^{2 r x0} - 1)]
        x < x0: (q / r) e^{-alpha (x0 - x)} + (beta^2 / (2r)) e^{-alpha x0 - beta x}.
General drift and variance reduce to this case by scaling space by sigma^2 / |mu|
and time by sigma^2 / mu^2.
"""

import cmath
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from scipy.integrate import quad

from transient_queues.errors import CertificationError, InputError
from transient_queues.factorization.verification import DEFAULT_OMEGAS, DeviationReport, _report
from transient_queues.transforms.core import LstValue, QLike, TransformArgument

# Configure logging
logger = logging.getLogger(__name__)

BRANCH_TOL = 1e-9
QUAD_ABS_TOL = 1e-11

# Upper quadrature limit is x0 + TAIL_EXPONENT / beta
TAIL_EXPONENT = 40.0


class RbmError(InputError):
    """Exception raised for invalid regulated Brownian motion queries."""
    pass


class RbmBranchError(CertificationError):
    """Exception raised when the two density branches disagree at x0."""
    pass


@dataclass(frozen=True)
class RbmQuery:
    """Initial level x0 >= 0 and killing rate q."""

    x0: float
    q: TransformArgument

    def __post_init__(self):
        if not (math.isfinite(self.x0) and self.x0 >= 0):
            raise RbmError(f"Initial level must be finite and nonnegative, got {self.x0}")
        object.__setattr__(self, "q", TransformArgument.coerce(self.q))

    @property
    def root(self) -> LstValue:
        return _real_if(cmath.sqrt(1.0 + 2.0 * self.q.value), self.q)

    @property
    def alpha(self) -> LstValue:
        return self.root - 1.0

    @property
    def beta(self) -> LstValue:
        return self.root + 1.0


def _real_if(value: complex, q: TransformArgument) -> LstValue:
    return value.real if q.is_real else value


def _exp(value):
    return cmath.exp(value) if isinstance(value, complex) else math.exp(value)


@dataclass
class RbmTransientLaw:
    """Mixed law: `atom` at zero plus `density` on (0, support_end)."""

    atom: LstValue
    density: Callable[[float], LstValue]
    support_end: float = math.inf

    def total_mass(self, upper: Optional[float] = None) -> float:
        end = self.support_end if upper is None else upper
        mass, _ = quad(lambda x: float(self.density(x)), 0.0, end, epsabs=QUAD_ABS_TOL, limit=200)
        return float(self.atom) + mass


def rbm_hitting_lst(x: float, q: QLike) -> LstValue:
    """E_x[e^{-q tau_0}] = e^{-alpha(q) x}."""
    if x < 0:
        raise RbmError(f"Level must be nonnegative, got {x}")
    return _exp(-RbmQuery(x0=x, q=q).alpha * x)


def rbm_infimum_law(query: RbmQuery) -> RbmTransientLaw:
    """Law of the running infimum over [0, e_q] started at x0."""
    alpha = query.alpha
    x0 = query.x0

    def density(z: float) -> LstValue:
        return alpha * _exp(-alpha * (x0 - z)) if 0 < z < x0 else 0.0

    return RbmTransientLaw(atom=_exp(-alpha * x0), density=density, support_end=x0)


def _upper_branch(x: float, query: RbmQuery) -> LstValue:
    r, alpha, beta, q = query.root, query.alpha, query.beta, query.q.scalar
    x0 = query.x0
    return _exp(-alpha * x0 - beta * x) * (beta + (q / r) * (_exp(2.0 * r * x0) - 1.0))


def _lower_branch(x: float, query: RbmQuery) -> LstValue:
    r, alpha, beta, q = query.root, query.alpha, query.beta, query.q.scalar
    x0 = query.x0
    return (q / r) * _exp(-alpha * (x0 - x)) + (beta * beta / (2.0 * r)) * _exp(-alpha * x0 - beta * x)


def rbm_density(x: float, query: RbmQuery) -> LstValue:
    """
    Density of R(e_q) at x given R(0) = x0.

    At x = x0 both branches are evaluated and must agree within 1e-9.

    Raises:
        RbmError: If x < 0.
        RbmBranchError: If the branches disagree at x0.
    """
    if x < 0:
        raise RbmError(f"Density point must be nonnegative, got {x}")
    if x > query.x0:
        return _upper_branch(x, query)
    if x < query.x0:
        return _lower_branch(x, query)
    upper = _upper_branch(x, query)
    lower = _lower_branch(x, query)
    if abs(upper - lower) > BRANCH_TOL * max(1.0, abs(upper)):
        error_msg = f"Density branches differ by {abs(upper - lower):.3e} at x0={query.x0}"
        logger.error(error_msg)
        raise RbmBranchError(error_msg)
    return upper


def rbm_density_four_term(x: float, query: RbmQuery) -> LstValue:
    """
    Density below x0 as the unsimplified sum of four exponentials, obtained by
    differentiating the survival decomposition term by term.
    """
    if not 0 <= x < query.x0:
        raise RbmError(f"Four-term form covers 0 <= x < x0, got x={x}, x0={query.x0}")
    r, alpha, beta, q = query.root, query.alpha, query.beta, query.q.scalar
    scale = _exp(-alpha * query.x0)
    return (alpha * scale * _exp(alpha * x)
            + beta * scale * _exp(-beta * x)
            - (alpha * alpha / (2.0 * r)) * scale * _exp(alpha * x)
            - (q / r) * scale * _exp(-beta * x))


def rbm_survival(x: float, query: RbmQuery) -> LstValue:
    """P_{x0}(R(e_q) > x); complex q gives the transform used for time-domain inversion."""
    if x < 0:
        raise RbmError(f"Survival point must be nonnegative, got {x}")
    r, alpha, beta = query.root, query.alpha, query.beta
    x0 = query.x0
    if x >= x0:
        return _exp(-alpha * x0 - beta * x) * (1.0 + (alpha / (2.0 * r)) * (_exp(2.0 * r * x0) - 1.0))
    return (1.0 - (beta / (2.0 * r)) * _exp(-alpha * (x0 - x))
            + (beta / (2.0 * r)) * _exp(-alpha * x0 - beta * x))


def rbm_transient_law(query: RbmQuery) -> RbmTransientLaw:
    """Law of R(e_q): no atom, density `rbm_density`."""
    return RbmTransientLaw(atom=0.0, density=lambda x: rbm_density(x, query))


def _require_real(query: RbmQuery) -> None:
    if not query.q.is_real:
        raise RbmError("Quadrature checks need a real killing rate")


def density_integral(query: RbmQuery) -> float:
    """Integral of the density over [0, x0] and [x0, x0 + 40 / beta]."""
    _require_real(query)
    upper = query.x0 + TAIL_EXPONENT / query.beta
    pieces = [(0.0, query.x0), (query.x0, upper)]
    return sum(
        quad(lambda x: rbm_density(x, query), a, b, epsabs=QUAD_ABS_TOL, limit=200)[0]
        for a, b in pieces if b > a
    )


def _characteristic(density: Callable[[float], float], omega: float, a: float, b: float) -> complex:
    if b <= a:
        return 0j
    options = dict(epsabs=QUAD_ABS_TOL, limit=200, wvar=omega)
    re_value, _ = quad(density, a, b, weight="cos", **options)
    im_value, _ = quad(density, a, b, weight="sin", **options)
    return complex(re_value, im_value)


def verify_reflected_factorization(x0: float, q: float, omegas: Sequence[float] = DEFAULT_OMEGAS,
                                   tol: float = 1e-7) -> DeviationReport:
    """
    Check E_{x0}[e^{iw R(e_q)}] = E_{x0}[e^{iw inf}] E_0[e^{iw R(e_q)}] by quadrature
    over the closed-form densities.
    """
    query = RbmQuery(x0=x0, q=q)
    origin = RbmQuery(x0=0.0, q=q)
    _require_real(query)
    infimum = rbm_infimum_law(query)
    end = x0 + TAIL_EXPONENT / query.beta
    origin_end = TAIL_EXPONENT / origin.beta

    deviations = {}
    for omega in omegas:
        start_cf = (_characteristic(lambda x: rbm_density(x, query), omega, 0.0, x0)
                    + _characteristic(lambda x: rbm_density(x, query), omega, x0, end))
        infimum_cf = infimum.atom + _characteristic(infimum.density, omega, 0.0, x0)
        origin_cf = _characteristic(lambda x: rbm_density(x, origin), omega, 0.0, origin_end)
        deviations[omega] = abs(start_cf - infimum_cf * origin_cf)
    return _report("reflected-factorization", deviations, tol, x0=x0, q=q, model="rbm")
