"""Closed-form potential theory for spherical holes.

p-capacities of balls, the radius that realizes a prescribed capacity,
fundamental-solution constants, radial barriers, singular profiles, and
exact radial solutions of Delta_p u = alpha used as solver oracles.

Two distinct normalization constants are exposed:

* ``fundamental_constant`` (c_fund) normalizes the radial fundamental
  solution so that the flux of |grad u|^{p-2} grad u through any sphere
  about the origin equals -1.
* ``radial_constant`` (c_rad) normalizes u(r) = (beta/c_rad) r^{p/(p-1)}
  so that Delta_p u is identically alpha.

They coincide for no (p, n) of interest; every function below documents
which one it uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from scipy.integrate import quad

from .errors import DomainError, QuadratureFailure

#: Absolute tolerance requested from the adaptive quadrature.
QUAD_ABS_TOL = 1e-10
#: Subinterval cap for the adaptive scheme.
QUAD_LIMIT = 200


@dataclass(frozen=True)
class PExponent:
    """Exponent pair (p, n) with 1 < p <= n and n in {2, 3}."""

    p: float
    n: int

    def __post_init__(self):
        if self.n not in (2, 3):
            raise DomainError(f"dimension must be 2 or 3, got n={self.n}")
        if not 1.0 < self.p <= self.n:
            raise DomainError(f"need 1 < p <= n, got p={self.p}, n={self.n}")

    @property
    def is_critical(self) -> bool:
        """True on the borderline p = n (logarithmic radius formula)."""
        return self.p == self.n


class ProfileKind(Enum):
    BARRIER_G = "barrier_g"
    PROFILE_H_SINGULAR = "profile_h_singular"
    BARRIER_H_ALPHA0 = "barrier_h_alpha0"
    EXACT_RADIAL = "exact_radial"


@dataclass(frozen=True)
class RadialProfile:
    """A radial function r -> value with a named construction.

    ``support_radius`` is the radius at and beyond which barrier-type
    profiles vanish (``inf`` for profiles without compact support).
    """

    kind: ProfileKind
    center: tuple
    support_radius: float
    evaluator: Callable[[float], float]
    params: dict = field(default_factory=dict)

    def __call__(self, r: float) -> float:
        return self.evaluator(r)


def unit_ball_volume(n: int) -> float:
    """Volume of the unit ball in R^n."""
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def ball_p_capacity(a: float, pe: PExponent) -> float:
    """p-capacity of a ball of radius ``a``.

    Power law n*omega_n*((n-p)/(p-1))^{p-1} a^{n-p} for p < n, and the
    logarithmic form n*omega_n*(log(1/a))^{1-n} for p = n (needs a < 1).
    """
    if a <= 0:
        raise DomainError(f"radius must be positive, got {a}")
    n, p = pe.n, pe.p
    nwn = n * unit_ball_volume(n)
    if pe.is_critical:
        if a >= 1:
            raise DomainError(f"p = n capacity needs radius < 1, got {a}")
        return nwn * math.log(1.0 / a) ** (1 - n)
    return nwn * ((n - p) / (p - 1)) ** (p - 1) * a ** (n - p)


def ball_p_capacity_log(log_a: float, pe: PExponent) -> float:
    """p-capacity of a ball given log(radius).

    The p = n branch shrinks radii like exp(-C eps^{-n/(n-1)}), which
    underflows float64 long before the capacity itself degenerates; this
    entry point keeps the round trip exact in that regime.
    """
    n, p = pe.n, pe.p
    nwn = n * unit_ball_volume(n)
    if pe.is_critical:
        if log_a >= 0:
            raise DomainError(f"p = n capacity needs log radius < 0, got {log_a}")
        return nwn * (-log_a) ** (1 - n)
    return nwn * ((n - p) / (p - 1)) ** (p - 1) * math.exp((n - p) * log_a)


def log_radius_for_capacity(gamma: float, eps: float, pe: PExponent) -> float:
    """log of the radius with capacity gamma * eps^n; never underflows."""
    if gamma <= 0:
        raise DomainError(f"capacity density must be > 0, got {gamma}")
    if eps <= 0:
        raise DomainError(f"cell size must be positive, got {eps}")
    n, p = pe.n, pe.p
    nwn = n * unit_ball_volume(n)
    if pe.is_critical:
        return -((gamma / nwn) ** (-1.0 / (n - 1))) * eps ** (-n / (n - 1))
    return (
        math.log(gamma / nwn) / (n - p)
        + ((1 - p) / (n - p)) * math.log((n - p) / (p - 1))
        + (n / (n - p)) * math.log(eps)
    )


def radius_for_capacity(
    gamma: float, eps: float, pe: PExponent, check_fit: bool = True
) -> float:
    """Radius a with ball_p_capacity(a) = gamma * eps^n.

    A zero capacity density produces no hole (radius 0).  Raises
    DomainError when the radius would reach half the cell size, i.e. the
    hole would overflow its lattice cell; pass ``check_fit=False`` to
    evaluate the bare formula.
    """
    if gamma < 0:
        raise DomainError(f"capacity density must be >= 0, got {gamma}")
    if eps <= 0:
        raise DomainError(f"cell size must be positive, got {eps}")
    if gamma == 0.0:
        return 0.0
    n, p = pe.n, pe.p
    nwn = n * unit_ball_volume(n)
    if pe.is_critical:
        a = math.exp(-((gamma / nwn) ** (-1.0 / (n - 1))) * eps ** (-n / (n - 1)))
    else:
        a = (
            (gamma / nwn) ** (1.0 / (n - p))
            * ((n - p) / (p - 1)) ** ((1 - p) / (n - p))
            * eps ** (n / (n - p))
        )
    if check_fit and a >= eps / 2:
        raise DomainError(
            f"hole radius {a:.6g} >= eps/2 = {eps / 2:.6g} "
            f"(gamma={gamma:.6g}, eps={eps:.6g}); shrink gamma or eps"
        )
    return a


def fundamental_constant(pe: PExponent) -> float:
    """Constant c_fund giving the radial field unit flux.

    The field c^{1/(p-1)} |x|^{(p-n)/(p-1)} (or c^{1/(n-1)} log(1/|x|)
    for p = n) then carries flux -1 through every sphere about 0.
    """
    n, p = pe.n, pe.p
    nwn = n * unit_ball_volume(n)
    if pe.is_critical:
        return 1.0 / nwn
    return ((p - 1) / (n - p)) ** (p - 1) / nwn


def radial_constant(pe: PExponent) -> float:
    """Constant c_rad with Delta_p {(beta/c_rad) r^{p/(p-1)}} = |beta|^{p-2} beta."""
    p, n = pe.p, pe.n
    return (p / (p - 1)) * n ** (1.0 / (p - 1))


def _adaptive_quad(integrand, lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.0
    value, abserr = quad(
        integrand, lo, hi, epsabs=QUAD_ABS_TOL, epsrel=1e-12, limit=QUAD_LIMIT
    )
    if not math.isfinite(value) or abserr > 1e-7 * max(1.0, abs(value)):
        raise QuadratureFailure(
            f"quadrature on [{lo:.3g}, {hi:.3g}] stalled: "
            f"value={value:.6g}, abserr={abserr:.3g}"
        )
    return value


def _cell_barrier_integrand(gamma: float, eps: float, alpha: float, pe: PExponent):
    c = fundamental_constant(pe)
    n, p = pe.n, pe.p
    src = c * gamma * eps**n

    def integrand(s):
        # Round-off can push the bracket slightly negative at the zero of
        # the integrand; clamp rather than feed a negative base to **.
        base = src * s ** (1 - n) - (alpha / n) * s
        return max(base, 0.0) ** (1.0 / (p - 1))

    return integrand


def barrier_support_radius(gamma: float, alpha: float, pe: PExponent) -> float:
    """Radius a = (n c gamma / alpha)^{1/n} where the barrier integrand vanishes."""
    if alpha <= 0:
        raise DomainError(f"barrier needs alpha > 0, got {alpha}")
    c = fundamental_constant(pe)
    return (pe.n * c * gamma / alpha) ** (1.0 / pe.n)


def barrier_g(r: float, gamma: float, eps: float, alpha: float, pe: PExponent) -> float:
    """Supersolution barrier for one cell: integral of the radial flux balance.

    Integrates (c gamma eps^n s^{1-n} - (alpha/n) s)^{1/(p-1)} from r up to
    a*eps with a = (n c gamma / alpha)^{1/n}; zero at and beyond a*eps.
    Diverges as r -> 0 (returns inf there).
    """
    if r < 0:
        raise DomainError(f"radius must be >= 0, got {r}")
    if gamma == 0.0:
        return 0.0
    a = barrier_support_radius(gamma, alpha, pe)
    upper = a * eps
    if r >= upper:
        return 0.0
    if r == 0.0:
        return math.inf
    return _adaptive_quad(_cell_barrier_integrand(gamma, eps, alpha, pe), r, upper)


def singular_profile_h(r: float, gamma: float, eps: float, pe: PExponent) -> float:
    """Singular near-hole profile, normalized to 1 at the capacity radius.

    c^{1/(p-1)} gamma^{1/(p-1)} eps^{n/(p-1)} r^{(p-n)/(p-1)} for p < n and
    -c^{1/(n-1)} gamma^{1/(n-1)} eps^{n/(n-1)} log r for p = n, with
    c = fundamental_constant.
    """
    if r <= 0:
        raise DomainError(f"profile is singular at r = 0; got r={r}")
    c = fundamental_constant(pe)
    n, p = pe.n, pe.p
    if pe.is_critical:
        amp = (c * gamma) ** (1.0 / (n - 1)) * eps ** (n / (n - 1))
        return -amp * math.log(r)
    amp = (c * gamma) ** (1.0 / (p - 1)) * eps ** (n / (p - 1))
    return amp * r ** ((p - n) / (p - 1))


def barrier_h_alpha0(
    r: float, gamma: float, eps: float, alpha0: float, pe: PExponent
) -> float:
    """Truncated cell barrier used near the critical bulk coefficient.

    Same integrand as barrier_g but integrated up to min(b, 1/2) * eps with
    b = (n c gamma / alpha0)^{1/n}; zero beyond that support radius.
    """
    if r < 0:
        raise DomainError(f"radius must be >= 0, got {r}")
    if gamma == 0.0:
        return 0.0
    b = barrier_support_radius(gamma, alpha0, pe)
    upper = min(b, 0.5) * eps
    if r >= upper:
        return 0.0
    if r == 0.0:
        return math.inf
    return _adaptive_quad(_cell_barrier_integrand(gamma, eps, alpha0, pe), r, upper)


def exact_radial_solution(
    alpha: float, x0: tuple, R: float, pe: PExponent
) -> RadialProfile:
    """Exact radial solution of Delta_p u = alpha vanishing at radius R.

    u(r) = (beta/c_rad) (r^{p/(p-1)} - R^{p/(p-1)}) with beta chosen so
    that |beta|^{p-2} beta = alpha and c_rad = radial_constant (NOT the
    fundamental-solution constant).
    """
    if alpha == 0:
        raise DomainError("alpha must be nonzero")
    p = pe.p
    beta = math.copysign(abs(alpha) ** (1.0 / (p - 1)), alpha)
    c_rad = radial_constant(pe)
    expo = p / (p - 1)

    def evaluator(r: float) -> float:
        return (beta / c_rad) * (r**expo - R**expo)

    return RadialProfile(
        kind=ProfileKind.EXACT_RADIAL,
        center=tuple(x0),
        support_radius=math.inf,
        evaluator=evaluator,
        params={"alpha": alpha, "R": R, "beta": beta, "c_rad": c_rad},
    )
