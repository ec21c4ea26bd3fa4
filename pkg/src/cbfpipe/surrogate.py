"""Closed-form safety-loss surrogate and its analytic bounds.

The surrogate maps (obstacle distance, relative heading, constraint margin)
to a positive risk score

    lam1 * exp(-lam2 * psi) / (beta1 * exp(-beta2 * (cos(dtheta) + 1)) * d^2 + 1)

On a bounded operating domain the denominator is sandwiched between two
constants, which yields two-sided bounds between the score and the margin
and an invertible relation between score error and margin error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def calibrate_denominator(
    d_min: float,
    d_max: float,
    target_d_lo: float = 1.08,
    target_d_hi: float = 26.3,
) -> tuple[float, float]:
    """Solve for (beta1, beta2) hitting given denominator bounds on [d_min, d_max].

    The upper bound pins beta1 = (target_d_hi - 1) / d_max^2; the lower bound
    then determines beta2.  Requires 1 < target_d_lo and
    target_d_lo - 1 < beta1 * d_min^2.
    """
    if not (0.0 < d_min < d_max):
        raise ValueError("need 0 < d_min < d_max")
    if not (1.0 < target_d_lo < target_d_hi):
        raise ValueError("need 1 < target_d_lo < target_d_hi")
    beta1 = (target_d_hi - 1.0) / (d_max * d_max)
    ratio = (target_d_lo - 1.0) / (beta1 * d_min * d_min)
    if not (0.0 < ratio < 1.0):
        raise ValueError("targets not achievable on this distance range")
    beta2 = -0.5 * math.log(ratio)
    return beta1, beta2


DEFAULT_BETA1, DEFAULT_BETA2 = calibrate_denominator(0.65, 2.5)


@dataclass(frozen=True)
class SurrogateParams:
    """Design parameters of the safety-loss surrogate.

    lam1, lam2 must be positive; beta1, beta2 may be zero, which degenerates
    the denominator to 1 (a useful analytic limiting case).  The defaults
    calibrate the denominator bounds to (1.08, 26.3) on distances
    [0.65, 2.5] with lam1 = lam2 = 1.
    """

    lam1: float = 1.0
    lam2: float = 1.0
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2

    def __post_init__(self):
        if self.lam1 <= 0 or self.lam2 <= 0:
            raise ValueError("lam1 and lam2 must be positive")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("beta1 and beta2 must be non-negative")


@dataclass(frozen=True)
class DomainBounds:
    """Operating-domain box: obstacle distance and barrier-parameter ranges."""

    d_min: float = 0.65
    d_max: float = 2.5
    gamma_min: float = 0.5
    gamma_max: float = 2.5

    def __post_init__(self):
        if not (0.0 < self.d_min < self.d_max):
            raise ValueError("need 0 < d_min < d_max")
        if not (0.0 < self.gamma_min < self.gamma_max):
            raise ValueError("need 0 < gamma_min < gamma_max")


@dataclass(frozen=True)
class PhiInputs:
    d: float
    delta_theta: float
    psi: float


def phi_value(d, delta_theta, psi, p: SurrogateParams):
    """Raw surrogate formula; accepts scalars or arrays, no domain check.

    Used for episode labelling where states may leave the operating domain.
    """
    denom = p.beta1 * np.exp(-p.beta2 * (np.cos(delta_theta) + 1.0)) * np.square(d) + 1.0
    return p.lam1 * np.exp(-p.lam2 * np.asarray(psi, dtype=float)) / denom


def phi(inp: PhiInputs, p: SurrogateParams, b: DomainBounds) -> float:
    """Domain-checked surrogate value; the analytic bounds apply only here."""
    if not (b.d_min <= inp.d <= b.d_max):
        raise ValueError(f"distance {inp.d} outside [{b.d_min}, {b.d_max}]")
    if not (0.0 <= inp.delta_theta <= math.pi):
        raise ValueError(f"relative heading {inp.delta_theta} outside [0, pi]")
    return float(phi_value(inp.d, inp.delta_theta, inp.psi, p))


def denominator_bounds(b: DomainBounds, p: SurrogateParams) -> tuple[float, float]:
    """(D_lo, D_hi): extremes of the surrogate denominator over the domain.

    The denominator is smallest head-on at minimum distance and largest
    tail-on at maximum distance.
    """
    d_lo = p.beta1 * math.exp(-2.0 * p.beta2) * b.d_min * b.d_min + 1.0
    d_hi = p.beta1 * b.d_max * b.d_max + 1.0
    return d_lo, d_hi


def two_sided_bounds(psi, b: DomainBounds, p: SurrogateParams):
    """Lower/upper envelopes of the surrogate at a given margin value."""
    d_lo, d_hi = denominator_bounds(b, p)
    core = p.lam1 * np.exp(-p.lam2 * np.asarray(psi, dtype=float))
    return core / d_hi, core / d_lo


def invert_psi_error(
    eps_phi: float, psi_max_hat: float, b: DomainBounds, p: SurrogateParams
) -> float:
    """Margin-error bound implied by a surrogate-error bound.

    psi_max_hat must dominate both the true and the perturbed margin for the
    bound to be valid; see psi_upper_from_phi for how to obtain one.
    """
    if eps_phi < 0:
        raise ValueError("eps_phi must be non-negative")
    _, d_hi = denominator_bounds(b, p)
    return (1.0 / p.lam2) * math.log1p(
        d_hi * math.exp(p.lam2 * psi_max_hat) / p.lam1 * eps_phi
    )


def psi_upper_from_phi(phi_hat: float, b: DomainBounds, p: SurrogateParams) -> float:
    """Largest margin consistent with an in-domain surrogate value.

    Inverts the upper envelope: any in-domain pair with surrogate value
    phi_hat has margin at most -(1/lam2) * ln(phi_hat * D_lo / lam1).  The
    orientation is fixed by sampling (true margins never exceed the bound),
    not by symbol manipulation.
    """
    if phi_hat <= 0:
        raise ValueError("phi_hat must be positive")
    d_lo, _ = denominator_bounds(b, p)
    return -(1.0 / p.lam2) * math.log(phi_hat * d_lo / p.lam1)
