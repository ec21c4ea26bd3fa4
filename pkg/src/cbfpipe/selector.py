"""Smooth parameter selection over a candidate grid.

Candidates are weighted by exp(J / tau_s - kappa * softplus(predicted risk)),
where J favors aggressive parameters, then blended as a convex combination.
Uncertainty filters enter as multiplicative sigmoid gates on the weights (and
as hard pass/fail masks for diagnostics), so the selection stays smooth and
its Lipschitz constant in the predicted risk is kappa * diam of the grid box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .dynamics import GammaPair
from .ensemble import EnsembleModel, cvar_gaussian, jrd_batch, member_outputs, pool_variance
from .surrogate import DomainBounds


@dataclass(frozen=True)
class CandidateGrid:
    candidates: tuple[GammaPair, ...]

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("candidate grid must be nonempty")

    @staticmethod
    def uniform(n: int = 7, lo: float = 0.5, hi: float = 2.5) -> "CandidateGrid":
        vals = np.linspace(lo, hi, n)
        return CandidateGrid(
            candidates=tuple(GammaPair(float(a), float(b)) for a in vals for b in vals)
        )

    def as_array(self) -> np.ndarray:
        return np.array([(g.gamma0, g.gamma1) for g in self.candidates])


@dataclass(frozen=True)
class SelectorParams:
    tau_s: float = 0.5
    kappa: float = 0.5
    jrd_max: float = 2.0
    cvar_alpha: float = 0.95
    cvar_max: float = 60.0
    gate_width_frac: float = 0.05

    def __post_init__(self):
        if self.tau_s <= 0 or self.kappa < 0:
            raise ValueError("tau_s must be positive and kappa non-negative")
        if not (0.0 < self.cvar_alpha < 1.0):
            raise ValueError("cvar_alpha must lie in (0, 1)")


def aggressiveness(g: GammaPair) -> float:
    """Aggressiveness criterion: larger means a less conservative pair."""
    return g.gamma0 + g.gamma1


def softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return expit(np.asarray(x, dtype=float))


def filter_mask(
    jrd_values: np.ndarray, cvar_values: np.ndarray, p: SelectorParams
) -> tuple[np.ndarray, np.ndarray]:
    """Hard pass/fail mask and the smooth gate value per candidate."""
    jrd_values = np.asarray(jrd_values, dtype=float)
    cvar_values = np.asarray(cvar_values, dtype=float)
    mask = (jrd_values <= p.jrd_max) & (cvar_values <= p.cvar_max)
    w_jrd = p.gate_width_frac * abs(p.jrd_max)
    w_cvar = p.gate_width_frac * abs(p.cvar_max)
    gate = _sigmoid((p.jrd_max - jrd_values) / max(w_jrd, 1e-12)) * _sigmoid(
        (p.cvar_max - cvar_values) / max(w_cvar, 1e-12)
    )
    return mask, gate


def select_from_predictions(
    mu_phi: np.ndarray,
    jrd_values: np.ndarray,
    cvar_values: np.ndarray,
    grid: CandidateGrid,
    p: SelectorParams,
) -> GammaPair:
    """Convex combination of candidates under smooth risk-suppressed weights.

    The result always lies in the convex hull of the grid.  At fixed gate
    inputs the map from mu_phi to the selection is Lipschitz with constant
    kappa * sqrt(2) * (grid range).
    """
    gamma = grid.as_array()
    mu_phi = np.asarray(mu_phi, dtype=float)
    _, gate = filter_mask(jrd_values, cvar_values, p)
    j = gamma.sum(axis=1)
    log_w = j / p.tau_s - p.kappa * softplus(mu_phi)
    log_w = log_w - log_w.max()
    w = np.exp(log_w) * np.maximum(gate, 1e-300)
    w_sum = w.sum()
    sel = (gamma * w[:, None]).sum(axis=0) / w_sum
    # the true convex combination lies in the box; clip away rounding dust
    sel = np.clip(sel, gamma.min(axis=0), gamma.max(axis=0))
    return GammaPair(float(sel[0]), float(sel[1]))


def candidate_predictions(model: EnsembleModel, s, grid: CandidateGrid, p: SelectorParams):
    """(mu_phi, jrd, cvar) arrays for one feature triple across the grid."""
    gamma = grid.as_array()
    n = gamma.shape[0]
    x = np.column_stack(
        [np.full(n, s[0]), np.full(n, s[1]), np.full(n, s[2]), gamma[:, 0], gamma[:, 1]]
    )
    out = member_outputs(model, x)
    mus = out[:, :, 0]
    variances = out[:, :, 1]
    mu_phi = mus.mean(axis=0)
    var_phi = pool_variance(mus, variances, axis=0)
    jrd_values = jrd_batch(mus, variances) if mus.shape[0] >= 2 else np.zeros(n)
    cvar_values = cvar_gaussian(mu_phi, var_phi, p.cvar_alpha)
    return mu_phi, jrd_values, cvar_values


def smooth_select(s, model: EnsembleModel, grid: CandidateGrid, p: SelectorParams) -> GammaPair:
    """Select parameters for a feature triple using the learned predictor."""
    mu_phi, jrd_values, cvar_values = candidate_predictions(model, s, grid, p)
    return select_from_predictions(mu_phi, jrd_values, cvar_values, grid, p)


def lipschitz_constant(p: SelectorParams, bounds: DomainBounds) -> float:
    """Selection sensitivity bound: kappa times the diameter of the gamma box."""
    return p.kappa * math.sqrt(2.0) * (bounds.gamma_max - bounds.gamma_min)
