"""Analytic constants, error budgets, and certification checks.

Pure arithmetic over envelope statistics and margin grids: Lipschitz bounds
for the constraint margin in the barrier parameters, the prediction-error
budget that preserves a given oracle margin, the admissible sampling period,
a covering-argument probability floor, certified state-set masks, and the
constraint-perturbation feasibility check.  Everything here is deterministic
given its inputs; estimating the inputs (envcounters, sigma, epsilon) is the
caller's job and their provenance is recorded in the report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .surrogate import DomainBounds


@dataclass(frozen=True)
class StateEnvelope:
    """Bounds on barrier quantities over the operating domain.

    h_max, hdot_max bound |h| and |h_dot|; lgh_max bounds the direct input
    coupling of h_dot (identically zero for the planar unicycle barrier);
    u_max bounds the input norm; v_psi bounds |d psi / dt| along closed-loop
    trajectories; l_e and sigma describe the prediction-error field.
    """

    h_max: float
    hdot_max: float
    lgh_max: float = 0.0
    u_max: float = math.sqrt(2.0)
    v_psi: float = 0.0
    l_e: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        for name in ("h_max", "hdot_max", "lgh_max", "u_max", "v_psi", "l_e", "sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def lipschitz_psi(env: StateEnvelope, bounds: DomainBounds) -> float:
    """Margin sensitivity in the barrier parameters over the envelope."""
    return 2.0 * env.hdot_max + 2.0 * bounds.gamma_max * env.h_max + env.h_max


def lipschitz_constraint(env: StateEnvelope, bounds: DomainBounds) -> float:
    """Parameter sensitivity of the full constraint function, uniform in u."""
    return 2.0 * (env.hdot_max + env.lgh_max * env.u_max + bounds.gamma_max * env.h_max)


def safety_budget(delta_min: float, l_psi: float, l_m: float) -> float:
    """Largest uniform prediction error preserving a positive margin."""
    if delta_min <= 0 or l_psi <= 0 or l_m <= 0:
        raise ValueError("all inputs must be positive")
    return delta_min / (l_psi * l_m)


def required_margin(eps: float, l_psi: float, l_m: float) -> float:
    """Oracle margin needed to tolerate a uniform prediction error."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    return l_psi * l_m * eps


def sampling_bound(
    delta_min: float, eps: float, l_psi: float, l_m: float, v_psi: float
) -> float:
    """Largest sampling period preserving inter-sample safety."""
    if v_psi <= 0:
        raise ValueError("v_psi must be positive")
    degraded = delta_min - l_psi * l_m * eps
    if degraded < 0:
        raise ValueError(
            f"margin exhausted: degraded margin {degraded:.6g} < 0, "
            "no admissible sampling period"
        )
    return degraded / v_psi


def covering_probability(
    eps: float,
    r: float,
    env: StateEnvelope,
    n_dim: int,
    n_candidates: int,
    diam_op: float,
) -> float:
    """Lower bound on the probability that the error field stays under eps.

    Uses the volumetric covering count (diam/r)^n and a sub-Gaussian tail at
    each center; requires eps > l_e * r.  The result is clamped at zero; a
    zero return means the bound is vacuous at these inputs.
    """
    if r <= 0 or diam_op <= 0 or n_dim < 1 or n_candidates < 1:
        raise ValueError("invalid covering geometry")
    if env.sigma <= 0:
        return 1.0
    if eps <= env.l_e * r:
        raise ValueError(f"need eps > l_e * r = {env.l_e * r:.6g}, got {eps:.6g}")
    m = (diam_op / r) ** n_dim
    bound = 1.0 - 2.0 * m * n_candidates * math.exp(
        -((eps - env.l_e * r) ** 2) / (2.0 * env.sigma**2)
    )
    return max(0.0, bound)


def certified_set(
    oracle_margins: np.ndarray, eps: float, l_psi: float, l_m: float
) -> tuple[np.ndarray, float]:
    """Mask of grid states whose oracle margin survives the error degradation."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    margins = np.asarray(oracle_margins, dtype=float)
    mask = margins >= l_psi * l_m * eps
    return mask, float(np.mean(mask))


def qp_feasibility_check(
    margins_mu: np.ndarray, eps: float, l_constraint: float, l_m: float
) -> tuple[bool, float]:
    """Constraint-perturbation test: degradation must stay under inf mu."""
    inf_mu = float(np.min(np.asarray(margins_mu, dtype=float)))
    slack = inf_mu - l_constraint * l_m * eps
    return slack > 0.0, slack


def delta_min_lower_bound(
    oracle_margins: np.ndarray, r: float, l_psi: float, l_m: float, l_phi_true: float
) -> float:
    """Covering-based lower bound on the oracle margin from grid samples.

    Valid when the grid is an r-covering of the evaluated region; the
    penalty term uses an estimated Lipschitz constant of the true surrogate
    in the state, so the result is an estimate, not a certificate.
    """
    if r < 0:
        raise ValueError("r must be non-negative")
    return float(np.min(np.asarray(oracle_margins, dtype=float))) - l_psi * l_m * l_phi_true * r


@dataclass
class CertificateReport:
    """All constants and condition outcomes for one configuration."""

    l_psi: float
    l_m: float
    l_constraint: float
    d_lo: float
    d_hi: float
    eps_baseline: float
    eps_curated: float
    eps_convention: str
    eps_budget: float | None
    delta_req_baseline: float
    delta_req_curated: float
    margin_reduction_pct: float
    delta_min_grid: float
    delta_min_covering: float
    dt_max: float | None
    prob_lower_baseline: float | None
    prob_lower_curated: float | None
    certified_fraction_baseline: float
    certified_fraction_curated: float
    qp_feasibility_ok: bool
    qp_feasibility_slack: float
    provenance: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        doc = {"version": 1, "kind": "certificate"}
        for k, v in self.__dict__.items():
            doc[k] = v
        return json.dumps(doc, sort_keys=True, separators=(",", ":"), default=float)


def build_report(
    *,
    env: StateEnvelope,
    bounds: DomainBounds,
    d_lo: float,
    d_hi: float,
    l_m: float,
    eps_baseline: float,
    eps_curated: float,
    eps_convention: str,
    oracle_margins: np.ndarray,
    margins_mu: np.ndarray,
    covering_r: float,
    l_phi_true: float,
    n_dim: int,
    n_candidates: int,
    diam_op: float,
    provenance: dict | None = None,
) -> CertificateReport:
    """Assemble the certificate from measured inputs.

    The margin-reduction percentage compares required margins at the two
    measured errors; probability floors are evaluated at the larger of the
    measured error and the vacuity threshold of the covering bound.
    """
    l_psi = lipschitz_psi(env, bounds)
    l_con = lipschitz_constraint(env, bounds)
    delta_grid = float(np.min(np.asarray(oracle_margins, dtype=float)))
    delta_cover = delta_min_lower_bound(oracle_margins, covering_r, l_psi, l_m, l_phi_true)

    notes = []
    d_req_base = required_margin(eps_baseline, l_psi, l_m)
    d_req_cur = required_margin(eps_curated, l_psi, l_m)
    reduction = 100.0 * (1.0 - d_req_cur / d_req_base) if d_req_base > 0 else 0.0

    eps_budget = None
    dt_max = None
    if delta_grid > 0:
        eps_budget = safety_budget(delta_grid, l_psi, l_m)
        if env.v_psi > 0 and delta_grid > required_margin(eps_curated, l_psi, l_m):
            dt_max = sampling_bound(delta_grid, eps_curated, l_psi, l_m, env.v_psi)
        else:
            notes.append("sampling bound skipped: degraded margin not positive")
    else:
        notes.append("oracle margin grid not positive; budget undefined")

    prob_base = prob_cur = None
    if env.sigma > 0:
        try:
            prob_base = covering_probability(
                eps_baseline, covering_r, env, n_dim, n_candidates, diam_op
            )
            prob_cur = covering_probability(
                eps_curated, covering_r, env, n_dim, n_candidates, diam_op
            )
            if prob_base == 0.0 or prob_cur == 0.0:
                notes.append("covering probability clamped at zero (vacuous bound)")
        except ValueError as err:
            notes.append(f"covering probability unavailable: {err}")

    _, frac_base = certified_set(oracle_margins, eps_baseline, l_psi, l_m)
    _, frac_cur = certified_set(oracle_margins, eps_curated, l_psi, l_m)
    ok, slack = qp_feasibility_check(margins_mu, eps_curated, l_con, l_m)

    notes.append(
        "margin-error composition uses the surrogate-error inversion with a "
        "dominated margin bound; see surrogate.invert_psi_error"
    )
    return CertificateReport(
        l_psi=l_psi,
        l_m=l_m,
        l_constraint=l_con,
        d_lo=d_lo,
        d_hi=d_hi,
        eps_baseline=eps_baseline,
        eps_curated=eps_curated,
        eps_convention=eps_convention,
        eps_budget=eps_budget,
        delta_req_baseline=d_req_base,
        delta_req_curated=d_req_cur,
        margin_reduction_pct=reduction,
        delta_min_grid=delta_grid,
        delta_min_covering=delta_cover,
        dt_max=dt_max,
        prob_lower_baseline=prob_base,
        prob_lower_curated=prob_cur,
        certified_fraction_baseline=frac_base,
        certified_fraction_curated=frac_cur,
        qp_feasibility_ok=ok,
        qp_feasibility_slack=slack,
        provenance=provenance or {},
        notes=notes,
    )


# ---------------------------------------------------------------------------
# estimation of envelope inputs (labeled as estimates in the report)
# ---------------------------------------------------------------------------


def estimate_lipschitz_quotient(
    x: np.ndarray, values: np.ndarray, n_pairs: int = 20000, seed: int = 0
) -> float:
    """Largest sampled difference quotient |f(a) - f(b)| / |a - b|."""
    x = np.asarray(x, dtype=float)
    values = np.asarray(values, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x11D]))
    i = rng.integers(0, n, size=n_pairs)
    j = rng.integers(0, n, size=n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    dist = np.linalg.norm(x[i] - x[j], axis=1)
    keep = dist > 1e-9
    return float(np.max(np.abs(values[i[keep]] - values[j[keep]]) / dist[keep]))


def fit_sigma(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_eval: np.ndarray,
    train_cfg,
    seed: int,
    n_retrains: int = 10,
    quantile: float = 0.95,
):
    """Sub-Gaussian scale estimate from independent retrains at fixed data.

    Retrains the ensemble with distinct seeds, collects the pooled mean
    prediction at every evaluation point, and returns the given quantile of
    the per-point standard deviation.  An estimate, not a certificate.
    """
    from .ensemble import predict_batch, train  # local import avoids a cycle

    preds = []
    for r in range(n_retrains):
        model, _ = train(x_train, y_train, train_cfg, seed=seed + 1000 + r)
        preds.append(predict_batch(model, x_eval)[0])
    per_point_sd = np.std(np.stack(preds), axis=0)
    return float(np.quantile(per_point_sd, quantile)), per_point_sd


def envelope_from_sweep(
    sweep,
    u_max: float,
    inflation: float = 0.1,
    l_e: float = 0.0,
    sigma: float = 0.0,
) -> StateEnvelope:
    """Envelope from generation-sweep extrema, inflated by a safety factor."""
    f = 1.0 + inflation
    return StateEnvelope(
        h_max=f * sweep.max_abs_h,
        hdot_max=f * sweep.max_abs_hdot,
        lgh_max=0.0,
        u_max=u_max,
        v_psi=f * sweep.max_abs_psi_rate,
        l_e=l_e,
        sigma=sigma,
    )
