"""Randomized single-obstacle episode sweep producing labeled samples.

Each episode draws initial conditions (obstacle distance, speed, relative
heading) and a fixed parameter pair, runs the safety-filtered nominal
controller to a goal, and records the worst surrogate value seen along the
trajectory together with the time to reach the goal and an outcome tag.
Generation is a pure function of (seed, config); episodes use per-episode
substreams so they can run on workers and merge deterministically by id.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .dynamics import (
    ControlInput,
    GammaPair,
    InputBounds,
    Obstacle,
    RobotState,
    eval_barrier,
    features,
    psi,
    step,
    wrap_angle,
)
from .ensemble import EnsembleModel, member_outputs, pool_variance
from .surrogate import SurrogateParams, phi_value

OUTCOMES = ("success", "collision", "deadlock")


@dataclass(frozen=True)
class GenerationConfig:
    d_range: tuple[float, float] = (0.65, 2.5)
    v_range: tuple[float, float] = (0.01, 1.0)
    dtheta_range: tuple[float, float] = (0.01, math.pi / 2)
    gamma_range: tuple[float, float] = (0.5, 2.5)
    obstacle_radius: float = 0.4
    robot_radius: float = 0.25
    goal_distance: float = 5.0
    goal_tol: float = 0.3
    horizon: float = 20.0
    dt: float = 0.05
    a_max: float = 1.0
    omega_max: float = 1.0
    k_theta: float = 2.0
    k_v: float = 1.0
    v_ref: float = 1.0

    @property
    def inflated_radius(self) -> float:
        return self.obstacle_radius + self.robot_radius

    def bounds(self) -> InputBounds:
        return InputBounds(a_max=self.a_max, omega_max=self.omega_max)


@dataclass(frozen=True)
class WorstStep:
    """Features of the step achieving the episode's maximum surrogate value."""

    d: float
    delta_theta: float
    psi: float


@dataclass(frozen=True)
class LabeledSample:
    id: int
    s: tuple[float, float, float]
    gamma: tuple[float, float]
    phi_label: float
    td_label: float
    outcome: str
    worst: WorstStep | None = None

    def feature_row(self) -> np.ndarray:
        return np.array([self.s[0], self.s[1], self.s[2], self.gamma[0], self.gamma[1]])


@dataclass(frozen=True)
class Dataset:
    samples: tuple[LabeledSample, ...]
    seed: int
    config_hash: str

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.phi_label for s in self.samples])


def nominal_control(state: RobotState, goal: tuple[float, float], cfg: GenerationConfig) -> ControlInput:
    """Proportional heading/speed controller toward the goal point."""
    heading_err = wrap_angle(math.atan2(goal[1] - state.y, goal[0] - state.x) - state.theta)
    omega = cfg.k_theta * heading_err
    accel = cfg.k_v * (cfg.v_ref - state.v)
    return cfg.bounds().clip(ControlInput(accel, omega))


@dataclass
class EpisodeStats:
    """Envelope statistics accumulated along one labeled episode.

    Extrema are taken only over states inside the operating distance band,
    which is the region the certificate speaks about; excursions beyond it
    (goal overshoot, post-encounter wandering) do not inflate the envelope.
    """

    max_abs_h: float = 0.0
    max_abs_hdot: float = 0.0
    max_abs_psi_rate: float = 0.0
    infeasible_steps: int = 0


def run_labeled_episode(
    init_state: RobotState,
    obstacle: Obstacle,
    goal: tuple[float, float],
    gamma: GammaPair,
    cfg: GenerationConfig,
    sp: SurrogateParams,
) -> tuple[float, float, str, WorstStep, EpisodeStats]:
    """Run one safety-filtered episode and label it.

    The label is the maximum surrogate value over the trajectory.  The
    surrogate's margin argument is the constraint value under the nominal
    (unfiltered) control: the filtered margin is clamped non-negative by the
    QP whenever it is feasible, which would saturate the label, whereas the
    nominal margin measures how hard the chosen parameters stress the
    constraint.  Episodes end at the first barrier violation (collision), at
    the goal, or at the horizon.
    """
    bounds = cfg.bounds()
    state = init_state
    n_steps = int(round(cfg.horizon / cfg.dt))
    stats = EpisodeStats()
    best_phi = -np.inf
    worst = None
    td = cfg.horizon
    outcome = None
    prev_psi = None

    for k in range(n_steps):
        be = eval_barrier(state, obstacle)
        if be.h < 0.0:
            outcome = "collision"
            break
        d, v, dtheta = features(state, obstacle)
        if math.hypot(goal[0] - state.x, goal[1] - state.y) <= cfg.goal_tol:
            td = k * cfg.dt
            outcome = "success"
            break
        u_nom = nominal_control(state, goal, cfg)
        problem = qp.build_qp(be, u_nom, gamma, bounds)
        try:
            u = qp.solve(problem).u
        except qp.QpInfeasibleError as err:
            u = err.u_best
            stats.infeasible_steps += 1
        psi_nominal = psi(be, u_nom, gamma)
        phi_here = float(phi_value(d, dtheta, psi_nominal, sp))
        if phi_here > best_phi:
            best_phi = phi_here
            worst = WorstStep(d=d, delta_theta=dtheta, psi=psi_nominal)
        psi_applied = psi(be, u, gamma)
        if cfg.d_range[0] <= d <= cfg.d_range[1]:
            stats.max_abs_h = max(stats.max_abs_h, abs(be.h))
            stats.max_abs_hdot = max(stats.max_abs_hdot, abs(be.h_dot))
            if prev_psi is not None:
                stats.max_abs_psi_rate = max(
                    stats.max_abs_psi_rate, abs(psi_applied - prev_psi) / cfg.dt
                )
            prev_psi = psi_applied
        else:
            prev_psi = None
        state = step(state, u, cfg.dt)

    if outcome is None:
        be = eval_barrier(state, obstacle)
        if be.h < 0.0:
            outcome = "collision"
        elif math.hypot(goal[0] - state.x, goal[1] - state.y) <= cfg.goal_tol:
            outcome = "success"
            td = n_steps * cfg.dt
        else:
            outcome = "deadlock"

    if worst is None:
        # pathological zero-length episode: label from the initial state
        d, v, dtheta = features(init_state, obstacle)
        be = eval_barrier(init_state, obstacle)
        psi0 = psi(be, nominal_control(init_state, goal, cfg), gamma)
        best_phi = float(phi_value(d, dtheta, psi0, sp))
        worst = WorstStep(d=d, delta_theta=dtheta, psi=psi0)
    return best_phi, td, outcome, worst, stats


def _episode_setup(seed: int, episode_id: int, cfg: GenerationConfig):
    """Draw one episode's initial conditions from its private substream."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(episode_id)]))
    d0 = rng.uniform(*cfg.d_range)
    v0 = rng.uniform(*cfg.v_range)
    dtheta0 = rng.uniform(*cfg.dtheta_range)
    side = 1.0 if rng.uniform() < 0.5 else -1.0
    g0 = rng.uniform(*cfg.gamma_range)
    g1 = rng.uniform(*cfg.gamma_range)
    state = RobotState(0.0, 0.0, 0.0, v0)
    bearing = side * dtheta0
    center_dist = d0 + cfg.inflated_radius
    obstacle = Obstacle(
        cx=center_dist * math.cos(bearing),
        cy=center_dist * math.sin(bearing),
        radius=cfg.inflated_radius,
    )
    goal = (cfg.goal_distance, 0.0)
    return state, obstacle, goal, (d0, v0, dtheta0), GammaPair(g0, g1)


def _make_sample(args) -> tuple[LabeledSample, EpisodeStats]:
    seed, episode_id, cfg, sp = args
    state, obstacle, goal, s0, gamma = _episode_setup(seed, episode_id, cfg)
    phi_label, td, outcome, worst, stats = run_labeled_episode(
        state, obstacle, goal, gamma, cfg, sp
    )
    sample = LabeledSample(
        id=episode_id,
        s=s0,
        gamma=gamma.as_tuple(),
        phi_label=phi_label,
        td_label=td,
        outcome=outcome,
        worst=worst,
    )
    return sample, stats


@dataclass
class SweepStats:
    """Aggregate envelope statistics across a generation sweep."""

    max_abs_h: float = 0.0
    max_abs_hdot: float = 0.0
    max_abs_psi_rate: float = 0.0
    infeasible_steps: int = 0
    outcome_counts: dict = field(default_factory=dict)

    def absorb(self, stats: EpisodeStats, outcome: str) -> None:
        self.max_abs_h = max(self.max_abs_h, stats.max_abs_h)
        self.max_abs_hdot = max(self.max_abs_hdot, stats.max_abs_hdot)
        self.max_abs_psi_rate = max(self.max_abs_psi_rate, stats.max_abs_psi_rate)
        self.infeasible_steps += stats.infeasible_steps
        self.outcome_counts[outcome] = self.outcome_counts.get(outcome, 0) + 1


def generate(
    n: int,
    seed: int,
    cfg: GenerationConfig,
    sp: SurrogateParams,
    config_hash: str = "",
    jobs: int = 1,
) -> tuple[Dataset, SweepStats]:
    """Generate n labeled episodes; bit-identical for identical (seed, config)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    args = [(seed, i, cfg, sp) for i in range(n)]
    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_make_sample, args, chunksize=max(1, n // (4 * jobs))))
    else:
        results = [_make_sample(a) for a in args]
    sweep = SweepStats()
    samples = []
    for sample, stats in results:
        samples.append(sample)
        sweep.absorb(stats, sample.outcome)
    return Dataset(samples=tuple(samples), seed=seed, config_hash=config_hash), sweep


def split(ds: Dataset, train_frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled partition into train and test subsets."""
    if not (0.0 < train_frac < 1.0):
        raise ValueError("train_frac must lie in (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5711]))
    perm = rng.permutation(len(ds.samples))
    n_train = int(round(train_frac * len(ds.samples)))
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    train = Dataset(
        samples=tuple(ds.samples[i] for i in train_idx),
        seed=ds.seed,
        config_hash=ds.config_hash,
    )
    test = Dataset(
        samples=tuple(ds.samples[i] for i in test_idx),
        seed=ds.seed,
        config_hash=ds.config_hash,
    )
    return train, test


def to_arrays(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """(n, 5) feature+gamma matrix and (n, 2) label matrix (phi, td)."""
    x = np.array([s.feature_row() for s in ds.samples]).reshape(len(ds.samples), 5)
    y = np.array([[s.phi_label, s.td_label] for s in ds.samples]).reshape(len(ds.samples), 2)
    return x, y


def unsafe_threshold(ds: Dataset, thr_quantile: float) -> float:
    if thr_quantile <= 0.0:
        return -np.inf
    return float(np.quantile(ds.labels(), thr_quantile))


def unsafe_subset(ds: Dataset, thr_quantile: float = 0.75) -> Dataset:
    """Samples whose surrogate label exceeds the given label quantile."""
    thr = unsafe_threshold(ds, thr_quantile)
    kept = tuple(s for s in ds.samples if s.phi_label > thr)
    return Dataset(samples=kept, seed=ds.seed, config_hash=ds.config_hash)


def safety_weighted_risk(
    model: EnsembleModel, test: Dataset, thr_quantile: float = 0.75
) -> float:
    """Mean Gaussian NLL of the pooled prediction over the unsafe test subset."""
    if len(test.samples) == 0:
        raise ValueError("empty test set")
    unsafe = unsafe_subset(test, thr_quantile)
    if len(unsafe.samples) == 0:
        raise ValueError(
            f"empty unsafe set at quantile {thr_quantile} "
            f"(threshold {unsafe_threshold(test, thr_quantile):.6g})"
        )
    x, y = to_arrays(unsafe)
    out = member_outputs(model, x)
    mu_phi = out[:, :, 0].mean(axis=0)
    var_phi = pool_variance(out[:, :, 0], out[:, :, 1], axis=0)
    mu_td = out[:, :, 2].mean(axis=0)
    var_td = pool_variance(out[:, :, 2], out[:, :, 3], axis=0)
    nll = 0.5 * (
        2.0 * math.log(2.0 * math.pi)
        + np.log(var_phi)
        + (y[:, 0] - mu_phi) ** 2 / var_phi
        + np.log(var_td)
        + (y[:, 1] - mu_td) ** 2 / var_td
    )
    return float(np.mean(nll))


# ---------------------------------------------------------------------------
# newline-delimited JSON persistence
# ---------------------------------------------------------------------------


def dumps_dataset(ds: Dataset) -> str:
    lines = [
        json.dumps(
            {"kind": "header", "seed": ds.seed, "config_hash": ds.config_hash, "version": 1},
            sort_keys=True,
            separators=(",", ":"),
        )
    ]
    for s in ds.samples:
        rec = {
            "kind": "sample",
            "id": s.id,
            "s": list(s.s),
            "gamma": list(s.gamma),
            "phi": s.phi_label,
            "td": s.td_label,
            "outcome": s.outcome,
        }
        if s.worst is not None:
            rec["worst"] = [s.worst.d, s.worst.delta_theta, s.worst.psi]
        lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def loads_dataset(text: str) -> Dataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty dataset file")
    header = json.loads(lines[0])
    if header.get("kind") != "header" or header.get("version") != 1:
        raise ValueError("missing or unsupported dataset header")
    samples = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        if rec.get("kind") != "sample":
            raise ValueError(f"unexpected record kind {rec.get('kind')!r}")
        if rec["outcome"] not in OUTCOMES:
            raise ValueError(f"unknown outcome {rec['outcome']!r}")
        worst = None
        if "worst" in rec:
            worst = WorstStep(d=rec["worst"][0], delta_theta=rec["worst"][1], psi=rec["worst"][2])
        samples.append(
            LabeledSample(
                id=rec["id"],
                s=tuple(rec["s"]),
                gamma=tuple(rec["gamma"]),
                phi_label=rec["phi"],
                td_label=rec["td"],
                outcome=rec["outcome"],
                worst=worst,
            )
        )
    return Dataset(samples=tuple(samples), seed=header["seed"], config_hash=header["config_hash"])


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_dataset(ds))


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as f:
        return loads_dataset(f.read())
