"""Pipeline configuration: defaults, TOML loading, and content digests.

One document with a section per stage.  Loading is strict — unknown keys are
configuration errors — and the digest of the canonical document (seed
excluded) is embedded in every artifact so stages refuse to mix outputs from
different configurations.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import tomli

from .datagen import GenerationConfig
from .ensemble import TrainConfig
from .influence import AttributionConfig
from .selector import SelectorParams
from .surrogate import DomainBounds, SurrogateParams


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "seed": 101,
    "generation": {
        "n_samples": 1500,
        "d_range": [0.65, 2.5],
        "v_range": [0.01, 1.0],
        "dtheta_range": [0.01, math.pi / 2],
        "gamma_range": [0.5, 2.5],
        "obstacle_radius": 0.4,
        "robot_radius": 0.25,
        "goal_distance": 5.0,
        "goal_tol": 0.3,
        "horizon": 20.0,
        "dt": 0.05,
        "a_max": 1.0,
        "omega_max": 1.0,
        "k_theta": 2.0,
        "k_v": 1.0,
        "v_ref": 1.0,
    },
    "surrogate": {
        "lam1": 1.0,
        "lam2": 1.0,
        "target_d_lo": 1.08,
        "target_d_hi": 26.3,
    },
    "domain": {"gamma_min": 0.5, "gamma_max": 2.5},
    "train": {
        "epochs": 200,
        "batch_size": 32,
        "lr": 1e-4,
        "k_members": 3,
        "n_checkpoints": 10,
        "optimizer": "adam",
        "hidden": [40, 80, 120, 40],
        "activation": "relu",
        "var_floor": 1e-6,
        "train_frac": 0.7,
    },
    "attribution": {
        "unsafe_quantile": 0.75,
        "w_safety": 0.7,
        "w_self": 0.3,
        "last_layer_only": False,
        "rho_sweep": [0.05, 0.10, 0.15, 0.20],
        "ablation_rho": 0.10,
    },
    "selector": {
        "tau_s": 0.5,
        "kappa": 0.15,
        "jrd_max": 2.0,
        "cvar_alpha": 0.95,
        "cvar_max": 60.0,
        "gate_width_frac": 0.05,
        "grid_n": 7,
    },
    "certificate": {
        "grid_d": 16,
        "grid_v": 3,
        "grid_dtheta": 9,
        "covering_r": 0.05,
        "sigma_retrains": 10,
        "sigma_epochs": 50,
        "epsilon_convention": "rmse",
        "inflation": 0.1,
        "lipschitz_pairs": 20000,
    },
    "bench": {
        "n_single": 20,
        "suite_seeds": [0],
        "fixed_low": 0.01,
        "fixed_high": 0.35,
        "fixed_low_in_gamma": 0.5,
        "fixed_high_in_gamma": 2.5,
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = {}
    for key, val in base.items():
        if key in override:
            ov = override[key]
            if isinstance(val, dict):
                if not isinstance(ov, dict):
                    raise ConfigError(f"section {path}{key} must be a table")
                out[key] = _merge(val, ov, f"{path}{key}.")
            else:
                out[key] = ov
        else:
            out[key] = val
    unknown = set(override) - set(base)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(path + k for k in unknown)}")
    return out


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), default=float)


@dataclass(frozen=True)
class PipelineConfig:
    doc: dict

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    def digest(self) -> str:
        doc = {k: v for k, v in self.doc.items() if k != "seed"}
        return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()[:16]

    def with_seed(self, seed: int) -> "PipelineConfig":
        doc = dict(self.doc)
        doc["seed"] = int(seed)
        return PipelineConfig(doc=doc)

    # ---- typed sections -------------------------------------------------

    def generation(self) -> GenerationConfig:
        g = self.doc["generation"]
        return GenerationConfig(
            d_range=tuple(g["d_range"]),
            v_range=tuple(g["v_range"]),
            dtheta_range=tuple(g["dtheta_range"]),
            gamma_range=tuple(g["gamma_range"]),
            obstacle_radius=g["obstacle_radius"],
            robot_radius=g["robot_radius"],
            goal_distance=g["goal_distance"],
            goal_tol=g["goal_tol"],
            horizon=g["horizon"],
            dt=g["dt"],
            a_max=g["a_max"],
            omega_max=g["omega_max"],
            k_theta=g["k_theta"],
            k_v=g["k_v"],
            v_ref=g["v_ref"],
        )

    @property
    def n_samples(self) -> int:
        return int(self.doc["generation"]["n_samples"])

    def surrogate(self) -> SurrogateParams:
        from .surrogate import calibrate_denominator

        s = self.doc["surrogate"]
        d_range = self.doc["generation"]["d_range"]
        beta1, beta2 = calibrate_denominator(
            d_range[0], d_range[1], s["target_d_lo"], s["target_d_hi"]
        )
        return SurrogateParams(lam1=s["lam1"], lam2=s["lam2"], beta1=beta1, beta2=beta2)

    def domain(self) -> DomainBounds:
        d_range = self.doc["generation"]["d_range"]
        dom = self.doc["domain"]
        return DomainBounds(
            d_min=d_range[0],
            d_max=d_range[1],
            gamma_min=dom["gamma_min"],
            gamma_max=dom["gamma_max"],
        )

    def train_config(self) -> TrainConfig:
        t = self.doc["train"]
        return TrainConfig(
            epochs=int(t["epochs"]),
            batch_size=int(t["batch_size"]),
            lr=t["lr"],
            k_members=int(t["k_members"]),
            n_checkpoints=int(t["n_checkpoints"]),
            optimizer=t["optimizer"],
            hidden=tuple(int(h) for h in t["hidden"]),
            activation=t["activation"],
            var_floor=t["var_floor"],
        )

    @property
    def train_frac(self) -> float:
        return float(self.doc["train"]["train_frac"])

    def attribution(self) -> AttributionConfig:
        a = self.doc["attribution"]
        return AttributionConfig(
            unsafe_quantile=a["unsafe_quantile"],
            w_safety=a["w_safety"],
            w_self=a["w_self"],
            last_layer_only=bool(a["last_layer_only"]),
        )

    @property
    def rho_sweep(self) -> list[float]:
        return [float(r) for r in self.doc["attribution"]["rho_sweep"]]

    @property
    def ablation_rho(self) -> float:
        return float(self.doc["attribution"]["ablation_rho"])

    def selector(self) -> SelectorParams:
        s = self.doc["selector"]
        return SelectorParams(
            tau_s=s["tau_s"],
            kappa=s["kappa"],
            jrd_max=s["jrd_max"],
            cvar_alpha=s["cvar_alpha"],
            cvar_max=s["cvar_max"],
            gate_width_frac=s["gate_width_frac"],
        )

    @property
    def grid_n(self) -> int:
        return int(self.doc["selector"]["grid_n"])

    def certificate_section(self) -> dict:
        return self.doc["certificate"]

    def bench_section(self) -> dict:
        return self.doc["bench"]


def default_config(seed: int | None = None) -> PipelineConfig:
    cfg = PipelineConfig(doc=json.loads(canonical_json(DEFAULTS)))
    return cfg if seed is None else cfg.with_seed(seed)


def load_config(path: str | None, seed: int | None = None) -> PipelineConfig:
    """Merge a TOML document over the defaults; None loads pure defaults."""
    if path is None:
        return default_config(seed)
    try:
        with open(path, "rb") as f:
            user = tomli.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"invalid TOML in {path}: {err}")
    doc = _merge(json.loads(canonical_json(DEFAULTS)), user)
    cfg = PipelineConfig(doc=doc)
    return cfg if seed is None else cfg.with_seed(seed)
