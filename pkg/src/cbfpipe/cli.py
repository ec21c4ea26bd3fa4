"""Batch front end: generate, train, attribute, curate, retrain, evaluate,
certify, simulate, report.

Every command is idempotent given identical inputs.  Artifacts embed the
configuration digest and seed (directly or through the output manifest), and
downstream commands refuse to mix artifacts from different configurations.

Exit codes: 0 success, 2 configuration error, 3 missing artifact,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bench, certificate, datagen, ensemble, influence, report, selector
from .config import ConfigError, PipelineConfig, canonical_json, load_config
from .ensemble import TrainingDivergedError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


class MissingArtifactError(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# artifact bookkeeping
# ---------------------------------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _write_json(path: Path, doc) -> None:
    _write_text(path, canonical_json(doc) + "\n")


def _read_json(path: Path):
    with open(_require(path), "r", encoding="utf-8") as f:
        return json.load(f)


def _require(path: Path) -> Path:
    if not Path(path).exists():
        raise MissingArtifactError(str(path))
    return Path(path)


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json"


def _update_manifest(out: Path, cfg: PipelineConfig, names: list[str]) -> None:
    path = _manifest_path(out)
    doc = {"artifacts": {}, "version": 1}
    if path.exists():
        doc = json.loads(path.read_text(encoding="utf-8"))
    for name in names:
        doc["artifacts"][name] = {"config_digest": cfg.digest(), "seed": cfg.seed}
    _write_json(path, doc)


def _check_manifest(out: Path, cfg: PipelineConfig, names: list[str]) -> None:
    doc = _read_json(_manifest_path(out))
    for name in names:
        entry = doc["artifacts"].get(name)
        if entry is None:
            raise MissingArtifactError(str(out / name))
        if entry["config_digest"] != cfg.digest() or entry["seed"] != cfg.seed:
            raise ConfigError(
                f"artifact {name} was produced under digest {entry['config_digest']}"
                f"/seed {entry['seed']}, current config is {cfg.digest()}/seed {cfg.seed}"
            )


def variant_names(cfg: PipelineConfig) -> list[str]:
    names = [f"combined_{rho:.2f}" for rho in cfg.rho_sweep]
    names += [f"influence_only_{cfg.ablation_rho:.2f}", f"self_only_{cfg.ablation_rho:.2f}"]
    return names


def _variant_scores(records, strategy: str, acfg) -> list[influence.InfluenceRecord]:
    tau_safety = np.array([r.tau_safety for r in records])
    tau_self = np.array([r.tau_self for r in records])
    if strategy == "combined":
        score = influence.combined_scores(tau_safety, tau_self, acfg.w_safety, acfg.w_self)
    elif strategy == "influence_only":
        score = influence.z_normalize(tau_safety)
    elif strategy == "self_only":
        score = influence.z_normalize(tau_self)
    else:
        raise ConfigError(f"unknown curation strategy {strategy!r}")
    return [
        influence.InfluenceRecord(
            sample_id=r.sample_id,
            tau_safety=r.tau_safety,
            tau_self=r.tau_self,
            score=float(score[i]),
        )
        for i, r in enumerate(records)
    ]


def _split(cfg: PipelineConfig, ds: datagen.Dataset):
    return datagen.split(ds, cfg.train_frac, ds.seed)


def _load_dataset(out: Path, cfg: PipelineConfig) -> datagen.Dataset:
    ds = datagen.load_dataset(_require(out / "dataset.ndjson"))
    if ds.config_hash != cfg.digest() or ds.seed != cfg.seed:
        raise ConfigError(
            f"dataset digest/seed {ds.config_hash}/{ds.seed} does not match "
            f"config {cfg.digest()}/{cfg.seed}"
        )
    return ds


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(cfg: PipelineConfig, out: Path, jobs: int) -> int:
    ds, sweep = datagen.generate(
        cfg.n_samples, cfg.seed, cfg.generation(), cfg.surrogate(),
        config_hash=cfg.digest(), jobs=jobs,
    )
    datagen.save_dataset(ds, out / "dataset.ndjson")
    _write_json(
        out / "sweep_stats.json",
        {
            "config_digest": cfg.digest(),
            "seed": cfg.seed,
            "n": len(ds),
            "max_abs_h": sweep.max_abs_h,
            "max_abs_hdot": sweep.max_abs_hdot,
            "max_abs_psi_rate": sweep.max_abs_psi_rate,
            "infeasible_steps": sweep.infeasible_steps,
            "outcome_counts": {k: sweep.outcome_counts[k] for k in sorted(sweep.outcome_counts)},
        },
    )
    _update_manifest(out, cfg, ["dataset.ndjson", "sweep_stats.json"])
    n_succ = sweep.outcome_counts.get("success", 0)
    print(f"generated {len(ds)} samples, success fraction {n_succ / max(1, len(ds)):.3f}")
    return EXIT_OK


def cmd_train(cfg: PipelineConfig, out: Path, jobs: int) -> int:
    ds = _load_dataset(out, cfg)
    train_ds, _ = _split(cfg, ds)
    x, y = datagen.to_arrays(train_ds)
    model, ckpts = ensemble.train(
        x, y, cfg.train_config(), cfg.seed, train_digest=f"{cfg.digest()}:{cfg.seed}"
    )
    ensemble.save_model(model, out / "model_baseline.json")
    ensemble.save_checkpoints(ckpts, model.arch, out / "checkpoints_baseline.json")
    _update_manifest(out, cfg, ["model_baseline.json", "checkpoints_baseline.json"])
    print(f"trained baseline on {len(train_ds)} samples, {len(ckpts)} checkpoints")
    return EXIT_OK


def cmd_attribute(cfg: PipelineConfig, out: Path, jobs: int) -> int:
    ds = _load_dataset(out, cfg)
    _check_manifest(out, cfg, ["model_baseline.json", "checkpoints_baseline.json"])
    model = ensemble.load_model(_require(out / "model_baseline.json"))
    ckpts, _ = ensemble.load_checkpoints(_require(out / "checkpoints_baseline.json"))
    train_ds, test_ds = _split(cfg, ds)
    records = influence.attribute(train_ds, test_ds, model, ckpts, cfg.attribution())
    influence.save_influence_csv(records, frozenset(), out / "influence.csv")
    _update_manifest(out, cfg, ["influence.csv"])
    print(f"attributed {len(records)} training samples")
    return EXIT_OK


def cmd_curate(cfg: PipelineConfig, out: Path, jobs: int) -> int:
    ds = _load_dataset(out, cfg)
    _check_manifest(out, cfg, ["influence.csv"])
    records, _ = influence.load_influence_csv(_require(out / "influence.csv"))
    train_ds, _ = _split(cfg, ds)
    acfg = cfg.attribution()
    summary = {}
    written = []
    for name in variant_names(cfg):
        strategy, rho_txt = name.rsplit("_", 1)
        rho = float(rho_txt)
        scored = _variant_scores(records, strategy, acfg)
        result = influence.curate(train_ds, scored, rho)
        fname = f"influence_{name}.csv"
        influence.save_influence_csv(scored, result.removed_ids, out / fname)
        written.append(fname)
        summary[name] = {
            "rho": rho,
            "strategy": strategy,
            "removed": len(result.removed_ids),
            "kept": len(result.kept),
        }
    _write_json(
        out / "curation.json",
        {"config_digest": cfg.digest(), "seed": cfg.seed, "variants": summary},
    )
    _update_manifest(out, cfg, written + ["curation.json"])
    print(f"curated {len(written)} variants")
    return EXIT_OK


def cmd_retrain(cfg: PipelineConfig, out: Path, jobs: int) -> int:
    ds = _load_dataset(out, cfg)
    train_ds, _ = _split(cfg, ds)
    written = []
    for name in variant_names(cfg):
        fname = f"influence_{name}.csv"
        _check_manifest(out, cfg, [fname])
        _, removed = influence.load_influence_csv(_require(out / fname))
        kept = datagen.Dataset(
            samples=tuple(s for s in train_ds.samples if s.id not in removed),
            seed=ds.seed,
            config_hash=ds.config_hash,
        )
        x, y = datagen.to_arrays(kept)
        model, _ = ensemble.train(
            x, y, cfg.train_config(), cfg.seed, train_digest=f"{cfg.digest()}:{cfg.seed}"
        )
        mname = f"model_{name}.json"
        ensemble.save_model(model, out / mname)
        written.append(mname)
        print(f"retrained {name} on {len(kept)} samples")
    _update_manifest(out, cfg, written)
    return EXIT_OK


def _model_metrics(model, test_ds: datagen.Dataset, unsafe_q: float, n_train: int) -> dict:
    x, y = datagen.to_arrays(test_ds)
    mu_phi, _, mu_td, _ = ensemble.predict_batch(model, x)
    err = mu_phi - y[:, 0]
    unsafe = datagen.unsafe_subset(test_ds, unsafe_q)
    ux, uy = datagen.to_arrays(unsafe)
    u_mu, _, _, _ = ensemble.predict_batch(model, ux)
    metrics = {
        "n_train": n_train,
        "rmse": float(np.sqrt(np.mean(err**2))),
        "eps_max": float(np.max(np.abs(err))),
        "sw_rmse": float(np.sqrt(np.mean((u_mu - uy[:, 0]) ** 2))),
        "sw_nll": datagen.safety_weighted_risk(model, test_ds, unsafe_q),
        "td_rmse": float(np.sqrt(np.mean((mu_td - y[:, 1]) ** 2))),
    }
    for v in metrics.values():
        if isinstance(v, float) and not math.isfinite(v):
            raise ArithmeticError("non-finite metric")
    return metrics


def cmd_evaluate(cfg: PipelineConfig, out: Path, jobs: int) -> int:
    ds = _load_dataset(out, cfg)
    train_ds, test_ds = _split(cfg, ds)
    unsafe_q = cfg.attribution().unsafe_quantile
    _check_manifest(out, cfg, ["model_baseline.json"])
    rows = {}
    model = ensemble.load_model(_require(out / "model_baseline.json"))
    rows["baseline"] = _model_metrics(model, test_ds, unsafe_q, len(train_ds))
    curation = _read_json(out / "curation.json") if (out / "curation.json").exists() else None
    for name in variant_names(cfg):
        mpath = out / f"model_{name}.json"
        if not mpath.exists():
            continue
        _check_manifest(out, cfg, [f"model_{name}.json"])
        model = ensemble.load_model(mpath)
        n_train = (
            curation["variants"][name]["kept"] if curation else len(train_ds)
        )
        rows[name] = _model_metrics(model, test_ds, unsafe_q, n_train)
    _write_json(
        out / "metrics.json",
        {"config_digest": cfg.digest(), "seed": cfg.seed, "models": rows},
    )
    base = rows["baseline"]["sw_rmse"]
    table = []
    for name in ["baseline"] + variant_names(cfg):
        if name not in rows:
            continue
        r = rows[name]
        table.append(
            [
                name,
                r["n_train"],
                r["rmse"],
                r["sw_rmse"],
                100.0 * (r["sw_rmse"] / base - 1.0),
            ]
        )
    report.write_csv(
        out / "rmse_table.csv",
        ["model", "n_train", "rmse", "sw_rmse", "sw_rmse_delta_pct"],
        table,
    )
    _update_manifest(out, cfg, ["metrics.json", "rmse_table.csv"])
    print(f"evaluated {len(rows)} models")
    return EXIT_OK


def _curated_name(cfg: PipelineConfig) -> str:
    return f"combined_{cfg.ablation_rho:.2f}"


def cmd_certify(cfg: PipelineConfig, out: Path, jobs: int) -> int:
    ds = _load_dataset(out, cfg)
    sweep = _read_json(out / "sweep_stats.json")
    metrics = _read_json(out / "metrics.json")
    _check_manifest(out, cfg, ["metrics.json", "sweep_stats.json", "model_baseline.json"])
    curated_name = _curated_name(cfg)
    if curated_name not in metrics["models"]:
        raise MissingArtifactError(str(out / f"model_{curated_name}.json"))

    csec = cfg.certificate_section()
    gen = cfg.generation()
    dom = cfg.domain()
    sp = cfg.surrogate()
    sparams = cfg.selector()
    grid = selector.CandidateGrid.uniform(cfg.grid_n, dom.gamma_min, dom.gamma_max)
    train_ds, test_ds = _split(cfg, ds)
    tx, ty = datagen.to_arrays(train_ds)
    ex, ey = datagen.to_arrays(test_ds)

    baseline = ensemble.load_model(_require(out / "model_baseline.json"))
    curated = ensemble.load_model(_require(out / f"model_{curated_name}.json"))

    # error-field regularity estimates from sampled difference quotients
    l_true = certificate.estimate_lipschitz_quotient(
        ex, ey[:, 0], int(csec["lipschitz_pairs"]), cfg.seed
    )
    l_nn = max(
        certificate.estimate_lipschitz_quotient(
            ex, ensemble.predict_batch(m, ex)[0], int(csec["lipschitz_pairs"]), cfg.seed
        )
        for m in (baseline, curated)
    )

    sigma_cfg = dataclasses.replace(cfg.train_config(), epochs=int(csec["sigma_epochs"]))
    sigma, _ = certificate.fit_sigma(
        tx, ty, ex, sigma_cfg, cfg.seed, n_retrains=int(csec["sigma_retrains"])
    )

    u_max = math.hypot(gen.a_max, gen.omega_max)
    sweep_stats = datagen.SweepStats(
        max_abs_h=sweep["max_abs_h"],
        max_abs_hdot=sweep["max_abs_hdot"],
        max_abs_psi_rate=sweep["max_abs_psi_rate"],
    )
    env = certificate.envelope_from_sweep(
        sweep_stats, u_max=u_max, inflation=float(csec["inflation"]),
        l_e=l_true + l_nn, sigma=sigma,
    )

    d_vals = np.linspace(dom.d_min, dom.d_max, int(csec["grid_d"]))
    v_vals = np.linspace(gen.v_range[0], gen.v_range[1], int(csec["grid_v"]))
    dth_vals = np.linspace(0.01, math.pi, int(csec["grid_dtheta"]))
    states = bench.grid_states(d_vals, v_vals, dth_vals, gen)
    oracle_margins, mu_margins, _ = bench.margin_grids(
        states, grid, sparams, sp, gen, model=None
    )

    convention = csec["epsilon_convention"]
    key = {"rmse": "rmse", "max": "eps_max", "sw_rmse": "sw_rmse"}.get(convention)
    if key is None:
        raise ConfigError(f"unknown epsilon convention {convention!r}")
    eps_base = metrics["models"]["baseline"][key]
    eps_cur = metrics["models"][curated_name][key]

    from .surrogate import denominator_bounds

    d_lo, d_hi = denominator_bounds(dom, sp)
    l_m = selector.lipschitz_constant(sparams, dom)
    diam_op = math.sqrt(
        (dom.d_max - dom.d_min) ** 2
        + (gen.v_range[1] - gen.v_range[0]) ** 2
        + math.pi**2
    )
    rep = certificate.build_report(
        env=env,
        bounds=dom,
        d_lo=d_lo,
        d_hi=d_hi,
        l_m=l_m,
        eps_baseline=eps_base,
        eps_curated=eps_cur,
        eps_convention=convention,
        oracle_margins=oracle_margins,
        margins_mu=mu_margins,
        covering_r=float(csec["covering_r"]),
        l_phi_true=l_true,
        n_dim=3,
        n_candidates=len(grid.candidates),
        diam_op=diam_op,
        provenance={
            "config_digest": cfg.digest(),
            "seed": cfg.seed,
            "h_max": "estimated: sweep extremum + inflation",
            "hdot_max": "estimated: sweep extremum + inflation",
            "v_psi": "estimated: sweep extremum + inflation",
            "u_max": "analytic: input box norm",
            "l_e": "estimated: sampled difference quotients (true + network)",
            "sigma": f"estimated: {csec['sigma_retrains']} retrains at "
            f"{csec['sigma_epochs']} epochs, 95th percentile",
            "eps": f"measured on test split, convention {convention}",
            "oracle_margins": "instantaneous filtered-margin surrogate on the grid",
        },
    )
    _write_text(out / "certificate.json", rep.to_json() + "\n")
    _update_manifest(out, cfg, ["certificate.json"])
    print(
        f"certificate: L_psi={rep.l_psi:.4g} L_M={rep.l_m:.4g} "
        f"margin reduction {rep.margin_reduction_pct:.1f}% "
        f"certified fraction {rep.certified_fraction_baseline:.3f} -> "
        f"{rep.certified_fraction_curated:.3f}"
    )
    return EXIT_OK


def _controllers(cfg: PipelineConfig, out: Path):
    bsec = cfg.bench_section()
    dom = cfg.domain()
    sparams = cfg.selector()
    sp = cfg.surrogate()
    grid = selector.CandidateGrid.uniform(cfg.grid_n, dom.gamma_min, dom.gamma_max)
    baseline = ensemble.load_model(_require(out / "model_baseline.json"))
    curated = ensemble.load_model(_require(out / f"model_{_curated_name(cfg)}.json"))
    return [
        bench.FixedGamma(float(bsec["fixed_low"]), name="fixed_low"),
        bench.FixedGamma(float(bsec["fixed_high"]), name="fixed_high"),
        bench.FixedGamma(float(bsec["fixed_low_in_gamma"]), name="fixed_low_in_gamma"),
        bench.FixedGamma(float(bsec["fixed_high_in_gamma"]), name="fixed_high_in_gamma"),
        bench.LearnedAdaptive(baseline, grid, sparams, name="adaptive_uncurated"),
        bench.LearnedAdaptive(curated, grid, sparams, name="adaptive_curated"),
        bench.OracleAdaptive(grid, sparams, sp, name="oracle"),
    ]


def cmd_simulate(cfg: PipelineConfig, out: Path, jobs: int) -> int:
    bsec = cfg.bench_section()
    gen = cfg.generation()
    controllers = _controllers(cfg, out)
    simple, complex16 = bench.build_standard_layouts(gen)
    singles = bench.single_obstacle_scenarios(int(bsec["n_single"]), cfg.seed, gen)
    seeds = [int(s) for s in bsec["suite_seeds"]]

    episodes = {}
    traj_files = []
    for sc in (simple, complex16):
        for controller in controllers:
            res = bench.run_episode(sc, controller, gen)
            episodes[f"{sc.name}:{controller.name}"] = res.to_dict()
            fname = f"trajectories/{sc.name}__{controller.name}.csv"
            report.write_csv(
                out / fname,
                ["t", "x", "y", "theta", "v"],
                [
                    [i * sc.dt, s.x, s.y, s.theta, s.v]
                    for i, s in enumerate(res.trajectory)
                ],
            )
            traj_files.append(fname)

    suite_rows = bench.run_suite(singles, controllers, seeds, gen)
    agg = {}
    for row in suite_rows:
        key = row["controller"]
        cur = agg.setdefault(
            key,
            {"controller": key, "scenario": "single_suite", "runs": 0, "collisions": 0,
             "deadlocks": 0.0, "time_sum": 0.0, "min_h_sum": 0.0, "infeasible_steps": 0},
        )
        cur["runs"] += row["runs"]
        cur["collisions"] += row["collisions"]
        cur["deadlocks"] += row["deadlock_rate"] * row["runs"]
        cur["time_sum"] += row["mean_time_to_goal"] * row["runs"]
        cur["min_h_sum"] += row["mean_min_h"] * row["runs"]
        cur["infeasible_steps"] += row["infeasible_steps"]

    metrics_rows = []
    for sc in (simple, complex16):
        for controller in controllers:
            e = episodes[f"{sc.name}:{controller.name}"]
            metrics_rows.append(
                [sc.name, controller.name, 1, e["collisions"],
                 1.0 if e["deadlock"] else 0.0,
                 e["time_to_goal"] if e["time_to_goal"] is not None else math.nan,
                 e["min_h"] if e["min_h"] is not None else math.nan,
                 e["infeasible_steps"]]
            )
    for key in sorted(agg):
        cur = agg[key]
        n = cur["runs"]
        metrics_rows.append(
            ["single_suite", key, n, cur["collisions"], cur["deadlocks"] / n,
             cur["time_sum"] / n, cur["min_h_sum"] / n, cur["infeasible_steps"]]
        )
    report.write_csv(
        out / "closed_loop_metrics.csv",
        ["scenario", "controller", "runs", "collisions", "deadlock_rate",
         "mean_time_to_goal", "mean_min_h", "infeasible_steps"],
        metrics_rows,
    )

    # margin consistency inputs: oracle-visited margin on the simple layout
    oracle_res_key = "simple:oracle"
    summary = {
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "episodes": episodes,
        "oracle_visited_margin_simple": episodes[oracle_res_key]["min_psi_applied"],
    }
    _write_json(out / "closed_loop.json", summary)
    _update_manifest(
        out, cfg, ["closed_loop.json", "closed_loop_metrics.csv"] + traj_files
    )
    print(f"simulated {len(episodes)} layout episodes plus {len(singles)}-scenario suite")
    return EXIT_OK


def cmd_report(cfg: PipelineConfig, out: Path, jobs: int) -> int:
    needed = [
        "metrics.json", "certificate.json", "closed_loop_metrics.csv", "influence.csv",
        "curation.json",
    ]
    for name in needed:
        _require(out / name)
    _check_manifest(out, cfg, needed)
    rep_dir = out / "report"
    rep_dir.mkdir(parents=True, exist_ok=True)

    metrics = _read_json(out / "metrics.json")["models"]
    base = metrics["baseline"]
    table = []
    for name in ["baseline"] + variant_names(cfg):
        if name not in metrics:
            raise MissingArtifactError(str(out / f"model_{name}.json"))
        r = metrics[name]
        table.append(
            [name, r["n_train"], r["rmse"], r["sw_rmse"],
             100.0 * (r["sw_rmse"] / base["sw_rmse"] - 1.0)]
        )
    report.write_csv(
        rep_dir / "rmse_table.csv",
        ["model", "n_train", "rmse", "sw_rmse", "sw_rmse_delta_pct"],
        table,
    )

    ab_rho = cfg.ablation_rho
    ab_rows = []
    for name, label in (
        ("baseline", "baseline"),
        (f"influence_only_{ab_rho:.2f}", "influence_only"),
        (f"self_only_{ab_rho:.2f}", "self_only"),
        (f"combined_{ab_rho:.2f}", "combined"),
    ):
        r = metrics[name]
        ab_rows.append([label, r["rmse"], r["sw_rmse"],
                        100.0 * (r["sw_rmse"] / base["sw_rmse"] - 1.0)])
    report.write_csv(
        rep_dir / "ablation_table.csv",
        ["strategy", "rmse", "sw_rmse", "sw_rmse_delta_pct"],
        ab_rows,
    )

    rhos = [0.0] + cfg.rho_sweep
    sw = [base["sw_rmse"]] + [metrics[f"combined_{r:.2f}"]["sw_rmse"] for r in cfg.rho_sweep]
    full = [base["rmse"]] + [metrics[f"combined_{r:.2f}"]["rmse"] for r in cfg.rho_sweep]
    report.write_csv(
        rep_dir / "rho_sweep.csv", ["rho", "sw_rmse", "rmse"],
        [[r, s, f] for r, s, f in zip(rhos, sw, full)],
    )
    report.plot_rho_sweep(rhos, sw, full, rep_dir / "rho_sweep.svg")

    records, _ = influence.load_influence_csv(out / "influence.csv")
    curated_csv = out / f"influence_{_curated_name(cfg)}.csv"
    threshold = math.inf
    scores = np.array([r.score for r in records])
    if curated_csv.exists():
        c_records, removed = influence.load_influence_csv(curated_csv)
        scores = np.array([r.score for r in c_records])
        if removed:
            kept_scores = [r.score for r in c_records if r.sample_id in removed]
            threshold = min(kept_scores)
    report.plot_influence_hist(
        scores, threshold, rep_dir / "influence_hist.csv", rep_dir / "influence_hist.svg"
    )

    cert = _read_json(out / "certificate.json")
    _write_json(rep_dir / "certificate.json", cert)
    (rep_dir / "closed_loop_metrics.csv").write_bytes(
        (out / "closed_loop_metrics.csv").read_bytes()
    )

    curated = metrics[_curated_name(cfg)]
    _write_json(
        rep_dir / "summary.json",
        {
            "config_digest": cfg.digest(),
            "seed": cfg.seed,
            "baseline_sw_rmse": base["sw_rmse"],
            "curated_sw_rmse": curated["sw_rmse"],
            "sw_rmse_reduction_pct": 100.0 * (1.0 - curated["sw_rmse"] / base["sw_rmse"]),
            "margin_reduction_pct": cert["margin_reduction_pct"],
            "certified_fraction_baseline": cert["certified_fraction_baseline"],
            "certified_fraction_curated": cert["certified_fraction_curated"],
        },
    )
    _update_manifest(
        out, cfg,
        ["report/" + p.name for p in sorted(rep_dir.iterdir())],
    )
    print(f"report written to {rep_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "attribute": cmd_attribute,
    "curate": cmd_curate,
    "retrain": cmd_retrain,
    "evaluate": cmd_evaluate,
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbfpipe",
        description="Safety-filtered control pipeline: data, ensemble, curation, certificates",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="TOML config path (defaults built in)")
        p.add_argument("--out", default="out", help="artifact directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker cap for parallel stages")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, max(1, args.jobs))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as err:
        print(f"missing artifact: {err}", file=sys.stderr)
        return EXIT_MISSING
    except (TrainingDivergedError, ArithmeticError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
