#!/usr/bin/env python3
"""
grsir: Gaussian-regularized sliced inverse regression from the command line.

Subcommands:
  fit         estimate the index direction (and link) from a CSV, write a model JSON
  predict     apply a model JSON to a predictors CSV
  simulate    write a synthetic Model 1/2 dataset
  experiment  run comparison experiment 1, 2 or 3 into a report CSV
  priors      list the built-in priors

Exit codes: 0 ok, 2 bad input or flags, 3 numerical failure.
Every output file gets a <output>.meta.json sidecar with the resolved settings.

Usage:
  python scripts/grsir.py fit --data train.csv --prior ridge --tau 1 --output model.json
  python scripts/grsir.py predict --model model.json --data new.csv --output pred.csv
  python scripts/grsir.py simulate --model 2 --n 500 --p 10 --noise-sd 0 --output sim.csv
  python scripts/grsir.py experiment 1 --model 1 --theta 2 --replicates 50 --output exp1.csv
  python scripts/grsir.py priors
  python scripts/grsir.py --selftest
"""
from __future__ import annotations

import argparse
import json
import math
import pathlib
import sys
import time
from typing import Any, Dict, List, Optional

import numpy as np

from design import read_dataset_csv, read_predictors_csv, write_dataset_csv
from errors import GrsirError, InputError, ShapeMismatch
from estimator import ModelArtifact
from forward_link import fit_forward, predict, select_tau_in_sample
from priors import PRIORS, PriorSpec, default_cutoff, describe_priors, spectral_decompose
from settings import config_path, parse_list, read_config, resolve, resolve_threads
from simulation import (
    METHODS,
    ScenarioConfig,
    index_scale,
    make_population,
    projection_pairs,
    random_orthogonal,
    run_experiment,
    sample_model,
    tau_grid,
)

VERSION = "grsir 1.0.0"


def write_sidecar(output: pathlib.Path, meta: Dict[str, Any]) -> pathlib.Path:
    side = pathlib.Path(str(output) + ".meta.json")
    side.parent.mkdir(parents=True, exist_ok=True)
    side.write_text(json.dumps({"version": VERSION, **meta}, indent=2, sort_keys=True, default=str),
                    encoding="utf-8")
    return side


def _tau_grid_settings(args, cfg) -> Dict[str, Any]:
    g = cfg["tau_grid"]
    return {
        "log_min": float(resolve(args.tau_log_min, g["log_min"])),
        "log_max": float(resolve(args.tau_log_max, g["log_max"])),
        "count": int(resolve(args.tau_count, g["count"])),
        "base": str(resolve(args.tau_base, g["base"])),
    }


# --------------------------------- fit ----------------------------------- #

def cmd_fit(args, cfg) -> int:
    data, names = read_dataset_csv(args.data, args.response)
    prior_name = resolve(args.prior, cfg["prior"]["name"])
    if prior_name not in PRIORS:
        raise InputError(f"--prior: unknown prior '{prior_name}' (choose from {', '.join(PRIORS)})")
    tau = float(resolve(args.tau, cfg["prior"]["tau"]))
    cutoff = resolve(args.cutoff_d, cfg["prior"]["cutoff_d"])
    if cutoff is None and PRIORS[prior_name][2]:
        cutoff = default_cutoff(data.p)
    slices = int(resolve(args.slices, cfg["slices"]))
    link_bins = resolve(args.link_bins, cfg["link_bins"])
    settings: Dict[str, Any] = {
        "command": "fit", "data": str(args.data), "response": args.response, "prior": prior_name,
        "cutoff_d": cutoff, "slices": slices, "components": args.components, "link_bins": link_bins,
    }

    if args.select_tau:
        if prior_name == "sir":
            raise InputError("--select-tau: plain SIR has no tau to select; pick a regularized --prior")
        grid = _tau_grid_settings(args, cfg)
        tau, table = select_tau_in_sample(data, slices, prior_name, tau_grid(**grid), cutoff, link_bins)
        settings["tau_grid"] = grid
        settings["tau_selection"] = [{"tau": t, "training_mse": m} for t, m in table]
        print(f"[fit] in-sample tau selection picked tau={tau:.6g}", flush=True)
    settings["tau"] = tau

    prior = None if prior_name == "sir" else PriorSpec(prior_name, tau, cutoff)
    assignment, moments, fit, link = fit_forward(data, prior, slices, link_bins, args.components)
    if fit.degenerate_gap:
        print("[fit] warning: eigenvalues K and K+1 are tied; the direction is not unique",
              file=sys.stderr, flush=True)

    artifact = ModelArtifact(
        fit=fit, prior=prior, h=assignment.h, slice_boundaries=assignment.boundaries,
        x_bar=moments.x_bar, n=data.n, response=args.response, predictors=tuple(names), link=link,
    )
    artifact.save(args.output)
    write_sidecar(args.output, settings)

    evals, _ = spectral_decompose(moments.sigma_hat)
    cond = math.inf if evals[-1] <= 0 else evals[0] / evals[-1]
    label = prior.label if prior else "sir"
    print(f"[fit] {label}  lambda={fit.lambda_hat:.6g}  rho={fit.rho_hat[0]:.6g}  "
          f"cond(Sigma)={cond:.3g}  n={data.n} p={data.p}", flush=True)
    print("[fit] Wrote", args.output, flush=True)
    return 0


# ------------------------------- predict --------------------------------- #

def cmd_predict(args, cfg) -> int:
    artifact = ModelArtifact.load(args.model)
    if artifact.link is None:
        raise InputError(f"--model: {args.model} carries no link; refit with 'grsir fit'")
    X, names = read_predictors_csv(args.data, drop=[artifact.response])
    if X.shape[1] != artifact.p:
        raise ShapeMismatch(f"--data: model was fitted on p={artifact.p} predictors, data has {X.shape[1]}")
    preds = predict(artifact.link, artifact.fit.direction, artifact.x_bar, X)

    out = pathlib.Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("prediction\n" + "".join(f"{float(v)!r}\n" for v in preds), encoding="utf-8")
    write_sidecar(out, {"command": "predict", "model": str(args.model), "data": str(args.data),
                        "rows": int(preds.size)})
    print(f"[predict] {preds.size} predictions ->", out, flush=True)
    return 0


# ------------------------------- simulate -------------------------------- #

def cmd_simulate(args, cfg) -> int:
    e = cfg["experiment"]
    model_id = int(resolve(args.model, e["model"]))
    n = int(resolve(args.n, e["n"]))
    p = int(resolve(args.p, e["p"]))
    theta = float(resolve(args.theta, e["theta"]))
    noise_sd = float(resolve(args.noise_sd, e["noise_sd"]))
    seed = int(resolve(args.seed, e["seed"]))

    sigma, beta = make_population(p, theta, random_orthogonal(p, seed))
    data = sample_model(model_id, n, sigma, beta, noise_sd, seed, args.replicate)
    names = [f"x{j + 1}" for j in range(p)]
    write_dataset_csv(args.output, data, names, "y")
    write_sidecar(args.output, {
        "command": "simulate", "model": model_id, "n": n, "p": p, "theta": theta,
        "noise_sd": noise_sd, "seed": seed, "replicate": args.replicate,
        "beta": beta.tolist(), "sigma": index_scale(sigma, beta),
    })
    print(f"[simulate] model {model_id}  n={n} p={p} theta={theta:g} noise_sd={noise_sd:g} seed={seed}",
          flush=True)
    print("[simulate] Wrote", args.output, flush=True)
    return 0


# ------------------------------ experiment ------------------------------- #

def scenario_from_args(args, cfg) -> ScenarioConfig:
    e = cfg["experiment"]
    p = int(resolve(args.p, e["p"]))
    d_grid = parse_list(args.d_grid, int)
    if d_grid is None:
        d_grid = tuple(int(d) for d in e["d_grid"] if int(d) <= p)
    methods = parse_list(args.methods, str) or tuple(e["methods"])
    cutoff = args.cutoff_d
    if cutoff is None and e["d"] is not None:
        cutoff = min(int(e["d"]), p)
    grid = _tau_grid_settings(args, cfg)
    return ScenarioConfig(
        n=int(resolve(args.n, e["n"])),
        p=p,
        theta=float(resolve(args.theta, e["theta"])),
        model_id=int(resolve(args.model, e["model"])),
        noise_sd=float(resolve(args.noise_sd, e["noise_sd"])),
        N=int(resolve(args.replicates, e["replicates"])),
        seed=int(resolve(args.seed, e["seed"])),
        num_slices=int(resolve(args.slices, cfg["slices"])),
        tau_log_min=grid["log_min"],
        tau_log_max=grid["log_max"],
        tau_count=grid["count"],
        tau_base=grid["base"],
        d=cutoff,
        d_grid=tuple(d_grid),
        theta_grid=parse_list(args.theta_grid, float) or tuple(float(t) for t in e["theta_grid"]),
        methods=tuple(m.strip() for m in methods),
        independent_replicates=bool(args.independent_replicates),
        threads=resolve_threads(args.threads, cfg),
    )


def cmd_experiment(args, cfg) -> int:
    scenario = scenario_from_args(args, cfg)
    print(f"[experiment] {args.exp_id}: model {scenario.model_id} n={scenario.n} p={scenario.p} "
          f"N={scenario.N} taus={scenario.tau_count} threads={scenario.threads}", flush=True)
    start = time.time()
    report = run_experiment(args.exp_id, scenario)
    report.write_csv(args.output)
    report.write_sidecar(args.output, {"version": VERSION, "command": "experiment"})

    for method, row in sorted(report.best_rows().items(), key=lambda kv: METHODS.index(kv[0])):
        print(f"[experiment] best {method:<13} tau={row.tau:.4g} theta={row.theta:g} d={row.d} "
              f"MSC={row.msc:.4f} VSC={row.vsc if row.vsc is None else round(row.vsc, 4)} "
              f"failures={row.failures}", flush=True)
    failed = sum(1 for r in report.rows if r.msc is None)
    if failed:
        print(f"[experiment] warning: {failed} cell(s) had no successful replicate",
              file=sys.stderr, flush=True)

    if args.pairs_output:
        pair_methods = parse_list(args.pair_methods, str) or ("sir", "pca-tikhonov")
        pairs = projection_pairs(scenario, tuple(m.strip() for m in pair_methods), tau=args.pair_tau)
        pairs.write_csv(args.pairs_output)
        write_sidecar(args.pairs_output, {"command": "experiment --pairs-output",
                                          "methods": list(pairs.methods), "tau": args.pair_tau})
        print("[experiment] Wrote", args.pairs_output, flush=True)
    print(f"[experiment] Wrote {args.output} in {time.time() - start:.1f}s", flush=True)
    return 0


def cmd_priors(args, cfg) -> int:
    print("[priors] built-in priors (Omega = sum_j phi(lambda_j) q_j q_j^t over the top d eigenpairs):")
    print(describe_priors(args.p))
    return 0


# -------------------------------- parser --------------------------------- #

def _add_tau_grid_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--tau-log-min", type=float, default=None, help="Smallest log tau (default -5)")
    sp.add_argument("--tau-log-max", type=float, default=None, help="Largest log tau (default 25)")
    sp.add_argument("--tau-count", type=int, default=None, help="Number of grid points (default 150)")
    sp.add_argument("--tau-base", choices=["e", "10"], default=None, help="Log base of the grid (default e)")


def _add_scenario_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--model", type=int, choices=[1, 2], default=None, help="Synthetic model id")
    sp.add_argument("--n", type=int, default=None, help="Sample size")
    sp.add_argument("--p", type=int, default=None, help="Dimension (>= 5)")
    sp.add_argument("--theta", type=float, default=None, help="Condition exponent: cond(Sigma) = p^theta")
    sp.add_argument("--noise-sd", type=float, default=None, help="Standard deviation of the additive noise")
    sp.add_argument("--seed", type=int, default=None, help="Master seed")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grsir", description="Gaussian-regularized sliced inverse regression.")
    p.add_argument("--version", action="version", version=VERSION)
    p.add_argument("--config", type=pathlib.Path, default=None,
                   help="Path to config.yaml (default: $GRSIR_CONFIG or config/config.yaml)")
    p.add_argument("--selftest", action="store_true", help="Run a small end-to-end pipeline and exit")
    sub = p.add_subparsers(dest="command")

    sp = sub.add_parser("fit", help="Fit a direction and link from a CSV")
    sp.add_argument("--data", type=pathlib.Path, required=True, help="CSV with a header row")
    sp.add_argument("--response", default="y", help="Response column name (default y)")
    sp.add_argument("--prior", choices=list(PRIORS), default=None, help="Prior variant")
    sp.add_argument("--tau", type=float, default=None, help="Regularization parameter")
    sp.add_argument("--cutoff-d", type=int, default=None, help="Retained eigen-directions for PCA priors")
    sp.add_argument("--slices", type=int, default=None, help="Number of slices (h + 1)")
    sp.add_argument("--components", type=int, default=1, help="Number of directions K")
    sp.add_argument("--link-bins", type=int, default=None, help="Link knots (default min(25, n // 10))")
    sp.add_argument("--select-tau", action="store_true",
                    help="Pick tau on the tau grid by training MSE (optimistic)")
    _add_tau_grid_flags(sp)
    sp.add_argument("--output", type=pathlib.Path, required=True, help="Model JSON path")

    sp = sub.add_parser("predict", help="Predict responses with a fitted model")
    sp.add_argument("--model", type=pathlib.Path, required=True, help="Model JSON from 'fit'")
    sp.add_argument("--data", type=pathlib.Path, required=True, help="Predictors CSV")
    sp.add_argument("--output", type=pathlib.Path, required=True, help="Predictions CSV path")

    sp = sub.add_parser("simulate", help="Write a synthetic dataset")
    _add_scenario_flags(sp)
    sp.add_argument("--replicate", type=int, default=0, help="Replicate stream to draw")
    sp.add_argument("--output", type=pathlib.Path, required=True, help="Dataset CSV path")

    sp = sub.add_parser("experiment", help="Run comparison experiment 1, 2 or 3")
    sp.add_argument("exp_id", type=int, choices=[1, 2, 3], help="Experiment id")
    _add_scenario_flags(sp)
    sp.add_argument("--replicates", type=int, default=None, help="Replicates N per cell")
    sp.add_argument("--slices", type=int, default=None, help="Number of slices (h + 1)")
    sp.add_argument("--theta-grid", default=None, help="Comma list of theta values (experiment 2)")
    sp.add_argument("--cutoff-d", type=int, default=None, help="d for PCA methods (experiments 1-2)")
    sp.add_argument("--d-grid", default=None, help="Comma list of d values (experiment 3)")
    sp.add_argument("--methods", default=None, help=f"Comma list from {', '.join(METHODS)}")
    sp.add_argument("--independent-replicates", action="store_true",
                    help="Redraw X for every replicate instead of sharing it")
    sp.add_argument("--threads", type=int, default=None, help="Worker threads (overrides GRSIR_THREADS)")
    _add_tau_grid_flags(sp)
    sp.add_argument("--pairs-output", type=pathlib.Path, default=None,
                    help="Also write true vs estimated index pairs for one replicate")
    sp.add_argument("--pair-methods", default=None, help="Methods for --pairs-output (default sir,pca-tikhonov)")
    sp.add_argument("--pair-tau", type=float, default=1.0, help="tau for --pairs-output (default 1)")
    sp.add_argument("--output", type=pathlib.Path, required=True, help="Report CSV path")

    sp = sub.add_parser("priors", help="List the built-in priors")
    sp.add_argument("--p", type=int, default=None, help="Show the default cut-off for this p")
    return p


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
    "priors": cmd_priors,
}


def selftest() -> None:
    import shutil
    import tempfile

    tmp = pathlib.Path(tempfile.mkdtemp(prefix="grsir_selftest_"))
    try:
        data_csv = tmp / "sim.csv"
        assert main(["simulate", "--model", "1", "--n", "300", "--p", "6", "--theta", "1",
                     "--noise-sd", "0.03", "--seed", "3", "--output", str(data_csv)]) == 0
        meta = json.loads((tmp / "sim.csv.meta.json").read_text(encoding="utf-8"))
        assert len(meta["beta"]) == 6, "simulate sidecar beta"
        print("[selftest] simulate ok")

        model = tmp / "model.json"
        assert main(["fit", "--data", str(data_csv), "--prior", "ridge", "--tau", "0.001",
                     "--output", str(model)]) == 0
        artifact = ModelArtifact.load(model)
        beta = np.asarray(meta["beta"])
        assert float(artifact.fit.direction @ beta) ** 2 > 0.8, "direction recovers beta"
        print("[selftest] fit ok")

        preds = tmp / "pred.csv"
        assert main(["predict", "--model", str(model), "--data", str(data_csv), "--output", str(preds)]) == 0
        assert len(preds.read_text(encoding="utf-8").splitlines()) == 301, "one prediction per row"
        print("[selftest] predict ok")

        report = tmp / "exp1.csv"
        assert main(["experiment", "1", "--model", "1", "--n", "60", "--p", "6", "--replicates", "3",
                     "--tau-count", "3", "--methods", "sir,ridge", "--threads", "1",
                     "--output", str(report)]) == 0
        assert len(report.read_text(encoding="utf-8").splitlines()) == 7, "header + 2 methods x 3 taus"
        print("[selftest] experiment ok")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    print(VERSION, flush=True)
    if args.selftest:
        selftest()
        print("[selftest] OK", flush=True)
        return 0
    if args.command is None:
        build_parser().print_help()
        return 2
    try:
        cfg = read_config(config_path(args.config))
        return COMMANDS[args.command](args, cfg)
    except GrsirError as e:
        print(f"[grsir] error: {e}", file=sys.stderr, flush=True)
        hint = getattr(e, "hint", None)
        if hint:
            print(f"[grsir] hint: {hint}", file=sys.stderr, flush=True)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
