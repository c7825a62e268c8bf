"""Command-line pipeline: ``qsrid generate | fit | check | perturb | validate``.

All commands read one JSON run config (``--config``) and work inside one
output directory (``--out``)::

    <out>/data/train_000.csv ...   generate
    <out>/data/test_000.csv ...    generate
    <out>/baseline.json            fit  (model)
    <out>/fit_report.json          fit
    <out>/check_report.json        check
    <out>/perturbed.json           perturb (model)
    <out>/perturb_report.json      perturb
    <out>/validation_000.csv ...   validate (t, y_true, y_model)
    <out>/validation_report.json   validate

Exit codes: 0 success or feasible, 1 infeasible (``check`` only), 2 usage
or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import io
from .lmi import LmiProblem, solve_feasibility, verify_certificate
from .model import Dataset, StateSpaceModel
from .perturbation import PerturbationError, run_algorithm1
from .simulate import (
    InputSignal,
    NonlinearSystem,
    SimulationError,
    empirical_supply_check,
    example1_system,
    simulate_linear,
    simulate_nonlinear,
)
from .sysid import (
    IdentificationError,
    estimate_initial_state,
    estimate_lipschitz,
    evaluate_model,
    fit_baseline,
)

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

SYSTEMS = ("example1",)


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


# ----------------------------------------------------------------- helpers

def _system(cfg: io.RunConfig):
    if cfg.system == "example1":
        return example1_system()
    path = cfg.resolve(cfg.system)
    if not cfg.system.endswith(".json") or not os.path.isfile(path):
        raise UsageError(f"unknown system {cfg.system!r}: use one of {SYSTEMS} "
                         "or a path to a model JSON file")
    return NonlinearSystem.from_linear(io.load_model(path), name=os.path.basename(path))


def _signal(cfg: io.RunConfig, seed: int, channels: int) -> InputSignal:
    s = dict(cfg.signal)
    kind = s.pop("kind", None)
    try:
        if kind == "multisine":
            return InputSignal.multisine(s["amplitudes"], s["frequencies"], s["duration"], s["dt"],
                                         phases=s.get("phases"), seed=seed, channels=channels)
        if kind == "prbs":
            return InputSignal.prbs(s.get("amplitude", 1.0), s["duration"], s["dt"], seed=seed,
                                    hold_samples=s.get("hold_samples", 1), channels=channels)
        if kind == "step":
            return InputSignal.step(s.get("level", 1.0), s["duration"], s["dt"], channels=channels)
        if kind == "zero":
            return InputSignal.zero(s["duration"], s["dt"], channels=channels)
    except KeyError as exc:
        raise UsageError(f"signal of kind {kind!r} is missing {exc}") from exc
    raise UsageError(f"unknown signal kind {kind!r}")


def _data_files(out: str, split: str) -> list:
    files = sorted(glob.glob(os.path.join(out, "data", f"{split}_*.csv")))
    if not files:
        raise UsageError(f"no {split} trajectories under {os.path.join(out, 'data')}; "
                         "run 'generate' first")
    return files


def _load_dataset(files) -> Dataset:
    return Dataset([io.read_trajectory_csv(f) for f in files])


def _model_path(out: str, override: Optional[str], default: str) -> str:
    path = override or os.path.join(out, default)
    if not os.path.isfile(path):
        raise UsageError(f"model file {path} not found")
    return path


def _cert_dict(cert) -> dict:
    return {"P": np.asarray(cert.P).tolist(), "rho": cert.rho, "nu": cert.nu,
            "margin": cert.margin, "iterations": cert.iterations}


# ---------------------------------------------------------------- commands

def cmd_generate(cfg: io.RunConfig, out: str) -> int:
    sys_ = _system(cfg)
    x0 = np.zeros(sys_.n) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)
    data_dir = os.path.join(out, "data")
    os.makedirs(data_dir, exist_ok=True)
    splits = [("train", k) for k in range(cfg.n_train)] + [("test", k) for k in range(cfg.n_test)]
    for idx, (split, k) in enumerate(splits):
        u = _signal(cfg, int(cfg.seed) + idx, sys_.m)
        traj = simulate_nonlinear(sys_, x0, u)
        io.write_trajectory_csv(os.path.join(data_dir, f"{split}_{k:03d}.csv"), traj,
                                include_states=cfg.include_states)
    return EXIT_OK


def cmd_fit(cfg: io.RunConfig, out: str) -> int:
    files = _data_files(out, "train")
    data = _load_dataset(files)
    res = fit_baseline(data, cfg.fit_config())
    io.save_model(os.path.join(out, "baseline.json"), res.model)
    io.write_json(os.path.join(out, "fit_report.json"), {
        "method": cfg.fit_config().method,
        "order": res.model.n,
        "delta_y_bar": res.delta_y_bar,
        "nrmse_fit": list(res.nrmse_fit),
        "trajectories": [os.path.basename(f) for f in files],
    })
    return EXIT_OK


def cmd_check(cfg: io.RunConfig, out: str, model_file: Optional[str] = None) -> int:
    model = io.load_model(_model_path(out, model_file, "baseline.json"))
    sr = cfg.supply_rate_for(model.p, model.m)
    res = solve_feasibility(LmiProblem(model, sr), cfg.algorithm_config().tolerances)
    report = {"feasible": bool(res.feasible), "supply_rate": cfg.supply_rate}
    if res.feasible:
        report["certificate"] = _cert_dict(res)
        report["verified"] = bool(verify_certificate(model, sr, res).ok)
    else:
        report["best_margin"] = res.best_margin
        report["reason"] = res.reason
    os.makedirs(out, exist_ok=True)
    io.write_json(os.path.join(out, "check_report.json"), report)
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def cmd_perturb(cfg: io.RunConfig, out: str, model_file: Optional[str] = None) -> int:
    data = _load_dataset(_data_files(out, "train"))
    base = io.load_model(_model_path(out, model_file, "baseline.json"))
    fit = evaluate_model(base, data)
    sr = cfg.supply_rate_for(base.p, base.m)
    try:
        rep = run_algorithm1(data, fit, sr, cfg.algorithm_config())
    except PerturbationError as exc:
        io.write_json(os.path.join(out, "perturb_report.json"), {
            "success": False,
            "error": str(exc),
            "iterations": [r._asdict() for r in exc.iterations],
        })
        raise NumericalFailure(str(exc)) from exc
    io.save_model(os.path.join(out, "perturbed.json"), rep.model)
    io.write_json(os.path.join(out, "perturb_report.json"), {
        "success": True,
        "gamma": rep.gamma,
        "delta_C": np.asarray(rep.delta_C).tolist(),
        "alpha": rep.alpha,
        "lipschitz": rep.lipschitz,
        "eps_g": rep.eps_g,
        "epsilon": rep.epsilon,
        "beta": rep.beta,
        "delta_y_bar": rep.baseline_error,
        "delta_y_tilde": rep.delta_y_tilde,
        "rho": rep.certificate.rho,
        "nu": rep.certificate.nu,
        "rho_hat": rep.rho_hat,
        "nu_hat": rep.nu_hat,
        "l1_satisfied": rep.l1_satisfied,
        "l2_satisfied": rep.l2_satisfied,
        "non_monotone": rep.non_monotone,
        "certificate": _cert_dict(rep.certificate),
        "iterations": [r._asdict() for r in rep.iterations],
    })
    return EXIT_OK


def _simulate_on(model: StateSpaceModel, tr):
    x0 = estimate_initial_state(model, tr.u, tr.y, tr.dt)
    return simulate_linear(model, x0, tr.u, tr.dt)


def cmd_validate(cfg: io.RunConfig, out: str, model_file: Optional[str] = None) -> int:
    if model_file is None and os.path.isfile(os.path.join(out, "perturbed.json")):
        model_file = os.path.join(out, "perturbed.json")
    model = io.load_model(_model_path(out, model_file, "baseline.json"))
    test = _load_dataset(_data_files(out, "test"))
    if (model.m, model.p) != (test.m, test.p):
        raise UsageError(f"model (m, p) = ({model.m}, {model.p}) does not match test data "
                         f"({test.m}, {test.p})")
    baseline_path = os.path.join(out, "baseline.json")
    baseline = io.load_model(baseline_path) if os.path.isfile(baseline_path) else None
    sr = cfg.supply_rate_for(model.p, model.m)

    residual, eps_g, fits, slack_model, slack_data = 0.0, 0.0, [], np.inf, np.inf
    base_residual, gap = 0.0, 0.0
    for k, tr in enumerate(test):
        sim = _simulate_on(model, tr)
        err = tr.y - sim.y
        residual += float(np.sum(err ** 2))
        eps_g = max(eps_g, float(np.max(np.linalg.norm(err, axis=1))))
        fits.append(evaluate_model(model, Dataset([tr])).nrmse_fit[0])
        slack_model = min(slack_model, empirical_supply_check(sim, sr).min_slack)
        slack_data = min(slack_data, empirical_supply_check(tr, sr).min_slack)
        if baseline is not None:
            bsim = _simulate_on(baseline, tr)
            base_residual += float(np.sum((tr.y - bsim.y) ** 2))
            gap += float(np.sum((sim.y - bsim.y) ** 2))
        cols = (["t", "y_true", "y_model"] if model.p == 1 else
                ["t"] + [f"y_true{i + 1}" for i in range(model.p)]
                + [f"y_model{i + 1}" for i in range(model.p)])
        table = np.hstack([tr.t[:, None], tr.y, sim.y])
        with open(os.path.join(out, f"validation_{k:03d}.csv"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for row in table:
                fh.write(",".join(io.FLOAT_FMT % v for v in row) + "\n")

    report = {
        "model": os.path.basename(model_file or baseline_path),
        "residual": residual,
        "nrmse_fit": fits,
        "eps_g": eps_g,
        "supply_slack_model": slack_model,
        "supply_slack_data": slack_data,
    }
    if baseline is not None:
        # ||y~ - y^|| <= ||y- - y^|| + ||y~ - y-|| on the stacked test signals
        report["baseline_residual"] = base_residual
        report["model_baseline_gap"] = gap
        report["triangle_bound_holds"] = bool(
            np.sqrt(residual) <= np.sqrt(base_residual) + np.sqrt(gap) + 1e-12 * (1 + np.sqrt(residual)))
    io.write_json(os.path.join(out, "validation_report.json"), report)
    return EXIT_OK


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsrid", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("generate", "simulate training and test trajectories"),
        ("fit", "fit the baseline linear model"),
        ("check", "check strict dissipativity of a model (exit 1 if infeasible)"),
        ("perturb", "perturb the output matrix until strictly dissipative"),
        ("validate", "simulate a model on the test trajectories"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed (nonnegative, < 2**64)")
        if name in ("check", "perturb", "validate"):
            p.add_argument("--model", default=None, help="model JSON (default: from --out)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise UsageError("--seed must be in [0, 2**64)")
        cfg = io.RunConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        os.makedirs(args.out, exist_ok=True)
        if args.command == "generate":
            return cmd_generate(cfg, args.out)
        if args.command == "fit":
            return cmd_fit(cfg, args.out)
        if args.command == "check":
            return cmd_check(cfg, args.out, args.model)
        if args.command == "perturb":
            return cmd_perturb(cfg, args.out, args.model)
        return cmd_validate(cfg, args.out, args.model)
    except (NumericalFailure, SimulationError, IdentificationError, np.linalg.LinAlgError) as exc:
        print(f"qsrid: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"qsrid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
