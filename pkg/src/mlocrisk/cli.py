"""Command-line entry point.

Subcommands: toy, linreg, classify, riskcurve (experiment runners),
diagnose (stationarity and weak-convexity diagnostics), and risk-eval
(one-shot risk evaluation of a loss column).  Each runner writes metric
CSVs, rendered figures, and a manifest.json holding the fully resolved
config; re-running with the manifest as the config reproduces the CSVs
byte for byte.

Exit codes: 0 success, 2 invalid config or unparsable input, 3 diverged
optimizer state.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    BUILDERS,
    load_config_file,
    parse_sigma,
    resolved_dict,
)
from .errors import ConfigError, DivergedStateError, MlocriskError
from .experiments import fmt_sigma, run_classify, run_linreg, run_riskcurve, run_toy
from .figures import (
    classify_error_figure,
    classify_hist_figure,
    diagnose_figure,
    linreg_figure,
    riskcurve_figure,
    toy_figure,
)
from .moreau import (
    EnvelopeConfig,
    StationarityProblem,
    empirical_joint_objective,
    initialization_gap_bound,
    loss_smoothness,
    stationarity_check,
    weak_convexity_constant,
    weak_convexity_probe,
)
from .optimizer import JointState, ProjectionSet, StepSchedule
from .output import write_json, write_metrics
from .riskfn import RiskParams, default_eta
from .risk_eval import Sample, m_location, solve_theta
from .data import synth_regression
from .seeding import derive_seed

log = logging.getLogger("mlocrisk")


def _write_manifest(out_dir, command, cfg, seed):
    manifest = {
        "command": command,
        "config": resolved_dict(cfg),
        "seed": seed,
        "library_version": __version__,
    }
    return write_json(Path(out_dir) / "manifest.json", manifest)


def _run_experiment(command, args):
    raw = load_config_file(args.config) if args.config else {}
    if args.seed is not None:
        raw = dict(raw)
        raw["seed"] = args.seed
    cfg = BUILDERS[command](raw)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    runner = {
        "toy": run_toy,
        "linreg": run_linreg,
        "classify": run_classify,
        "riskcurve": run_riskcurve,
    }[command]
    log.info("running %s", command)
    table = runner(cfg)
    write_metrics(out_dir, table)
    write_json(out_dir / "meta.json", table.meta)
    seed = cfg.classify.seed if command == "riskcurve" else cfg.seed
    _write_manifest(out_dir, command, cfg, seed)
    if not args.no_figures:
        if command == "toy":
            toy_figure(table, out_dir / "toy_trajectories.png")
        elif command == "linreg":
            linreg_figure(table, table.meta, out_dir / "linreg_lines.png")
        elif command == "classify":
            classify_error_figure(table, out_dir / "classify_error.png")
            classify_hist_figure(table, out_dir / "classify_histograms.png")
        elif command == "riskcurve":
            riskcurve_figure(table, out_dir / "riskcurve.png")
    log.info("wrote outputs to %s", out_dir)
    return 0


def _cmd_diagnose(args):
    raw = load_config_file(args.config) if args.config else {}
    if args.seed is not None:
        raw = dict(raw)
        raw["seed"] = args.seed
    cfg = BUILDERS["diagnose"](raw)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    ds = synth_regression(
        cfg.w0, cfg.w1, ("normal", cfg.noise_scale) if cfg.noise_scale > 0 else ("none",),
        cfg.count, seed=derive_seed(cfg.seed, "dataset"),
    )
    examples = ds.to_examples()
    eta = cfg.eta if cfg.eta is not None else default_eta(cfg.sigma)
    params = RiskParams(cfg.sigma, eta)
    lam = loss_smoothness(examples, "squared")
    gamma = weak_convexity_constant(params, lam)
    env_cfg = EnvelopeConfig(beta=1.0 / (2.0 * gamma), gamma=gamma,
                             tol=cfg.prox_tol, max_iter=cfg.prox_max_iter)
    objective = empirical_joint_objective(examples, 1, 1, params, "squared")
    initial = JointState(np.zeros(2), 0.0)
    delta0 = cfg.delta0
    delta0_is_estimate = False
    if delta0 is None:
        delta0 = initialization_gap_bound(objective, initial, params)
    problem = StationarityProblem(
        examples=examples, d_in=1, n_out=1, params=params, loss="squared",
        initial=initial, projection=ProjectionSet.identity(),
        batch_size=cfg.batch_size, batch_mode="iid_with_replacement",
        kappa_sq=cfg.kappa_sq, delta0=delta0,
        kappa_sq_is_estimate=cfg.kappa_sq_is_estimate,
        delta0_is_estimate=delta0_is_estimate,
    )
    schedule = StepSchedule.horizon(delta0, gamma, cfg.kappa_sq, cfg.n)
    log.info("diagnose: gamma=%.4g beta=%.4g delta0=%.4g alpha=%.4g",
             gamma, env_cfg.beta, delta0, schedule.alpha)
    report = stationarity_check(problem, cfg.n, cfg.trials, env_cfg, cfg.seed,
                                schedule=schedule)
    report_dict = report.to_dict()
    report_dict["lambda_smooth"] = lam
    write_json(out_dir / "stationarity_report.json", report_dict)

    probe = weak_convexity_probe(objective, gamma, cfg.probe_triples,
                                 cfg.probe_radius, derive_seed(cfg.seed, "probe"))
    write_json(out_dir / "probe_report.json", probe.to_dict())
    _write_manifest(out_dir, "diagnose", cfg, cfg.seed)
    if not args.no_figures:
        diagnose_figure(report_dict, out_dir / "diagnose.png")
    log.info(
        "stationarity: mean=%.4g bound=%.4g holds=%s; probe violations=%d",
        report.env_grad_norm_sq_mean, report.theorem_bound,
        report.env_grad_norm_sq_mean <= report.theorem_bound, probe.violations,
    )
    return 0


def _read_loss_column(path):
    """Single numeric column, optional header, one value per line."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            cell = text.split(",")[0].strip()
            try:
                values.append(float(cell))
            except ValueError:
                if i == 1:  # header row
                    continue
                raise ConfigError(f"line {i}: could not parse {cell!r} as a number")
    if not values:
        raise ConfigError(f"no numeric values found in {path}")
    return np.array(values)


def _cmd_risk_eval(args):
    raw = {}
    if args.config:
        raw = load_config_file(args.config)
    path = args.input or raw.get("input")
    if path is None:
        raise ConfigError("required field is missing", field="input")
    sigma_raw = args.sigma if args.sigma is not None else raw.get("sigma")
    if sigma_raw is None:
        raise ConfigError("required field is missing", field="sigma")
    sigma = parse_sigma(sigma_raw, "sigma")
    eta = args.eta if args.eta is not None else raw.get("eta")
    if eta is None:
        eta = default_eta(sigma)
    try:
        params = RiskParams(sigma, float(eta))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), field="eta")
    sample = Sample(_read_loss_column(path))
    solution = solve_theta(sample, params)
    result = {
        "sigma": fmt_sigma(sigma),
        "eta": params.eta,
        "theta_star": solution.theta_star,
        "risk": solution.risk_value,
        "n": sample.n,
    }
    if 0 < sigma < math.inf:
        result["m_location"] = m_location(sample, sigma)
    print(json.dumps(result, sort_keys=True))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mlocrisk",
        description="Location-deviation risk experiments and diagnostics",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out=True):
        p.add_argument("--config", help="flat JSON config (or a manifest.json)")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the root seed")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering (CSVs/JSON only)")
        p.add_argument("-v", "--verbose", action="store_true")

    for name in ("toy", "linreg", "classify", "riskcurve", "diagnose"):
        add_common(sub.add_parser(name, help=f"run the {name} study"))

    pe = sub.add_parser("risk-eval", help="evaluate the risk of a loss column")
    pe.add_argument("--input", help="CSV file with one numeric column of losses")
    pe.add_argument("--sigma", help="sigma level (number or 'inf')")
    pe.add_argument("--eta", type=float, default=None, help="deviation weight")
    pe.add_argument("--config", help="JSON config with input/sigma/eta fields")
    pe.add_argument("-v", "--verbose", action="store_true")

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(name)s: %(message)s",
    )
    try:
        if args.command in ("toy", "linreg", "classify", "riskcurve"):
            return _run_experiment(args.command, args)
        if args.command == "diagnose":
            return _cmd_diagnose(args)
        if args.command == "risk-eval":
            return _cmd_risk_eval(args)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DivergedStateError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except MlocriskError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
