"""Command-line front end.

Exit codes: 0 success, 1 usage or config error, 2 numerical failure,
3 at least one bound check violated.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness
from .config import ConfigError, load_config
from .distributions import derive_seed, generate_dataset, noise_from_config
from .errors import HuberLearnError, NumericalError
from .theory import oracle_shift, risk_deriv_at

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_VIOLATION = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", metavar="PATH", help="TOML config merged over the shipped default")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (dotted path, TOML value); repeatable")
    p.add_argument("--out", metavar="DIR", help="output directory (default: output_dir from the config)")


def build_parser():
    parser = _Parser(prog="huberlearn", description="Huber ERM with an adaptive scale parameter.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("fit", help="run one ERM fit and print its diagnostics")
    _common(p)
    p.add_argument("--n", type=int, help="sample size (default: fit.n)")
    p = sub.add_parser("oracle", help="tabulate the oracle shift and risk derivative over sigma")
    _common(p)
    p.add_argument("--noise", help="noise family (default: model.noise from the config)")
    p.add_argument("--sigma", type=float, action="append", help="sigma value; repeatable")
    for name, text in (("rates", "convergence-rate sweep"), ("bias-demo", "fixed vs adaptive sigma offsets"),
                       ("verify-bounds", "randomized bound-check suite"),
                       ("baselines", "Huber against least squares and LAD")):
        _common(sub.add_parser(name, help=text))
    return parser


def _out_dir(args, cfg):
    return args.out if args.out else cfg.get("output_dir", "results")


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=harness._jsonable))


def cmd_fit(args, cfg):
    ec = harness.ExperimentConfig.from_dict(cfg, "fit")
    n = args.n if args.n is not None else int(cfg["fit"]["n"])
    if n < 1:
        raise ConfigError("must be a positive count", "fit.n")
    seed = derive_seed(ec.master_seed, harness.DATA, n, 0)
    data = generate_dataset(ec.model, n, seed)
    sigma = ec.sigma_policy.sigmas(n)[0]
    est, flags = harness._quiet_fit(ec.space, data, sigma, ec.solver)
    d = est.diagnostics
    report = {"n": n, "seed": seed, "sigma": sigma, "iters": d["iters"], "converged": d["converged"],
              "risk": d["risk"], "grad_norm": d["grad_norm"], "clip_count": d["clip_count"],
              "fallback_steps": d["fallback_steps"], "projected": d["projected"],
              "l2_sq_error": harness._sq_error(est, ec.model), "coeffs": est.coeffs.tolist(), "warnings": flags}
    _print_json(report)
    if args.out:
        harness.write_json(report, os.path.join(args.out, "fit.json"))
    return EXIT_OK


def cmd_oracle(args, cfg):
    noise_cfg = dict(cfg["model"]["noise"])
    if args.noise and args.noise != noise_cfg.get("family"):
        noise_cfg = {"family": args.noise}
    try:
        spec = noise_from_config(noise_cfg)
    except HuberLearnError as exc:
        raise ConfigError(str(exc), "--noise" if args.noise else "model.noise") from None
    sigmas = args.sigma or cfg["oracle"]["sigmas"]
    rows = []
    print(f"noise: {spec.family}")
    # the bisection width is 1e-12, so 12 decimals are all that is resolved
    print(f"{'sigma':>10}  {'c(sigma)':>16}  {'D(0, sigma)':>16}")
    for s in sigmas:
        c, d0 = oracle_shift(spec, s), risk_deriv_at(0.0, s, spec)
        rows.append({"sigma": float(s), "shift": c, "deriv_at_0": d0})
        print(f"{s:>10.6g}  {c:>16.12f}  {d0:>16.12f}")
    if args.out:
        harness.write_json({"noise": spec.to_config(), "rows": rows}, os.path.join(args.out, "oracle.json"))
    return EXIT_OK


def cmd_rates(args, cfg):
    ec = harness.ExperimentConfig.from_dict(cfg, "rates")
    report = harness.run_rate_experiment(ec)
    summary = report.summary()
    summary["config"] = cfg
    for label, curve in report.curves.items():
        fit = report.slopes[label]
        slope = "undefined (fewer than 3 grid points)" if fit is None else f"{fit[0]:.4f} +- {fit[2]:.4f}"
        print(f"[{label}] slope {slope}")
        for n, err in curve.items():
            print(f"  n={n:<8d} mean l2_sq_error={err:.6g}")
    t = report.tallies()
    print(f"row-wise comparison checks: {t['satisfied']}/{t['checked']} satisfied; {len(report.failures)} failed rows")
    out = _out_dir(args, cfg)
    harness.write_csv(report.rows, os.path.join(out, "rates.csv"), harness.RATE_HEADER)
    harness.write_json(summary, os.path.join(out, "rates.json"))
    return EXIT_VIOLATION if t["violated"] else EXIT_OK


def cmd_bias_demo(args, cfg):
    ec = harness.ExperimentConfig.from_dict(cfg, "bias_demo")
    rows = harness.run_bias_demo(ec)
    print(f"{'mode':>8}  {'sigma':>10}  {'n':>7}  {'offset':>12}  {'stderr':>10}  {'oracle':>12}")
    for r in rows:
        print(f"{r['mode']:>8}  {r['sigma']:>10.5g}  {r['n']:>7d}  {r['mean_offset']:>12.6f}  "
              f"{r['stderr']:>10.2e}  {r['oracle_offset']:>12.6f}")
    out = _out_dir(args, cfg)
    harness.write_csv(rows, os.path.join(out, "bias_demo.csv"), harness.BIAS_HEADER)
    harness.write_json({"rows": rows, "config": cfg}, os.path.join(out, "bias_demo.json"))
    return EXIT_OK


def cmd_verify_bounds(args, cfg):
    report = harness.run_bound_suite(cfg, workers=int(cfg.get("workers", 1)))
    for name, t in report.by_check().items():
        print(f"{name:>18}: {t['satisfied']} satisfied, {t['violated']} violated, {t['skipped']} skipped")
    print(report.tally())
    summary = report.summary()
    summary["config"] = cfg
    harness.write_json(summary, os.path.join(_out_dir(args, cfg), "bounds.json"))
    return EXIT_OK if report.satisfied == report.total else EXIT_VIOLATION


def cmd_baselines(args, cfg):
    ec = harness.ExperimentConfig.from_dict(cfg, "baselines")
    rows = harness.run_baselines(ec)
    disp = harness.dispersion(rows)
    if not rows:
        print("no comparators requested")
    for method, d in disp.items():
        print(f"{method:>14}: median {d['median']:.5g}  IQR {d['iqr']:.5g}  ({d['count']} replicates)")
    out = _out_dir(args, cfg)
    harness.write_csv(rows, os.path.join(out, "baselines.csv"), harness.BASELINE_HEADER)
    harness.write_json({"dispersion": disp, "config": cfg}, os.path.join(out, "baselines.json"))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "oracle": cmd_oracle, "rates": cmd_rates, "bias-demo": cmd_bias_demo,
            "verify-bounds": cmd_verify_bounds, "baselines": cmd_baselines}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        return COMMANDS[args.command](args, cfg)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (HuberLearnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
