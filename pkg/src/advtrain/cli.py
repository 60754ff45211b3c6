"""Command-line entry point: ``advtrain <subcommand> ...``."""

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from .experiments import (PRESET_NAMES, ConfigError, ModelCfg, _format_errors, apply_overrides,
                          csv_text, emit_plotdata, get_preset, load_config, run_experiment)
from .risk import optimal_theta, population_risk


def _parse_vector(text):
    path = Path(text)
    if path.suffix == ".npy" and path.exists():
        return np.load(path).astype(float).ravel()
    if path.exists():
        return np.loadtxt(path, delimiter=",", ndmin=1).astype(float).ravel()
    try:
        return np.array([float(v) for v in text.replace(" ", "").split(",") if v], dtype=float)
    except ValueError:
        raise ConfigError(f"--theta: cannot parse {text!r} as a comma list or file") from None


def _load_model(text):
    """Model spec from a YAML file or an inline YAML mapping."""
    path = Path(text)
    data = yaml.safe_load(path.read_text(encoding="utf-8")) if path.exists() else yaml.safe_load(text)
    if isinstance(data, dict) and "model" in data and "theta0" not in data:
        data = data["model"]
    try:
        return ModelCfg.model_validate(data).build()
    except ValidationError as exc:
        raise ConfigError(f"--model: {_format_errors(exc)}") from None


def _report(table, out):
    failures = table.failures
    ok = len(table.records) - len(failures)
    print(f"{table.experiment}: {ok}/{len(table.records)} replications ok, results in {out}")
    for rec in failures:
        print(f"  FAILED {rec.series} replication {rec.replication} (seed {rec.seed}): {rec.error}",
              file=sys.stderr)
    return 1 if failures else 0


def cmd_preset(args):
    if args.name not in PRESET_NAMES:
        print(f"unknown preset {args.name!r}; valid presets: {', '.join(PRESET_NAMES)}", file=sys.stderr)
        return 2
    cfg = get_preset(args.name)
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"data.seed={args.seed}")
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    out = Path(args.out) / cfg.experiment if args.out else None
    table, out = run_experiment(cfg, out, threads=args.threads)
    return _report(table, out)


def cmd_custom(args):
    cfg = load_config(args.config)
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    out = Path(args.out) / cfg.experiment if args.out else None
    table, out = run_experiment(cfg, out, threads=args.threads)
    return _report(table, out)


def cmd_plotdata(args):
    for path in emit_plotdata(args.dir, args.out):
        print(path)
    return 0


def cmd_risk(args):
    model = _load_model(args.model)
    theta = _parse_vector(args.theta)
    if theta.shape != (model.d,):
        raise ConfigError(f"--theta has length {theta.shape[0]}, model has d={model.d}")
    rows = []
    for eps in args.epsilon:
        rep = population_risk(theta, model, eps, args.norm)
        rows.append([eps, args.norm, rep.value, rep.normalized, rep.standard, rep.quadratic, rep.cross])
    sys.stdout.write(csv_text(["epsilon", "norm", "risk", "risk_over_v2", "standard", "quadratic",
                               "cross"], rows))
    return 0


def cmd_optimum(args):
    model = _load_model(args.model)
    rows = []
    for eps in args.epsilon:
        opt = optimal_theta(model, eps, args.norm)
        theta = ";".join(repr(float(t)) for t in opt.theta_star)
        rows.append([eps, args.norm, opt.r_star, opt.r_star / model.v2, float(np.linalg.norm(opt.theta_star)),
                     opt.method, theta])
    sys.stdout.write(csv_text(["epsilon", "norm", "r_star", "r_star_over_v2", "theta_norm", "method",
                               "theta_star"], rows))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="advtrain", description="Adversarial training experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("preset", help="run a named experiment preset")
    pr.add_argument("name", help=f"one of: {', '.join(PRESET_NAMES)}")
    pr.add_argument("--seed", type=int, help="root seed (replication r uses seed + r)")
    pr.add_argument("--out", help="output root (default $ADVTRAIN_OUT or ./results)")
    pr.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    pr.add_argument("--threads", type=int, help="parallel replications (default $ADVTRAIN_THREADS or 1)")
    pr.set_defaults(func=cmd_preset)

    cu = sub.add_parser("custom", help="run an experiment from a YAML config")
    cu.add_argument("config")
    cu.add_argument("--out")
    cu.add_argument("--set", action="append", metavar="KEY=VALUE")
    cu.add_argument("--threads", type=int)
    cu.set_defaults(func=cmd_custom)

    pl = sub.add_parser("plotdata", help="write tidy plot CSVs for a results directory")
    pl.add_argument("dir")
    pl.add_argument("--out", help="directory for the plot CSVs (default: the results directory)")
    pl.set_defaults(func=cmd_plotdata)

    for name, func, text in (("risk", cmd_risk, "closed-form population adversarial risk"),
                             ("optimum", cmd_optimum, "robust optimum theta* and R*")):
        sp = sub.add_parser(name, help=text)
        if name == "risk":
            sp.add_argument("--theta", required=True, help="comma list, .npy or .csv file")
        sp.add_argument("--model", required=True, help="YAML file or inline mapping with theta0/sigma/noise_var")
        sp.add_argument("--epsilon", required=True, type=float, nargs="+")
        sp.add_argument("--norm", choices=("l2", "linf"), default="l2")
        sp.set_defaults(func=func)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
