"""Experiment configs, presets, the replication runner and CSV output."""

import copy
import csv
import io
import itertools
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .attack import AttackSpec, attack_difference
from .datagen import make_gen_model, sample_dataset, sparse_theta
from .highdim import auto_eta
from .network import TwoLayerNet, balance_outer_weights
from .risk import optimal_theta, population_risk
from .train import (TRAJECTORY_COLUMNS, TrainConfig, adv_train_linear, adv_train_two_layer,
                    schedule_from_theorem, theorem_lambda)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SparseTheta(_Strict):
    d: int = Field(ge=1)
    s: int = Field(ge=0)
    value: float = 1.0


class SparseThetaSpec(_Strict):
    sparse: SparseTheta


class DiagSigma(_Strict):
    diag: list[float]


class BlocksSigma(_Strict):
    blocks: list[list[list[float]]]


class MatrixSigma(_Strict):
    matrix: Union[str, list[list[float]]]


class ModelCfg(_Strict):
    theta0: Union[list[float], SparseThetaSpec]
    sigma: Union[Literal["identity"], DiagSigma, BlocksSigma, MatrixSigma] = "identity"
    noise_var: float = Field(1.0, ge=0)

    def build(self):
        t = self.theta0
        theta0 = sparse_theta(t.sparse.d, t.sparse.s, t.sparse.value) if isinstance(t, SparseThetaSpec) else t
        sigma = self.sigma if isinstance(self.sigma, str) else self.sigma.model_dump()
        return make_gen_model(theta0, sigma, self.noise_var)


class DataCfg(_Strict):
    n: int = Field(ge=1)
    seed: int = 0
    replications: int = Field(1, ge=1)
    mirror: bool = False


class PGDMethod(_Strict):
    pgd: int = Field(ge=1)


class AttackCfg(_Strict):
    norm: Literal["l2", "linf"] = "l2"
    epsilon: float = Field(0.0, ge=0)
    xi: float = Field(0.0, ge=0)
    method: Union[Literal["exact", "fgm"], PGDMethod] = "exact"

    def spec(self, xi=None):
        method, steps = (self.method, 10) if isinstance(self.method, str) else ("pgd", self.method.pgd)
        return AttackSpec(self.norm, self.epsilon, self.xi if xi is None else xi, method, steps)


class VanishingInit(_Strict):
    vanishing: float = Field(ge=0)


class GradNormStop(_Strict):
    grad_norm: float = Field(gt=0)


class TrainCfg(_Strict):
    eta: Union[float, Literal["auto", "lipschitz", "theorem"]] = 0.01
    max_iters: Union[int, Literal["theorem"]] = 1000
    init: Union[Literal["zero", "ols"], VanishingInit, list[float]] = "zero"
    lambda_l1: Union[float, Literal["theorem"]] = 0.0
    lambda_c: float = Field(2.0, gt=0)
    xi_schedule: Literal["constant", "theorem"] = "constant"
    L: float = Field(10.0, gt=0)
    stop: Union[Literal["fixed_T", "highdim_threshold"], GradNormStop] = "fixed_T"
    track_highdim_T: bool = False
    track_grad_gap: bool = False
    eval_every: int = Field(0, ge=0)
    n_mc: int = Field(10_000, ge=1)

    @field_validator("eta")
    @classmethod
    def _eta_positive(cls, v):
        if isinstance(v, float) and not (math.isfinite(v) and v > 0):
            raise ValueError("must be a positive finite number")
        return v

    @field_validator("lambda_l1")
    @classmethod
    def _lambda_nonneg(cls, v):
        if isinstance(v, float) and v < 0:
            raise ValueError("must be >= 0")
        return v


class NetworkCfg(_Strict):
    hidden: int = Field(ge=1)
    activation: Literal["identity", "sigmoid", "relu"] = "sigmoid"
    scale: float = Field(0.25, gt=0)
    balance: bool = False


class ProbeCfg(_Strict):
    steps: int = Field(5, ge=1)
    theta: Union[Literal["theta0"], list[float]] = "theta0"


class Variant(_Strict):
    label: str
    set: dict[str, Any] = Field(default_factory=dict)


class ExperimentConfig(_Strict):
    experiment: str
    kind: Literal["train", "attack_difference"] = "train"
    model: ModelCfg
    data: DataCfg
    attack: AttackCfg = AttackCfg()
    train: TrainCfg = TrainCfg()
    network: NetworkCfg | None = None
    probe: ProbeCfg | None = None
    variants: list[Variant] = Field(default_factory=list)
    sweep: dict[str, list[Any]] = Field(default_factory=dict)

    def to_dict(self):
        return self.model_dump(mode="json")

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None, width=100)


def _format_errors(exc):
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"] if not (isinstance(p, str) and (p[:1].isupper() or "[" in p)))
        parts.append(f"{loc or '<root>'}: {err['msg']}")
    return "; ".join(dict.fromkeys(parts))


def config_from_dict(data):
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {_format_errors(exc)}") from None


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def parse_yaml(text):
    return config_from_dict(yaml.safe_load(text))


def set_path(data, dotted, value):
    """Assign ``value`` at ``a.b.c`` inside nested dicts, creating levels as needed."""
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        if node.get(k) is None:
            node[k] = {}
        node = node[k]
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {k} is not a mapping")
    node[keys[-1]] = value


def apply_overrides(config, overrides):
    """Apply ``key=value`` strings (values parsed as YAML) and re-validate."""
    data = config.to_dict()
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        set_path(data, key.strip(), yaml.safe_load(raw))
    return config_from_dict(data)


# ---------------------------------------------------------------- presets

def _identity_d10():
    return {"theta0": [1.0] * 10, "sigma": "identity", "noise_var": 1.0}


def _sparse(d, noise_var=1.0):
    return {"theta0": {"sparse": {"d": d, "s": 10, "value": 1.0}}, "sigma": "identity", "noise_var": noise_var}


def _networks(etas, relu_eta):
    return [
        {"label": "identity", "set": {"network.activation": "identity", "train.eta": etas}},
        {"label": "sigmoid", "set": {"network.activation": "sigmoid", "train.eta": etas}},
        {"label": "relu", "set": {"network.activation": "relu", "network.balance": True,
                                  "train.eta": relu_eta}},
    ]


_PRESETS = {
    "fig1_smoothing": {
        "experiment": "fig1_smoothing",
        "model": _identity_d10(),
        "data": {"n": 1000, "seed": 0, "replications": 1},
        "attack": {"norm": "l2", "epsilon": 3.0, "xi": 0.0, "method": "exact"},
        "train": {"eta": 5e-4, "max_iters": 2000, "init": "ols"},
        "variants": [{"label": "xi=0", "set": {"attack.xi": 0.0}},
                     {"label": "xi=0.05", "set": {"attack.xi": 0.05}}],
    },
    "fig3_highdim": {
        "experiment": "fig3_highdim",
        "model": _sparse(1000),
        "data": {"n": 20, "seed": 0, "replications": 100},
        "attack": {"norm": "l2", "epsilon": 0.0, "xi": 0.5, "method": "exact"},
        "train": {"eta": 1e-3, "max_iters": 2000, "init": "zero", "track_highdim_T": True},
        "sweep": {"attack.epsilon": [0.0, 0.01, 0.1]},
    },
    "a1_lowdim_linear": {
        "experiment": "a1_lowdim_linear",
        "model": _identity_d10(),
        "data": {"n": 1000, "seed": 0, "replications": 100},
        "attack": {"norm": "l2", "epsilon": 0.5, "xi": 0.1, "method": "exact"},
        "train": {"eta": 0.01, "max_iters": 1000, "init": "zero"},
        "sweep": {"attack.epsilon": [0.1, 0.3, 0.5, 0.7, 1.0, 3.0]},
    },
    "theorem_schedule": {
        "experiment": "theorem_schedule",
        "model": _identity_d10(),
        "data": {"n": 1000, "seed": 0, "replications": 20},
        "attack": {"norm": "l2", "epsilon": 0.5, "xi": 0.0, "method": "exact"},
        "train": {"eta": "theorem", "max_iters": "theorem", "init": "zero", "xi_schedule": "theorem"},
        "sweep": {"attack.epsilon": [0.5, 3.0]},
    },
    "a2_lowdim_networks": {
        "experiment": "a2_lowdim_networks",
        "model": {"theta0": [1 / math.sqrt(3)] * 3, "sigma": "identity", "noise_var": 1.0},
        "data": {"n": 100, "seed": 0, "replications": 50},
        "attack": {"norm": "l2", "epsilon": 0.5, "xi": 0.01, "method": "fgm"},
        "train": {"eta": 0.2, "max_iters": 4000, "init": {"vanishing": 0.5}, "eval_every": 500,
                  "n_mc": 10000},
        "network": {"hidden": 50, "activation": "sigmoid", "scale": 0.25},
        "variants": _networks(0.2, 0.8),
    },
    "a4_highdim_variants": {
        "experiment": "a4_highdim_variants",
        "model": _sparse(1000),
        "data": {"n": 20, "seed": 0, "replications": 20},
        "attack": {"norm": "l2", "epsilon": 0.0, "xi": 0.5, "method": "exact"},
        "train": {"eta": 1e-3, "max_iters": 2000, "init": "zero", "track_highdim_T": True,
                  "track_grad_gap": True},
        "variants": [
            {"label": "d=1000,xi=0", "set": {"attack.xi": 0.0}},
            {"label": "d=5000,xi=0.5", "set": {"model.theta0.sparse.d": 5000, "train.eta": 2e-4}},
            {"label": "d=5000,xi=0", "set": {"model.theta0.sparse.d": 5000, "train.eta": 2e-4,
                                             "attack.xi": 0.0}},
        ],
        "sweep": {"attack.epsilon": [0.0, 0.01, 0.1]},
    },
    "a5_highdim_networks": {
        "experiment": "a5_highdim_networks",
        "model": _sparse(1000, noise_var=0.1),
        "data": {"n": 20, "seed": 0, "replications": 5},
        "attack": {"norm": "l2", "epsilon": 0.0, "xi": 0.1, "method": "fgm"},
        "train": {"eta": 0.16, "max_iters": 300, "init": {"vanishing": 0.6 * math.log(1000) / math.log(50)},
                  "track_highdim_T": True, "n_mc": 5000},
        "network": {"hidden": 50, "activation": "sigmoid", "scale": 0.25},
        "variants": _networks(0.16, 0.64),
        "sweep": {"attack.epsilon": [0.0, 0.01, 0.1]},
    },
    "lasso_sparse_l2": {
        "experiment": "lasso_sparse_l2",
        "model": _sparse(1000),
        "data": {"n": 400, "seed": 0, "replications": 3},
        "attack": {"norm": "l2", "epsilon": 0.3, "xi": 0.01, "method": "exact"},
        "train": {"eta": "lipschitz", "max_iters": 1500, "init": "zero"},
        "sweep": {"data.n": [50, 100, 200, 400], "train.lambda_l1": [0.0, "theorem"]},
    },
    "lasso_sparse_linf": {
        "experiment": "lasso_sparse_linf",
        "model": _sparse(1000),
        "data": {"n": 400, "seed": 0, "replications": 3},
        "attack": {"norm": "linf", "epsilon": 0.03, "xi": 1e-4, "method": "exact"},
        "train": {"eta": "lipschitz", "max_iters": 1500, "init": "zero"},
        "sweep": {"data.n": [50, 100, 200, 400], "train.lambda_l1": [0.0, "theorem"]},
    },
    "attack_difference": {
        "experiment": "attack_difference",
        "kind": "attack_difference",
        "model": _identity_d10(),
        "data": {"n": 1000, "seed": 0, "replications": 5},
        "attack": {"norm": "l2", "epsilon": 0.5, "xi": 0.0, "method": {"pgd": 5}},
        "probe": {"steps": 5, "theta": "theta0"},
        "sweep": {"attack.epsilon": [0.25, 0.5, 1.0, 2.0, 3.0]},
    },
}

PRESET_NAMES = tuple(_PRESETS)


def get_preset(name):
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    return config_from_dict(copy.deepcopy(_PRESETS[name]))


# ---------------------------------------------------------------- running

def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def csv_text(header, rows):
    """Comma-separated, LF-terminated CSV text with ``repr`` floats."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    Path(path).write_text(csv_text(header, rows), encoding="utf-8", newline="")


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _series_configs(config):
    """Expand variants x sweep into ``(label, config)`` pairs."""
    base = config.to_dict()
    base["variants"], base["sweep"] = [], {}
    variants = config.variants or [Variant(label="")]
    keys = list(config.sweep)
    combos = list(itertools.product(*(config.sweep[k] for k in keys))) if keys else [()]
    out = []
    for var in variants:
        for combo in combos:
            data = copy.deepcopy(base)
            for k, v in var.set.items():
                set_path(data, k, copy.deepcopy(v))
            for k, v in zip(keys, combo):
                set_path(data, k, copy.deepcopy(v))
            parts = [var.label] if var.label else []
            parts += [f"{k.split('.')[-1]}={_fmt(v)}" for k, v in zip(keys, combo)]
            label = ",".join(parts) or config.experiment
            try:
                cfg = ExperimentConfig.model_validate(data)
            except ValidationError as exc:
                raise ConfigError(f"series {label}: {_format_errors(exc)}") from None
            out.append((label, cfg))
    return out


@dataclass
class RunRecord:
    series: str
    replication: int
    seed: int
    status: str
    metrics: dict = field(default_factory=dict)
    error: str = ""
    trajectory: dict | None = None


@dataclass
class ResultTable:
    """Per-replication records plus per-series mean and standard deviation."""

    experiment: str
    records: list = field(default_factory=list)

    METRICS = ("n", "d", "epsilon", "train_loss_surrogate", "train_loss_exact", "pop_risk", "standard_risk", "r_star",
               "rel_gap", "train_over_v2", "pop_over_v2", "theta_norm_sq_over_v2", "theta_norm",
               "theta_l1", "l1_error", "lambda", "xi", "eta", "T", "stopping_T", "increases",
               "monotone", "diverged", "attack_diff", "attack_diff_rel")

    def series(self):
        return list(dict.fromkeys(r.series for r in self.records))

    @property
    def failures(self):
        return [r for r in self.records if r.status != "ok"]

    def aggregate(self, series, metric):
        vals = np.array([r.metrics.get(metric, math.nan) for r in self.records
                         if r.series == series and r.status == "ok"], dtype=float)
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            return math.nan, math.nan
        sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        return float(np.mean(vals)), sd

    def rows(self):
        header = ["series", "replication", "seed", "status"] + list(self.METRICS) + ["error"]
        rows = []
        for r in self.records:
            rows.append([r.series, r.replication, r.seed, r.status]
                        + [r.metrics.get(m, math.nan) for m in self.METRICS] + [r.error])
        for s in self.series():
            stats = [self.aggregate(s, m) for m in self.METRICS]
            n_ok = sum(1 for r in self.records if r.series == s and r.status == "ok")
            rows.append([s, "mean", "", f"ok={n_ok}"] + [m for m, _ in stats] + [""])
            rows.append([s, "sd", "", f"ok={n_ok}"] + [sd for _, sd in stats] + [""])
        return header, rows


def _resolve_eta(tc, X, spec):
    if isinstance(tc.eta, float):
        return tc.eta
    if tc.eta == "auto":
        return auto_eta(X)
    if tc.eta == "lipschitz":
        n = X.shape[0]
        top = np.linalg.norm(X, 2) + spec.epsilon * math.sqrt(n) * (math.sqrt(X.shape[1]) if spec.norm == "linf" else 1.0)
        return 0.9 * n / (2.0 * top ** 2)
    raise ConfigError(f"train.eta: {tc.eta!r} needs train.xi_schedule = theorem")


def _outer_weights(cfg, rng):
    a = rng.uniform(-1.0, 1.0, size=cfg.network.hidden)
    return balance_outer_weights(a) if cfg.network.balance else a


def _run_train(cfg, model, seed):
    tc = cfg.train
    ds = sample_dataset(model, cfg.data.n, seed)
    X, y = ds.X, ds.y
    if cfg.data.mirror:
        X, y = np.vstack([X, -X]), np.concatenate([y, -y])
    aux = np.random.default_rng([seed, 1])
    a = _outer_weights(cfg, aux) if cfg.network is not None else None
    spec = cfg.attack.spec()
    eta, T = tc.eta, tc.max_iters
    if tc.xi_schedule == "theorem":
        regime = "linear" if cfg.network is None else ("relu" if cfg.network.activation == "relu" else "network")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sched = schedule_from_theorem(y, X.shape[1], regime, L=tc.L, a=a)
        if not sched.valid:
            raise ValueError("; ".join(sched.warnings) or "theorem schedule undefined")
        spec = cfg.attack.spec(xi=sched.xi)
        eta = sched.eta if tc.eta == "theorem" else eta
        T = sched.T if tc.max_iters == "theorem" else T
    if eta == "theorem" or T == "theorem":
        raise ConfigError("train.eta/max_iters = theorem need train.xi_schedule = theorem")
    eta = _resolve_eta(tc.model_copy(update={"eta": eta}), X, spec)
    lam = tc.lambda_l1
    if lam == "theorem":
        s = int(np.count_nonzero(model.theta0))
        lam = theorem_lambda(model.v, s, model.d, X.shape[0], c=tc.lambda_c, xi=spec.xi)
    init = tc.init
    if isinstance(init, VanishingInit):
        init = ("vanishing", init.vanishing)
    stop = tc.stop if isinstance(tc.stop, str) else ("grad_norm", tc.stop.grad_norm)
    config = TrainConfig(eta=float(eta), max_iters=int(T), init=init, lambda_l1=float(lam), stop=stop,
                         eval_every=tc.eval_every, n_mc=tc.n_mc, mc_seed=seed + 10_000_019,
                         track_highdim_T=tc.track_highdim_T, track_grad_gap=tc.track_grad_gap)
    if cfg.network is None:
        traj = adv_train_linear(X, y, spec, config, model)
        coef = traj.final_params
    else:
        W0 = np.zeros((X.shape[1], cfg.network.hidden))
        net = TwoLayerNet(W0, a, cfg.network.activation, cfg.network.scale)
        traj = adv_train_two_layer(X, y, net, spec, config, model, rng=aux)
        coef = traj.final_params.effective_coef()
    opt = optimal_theta(model, spec.epsilon, spec.norm)
    last = {c: traj.columns[c][-1] for c in TRAJECTORY_COLUMNS}
    v2 = model.v2
    metrics = {
        "train_loss_surrogate": last["train_loss_surrogate"],
        "train_loss_exact": last["train_loss_exact"],
        "pop_risk": last["pop_risk"],
        "standard_risk": population_risk(coef, model, 0.0).value,
        "r_star": opt.r_star,
        "rel_gap": (last["pop_risk"] - opt.r_star) / opt.r_star,
        "train_over_v2": last["train_loss_surrogate"] / v2,
        "pop_over_v2": last["pop_risk"] / v2,
        "theta_norm_sq_over_v2": float(coef @ coef) / v2,
        "theta_norm": last["theta_norm"],
        "theta_l1": last["theta_l1"],
        "l1_error": float(np.abs(coef - opt.theta_star).sum()),
        "n": X.shape[0],
        "d": X.shape[1],
        "epsilon": spec.epsilon,
        "lambda": float(lam),
        "xi": spec.xi,
        "eta": float(eta),
        "T": int(T),
        "stopping_T": math.nan if traj.stopping_T is None else traj.stopping_T,
        "increases": traj.increases(),
        "monotone": traj.increases() == 0,
        "diverged": traj.diverged,
    }
    names, rows = traj.rows()
    trajectory = {n: np.array([r[i] for r in rows]) for i, n in enumerate(names)}
    return metrics, trajectory


def _run_probe(cfg, model, seed):
    ds = sample_dataset(model, cfg.data.n, seed)
    probe = cfg.probe or ProbeCfg()
    theta = model.theta0 if probe.theta == "theta0" else np.asarray(probe.theta, dtype=float)
    spec = cfg.attack.spec()
    diff = attack_difference(theta, ds.X, ds.y, spec, probe.steps, seed)
    mean = float(np.mean(diff))
    return {"n": ds.n, "d": ds.d, "epsilon": spec.epsilon, "attack_diff": mean, "attack_diff_rel": mean / spec.epsilon if spec.epsilon > 0 else math.nan,
            "xi": spec.xi}, None


def _aggregate_trajectories(trajs):
    """Mean and sd across replications, aligned on ``t`` (shorter runs drop out)."""
    names = list(trajs[0])
    length = max(len(t["t"]) for t in trajs)
    header = []
    for n in names:
        header += [n] if n == "t" else [n, f"{n}_sd"]
    rows = []
    for i in range(length):
        row = []
        for n in names:
            vals = np.array([t[n][i] for t in trajs if i < len(t[n])], dtype=float)
            vals = vals[~np.isnan(vals)]
            m = float(np.mean(vals)) if vals.size else math.nan
            if n == "t":
                row.append(int(i))
                continue
            sd = float(np.std(vals, ddof=1)) if vals.size > 1 else (0.0 if vals.size else math.nan)
            row += [m, sd]
        rows.append(row)
    return header, rows


def _slug(label):
    keep = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in label.replace("=", "-"))
    return keep.strip("_") or "series"


def default_out_dir():
    return Path(os.environ.get("ADVTRAIN_OUT", "results"))


def default_threads():
    return max(1, int(os.environ.get("ADVTRAIN_THREADS", "1")))


def _replicate(runner, cfg, model, label, r):
    seed_r = cfg.data.seed + r
    try:
        metrics, traj = runner(cfg, model, seed_r)
    except Exception as exc:  # noqa: BLE001 - failures become table rows
        return RunRecord(label, r, seed_r, "failed", error=f"{type(exc).__name__}: {exc}")
    status = "diverged" if metrics.get("diverged") else "ok"
    return RunRecord(label, r, seed_r, status, metrics, trajectory=traj)


def run_experiment(config, out_dir=None, seed=None, progress=None, threads=None):
    """Run every series and replication of ``config`` and write its CSVs.

    Replication ``r`` uses seed ``data.seed + r``.  Writes ``config.yaml``,
    ``summary.csv`` and one ``trajectory_<series>.csv`` per series into
    ``out_dir``.  Failed replications are recorded, not raised.  With
    ``threads > 1`` (default ``$ADVTRAIN_THREADS``) replications run in a
    thread pool; results are collected in replication order.
    """
    if seed is not None:
        config = apply_overrides(config, [f"data.seed={int(seed)}"])
    out = Path(out_dir) if out_dir is not None else default_out_dir() / config.experiment
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(config.to_yaml(), encoding="utf-8", newline="")
    threads = default_threads() if threads is None else max(1, int(threads))
    table = ResultTable(config.experiment)
    for label, cfg in _series_configs(config):
        trajs = []
        try:
            model = cfg.model.build()
        except (ValueError, OSError) as exc:
            for r in range(cfg.data.replications):
                table.records.append(RunRecord(label, r, cfg.data.seed + r, "failed", error=str(exc)))
            continue
        runner = _run_probe if cfg.kind == "attack_difference" else _run_train
        reps = range(cfg.data.replications)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                records = list(pool.map(lambda r: _replicate(runner, cfg, model, label, r), reps))
        else:
            records = [_replicate(runner, cfg, model, label, r) for r in reps]
        for rec in records:
            traj, rec.trajectory = rec.trajectory, None
            table.records.append(rec)
            if traj is not None:
                trajs.append(traj)
            if progress is not None:
                progress(label, rec.replication)
        if trajs:
            header, rows = _aggregate_trajectories(trajs)
            write_csv(out / f"trajectory_{_slug(label)}.csv", header, rows)
    header, rows = table.rows()
    write_csv(out / "summary.csv", header, rows)
    return table, out


# ---------------------------------------------------------------- plot data

PLOT_COLUMNS = ("series", "x", "y", "y_lo", "y_hi")
PANELS = {"train": "train_loss_surrogate", "test": "pop_risk"}


def emit_plotdata(result_dir, out_dir=None):
    """Turn a results directory into tidy per-panel CSVs.

    Training runs give ``<experiment>_train.csv`` and ``<experiment>_test.csv``
    (``x`` is the iteration, ``y`` the replication mean, ``y_lo``/``y_hi`` one
    standard deviation either side).  Attack-difference runs give one CSV
    with ``x`` equal to epsilon.  Returns the written paths.
    """
    src = Path(result_dir)
    if not (src / "config.yaml").exists():
        raise FileNotFoundError(f"{src} is not a results directory: expected config.yaml, summary.csv "
                                "and trajectory_<series>.csv files")
    cfg = load_config(src / "config.yaml")
    dst = Path(out_dir) if out_dir is not None else src
    dst.mkdir(parents=True, exist_ok=True)
    written = []
    if cfg.kind == "attack_difference":
        if not (src / "summary.csv").exists():
            raise FileNotFoundError(f"{src}: missing summary.csv")
        header, rows = read_csv(src / "summary.csv")
        idx = {h: i for i, h in enumerate(header)}
        by_series = {r[0]: r for r in rows if r[1] == "mean"}
        sds = {r[0]: r for r in rows if r[1] == "sd"}
        out_rows = []
        for label, cfg_s in _series_configs(cfg):
            if label not in by_series:
                continue
            m = float(by_series[label][idx["attack_diff"]])
            sd = float(sds[label][idx["attack_diff"]])
            out_rows.append(["attack_diff", cfg_s.attack.epsilon, m, m - sd, m + sd])
        path = dst / f"{cfg.experiment}_plot.csv"
        write_csv(path, PLOT_COLUMNS, out_rows)
        return [path]
    series = [(label, src / f"trajectory_{_slug(label)}.csv") for label, _ in _series_configs(cfg)]
    missing = [p.name for _, p in series if not p.exists()]
    if missing:
        raise FileNotFoundError(f"{src}: missing trajectory files {', '.join(missing)}")
    for panel, column in PANELS.items():
        out_rows = []
        for label, path in series:
            header, rows = read_csv(path)
            i_t, i_m, i_s = header.index("t"), header.index(column), header.index(f"{column}_sd")
            for row in rows:
                m, sd = float(row[i_m]), float(row[i_s])
                if math.isnan(m):
                    continue
                out_rows.append([label, int(row[i_t]), m, m - sd, m + sd])
        path = dst / f"{cfg.experiment}_{panel}.csv"
        write_csv(path, PLOT_COLUMNS, out_rows)
        written.append(path)
    return written
