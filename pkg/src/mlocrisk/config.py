"""Flat JSON configuration parsing and validation for the CLI.

Configs are flat key/value JSON objects; validation errors name the
offending field.  A manifest written by a previous run (which wraps the
resolved config) is accepted anywhere a config is, so every run can be
reproduced from its manifest.  Sigma values may be numbers or the strings
"inf"/"infinity".
"""

import json
import math
from dataclasses import asdict, dataclass

from .errors import ConfigError
from .experiments import (
    ClassifyConfig,
    LinregConfig,
    RiskCurveConfig,
    ToyConfig,
    fmt_sigma,
)


def load_config_file(path):
    """Parse a JSON config file; unwraps a manifest if given one."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path} at line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config root in {path} must be a JSON object")
    if "config" in raw and "command" in raw:  # manifest round-trip
        inner = raw["config"]
        if not isinstance(inner, dict):
            raise ConfigError("manifest 'config' entry must be an object", field="config")
        return inner
    return raw


def parse_sigma(value, field):
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "infinity"):
            return math.inf
        try:
            value = float(text)
        except ValueError:
            raise ConfigError(f"expected a nonnegative number or 'inf', got {value!r}", field=field)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a nonnegative number or 'inf', got {value!r}", field=field)
    value = float(value)
    if math.isnan(value) or value < 0:
        raise ConfigError(f"sigma must be >= 0 or 'inf', got {value}", field=field)
    return value


def _number(raw, field, default=None, required=False, minimum=None, maximum=None,
            allow_none=False, strict_min=False):
    if field not in raw or raw[field] is None:
        if field in raw and allow_none:
            return None
        if required:
            raise ConfigError("required field is missing", field=field)
        return default
    value = raw[field]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", field=field)
    value = float(value)
    if math.isnan(value):
        raise ConfigError("must not be NaN", field=field)
    if minimum is not None and (value <= minimum if strict_min else value < minimum):
        op = ">" if strict_min else ">="
        raise ConfigError(f"must be {op} {minimum}, got {value}", field=field)
    if maximum is not None and value > maximum:
        raise ConfigError(f"must be <= {maximum}, got {value}", field=field)
    return value


def _integer(raw, field, default=None, required=False, minimum=None):
    value = _number(raw, field, default=default, required=required, minimum=minimum)
    if value is None:
        return None
    if value != int(value):
        raise ConfigError(f"expected an integer, got {value}", field=field)
    return int(value)


def _boolean(raw, field, default):
    value = raw.get(field, default)
    if not isinstance(value, bool):
        raise ConfigError(f"expected true or false, got {value!r}", field=field)
    return value


def _string(raw, field, default=None, required=False, choices=None):
    if field not in raw or raw[field] is None:
        if required:
            raise ConfigError("required field is missing", field=field)
        return default
    value = raw[field]
    if not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", field=field)
    if choices is not None and value not in choices:
        raise ConfigError(f"expected one of {sorted(choices)}, got {value!r}", field=field)
    return value


def _sigma_list(raw, field, default):
    if field not in raw or raw[field] is None:
        return tuple(default)
    value = raw[field]
    if not isinstance(value, list) or not value:
        raise ConfigError("expected a non-empty list of sigma values", field=field)
    return tuple(parse_sigma(v, f"{field}[{i}]") for i, v in enumerate(value))


def _number_list(raw, field, default=None, minimum=None, strict_min=False):
    if field not in raw or raw[field] is None:
        return default
    value = raw[field]
    if not isinstance(value, list) or not value:
        raise ConfigError("expected a non-empty list of numbers", field=field)
    out = []
    for i, v in enumerate(value):
        out.append(
            _number({"v": v}, "v", required=True, minimum=minimum, strict_min=strict_min)
        )
    return tuple(out)


def _check_unknown(raw, known, command):
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(
            f"unknown field(s) for {command!r}: {sorted(unknown)}",
            field=sorted(unknown)[0],
        )


_TOY_FIELDS = (
    "eta_grid", "sigma", "alpha", "batch_size", "iterations", "trials",
    "init_h", "init_theta", "wide_mean", "wide_std", "thin_mean", "thin_std", "seed",
)


def toy_config(raw):
    _check_unknown(raw, _TOY_FIELDS, "toy")
    defaults = ToyConfig()
    return ToyConfig(
        eta_grid=_number_list(raw, "eta_grid", defaults.eta_grid, minimum=0, strict_min=True),
        sigma=parse_sigma(raw.get("sigma", "inf"), "sigma"),
        alpha=_number(raw, "alpha", defaults.alpha, minimum=0, strict_min=True),
        batch_size=_integer(raw, "batch_size", defaults.batch_size, minimum=1),
        iterations=_integer(raw, "iterations", defaults.iterations, minimum=0),
        trials=_integer(raw, "trials", defaults.trials, minimum=1),
        init_h=_number(raw, "init_h", defaults.init_h),
        init_theta=_number(raw, "init_theta", defaults.init_theta),
        wide_mean=_number(raw, "wide_mean", defaults.wide_mean),
        wide_std=_number(raw, "wide_std", defaults.wide_std, minimum=0, strict_min=True),
        thin_mean=_number(raw, "thin_mean", defaults.thin_mean),
        thin_std=_number(raw, "thin_std", defaults.thin_std, minimum=0, strict_min=True),
        seed=_integer(raw, "seed", 0, minimum=0),
    )


_LINREG_FIELDS = (
    "sigma_grid", "etas", "noise_laws", "noise_scale", "w0", "w1", "count",
    "alpha", "batch_size", "iterations", "trials", "init_scale", "seed",
)


def linreg_config(raw):
    _check_unknown(raw, _LINREG_FIELDS, "linreg")
    defaults = LinregConfig()
    laws = raw.get("noise_laws", list(defaults.noise_laws))
    if not isinstance(laws, list) or not laws:
        raise ConfigError("expected a non-empty list", field="noise_laws")
    for law in laws:
        if law not in ("normal", "lognormal_centered"):
            raise ConfigError(
                f"expected 'normal' or 'lognormal_centered', got {law!r}",
                field="noise_laws",
            )
    return LinregConfig(
        sigma_grid=_sigma_list(raw, "sigma_grid", defaults.sigma_grid),
        etas=_number_list(raw, "etas", None, minimum=0, strict_min=True),
        noise_laws=tuple(laws),
        noise_scale=_number(raw, "noise_scale", defaults.noise_scale, minimum=0, strict_min=True),
        w0=_number(raw, "w0", defaults.w0),
        w1=_number(raw, "w1", defaults.w1),
        count=_integer(raw, "count", defaults.count, minimum=1),
        alpha=_number(raw, "alpha", defaults.alpha, minimum=0, strict_min=True),
        batch_size=_integer(raw, "batch_size", defaults.batch_size, minimum=1),
        iterations=_integer(raw, "iterations", defaults.iterations, minimum=0),
        trials=_integer(raw, "trials", defaults.trials, minimum=1),
        init_scale=_number(raw, "init_scale", defaults.init_scale, minimum=0),
        seed=_integer(raw, "seed", 0, minimum=0),
    )


_CLASSIFY_FIELDS = (
    "dataset", "class_count", "dim", "separation", "count", "tail_dof",
    "flip_fraction", "csv_path", "label_column", "categorical_columns",
    "sigma_grid", "etas", "include_erm", "trials", "epochs", "batch_size",
    "alpha", "train_fraction", "seed",
)


def classify_config(raw, command="classify"):
    _check_unknown(raw, _CLASSIFY_FIELDS, command)
    defaults = ClassifyConfig()
    dataset = _string(raw, "dataset", defaults.dataset, choices={"blobs", "csv"})
    csv_path = _string(raw, "csv_path", None)
    label_column = _string(raw, "label_column", None)
    if dataset == "csv":
        if csv_path is None:
            raise ConfigError("required when dataset is 'csv'", field="csv_path")
        if label_column is None:
            raise ConfigError("required when dataset is 'csv'", field="label_column")
    categorical = raw.get("categorical_columns", [])
    if not isinstance(categorical, list) or not all(isinstance(c, str) for c in categorical):
        raise ConfigError("expected a list of column names", field="categorical_columns")
    return ClassifyConfig(
        dataset=dataset,
        class_count=_integer(raw, "class_count", defaults.class_count, minimum=2),
        dim=_integer(raw, "dim", defaults.dim, minimum=1),
        separation=_number(raw, "separation", defaults.separation, minimum=0),
        count=_integer(raw, "count", defaults.count, minimum=1),
        tail_dof=_number(raw, "tail_dof", None, minimum=0, strict_min=True, allow_none=True),
        flip_fraction=_number(raw, "flip_fraction", defaults.flip_fraction, minimum=0, maximum=0.999),
        csv_path=csv_path,
        label_column=label_column,
        categorical_columns=tuple(categorical),
        sigma_grid=_sigma_list(raw, "sigma_grid", defaults.sigma_grid),
        etas=_number_list(raw, "etas", None, minimum=0, strict_min=True),
        include_erm=_boolean(raw, "include_erm", defaults.include_erm),
        trials=_integer(raw, "trials", defaults.trials, minimum=1),
        epochs=_integer(raw, "epochs", defaults.epochs, minimum=0),
        batch_size=_integer(raw, "batch_size", defaults.batch_size, minimum=1),
        alpha=_number(raw, "alpha", None, minimum=0, strict_min=True, allow_none=True),
        train_fraction=_number(raw, "train_fraction", defaults.train_fraction,
                               minimum=0, maximum=1, strict_min=True),
        seed=_integer(raw, "seed", 0, minimum=0),
    )


_RISKCURVE_EXTRA = ("eval_sigmas", "eval_etas")


def riskcurve_config(raw):
    classify_raw = {k: v for k, v in raw.items() if k not in _RISKCURVE_EXTRA}
    classify = classify_config(classify_raw, command="riskcurve")
    defaults = RiskCurveConfig()
    return RiskCurveConfig(
        classify=classify,
        eval_sigmas=_sigma_list(raw, "eval_sigmas", defaults.eval_sigmas),
        eval_etas=_number_list(raw, "eval_etas", None, minimum=0, strict_min=True),
    )


@dataclass(frozen=True)
class DiagnoseConfig:
    """Small 1-D regression problem for the stationarity and convexity
    diagnostics.  kappa_sq must be supplied (a verified or estimated bound
    on the squared feedback norm); delta0 defaults to the derived
    initialization-gap bound."""

    count: int = 400
    noise_scale: float = 0.1
    w0: float = 0.5
    w1: float = 0.3
    sigma: float = 1.0
    eta: float | None = None
    n: int = 2000
    trials: int = 200
    batch_size: int = 8
    kappa_sq: float = 0.0
    kappa_sq_is_estimate: bool = True
    delta0: float | None = None
    probe_triples: int = 10000
    probe_radius: float = 1.0
    prox_tol: float = 1e-8
    prox_max_iter: int = 50000
    seed: int = 0


_DIAGNOSE_FIELDS = (
    "count", "noise_scale", "w0", "w1", "sigma", "eta", "n", "trials",
    "batch_size", "kappa_sq", "kappa_sq_is_estimate", "delta0",
    "probe_triples", "probe_radius", "prox_tol", "prox_max_iter", "seed",
)


def diagnose_config(raw):
    _check_unknown(raw, _DIAGNOSE_FIELDS, "diagnose")
    defaults = DiagnoseConfig()
    sigma = parse_sigma(raw.get("sigma", defaults.sigma), "sigma")
    if sigma == 0 or math.isinf(sigma):
        raise ConfigError("diagnostics need a finite sigma > 0", field="sigma")
    return DiagnoseConfig(
        count=_integer(raw, "count", defaults.count, minimum=2),
        noise_scale=_number(raw, "noise_scale", defaults.noise_scale, minimum=0),
        w0=_number(raw, "w0", defaults.w0),
        w1=_number(raw, "w1", defaults.w1),
        sigma=sigma,
        eta=_number(raw, "eta", None, minimum=0, strict_min=True, allow_none=True),
        n=_integer(raw, "n", defaults.n, minimum=1),
        trials=_integer(raw, "trials", defaults.trials, minimum=1),
        batch_size=_integer(raw, "batch_size", defaults.batch_size, minimum=1),
        kappa_sq=_number(raw, "kappa_sq", required=True, minimum=0, strict_min=True),
        kappa_sq_is_estimate=_boolean(raw, "kappa_sq_is_estimate", True),
        delta0=_number(raw, "delta0", None, minimum=0, strict_min=True, allow_none=True),
        probe_triples=_integer(raw, "probe_triples", defaults.probe_triples, minimum=1),
        probe_radius=_number(raw, "probe_radius", defaults.probe_radius, minimum=0, strict_min=True),
        prox_tol=_number(raw, "prox_tol", defaults.prox_tol, minimum=0, strict_min=True),
        prox_max_iter=_integer(raw, "prox_max_iter", defaults.prox_max_iter, minimum=1),
        seed=_integer(raw, "seed", 0, minimum=0),
    )


BUILDERS = {
    "toy": toy_config,
    "linreg": linreg_config,
    "classify": classify_config,
    "riskcurve": riskcurve_config,
    "diagnose": diagnose_config,
}


def _clean_value(v):
    if isinstance(v, float) and math.isinf(v):
        return fmt_sigma(v)
    if isinstance(v, tuple):
        return [_clean_value(x) for x in v]
    if isinstance(v, dict):
        return {k: _clean_value(x) for k, x in v.items()}
    return v


def resolved_dict(cfg):
    """Config dataclass as a JSON-safe flat dict (infinities as 'inf')."""
    if isinstance(cfg, RiskCurveConfig):
        out = {k: _clean_value(v) for k, v in asdict(cfg.classify).items()}
        out["eval_sigmas"] = [_clean_value(s) for s in cfg.eval_sigmas]
        out["eval_etas"] = _clean_value(cfg.eval_etas)
        return out
    return {k: _clean_value(v) for k, v in asdict(cfg).items()}
