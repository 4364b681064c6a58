"""Seeded multi-trial experiment runners.

Every runner is a pure function of (config, seed-in-config): re-running
reproduces its MetricsTable bitwise.  Trials use independent derived
sub-streams.  The two streaming experiments (toy mixture, 1-D regression)
run all trials as vectorized array lanes for speed; each lane consumes its
own per-trial noise stream, so results match running the sequential
optimizer lane by lane.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import (
    SplitSpec,
    flip_labels,
    folded_normal_moments,
    load_csv,
    split,
    synth_blobs,
    synth_regression,
)
from .errors import DivergedStateError
from .losses import LinearModel, batch_values
from .optimizer import (
    Feedback,
    JointState,
    StepSchedule,
    ProjectionSet,
    erm_feedback_source,
    make_minibatcher,
    risk_feedback_source,
    run,
)
from .riskfn import RiskParams, default_eta, dev_sigma_prime
from .risk_eval import Sample, risk_empirical
from .seeding import derive_rng, derive_seed, worker_count

_BLOCK = 1024


def fmt_sigma(sigma):
    """Stable string key for a sigma level ("inf", "0", "0.5", ...)."""
    if math.isinf(sigma):
        return "inf"
    as_float = float(sigma)
    return repr(int(as_float)) if as_float == int(as_float) else repr(as_float)


class _Lanes:
    """Divergence bookkeeping for vectorized trial lanes.

    A lane whose state goes non-finite (step size too large for a draw
    sequence, e.g. heavy-tailed losses under the squared deviation) is
    frozen at NaN and excluded from aggregates; it is reported, not
    silently absorbed.  Only when every lane has diverged does the
    experiment raise, mirroring the sequential optimizer's contract.
    """

    def __init__(self, n):
        self.alive = np.ones(n, dtype=bool)
        self.diverged_step = np.full(n, -1)

    def freeze(self, step, *arrays):
        finite = np.ones_like(self.alive)
        for a in arrays:
            finite &= np.isfinite(a)
        newly_dead = self.alive & ~finite
        if newly_dead.any():
            self.diverged_step[newly_dead] = step
            self.alive &= finite
            for a in arrays:
                a[~self.alive] = math.nan
        if not self.alive.any():
            raise DivergedStateError(step, f"all trial lanes diverged by step {step}")

    @property
    def n_diverged(self):
        return int((~self.alive).sum())


def _nanmean(values):
    finite = values[np.isfinite(values)]
    return float(finite.mean()) if finite.size else math.nan


def _nanse(values):
    finite = values[np.isfinite(values)]
    if finite.size < 2:
        return 0.0
    return float(finite.std(ddof=1) / math.sqrt(finite.size))


@dataclass
class MetricsTable:
    """Named row-dict tables plus run metadata, ready for CSV emission."""

    tables: dict
    meta: dict

    def rows(self, name):
        return self.tables[name]


def _resolve_etas(sigma_grid, etas):
    if etas is None:
        return [default_eta(s) for s in sigma_grid]
    if len(etas) != len(sigma_grid):
        raise ValueError("etas must match sigma_grid in length")
    return [float(e) for e in etas]


# ---------------------------------------------------------------------------
# Toy mixture experiment: loss(h) = h*L_wide + (1-h)*L_thin


@dataclass(frozen=True)
class ToyConfig:
    eta_grid: tuple = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0)
    sigma: float = math.inf
    alpha: float = 0.001
    batch_size: int = 8
    iterations: int = 20000
    trials: int = 100
    init_h: float = 0.5
    init_theta: float = 0.5
    wide_mean: float = 0.0
    wide_std: float = 1.0
    thin_mean: float = 2.0
    thin_std: float = 0.1
    seed: int = 0


def toy_mixture_minimizer(cfg, eta):
    """Closed-form minimizer of mean + eta*variance for the mixture loss.

    With (m_w, v_w) and (m_t, v_t) the folded-normal moments of the two
    atoms, the objective in h is h*m_w + (1-h)*m_t + eta*(h^2 v_w +
    (1-h)^2 v_t), minimized at (m_t - m_w + 2*eta*v_t) / (2*eta*(v_w+v_t)).
    """
    m_w, v_w = folded_normal_moments(cfg.wide_mean, cfg.wide_std)
    m_t, v_t = folded_normal_moments(cfg.thin_mean, cfg.thin_std)
    return (m_t - m_w + 2.0 * eta * v_t) / (2.0 * eta * (v_w + v_t))


def toy_feedback_source(cfg, params, noise_rng):
    """Sequential (one-trial) feedback source for the mixture experiment,
    drawing fresh folded-normal minibatches from ``noise_rng``."""

    def source(state, rng, t):
        noise = noise_rng.standard_normal((cfg.batch_size, 2))
        l_wide = np.abs(cfg.wide_mean + cfg.wide_std * noise[:, 0])
        l_thin = np.abs(cfg.thin_mean + cfg.thin_std * noise[:, 1])
        h = float(state.h[0])
        losses = h * l_wide + (1.0 - h) * l_thin
        grads = l_wide - l_thin
        psi = dev_sigma_prime(losses - state.theta, params)
        g_h = params.eta * float(np.mean(psi * grads))
        g_theta = 1.0 - params.eta * float(np.mean(psi))
        return Feedback(np.array([g_h]), g_theta)

    return source


def run_toy(cfg):
    """All eta levels, all trials, vectorized across trial lanes."""
    trajectories = []
    finals = []
    reference = []
    diverged_counts = {}
    for k, eta in enumerate(cfg.eta_grid):
        params = RiskParams(cfg.sigma, eta)
        rngs = [derive_rng(cfg.seed, "toy", k, t) for t in range(cfg.trials)]
        h = np.full(cfg.trials, cfg.init_h)
        th = np.full(cfg.trials, cfg.init_theta)
        lanes = _Lanes(cfg.trials)
        mean_h = np.empty(cfg.iterations + 1)
        mean_th = np.empty(cfg.iterations + 1)
        mean_h[0] = _nanmean(h)
        mean_th[0] = _nanmean(th)
        done = 0
        while done < cfg.iterations:
            b = min(_BLOCK, cfg.iterations - done)
            noise = np.stack(
                [r.standard_normal((b, cfg.batch_size, 2)) for r in rngs]
            )
            l_wide = np.abs(cfg.wide_mean + cfg.wide_std * noise[..., 0])
            l_thin = np.abs(cfg.thin_mean + cfg.thin_std * noise[..., 1])
            with np.errstate(over="ignore", invalid="ignore"):
                for s in range(b):
                    lw = l_wide[:, s, :]
                    lt = l_thin[:, s, :]
                    losses = h[:, None] * lw + (1.0 - h[:, None]) * lt
                    psi = dev_sigma_prime(losses - th[:, None], params)
                    g_h = eta * np.mean(psi * (lw - lt), axis=1)
                    g_th = 1.0 - eta * np.mean(psi, axis=1)
                    h = h - cfg.alpha * g_h
                    th = th - cfg.alpha * g_th
                    mean_h[done + s + 1] = _nanmean(h)
                    mean_th[done + s + 1] = _nanmean(th)
            done += b
            lanes.freeze(done, h, th)
        trajectories.extend(
            {"eta": eta, "step": t, "mean_h": mean_h[t], "mean_theta": mean_th[t]}
            for t in range(cfg.iterations + 1)
        )
        finals.extend(
            {
                "eta": eta,
                "trial": t,
                "h_final": float(h[t]),
                "theta_final": float(th[t]),
                "diverged": bool(~lanes.alive[t]),
            }
            for t in range(cfg.trials)
        )
        reference.append(
            {"eta": eta, "h_star_mean_variance": toy_mixture_minimizer(cfg, eta)}
        )
        diverged_counts[fmt_sigma(cfg.sigma) + "/eta=" + repr(float(eta))] = lanes.n_diverged
    meta = {"experiment": "toy", **asdict(cfg)}
    meta["diverged_trials"] = {k: v for k, v in diverged_counts.items() if v}
    return MetricsTable(
        {"trajectories": trajectories, "finals": finals, "reference": reference},
        meta,
    )


# ---------------------------------------------------------------------------
# 1-D linear regression


@dataclass(frozen=True)
class LinregConfig:
    sigma_grid: tuple = (0.0, 0.5, 2.0, 8.0, math.inf)
    etas: tuple | None = None
    noise_laws: tuple = ("normal", "lognormal_centered")
    noise_scale: float = 0.8
    w0: float = 1.0
    w1: float = 1.0
    count: int = 2000
    alpha: float = 0.001
    batch_size: int = 8
    iterations: int = 20000
    trials: int = 100
    init_scale: float = 0.05
    seed: int = 0


def run_linreg(cfg):
    etas = _resolve_etas(cfg.sigma_grid, cfg.etas)
    lines = []
    finals = []
    diverged_counts = {}
    for li, law in enumerate(cfg.noise_laws):
        xs = np.empty((cfg.trials, cfg.count))
        ys = np.empty((cfg.trials, cfg.count))
        inits = np.empty((cfg.trials, 3))
        for t in range(cfg.trials):
            ds = synth_regression(
                cfg.w0,
                cfg.w1,
                (law, cfg.noise_scale),
                cfg.count,
                seed=derive_seed(cfg.seed, "linreg-data", li, t),
            )
            xs[t] = ds.features[:, 0]
            ys[t] = ds.labels
            inits[t] = derive_rng(cfg.seed, "linreg-init", li, t).uniform(
                -cfg.init_scale, cfg.init_scale, 3
            )
        for si, sigma in enumerate(cfg.sigma_grid):
            params = RiskParams(sigma, etas[si])
            rngs = [
                derive_rng(cfg.seed, "linreg-batch", li, si, t)
                for t in range(cfg.trials)
            ]
            slope = inits[:, 0].copy()
            intercept = inits[:, 1].copy()
            th = inits[:, 2].copy()
            lanes = _Lanes(cfg.trials)
            done = 0
            while done < cfg.iterations:
                b = min(_BLOCK, cfg.iterations - done)
                idx = np.stack(
                    [r.integers(0, cfg.count, size=(b, cfg.batch_size)) for r in rngs]
                )
                with np.errstate(over="ignore", invalid="ignore"):
                    for s in range(b):
                        ii = idx[:, s, :]
                        xb = np.take_along_axis(xs, ii, axis=1)
                        yb = np.take_along_axis(ys, ii, axis=1)
                        r = slope[:, None] * xb + intercept[:, None] - yb
                        losses = r * r
                        psi = dev_sigma_prime(losses - th[:, None], params)
                        common = 2.0 * psi * r
                        slope = slope - cfg.alpha * params.eta * np.mean(common * xb, axis=1)
                        intercept = intercept - cfg.alpha * params.eta * np.mean(common, axis=1)
                        th = th - cfg.alpha * (1.0 - params.eta * np.mean(psi, axis=1))
                done += b
                lanes.freeze(done, slope, intercept, th)
            lines.append(
                {
                    "law": law,
                    "sigma": fmt_sigma(sigma),
                    "eta": etas[si],
                    "w0_mean": _nanmean(intercept),
                    "w0_se": _nanse(intercept),
                    "w1_mean": _nanmean(slope),
                    "w1_se": _nanse(slope),
                    "theta_mean": _nanmean(th),
                    "trials_used": cfg.trials - lanes.n_diverged,
                }
            )
            finals.extend(
                {
                    "law": law,
                    "sigma": fmt_sigma(sigma),
                    "trial": t,
                    "w0": float(intercept[t]),
                    "w1": float(slope[t]),
                    "theta": float(th[t]),
                    "diverged": bool(~lanes.alive[t]),
                }
                for t in range(cfg.trials)
            )
            if lanes.n_diverged:
                diverged_counts[f"{law}/{fmt_sigma(sigma)}"] = lanes.n_diverged
    meta = {"experiment": "linreg", **asdict(cfg)}
    meta["sigma_grid"] = [fmt_sigma(s) for s in cfg.sigma_grid]
    meta["etas_resolved"] = etas
    meta["diverged_trials"] = diverged_counts
    return MetricsTable({"lines": lines, "finals": finals}, meta)


# ---------------------------------------------------------------------------
# Multi-class classification on blobs or ingested CSV data


@dataclass(frozen=True)
class ClassifyConfig:
    dataset: str = "blobs"
    class_count: int = 3
    dim: int = 3
    separation: float = 6.0
    count: int = 600
    tail_dof: float | None = None
    flip_fraction: float = 0.0
    csv_path: str | None = None
    label_column: str | None = None
    categorical_columns: tuple = ()
    sigma_grid: tuple = (0.0, 0.5, 2.0, 8.0, math.inf)
    etas: tuple | None = None
    include_erm: bool = True
    trials: int = 10
    epochs: int = 30
    batch_size: int = 8
    alpha: float | None = None  # None -> 0.01 / sqrt(param_count)
    train_fraction: float = 0.88
    seed: int = 0


def _classify_dataset(cfg):
    if cfg.dataset == "blobs":
        ds = synth_blobs(
            cfg.class_count,
            cfg.dim,
            cfg.separation,
            cfg.count,
            derive_seed(cfg.seed, "dataset"),
            tail_dof=cfg.tail_dof,
        )
    elif cfg.dataset == "csv":
        schema = {cfg.label_column: "label"}
        schema.update({c: "categorical" for c in cfg.categorical_columns})
        ds = load_csv(cfg.csv_path, schema, label_kind="class")
    else:
        raise ValueError(f"unknown dataset kind {cfg.dataset!r}")
    if cfg.flip_fraction:
        ds = flip_labels(ds, cfg.flip_fraction, derive_seed(cfg.seed, "flips"))
    return ds


def _zero_one_error(state_vec, features, labels, d_in, k):
    model = LinearModel.from_flat(state_vec[:-1], d_in, k)
    logits = features @ model.weights + model.intercepts
    return float(np.mean(np.argmax(logits, axis=1) != labels))


def _test_losses(state_vec, features, labels, d_in, k):
    model = LinearModel.from_flat(state_vec[:-1], d_in, k)
    return batch_values(model, features, labels, "logistic")


def run_classify(cfg):
    """Per-epoch test error and final test-loss distribution for each risk
    setting plus the plain average-gradient baseline ("off")."""
    ds = _classify_dataset(cfg)
    k = ds.class_count
    d_in = ds.d
    param_count = d_in * k + k
    alpha = cfg.alpha if cfg.alpha is not None else 0.01 / math.sqrt(param_count)
    etas = _resolve_etas(cfg.sigma_grid, cfg.etas)
    settings = (["off"] if cfg.include_erm else []) + [fmt_sigma(s) for s in cfg.sigma_grid]
    sigma_of = dict(zip([fmt_sigma(s) for s in cfg.sigma_grid], zip(cfg.sigma_grid, etas)))
    schedule = StepSchedule.constant(alpha)
    projection = ProjectionSet.identity()

    def one_trial(trial):
        train, test = split(ds, SplitSpec(cfg.train_fraction, derive_seed(cfg.seed, "split", trial)))
        train_examples = train.to_examples()
        init = derive_rng(cfg.seed, "init", trial).uniform(-0.05, 0.05, param_count + 1)
        batch_seed = derive_seed(cfg.seed, "batch", trial)
        out = {}
        for s_i, setting in enumerate(settings):
            batcher = make_minibatcher(
                train_examples, cfg.batch_size, "epoch_shuffle", batch_seed
            )
            bpe = batcher.batches_per_epoch
            if setting == "off":
                source = erm_feedback_source(batcher, d_in, k, "logistic")
                initial = JointState(init[:-1], 0.0)
            else:
                sigma, eta = sigma_of[setting]
                source = risk_feedback_source(
                    batcher, d_in, k, RiskParams(sigma, eta), "logistic"
                )
                initial = JointState(init[:-1], init[-1])
            steps = cfg.epochs * bpe
            if steps == 0:
                trajectory = [initial]
                output_index = 0
            else:
                record = run(
                    initial,
                    schedule,
                    projection,
                    steps,
                    source,
                    derive_seed(cfg.seed, "run", trial, s_i),
                )
                trajectory = record.trajectory
                output_index = record.output_index
            errors = [
                _zero_one_error(
                    trajectory[e * bpe].as_vector(), test.features, test.labels, d_in, k
                )
                for e in range(cfg.epochs + 1)
            ]
            losses = _test_losses(
                trajectory[-1].as_vector(), test.features, test.labels, d_in, k
            )
            counts, edges = np.histogram(
                losses, bins=50, range=(0.0, max(float(losses.max()), 1e-12))
            )
            out[setting] = {
                "errors": errors,
                "losses": losses,
                "hist_counts": counts,
                "hist_edges": edges,
                "final": trajectory[-1].as_vector(),
                "output_index": output_index,
            }
        return out

    workers = min(worker_count(), cfg.trials)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(one_trial, range(cfg.trials)))
    else:
        per_trial = [one_trial(t) for t in range(cfg.trials)]

    test_error = []
    test_losses = []
    histograms = []
    final_states = []
    for trial, result in enumerate(per_trial):
        for setting in settings:
            r = result[setting]
            test_error.extend(
                {"setting": setting, "trial": trial, "epoch": e, "zero_one": r["errors"][e]}
                for e in range(cfg.epochs + 1)
            )
            test_losses.extend(
                {"setting": setting, "trial": trial, "example": i, "loss": float(v)}
                for i, v in enumerate(r["losses"])
            )
            histograms.extend(
                {
                    "setting": setting,
                    "trial": trial,
                    "bin": b,
                    "left": float(r["hist_edges"][b]),
                    "right": float(r["hist_edges"][b + 1]),
                    "count": int(r["hist_counts"][b]),
                }
                for b in range(50)
            )
            final_states.extend(
                {"setting": setting, "trial": trial, "index": i, "value": float(v)}
                for i, v in enumerate(r["final"])
            )
    error_mean = []
    for setting in settings:
        for e in range(cfg.epochs + 1):
            vals = np.array([res[setting]["errors"][e] for res in per_trial])
            se = float(vals.std(ddof=1) / math.sqrt(cfg.trials)) if cfg.trials > 1 else 0.0
            error_mean.append(
                {"setting": setting, "epoch": e, "zero_one_mean": float(vals.mean()), "se": se}
            )
    meta = {
        "experiment": "classify",
        **asdict(cfg),
        "alpha_resolved": alpha,
        "param_count": param_count,
        "d_in": d_in,
        "class_count_resolved": k,
        "etas_resolved": etas,
        "settings": settings,
    }
    meta["sigma_grid"] = [fmt_sigma(s) for s in cfg.sigma_grid]
    return MetricsTable(
        {
            "test_error": test_error,
            "test_error_mean": error_mean,
            "test_losses": test_losses,
            "histograms": histograms,
            "final_states": final_states,
        },
        meta,
    )


# ---------------------------------------------------------------------------
# Risk-level curves over trained classifiers


@dataclass(frozen=True)
class RiskCurveConfig:
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)
    eval_sigmas: tuple = (0.0, 0.5, 2.0, 8.0, math.inf)
    eval_etas: tuple | None = None


def run_riskcurve(cfg, classify_table=None):
    """Empirical risk of each trained model's test losses, across an
    evaluation grid of sigma levels.  Reuses a classification MetricsTable
    when given one, otherwise runs the classification experiment."""
    if classify_table is None:
        classify_table = run_classify(cfg.classify)
    eval_etas = _resolve_etas(cfg.eval_sigmas, cfg.eval_etas)
    settings = classify_table.meta["settings"]
    trials = cfg.classify.trials

    losses = {}
    for row in classify_table.rows("test_losses"):
        losses.setdefault((row["setting"], row["trial"]), []).append(row["loss"])

    curve = []
    for setting in settings:
        for trial in range(trials):
            sample = Sample(np.array(losses[(setting, trial)]))
            for sigma, eta in zip(cfg.eval_sigmas, eval_etas):
                curve.append(
                    {
                        "setting": setting,
                        "trial": trial,
                        "eval_sigma": fmt_sigma(sigma),
                        "eval_eta": eta,
                        "risk": risk_empirical(sample, RiskParams(sigma, eta)),
                    }
                )
    curve_mean = []
    means = {}
    for sigma in cfg.eval_sigmas:
        key = fmt_sigma(sigma)
        for setting in settings:
            vals = np.array(
                [r["risk"] for r in curve if r["setting"] == setting and r["eval_sigma"] == key]
            )
            se = float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
            means[(setting, key)] = float(vals.mean())
            curve_mean.append(
                {"setting": setting, "eval_sigma": key, "risk_mean": float(vals.mean()), "risk_se": se}
            )
    self_rank = []
    for sigma in cfg.eval_sigmas:
        key = fmt_sigma(sigma)
        if key not in settings:
            continue
        ordered = sorted(settings, key=lambda s: means[(s, key)])
        self_rank.append(
            {
                "eval_sigma": key,
                "rank_of_matching_setting": ordered.index(key) + 1,
                "n_settings": len(settings),
            }
        )
    meta = {
        "experiment": "riskcurve",
        "eval_sigmas": [fmt_sigma(s) for s in cfg.eval_sigmas],
        "eval_etas_resolved": eval_etas,
        "classify": classify_table.meta,
    }
    return MetricsTable(
        {"riskcurve": curve, "riskcurve_mean": curve_mean, "self_rank": self_rank},
        meta,
    )
