"""Numerical stationarity diagnostics via the Moreau envelope.

The envelope of a gamma-weakly-convex objective f at smoothing level
beta < 1/gamma is differentiable with gradient (x - prox(x))/beta, and its
gradient norm at the optimizer's randomized output is the quantity the
finite-sample theory bounds.  This module provides the proximal solver,
the envelope gradient, the closed-form bound arithmetic, a Monte-Carlo
check of the bound, and a sampling probe of the weak-convexity inequality.

Everything here operates on the deterministic *empirical* joint objective
over a fixed finite dataset, which is itself a valid instance of the
theory with the empirical measure as the data distribution; reports record
that reading.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergenceError, UnsupportedSigmaError
from .losses import LinearModel, batch_values
from .optimizer import (
    JointState,
    StepSchedule,
    feedback,
    make_minibatcher,
    risk_feedback_source,
    run,
)
from .riskfn import dev, dev_sigma
from .seeding import derive_seed, worker_count

_OBJECTIVE_NOTE = (
    "empirical joint objective over the supplied dataset "
    "(the empirical measure is the data distribution)"
)


@dataclass(frozen=True)
class EnvelopeConfig:
    """Smoothing level beta, weak-convexity constant gamma, prox solver
    tolerance and iteration cap.  Requires beta * gamma < 1 so the prox
    subproblem is strongly convex."""

    beta: float
    gamma: float
    tol: float = 1e-7
    max_iter: int = 50000

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.beta * self.gamma >= 1.0:
            raise ValueError("need beta * gamma < 1 for a well-posed envelope")


def weak_convexity_constant(params, lambda_smooth):
    """Constant gamma such that the joint risk plus (gamma/2)||.||^2 is convex.

    gamma = (1 + eta * pi/(2*sigma)) * max(1, lambda) for finite sigma > 0
    and (1 + eta) * max(1, lambda) at sigma = 0, where lambda is the weak
    smoothness constant of the per-example loss.  Not defined at
    sigma = inf (the squared deviation is not Lipschitz).
    """
    if lambda_smooth <= 0:
        raise ValueError("lambda_smooth must be positive")
    sigma, eta = params.sigma, params.eta
    if math.isinf(sigma):
        raise UnsupportedSigmaError("no weak-convexity constant at sigma = inf")
    scale = 1.0 if sigma == 0 else math.pi / (2.0 * sigma)
    return (1.0 + eta * scale) * max(1.0, lambda_smooth)


def loss_smoothness(examples, kind):
    """Weak smoothness constant of a named per-example loss on a dataset.

    For intercept-augmented features x~ = (x, 1): squared error has
    gradient-Lipschitz constant 2*||x~||^2 per example, and the multi-class
    logistic Hessian is bounded by ||x~||^2 / 2 (the softmax curvature
    factor never exceeds 1/2).  Takes the max over the dataset.
    """
    sq = max(float(np.dot(ex.features, ex.features)) + 1.0 for ex in examples)
    if kind == "squared":
        return 2.0 * sq
    if kind == "logistic":
        return 0.5 * sq
    raise ValueError(f"no smoothness constant for non-smooth loss {kind!r}")


class FunctionObjective:
    """Plain (value, grad) oracle over flat vectors, for tests and probes."""

    def __init__(self, value_fn, grad_fn, dim):
        self._value = value_fn
        self._grad = grad_fn
        self.dim = dim

    def value(self, x):
        return float(self._value(np.asarray(x, dtype=float)))

    def grad(self, x):
        return np.asarray(self._grad(np.asarray(x, dtype=float)), dtype=float)


class EmpiricalJointObjective:
    """Deterministic joint risk over a whole dataset, on flat (h, theta)."""

    def __init__(self, examples, d_in, n_out, params, loss):
        self.features = np.stack([ex.features for ex in examples])
        self.labels = np.array([ex.label for ex in examples])
        self.examples = list(examples)
        self.d_in = d_in
        self.n_out = n_out
        self.params = params
        self.loss = loss
        self.dim = d_in * n_out + n_out + 1

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        return LinearModel.from_flat(x[:-1], self.d_in, self.n_out), float(x[-1])

    def value(self, x):
        model, theta = self._split(x)
        values = batch_values(model, self.features, self.labels, self.loss)
        return theta + self.params.eta * float(
            np.mean(dev_sigma(values - theta, self.params))
        )

    def grad(self, x):
        model, theta = self._split(x)
        fb = feedback(self.examples, model, theta, self.params, self.loss)
        return fb.as_vector()


def empirical_joint_objective(examples, d_in, n_out, params, loss):
    return EmpiricalJointObjective(examples, d_in, n_out, params, loss)


def prox_point(objective, x, beta, cfg):
    """argmin of f(v) + ||x - v||^2 / (2*beta).

    Solved by descent with Barzilai-Borwein steps and Armijo backtracking
    on the strongly convex surrogate; terminates when the surrogate
    gradient norm drops below cfg.tol.  Deterministic.
    """
    x = np.asarray(x, dtype=float)

    def g_value(v):
        d = v - x
        return objective.value(v) + float(d @ d) / (2.0 * beta)

    def g_grad(v):
        return objective.grad(v) + (v - x) / beta

    v = x.copy()
    gv = g_value(v)
    grad = g_grad(v)
    step = beta
    prev_v = None
    prev_grad = None
    for _ in range(cfg.max_iter):
        gnorm_sq = float(grad @ grad)
        if math.sqrt(gnorm_sq) <= cfg.tol:
            return v
        if prev_v is not None:
            dv = v - prev_v
            dg = grad - prev_grad
            denom = float(dv @ dg)
            if denom > 0:
                step = float(dv @ dv) / denom
            if not (math.isfinite(step) and step > 0):
                step = beta
        # sufficient decrease, with slack at the float resolution of g so
        # the search does not stall once predicted decreases fall below
        # representable differences
        noise = 8.0 * np.finfo(float).eps * max(1.0, abs(gv))
        t = step
        for _ in range(80):
            cand = v - t * grad
            gc = g_value(cand)
            if gc <= gv - 0.5 * t * gnorm_sq + noise:
                break
            t *= 0.5
        else:
            raise NonConvergenceError("prox line search stalled")
        prev_v, prev_grad = v, grad
        v, gv = cand, gc
        grad = g_grad(v)
    raise NonConvergenceError(
        f"prox solver hit the iteration cap ({cfg.max_iter}) at gradient norm "
        f"{float(np.linalg.norm(grad)):.3e} > {cfg.tol:.3e}"
    )


def envelope_grad(objective, x, cfg):
    """Gradient of the Moreau envelope at x: (x - prox(x)) / beta."""
    x = np.asarray(x, dtype=float)
    return (x - prox_point(objective, x, cfg.beta, cfg)) / cfg.beta


def envelope_grad_bound(delta0, gamma, kappa_sq, alphas, beta):
    """General bound on the expected squared envelope gradient norm at the
    randomized output: (delta0 + gamma*kappa_sq*sum(alpha^2)/2) / sum(alpha),
    inflated by 1/(1 - beta*gamma)."""
    alphas = np.asarray(alphas, dtype=float)
    return float(
        (delta0 + gamma * kappa_sq * (alphas**2).sum() / 2.0)
        / alphas.sum()
        / (1.0 - beta * gamma)
    )


def envelope_grad_bound_horizon(delta0, gamma, kappa_sq, n):
    """Closed-form bound sqrt(2*gamma*kappa_sq*delta0/n) for the horizon
    schedule with beta = 1/(2*gamma)."""
    return math.sqrt(2.0 * gamma * kappa_sq * delta0 / n)


def initialization_gap_bound(objective, initial, params):
    """Verified upper bound on envelope(initial) - inf of the objective.

    The envelope never exceeds the objective value, and by Jensen the
    objective is at least min_t [t + eta*dev_sigma(m - t)] with m the mean
    loss, itself minimized in closed form; for nonnegative losses m >= 0
    and the bound at m = 0 applies.
    """
    sigma, eta = params.sigma, params.eta
    if not 0 < sigma < math.inf:
        raise UnsupportedSigmaError("gap bound implemented for finite sigma > 0")
    t = sigma / eta
    lower = -sigma * math.tan(t) + eta * dev(math.tan(t))
    x0 = initial.as_vector() if isinstance(initial, JointState) else np.asarray(initial)
    return objective.value(x0) - lower


@dataclass(frozen=True)
class StationarityProblem:
    """Everything needed to run the optimizer and evaluate its output
    against the envelope-gradient bound on one empirical problem."""

    examples: list
    d_in: int
    n_out: int
    params: object  # RiskParams
    loss: str
    initial: JointState
    projection: object  # ProjectionSet
    batch_size: int
    batch_mode: str
    kappa_sq: float
    delta0: float
    kappa_sq_is_estimate: bool = True
    delta0_is_estimate: bool = False


@dataclass(frozen=True)
class StationarityReport:
    env_grad_norm_sq_mean: float
    theorem_bound: float
    trials: int
    per_trial: list = field(repr=False)
    schedule_bound: float = math.nan
    bound_kind: str = "schedule_formula"
    gamma: float = math.nan
    beta: float = math.nan
    kappa_sq: float = math.nan
    delta0: float = math.nan
    n: int = 0
    schedule_kind: str = ""
    kappa_sq_is_estimate: bool = True
    delta0_is_estimate: bool = False
    max_feedback_norm_sq: float = math.nan
    kappa_bound_held: bool = False
    seed: int = 0
    objective_note: str = _OBJECTIVE_NOTE

    def to_dict(self):
        out = {
            "env_grad_norm_sq_mean": self.env_grad_norm_sq_mean,
            "theorem_bound": self.theorem_bound,
            "bound_holds": bool(self.env_grad_norm_sq_mean <= self.theorem_bound),
            "bound_kind": self.bound_kind,
            "schedule_bound": self.schedule_bound,
            "trials": self.trials,
            "n": self.n,
            "gamma": self.gamma,
            "beta": self.beta,
            "kappa_sq": self.kappa_sq,
            "delta0": self.delta0,
            "schedule_kind": self.schedule_kind,
            "kappa_sq_is_estimate": self.kappa_sq_is_estimate,
            "delta0_is_estimate": self.delta0_is_estimate,
            "max_feedback_norm_sq": self.max_feedback_norm_sq,
            "kappa_bound_held": self.kappa_bound_held,
            "seed": self.seed,
            "objective_note": self.objective_note,
            "per_trial": list(self.per_trial),
        }
        return out


def stationarity_check(problem, n, trials, cfg, seed, schedule=None):
    """Monte-Carlo check of the envelope-gradient bound.

    Runs the optimizer ``trials`` times with independent derived seeds,
    evaluates the squared envelope gradient norm at each randomized output
    on the full empirical objective, and compares the mean against the
    bound.  With the horizon schedule and beta = 1/(2*gamma) the reported
    bound is the closed form sqrt(2*gamma*kappa_sq*delta0/n); the general
    schedule formula value is recorded alongside.
    """
    if schedule is None:
        schedule = StepSchedule.horizon(problem.delta0, cfg.gamma, problem.kappa_sq, n)
    objective = empirical_joint_objective(
        problem.examples, problem.d_in, problem.n_out, problem.params, problem.loss
    )

    def one_trial(i):
        batcher = make_minibatcher(
            problem.examples,
            problem.batch_size,
            problem.batch_mode,
            derive_seed(seed, "batch", i),
        )
        source = risk_feedback_source(
            batcher, problem.d_in, problem.n_out, problem.params, problem.loss
        )
        record = run(
            problem.initial, schedule, problem.projection, n, source,
            derive_seed(seed, "run", i),
        )
        g = envelope_grad(objective, record.output_state.as_vector(), cfg)
        max_fb = max(record.feedback_norms)
        return float(g @ g), max_fb * max_fb

    workers = min(worker_count(), trials)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_trial, range(trials)))
    else:
        results = [one_trial(i) for i in range(trials)]
    per_trial = [r[0] for r in results]
    max_fb_sq = max(r[1] for r in results)

    alphas = schedule.alphas(n)
    schedule_bound = envelope_grad_bound(
        problem.delta0, cfg.gamma, problem.kappa_sq, alphas, cfg.beta
    )
    if schedule.kind == "horizon" and abs(cfg.beta * cfg.gamma - 0.5) <= 1e-12:
        bound = envelope_grad_bound_horizon(problem.delta0, cfg.gamma, problem.kappa_sq, n)
        bound_kind = "horizon_closed_form"
    else:
        bound = schedule_bound
        bound_kind = "schedule_formula"
    return StationarityReport(
        env_grad_norm_sq_mean=float(np.mean(per_trial)),
        theorem_bound=bound,
        trials=trials,
        per_trial=per_trial,
        schedule_bound=schedule_bound,
        bound_kind=bound_kind,
        gamma=cfg.gamma,
        beta=cfg.beta,
        kappa_sq=problem.kappa_sq,
        delta0=problem.delta0,
        n=n,
        schedule_kind=schedule.kind,
        kappa_sq_is_estimate=problem.kappa_sq_is_estimate,
        delta0_is_estimate=problem.delta0_is_estimate,
        max_feedback_norm_sq=max_fb_sq,
        kappa_bound_held=bool(max_fb_sq <= problem.kappa_sq),
        seed=int(seed),
    )


@dataclass(frozen=True)
class ProbeReport:
    violations: int
    worst_slack: float
    num_triples: int
    gamma: float
    radius: float
    seed: int

    def to_dict(self):
        return {
            "violations": self.violations,
            "worst_slack": self.worst_slack,
            "num_triples": self.num_triples,
            "gamma": self.gamma,
            "radius": self.radius,
            "seed": self.seed,
        }


def weak_convexity_probe(objective, gamma, num_triples, radius, seed, slack=1e-9):
    """Sample triples (x, x', alpha) in a ball and test the inequality

        f(a*x + (1-a)*x') <= a*f(x) + (1-a)*f(x') + gamma*a*(1-a)/2 * ||x-x'||^2

    reporting the count of violations beyond ``slack`` and the worst gap
    (negative means the inequality held with room to spare everywhere).
    """
    rng = np.random.default_rng(seed)
    dim = objective.dim
    violations = 0
    worst = -math.inf
    for _ in range(num_triples):
        x = _ball_point(rng, dim, radius)
        x2 = _ball_point(rng, dim, radius)
        a = rng.uniform()
        mid = objective.value(a * x + (1.0 - a) * x2)
        diff = x - x2
        rhs = (
            a * objective.value(x)
            + (1.0 - a) * objective.value(x2)
            + 0.5 * gamma * a * (1.0 - a) * float(diff @ diff)
        )
        gap = mid - rhs
        worst = max(worst, gap)
        if gap > slack:
            violations += 1
    return ProbeReport(
        violations=violations,
        worst_slack=worst,
        num_triples=num_triples,
        gamma=float(gamma),
        radius=float(radius),
        seed=int(seed),
    )


def _ball_point(rng, dim, radius):
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    return radius * rng.uniform() ** (1.0 / dim) * direction
