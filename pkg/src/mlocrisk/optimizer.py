"""Projected stochastic sub-gradient descent on the joint variable (h, theta).

Each step samples feedback G_t (a stochastic sub-gradient of the joint
risk over a minibatch), applies

    (h, theta) <- project[(h, theta) - alpha_t * G_t],

and after n steps draws the output index T with P{T = t} proportional to
alpha_t.  Both the randomized output and the full trajectory are recorded:
the randomized iterate is what the stationarity theory bounds, while
figures plot trajectories.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergedStateError
from .losses import LOSSES, LinearModel, batch_values_and_grads, resolve_loss
from .riskfn import dev_sigma_prime


@dataclass(frozen=True)
class JointState:
    """Model parameter vector h plus the scalar location variable theta."""

    h: np.ndarray
    theta: float

    def __post_init__(self):
        h = np.array(self.h, dtype=float, ndmin=1)
        h.flags.writeable = False
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "theta", float(self.theta))

    @property
    def dim(self):
        return self.h.size + 1

    def as_vector(self):
        return np.concatenate([self.h, [self.theta]])

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:-1], float(vec[-1]))

    def is_finite(self):
        return bool(np.isfinite(self.h).all() and math.isfinite(self.theta))


@dataclass(frozen=True)
class Feedback:
    g_h: np.ndarray
    g_theta: float

    def as_vector(self):
        return np.concatenate([np.atleast_1d(np.asarray(self.g_h, dtype=float)),
                               [self.g_theta]])

    def norm(self):
        return float(np.linalg.norm(self.as_vector()))


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes: a plain constant, or a constant sized from known problem
    constants (initialization gap delta0, weak-convexity gamma, feedback
    second-moment bound kappa_sq) to balance both error terms over a fixed
    horizon of n steps: alpha = sqrt(delta0 / (n * gamma * kappa_sq))."""

    kind: str
    alpha: float = 0.0
    delta0: float = 0.0
    gamma: float = 0.0
    kappa_sq: float = 0.0
    horizon_steps: int = 0

    @classmethod
    def constant(cls, alpha):
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        return cls(kind="constant", alpha=float(alpha))

    @classmethod
    def horizon(cls, delta0, gamma, kappa_sq, n):
        if min(delta0, gamma, kappa_sq) <= 0 or n < 1:
            raise ValueError("delta0, gamma, kappa_sq must be positive and n >= 1")
        alpha = math.sqrt(delta0 / (n * gamma * kappa_sq))
        return cls(kind="horizon", alpha=alpha, delta0=float(delta0),
                   gamma=float(gamma), kappa_sq=float(kappa_sq), horizon_steps=int(n))

    def alpha_at(self, t):
        return self.alpha

    def alphas(self, n):
        return np.full(n, self.alpha)


@dataclass(frozen=True)
class ProjectionSet:
    """Closed convex constraint set for the joint vector (h, theta)."""

    kind: str
    center: np.ndarray | None = None
    radius: float = 0.0
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    @classmethod
    def identity(cls):
        return cls(kind="identity")

    @classmethod
    def l2_ball(cls, center, radius):
        center = np.asarray(center, dtype=float)
        if radius <= 0:
            raise ValueError("radius must be positive")
        return cls(kind="l2_ball", center=center, radius=float(radius))

    @classmethod
    def box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if np.any(lower > upper):
            raise ValueError("box requires lower <= upper coordinatewise")
        return cls(kind="box", lower=lower, upper=upper)

    def project_vector(self, vec):
        if self.kind == "identity":
            return vec
        if self.kind == "l2_ball":
            offset = vec - self.center
            norm = float(np.linalg.norm(offset))
            # the slack makes projection exactly idempotent: a projected
            # point's recomputed norm can exceed the radius by rounding
            if norm <= self.radius * (1.0 + 1e-12):
                return vec
            return self.center + offset * (self.radius / norm)
        if self.kind == "box":
            return np.clip(vec, self.lower, self.upper)
        raise ValueError(f"unknown projection kind {self.kind!r}")


def project(state, c):
    """Euclidean projection of a joint state onto the set c."""
    return JointState.from_vector(c.project_vector(state.as_vector()))


def feedback(minibatch, model, theta, params, loss):
    """Stochastic sub-gradient of the minibatch joint risk at (model, theta).

    With per-example losses l_i and gradients l_i', and psi_i the deviation
    derivative at l_i - theta (carrying the 1/sigma factor),

        g_h     = eta * mean_i psi_i * l_i'
        g_theta = 1 - eta * mean_i psi_i.
    """
    if isinstance(loss, str) and loss in LOSSES:
        features = np.stack([ex.features for ex in minibatch])
        labels = np.array([ex.label for ex in minibatch])
        values, grads = batch_values_and_grads(model, features, labels, loss)
    else:
        fn = resolve_loss(loss)
        evals = [fn(model, ex) for ex in minibatch]
        values = np.array([e.value for e in evals])
        grads = np.stack([e.grad for e in evals])
    psi = dev_sigma_prime(values - theta, params)
    psi = np.atleast_1d(psi)
    g_h = params.eta * (psi @ grads) / len(values)
    g_theta = 1.0 - params.eta * float(psi.mean())
    return Feedback(g_h, g_theta)


def mean_loss_gradient(minibatch, model, loss):
    """Plain average-loss gradient, the baseline feedback with no
    location variable (theta receives zero feedback)."""
    if isinstance(loss, str) and loss in LOSSES:
        features = np.stack([ex.features for ex in minibatch])
        labels = np.array([ex.label for ex in minibatch])
        _, grads = batch_values_and_grads(model, features, labels, loss)
        return grads.mean(axis=0)
    fn = resolve_loss(loss)
    return np.mean([fn(model, ex).grad for ex in minibatch], axis=0)


class Minibatcher:
    """Deterministic minibatch source over a fixed list of examples.

    iid mode draws indices with replacement each call; epoch mode shuffles
    once per epoch and partitions, with the last batch of an epoch allowed
    to be smaller (every example appears exactly once per epoch).
    """

    def __init__(self, examples, batch_size, mode, seed):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if mode not in ("iid_with_replacement", "epoch_shuffle"):
            raise ValueError(f"unknown minibatch mode {mode!r}")
        self.examples = list(examples)
        self.batch_size = int(batch_size)
        self.mode = mode
        self.seed = int(seed)
        self._rng = np.random.default_rng(seed)
        self._order = None
        self._pos = 0

    @property
    def n(self):
        return len(self.examples)

    @property
    def batches_per_epoch(self):
        return max(1, math.ceil(self.n / self.batch_size))

    def __call__(self):
        if self.mode == "iid_with_replacement":
            idx = self._rng.integers(0, self.n, size=self.batch_size)
        else:
            if self._order is None or self._pos >= self.n:
                self._order = self._rng.permutation(self.n)
                self._pos = 0
            idx = self._order[self._pos : self._pos + self.batch_size]
            self._pos += len(idx)
        return [self.examples[i] for i in idx]


def make_minibatcher(examples, batch_size, mode, seed):
    return Minibatcher(examples, batch_size, mode, seed)


def risk_feedback_source(batcher, d_in, n_out, params, loss):
    """Feedback source driving the joint risk on dataset minibatches."""

    def source(state, rng, t):
        model = LinearModel.from_flat(state.h, d_in, n_out)
        return feedback(batcher(), model, state.theta, params, loss)

    return source


def erm_feedback_source(batcher, d_in, n_out, loss):
    """Baseline source: average minibatch loss gradient, theta untouched."""

    def source(state, rng, t):
        model = LinearModel.from_flat(state.h, d_in, n_out)
        return Feedback(mean_loss_gradient(batcher(), model, loss), 0.0)

    return source


@dataclass(frozen=True)
class RunRecord:
    trajectory: list  # of JointState, length n + 1
    feedback_norms: list  # of float, length n
    output_index: int
    output_state: JointState
    seed: int

    @property
    def final_state(self):
        return self.trajectory[-1]


def draw_output_index(rng, alphas):
    """Index T with P{T = t} = alpha_t / sum(alpha)."""
    alphas = np.asarray(alphas, dtype=float)
    return int(rng.choice(alphas.size, p=alphas / alphas.sum()))


def run(initial, schedule, projection, n, source, seed):
    """Execute n projected sub-gradient steps and draw the randomized output.

    ``source(state, rng, t)`` returns the Feedback for step t; it may draw
    from the run's seeded rng or manage its own stream.  Raises
    DivergedStateError as soon as an iterate becomes non-finite.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    state = initial
    trajectory = [state]
    norms = []
    for t in range(n):
        g = source(state, rng, t)
        with np.errstate(over="ignore", invalid="ignore"):
            vec = state.as_vector() - schedule.alpha_at(t) * g.as_vector()
            state = JointState.from_vector(projection.project_vector(vec))
        if not state.is_finite():
            raise DivergedStateError(t)
        trajectory.append(state)
        norms.append(g.norm())
    t_out = draw_output_index(rng, schedule.alphas(n))
    return RunRecord(
        trajectory=trajectory,
        feedback_norms=norms,
        output_index=t_out,
        output_state=trajectory[t_out],
        seed=int(seed),
    )


def run_risk(initial, schedule, projection, n, batcher, d_in, n_out, params, loss, seed):
    """Convenience wrapper: run() with the dataset-minibatch feedback source."""
    source = risk_feedback_source(batcher, d_in, n_out, params, loss)
    return run(initial, schedule, projection, n, source, seed)
