"""Empirical evaluation of the location-deviation risk on finite samples.

A weighted sample of realized losses z_1..z_n stands in for the loss
distribution.  The joint objective

    J(theta) = theta + eta * sum_i w_i * dev_sigma(z_i - theta)

is minimized in theta to produce the risk value.  For sigma = inf the
minimizer has a closed form (mean - 1/(2*eta)) and the risk equals the
classical mean-variance objective; for sigma = 0 the minimizer is a lower
sample quantile; for finite sigma it solves

    sum_i w_i * atan((z_i - theta)/sigma) = sigma / eta

by a bracketed Newton iteration on a strictly convex scalar problem.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidWitnessError, NonConvergenceError
from .riskfn import HALF_PI, dev_sigma

_MAX_NEWTON_ITERS = 200
_POLISH_STEPS = 8


@dataclass(frozen=True)
class Sample:
    """Finite weighted sample of realized losses.

    ``weights`` is optional; None means uniform 1/n.  Explicit weights must
    be nonnegative and sum to 1 within 1e-12, so small discrete
    distributions can be represented exactly instead of via Monte-Carlo
    draws.
    """

    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("values must be a non-empty 1-D array")
        if not np.isfinite(values).all():
            raise ValueError("values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if self.weights is not None:
            weights = np.array(self.weights, dtype=float)
            if weights.shape != values.shape:
                raise ValueError("weights must match values in length")
            if (weights < 0).any() or not np.isfinite(weights).all():
                raise ValueError("weights must be finite and nonnegative")
            if abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError("weights must sum to 1 within 1e-12")
            weights.flags.writeable = False
            object.__setattr__(self, "weights", weights)

    @property
    def n(self):
        return self.values.size

    @property
    def w(self):
        """Weights, defaulting to uniform."""
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights

    def shifted(self, a):
        """Sample with all values translated by a (weights unchanged)."""
        return Sample(self.values + a, self.weights)


@dataclass(frozen=True)
class ThetaSolution:
    theta_star: float
    risk_value: float
    iterations: int
    residual: float


def joint_risk(sample, theta, params):
    """theta + eta * weighted mean of dev_sigma(z - theta)."""
    return float(theta) + params.eta * float(
        np.dot(sample.w, dev_sigma(sample.values - theta, params))
    )


def _solve_atan_mean(values, weights, sigma, target, lo, hi):
    """Solve sum_i w_i atan((z_i - theta)/sigma) = target for theta.

    The left side is strictly decreasing in theta, and [lo, hi] brackets the
    root (value >= target at lo, <= target at hi).  Newton steps are taken
    when they stay inside the bracket, otherwise bisection; after the
    tolerance is met a few extra Newton steps polish the root so downstream
    identities (translation equivariance, monotonicity) hold to near
    machine precision even when the problem is badly scaled.
    """
    tol = 1e-10 * max(1.0, abs(target))

    def phi(theta):
        x = (values - theta) / sigma
        return float(np.dot(weights, np.arctan(x))) - target

    def phi_slope(theta):
        x = (values - theta) / sigma
        return -float(np.dot(weights, 1.0 / (1.0 + x * x))) / sigma

    theta = 0.5 * (lo + hi)
    f = phi(theta)
    converged = False
    iterations = 0
    for iterations in range(1, _MAX_NEWTON_ITERS + 1):
        if abs(f) <= tol:
            converged = True
            break
        if f > 0:
            lo = theta
        else:
            hi = theta
        slope = phi_slope(theta)
        candidate = theta - f / slope if slope < 0 else math.nan
        if not (lo < candidate < hi):
            candidate = 0.5 * (lo + hi)
        theta = candidate
        f = phi(theta)
    if not converged and abs(f) > tol:
        raise NonConvergenceError(
            f"theta solver failed to reach tolerance {tol:.3e} in "
            f"{_MAX_NEWTON_ITERS} iterations (residual {abs(f):.3e})"
        )
    for _ in range(_POLISH_STEPS):
        slope = phi_slope(theta)
        if slope >= 0:
            break
        candidate = theta - f / slope
        f_new = phi(candidate)
        if abs(f_new) >= abs(f) or not math.isfinite(candidate):
            break
        theta, f = candidate, f_new
    return theta, iterations, abs(f)


def _theta_sigma_zero(values, weights, eta):
    """Smallest minimizer of theta + eta * sum w|z - theta|.

    The one-sided slope just right of an atom with cumulative weight C is
    1 + eta*(2C - 1); the smallest minimizer is the first atom where that
    slope is nonnegative, i.e. the lower sample quantile at level
    (1 - 1/eta)/2.
    """
    sorted_vals, inverse = np.unique(values, return_inverse=True)
    merged = np.zeros(sorted_vals.size)
    np.add.at(merged, inverse, weights)
    cum = np.cumsum(merged)
    q = 0.5 * (1.0 - 1.0 / eta)
    idx = int(np.searchsorted(cum, q, side="left"))
    idx = min(idx, sorted_vals.size - 1)
    theta = float(sorted_vals[idx])
    below = float(cum[idx - 1]) if idx > 0 else 0.0
    left_slope = 1.0 + eta * (2.0 * below - 1.0)
    right_slope = 1.0 + eta * (2.0 * float(cum[idx]) - 1.0)
    if left_slope <= 0.0 <= right_slope:
        residual = 0.0
    else:
        residual = min(abs(left_slope), abs(right_slope))
    return theta, residual


def solve_theta(sample, params):
    """Minimize theta -> joint_risk(sample, theta, params).

    Returns the smallest minimizer for sigma = 0 (the minimizing set can be
    an interval); the minimizer is unique for sigma > 0.
    """
    values, weights = sample.values, sample.w
    sigma, eta = params.sigma, params.eta
    if math.isinf(sigma):
        theta = float(np.dot(weights, values)) - 0.5 / eta
        residual = abs(1.0 - 2.0 * eta * (float(np.dot(weights, values)) - theta))
        iterations = 0
    elif sigma == 0:
        theta, residual = _theta_sigma_zero(values, weights, eta)
        iterations = 0
    else:
        target = sigma / eta
        lo = float(values.min()) - sigma * math.tan(min(target, HALF_PI - 1e-9))
        hi = float(values.max())
        theta, iterations, residual = _solve_atan_mean(
            values, weights, sigma, target, lo, hi
        )
    return ThetaSolution(
        theta_star=theta,
        risk_value=joint_risk(sample, theta, params),
        iterations=iterations,
        residual=residual,
    )


def risk_empirical(sample, params):
    """Minimum over theta of the joint risk (the risk functional's value)."""
    return solve_theta(sample, params).risk_value


def mean_variance_closed_form(sample, eta):
    """mean + eta * population variance - 1/(4*eta).

    Equals the sigma = inf risk exactly: the weighted (1/n-style) variance
    is the weighted mean of the squared deviation from the mean, so the
    identity is algebraic rather than approximate.
    """
    w, z = sample.w, sample.values
    mean = float(np.dot(w, z))
    popvar = float(np.dot(w, (z - mean) ** 2))
    return mean + eta * popvar - 0.25 / eta


def m_location(sample, sigma):
    """The theta at which the weighted mean of atan((z - theta)/sigma) is zero.

    This is the scale-sigma location estimate of the sample; it upper
    bounds the joint minimizer theta_star, whose first-order condition
    targets the positive level sigma/eta instead of zero.
    """
    if not (0 < sigma < math.inf):
        raise ValueError(f"m_location requires 0 < sigma < inf, got {sigma}")
    values, weights = sample.values, sample.w
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return lo
    theta, _, _ = _solve_atan_mean(values, weights, float(sigma), 0.0, lo, hi)
    return theta


def build_nonmonotone_pair(c1, w1, w2, epsilon, eta):
    """Three-point samples (Z1, Z2) with Z1 <= Z2 pointwise yet higher risk.

    Each Z_j has atoms {c_j - w_j, c_j, c_j + w_j} with outer-atom weight
    v_j/(2*w_j^2), where v_j = w_j^2 - epsilon is its variance; the second
    center is c2 = c1 + w1 + w2, so the supports just touch.  At sigma=inf
    the risk difference is eta*(v1 - v2) - (w1 + w2), which is positive for
    a wide first sample and a narrow second one.
    """
    if w1 <= 0 or w2 <= 0 or epsilon <= 0 or eta <= 0:
        raise InvalidWitnessError("w1, w2, epsilon, eta must all be positive")
    if epsilon >= min(w1, w2) ** 2:
        raise InvalidWitnessError(
            f"epsilon must be below both squared widths (epsilon={epsilon})"
        )
    c2 = c1 + w1 + w2

    def three_point(c, w):
        v = w * w - epsilon
        outer = v / (2.0 * w * w)
        atoms = np.array([c - w, c, c + w])
        weights = np.array([outer, 1.0 - 2.0 * outer, outer])
        return Sample(atoms, weights)

    z1 = three_point(c1, w1)
    z2 = three_point(c2, w2)
    if float(z1.values.max()) > float(z2.values.min()):
        raise InvalidWitnessError("supports overlap: max(Z1) > min(Z2)")
    r1 = mean_variance_closed_form(z1, eta)
    r2 = mean_variance_closed_form(z2, eta)
    if not r1 > r2:
        raise InvalidWitnessError(
            f"risk inequality fails: R(Z1)={r1!r} <= R(Z2)={r2!r} "
            "(need eta*(v1 - v2) > w1 + w2)"
        )
    return z1, z2
