"""Per-example losses for linear models, with gradients over all parameters.

Each loss maps (model, example) to a value and the gradient with respect to
the flattened parameter vector [weights.ravel(), intercepts].  Losses are
evaluated per example; minibatch averaging happens in the optimizer so the
feedback composition stays explicit.  Kink sub-gradients (absolute at zero
residual, hinge at margin exactly one) are set to 0, a valid sub-gradient
element matching the sign(0) = 0 convention of the deviation derivatives.

Vectorized batch evaluators are provided for the named losses; they match
the per-example functions exactly and exist only for speed.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinearModel:
    """One linear map per output: logits = features @ weights + intercepts."""

    weights: np.ndarray  # (d_in, n_out)
    intercepts: np.ndarray  # (n_out,)

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        intercepts = np.array(self.intercepts, dtype=float)
        if weights.ndim != 2:
            raise ValueError("weights must be a (d_in, n_out) matrix")
        if intercepts.shape != (weights.shape[1],):
            raise ValueError("intercepts must have length n_out")
        if not (np.isfinite(weights).all() and np.isfinite(intercepts).all()):
            raise ValueError("model parameters must be finite")
        weights.flags.writeable = False
        intercepts.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "intercepts", intercepts)

    @property
    def d_in(self):
        return self.weights.shape[0]

    @property
    def n_out(self):
        return self.weights.shape[1]

    @property
    def param_count(self):
        return self.weights.size + self.intercepts.size

    def to_flat(self):
        return np.concatenate([self.weights.ravel(), self.intercepts])

    @classmethod
    def from_flat(cls, vec, d_in, n_out):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (d_in * n_out + n_out,):
            raise ValueError(
                f"flat vector must have length {d_in * n_out + n_out}, got {vec.shape}"
            )
        return cls(vec[: d_in * n_out].reshape(d_in, n_out), vec[d_in * n_out :])

    @classmethod
    def zeros(cls, d_in, n_out):
        return cls(np.zeros((d_in, n_out)), np.zeros(n_out))

    def logits(self, features):
        return np.asarray(features, dtype=float) @ self.weights + self.intercepts


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    label: float | int

    def __post_init__(self):
        features = np.array(self.features, dtype=float)
        if features.ndim != 1 or not np.isfinite(features).all():
            raise ValueError("features must be a finite 1-D vector")
        features.flags.writeable = False
        object.__setattr__(self, "features", features)


@dataclass(frozen=True)
class LossEval:
    value: float
    grad: np.ndarray


def _scalar_grad(factor, features):
    """Gradient [factor * x, factor] for a single-output linear model."""
    return np.concatenate([factor * features, [factor]])


def squared_loss(model, ex):
    """(prediction - y)^2 for a single-output model."""
    pred = float(model.logits(ex.features)[0])
    r = pred - float(ex.label)
    return LossEval(r * r, _scalar_grad(2.0 * r, ex.features))


def absolute_loss(model, ex):
    """|prediction - y|; sub-gradient 0 at the kink."""
    pred = float(model.logits(ex.features)[0])
    r = pred - float(ex.label)
    return LossEval(abs(r), _scalar_grad(float(np.sign(r)), ex.features))


def hinge_loss(model, ex):
    """max(0, 1 - y*prediction) for y in {-1, +1}; gradient 0 at margin 1."""
    y = float(ex.label)
    pred = float(model.logits(ex.features)[0])
    margin = y * pred
    if margin < 1.0:
        return LossEval(1.0 - margin, _scalar_grad(-y, ex.features))
    return LossEval(0.0, np.zeros(model.param_count))


def multiclass_logistic_loss(model, ex):
    """-log softmax(logits)[label], stabilized by max subtraction."""
    y = int(ex.label)
    logits = model.logits(ex.features)
    shifted = logits - logits.max()
    exp_shifted = np.exp(shifted)
    total = exp_shifted.sum()
    if shifted[y] == 0.0:
        value = float(np.log1p(total - exp_shifted[y]))
    else:
        value = float(np.log(total) - shifted[y])
    p = exp_shifted / total
    p[y] -= 1.0
    return LossEval(value, np.concatenate([np.outer(ex.features, p).ravel(), p]))


LOSSES = {
    "squared": squared_loss,
    "absolute": absolute_loss,
    "hinge": hinge_loss,
    "logistic": multiclass_logistic_loss,
}


def resolve_loss(loss):
    """Map a name or callable to a per-example loss function."""
    if callable(loss):
        return loss
    try:
        return LOSSES[loss]
    except KeyError:
        raise ValueError(f"unknown loss {loss!r}; expected one of {sorted(LOSSES)}")


def batch_values(model, features, labels, kind):
    """Loss values for a whole batch; matches the per-example functions."""
    features = np.asarray(features, dtype=float)
    logits = features @ model.weights + model.intercepts
    if kind == "squared":
        r = logits[:, 0] - np.asarray(labels, dtype=float)
        return r * r
    if kind == "absolute":
        return np.abs(logits[:, 0] - np.asarray(labels, dtype=float))
    if kind == "hinge":
        return np.maximum(0.0, 1.0 - np.asarray(labels, dtype=float) * logits[:, 0])
    if kind == "logistic":
        y = np.asarray(labels, dtype=int)
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp_shifted = np.exp(shifted)
        total = exp_shifted.sum(axis=1)
        rows = np.arange(len(y))
        own = shifted[rows, y]
        rest = np.log1p(total - exp_shifted[rows, y])
        return np.where(own == 0.0, rest, np.log(total) - own)
    raise ValueError(f"unknown loss kind {kind!r}")


def batch_values_and_grads(model, features, labels, kind):
    """(values (m,), grads (m, param_count)) for a whole batch."""
    features = np.asarray(features, dtype=float)
    m = features.shape[0]
    values = batch_values(model, features, labels, kind)
    logits = features @ model.weights + model.intercepts
    if kind in ("squared", "absolute", "hinge"):
        labels = np.asarray(labels, dtype=float)
        if kind == "squared":
            factor = 2.0 * (logits[:, 0] - labels)
        elif kind == "absolute":
            factor = np.sign(logits[:, 0] - labels)
        else:
            factor = np.where(labels * logits[:, 0] < 1.0, -labels, 0.0)
        grads = np.concatenate([factor[:, None] * features, factor[:, None]], axis=1)
        return values, grads
    if kind == "logistic":
        y = np.asarray(labels, dtype=int)
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp_shifted = np.exp(shifted)
        p = exp_shifted / exp_shifted.sum(axis=1, keepdims=True)
        p[np.arange(m), y] -= 1.0
        grads = np.concatenate(
            [np.einsum("mi,mk->mik", features, p).reshape(m, -1), p], axis=1
        )
        return values, grads
    raise ValueError(f"unknown loss kind {kind!r}")
