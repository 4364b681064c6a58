"""Dataset ingestion and synthetic generators.

CSV ingestion drops rows with missing values, one-hot encodes categorical
columns, and min-max scales every feature column onto [0, 1] using
whole-dataset statistics (scaling before splitting; recorded in metadata
by the CLI).  Generators are pure functions of their parameters and seed.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDatasetError, ParseError
from .losses import Example
from .risk_eval import Sample


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) class indices or reals
    class_count: int | None = None
    feature_names: list | None = None
    dropped_rows: int = 0

    def __post_init__(self):
        features = np.array(self.features, dtype=float)
        labels = np.array(self.labels)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError("features must be a non-empty (n, d) matrix")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must have one entry per row")
        if self.class_count is not None:
            labels = labels.astype(int)
            if labels.min() < 0 or labels.max() >= self.class_count:
                raise ValueError("class indices must lie in [0, class_count)")
        else:
            labels = labels.astype(float)
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def to_examples(self):
        cast = int if self.class_count is not None else float
        return [
            Example(self.features[i], cast(self.labels[i])) for i in range(self.n)
        ]

    def take(self, idx):
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.class_count,
            self.feature_names,
            self.dropped_rows,
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.88
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


def minmax_scale_columns(matrix):
    """Scale each column onto [0, 1]; constant columns map to 0."""
    matrix = np.array(matrix, dtype=float)
    lo = matrix.min(axis=0)
    hi = matrix.max(axis=0)
    span = hi - lo
    constant = span == 0
    span = np.where(constant, 1.0, span)
    scaled = (matrix - lo) / span
    scaled[:, constant] = 0.0
    return scaled


def load_csv(path, schema, label_kind="class"):
    """Parse a comma-separated file with a header row into a Dataset.

    ``schema`` maps column names to roles: "numeric", "categorical", or
    "label" (exactly one).  Columns absent from the schema default to
    numeric.  Rows with any empty field are dropped and counted;
    non-numeric content in a numeric column raises ParseError with the
    row and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path}: file has no header row")
        header = [name.strip() for name in header]
        rows = [[cell.strip() for cell in row] for row in reader]

    for name, role in schema.items():
        if name not in header:
            raise ParseError(f"schema column {name!r} not present in header")
        if role not in ("numeric", "categorical", "label"):
            raise ParseError(f"unknown role {role!r} for column {name!r}")
    label_cols = [name for name, role in schema.items() if role == "label"]
    if len(label_cols) != 1:
        raise ParseError("schema must name exactly one label column")
    label_col = label_cols[0]
    roles = {name: schema.get(name, "numeric") for name in header}

    kept = []
    dropped = 0
    for r, row in enumerate(rows, start=2):  # header is line 1
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=r)
        if any(cell == "" for cell in row):
            dropped += 1
            continue
        kept.append((r, row))
    if not kept:
        raise EmptyDatasetError(f"{path}: no complete rows after dropping missing values")

    def parse_float(cell, r, name):
        try:
            return float(cell)
        except ValueError:
            raise ParseError(f"could not parse {cell!r} as a number", row=r, column=name)

    columns = []  # (feature_name, values per kept row)
    for j, name in enumerate(header):
        role = roles[name]
        cells = [(r, row[j]) for r, row in kept]
        if name == label_col:
            continue
        if role == "categorical":
            levels = sorted({cell for _, cell in cells})
            for level in levels:
                columns.append(
                    (f"{name}={level}", [1.0 if cell == level else 0.0 for _, cell in cells])
                )
        else:
            columns.append((name, [parse_float(cell, r, name) for r, cell in cells]))
    if not columns:
        raise EmptyDatasetError(f"{path}: no feature columns")

    j_label = header.index(label_col)
    raw_labels = [(r, row[j_label]) for r, row in kept]
    if label_kind == "class":
        levels = sorted({cell for _, cell in raw_labels})
        index = {level: i for i, level in enumerate(levels)}
        labels = np.array([index[cell] for _, cell in raw_labels])
        class_count = len(levels)
    elif label_kind == "real":
        labels = np.array([parse_float(cell, r, label_col) for r, cell in raw_labels])
        class_count = None
    else:
        raise ParseError(f"unknown label_kind {label_kind!r}")

    names = [name for name, _ in columns]
    matrix = np.column_stack([vals for _, vals in columns])
    return Dataset(
        minmax_scale_columns(matrix),
        labels,
        class_count=class_count,
        feature_names=names,
        dropped_rows=dropped,
    )


def split(ds, spec):
    """Seeded shuffle then prefix split at floor(train_fraction * n).

    Both parts are kept non-empty, so n = 2 yields a 1/1 split.
    """
    if ds.n < 2:
        raise ValueError("need at least 2 rows to split")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(ds.n)
    cut = int(math.floor(spec.train_fraction * ds.n))
    cut = min(max(cut, 1), ds.n - 1)
    return ds.take(perm[:cut]), ds.take(perm[cut:])


def folded_normal(a, b, count, seed):
    """Sample of |Normal(a, b^2)| draws."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    return Sample(np.abs(a + b * rng.standard_normal(count)))


def folded_normal_moments(a, b):
    """(mean, variance) of |Normal(a, b^2)|."""
    phi = lambda x: 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
    mean = b * math.sqrt(2.0 / math.pi) * math.exp(-a * a / (2.0 * b * b)) + a * (
        1.0 - 2.0 * phi(-a / b)
    )
    return mean, a * a + b * b - mean * mean


def synth_regression(w0, w1, noise, count, x_law="uniform01", seed=0):
    """1-D regression data Y = w0 + w1*X + eps.

    ``noise`` is ("normal", s), ("lognormal_centered", s) with
    eps = e^N - e^(s^2/2) for N ~ Normal(0, s^2) (mean zero, right skewed),
    or ("none",).  Features are drawn uniformly on [0, 1] and left
    unscaled so the generating coefficients stay identifiable.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if x_law != "uniform01":
        raise ValueError(f"unsupported x_law {x_law!r}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, count)
    kind = noise[0]
    if kind == "normal":
        eps = noise[1] * rng.standard_normal(count)
    elif kind == "lognormal_centered":
        s = noise[1]
        eps = np.exp(s * rng.standard_normal(count)) - math.exp(0.5 * s * s)
    elif kind == "none":
        eps = np.zeros(count)
    else:
        raise ValueError(f"unknown noise law {kind!r}")
    y = w0 + w1 * x + eps
    return Dataset(x[:, None], y, class_count=None, feature_names=["x"])


def synth_blobs(class_count, d, separation, count, seed, tail_dof=None):
    """Gaussian blobs with centers separation apart on coordinate axes,
    min-max scaled onto [0, 1].  ``tail_dof`` switches the within-class
    noise to Student-t with that many degrees of freedom, producing
    heavy-tailed features (and hence heavy-tailed per-example losses for
    any downstream classifier)."""
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    if d < class_count:
        raise ValueError("need d >= class_count to place simplex centers")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, class_count, count)
    centers = np.zeros((class_count, d))
    centers[np.arange(class_count), np.arange(class_count)] = separation
    if tail_dof is None:
        noise = rng.standard_normal((count, d))
    else:
        noise = rng.standard_t(tail_dof, size=(count, d))
    features = centers[labels] + noise
    return Dataset(
        minmax_scale_columns(features),
        labels,
        class_count=class_count,
        feature_names=[f"x{j}" for j in range(d)],
    )


def flip_labels(ds, fraction, seed):
    """Reassign a seeded fraction of class labels uniformly at random to a
    different class; the resulting outliers give the per-example losses a
    heavy upper tail."""
    if ds.class_count is None:
        raise ValueError("flip_labels requires a classification dataset")
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    if fraction == 0.0:
        return ds
    rng = np.random.default_rng(seed)
    n_flip = int(round(fraction * ds.n))
    idx = rng.choice(ds.n, size=n_flip, replace=False)
    labels = np.array(ds.labels)
    shift = rng.integers(1, ds.class_count, size=n_flip)
    labels[idx] = (labels[idx] + shift) % ds.class_count
    return Dataset(ds.features, labels, ds.class_count, ds.feature_names, ds.dropped_rows)
