"""Streaming learning problems: loss models, per-agent i.i.d. data streams,
and the empirical objectives built from everything seen so far.

Two loss models are bundled.  The quadratic model treats each data point as a
target vector (features and label stacked) and penalizes half the squared
distance to it, which keeps every oracle closed-form.  The regularized
logistic model is the standard binary classifier with labels in {+1, -1}.

Agent i's empirical gradient at round t averages the per-sample gradients of
all points received through round t, evaluated at the current parameter.
Streams are counter-keyed: sample k of agent i depends only on
(problem seed, i, k), so streams can be replayed, sampled out of order, and
modified one point at a time for adjacency experiments.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dp_noise import TAG_DATA, KeyedStream

_TAG_GEOMETRY = 101
_TAG_MONTE_CARLO = 102

LOSS_MODELS = ("quadratic", "logistic_l2")


@dataclass(frozen=True)
class DataPoint:
    """One observation: feature vector x and scalar label y."""

    x: np.ndarray
    y: float


@dataclass(frozen=True)
class ProblemMeta:
    """Curvature and noise constants exposed for bound checking.

    Exact for the quadratic model (mu = L = 1, kappa from the stream standard
    deviation, D evaluated at the shared optimum).  For logistic_l2 only mu
    and L are provided analytically; kappa and D are None.
    """

    mu: float
    L: float
    kappa: float | None
    D: float | None


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def load_dataset_csv(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Load a labeled CSV: a "label" column in {+1, -1} plus feature columns.

    Non-numeric feature columns are one-hot encoded (expanded column names
    "col=value" in sorted category order); numeric columns pass through.
    Returns (X, y, feature_names).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        rows = [row for row in reader if row]
    if "label" not in header:
        raise ValueError(f'{path}: no "label" column in header {header}')
    if not rows:
        raise ValueError(f"{path}: no data rows")
    label_idx = header.index("label")
    labels = np.array([float(r[label_idx]) for r in rows])
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        raise ValueError(f"{path}: labels must be +1 or -1")
    feat_cols, feat_names = [], []
    for j, name in enumerate(header):
        if j == label_idx:
            continue
        values = [r[j] for r in rows]
        try:
            col = np.array([float(v) for v in values])
        except ValueError:
            categories = sorted(set(values))
            for cat in categories:
                feat_cols.append(np.array([1.0 if v == cat else 0.0 for v in values]))
                feat_names.append(f"{name}={cat}")
            continue
        feat_cols.append(col)
        feat_names.append(name)
    X = np.column_stack(feat_cols)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{path}: non-finite feature values")
    return X, labels, feat_names


class StreamProblem:
    """Loss model plus per-agent seeded i.i.d. data streams.

    Synthetic quadratic streams draw the stacked target around a per-agent
    mean (the heterogeneity knob); stream_std = 0 gives deterministic
    point-mass streams.  Synthetic logistic streams draw shifted Gaussian
    features with labels from a hidden generator parameter.  Dataset-backed
    streams sample uniformly from a per-agent shard of the rows (round-robin
    partition).

    clip_l1 bounds every per-sample gradient's L1 norm by rescaling; it is the
    constant the privacy accountant uses as the gradient sensitivity bound.
    """

    def __init__(self, loss: str, dim: int, m: int, seed: int, reg: float = 0.0,
                 clip_l1: float | None = None, hetero_spread: float = 1.0,
                 stream_std: float = 1.0, dataset: tuple[np.ndarray, np.ndarray] | None = None):
        if loss not in LOSS_MODELS:
            raise ValueError(f"unknown loss model {loss!r}; expected one of {LOSS_MODELS}")
        if dim < 1:
            raise ValueError(f"dimension must be >= 1, got {dim}")
        if m < 1:
            raise ValueError(f"agent count must be >= 1, got {m}")
        if clip_l1 is not None and clip_l1 <= 0:
            raise ValueError(f"clip_l1 must be positive or None, got {clip_l1}")
        if loss == "logistic_l2" and reg < 0:
            raise ValueError(f"regularization must be >= 0, got {reg}")
        self.loss = loss
        self.dim = dim
        self.m = m
        self.seed = seed
        self.reg = float(reg)
        self.clip_l1 = clip_l1
        self.hetero_spread = float(hetero_spread)
        self.stream_std = float(stream_std)
        self._stream_seed = seed
        self._overrides: dict[tuple[int, int], DataPoint] = {}
        self._streams: dict[int, KeyedStream] = {}

        geom = np.random.Generator(np.random.Philox(
            key=np.random.SeedSequence((seed, 0, _TAG_GEOMETRY)).generate_state(2, np.uint64)))
        if dataset is not None:
            if loss != "logistic_l2":
                raise ValueError("dataset-backed streams require the logistic_l2 loss")
            X, y = dataset
            if X.shape[1] != dim:
                raise ValueError(f"dataset has {X.shape[1]} features, expected {dim}")
            self._data_X = np.asarray(X, dtype=float)
            self._data_y = np.asarray(y, dtype=float)
            # Round-robin row partition; heterogeneity comes from the shards.
            self._shards = [np.arange(i, len(y), m) for i in range(m)]
            if any(s.size == 0 for s in self._shards):
                raise ValueError(f"dataset has fewer rows ({len(y)}) than agents ({m})")
            self._means = None
            self._shifts = None
            self._theta_gen = None
        else:
            self._data_X = None
            self._data_y = None
            self._shards = None
            if loss == "quadratic":
                self._means = self.hetero_spread * geom.standard_normal((m, dim))
                self._shifts = None
                self._theta_gen = None
            else:
                self._means = None
                self._shifts = self.hetero_spread * geom.standard_normal((m, dim))
                theta_gen = geom.standard_normal(dim)
                self._theta_gen = theta_gen / np.linalg.norm(theta_gen)

    @classmethod
    def from_dataset(cls, path, m: int, seed: int, reg: float = 1e-3,
                     clip_l1: float | None = None) -> "StreamProblem":
        X, y, _ = load_dataset_csv(path)
        return cls(loss="logistic_l2", dim=X.shape[1], m=m, seed=seed, reg=reg,
                   clip_l1=clip_l1, dataset=(X, y))

    # -- streams ---------------------------------------------------------

    def _stream(self, i: int) -> KeyedStream:
        if i not in self._streams:
            self._streams[i] = KeyedStream(self._stream_seed, i, TAG_DATA)
        return self._streams[i]

    def replica(self, salt) -> "StreamProblem":
        """Same distributions (same geometry), independently drawn streams.

        Used for repetition averaging: the replica shares every P_i but its
        samples come from substreams salted by `salt`.
        """
        clone = StreamProblem.__new__(StreamProblem)
        clone.__dict__.update(self.__dict__)
        salt = (salt,) if isinstance(salt, int) else tuple(salt)
        clone._stream_seed = (self.seed,) + salt
        clone._overrides = dict(self._overrides)
        clone._streams = {}
        return clone

    def sample_point(self, i: int, k: int) -> DataPoint:
        """Sample k of agent i's stream (a pure function of seed, i, k)."""
        if not 0 <= i < self.m:
            raise ValueError(f"agent index {i} out of range")
        override = self._overrides.get((i, k))
        if override is not None:
            return override
        rng = self._stream(i).at(k)
        if self._shards is not None:
            row = self._shards[i][rng.integers(0, self._shards[i].size)]
            return DataPoint(x=self._data_X[row].copy(), y=float(self._data_y[row]))
        if self.loss == "quadratic":
            target = self._means[i] + self.stream_std * rng.standard_normal(self.dim)
            return DataPoint(x=target[:-1].copy(), y=float(target[-1]))
        x = self._shifts[i] + rng.standard_normal(self.dim)
        p_plus = _sigmoid(x @ self._theta_gen)
        y = 1.0 if rng.random() < p_plus else -1.0
        return DataPoint(x=x, y=y)

    def with_replaced_point(self, i: int, k: int, point: DataPoint) -> "StreamProblem":
        """Adjacent problem: identical streams except sample (i, k) is `point`."""
        if point.x.shape != (self.feature_dim,):
            raise ValueError(
                f"replacement point has {point.x.shape[0]} features, expected {self.feature_dim}"
            )
        clone = StreamProblem.__new__(StreamProblem)
        clone.__dict__.update(self.__dict__)
        clone._overrides = dict(self._overrides)
        clone._overrides[(i, k)] = point
        clone._streams = {}
        return clone

    @property
    def feature_dim(self) -> int:
        """Length of DataPoint.x (dim - 1 for quadratic, dim otherwise)."""
        return self.dim - 1 if self.loss == "quadratic" else self.dim

    # -- losses and gradients --------------------------------------------

    def _stack(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.hstack([X, y[:, None]])

    def batch_loss_grad(self, theta: np.ndarray,
                        X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample losses and gradients at theta (no clipping applied)."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({self.dim},)")
        if self.loss == "quadratic":
            diff = theta[None, :] - self._stack(X, y)
            return 0.5 * (diff ** 2).sum(axis=1), diff
        margins = y * (X @ theta)
        losses = np.logaddexp(0.0, -margins) + 0.5 * self.reg * (theta @ theta)
        grads = -(y * _sigmoid(-margins))[:, None] * X + self.reg * theta[None, :]
        return losses, grads

    def meta(self) -> ProblemMeta:
        if self.loss == "quadratic":
            kappa = self.stream_std * np.sqrt(self.dim)
            center = self._means.mean(axis=0)
            D = float(np.linalg.norm(self._means - center, axis=1).max())
            return ProblemMeta(mu=1.0, L=1.0, kappa=float(kappa), D=D)
        if self._data_X is not None:
            radius_sq = float((self._data_X ** 2).sum(axis=1).max())
        else:
            # 4-sigma feature-radius surrogate for unbounded Gaussian features.
            shift_max = float(np.linalg.norm(self._shifts, axis=1).max())
            radius_sq = (shift_max + 4.0 * np.sqrt(self.dim)) ** 2
        return ProblemMeta(mu=self.reg, L=self.reg + radius_sq / 4.0, kappa=None, D=None)


class SampleBuffer:
    """Append-only per-agent store of every point received so far.

    Rows are kept in flat arrays with capacity doubling; running sums of the
    stacked targets keep the unclipped quadratic gradient O(dim) per round.
    clip_events counts per-sample gradients rescaled by L1 clipping.
    """

    def __init__(self, m: int, feature_dim: int):
        self.m = m
        self.feature_dim = feature_dim
        self._X = [np.empty((8, feature_dim)) for _ in range(m)]
        self._y = [np.empty(8) for _ in range(m)]
        self._n = [0] * m
        self._sum_x = np.zeros((m, feature_dim))
        self._sum_y = np.zeros(m)
        self.clip_events = 0

    def size(self, i: int) -> int:
        return self._n[i]

    def append(self, i: int, p: DataPoint) -> None:
        n = self._n[i]
        if n == self._X[i].shape[0]:
            self._X[i] = np.vstack([self._X[i], np.empty_like(self._X[i])])
            self._y[i] = np.concatenate([self._y[i], np.empty_like(self._y[i])])
        self._X[i][n] = p.x
        self._y[i][n] = p.y
        self._n[i] = n + 1
        self._sum_x[i] += p.x
        self._sum_y[i] += p.y

    def points(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        n = self._n[i]
        return self._X[i][:n], self._y[i][:n]

    def stacked_mean(self, i: int) -> np.ndarray:
        """Mean of the stacked (x, y) targets of agent i (quadratic fast path)."""
        n = self._n[i]
        if n == 0:
            raise ValueError(f"agent {i} buffer is empty")
        return np.concatenate([self._sum_x[i], [self._sum_y[i]]]) / n

    def stacked_means(self) -> np.ndarray:
        """Stacked-target means of all agents at once; rows index agents."""
        if min(self._n) == 0:
            raise ValueError("some agent buffer is empty")
        sums = np.hstack([self._sum_x, self._sum_y[:, None]])
        return sums / np.asarray(self._n, dtype=float)[:, None]


def loss_grad(problem: StreamProblem, theta: np.ndarray,
              p: DataPoint) -> tuple[float, np.ndarray]:
    """Loss value and gradient of one sample at theta."""
    losses, grads = problem.batch_loss_grad(theta, p.x[None, :], np.array([p.y]))
    return float(losses[0]), grads[0]


def grad_empirical(problem: StreamProblem, buffer: SampleBuffer, i: int,
                   theta: np.ndarray, t: int) -> np.ndarray:
    """Gradient of agent i's running-average objective at round t.

    Averages the per-sample gradients of points 0..t at the current theta.
    With clipping enabled each per-sample gradient is first rescaled to
    L1 norm <= clip_l1 (events recorded on the buffer).  The unclipped
    quadratic model uses the algebraically identical running-mean form.
    """
    n = buffer.size(i)
    if n == 0:
        raise ValueError(f"agent {i} buffer is empty")
    if n != t + 1:
        raise ValueError(f"agent {i} buffer holds {n} points, expected t+1 = {t + 1}")
    theta = np.asarray(theta, dtype=float)
    if problem.loss == "quadratic" and problem.clip_l1 is None:
        return theta - buffer.stacked_mean(i)
    X, y = buffer.points(i)
    _, grads = problem.batch_loss_grad(theta, X, y)
    if problem.clip_l1 is not None:
        norms = np.abs(grads).sum(axis=1)
        over = norms > problem.clip_l1
        if over.any():
            grads = grads.copy()
            grads[over] *= (problem.clip_l1 / norms[over])[:, None]
            buffer.clip_events += int(over.sum())
    return grads.mean(axis=0)


def all_grads_empirical(problem: StreamProblem, buffer: SampleBuffer,
                        theta: np.ndarray, t: int) -> np.ndarray:
    """Stacked per-agent empirical gradients (row i for agent i)."""
    if problem.loss == "quadratic" and problem.clip_l1 is None:
        if any(buffer.size(i) != t + 1 for i in range(problem.m)):
            raise ValueError(f"buffers out of sync with round {t}")
        return theta - buffer.stacked_means()
    return np.stack([grad_empirical(problem, buffer, i, theta[i], t)
                     for i in range(problem.m)])


def global_grad(problem: StreamProblem, theta: np.ndarray, mc_samples: int = 10_000,
                seed: int = 0) -> np.ndarray:
    """Gradient estimate of the population objective at theta.

    Exact for the quadratic model (theta minus the mean of the stream means)
    and for dataset-backed streams (finite distributions); synthetic logistic
    streams use a Monte-Carlo average over mc_samples fresh draws per agent.
    """
    if mc_samples < 1:
        raise ValueError(f"mc_samples must be >= 1, got {mc_samples}")
    theta = np.asarray(theta, dtype=float)
    if problem.loss == "quadratic":
        return theta - problem._means.mean(axis=0)
    if problem._data_X is not None:
        parts = []
        for i in range(problem.m):
            rows = problem._shards[i]
            _, grads = problem.batch_loss_grad(theta, problem._data_X[rows],
                                               problem._data_y[rows])
            parts.append(grads.mean(axis=0))
        return np.mean(parts, axis=0)
    rng = np.random.Generator(np.random.Philox(
        key=np.random.SeedSequence((problem.seed, seed, _TAG_MONTE_CARLO))
        .generate_state(2, np.uint64)))
    total = np.zeros(problem.dim)
    for i in range(problem.m):
        x = problem._shifts[i] + rng.standard_normal((mc_samples, problem.dim))
        p_plus = _sigmoid(x @ problem._theta_gen)
        y = np.where(rng.random(mc_samples) < p_plus, 1.0, -1.0)
        _, grads = problem.batch_loss_grad(theta, x, y)
        total += grads.mean(axis=0)
    return total / problem.m


def global_objective(problem: StreamProblem, theta: np.ndarray,
                     sample: tuple[np.ndarray, np.ndarray] | None = None) -> float:
    """Population objective at theta.

    Closed form for the quadratic model, exact finite average for
    dataset-backed streams; synthetic logistic streams require a frozen
    surrogate sample (X, y).
    """
    theta = np.asarray(theta, dtype=float)
    if sample is not None:
        losses, _ = problem.batch_loss_grad(theta, sample[0], sample[1])
        return float(losses.mean())
    if problem.loss == "quadratic":
        center = problem._means.mean(axis=0)
        spread = float((np.linalg.norm(problem._means - center, axis=1) ** 2).mean())
        return float(0.5 * ((theta - center) @ (theta - center))
                     + 0.5 * spread + 0.5 * problem.dim * problem.stream_std ** 2)
    if problem._data_X is not None:
        vals = []
        for i in range(problem.m):
            rows = problem._shards[i]
            losses, _ = problem.batch_loss_grad(theta, problem._data_X[rows],
                                                problem._data_y[rows])
            vals.append(losses.mean())
        return float(np.mean(vals))
    raise ValueError("synthetic logistic streams need a frozen sample to evaluate the objective")


def draw_surrogate_sample(problem: StreamProblem, size: int,
                          seed: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Frozen i.i.d. sample from the mixture of all agents' distributions.

    Rows cycle through agents so each P_i contributes size/m draws; used as
    the surrogate population for synthetic logistic oracles.
    """
    if problem.loss == "quadratic":
        raise ValueError("quadratic oracles are closed-form; no surrogate needed")
    if problem._data_X is not None:
        return problem._data_X.copy(), problem._data_y.copy()
    rng = np.random.Generator(np.random.Philox(
        key=np.random.SeedSequence((problem.seed, seed, _TAG_MONTE_CARLO, 1))
        .generate_state(2, np.uint64)))
    per = int(np.ceil(size / problem.m))
    xs, ys = [], []
    for i in range(problem.m):
        x = problem._shifts[i] + rng.standard_normal((per, problem.dim))
        p_plus = _sigmoid(x @ problem._theta_gen)
        y = np.where(rng.random(per) < p_plus, 1.0, -1.0)
        xs.append(x)
        ys.append(y)
    # Interleave agents row by row so truncation keeps the mixture balanced.
    X = np.stack(xs, axis=1).reshape(per * problem.m, problem.dim)[:size]
    Y = np.stack(ys, axis=1).reshape(per * problem.m)[:size]
    return X, Y
