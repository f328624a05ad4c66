"""Full-batch Adam training of a :class:`KanModel` and dataset CSV helpers."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import KanModel


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; ``params`` holds the last finite parameters."""

    def __init__(self, step, params):
        super().__init__(f"training diverged at step {step}")
        self.step = step
        self.params = params


@dataclass
class TrainingTrace:
    steps: list = field(default_factory=list)
    train_rmse: list = field(default_factory=list)
    test_rmse: list = field(default_factory=list)

    def append(self, step, train, test):
        self.steps.append(int(step))
        self.train_rmse.append(float(train))
        self.test_rmse.append(float(test))

    def at(self, step):
        """Logged train RMSE at the last logged step not after ``step``."""
        idx = np.searchsorted(self.steps, step, side="right") - 1
        return self.train_rmse[max(idx, 0)]

    def best_so_far(self):
        return np.minimum.accumulate(self.train_rmse)

    def rows(self):
        return list(zip(self.steps, self.train_rmse, self.test_rmse))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "train_rmse", "test_rmse"])
            for s, a, b in self.rows():
                w.writerow([s, repr(a), repr(b)])


def split(n, test_fraction=0.2, seed=0):
    """Shuffled train/test index split; at least one training row."""
    idx = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n)) if n > 1 else 0
    n_test = min(n_test, n - 1)
    return idx[n_test:], idx[:n_test]


def train(model: KanModel, X, y, steps=1000, lr=1e-2, test_fraction=0.2, seed=0,
          log_every=10, fit_output_scale=True, betas=(0.9, 0.999), eps=1e-8, l2=0.0):
    """Fit ``model`` to ``(X, y)`` by minimizing mean-squared error.

    The output affine map is set from the training targets (mean and
    standard deviation) unless ``fit_output_scale`` is false.  ``l2`` adds
    ``l2 * mean(theta**2)`` to the loss to damp noise fitting.  RMSE values
    in the returned trace are in the units of ``y``.  The test rows never
    influence the parameters.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(y) == 0:
        raise ValueError("empty dataset")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    tr, te = split(len(y), test_fraction, seed)
    if fit_output_scale:
        std = float(np.std(y[tr]))
        model.out_shift = float(np.mean(y[tr]))
        model.out_scale = std if std > 0 else 1.0
    z_tr = model.normalize(X[tr])
    t_tr = (y[tr] - model.out_shift) / model.out_scale
    z_te = model.normalize(X[te]) if len(te) else None
    t_te = (y[te] - model.out_shift) / model.out_scale if len(te) else None

    def rmse(z, t):
        if z is None:
            return float("nan")
        out, _ = model.network(z)
        return model.out_scale * float(np.sqrt(np.mean((out - t) ** 2)))

    theta = model.get_params()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = betas
    trace = TrainingTrace()
    initial = rmse(z_tr, t_tr)
    trace.append(0, initial, rmse(z_te, t_te))
    best = (initial, theta.copy())
    for step in range(1, steps + 1):
        loss, g = model.loss_and_param_grad(z_tr, t_tr)
        if l2:
            loss += l2 * float(np.mean(theta ** 2))
            g = g + (2.0 * l2 / theta.size) * theta
        if not np.isfinite(loss) or not np.all(np.isfinite(g)):
            model.set_params(theta)
            raise TrainingDiverged(step, theta.copy())
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** step)
        vhat = v / (1 - b2 ** step)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        model.set_params(theta)
        if step % log_every == 0 or step == steps:
            cur = rmse(z_tr, t_tr)
            if not np.isfinite(cur):
                raise TrainingDiverged(step, best[1].copy())
            trace.append(step, cur, rmse(z_te, t_te))
            if cur < best[0]:
                best = (cur, theta.copy())
    if trace.train_rmse[-1] > initial:
        model.set_params(best[1])
        trace.append(steps, rmse(z_tr, t_tr), rmse(z_te, t_te))
    return trace


def fit_model(X, y, lo, hi, hidden=(4, 4, 4), steps=1000, seed=0, **kwargs):
    """Create and train a model in one call; returns ``(model, trace)``."""
    model = KanModel.create(lo, hi, hidden=hidden, seed=seed)
    trace = train(model, X, y, steps=steps, seed=seed, **kwargs)
    return model, trace


def write_dataset(path, X, y, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*columns, "performance"])
        for row, val in zip(np.atleast_2d(X), np.ravel(y)):
            w.writerow([repr(float(v)) for v in row] + [repr(float(val))])


def read_dataset(path):
    """Read a dataset CSV; returns ``(X, y, input_columns)``."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or "performance" not in rows[0]:
        raise ValueError(f"{path}: missing 'performance' column")
    header = rows[0]
    k = header.index("performance")
    cols = [c for j, c in enumerate(header) if j != k]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    y = data[:, k]
    X = np.delete(data, k, axis=1)
    return X, y, cols
