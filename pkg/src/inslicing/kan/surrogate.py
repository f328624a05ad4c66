"""Per-slice KAN models bundled into one performance evaluator."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .network import KanModel


class SurrogateSet:
    """One model per slice; slice ``i``'s model sees only row ``x[i]``.

    Exposes the evaluator interface shared with the simulator's ground
    truth: ``__call__(x) -> (I,)``, ``batch(xs) -> (P, I)`` and
    ``jacobian(x) -> (I, R)``.
    """

    def __init__(self, models):
        self.models = list(models)

    def __len__(self):
        return len(self.models)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([m(x[i]) for i, m in enumerate(self.models)])

    def batch(self, xs):
        xs = np.asarray(xs, dtype=float)
        return np.stack([m(xs[:, i]) for i, m in enumerate(self.models)], axis=1)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([m.grad(x[i]) for i, m in enumerate(self.models)])

    def validation_rmse(self):
        """Held-out RMSE per slice recorded at training time (NaN if unknown).

        Where a near-threshold error was also recorded the larger of the two
        is returned.
        """
        return np.array([max(float(m.meta.get("test_rmse", np.nan)), float(m.meta.get("band_rmse", 0.0)))
                         for m in self.models])

    def value_and_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        pairs = [m.value_and_grad(x[i]) for i, m in enumerate(self.models)]
        return np.array([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for i, m in enumerate(self.models):
            m.save(directory / f"slice_{i}.json")

    @classmethod
    def load(cls, directory, num_slices=None):
        directory = Path(directory)
        if num_slices is None:
            num_slices = len(list(directory.glob("slice_*.json")))
        if num_slices == 0:
            raise FileNotFoundError(f"no slice_*.json models in {directory}")
        return cls([KanModel.load(directory / f"slice_{i}.json") for i in range(num_slices)])
