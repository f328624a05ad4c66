"""Train a KAN on a function we know, then read the function back out of it.

    python demos/symbolic_recovery.py
"""
import numpy as np

from inslicing.kan import KanModel, extract_symbolic, parse_formula
from inslicing.kan.training import train


def target(X):
    return 2.5 * X[:, 0] - 1.2 * X[:, 1] + 1.5 * np.sin(6 * X[:, 1] + 0.8) + 1


rng = np.random.default_rng(0)
X = rng.uniform(0, 1, (500, 2))
y = target(X)

# three hidden layers of four nodes, every edge a cubic B-spline on 5 intervals
model = KanModel.create(np.zeros(2), np.ones(2), hidden=(4, 4, 4), seed=0)
tt = train(model, X, y, steps=1000, seed=0)
print(f"after {tt.steps[-1]} steps: train RMSE {tt.train_rmse[-1]:.4f}, held-out RMSE {tt.test_rmse[-1]:.4f}")
print("RMSE every 100 steps:", np.round(tt.train_rmse[::10], 4))

expr = extract_symbolic(model)
print("generator : 2.5*x1 - 1.2*x2 + 1.5*sin(6*x2 + 0.8) + 1")
print("recovered :", expr.formula())
print(f"formula vs network RMSE {expr.fit_rmse:.4g} over an output range of {expr.output_range:.4g}")

# the printed text is itself a valid model
Xt = rng.uniform(0, 1, (5, 2))
print(np.c_[target(Xt), model(Xt), parse_formula(expr.formula())(Xt)].round(4))
