"""Kolmogorov-Arnold networks built from B-spline edge activations."""
from .bspline import basis, uniform_knots
from .network import KanLayer, KanModel, SplineActivation, identity_model, spline_eval
from .surrogate import SurrogateSet
from .symbolic import SymbolicExpression, Term, extract_symbolic, fit_component, parse_formula
from .training import TrainingDiverged, TrainingTrace, fit_model, read_dataset, train, write_dataset

__all__ = [
    "basis", "uniform_knots", "KanLayer", "KanModel", "SplineActivation", "identity_model",
    "spline_eval", "SurrogateSet", "SymbolicExpression", "Term", "extract_symbolic",
    "fit_component", "parse_formula", "TrainingDiverged", "TrainingTrace", "fit_model",
    "read_dataset", "train", "write_dataset",
]
