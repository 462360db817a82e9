"""Random-forest surrogate with a per-tree spread uncertainty estimate."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestRegressor


class SurrogateError(RuntimeError):
    pass


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    # None -> ceil(sqrt(n_inputs))
    max_features: int | None = None


@dataclass(frozen=True)
class Prediction:
    """Predictive mean and variance; arrays when several inputs are predicted at once."""

    mean: np.ndarray
    variance: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def __getitem__(self, k) -> "Prediction":
        return Prediction(self.mean[k], self.variance[k])


@dataclass(frozen=True)
class ForestModel:
    regressor: RandomForestRegressor
    n_inputs: int
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_trees(self) -> int:
        return len(self.regressor.estimators_)

    def tree_predictions(self, X) -> np.ndarray:
        X = self._check(X)
        return np.stack([tree.predict(X) for tree in self.regressor.estimators_])

    def predict(self, X) -> Prediction:
        """Mean and variance across trees for each row of ``X``."""
        per_tree = self.tree_predictions(X)
        return Prediction(per_tree.mean(axis=0), per_tree.var(axis=0))

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} inputs, got {X.shape[1]}")
        return X


def fit(X, y, rng: np.random.Generator, params: ForestParams = ForestParams()) -> ForestModel:
    """Fit a forest on bootstrap resamples of ``(X, y)``; seeded from ``rng``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] < 2:
        raise SurrogateError("need at least two training rows")
    if X.shape[0] != y.shape[0]:
        raise SurrogateError("design matrix and targets disagree in length")
    if not np.all(np.isfinite(y)):
        raise SurrogateError("non-finite targets")
    d = X.shape[1]
    max_features = params.max_features or max(1, math.ceil(math.sqrt(d)))
    reg = RandomForestRegressor(
        n_estimators=params.n_trees,
        max_depth=params.max_depth,
        min_samples_leaf=params.min_samples_leaf,
        max_features=min(max_features, d),
        bootstrap=True,
        random_state=int(rng.integers(2**31 - 1)),
    )
    reg.fit(X, y)
    return ForestModel(reg, d, X.min(axis=0), X.max(axis=0))


def predict(model: ForestModel, x) -> Prediction:
    return model.predict(x)
