"""Feature selectors and regressors used by pipeline nodes.

Linear, SGD and linear SVR regressors are implemented here directly. Trees use
scikit-learn's CART builder; bagging and boosting are assembled on top of it
so that seeding is fully controlled by the caller's generator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, ClassVar

import numpy as np
from scipy import stats
import sklearn
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import ElasticNet, Lasso
from sklearn.tree import DecisionTreeRegressor

SELECTOR_GRIDS: dict[str, dict[str, tuple]] = {
    "VarianceThreshold": {"threshold": (0.0, 0.01, 0.05, 0.1)},
    "SelectPercentile": {"percentile": (10, 25, 50, 75, 100)},
    "FamilyWiseError": {"alpha": (0.01, 0.05)},
    "L1Selection": {"penalty": (0.001, 0.01, 0.1)},
    "TreeImportance": {"n_trees": (50, 100)},
    "TreeSequential": {"k": (10, 25, 50)},
    "BioFrequency": {"min_maf": (0.01, 0.05), "min_genotype_freq": (0.01, 0.05)},
}

_DEPTHS = (2, 3, 5, 8)
_N_TREES = (50, 100, 200)

REGRESSOR_GRIDS: dict[str, dict[str, tuple]] = {
    "Linear": {},
    "ElasticNet": {"penalty": (0.0001, 0.001, 0.01, 0.1), "l1_ratio": (0.1, 0.5, 0.9)},
    "SgdLinear": {"step": (0.001, 0.01), "epochs": (100, 500)},
    "SupportVector": {"epsilon": (0.01, 0.1), "C": (0.1, 1.0, 10.0)},
    "DecisionTree": {"max_depth": _DEPTHS},
    "RandomForest": {"max_depth": _DEPTHS, "n_trees": _N_TREES},
    "GradientBoosting": {"max_depth": _DEPTHS, "n_trees": _N_TREES,
                         "learning_rate": (0.05, 0.1, 0.3)},
}

SELECTOR_KINDS = tuple(SELECTOR_GRIDS)
REGRESSOR_KINDS = tuple(REGRESSOR_GRIDS)

# fixed settings for the tree-based selectors
_IMPORTANCE_DEPTH = 5
_SEQUENTIAL_DEPTH = 3
_SGD_BATCH = 64
_SVR_ITERS = 300


@dataclass(frozen=True)
class NodeSpec:
    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    grids: ClassVar[dict[str, dict[str, tuple]]] = {}

    def __post_init__(self):
        if self.kind not in self.grids:
            raise ValueError(f"unknown {type(self).__name__} kind {self.kind!r}")

    def __getitem__(self, name: str):
        return self.params[name]

    def on_grid(self) -> bool:
        grid = self.grids[self.kind]
        return set(grid) == set(self.params) and all(self.params[k] in v for k, v in grid.items())

    def shifted(self, rng: np.random.Generator):
        """Move one hyperparameter to an adjacent grid value, wrapping at the ends."""
        grid = self.grids[self.kind]
        if not grid:
            return self
        name = list(grid)[rng.integers(len(grid))]
        values = grid[name]
        i = values.index(self.params[name])
        step = 1 if rng.random() < 0.5 else -1
        params = dict(self.params)
        params[name] = values[(i + step) % len(values)]
        return type(self)(self.kind, params)

    def describe(self) -> str:
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.kind}({inner})"


@dataclass(frozen=True)
class SelectorSpec(NodeSpec):
    grids: ClassVar[dict[str, dict[str, tuple]]] = SELECTOR_GRIDS


@dataclass(frozen=True)
class RegressorSpec(NodeSpec):
    grids: ClassVar[dict[str, dict[str, tuple]]] = REGRESSOR_GRIDS


def _random_params(grid: dict[str, tuple], rng) -> dict[str, Any]:
    return {k: v[rng.integers(len(v))] for k, v in grid.items()}


def random_selector(rng: np.random.Generator) -> SelectorSpec:
    kind = SELECTOR_KINDS[rng.integers(len(SELECTOR_KINDS))]
    return SelectorSpec(kind, _random_params(SELECTOR_GRIDS[kind], rng))


def random_regressor(rng: np.random.Generator) -> RegressorSpec:
    kind = REGRESSOR_KINDS[rng.integers(len(REGRESSOR_KINDS))]
    return RegressorSpec(kind, _random_params(REGRESSOR_GRIDS[kind], rng))


# --- statistics ----------------------------------------------------------------

def r2(y: np.ndarray, pred: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot <= 0:
        raise ValueError("r^2 undefined for a constant target")
    return 1.0 - float(((y - pred) ** 2).sum()) / ss_tot


def f_statistics(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Univariate regression F statistics and p-values, one per column."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sxx = (xc ** 2).sum(axis=0)
    syy = float(yc @ yc)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = (xc.T @ yc) / np.sqrt(sxx * syy)
        corr2 = np.where(sxx > 0, corr ** 2, 0.0)
        F = np.where(corr2 < 1, corr2 / (1 - corr2) * (n - 2), np.inf)
    return F, stats.f.sf(F, 1, n - 2)


def bonferroni_keep(pvalues: np.ndarray, alpha: float) -> np.ndarray:
    p = np.asarray(pvalues, dtype=float)
    return np.flatnonzero(p * p.size < alpha)


# --- regressors ----------------------------------------------------------------

class LinearModel:
    def __init__(self, coef: np.ndarray, intercept: float):
        self.coef = np.asarray(coef, dtype=float)
        self.intercept = float(intercept)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef + self.intercept


def _ols(X: np.ndarray, y: np.ndarray) -> LinearModel:
    xm, ym = X.mean(axis=0), y.mean()
    xc = X - xm
    A = xc.T @ xc
    b = xc.T @ (y - ym)
    if X.shape[1] and np.linalg.matrix_rank(A) < X.shape[1]:
        A = A + 1e-8 * np.eye(X.shape[1])
    coef = np.linalg.solve(A, b) if X.shape[1] else np.zeros(0)
    return LinearModel(coef, ym - xm @ coef)


def _sgd(X, y, step: float, epochs: int, rng) -> LinearModel:
    n, k = X.shape
    w = np.zeros(k)
    b = float(y.mean())
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, _SGD_BATCH):
            idx = order[start:start + _SGD_BATCH]
            Xb = X[idx]
            err = Xb @ w + b - y[idx]
            w -= step * (Xb.T @ err) / idx.size
            b -= step * err.mean()
    return LinearModel(w, b)


def _linear_svr(X, y, epsilon: float, C: float) -> LinearModel:
    """Epsilon-insensitive linear SVR by averaged subgradient descent."""
    n, k = X.shape
    lam = 1.0 / (C * n)
    w = np.zeros(k)
    b = float(np.median(y))
    w_avg, b_avg = np.zeros(k), 0.0
    for t in range(1, _SVR_ITERS + 1):
        r = y - (X @ w + b)
        active = np.where(np.abs(r) > epsilon, np.sign(r), 0.0)
        gw = lam * w - X.T @ active / n
        gb = -active.mean()
        eta = 1.0 / math.sqrt(t)
        w -= eta * gw
        b -= eta * gb
        w_avg += (w - w_avg) / t
        b_avg += (b - b_avg) / t
    return LinearModel(w_avg, b_avg)


class _Tree:
    """A fitted CART tree; inputs go straight to the builder without revalidation."""

    __slots__ = ("est",)

    def __init__(self, est: DecisionTreeRegressor):
        self.est = est

    def predict(self, X) -> np.ndarray:
        return self.est.predict(_as_tree_input(X), check_input=False)

    @property
    def feature_importances_(self) -> np.ndarray:
        return self.est.feature_importances_


def _as_tree_input(X) -> np.ndarray:
    # the CART builder works in float32 regardless; converting up front skips its checks
    return np.ascontiguousarray(X, dtype=np.float32)


# reseeding one RandomState is ~40x cheaper than building one per tree and
# yields the same stream; the builder draws from it only while fitting
_TREE_SEEDER = np.random.RandomState(0)


def _tree(X, y, max_depth, seed, max_features=None) -> _Tree:
    X = _as_tree_input(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    _TREE_SEEDER.seed(int(seed))
    est = DecisionTreeRegressor(max_depth=max_depth, max_features=max_features,
                                random_state=_TREE_SEEDER)
    with sklearn.config_context(skip_parameter_validation=True):
        est.fit(X, y, check_input=False)
    return _Tree(est)


class Forest:
    """Bagged CART trees with per-split feature subsampling."""

    def __init__(self, n_trees: int, max_depth: int | None, rng: np.random.Generator,
                 max_features: float | None = 1 / 3, bootstrap: bool = True):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.rng = rng
        self.trees: list[_Tree] = []

    def fit(self, X, y) -> Forest:
        seeds = self.rng.integers(2 ** 31, size=self.n_trees)
        X = _as_tree_input(X)
        n = X.shape[0]
        for seed in seeds:
            if self.bootstrap:
                idx = self.rng.integers(n, size=n)
                self.trees.append(_tree(X[idx], y[idx], self.max_depth, seed, self.max_features))
            else:
                self.trees.append(_tree(X, y, self.max_depth, seed, self.max_features))
        return self

    def predict(self, X) -> np.ndarray:
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    @property
    def feature_importances(self) -> np.ndarray:
        return np.mean([t.feature_importances_ for t in self.trees], axis=0)


class Boosting:
    """Stagewise least-squares boosting of CART trees from the mean."""

    def __init__(self, n_trees: int, max_depth: int, learning_rate: float,
                 rng: np.random.Generator):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.rng = rng
        self.init = 0.0
        self.trees: list[_Tree] = []

    def fit(self, X, y) -> Boosting:
        seeds = self.rng.integers(2 ** 31, size=self.n_trees)
        X = _as_tree_input(X)
        self.init = float(y.mean())
        F = np.full(y.shape, self.init)
        for seed in seeds:
            t = _tree(X, y - F, self.max_depth, seed)
            F += self.learning_rate * t.predict(X)
            self.trees.append(t)
        return self

    def predict(self, X) -> np.ndarray:
        out = np.full(X.shape[0], self.init)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out


class MeanModel:
    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, X) -> np.ndarray:
        return np.full(np.asarray(X).shape[0], self.value)


@dataclass
class FittedModel:
    spec: RegressorSpec
    features: tuple[int, ...]
    estimator: Any

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.estimator.predict(X), dtype=float)


def fit(spec: RegressorSpec, X: np.ndarray, y: np.ndarray, rng: np.random.Generator,
        features: tuple[int, ...] = ()) -> FittedModel:
    """Fit a regressor node. ``features`` records the SNP ids behind X's columns."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = spec.params
    kind = spec.kind
    if kind == "Linear":
        est = _ols(X, y)
    elif kind == "ElasticNet":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            en = ElasticNet(alpha=p["penalty"], l1_ratio=p["l1_ratio"], max_iter=2000).fit(X, y)
        est = LinearModel(en.coef_, en.intercept_)
    elif kind == "SgdLinear":
        est = _sgd(X, y, p["step"], p["epochs"], rng)
    elif kind == "SupportVector":
        est = _linear_svr(X, y, p["epsilon"], p["C"])
    elif kind == "DecisionTree":
        seed = rng.integers(2 ** 31, size=1)[0]
        est = MeanModel(y.mean()) if p["max_depth"] == 0 else _tree(X, y, p["max_depth"], seed)
    elif kind == "RandomForest":
        est = Forest(p["n_trees"], p["max_depth"], rng,
                     max_features=p.get("max_features", 1 / 3),
                     bootstrap=p.get("bootstrap", True)).fit(X, y)
    elif kind == "GradientBoosting":
        est = Boosting(p["n_trees"], p["max_depth"], p["learning_rate"], rng).fit(X, y)
    else:
        raise ValueError(f"unknown regressor {kind!r}")
    return FittedModel(spec, tuple(features), est)


def r2_score(model: FittedModel, X: np.ndarray, y: np.ndarray) -> float:
    return r2(y, model.predict(X))


# --- selectors -----------------------------------------------------------------

def _genotype_frequencies(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = G.shape[0]
    freq = np.stack([(G == k).sum(axis=0) for k in (0, 1, 2)]) / n
    p = freq[1] / 2 + freq[2]
    return np.minimum(p, 1 - p), freq.min(axis=0)


def _sequential(X, y, k: int, rng) -> np.ndarray:
    """Greedy forward selection with a shallow tree scored on a held-out fold."""
    n, m = X.shape
    order = rng.permutation(n)
    cut = max(1, int(0.75 * n))
    fit_idx, hold_idx = order[:cut], order[cut:]
    if hold_idx.size < 2 or np.ptp(y[hold_idx]) == 0:
        return np.arange(min(k, m))
    seed = rng.integers(2 ** 31)
    X_fit, X_hold = _as_tree_input(X[fit_idx]), _as_tree_input(X[hold_idx])
    y_fit, y_hold = y[fit_idx], y[hold_idx]
    chosen: list[int] = []
    best = -np.inf
    while len(chosen) < min(k, m):
        cand_best, cand = -np.inf, None
        for j in range(m):
            if j in chosen:
                continue
            cols = chosen + [j]
            t = _tree(X_fit[:, cols], y_fit, _SEQUENTIAL_DEPTH, seed)
            score = r2(y_hold, t.predict(X_hold[:, cols]))
            if score > cand_best:
                cand_best, cand = score, j
        if cand is None or cand_best <= best:
            break
        chosen.append(cand)
        best = cand_best
    return np.array(sorted(chosen), dtype=int)


def select_features(spec: SelectorSpec, X: np.ndarray, y: np.ndarray,
                    rng: np.random.Generator, G: np.ndarray | None = None) -> np.ndarray:
    """Column indices of X retained by a selector node (possibly empty).

    Args:
        X: encoded training matrix.
        y: training phenotype.
        G: original additive {0, 1, 2} codes of the same columns; required by
            BioFrequency.
    """
    X = np.asarray(X, dtype=float)
    m = X.shape[1]
    p = spec.params
    kind = spec.kind
    if m == 0:
        return np.zeros(0, dtype=int)
    if kind == "VarianceThreshold":
        keep = np.flatnonzero(~(X.var(axis=0) < p["threshold"]))
    elif kind == "SelectPercentile":
        F, _ = f_statistics(X, y)
        F = np.nan_to_num(F, nan=-np.inf)
        n_keep = max(1, math.ceil(p["percentile"] * m / 100))
        keep = np.sort(np.argsort(-F, kind="stable")[:n_keep])
    elif kind == "FamilyWiseError":
        _, pv = f_statistics(X, y)
        keep = bonferroni_keep(np.nan_to_num(pv, nan=1.0), p["alpha"])
    elif kind == "L1Selection":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            coef = Lasso(alpha=p["penalty"], max_iter=2000).fit(X, y).coef_
        keep = np.flatnonzero(coef != 0)
    elif kind == "TreeImportance":
        forest = Forest(p["n_trees"], _IMPORTANCE_DEPTH, rng).fit(X, y)
        imp = forest.feature_importances
        keep = np.flatnonzero(imp > imp.mean())
    elif kind == "TreeSequential":
        keep = _sequential(X, y, p["k"], rng)
    elif kind == "BioFrequency":
        if G is None:
            raise ValueError("BioFrequency needs the additive genotype codes")
        mafs, min_class = _genotype_frequencies(np.asarray(G))
        keep = np.flatnonzero((mafs >= p["min_maf"]) & (min_class >= p["min_genotype_freq"]))
    else:
        raise ValueError(f"unknown selector {kind!r}")
    return np.asarray(keep, dtype=int)
