"""Parameter fitting: train/validation split, MSE, quasi-Newton optimization.

Fitting one expression counts as exactly one evaluation no matter how many
optimizer iterations it takes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .expr import Dataset, Expr, compile_expr, n_params

# losses above this are treated as divergent inside the optimizer; the true
# (possibly infinite) loss is recomputed at the chosen optimum
_PENALTY = 1e300


@dataclass
class FitConfig:
    loss: str = "mse"
    opt_iterations: int = 100
    retries: int = 2
    train_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.loss != "mse":
            raise ValueError(f"unsupported loss: {self.loss!r}")
        if self.opt_iterations < 1:
            raise ValueError("opt_iterations must be >= 1")
        if self.retries < 1:
            raise ValueError("retries must be >= 1")
        if not 0.0 < self.train_ratio <= 1.0:
            raise ValueError("train_ratio must be in (0, 1]")


@dataclass
class FitResult:
    params: np.ndarray
    train_loss: float
    val_loss: float
    evaluations_used: int = 1


class EvaluationCounter:
    """Global evaluation budget accounting (one fit = one evaluation)."""

    def __init__(self):
        self.count = 0

    def increment(self, by: int = 1):
        self.count += by


def split(data: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle-split; ``ratio == 1`` aliases validation to training."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must be in (0, 1]")
    if ratio == 1.0:
        return data, data
    n_train = math.ceil(ratio * data.n)
    if n_train == 0 or n_train == data.n:
        raise ValueError(f"split of {data.n} rows at ratio {ratio} leaves an empty side")
    order = np.random.default_rng(seed).permutation(data.n)
    tr, va = order[:n_train], order[n_train:]
    return (
        Dataset(data.X[tr], data.y[tr], data.columns),
        Dataset(data.X[va], data.y[va], data.columns),
    )


def mse(pred, target) -> float:
    """Mean squared error; any non-finite prediction gives +inf."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    if pred.size < 1:
        raise ValueError("empty prediction")
    if not np.isfinite(pred).all():
        return math.inf
    with np.errstate(all="ignore"):
        out = float(np.mean((pred - target) ** 2))
    return out if math.isfinite(out) else math.inf


def _grad_central(f, x, fx_unused=None):
    """Central finite-difference gradient."""
    h = 6e-6  # ~cbrt(eps)
    g = np.empty_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2 * step)
    return g


def fit_params(
    e: Expr,
    data: Dataset,
    cfg: FitConfig,
    rng: np.random.Generator | None = None,
    counter: EvaluationCounter | None = None,
) -> FitResult:
    """Best-of-retries quasi-Newton minimization of the training MSE.

    ``e`` must carry indexed parameters. Each retry starts from a standard
    normal draw; parameter-free expressions are just evaluated. A landscape
    that is non-finite everywhere yields +inf losses.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if counter is not None:
        counter.increment()
    train, val = split(data, cfg.train_ratio, cfg.seed)
    func = compile_expr(e)
    k = n_params(e)

    if k == 0:
        theta = np.empty(0)
        return FitResult(
            params=theta,
            train_loss=mse(func(theta, train.X), train.y),
            val_loss=mse(func(theta, val.X), val.y),
        )

    ytr = train.y

    def objective(theta):
        pred = func(theta, train.X)
        with np.errstate(all="ignore"):
            loss = np.mean((pred - ytr) ** 2)
        if not np.isfinite(loss):
            return _PENALTY
        return float(loss)

    best_theta = None
    best_obj = math.inf
    for _ in range(cfg.retries):
        theta0 = rng.standard_normal(k)
        obj0 = objective(theta0)
        if obj0 < best_obj:
            best_obj, best_theta = obj0, theta0
        if obj0 >= _PENALTY:
            # non-finite start: quasi-Newton has no slope to follow
            continue
        try:
            res = minimize(
                objective,
                theta0,
                method="BFGS",
                jac=lambda x: _grad_central(objective, x),
                options={"maxiter": cfg.opt_iterations, "gtol": 1e-10},
            )
        except (ValueError, OverflowError):
            continue
        obj = objective(res.x)
        if np.isfinite(res.x).all() and obj < best_obj:
            best_obj, best_theta = obj, res.x

    theta = np.asarray(best_theta, dtype=np.float64)
    return FitResult(
        params=theta,
        train_loss=mse(func(theta, train.X), train.y),
        val_loss=mse(func(theta, val.X), val.y),
    )
