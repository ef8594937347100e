"""Linear baselines: ordinary least squares, Bayesian ridge and elastic net.

All three fit an unpenalized intercept by centering, and none of them rescale
the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, NonFiniteInput, SingularDesign


def check_xy(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("training data must be finite")
    return X, y


@dataclass(frozen=True)
class LinearModel:
    """``y = X @ coef + intercept``; shared by all three linear fits."""

    coef: np.ndarray
    intercept: float
    kind: str = "lr"
    n_iter: int = 0

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.coef.shape[0]:
            raise DimensionMismatch(f"expected {self.coef.shape[0]} features, got {X.shape[1]}")
        return X @ self.coef + self.intercept

    def to_dict(self) -> dict:
        return {"kind": self.kind, "coef": self.coef.tolist(), "intercept": self.intercept,
                "n_iter": self.n_iter}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(np.array(d["coef"], dtype=float), float(d["intercept"]), d["kind"], int(d.get("n_iter", 0)))


def _center(X, y):
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    return X - x_mean, y - y_mean, x_mean, y_mean


@dataclass(frozen=True)
class LinConfig:
    ridge_fallback: float = 1e-10
    allow_fallback: bool = True


def fit_linear(X, y, cfg: LinConfig = LinConfig()) -> LinearModel:
    """OLS through the normal equations.

    When ``X^T X`` is singular (or ``n < d``) a ``ridge_fallback`` multiple of
    the identity is added, unless ``allow_fallback`` is off, in which case
    :class:`SingularDesign` is raised.
    """
    X, y = check_xy(X, y)
    Xc, yc, x_mean, y_mean = _center(X, y)
    A = Xc.T @ Xc
    rhs = Xc.T @ yc
    d = A.shape[0]
    singular = X.shape[0] <= d or np.linalg.matrix_rank(A) < d
    if singular:
        if not cfg.allow_fallback:
            raise SingularDesign("design matrix is rank deficient")
        A = A + cfg.ridge_fallback * np.eye(d)
    coef = np.linalg.solve(A, rhs)
    return LinearModel(coef, float(y_mean - x_mean @ coef), "lr")


@dataclass(frozen=True)
class BrConfig:
    max_iter: int = 300
    tol: float = 1e-3
    alpha_1: float = 1e-6
    alpha_2: float = 1e-6
    lambda_1: float = 1e-6
    lambda_2: float = 1e-6


@dataclass(frozen=True)
class BayesianRidgeModel(LinearModel):
    noise_precision: float = 1.0
    weight_precision: float = 1.0

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update(noise_precision=self.noise_precision, weight_precision=self.weight_precision)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BayesianRidgeModel":
        return cls(np.array(d["coef"], dtype=float), float(d["intercept"]), "br", int(d.get("n_iter", 0)),
                   float(d["noise_precision"]), float(d["weight_precision"]))


def fit_bayesian_ridge(X, y, cfg: BrConfig = BrConfig()) -> BayesianRidgeModel:
    """Ridge regression whose two precisions are re-estimated by evidence maximization.

    Each pass computes the posterior mean under the current noise precision
    ``alpha`` and weight precision ``lambda``, then updates both from the
    effective number of well-determined parameters ``gamma`` (MacKay's
    fixed-point rules with Gamma hyperpriors).
    """
    X, y = check_xy(X, y)
    Xc, yc, x_mean, y_mean = _center(X, y)
    n = X.shape[0]
    U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    eig = S ** 2
    Uty = U.T @ yc
    var_y = float(np.var(yc))
    alpha = 1.0 / (var_y + np.finfo(float).eps)
    lam = 1.0
    coef = np.zeros(X.shape[1])
    it = 0
    for it in range(1, cfg.max_iter + 1):
        coef_new = Vt.T @ (S / (eig + lam / alpha) * Uty)
        sse = float(np.sum((yc - Xc @ coef_new) ** 2))
        gamma = float(np.sum(alpha * eig / (lam + alpha * eig)))
        lam = (gamma + 2 * cfg.lambda_1) / (float(coef_new @ coef_new) + 2 * cfg.lambda_2)
        alpha = (n - gamma + 2 * cfg.alpha_1) / (sse + 2 * cfg.alpha_2)
        done = it > 1 and np.sum(np.abs(coef_new - coef)) < cfg.tol
        coef = coef_new
        if done:
            break
    coef = Vt.T @ (S / (eig + lam / alpha) * Uty)
    return BayesianRidgeModel(coef, float(y_mean - x_mean @ coef), "br", it, float(alpha), float(lam))


@dataclass(frozen=True)
class EnetConfig:
    alpha: float = 1.0
    l1_ratio: float = 0.5
    max_iter: int = 1000
    tol: float = 1e-4


def enet_objective(X, y, coef, intercept, alpha, l1_ratio) -> float:
    """(1/2n)||y - Xw - b||^2 + alpha*l1_ratio*|w|_1 + 0.5*alpha*(1-l1_ratio)*||w||^2"""
    X, y = check_xy(X, y)
    r = y - X @ coef - intercept
    return float(0.5 * r @ r / len(y) + alpha * l1_ratio * np.abs(coef).sum()
                 + 0.5 * alpha * (1 - l1_ratio) * coef @ coef)


def _soft(v: float, t: float) -> float:
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


def fit_elastic_net(X, y, cfg: EnetConfig = EnetConfig(), return_trace: bool = False):
    """Cyclic coordinate descent on the elastic-net objective.

    Stops when the largest coordinate update in a sweep is below
    ``tol * max(|w|)``. With ``return_trace`` the objective after every sweep
    is returned as well.
    """
    X, y = check_xy(X, y)
    Xc, yc, x_mean, y_mean = _center(X, y)
    n, d = Xc.shape
    l1 = cfg.alpha * cfg.l1_ratio * n
    l2 = cfg.alpha * (1.0 - cfg.l1_ratio) * n
    col_sq = (Xc * Xc).sum(axis=0)
    coef = np.zeros(d)
    r = yc.copy()
    trace = []
    it = 0
    for it in range(1, cfg.max_iter + 1):
        max_step = 0.0
        for j in range(d):
            if col_sq[j] == 0:
                continue
            old = coef[j]
            rho = Xc[:, j] @ r + col_sq[j] * old
            new = _soft(rho, l1) / (col_sq[j] + l2)
            if new != old:
                r -= Xc[:, j] * (new - old)
                coef[j] = new
                max_step = max(max_step, abs(new - old))
        if return_trace:
            trace.append(0.5 * r @ r / n + cfg.alpha * cfg.l1_ratio * np.abs(coef).sum()
                         + 0.5 * cfg.alpha * (1 - cfg.l1_ratio) * coef @ coef)
        wmax = np.abs(coef).max() if d else 0.0
        if wmax == 0.0 or max_step <= cfg.tol * wmax:
            break
    model = LinearModel(coef.copy(), float(y_mean - x_mean @ coef), "enet", it)
    if return_trace:
        return model, trace
    return model
