"""Epsilon-insensitive support vector regression trained with SMO.

The dual is solved in the usual doubled form: variables ``a = [alpha, alpha*]``
with labels ``y = [+1]*n + [-1]*n``, so the prediction weights are
``omega = alpha - alpha*`` and

    f(v) = sum_j omega_j * k(v_j, v) + b.

Working-set selection takes the maximal KKT violator for the first index and
the largest second-order gain for the second (Fan, Chen & Lin 2005).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConvergenceWarning, DimensionMismatch, NonFiniteInput, TooFewSamples

_TAU = 1e-12
_DENSE_LIMIT = 6000


@dataclass(frozen=True)
class SvrConfig:
    C: float = 1.0
    epsilon_tube: float = 0.1
    kernel: str = "rbf"
    sigma: Optional[float] = None  # None -> sigma^2 = d * Var(X) on standardized inputs
    max_iter: int = 100_000
    tol: float = 1e-3
    standardize: bool = True

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.epsilon_tube < 0:
            raise ValueError("epsilon_tube must be >= 0")
        if self.kernel not in ("rbf", "linear"):
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")


def rbf_kernel(A: np.ndarray, B: np.ndarray, sigma: float) -> np.ndarray:
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (sigma * sigma))


def kernel_matrix(A, B, kernel: str, sigma: float) -> np.ndarray:
    if kernel == "linear":
        return A @ B.T
    return rbf_kernel(A, B, sigma)


@dataclass(frozen=True)
class SvrModel:
    support_vectors: np.ndarray  # standardized coordinates
    weights: np.ndarray
    bias: float
    kernel: str
    sigma: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    C: float
    epsilon_tube: float
    n_iter: int = 0
    converged: bool = True
    dual_objective: float = float("nan")

    @property
    def n_features(self) -> int:
        return self.x_mean.shape[0]

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return (X - self.x_mean) / self.x_scale

    def decision(self, Z: np.ndarray) -> np.ndarray:
        """Prediction for already-standardized inputs."""
        if len(self.weights) == 0:
            return np.full(Z.shape[0], self.bias)
        K = kernel_matrix(Z, self.support_vectors, self.kernel, self.sigma)
        return K @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not np.all(np.isfinite(X)):
            raise NonFiniteInput("prediction inputs must be finite")
        return self.decision(self.transform(X))

    def kernel_value(self, u, v) -> float:
        u = np.asarray(u, dtype=float).reshape(1, -1)
        v = np.asarray(v, dtype=float).reshape(1, -1)
        return float(kernel_matrix(u, v, self.kernel, self.sigma)[0, 0])

    def to_dict(self) -> dict:
        return {
            "kind": "svr",
            "support_vectors": self.support_vectors.tolist(),
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "kernel": self.kernel,
            "sigma": self.sigma,
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "C": self.C,
            "epsilon_tube": self.epsilon_tube,
            "n_iter": self.n_iter,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvrModel":
        n_feat = len(d["x_mean"])
        return cls(
            support_vectors=np.array(d["support_vectors"], dtype=float).reshape(-1, n_feat),
            weights=np.array(d["weights"], dtype=float),
            bias=float(d["bias"]),
            kernel=d["kernel"],
            sigma=float(d["sigma"]),
            x_mean=np.array(d["x_mean"], dtype=float),
            x_scale=np.array(d["x_scale"], dtype=float),
            C=float(d["C"]),
            epsilon_tube=float(d["epsilon_tube"]),
            n_iter=int(d.get("n_iter", 0)),
            converged=bool(d.get("converged", True)),
        )


def _check_xy(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("training data must be finite")
    return X, y


def _standardize(X: np.ndarray, enabled: bool):
    if not enabled:
        return np.zeros(X.shape[1]), np.ones(X.shape[1])
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def default_sigma(Z: np.ndarray) -> float:
    var = float(Z.var())
    return float(np.sqrt(Z.shape[1] * var)) if var > 0 else 1.0


def smo_solve(K: np.ndarray, z: np.ndarray, C_i: np.ndarray, eps: float, tol: float, max_iter: int):
    """Solve the doubled epsilon-SVR dual for a precomputed kernel matrix.

    Index ``t < n`` is ``alpha_t`` (label +1), ``t >= n`` is ``alpha*_{t-n}``
    (label -1). The loop works on the length-n residual ``r = z - K omega``,
    for which ``-y_t * grad_t`` is ``r - eps`` on the first half and
    ``r + eps`` on the second.

    Returns ``(omega, bias, n_iter, converged, dual_objective)``.
    """
    n = z.shape[0]
    y = np.concatenate([np.ones(n), -np.ones(n)])
    C2 = np.concatenate([C_i, C_i])
    A = np.zeros(2 * n)  # alpha then alpha*
    z = z.astype(float)
    myg = np.concatenate([z - eps, z + eps])  # -y_t * G_t for every t
    myg2 = myg.reshape(2, n)  # view: both halves share the residual update
    up = y > 0  # I_up: y=+1 with A<C, or y=-1 with A>0 (only the first holds at A=0)
    low = y < 0  # I_low: y=+1 with A>0, or y=-1 with A<C
    diag = np.diag(K).copy()
    ninf = -np.inf
    pinf = np.inf

    def refresh(t):
        if y[t] > 0:
            up[t] = A[t] < C2[t]
            low[t] = A[t] > 0
        else:
            up[t] = A[t] > 0
            low[t] = A[t] < C2[t]

    converged = False
    it = 0
    while it < max_iter:
        v = np.where(up, myg, ninf)
        i = int(np.argmax(v))
        gmax = v[i]
        if gmax == ninf:
            converged = True
            break
        w = np.where(low, myg, pinf)
        if gmax - w.min() < tol:
            converged = True
            break
        ii = i % n
        Ki = K[ii]  # symmetric; rows are contiguous
        quad_t = diag[ii] + diag - 2.0 * Ki
        quad_t[quad_t <= 0] = _TAU
        bb = (gmax - w).reshape(2, n)
        g = np.where(bb > 0, -(bb * bb) / quad_t, pinf)
        j = int(np.argmin(g))
        jj = j % n

        yi, yj = y[i], y[j]
        ai_old, aj_old = A[i], A[j]
        Ci, Cj = C2[i], C2[j]
        Gi = -yi * myg[i]
        Gj = -yj * myg[j]
        Qij = yi * yj * K[ii, jj]
        if yi != yj:
            quad = diag[ii] + diag[jj] + 2.0 * Qij
            if quad <= 0:
                quad = _TAU
            delta = (-Gi - Gj) / quad
            diff = ai_old - aj_old
            ai = ai_old + delta
            aj = aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai = Ci
                    aj = Ci - diff
            else:
                if aj > Cj:
                    aj = Cj
                    ai = Cj + diff
        else:
            quad = diag[ii] + diag[jj] - 2.0 * Qij
            if quad <= 0:
                quad = _TAU
            delta = (Gi - Gj) / quad
            total = ai_old + aj_old
            ai = ai_old - delta
            aj = aj_old + delta
            if total > Ci:
                if ai > Ci:
                    ai = Ci
                    aj = total - Ci
            else:
                if aj < 0:
                    aj = 0.0
                    ai = total
            if total > Cj:
                if aj > Cj:
                    aj = Cj
                    ai = total - Cj
            else:
                if ai < 0:
                    ai = 0.0
                    aj = total
        A[i] = ai
        A[j] = aj
        refresh(i)
        refresh(j)
        # omega = alpha - alpha* changes by y_i*dai at ii and y_j*daj at jj
        myg2 -= yi * (ai - ai_old) * Ki + yj * (aj - aj_old) * K[jj]
        it += 1

    a1, a2 = A[:n], A[n:]
    r = myg[:n] + eps

    # bias from the KKT conditions: free variables satisfy -y_t G_t = b
    s1 = r - eps
    s2 = r + eps
    free1 = (a1 > 0) & (a1 < C_i)
    free2 = (a2 > 0) & (a2 < C_i)
    if free1.any() or free2.any():
        b = float(np.concatenate([s1[free1], s2[free2]]).mean())
    else:
        # b lies in [max over I_up, min over I_low]
        up = np.concatenate([s1[a1 < C_i], s2[a2 > 0]])
        low = np.concatenate([s1[a1 > 0], s2[a2 < C_i]])
        lo = up.max() if up.size else -np.inf
        hi = low.min() if low.size else np.inf
        if np.isfinite(lo) and np.isfinite(hi):
            b = float(0.5 * (lo + hi))
        else:
            b = float(lo if np.isfinite(lo) else hi)
    omega = a1 - a2
    Kw = z - r
    dual = float(0.5 * omega @ Kw + eps * (a1 + a2).sum() - z @ omega)
    return omega, b, it, converged, dual


def fit_svr(X, y, cfg: SvrConfig = SvrConfig(), sample_weight=None, *, _kernel=None, _prep=None) -> SvrModel:
    """Fit an epsilon-SVR; ``sample_weight`` scales each sample's box bound ``C``."""
    X, y = _check_xy(X, y)
    if X.shape[0] < 2:
        raise TooFewSamples("SVR needs at least two samples")
    if _prep is None:
        x_mean, x_scale = _standardize(X, cfg.standardize)
        Z = (X - x_mean) / x_scale
        sigma = cfg.sigma if cfg.sigma is not None else default_sigma(Z)
    else:
        x_mean, x_scale, Z, sigma = _prep
    n = X.shape[0]
    C_i = np.full(n, cfg.C) if sample_weight is None else cfg.C * np.asarray(sample_weight, dtype=float)
    if _kernel is not None:
        K = _kernel
    elif n <= _DENSE_LIMIT:
        K = kernel_matrix(Z, Z, cfg.kernel, sigma)
    else:
        raise TooFewSamples(f"dense SMO is limited to {_DENSE_LIMIT} samples; subsample first")
    omega, b, n_iter, converged, dual = smo_solve(K, y, C_i, cfg.epsilon_tube, cfg.tol, cfg.max_iter)
    if not converged:
        warnings.warn(f"SMO stopped at max_iter={cfg.max_iter} before reaching tol={cfg.tol}",
                      ConvergenceWarning, stacklevel=2)
    sv = np.abs(omega) > 0
    return SvrModel(
        support_vectors=Z[sv].copy(),
        weights=omega[sv].copy(),
        bias=float(b),
        kernel=cfg.kernel,
        sigma=float(sigma),
        x_mean=x_mean,
        x_scale=x_scale,
        C=cfg.C,
        epsilon_tube=cfg.epsilon_tube,
        n_iter=n_iter,
        converged=converged,
        dual_objective=dual,
    )


@dataclass(frozen=True)
class MultiOutputSvr:
    """Independent per-component SVRs sharing one input standardization."""

    components: tuple[SvrModel, ...]

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = self.components[0].transform(X)
        return np.column_stack([m.decision(Z) for m in self.components])

    def to_dict(self) -> dict:
        return {"kind": "svr_multi", "components": [m.to_dict() for m in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> "MultiOutputSvr":
        return cls(tuple(SvrModel.from_dict(c) for c in d["components"]))


def fit_svr_multi(X, Y, cfg: SvrConfig = SvrConfig(), sample_weight=None) -> MultiOutputSvr:
    """One SVR per column of ``Y``; the kernel matrix is computed once and shared."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    _check_xy(X, Y)
    x_mean, x_scale = _standardize(X, cfg.standardize)
    Z = (X - x_mean) / x_scale
    sigma = cfg.sigma if cfg.sigma is not None else default_sigma(Z)
    K = kernel_matrix(Z, Z, cfg.kernel, sigma)
    comps = tuple(fit_svr(X, Y[:, k], cfg, sample_weight, _kernel=K, _prep=(x_mean, x_scale, Z, sigma))
                  for k in range(Y.shape[1]))
    return MultiOutputSvr(comps)


def epsilon_loss(model: SvrModel, X, y) -> float:
    """Sum of epsilon-insensitive residuals on ``(X, y)``."""
    r = np.abs(np.asarray(y, dtype=float) - model.predict(X))
    return float(np.maximum(0.0, r - model.epsilon_tube).sum())


def primal_objective(model: SvrModel, X, y) -> float:
    """0.5 * ||w||^2 + C * sum(max(0, |y - f| - eps)) for the fitted model."""
    if len(model.weights):
        K = kernel_matrix(model.support_vectors, model.support_vectors, model.kernel, model.sigma)
        reg = 0.5 * float(model.weights @ K @ model.weights)
    else:
        reg = 0.0
    return reg + model.C * epsilon_loss(model, X, y)
