"""Per-user second-order polynomial correction of 2D gaze points.

Each output coordinate is a quadratic in the raw point over the basis
``[1, x, y, xy, x^2, y^2]``. Coordinates are gaze-plane centimeters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInput, RankDeficient

N_TERMS = 6


def poly_basis(points) -> np.ndarray:
    """Design matrix ``(n, 6)`` for an ``(n, 2)`` array (or a single point)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = p[:, 0], p[:, 1]
    return np.column_stack([np.ones_like(x), x, y, x * y, x * x, y * y])


@dataclass(frozen=True)
class PolyMap2:
    a: np.ndarray  # x-map coefficients a0..a5
    b: np.ndarray  # y-map coefficients b0..b5
    residual: float = 0.0  # RMS fit residual on the calibration pairs, cm

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(N_TERMS)
        b = np.asarray(self.b, dtype=float).reshape(N_TERMS)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise NonFiniteInput("calibration coefficients must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def identity(cls) -> "PolyMap2":
        return cls(np.eye(N_TERMS)[1], np.eye(N_TERMS)[2], 0.0)

    def __call__(self, raw) -> np.ndarray:
        return apply(self, raw)

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b.tolist(), "residual": self.residual}

    @classmethod
    def from_dict(cls, d: dict) -> "PolyMap2":
        return cls(np.array(d["a"]), np.array(d["b"]), float(d.get("residual", 0.0)))


def fit_poly_calibration(raw, true) -> PolyMap2:
    """Least-squares quadratic map taking ``raw`` points to ``true`` points.

    Both arguments are ``(n, 2)`` with ``n >= 6``. The design matrix is
    factored by QR; the two output coordinates are independent solves sharing
    that factorization.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    true = np.atleast_2d(np.asarray(true, dtype=float))
    if raw.shape != true.shape or raw.shape[1] != 2:
        raise ValueError("raw and true must both be (n, 2)")
    if not (np.all(np.isfinite(raw)) and np.all(np.isfinite(true))):
        raise NonFiniteInput("calibration points must be finite")
    if raw.shape[0] < N_TERMS:
        raise RankDeficient(f"need at least {N_TERMS} calibration pairs, got {raw.shape[0]}")
    A = poly_basis(raw)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise RankDeficient("calibration points do not determine a quadratic map")
    Q, R = np.linalg.qr(A)
    coef = np.linalg.solve(R, Q.T @ true)
    resid = true - A @ coef
    rms = float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
    return PolyMap2(coef[:, 0], coef[:, 1], rms)


def apply(pm: PolyMap2, raw) -> np.ndarray:
    """Map one point ``(2,)`` or many ``(n, 2)``; the output keeps the input's shape."""
    arr = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInput("raw gaze point must be finite")
    A = poly_basis(arr)
    out = np.column_stack([A @ pm.a, A @ pm.b])
    return out[0] if arr.ndim == 1 else out
