"""Parameterized self-organizing map from binocular 2D gaze to plane coordinates.

Nine nodes sit on a 3x3 lattice of plane coordinates ``s = (X, Y)``. Each
node stores a reference vector ``w = (x_l, y_l, x_r, y_r)``, the two eyes'
2D gaze points recorded while fixating that node. The forward map is the
tensor-product quadratic Lagrange interpolant of the reference vectors, and
a gaze measurement is mapped back to ``s`` by minimizing
``E(s) = 0.5 * |f(s) - f_et|^2`` with gradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonFiniteInput, NotALattice

OUT_DIM = 4


def _lagrange_1d(nodes: np.ndarray, t: np.ndarray):
    """Values and derivatives of the three quadratic Lagrange polynomials.

    ``nodes`` is (3,), ``t`` is (m,); returns two (m, 3) arrays.
    """
    t = t[:, None]
    L = np.empty((t.shape[0], 3))
    dL = np.empty((t.shape[0], 3))
    for i in range(3):
        j, k = [q for q in range(3) if q != i]
        denom = (nodes[i] - nodes[j]) * (nodes[i] - nodes[k])
        a, b = t[:, 0] - nodes[j], t[:, 0] - nodes[k]
        L[:, i] = a * b / denom
        dL[:, i] = (a + b) / denom
    return L, dL


def _lagrange_scalar(nodes, t: float):
    """Values and derivatives of the three 1D basis polynomials at one point (plain floats)."""
    n0, n1, n2 = nodes
    a0, a1, a2 = t - n0, t - n1, t - n2
    d0 = (n0 - n1) * (n0 - n2)
    d1 = (n1 - n0) * (n1 - n2)
    d2 = (n2 - n0) * (n2 - n1)
    return ((a1 * a2 / d0, a0 * a2 / d1, a0 * a1 / d2),
            ((a1 + a2) / d0, (a0 + a2) / d1, (a0 + a1) / d2))


def _distinct(values: np.ndarray, tol: float) -> np.ndarray:
    v = np.sort(values)
    keep = [v[0]]
    for x in v[1:]:
        if x - keep[-1] > tol:
            keep.append(x)
    return np.array(keep)


@dataclass(frozen=True)
class PsomNet:
    xs: np.ndarray  # (3,) lattice X values, increasing
    ys: np.ndarray  # (3,) lattice Y values, increasing
    weights: np.ndarray  # (3, 3, 4) reference vectors indexed [ix, iy]

    def node_grid(self) -> np.ndarray:
        """(9, 2) node coordinates, X-major."""
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def node_weights(self) -> np.ndarray:
        return self.weights.reshape(9, OUT_DIM)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.xs[1], self.ys[1]])

    def basis(self, s) -> np.ndarray:
        """H(s, k) for every node: (m, 9), or (9,) for a single point."""
        s = np.asarray(s, dtype=float)
        pts = np.atleast_2d(s)
        Lx, _ = _lagrange_1d(self.xs, pts[:, 0])
        Ly, _ = _lagrange_1d(self.ys, pts[:, 1])
        H = (Lx[:, :, None] * Ly[:, None, :]).reshape(-1, 9)
        return H[0] if s.ndim == 1 else H

    def forward(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.atleast_2d(self.basis(s)) @ self.node_weights()
        return out[0] if s.ndim == 1 else out

    def jacobian(self, s) -> np.ndarray:
        """d f / d s at a single point: (4, 2)."""
        s = np.asarray(s, dtype=float).reshape(2)
        Lx, dLx = _lagrange_1d(self.xs, s[:1])
        Ly, dLy = _lagrange_1d(self.ys, s[1:])
        dHx = (dLx[0][:, None] * Ly[0][None, :]).ravel()
        dHy = (Lx[0][:, None] * dLy[0][None, :]).ravel()
        W = self.node_weights()
        return np.column_stack([dHx @ W, dHy @ W])

    def _point(self, s, with_jacobian: bool):
        Lx, dLx = _lagrange_scalar(self.xs, float(s[0]))
        Ly, dLy = _lagrange_scalar(self.ys, float(s[1]))
        W = self.weights
        f = np.tensordot(np.outer(Lx, Ly), W, axes=2)
        if not with_jacobian:
            return f, None
        J = np.column_stack([np.tensordot(np.outer(dLx, Ly), W, axes=2),
                             np.tensordot(np.outer(Lx, dLy), W, axes=2)])
        return f, J

    def energy(self, s, f_et) -> float:
        r = self._point(s, False)[0] - f_et
        return 0.5 * float(r @ r)

    def gradient(self, s, f_et) -> np.ndarray:
        f, J = self._point(s, True)
        return J.T @ (f - f_et)

    def is_inside(self, s, tol: float = 1e-9) -> bool:
        s = np.asarray(s, dtype=float).reshape(2)
        return bool(self.xs[0] - tol <= s[0] <= self.xs[2] + tol and self.ys[0] - tol <= s[1] <= self.ys[2] + tol)

    def to_dict(self) -> dict:
        return {"xs": self.xs.tolist(), "ys": self.ys.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PsomNet":
        return cls(np.array(d["xs"], dtype=float), np.array(d["ys"], dtype=float),
                   np.array(d["weights"], dtype=float).reshape(3, 3, OUT_DIM))


def psom_calibrate(coords, refs) -> PsomNet:
    """Build a net from 9 node coordinates ``(9, 2)`` and reference vectors ``(9, 4)``.

    The nodes may arrive in any order but must cover 3 distinct X values by
    3 distinct Y values exactly once each.
    """
    coords = np.asarray(coords, dtype=float)
    refs = np.asarray(refs, dtype=float)
    if coords.shape != (9, 2) or refs.shape != (9, OUT_DIM):
        raise NotALattice(f"expected (9, 2) coordinates and (9, 4) references, got {coords.shape}, {refs.shape}")
    if not (np.all(np.isfinite(coords)) and np.all(np.isfinite(refs))):
        raise NonFiniteInput("lattice data must be finite")
    span = max(np.ptp(coords[:, 0]), np.ptp(coords[:, 1]), 1e-300)
    tol = 1e-9 * span
    xs = _distinct(coords[:, 0], tol)
    ys = _distinct(coords[:, 1], tol)
    if len(xs) != 3 or len(ys) != 3:
        raise NotALattice(f"nodes span {len(xs)} X values and {len(ys)} Y values; need 3 of each")
    W = np.full((3, 3, OUT_DIM), np.nan)
    for c, w in zip(coords, refs):
        ix = int(np.argmin(np.abs(xs - c[0])))
        iy = int(np.argmin(np.abs(ys - c[1])))
        if abs(xs[ix] - c[0]) > tol or abs(ys[iy] - c[1]) > tol or not np.isnan(W[ix, iy, 0]):
            raise NotALattice("nodes do not form a full 3x3 lattice")
        W[ix, iy] = w
    return PsomNet(xs, ys, W)


@dataclass(frozen=True)
class InversionConfig:
    step: float = 0.5
    threshold: float = 1e-10
    max_iter: int = 500
    init: str = "nearest_node"  # or "lattice_center"
    line_search: bool = True  # False: plain fixed-step descent
    armijo_c: float = 1e-4
    max_halvings: int = 40
    stall_tol: float = 1e-12  # relative energy drop below which the descent has stalled

    def __post_init__(self):
        if not self.step > 0 or not self.threshold > 0:
            raise ValueError("step and threshold must be positive")
        if self.init not in ("nearest_node", "lattice_center"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")


@dataclass(frozen=True)
class PsomInversion:
    s: np.ndarray
    energy: float
    iterations: int
    converged: bool  # energy reached the threshold
    inside_hull: bool
    stalled: bool = False  # stopped at a stationary point above the threshold
    trace: Optional[tuple] = None  # energy after every iteration, when requested


def initial_point(net: PsomNet, f_et: np.ndarray, init: str) -> np.ndarray:
    if init == "lattice_center":
        return net.center.copy()
    d = np.sum((net.node_weights() - f_et) ** 2, axis=1)
    return net.node_grid()[int(np.argmin(d))].copy()


def psom_invert(net: PsomNet, f_et, cfg: InversionConfig = InversionConfig(),
                keep_trace: bool = False) -> PsomInversion:
    """Find the lattice coordinate whose forward image is closest to ``f_et``.

    With ``line_search`` each iteration starts from ``cfg.step`` and halves it
    until the sufficient-decrease test passes, so the energy never rises.
    The best iterate is returned even when the threshold is not reached;
    measurements off the calibrated surface typically end ``stalled`` at the
    least-squares point rather than running to ``max_iter``.
    """
    f_et = np.asarray(f_et, dtype=float).reshape(OUT_DIM)
    if not np.all(np.isfinite(f_et)):
        raise NonFiniteInput("gaze measurement must be finite")
    s = initial_point(net, f_et, cfg.init)
    E = net.energy(s, f_et)
    trace = [E] if keep_trace else None
    it = 0
    stalled = False
    while E > cfg.threshold and it < cfg.max_iter:
        it += 1
        g = net.gradient(s, f_et)
        gg = float(g @ g)
        if gg == 0.0:
            stalled = True
            break
        t = cfg.step
        if cfg.line_search:
            for _ in range(cfg.max_halvings):
                cand = s - t * g
                E_c = net.energy(cand, f_et)
                if E_c <= E - cfg.armijo_c * t * gg:
                    break
                t *= 0.5
            else:
                stalled = True  # no acceptable step: stationary to working precision
                break
        else:
            cand = s - t * g
            E_c = net.energy(cand, f_et)
        drop = E - E_c
        s, E = cand, E_c
        if keep_trace:
            trace.append(E)
        if cfg.line_search and drop <= cfg.stall_tol * E:
            stalled = E > cfg.threshold
            break
    converged = E <= cfg.threshold
    return PsomInversion(s, float(E), it, bool(converged), net.is_inside(s), bool(stalled and not converged),
                         tuple(trace) if keep_trace else None)
