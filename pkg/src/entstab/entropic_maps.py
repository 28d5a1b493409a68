"""Entropic Brenier maps, conditional couplings, tilts and H_max estimates.

Conditionals are evaluated at arbitrary points of R^d through the soft
conjugate, which extends the potentials off the supports.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .measures import DiscreteMeasure, make_discrete
from .sinkhorn import EntropicPotentials, logsumexp

SIDES = ("x", "z")


@dataclass(frozen=True, eq=False)
class ConditionalDistribution:
    """Weights over the atoms of ``base``.

    ``side="x"`` is the law of Z given X = point (base is the target);
    ``side="z"`` is the law of X given Z = point (base is the source).
    """

    base: DiscreteMeasure
    weights: np.ndarray
    point: np.ndarray | None
    side: str

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.base.points

    def covariance(self) -> np.ndarray:
        centered = self.base.points - self.mean()
        cov = (centered * self.weights[:, None]).T @ centered
        return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class HmaxEstimate:
    lower_bound: float
    analytic_cap: float
    probe_count: int
    argmax: np.ndarray | None = None


def _side_parts(p: EntropicPotentials, side: str):
    """(conditioning-side measure, its potential, base measure, base potential)."""
    if side == "x":
        return p.source, p.phi, p.target, p.psi
    if side == "z":
        return p.target, p.psi, p.source, p.phi
    raise ValueError(f"side must be 'x' or 'z', got {side!r}")


def conditional_log_weights(p: EntropicPotentials, side: str, points) -> np.ndarray:
    """Normalized log-weights, shape ``(k, n_base)`` for ``k`` query points."""
    _, _, base, base_pot = _side_parts(p, side)
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[1] != base.dim:
        raise ValueError(f"point has dimension {P.shape[1]}, measures have {base.dim}")
    logits = (P @ base.points.T - base_pot[None, :]) / p.epsilon + base.log_weights[None, :]
    return logits - logsumexp(logits, axis=1)[:, None]


def conditional_distribution(p: EntropicPotentials, side: str, point) -> ConditionalDistribution:
    point = np.asarray(point, dtype=float)
    if point.ndim != 1:
        raise ValueError("point must be a single vector")
    lw = conditional_log_weights(p, side, point)[0]
    w = np.exp(lw)
    w = w / w.sum()
    _, _, base, _ = _side_parts(p, side)
    return ConditionalDistribution(base, w, point.copy(), side)


def _barycenters(p: EntropicPotentials, side: str, points) -> np.ndarray:
    _, _, base, _ = _side_parts(p, side)
    W = np.exp(conditional_log_weights(p, side, points))
    W /= W.sum(axis=1, keepdims=True)
    return W @ base.points


def forward_map(p: EntropicPotentials, x):
    """Conditional mean of Z given X = x; accepts one point or an ``(k, d)`` batch."""
    x = np.asarray(x, dtype=float)
    out = _barycenters(p, "x", x)
    return out[0] if x.ndim == 1 else out


def backward_map(p: EntropicPotentials, z):
    """Conditional mean of X given Z = z."""
    z = np.asarray(z, dtype=float)
    out = _barycenters(p, "z", z)
    return out[0] if z.ndim == 1 else out


def _covariances(p: EntropicPotentials, side: str, points) -> np.ndarray:
    _, _, base, _ = _side_parts(p, side)
    W = np.exp(conditional_log_weights(p, side, points))
    W /= W.sum(axis=1, keepdims=True)
    centered = base.points[None, :, :] - (W @ base.points)[:, None, :]
    cov = np.einsum("kn,kni,knj->kij", W, centered, centered)
    return 0.5 * (cov + np.swapaxes(cov, 1, 2))


def conditional_covariance(p: EntropicPotentials, side: str, point) -> np.ndarray:
    """Covariance of the conditional at ``point``; ``eps`` times the Hessian of the potential."""
    cond = conditional_distribution(p, side, point)
    return cond.covariance()


def tilt(q, h):
    """Exponential tilt: reweight by ``exp(<h, z>)`` and renormalize.

    Works on a :class:`DiscreteMeasure` or on a :class:`ConditionalDistribution`
    (the base support is kept, so zero weights stay aligned).
    """
    h = np.asarray(h, dtype=float)
    if isinstance(q, ConditionalDistribution):
        pts, lw = q.base.points, q.log_weights
    else:
        pts, lw = q.points, q.log_weights
    if h.shape != (pts.shape[1],):
        raise ValueError(f"tilt vector has shape {h.shape}, expected ({pts.shape[1]},)")
    logits = lw + pts @ h
    w = np.exp(logits - logsumexp(logits))
    w = w / w.sum()
    if isinstance(q, ConditionalDistribution):
        return ConditionalDistribution(q.base, w, None, q.side)
    return make_discrete(pts, w)


def operator_norm(S: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix."""
    d = S.shape[0]
    if d <= 16:
        return float(max(np.linalg.eigvalsh(S)[-1], 0.0))
    v = np.ones(d) / math.sqrt(d)
    lam = 0.0
    for _ in range(max_iter):
        w = S @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(nrm - lam) <= tol * max(1.0, nrm):
            return float(nrm)
        lam = nrm
    return float(lam)


def default_probes(p: EntropicPotentials, side: str, per_axis: int = 32) -> np.ndarray:
    """Atoms of the conditioning measure plus a grid over its bounding box.

    The grid spans the first ``min(d, 2)`` coordinates; the remaining
    coordinates are pinned at each atom's values.
    """
    cond, _, _, _ = _side_parts(p, side)
    pts = cond.points
    d = pts.shape[1]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    gdims = min(d, 2)
    axes = [np.linspace(lo[k], hi[k], per_axis) for k in range(gdims)]
    grid = np.array(list(itertools.product(*axes)))
    probes = [pts]
    if d == gdims:
        probes.append(grid)
    else:
        for atom in pts:
            block = np.tile(atom, (len(grid), 1))
            block[:, :gdims] = grid
            probes.append(block)
    return np.unique(np.concatenate(probes), axis=0)


def estimate_hmax(p: EntropicPotentials, side: str, probes=None, ball_radius: float | None = None) -> HmaxEstimate:
    """Probe-based lower bound on ``sup_u |Cov(. | u)|_op`` plus the ball cap.

    ``side="x"`` bounds ``H_max(phi)`` (covariances of target atoms),
    ``side="z"`` bounds ``H_max(psi)``.
    """
    if probes is None:
        probes = default_probes(p, side)
    P = np.atleast_2d(np.asarray(probes, dtype=float))
    if P.shape[0] == 0 or P.size == 0:
        raise ValueError("empty probe list")
    norms = np.array([operator_norm(C) for C in _covariances(p, side, P)])
    k = int(np.argmax(norms))
    cap = math.inf if ball_radius is None else float(ball_radius) ** 2
    return HmaxEstimate(float(norms[k]), cap, int(P.shape[0]), P[k].copy())


def lipschitz_estimate(p: EntropicPotentials, side: str = "x", probes=None) -> float:
    """Probe maximum of the Jacobian norm of the forward (or backward) map.

    The Jacobian is ``Cov / eps``, so this is ``H_max`` probe estimate over
    ``eps``. Uncertified: a lower bound on the true Lipschitz constant.
    """
    return estimate_hmax(p, side, probes).lower_bound / p.epsilon
