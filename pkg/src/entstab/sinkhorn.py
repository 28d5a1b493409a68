"""Log-domain Sinkhorn for entropic OT in the inner-product gauge.

Potentials follow the convention in which the coupling density with respect
to ``rho (x) nu`` is ``exp((<x, z> - phi(x) - psi(z)) / eps)``. The quadratic
cost terms are pulled out, so standard semi-dual potentials relate by
``f = |x|^2 / 2 - phi`` (see :func:`to_quadratic_potentials`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .measures import DiscreteMeasure, second_moment


def logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    """Max-shifted ``log sum exp``; rows that are entirely ``-inf`` give ``-inf``."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


class SinkhornError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-10
    max_iterations: int = 100_000
    convergence_metric: str = "marginal-sup"  # or "potential-sup"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.convergence_metric not in ("marginal-sup", "potential-sup"):
            raise ValueError(f"unknown convergence metric {self.convergence_metric!r}")


DEFAULT_OPTIONS = SolverOptions()


@dataclass(frozen=True, eq=False)
class EntropicPotentials:
    source: DiscreteMeasure
    target: DiscreteMeasure
    epsilon: float
    phi: np.ndarray
    psi: np.ndarray
    iterations: int = 0
    residual: float = float("nan")
    history: list = field(default_factory=list, repr=False)

    def log_density(self) -> np.ndarray:
        """Matrix of ``log gamma(x_i, z_j)``."""
        K = self.source.points @ self.target.points.T
        return (K - self.phi[:, None] - self.psi[None, :]) / self.epsilon

    def log_plan(self) -> np.ndarray:
        return self.log_density() + self.source.log_weights[:, None] + self.target.log_weights[None, :]

    def plan(self) -> np.ndarray:
        return np.exp(self.log_plan())

    def shifted(self, c: float) -> "EntropicPotentials":
        """The gauge-equivalent pair ``(phi + c, psi - c)``."""
        return EntropicPotentials(self.source, self.target, self.epsilon, self.phi + c, self.psi - c,
                                  self.iterations, self.residual)

    def transposed(self) -> "EntropicPotentials":
        return EntropicPotentials(self.target, self.source, self.epsilon, self.psi, self.phi,
                                  self.iterations, self.residual)


def soft_conjugate(values, query, epsilon: float, q: DiscreteMeasure):
    """``eps * log sum_i w_i exp((<x_i, query> - values_i) / eps)``.

    ``query`` may be a single vector or an ``(k, d)`` batch.
    """
    values = np.asarray(values, dtype=float)
    query = np.asarray(query, dtype=float)
    single = query.ndim == 1
    Y = np.atleast_2d(query)
    if Y.shape[1] != q.dim:
        raise ValueError(f"query has dimension {Y.shape[1]}, measure has {q.dim}")
    expo = (Y @ q.points.T - values[None, :]) / epsilon + q.log_weights[None, :]
    out = epsilon * logsumexp(expo, axis=1)
    return float(out[0]) if single else out


def _check_pair(rho: DiscreteMeasure, nu: DiscreteMeasure, epsilon: float):
    if rho.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {rho.dim} vs {nu.dim}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")


def dual_value(rho: DiscreteMeasure, nu: DiscreteMeasure, epsilon: float, phi, psi) -> float:
    """Entropic dual objective at an arbitrary (not necessarily optimal) pair.

    Equals ``W_{2,eps}^2 / 2`` at the optimum; Sinkhorn sweeps never decrease it.
    """
    K = rho.points @ nu.points.T
    log_mass = (K - phi[:, None] - psi[None, :]) / epsilon + rho.log_weights[:, None] + nu.log_weights[None, :]
    total = np.exp(logsumexp(log_mass))
    return float(0.5 * (second_moment(rho) + second_moment(nu)) - rho.weights @ phi - nu.weights @ psi
                 - epsilon * (total - 1.0))


def solve_entropic(rho: DiscreteMeasure, nu: DiscreteMeasure, epsilon: float,
                   opts: SolverOptions = DEFAULT_OPTIONS, record_history: bool = False,
                   init_psi=None) -> EntropicPotentials:
    """Alternate ``phi <- Phi^nu[psi]`` and ``psi <- Phi^rho[phi]`` to tolerance.

    The ``marginal-sup`` metric is the sup over both sides of
    ``|sum_j nu_j gamma(x_i, z_j) - 1|``; column constraints hold exactly after
    each ``psi`` update, so only rows need checking. The returned ``psi`` has
    mean zero under ``nu``.
    """
    _check_pair(rho, nu, epsilon)
    K = rho.points @ nu.points.T
    log_r, log_n = rho.log_weights, nu.log_weights
    psi = np.zeros(nu.size) if init_psi is None else np.asarray(init_psi, dtype=float).copy()
    phi = epsilon * logsumexp((K - psi[None, :]) / epsilon + log_n[None, :], axis=1)
    history = []
    residual = np.inf
    for it in range(1, opts.max_iterations + 1):
        psi = epsilon * logsumexp((K - phi[:, None]) / epsilon + log_r[:, None], axis=0)
        phi_next = epsilon * logsumexp((K - psi[None, :]) / epsilon + log_n[None, :], axis=1)
        step = phi_next - phi
        if opts.convergence_metric == "marginal-sup":
            residual = float(np.max(np.abs(np.expm1(step / epsilon))))
        else:
            residual = float(np.max(np.abs(step)))
        if record_history:
            history.append((residual, dual_value(rho, nu, epsilon, phi, psi)))
        if residual <= opts.tolerance:
            break
        phi = phi_next
    else:
        raise SinkhornError(
            f"Sinkhorn did not converge in {opts.max_iterations} iterations (residual {residual:.3e})",
            residual, opts.max_iterations)
    c = float(nu.weights @ psi)
    return EntropicPotentials(rho, nu, float(epsilon), phi + c, psi - c, it, residual, history)


def plan_log_density(p: EntropicPotentials, i: int, j: int) -> float:
    if not (0 <= i < p.source.size and 0 <= j < p.target.size):
        raise IndexError(f"index ({i}, {j}) out of range for {p.source.size} x {p.target.size} plan")
    x, z = p.source.points[i], p.target.points[j]
    return float((x @ z - p.phi[i] - p.psi[j]) / p.epsilon)


def marginal_residual(p: EntropicPotentials) -> float:
    L = p.log_density()
    rows = np.exp(logsumexp(L + p.target.log_weights[None, :], axis=1))
    cols = np.exp(logsumexp(L + p.source.log_weights[:, None], axis=0))
    return float(max(np.max(np.abs(rows - 1.0)), np.max(np.abs(cols - 1.0))))


def to_quadratic_potentials(p: EntropicPotentials) -> tuple[np.ndarray, np.ndarray]:
    """Potentials ``(f, g)`` for the cost ``|x - z|^2 / 2``.

    The coupling density is then ``exp((f(x) + g(z) - |x - z|^2 / 2) / eps)``.
    """
    f = 0.5 * np.sum(p.source.points**2, axis=1) - p.phi
    g = 0.5 * np.sum(p.target.points**2, axis=1) - p.psi
    return f, g


# --- text format: header "epsilon n m", then n phi values, then m psi values


def format_potentials(p: EntropicPotentials) -> str:
    lines = [f"{p.epsilon!r} {p.source.size} {p.target.size}"]
    lines += [repr(float(v)) for v in p.phi]
    lines += [repr(float(v)) for v in p.psi]
    return "\n".join(lines) + "\n"


def write_potentials(p: EntropicPotentials, path) -> None:
    Path(path).write_text(format_potentials(p))


def read_potentials(path, source: DiscreteMeasure, target: DiscreteMeasure) -> EntropicPotentials:
    toks = Path(path).read_text().split()
    eps, n, m = float(toks[0]), int(toks[1]), int(toks[2])
    if (n, m) != (source.size, target.size):
        raise ValueError(f"potentials are {n} x {m}, measures are {source.size} x {target.size}")
    vals = np.array([float(t) for t in toks[3:]])
    if vals.size != n + m:
        raise ValueError(f"expected {n + m} potential values, found {vals.size}")
    return EntropicPotentials(source, target, eps, vals[:n], vals[n:])


__all__ = [
    "DEFAULT_OPTIONS", "EntropicPotentials", "SinkhornError", "SolverOptions", "dual_value",
    "marginal_residual", "plan_log_density", "soft_conjugate", "solve_entropic",
    "to_quadratic_potentials", "format_potentials", "write_potentials", "read_potentials",
]
