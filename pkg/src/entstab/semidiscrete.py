"""Semi-discrete optimal transport on a quadrature grid.

The source density is represented by a grid measure. The unregularized map
sends each grid atom to the atom maximizing ``<x, y_j> - psi_j`` (Laguerre
cells); the entropic map comes from :mod:`entstab.sinkhorn` on the same grid.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .entropic_maps import forward_map
from .exact_ot import solve_discrete_w2
from .measures import DiscreteMeasure
from .sinkhorn import DEFAULT_OPTIONS, EntropicPotentials, SolverOptions, solve_entropic


class SemiDiscreteError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SemiDiscreteSolution:
    grid: DiscreteMeasure
    atoms: DiscreteMeasure
    psi0: np.ndarray
    cell_masses: np.ndarray
    residual: float
    labels: np.ndarray
    iterations: int = 0


@dataclass(frozen=True)
class BiasLedger:
    epsilon: float
    bias_l2: float
    psi_gap_inf: float
    rhs_prelim: float
    rhs_prelim_direct: float
    limit_constant_estimate: float  # bias_l2^2 / eps
    # eps -> 0 limit of rhs_prelim / eps, sum ||y_i - y_j|| h_ij(0) log(1 + mu_j/mu_i).
    # It bounds the limit of bias_l2^2 / eps from above; it is not that limit.
    limit_formula: float
    h_inflation: float = 1.0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SemiDiscreteStability:
    epsilon: float
    lhs: float
    w2: float
    bias_mu: float
    bias_nu: float
    entropic_term: float
    ratio: float  # lhs / w2^(1/3)

    @property
    def decomposition_sum(self) -> float:
        return self.bias_mu + self.bias_nu + self.entropic_term

    def as_dict(self) -> dict:
        d = asdict(self)
        d["decomposition_sum"] = self.decomposition_sum
        return d


# --- Laguerre cells ---------------------------------------------------------


def assign_cells(points: np.ndarray, atoms: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Index of ``argmax_j <x, y_j> - psi_j`` per row; ties go to the lowest index."""
    return np.argmax(points @ atoms.T - psi[None, :], axis=1)


def _dual(grid: DiscreteMeasure, mu: DiscreteMeasure, psi: np.ndarray, K: np.ndarray):
    """Semi-discrete dual (to be minimized), cell masses and cell labels."""
    scores = K - psi[None, :]
    labels = np.argmax(scores, axis=1)
    best = scores[np.arange(len(labels)), labels]
    masses = np.bincount(labels, weights=grid.weights, minlength=mu.size)
    return float(grid.weights @ best + mu.weights @ psi), masses, labels


def solve_semidiscrete(grid: DiscreteMeasure, mu: DiscreteMeasure, tol: float = 1e-2,
                       max_iterations: int = 20_000, patience: int = 200) -> SemiDiscreteSolution:
    """Dual potential ``psi0`` whose Laguerre cells carry the masses of ``mu``.

    Gradient descent on the convex dual ``F(psi) = sum_x w_x max_j(<x, y_j> -
    psi_j) + sum_j mu_j psi_j`` (the negated concave Kantorovich dual), whose
    gradient is ``mu - cell_masses``; step sizes come from an Armijo
    backtracking search on ``F``. Cells are exact partitions of the grid, so
    ``tol`` cannot go below the mass that crosses a cell boundary in one move;
    the search gives up after ``patience`` iterations without a new best
    residual.
    """
    if grid.dim != mu.dim:
        raise ValueError("dimension mismatch")
    K = grid.points @ mu.points.T
    psi = np.zeros(mu.size)
    value, masses, labels = _dual(grid, mu, psi, K)
    step = 1.0
    best = (np.inf, psi, masses, labels)
    since_best = 0
    it = 0
    for it in range(max_iterations):
        g = mu.weights - masses
        res = float(np.max(np.abs(g)))
        if res < best[0]:
            best = (res, psi, masses, labels)
            since_best = 0
        else:
            since_best += 1
        if res <= tol or since_best > patience:
            break
        gg = float(g @ g)
        while step > 1e-14:
            trial = psi - step * g
            tv, tm, tl = _dual(grid, mu, trial, K)
            if tv <= value - 1e-4 * step * gg:
                psi, value, masses, labels = trial, tv, tm, tl
                step *= 2.0
                break
            step *= 0.5
        else:
            break
    res, psi, masses, labels = best
    if res > tol:
        j = int(np.argmax(np.abs(mu.weights - masses)))
        raise SemiDiscreteError(
            f"semi-discrete ascent stalled at residual {res:.3e} > {tol:.3e} "
            f"(atom {j}: cell mass {masses[j]:.6f}, target {mu.weights[j]:.6f})")
    psi = psi - float(mu.weights @ psi)
    return SemiDiscreteSolution(grid, mu, psi, masses, res, labels, it)


def brenier_map_eval(sol: SemiDiscreteSolution, x) -> tuple[int, np.ndarray]:
    x = np.asarray(x, dtype=float)
    if x.shape != (sol.atoms.dim,):
        raise ValueError(f"point must have shape ({sol.atoms.dim},)")
    j = int(assign_cells(x[None, :], sol.atoms.points, sol.psi0)[0])
    return j, sol.atoms.points[j].copy()


def brenier_map(sol: SemiDiscreteSolution, points=None) -> np.ndarray:
    """Images of ``points`` (default: the grid atoms) under the Laguerre map."""
    if points is None:
        return sol.atoms.points[sol.labels]
    return sol.atoms.points[assign_cells(np.atleast_2d(points), sol.atoms.points, sol.psi0)]


def _l2(weights: np.ndarray, A: np.ndarray, B: np.ndarray) -> float:
    return float(math.sqrt(max(weights @ np.sum((A - B) ** 2, axis=1), 0.0)))


# --- boundary geometry ------------------------------------------------------


def delta_ij(sol: SemiDiscreteSolution, i: int, j: int, x):
    """``2 (<x, y_i - y_j> - psi0_i + psi0_j)``; accepts one point or a batch."""
    if i == j:
        raise ValueError("delta_ij needs i != j")
    y = sol.atoms.points
    x = np.asarray(x, dtype=float)
    out = 2.0 * (np.atleast_2d(x) @ (y[i] - y[j]) - sol.psi0[i] + sol.psi0[j])
    return float(out[0]) if x.ndim == 1 else out


def grid_spacing(grid: DiscreteMeasure) -> np.ndarray:
    """Per-axis spacing of a regular grid (0 on axes with a single coordinate)."""
    h = np.zeros(grid.dim)
    for k in range(grid.dim):
        u = np.unique(grid.points[:, k])
        if len(u) > 1:
            h[k] = float(np.min(np.diff(u)))
    return h


def _spread_mass_cdf(t: np.ndarray, centers: np.ndarray, w: np.ndarray, half_widths: np.ndarray) -> np.ndarray:
    """``sum_k w_k P(c_k + U <= t)`` with ``U`` a sum of independent ``U[-a, a]``.

    Inclusion-exclusion over box corners turns each term into truncated
    powers ``(t + shift - c_k)_+^d``, evaluated for all ``t`` from prefix sums
    over the sorted centers.
    """
    a = half_widths[half_widths > 0]
    d = len(a)
    order = np.argsort(centers)
    c, w = centers[order], w[order]
    if d == 0:
        return np.concatenate([[0.0], np.cumsum(w)])[np.searchsorted(c, t, side="right")]
    prefix = [np.concatenate([[0.0], np.cumsum(w * c**k)]) for k in range(d + 1)]
    total = np.zeros_like(t, dtype=float)
    for signs in itertools.product((0, 1), repeat=d):
        shift = a.sum() - 2.0 * sum(ak for ak, sk in zip(a, signs) if sk)
        q = t + shift
        idx = np.searchsorted(c, q, side="left")
        acc = sum(math.comb(d, k) * q ** (d - k) * (-1) ** k * prefix[k][idx] for k in range(d + 1))
        total += (-1) ** sum(signs) * acc
    return total / (math.factorial(d) * np.prod(2.0 * a))


def _relaxed_cell(sol: SemiDiscreteSolution, i: int, j: int) -> np.ndarray:
    """Grid atoms of ``L_i`` with the constraint against ``j`` dropped.

    On ``{Delta_ij >= 0}`` this set coincides with ``L_i``, and it continues
    across the ``i``/``j`` boundary, so slab masses near ``t = 0`` are not
    distorted by where the grid happens to cut the boundary.
    """
    scores = sol.grid.points @ sol.atoms.points.T - sol.psi0[None, :]
    others = [k for k in range(sol.atoms.size) if k not in (i, j)]
    if not others:
        return np.ones(sol.grid.size, dtype=bool)
    return scores[:, i] >= scores[:, others].max(axis=1)


def _cell_delta(sol: SemiDiscreteSolution, i: int, j: int):
    """Centers and half-widths of ``Delta_ij`` over the grid cells of the relaxed ``L_i``."""
    region = _relaxed_cell(sol, i, j)
    centers = delta_ij(sol, i, j, sol.grid.points[region])
    grad = 2.0 * (sol.atoms.points[i] - sol.atoms.points[j])
    half = 0.5 * np.abs(grad) * grid_spacing(sol.grid)
    return centers, sol.grid.weights[region], half


def slab_cdf(sol: SemiDiscreteSolution, i: int, j: int, t) -> np.ndarray:
    """Cumulative slab mass: ``G(t) - G(0)`` is the rho-mass of ``{x in L_i : 0 <= Delta_ij(x) <= t}``.

    Each grid atom's mass is spread over its cell, on which ``Delta_ij`` is
    affine, so ``G`` is piecewise polynomial rather than a step function.
    """
    t = np.asarray(t, dtype=float)
    centers, w, half = _cell_delta(sol, i, j)
    if len(w) == 0:
        return np.zeros_like(t)
    return np.clip(_spread_mass_cdf(t, centers, w, half), 0.0, None)


def h_ij_estimate(sol: SemiDiscreteSolution, i: int, j: int, t_values, bandwidth: float = 0.05) -> np.ndarray:
    """Boundary-slab density ``h_ij(t)`` by differencing ``G`` over a window.

    ``h(t) ~ 2 |y_i - y_j| (G(t + b) - G(t - b)) / (2 b)``, the co-area
    formula read backwards. ``G`` runs over ``L_i`` relaxed across the ``j``
    boundary, so the window stays centered at ``t = 0`` too. Windows with no
    mass for ``t`` inside the range of ``Delta_ij`` on ``L_i`` are counted and
    reported in a single warning.
    """
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if i == j:
        raise ValueError("h_ij needs i != j")
    t = np.asarray(t_values, dtype=float)
    centers, w, half = _cell_delta(sol, i, j)
    if len(w) == 0:
        return np.zeros_like(t)
    G = _spread_mass_cdf(np.concatenate([t - bandwidth, t + bandwidth]), centers, w, half)
    mass = np.maximum(G[len(t):] - G[:len(t)], 0.0)
    h = np.linalg.norm(sol.atoms.points[i] - sol.atoms.points[j]) * mass / bandwidth
    in_cell = sol.labels == i
    reach = float(np.max(delta_ij(sol, i, j, sol.grid.points[in_cell]))) if np.any(in_cell) else -np.inf
    empty = int(np.count_nonzero((mass <= 0) & (t >= 0) & (t <= reach)))
    if empty:
        warnings.warn(f"h_ij({i},{j}): {empty} empty slab(s) returned as 0", RuntimeWarning, stacklevel=2)
    return np.maximum(h, 0.0)


def coarea_sides(sol: SemiDiscreteSolution, i: int, j: int, f, t_values, bandwidth: float = 0.05):
    """Both sides of the co-area identity for ``f``.

    Returns ``(sum over L_i of f(Delta_ij) w, (2 |y_i - y_j|)^-1 int f h_ij dt)``
    with the integral done by trapezoid over ``t_values``.
    """
    in_cell = sol.labels == i
    direct = float(sol.grid.weights[in_cell] @ f(delta_ij(sol, i, j, sol.grid.points[in_cell])))
    t = np.asarray(t_values, dtype=float)
    h = h_ij_estimate(sol, i, j, t, bandwidth)
    dist = np.linalg.norm(sol.atoms.points[i] - sol.atoms.points[j])
    return direct, float(np.trapezoid(f(t) * h, t) / (2.0 * dist))


# --- entropic bias ----------------------------------------------------------


def _entropic_on_grid(grid, mu, epsilon, sol, opts):
    return solve_entropic(grid, mu, epsilon, opts, init_psi=sol.psi0)


def bias_ledger(grid: DiscreteMeasure, mu: DiscreteMeasure, epsilon: float, sol: SemiDiscreteSolution,
                opts: SolverOptions = DEFAULT_OPTIONS, bandwidth: float = 0.05, h_inflation: float = 1.0,
                u_max: float = 60.0, n_u: int = 601, entropic: EntropicPotentials | None = None) -> BiasLedger:
    """Entropic bias ``||T_0 - T_eps||_{L2(rho)}`` and the explicit bound on its square.

    ``rhs_prelim`` integrates ``h_ij(u eps) / (1 + mu_i/mu_j e^{u/2})`` over
    ``u in [0, u_max]`` with ``h_ij`` estimated by :func:`h_ij_estimate` and
    multiplied by ``h_inflation``. ``rhs_prelim_direct`` is the same bound
    summed over grid atoms without the co-area step.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if sol.grid is not grid and not sol.grid.same_as(grid):
        raise ValueError("solution was computed on a different grid")
    if not sol.atoms.same_as(mu):
        raise ValueError("solution was computed for a different discrete measure")
    p = entropic if entropic is not None else _entropic_on_grid(grid, mu, epsilon, sol, opts)
    T0 = brenier_map(sol)
    Te = forward_map(p, grid.points)
    bias = _l2(grid.weights, T0, Te)

    delta = sol.psi0 - p.psi
    gap = 0.5 * float(delta.max() - delta.min())
    factor = math.exp(2.0 * gap / epsilon)

    y, m = mu.points, mu.weights
    u = np.linspace(0.0, u_max, n_u)
    total = direct = limit = 0.0
    for i, j in itertools.permutations(range(mu.size), 2):
        dist = float(np.linalg.norm(y[i] - y[j]))
        in_cell = sol.labels == i
        if not np.any(in_cell):
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            h = h_inflation * h_ij_estimate(sol, i, j, u * epsilon, bandwidth)
        kernel = 1.0 / (1.0 + m[i] / m[j] * np.exp(u / 2.0))
        total += 0.5 * dist * float(np.trapezoid(h * kernel, u))
        limit += dist * float(h[0]) * math.log1p(m[j] / m[i])
        D = delta_ij(sol, i, j, grid.points[in_cell])
        direct += dist**2 * float(grid.weights[in_cell] @ (1.0 / (1.0 + m[i] / m[j] * np.exp(D / (2.0 * epsilon)))))
    return BiasLedger(
        epsilon=float(epsilon), bias_l2=bias, psi_gap_inf=gap,
        rhs_prelim=factor * epsilon * total, rhs_prelim_direct=factor * direct,
        limit_constant_estimate=bias**2 / epsilon, limit_formula=limit / h_inflation,
        h_inflation=h_inflation,
    )


def semidiscrete_stability(grid: DiscreteMeasure, mu: DiscreteMeasure, nu: DiscreteMeasure,
                           epsilon: float | str = "w2", tol: float = 1e-2,
                           opts: SolverOptions = DEFAULT_OPTIONS) -> SemiDiscreteStability:
    """Decompose ``||T_0^mu - T_0^nu||`` into two biases and an entropic gap.

    ``epsilon="w2"`` picks ``eps = W2(mu, nu)^(2/3)``; a number fixes it.
    """
    sol_mu = solve_semidiscrete(grid, mu, tol)
    sol_nu = solve_semidiscrete(grid, nu, tol)
    T0_mu, T0_nu = brenier_map(sol_mu), brenier_map(sol_nu)
    lhs = _l2(grid.weights, T0_mu, T0_nu)
    w2 = math.sqrt(max(solve_discrete_w2(mu, nu).cost, 0.0))
    if epsilon == "w2":
        eps = w2 ** (2.0 / 3.0)
    elif isinstance(epsilon, str):
        raise ValueError(f"unknown epsilon rule {epsilon!r}")
    else:
        eps = float(epsilon)
    ratio = lhs / w2 ** (1.0 / 3.0) if w2 > 0 else float("nan")
    if eps <= 0:
        # equal measures under the W2 rule: every term vanishes
        return SemiDiscreteStability(0.0, lhs, w2, 0.0, 0.0, 0.0, ratio)
    p_mu = _entropic_on_grid(grid, mu, eps, sol_mu, opts)
    p_nu = _entropic_on_grid(grid, nu, eps, sol_nu, opts)
    Te_mu, Te_nu = forward_map(p_mu, grid.points), forward_map(p_nu, grid.points)
    return SemiDiscreteStability(
        epsilon=eps, lhs=lhs, w2=w2,
        bias_mu=_l2(grid.weights, T0_mu, Te_mu), bias_nu=_l2(grid.weights, T0_nu, Te_nu),
        entropic_term=_l2(grid.weights, Te_mu, Te_nu), ratio=ratio,
    )
