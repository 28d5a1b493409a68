"""Exact discrete optimal transport for the squared Euclidean cost.

The solver is a transportation simplex on the bipartite row/column graph.
A basis is a spanning tree with ``n + m - 1`` cells, degenerate (zero-mass)
basic cells included, so the dual potentials are always well defined.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .measures import DiscreteMeasure

MAX_ATOMS = 5000
CERTIFICATE_TOL = 1e-8


class TransportSolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TransportPlan:
    row_measure: DiscreteMeasure
    col_measure: DiscreteMeasure
    mass: np.ndarray
    cost: float
    row_duals: np.ndarray | None = None
    col_duals: np.ndarray | None = None
    pivots: int = 0

    def support(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Indices and masses of the nonzero entries, row-major order."""
        i, j = np.nonzero(self.mass > 0)
        return i, j, self.mass[i, j]

    def certificate_gap(self) -> float:
        """Largest violation of dual feasibility / complementary slackness."""
        if self.row_duals is None:
            raise ValueError("plan carries no dual variables")
        C = squared_distances(self.row_measure.points, self.col_measure.points)
        slack = C - self.row_duals[:, None] - self.col_duals[None, :]
        feas = max(0.0, -float(slack.min()))
        comp = float(np.max(np.abs(slack[self.mass > 0]), initial=0.0))
        return max(feas, comp)


def squared_distances(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    # explicit differences, not the |x|^2 - 2<x,z> + |z|^2 expansion, to keep
    # zero distances exactly zero
    diff = x[:, None, :] - z[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    n, m = len(a), len(b)
    x = np.zeros((n, m))
    basis = []
    ra, rb = a.copy(), b.copy()
    i = j = 0
    while True:
        q = min(ra[i], rb[j])
        x[i, j] = q
        basis.append((i, j))
        ra[i] -= q
        rb[j] -= q
        if i == n - 1 and j == m - 1:
            break
        if j == m - 1 or (i < n - 1 and ra[i] <= rb[j]):
            i += 1
        else:
            j += 1
    return x, basis


def _tree_adjacency(basis, n, m):
    adj = [[] for _ in range(n + m)]
    for i, j in basis:
        adj[i].append(n + j)
        adj[n + j].append(i)
    return adj


def _duals(basis, C, n, m):
    adj = _tree_adjacency(basis, n, m)
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    u[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if node < n:
                j = nb - n
                if np.isnan(v[j]):
                    v[j] = C[node, j] - u[node]
                    queue.append(nb)
            else:
                i = nb
                if np.isnan(u[i]):
                    u[i] = C[i, node - n] - v[node - n]
                    queue.append(nb)
    if np.isnan(u).any() or np.isnan(v).any():
        raise TransportSolverError("basis is not a spanning tree")
    return u, v


def _tree_path(basis, n, m, src, dst):
    """Node path from ``src`` to ``dst`` in the basis tree."""
    adj = _tree_adjacency(basis, n, m)
    parent = {src: None}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        if node == dst:
            break
        for nb in adj[node]:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = [dst]
    while path[-1] != src:
        path.append(parent[path[-1]])
    return path[::-1]


def transportation_simplex(a, b, C, max_pivots: int | None = None, tol: float = 1e-12):
    """Minimize ``<C, X>`` over couplings of ``a`` and ``b``.

    Entering cells use Dantzig's rule (most negative reduced cost); after a
    run of degenerate pivots the rule switches to Bland's (lowest index) until
    a non-degenerate pivot happens, which rules out cycling.

    Returns ``(X, u, v, pivots)`` where ``u_i + v_j <= C_ij`` with equality on
    the basis.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    if max_pivots is None:
        max_pivots = 50 * (n + m) ** 2 + 1000
    x, basis = _northwest_corner(a, b)
    scale = max(1.0, float(np.abs(C).max()))
    degenerate_run = 0
    for pivots in range(max_pivots + 1):
        u, v = _duals(basis, C, n, m)
        reduced = C - u[:, None] - v[None, :]
        negative = reduced < -tol * scale
        if not negative.any():
            return x, u, v, pivots
        if degenerate_run >= n + m:
            flat = int(np.flatnonzero(negative)[0])
        else:
            flat = int(np.argmin(reduced))
        ei, ej = divmod(flat, m)
        # cycle: entering cell, then the tree path from column ej back to row ei
        path = _tree_path(basis, n, m, n + ej, ei)
        cells = [(ei, ej)]
        for p, q in zip(path[:-1], path[1:]):
            cells.append((q, p - n) if p >= n else (p, q - n))
        minus = cells[1::2]
        theta = min(x[c] for c in minus)
        leaving = min((c for c in minus if x[c] == theta), key=lambda c: c[0] * m + c[1])
        for k, c in enumerate(cells):
            x[c] += theta if k % 2 == 0 else -theta
        x[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ei, ej))
        degenerate_run = degenerate_run + 1 if theta == 0 else 0
    raise TransportSolverError(f"transportation simplex did not reach optimality in {max_pivots} pivots")


def solve_discrete_w2(a: DiscreteMeasure, b: DiscreteMeasure, max_pivots: int | None = None) -> TransportPlan:
    """Optimal coupling of ``a`` (rows) and ``b`` (columns) for ``|x - z|^2``."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.size > MAX_ATOMS or b.size > MAX_ATOMS:
        raise ValueError(f"supports larger than {MAX_ATOMS} atoms are not supported")
    C = squared_distances(a.points, b.points)
    x, u, v, pivots = transportation_simplex(a.weights, b.weights, C, max_pivots=max_pivots)
    x = np.clip(x, 0.0, None)
    cost = float(np.sum(x * C))
    plan = TransportPlan(a, b, x, cost, u, v, pivots)
    gap = plan.certificate_gap()
    if gap > CERTIFICATE_TOL * max(1.0, float(C.max())):
        raise TransportSolverError(f"optimality certificate failed (gap {gap:.3e})")
    return plan


def w2_distance(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    return float(np.sqrt(max(solve_discrete_w2(a, b).cost, 0.0)))


def conditional_of_plan(plan: TransportPlan, side: str, index: int) -> np.ndarray:
    """Row (``side="row"``) or column slice of the plan divided by its marginal weight."""
    if side == "row":
        marg = plan.row_measure.weights
        if not 0 <= index < len(marg):
            raise IndexError(f"row index {index} out of range")
        vec = plan.mass[index, :]
    elif side == "col":
        marg = plan.col_measure.weights
        if not 0 <= index < len(marg):
            raise IndexError(f"column index {index} out of range")
        vec = plan.mass[:, index]
    else:
        raise ValueError(f"side must be 'row' or 'col', got {side!r}")
    if not marg[index] > 0:
        raise ValueError("zero marginal weight")
    out = vec / marg[index]
    return out / out.sum()


# --- CSV: header "n m cost", then sparse triplets "i j mass" ---------------


def format_plan(plan: TransportPlan) -> str:
    n, m = plan.mass.shape
    lines = [f"{n} {m} {plan.cost!r}"]
    for i, j, w in zip(*plan.support()):
        lines.append(f"{i} {j} {float(w)!r}")
    return "\n".join(lines) + "\n"


def write_plan(plan: TransportPlan, path) -> None:
    Path(path).write_text(format_plan(plan))


def read_plan_matrix(path) -> tuple[np.ndarray, float]:
    """Dense mass matrix and recorded cost from a plan CSV."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    n, m, cost = int(lines[0][0]), int(lines[0][1]), float(lines[0][2])
    mass = np.zeros((n, m))
    for toks in lines[1:]:
        mass[int(toks[0]), int(toks[1])] = float(toks[2])
    return mass, cost
