"""Discrete probability measures on R^d and grid discretizations of densities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

WEIGHT_SUM_ATOL = 1e-12


class MeasureFormatError(ValueError):
    """Raised when a measure file cannot be parsed."""


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud ``sum_i w_i delta_{x_i}``.

    Build instances with :func:`make_discrete`, which validates and
    normalizes; the constructor itself trusts its inputs.
    """

    points: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.size

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def covariance(self) -> np.ndarray:
        centered = self.points - self.mean()
        return (centered * self.weights[:, None]).T @ centered

    def radius(self) -> float:
        """Smallest R with the support inside the closed ball B(0; R)."""
        return float(np.sqrt(np.max(np.sum(self.points**2, axis=1))))

    def diameter(self) -> float:
        diff = self.points[:, None, :] - self.points[None, :, :]
        return float(np.sqrt(np.max(np.sum(diff**2, axis=-1))))

    def translate(self, v) -> "DiscreteMeasure":
        return make_discrete(self.points + np.asarray(v, dtype=float), self.weights)

    def same_as(self, other: "DiscreteMeasure", atol: float = 0.0) -> bool:
        """Atomwise identity (same ordering)."""
        return (
            self.points.shape == other.points.shape
            and np.allclose(self.points, other.points, rtol=0.0, atol=atol)
            and np.allclose(self.weights, other.weights, rtol=0.0, atol=atol)
        )


def make_discrete(points, weights) -> DiscreteMeasure:
    """Validate, drop zero-weight atoms and renormalize.

    ``points`` may be a sequence of vectors or an ``(n, d)`` array; 1-D
    input is read as ``n`` points in dimension one only when every entry is a
    scalar.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError(f"points must be a list of vectors, got array of shape {pts.shape}")
    w = np.asarray(weights, dtype=np.float64).ravel()
    if pts.shape[0] != w.shape[0]:
        raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
    if pts.shape[0] == 0 or pts.shape[1] == 0:
        raise ValueError("empty support")
    if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
        raise ValueError("points and weights must be finite")
    if np.any(w < 0):
        raise ValueError("negative weight")
    keep = w > 0
    if not np.any(keep):
        raise ValueError("weights must have a positive sum")
    pts, w = pts[keep].copy(), w[keep]
    w = w / w.sum()
    return DiscreteMeasure(pts, w)


def uniform(points) -> DiscreteMeasure:
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    return make_discrete(pts, np.full(n, 1.0 / n))


def unit_vector(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)])


def two_point_measure(R: float, theta: float) -> DiscreteMeasure:
    """``1/2 delta_{R e_theta} + 1/2 delta_{-R e_theta}`` in the plane."""
    if not R > 0:
        raise ValueError(f"R must be positive, got {R}")
    e = R * unit_vector(theta)
    return make_discrete(np.stack([e, -e]), [0.5, 0.5])


def second_moment(m: DiscreteMeasure) -> float:
    return float(m.weights @ np.sum(m.points**2, axis=1))


def random_ball_measure(rng: np.random.Generator, n: int, dim: int = 2, R: float = 1.0) -> DiscreteMeasure:
    """``n`` atoms drawn uniformly from the closed ball ``B(0; R)`` with random positive weights."""
    if n < 1 or dim < 1 or not R > 0:
        raise ValueError("need n >= 1, dim >= 1 and R > 0")
    g = rng.standard_normal((n, dim))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    r = R * rng.random(n) ** (1.0 / dim)
    w = rng.random(n) + 0.05
    return make_discrete(g * r[:, None], w)


# --- densities -------------------------------------------------------------

DENSITY_KINDS = ("uniform-ball", "uniform-box", "custom-grid-values")


@dataclass(frozen=True)
class DensitySpec:
    """A density with convex support, to be discretized on a grid.

    ``uniform-ball`` uses ``radius``; ``uniform-box`` and
    ``custom-grid-values`` use ``bounds`` (one ``(lo, hi)`` pair per axis, or
    a single pair repeated). ``custom-grid-values`` additionally needs
    ``values``: either a callable mapping an ``(n, d)`` array of points to
    nonnegative density values, or an array with one entry per grid cell.
    """

    kind: str
    dim: int
    radius: float | None = None
    bounds: Sequence[tuple[float, float]] | tuple[float, float] | None = None
    values: Callable[[np.ndarray], np.ndarray] | np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in DENSITY_KINDS:
            raise ValueError(f"unsupported density kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.kind == "uniform-ball":
            if self.radius is None or not self.radius > 0:
                raise ValueError("uniform-ball needs radius > 0")
        else:
            for lo, hi in self.axis_bounds():
                if not lo < hi:
                    raise ValueError(f"box bounds must be ordered, got ({lo}, {hi})")
        if self.kind == "custom-grid-values" and self.values is None:
            raise ValueError("custom-grid-values needs density values")

    def axis_bounds(self) -> list[tuple[float, float]]:
        if self.kind == "uniform-ball":
            return [(-self.radius, self.radius)] * self.dim
        b = self.bounds
        if b is None:
            raise ValueError(f"{self.kind} needs bounds")
        arr = np.asarray(b, dtype=float)
        if arr.shape == (2,):
            return [(float(arr[0]), float(arr[1]))] * self.dim
        if arr.shape != (self.dim, 2):
            raise ValueError(f"bounds must have shape (2,) or ({self.dim}, 2)")
        return [(float(lo), float(hi)) for lo, hi in arr]


def uniform_ball(radius: float = 1.0, dim: int = 2) -> DensitySpec:
    return DensitySpec("uniform-ball", dim, radius=radius)


def uniform_box(bounds, dim: int) -> DensitySpec:
    return DensitySpec("uniform-box", dim, bounds=bounds)


def _midpoint_grid(spec: DensitySpec, resolution: int) -> tuple[np.ndarray, float]:
    axes = []
    volume = 1.0
    for lo, hi in spec.axis_bounds():
        h = (hi - lo) / resolution
        axes.append(lo + h * (np.arange(resolution) + 0.5))
        volume *= h
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1), volume


def grid_quadrature(spec: DensitySpec, resolution: int, return_dropped: bool = False):
    """Midpoint-rule discretization of ``spec`` on a ``resolution^d`` grid.

    Cells whose center falls outside the support are dropped. With
    ``return_dropped`` the fraction of bounding-box cell mass that was dropped
    is returned alongside the measure.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    centers, cell_volume = _midpoint_grid(spec, resolution)
    if spec.kind == "uniform-ball":
        density = np.where(np.sum(centers**2, axis=1) <= spec.radius**2, 1.0, 0.0)
    elif spec.kind == "uniform-box":
        density = np.ones(len(centers))
    else:
        vals = spec.values
        density = np.asarray(vals(centers) if callable(vals) else vals, dtype=float).ravel()
        if density.shape[0] != centers.shape[0]:
            raise ValueError(f"expected {centers.shape[0]} density values, got {density.shape[0]}")
        if np.any(density < 0):
            raise ValueError("density values must be nonnegative")
    mass = density * cell_volume
    total = mass.sum()
    if total <= 0:
        raise ValueError("density has no mass on the grid")
    measure = make_discrete(centers, mass)
    if return_dropped:
        dropped = float(np.count_nonzero(density == 0)) / len(density)
        return measure, dropped
    return measure


# --- file format -----------------------------------------------------------
# header "d n", then n lines "w x_1 ... x_d"


def format_measure(m: DiscreteMeasure) -> str:
    lines = [f"{m.dim} {m.size}"]
    for w, x in zip(m.weights, m.points):
        lines.append(" ".join(repr(float(v)) for v in (w, *x)))
    return "\n".join(lines) + "\n"


def parse_measure(text: str, source: str = "<string>") -> DiscreteMeasure:
    rows = [(k + 1, line.split()) for k, line in enumerate(text.splitlines())]
    rows = [(k, toks) for k, toks in rows if toks and not toks[0].startswith("#")]
    if not rows:
        raise MeasureFormatError(f"{source}: empty file")
    lineno, header = rows[0]
    try:
        if len(header) != 2:
            raise ValueError
        d, n = int(header[0]), int(header[1])
    except ValueError:
        raise MeasureFormatError(f"{source}:{lineno}: header must be 'd n'") from None
    if d < 1 or n < 1:
        raise MeasureFormatError(f"{source}:{lineno}: d and n must be positive")
    body = rows[1:]
    if len(body) != n:
        raise MeasureFormatError(f"{source}: header declares {n} atoms, found {len(body)}")
    data = np.empty((n, d + 1))
    for r, (lineno, toks) in enumerate(body):
        if len(toks) != d + 1:
            raise MeasureFormatError(f"{source}:{lineno}: expected {d + 1} fields, got {len(toks)}")
        try:
            data[r] = [float(t) for t in toks]
        except ValueError:
            raise MeasureFormatError(f"{source}:{lineno}: non-numeric field") from None
        if data[r, 0] < 0:
            raise MeasureFormatError(f"{source}:{lineno}: negative weight")
    if not data[:, 0].sum() > 0:
        raise MeasureFormatError(f"{source}: weights are not normalizable (sum <= 0)")
    try:
        return make_discrete(data[:, 1:], data[:, 0])
    except ValueError as exc:
        raise MeasureFormatError(f"{source}: {exc}") from None


def read_measure(path) -> DiscreteMeasure:
    path = Path(path)
    return parse_measure(path.read_text(), source=str(path))


def write_measure(m: DiscreteMeasure, path) -> None:
    Path(path).write_text(format_measure(m))
