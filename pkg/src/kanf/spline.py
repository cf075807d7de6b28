"""Uniform B-spline bases, least-squares fitting and grid refinement.

Knot grids are uniform on ``[domain_lo, domain_hi]`` with ``G`` intervals and
``k`` extra knots on each side at the same spacing, which gives ``G + k``
degree-``k`` basis functions that form a partition of unity on the domain.
Inputs outside the domain are clamped to the nearest endpoint before the
spline branch is evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidInputError

RIDGE = 1e-8


@dataclass(frozen=True)
class KnotGrid:
    domain_lo: float = -1.0
    domain_hi: float = 1.0
    interior_count: int = 5
    degree: int = 3

    def __post_init__(self):
        if not (np.isfinite(self.domain_lo) and np.isfinite(self.domain_hi)):
            raise InvalidInputError("grid domain must be finite")
        if not self.domain_lo < self.domain_hi:
            raise InvalidInputError(
                f"domain_lo ({self.domain_lo}) must be < domain_hi ({self.domain_hi})"
            )
        if int(self.interior_count) != self.interior_count or self.interior_count < 1:
            raise InvalidInputError(f"interior_count must be an integer >= 1, got {self.interior_count}")
        if int(self.degree) != self.degree or self.degree < 0:
            raise InvalidInputError(f"degree must be an integer >= 0, got {self.degree}")

    @property
    def spacing(self) -> float:
        return (self.domain_hi - self.domain_lo) / self.interior_count

    @property
    def basis_count(self) -> int:
        return self.interior_count + self.degree

    @cached_property
    def knots(self) -> np.ndarray:
        k = self.degree
        idx = np.arange(-k, self.interior_count + k + 1, dtype=float)
        t = self.domain_lo + idx * self.spacing
        # pin the domain ends so clamped inputs hit them exactly
        t[k] = self.domain_lo
        t[k + self.interior_count] = self.domain_hi
        t.setflags(write=False)
        return t

    def with_intervals(self, interior_count: int) -> "KnotGrid":
        return KnotGrid(self.domain_lo, self.domain_hi, interior_count, self.degree)


def _as_finite(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("spline input contains non-finite values")
    return x


def _local_basis(grid: KnotGrid, x: np.ndarray, with_derivative: bool):
    """Nonzero degree-``k`` basis values at ``x`` via the triangular recursion.

    Returns ``(span, values, deriv)`` where ``values[..., r]`` is basis
    function ``span + r`` (``r = 0..k``) and ``deriv`` is ``None`` unless
    requested.
    """
    t = grid.knots
    k = grid.degree
    u = np.clip(x, grid.domain_lo, grid.domain_hi)
    span = np.floor((u - grid.domain_lo) / grid.spacing).astype(np.intp)
    span = np.clip(span, 0, grid.interior_count - 1)
    # a point can sit a rounding error outside its nominal interval
    span = span - ((u < t[k + span]) & (span > 0))
    span = span + ((u >= t[k + span + 1]) & (span < grid.interior_count - 1))
    j_idx = k + span  # t[j_idx] <= u < t[j_idx + 1]

    left = [None] + [u - t[j_idx + 1 - j] for j in range(1, k + 1)]
    right = [None] + [t[j_idx + j] - u for j in range(1, k + 1)]
    vals = [np.ones_like(u)]
    lower = vals
    for j in range(1, k + 1):
        lower = vals
        saved = np.zeros_like(u)
        nxt = []
        for r in range(j):
            temp = vals[r] / (right[r + 1] + left[j - r])
            nxt.append(saved + right[r + 1] * temp)
            saved = left[j - r] * temp
        nxt.append(saved)
        vals = nxt
    values = np.stack(vals, axis=-1)
    if not with_derivative:
        return span, values, None
    if k == 0:
        return span, values, np.zeros_like(values)
    deriv = []
    for r in range(k + 1):
        d = np.zeros_like(u)
        if r >= 1:
            d = d + lower[r - 1] / (t[j_idx + r] - t[j_idx - k + r])
        if r < k:
            d = d - lower[r] / (t[j_idx + r + 1] - t[j_idx - k + r + 1])
        deriv.append(k * d)
    deriv = np.stack(deriv, axis=-1)
    inside = (x >= grid.domain_lo) & (x <= grid.domain_hi)
    return span, values, deriv * inside[..., None]


def _scatter(grid: KnotGrid, span: np.ndarray, local: np.ndarray) -> np.ndarray:
    out = np.zeros(span.shape + (grid.basis_count,))
    flat = out.reshape(-1, grid.basis_count)
    rows = np.arange(flat.shape[0])
    s = span.reshape(-1)
    loc = local.reshape(-1, local.shape[-1])
    for r in range(local.shape[-1]):
        flat[rows, s + r] = loc[:, r]
    return out


def basis_eval(grid: KnotGrid, x) -> np.ndarray:
    """Evaluate every degree-``k`` basis function at ``x``.

    ``x`` may be a scalar or an array; the result has shape
    ``x.shape + (G + k,)``.
    """
    x = _as_finite(x)
    span, values, _ = _local_basis(grid, x, False)
    return _scatter(grid, span, values)


def basis_with_derivative(grid: KnotGrid, x) -> tuple[np.ndarray, np.ndarray]:
    """Basis values and their derivative with respect to the raw input.

    The derivative is zero outside the domain, where the spline branch is
    held constant by clamping.
    """
    x = _as_finite(x)
    span, values, deriv = _local_basis(grid, x, True)
    return _scatter(grid, span, values), _scatter(grid, span, deriv)


def silu(x):
    return x / (1.0 + np.exp(-x))


def silu_grad(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


@dataclass
class SplineFunction:
    """A single edge activation ``w_b * silu(x) + w_s * sum_i c_i B_i(x)``."""

    grid: KnotGrid
    coefficients: np.ndarray
    base_weight: float = 0.0
    spline_weight: float = 1.0

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float).reshape(-1)
        if c.shape[0] != self.grid.basis_count:
            raise InvalidInputError(
                f"expected {self.grid.basis_count} coefficients, got {c.shape[0]}"
            )
        if not (np.all(np.isfinite(c)) and np.isfinite(self.base_weight)
                and np.isfinite(self.spline_weight)):
            raise InvalidInputError("spline parameters must be finite")
        self.coefficients = c
        self.base_weight = float(self.base_weight)
        self.spline_weight = float(self.spline_weight)

    @classmethod
    def zeros(cls, grid: KnotGrid) -> "SplineFunction":
        return cls(grid, np.zeros(grid.basis_count), 0.0, 1.0)

    def __call__(self, x):
        return spline_eval(self, x)


def spline_branch(f: SplineFunction, x) -> np.ndarray:
    """Unweighted spline part ``sum_i c_i B_i(clamp(x))``."""
    return basis_eval(f.grid, x) @ f.coefficients


def spline_eval(f: SplineFunction, x):
    x = _as_finite(x)
    out = f.spline_weight * (basis_eval(f.grid, x) @ f.coefficients)
    if f.base_weight != 0.0:
        out = out + f.base_weight * silu(x)
    return out if out.ndim else float(out)


def fit_curve(grid: KnotGrid, xs, ys, ridge: float = RIDGE) -> np.ndarray:
    """Least-squares coefficients for samples ``(xs, ys)`` from ridge-damped
    normal equations.

    ``ys`` may carry extra trailing columns, in which case one coefficient
    vector is fitted per column (shape ``(G + k, m)``).
    """
    xs = _as_finite(xs).reshape(-1)
    ys = np.asarray(ys, dtype=float)
    if ys.shape[0] != xs.shape[0]:
        raise InvalidInputError(f"xs has {xs.shape[0]} samples but ys has {ys.shape[0]}")
    if not np.all(np.isfinite(ys)):
        raise InvalidInputError("fit targets contain non-finite values")
    if xs.shape[0] < grid.basis_count:
        raise InvalidInputError(
            f"need at least {grid.basis_count} samples to fit, got {xs.shape[0]}"
        )
    design = basis_eval(grid, xs)
    gram = design.T @ design
    rhs = design.T @ ys
    damped = gram.copy()
    damped[np.diag_indices_from(damped)] += ridge
    coef = np.linalg.solve(damped, rhs)
    # one refinement step removes most of the ridge bias on weakly covered
    # boundary splines; null-space components stay at zero
    return coef + np.linalg.solve(damped, rhs - gram @ coef)


def refine_grid(f: SplineFunction, new_interior_count: int, sample_count: int = 1000) -> SplineFunction:
    """Refit the spline branch of ``f`` on a grid with more intervals."""
    if new_interior_count <= f.grid.interior_count:
        raise InvalidInputError(
            f"new interior count {new_interior_count} must exceed {f.grid.interior_count}"
        )
    new_grid = f.grid.with_intervals(new_interior_count)
    if sample_count < new_grid.basis_count:
        raise InvalidInputError(f"sample_count must be >= {new_grid.basis_count}")
    xs = np.linspace(f.grid.domain_lo, f.grid.domain_hi, sample_count)
    coef = fit_curve(new_grid, xs, spline_branch(f, xs))
    return SplineFunction(new_grid, coef, f.base_weight, f.spline_weight)
