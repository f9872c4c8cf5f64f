"""Cubic B-spline basis for the longitudinal trajectory model.

The basis is a clamped regression spline: boundary knots at the extremes of
the observed time grid (each repeated degree+1 times) and, by default, a
single interior knot at the median time.  For an even number of time points
the median is the mean of the two central times.  With one interior knot and
degree 3 the basis dimension is 5.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["SplineBasis", "build_basis", "evaluate_at"]


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis evaluated on a fixed time grid.

    Attributes
    ----------
    knots : full knot sequence including boundary repetitions.
    degree : spline degree (cubic = 3).
    d : number of basis functions, = #interior knots + degree + 1.
    times : evaluation grid the basis matrix was built on.
    B : (d, T) basis matrix, column t = basis values at times[t].
    """

    knots: np.ndarray
    degree: int
    d: int
    times: np.ndarray
    B: np.ndarray = field(repr=False)


def _interior_knots(times, policy):
    if policy == "median":
        return np.array([np.median(times)])
    knots = np.atleast_1d(np.asarray(policy, dtype=float))
    if np.any(knots <= times[0]) or np.any(knots >= times[-1]):
        raise ValueError("interior knots must lie strictly inside the time range")
    return np.sort(knots)


def _basis_row(knots, degree, x):
    """All basis function values at scalar x (de Boor triangle).

    Uses half-open knot spans with the usual closure at the right
    boundary so the last basis function equals 1 at the final knot.
    """
    d = len(knots) - degree - 1
    if x >= knots[d]:
        span = d - 1
    else:
        span = int(np.searchsorted(knots, x, side="right")) - 1
        span = max(span, degree)
    n = np.zeros(degree + 1)
    n[0] = 1.0
    left = np.zeros(degree)
    right = np.zeros(degree)
    for j in range(1, degree + 1):
        left[j - 1] = x - knots[span + 1 - j]
        right[j - 1] = knots[span + j] - x
        saved = 0.0
        for r in range(j):
            denom = right[r] + left[j - 1 - r]
            term = n[r] / denom
            n[r] = saved + right[r] * term
            saved = left[j - 1 - r] * term
        n[j] = saved
    row = np.zeros(d)
    row[span - degree : span + 1] = n
    return row


def build_basis(times, degree=3, interior="median"):
    """Build the clamped B-spline basis on a strictly increasing time grid.

    Parameters
    ----------
    times : strictly increasing observation times, length >= degree + 1.
    degree : spline degree, >= 1.
    interior : "median" for a single knot at the median time, or an
        explicit sequence of interior knot locations.

    Returns
    -------
    SplineBasis with B of shape (d, len(times)).
    """
    times = np.asarray(times, dtype=float)
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    if times.ndim != 1 or len(times) < degree + 1:
        raise ValueError(f"need at least {degree + 1} time points, got {len(times)}")
    if np.any(np.diff(times) <= 0):
        bad = int(np.argmax(np.diff(times) <= 0))
        raise ValueError(f"times must be strictly increasing (violation at index {bad + 1})")
    inner = _interior_knots(times, interior)
    knots = np.concatenate(
        [np.repeat(times[0], degree + 1), inner, np.repeat(times[-1], degree + 1)]
    )
    d = len(inner) + degree + 1
    B = np.column_stack([_basis_row(knots, degree, t) for t in times])
    return SplineBasis(knots=knots, degree=degree, d=d, times=times, B=B)


def evaluate_at(basis, t):
    """Basis function values at a single time t inside the knot span."""
    if t < basis.knots[0] or t > basis.knots[-1]:
        raise ValueError(
            f"t={t} outside knot range [{basis.knots[0]}, {basis.knots[-1]}]"
        )
    return _basis_row(basis.knots, basis.degree, float(t))
