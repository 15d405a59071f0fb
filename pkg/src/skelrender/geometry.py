"""Scalar/vector/matrix primitives: rotations between vectors, Mahalanobis
forms on SPD shape matrices, and the complementary error function family.

Conventions: 3-vectors are numpy arrays of shape (3,), matrices (3, 3),
float64, row-major. Rotations are world-to-target unless stated otherwise.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInput, NotSpd

EPS_NORM = 1e-9
SQRT_PI = float(np.sqrt(np.pi))

_SERIES_CUTOFF = 2.5
_SERIES_TERMS = 72
_CF_LEVELS = 72


def normalize(v: np.ndarray) -> np.ndarray:
    """Unit vector along v. Raises DegenerateInput below the norm floor."""
    n = float(np.linalg.norm(v))
    if n <= EPS_NORM:
        raise DegenerateInput(f"vector norm {n} below {EPS_NORM}")
    return np.asarray(v, dtype=float) / n


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    if not np.all(np.isfinite(R)):
        return False
    ortho = np.max(np.abs(R.T @ R - np.eye(3)))
    return ortho <= tol and abs(np.linalg.det(R) - 1.0) <= tol


def symmetry_defect(A: np.ndarray) -> float:
    A = np.asarray(A, dtype=float)
    return float(np.max(np.abs(A - A.T)))


def require_spd(A: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Return A as float64 after checking symmetry and positive definiteness."""
    A = np.asarray(A, dtype=float)
    if A.shape != (3, 3) or not np.all(np.isfinite(A)):
        raise NotSpd("shape matrix must be a finite 3x3 array")
    if symmetry_defect(A) > tol * max(1.0, float(np.max(np.abs(A)))):
        raise NotSpd(f"matrix asymmetric beyond tolerance {tol}")
    try:
        np.linalg.cholesky(0.5 * (A + A.T))
    except np.linalg.LinAlgError:
        raise NotSpd("matrix is not positive definite") from None
    return A


def rotation_between(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Rotation R with R @ (x/|x|) = y/|y|, identity on the complement of
    span{x, y}.

    Built from the normalised vector rejection v of y on u = x/|x| and a
    2x2 Givens block acting in the (u, v) plane:

        R = I + (cos - 1)(u u^T + v v^T) + sin (v u^T - u v^T)

    Parallel inputs return the identity; anti-parallel inputs return a 180
    degree rotation about a deterministic axis orthogonal to x.
    """
    u = normalize(x)
    ny = float(np.linalg.norm(y))
    if ny <= EPS_NORM:
        raise DegenerateInput(f"vector norm {ny} below {EPS_NORM}")
    yhat = np.asarray(y, dtype=float) / ny

    c = float(np.dot(u, yhat))
    if c >= 1.0 - 1e-12:
        return np.eye(3)
    if c <= -1.0 + 1e-12:
        return _half_turn(u)

    rej = yhat - c * u
    v = rej / np.linalg.norm(rej)
    s = np.sqrt(max(0.0, 1.0 - c * c))
    uu = np.outer(u, u)
    vv = np.outer(v, v)
    return np.eye(3) + (c - 1.0) * (uu + vv) + s * (np.outer(v, u) - np.outer(u, v))


def _half_turn(u: np.ndarray) -> np.ndarray:
    # Axis orthogonal to u: zero the smallest component, swap the other two
    # with one sign flip.
    i = int(np.argmin(np.abs(u)))
    j, k = [d for d in range(3) if d != i]
    axis = np.zeros(3)
    axis[j] = -u[k]
    axis[k] = u[j]
    axis /= np.linalg.norm(axis)
    return 2.0 * np.outer(axis, axis) - np.eye(3)


def mahalanobis_sq(u: np.ndarray, v: np.ndarray, A: np.ndarray) -> float:
    """Squared Mahalanobis distance (u - v)^T A^{-1} (u - v) for SPD A."""
    A = require_spd(A)
    d = np.asarray(u, dtype=float) - np.asarray(v, dtype=float)
    return float(d @ np.linalg.solve(A, d))


# ---------------------------------------------------------------------------
# Complementary error function family.
#
# erfc is evaluated from two classical expansions rather than an external
# math library: for |x| <= 2.5 the all-positive-term rescaled Maclaurin
# series of erf,
#
#     erf(x) = (2/sqrt(pi)) e^{-x^2} sum_n (2x^2)^n x / (1*3*...*(2n+1)),
#
# and for x > 2.5 the Laplace continued fraction for the scaled function
#
#     erfcx(x) = e^{x^2} erfc(x) = (1/sqrt(pi)) / (x + (1/2)/(x + 1/(x + ...)))
#
# evaluated bottom-up at fixed depth. Negative arguments use the reflection
# erfc(-x) = 2 - erfc(x). Accuracy is pinned by tests against adaptive
# quadrature and a high-precision reference.
# ---------------------------------------------------------------------------


def _erf_series(a: np.ndarray) -> np.ndarray:
    # a >= 0, a <= _SERIES_CUTOFF
    term = a.copy()
    acc = a.copy()
    a2 = 2.0 * a * a
    for n in range(1, _SERIES_TERMS):
        term = term * a2 / (2.0 * n + 1.0)
        acc += term
    return (2.0 / SQRT_PI) * np.exp(-a * a) * acc


def _erfcx_cf(a: np.ndarray) -> np.ndarray:
    # a >= _SERIES_CUTOFF
    tail = np.zeros_like(a)
    for k in range(_CF_LEVELS, 0, -1):
        tail = (0.5 * k) / (a + tail)
    return (1.0 / SQRT_PI) / (a + tail)


def _erfc_nonneg(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    small = a <= _SERIES_CUTOFF
    if np.any(small):
        out[small] = 1.0 - _erf_series(a[small])
    if np.any(~small):
        b = a[~small]
        out[~small] = _erfcx_cf(b) * np.exp(-b * b)
    return out


def erfc(x):
    """Complementary error function, (2/sqrt(pi)) * integral_x^inf e^{-t^2} dt.

    Accepts scalars or arrays; total over all finite inputs.
    """
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr)
    pos = _erfc_nonneg(np.abs(x_arr))
    out = np.where(x_arr >= 0.0, pos, 2.0 - pos)
    return float(out[0]) if scalar else out


def erf(x):
    """Error function via erf(x) = 1 - erfc(x)."""
    return 1.0 - erfc(x)


def erfcx(x):
    """Scaled complementary error function e^{x^2} erfc(x).

    Overflows to +inf for x below about -26.6, where e^{x^2} leaves the
    double range; the library only evaluates it for x >= 0.
    """
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr)
    out = np.empty_like(x_arr)
    neg = x_arr < 0.0
    cf = x_arr >= _SERIES_CUTOFF
    mid = ~neg & ~cf
    if np.any(mid):
        a = x_arr[mid]
        out[mid] = np.exp(a * a) * (1.0 - _erf_series(a))
    if np.any(cf):
        out[cf] = _erfcx_cf(x_arr[cf])
    if np.any(neg):
        a = -x_arr[neg]
        with np.errstate(over="ignore"):
            out[neg] = 2.0 * np.exp(a * a) - erfcx(a)
    return float(out[0]) if scalar else out


def log_erfc(x):
    """log(erfc(x)), stable for large positive x via -x^2 + log(erfcx(x))."""
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr)
    out = np.empty_like(x_arr)
    hi = x_arr > _SERIES_CUTOFF
    if np.any(hi):
        a = x_arr[hi]
        out[hi] = -a * a + np.log(_erfcx_cf(a))
    if np.any(~hi):
        out[~hi] = np.log(erfc(x_arr[~hi]))
    return float(out[0]) if scalar else out


def dlog_erfc(x):
    """Derivative of log(erfc(x)): -(2/sqrt(pi)) e^{-x^2} / erfc(x)."""
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr)
    out = np.empty_like(x_arr)
    pos = x_arr > 0.0
    if np.any(pos):
        out[pos] = -(2.0 / SQRT_PI) / erfcx(x_arr[pos])
    if np.any(~pos):
        a = x_arr[~pos]
        out[~pos] = -(2.0 / SQRT_PI) * np.exp(-a * a) / erfc(a)
    return float(out[0]) if scalar else out
