"""Dense linear algebra, small statistics, and verification helpers.

Everything here operates on float64 numpy arrays and is a pure function of
its inputs. Matrices are 2-D row-major arrays; no other layout is used
anywhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Condition-number ceiling for the polynomial fits. Above this the normal
# system is effectively rank deficient and coefficients are garbage.
MAX_FIT_CONDITION = 1e12

# Central-difference step that balances truncation against roundoff for
# unit-scale double-precision inputs.
DEFAULT_FD_STEP = 1e-5


def as_matrix(m) -> np.ndarray:
    """Coerce to a 2-D float64 array without copying when possible."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def check_finite(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Raises ValueError naming both shapes on a dimension mismatch.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction.

    Total on finite input; each output row sums to 1 within 1e-12.
    """
    m = as_matrix(m)
    if m.size == 0:
        raise ValueError("softmax_rows: empty matrix")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def l2_normalize_rows(m) -> np.ndarray:
    """Scale each row to unit Euclidean norm; all-zero rows pass through.

    Zero rows are legal inputs (zero-padded border patches), so they are
    returned unchanged rather than producing NaNs.
    """
    m = as_matrix(m)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return m / safe


def trend_slope(values) -> float:
    """Ordinary least-squares slope of a series against its indices 0..n-1."""
    v = np.asarray(values, dtype=np.float64).ravel()
    n = v.size
    if n < 2:
        raise ValueError(f"trend_slope needs at least 2 values, got {n}")
    idx = np.arange(n, dtype=np.float64)
    di = idx - idx.mean()
    dv = v - v.mean()
    return float(np.dot(di, dv) / np.dot(di, di))


@dataclass
class PolyCoeffs2D:
    """Bivariate polynomial sum_{i+j<=d} c[i,j] * x^i * y^j."""

    degree: int
    coeffs: dict[tuple[int, int], float]

    def __post_init__(self):
        expected = (self.degree + 1) * (self.degree + 2) // 2
        if len(self.coeffs) != expected:
            raise ValueError(
                f"degree {self.degree} needs {expected} coefficients, "
                f"got {len(self.coeffs)}"
            )


def poly_terms(degree: int) -> list[tuple[int, int]]:
    """Exponent pairs (i, j) with i+j <= degree, in a fixed order."""
    return [(i, j) for i in range(degree + 1) for j in range(degree + 1 - i)]


def polyfit_2d(samples, degree: int) -> tuple[PolyCoeffs2D, float]:
    """Least-squares bivariate polynomial fit.

    `samples` is a sequence of (x, y, z) triples. Returns the coefficients
    and the Euclidean norm of the residual at the sample points. Solved by
    an orthogonal decomposition plus one iterative-refinement step, which
    keeps the interpolation residual near machine precision even on poorly
    scaled domains. A design matrix with condition number above
    MAX_FIT_CONDITION is rejected.
    """
    pts = [(float(x), float(y), float(z)) for x, y, z in samples]
    terms = poly_terms(degree)
    n_coeff = len(terms)
    if len(pts) < n_coeff:
        raise ValueError(
            f"degree {degree} needs at least {n_coeff} samples, got {len(pts)}"
        )
    a = np.array([[x**i * y**j for i, j in terms] for x, y, _ in pts])
    z = np.array([z for _, _, z in pts])
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > MAX_FIT_CONDITION:
        raise ValueError(
            f"design matrix is rank deficient (condition number {cond:.3e})"
        )
    c, *_ = np.linalg.lstsq(a, z, rcond=None)
    # One refinement pass: re-solve on the residual to cancel roundoff.
    r = z - a @ c
    dc, *_ = np.linalg.lstsq(a, r, rcond=None)
    c = c + dc
    residual = float(np.linalg.norm(z - a @ c))
    coeffs = {term: float(ci) for term, ci in zip(terms, c)}
    return PolyCoeffs2D(degree=degree, coeffs=coeffs), residual


def poly_eval_2d(c: PolyCoeffs2D, x: float, y: float) -> float:
    return float(sum(v * x**i * y**j for (i, j), v in c.coeffs.items()))


def finite_diff_check(f, analytic_grad, at, step: float = DEFAULT_FD_STEP) -> float:
    """Compare an analytic gradient against central differences.

    `f` maps a matrix to a scalar. Returns the maximum entrywise relative
    error with denominator max(|analytic|, |numeric|, 1e-8). Non-finite
    evaluations of `f` are rejected.
    """
    if step <= 0:
        raise ValueError("finite_diff_check: step must be positive")
    at = as_matrix(at).copy()
    analytic = as_matrix(analytic_grad)
    if analytic.shape != at.shape:
        raise ValueError(
            f"gradient shape {analytic.shape} does not match input {at.shape}"
        )
    worst = 0.0
    for idx in np.ndindex(at.shape):
        orig = at[idx]
        at[idx] = orig + step
        f_plus = float(f(at))
        at[idx] = orig - step
        f_minus = float(f(at))
        at[idx] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"non-finite evaluation of f near index {idx}")
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = analytic[idx]
        denom = max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, abs(a - numeric) / denom)
    return worst
