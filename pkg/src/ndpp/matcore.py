"""Dense real-matrix helpers shared by the rest of the package.

Matrices are plain 2-D float64 numpy arrays; `as_mat` is the single
validation point.
"""
import math
import warnings

import numpy as np
import scipy.linalg

from .errors import DimensionError, SingularMatrix

# |det| below this is reported as singular (sign 0)
_TINY_DET = 1e-300
_PIVOT_RTOL = 1e-12


def as_mat(a, name="matrix"):
    """Return `a` as a finite 2-D float64 array, raising ValueError otherwise."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _require_square(a):
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")


def _lu(a):
    with warnings.catch_warnings():
        # singular input is reported by the callers, not by scipy
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        return scipy.linalg.lu_factor(a, check_finite=False)


def lu_logdet(a):
    """Sign and log|det| of a square matrix via partially pivoted LU.

    Returns ``(sign, log_abs_det)`` with sign in {-1, 0, +1}.  A sign of 0
    means the determinant underflows 1e-300 or a pivot is exactly zero; the
    log value is then -inf.
    """
    a = as_mat(a)
    _require_square(a)
    n = a.shape[0]
    if n == 0:
        return 1, 0.0
    lu, piv = _lu(a)
    diag = np.diag(lu)
    if np.any(diag == 0.0):
        return 0, -math.inf
    swaps = np.count_nonzero(piv != np.arange(n))
    sign = -1 if (swaps + np.count_nonzero(diag < 0)) % 2 else 1
    logabs = float(np.sum(np.log(np.abs(diag))))
    if logabs < math.log(_TINY_DET):
        return 0, -math.inf
    return sign, logabs


def solve(a, rhs):
    """Solve ``a @ x = rhs`` for square `a`.

    Raises SingularMatrix when a pivot falls below 1e-12 * max|a|.
    """
    a = as_mat(a)
    _require_square(a)
    b = np.asarray(rhs, dtype=np.float64)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    if b.shape[0] != a.shape[0]:
        raise DimensionError(f"rhs has {b.shape[0]} rows, matrix has {a.shape[0]}")
    if a.shape[0] == 0:
        return b[:, 0] if vector else b.copy()
    lu, piv = _lu(a)
    scale = np.max(np.abs(a))
    if scale == 0.0 or np.min(np.abs(np.diag(lu))) < _PIVOT_RTOL * scale:
        raise SingularMatrix("matrix is singular to working precision")
    x = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    return x[:, 0] if vector else x


def random_orthonormal(m, k, seed):
    """An m x k matrix with orthonormal columns, deterministic in `seed`.

    QR of a standard Gaussian matrix with the signs of R's diagonal folded
    into Q, which makes the draw Haar-distributed.
    """
    if k > m:
        raise DimensionError(f"cannot fit {k} orthonormal columns in dimension {m}")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((m, k))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def random_orthonormal_batch(rng, n, m, k):
    """`n` independent m x k orthonormal matrices drawn from generator `rng`."""
    if k > m:
        raise DimensionError(f"cannot fit {k} orthonormal columns in dimension {m}")
    q, r = np.linalg.qr(rng.standard_normal((n, m, k)))
    signs = np.sign(np.diagonal(r, axis1=1, axis2=2))
    signs[signs == 0] = 1.0
    return q * signs[:, None, :]
