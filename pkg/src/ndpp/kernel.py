"""NDPP kernel containers, conversions, P0 checks and the model file format.

The learnable kernel is ``L = V V^T + B C B^T`` with ``C = D - D^T``.  When
the model is tied, ``B`` is the same array as ``V``.
"""
import itertools
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, FormatError, NotSkewSymmetric, TooLarge
from .matcore import as_mat


@dataclass(frozen=True, eq=False)
class NdppParams:
    v: np.ndarray
    d: np.ndarray
    b: Optional[np.ndarray] = None
    tied: bool = True
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        v = as_mat(self.v, "v")
        d = as_mat(self.d, "d")
        m, k = v.shape
        if d.shape != (k, k):
            raise DimensionError(f"d must be {k}x{k}, got {d.shape}")
        if self.tied:
            if self.b is not None and self.b is not self.v:
                raise ValueError("tied parameters must not carry a separate b")
            b = None
        else:
            if self.b is None:
                raise ValueError("untied parameters need b")
            b = as_mat(self.b, "b")
            if b.shape != (m, k):
                raise DimensionError(f"b must be {m}x{k}, got {b.shape}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("regularization weights must be nonnegative")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def m(self):
        return self.v.shape[0]

    @property
    def k(self):
        return self.v.shape[1]

    @property
    def skew_factor(self):
        """The B factor, which is V itself for tied models."""
        return self.v if self.tied else self.b

    @property
    def c(self):
        return self.d - self.d.T

    def materialize(self):
        """The dense M x M kernel.  Only for small M (tests and oracles)."""
        bf = self.skew_factor
        return self.v @ self.v.T + bf @ self.c @ bf.T

    def replace(self, **changes):
        kw = dict(v=self.v, d=self.d, b=self.b, tied=self.tied,
                  alpha=self.alpha, beta=self.beta)
        kw.update(changes)
        if kw["tied"]:
            kw["b"] = None
        return NdppParams(**kw)

    def __eq__(self, other):
        if not isinstance(other, NdppParams):
            return NotImplemented
        same_b = (self.b is None and other.b is None) or (
            self.b is not None and other.b is not None and np.array_equal(self.b, other.b))
        return (self.tied == other.tied and self.alpha == other.alpha
                and self.beta == other.beta and same_b
                and np.array_equal(self.v, other.v) and np.array_equal(self.d, other.d))


@dataclass(frozen=True, eq=False)
class InferenceKernel:
    """Kernel in the form ``L = btilde @ ctilde @ btilde.T``."""

    btilde: np.ndarray
    ctilde: np.ndarray
    rank: Optional[int] = field(default=None)

    def __post_init__(self):
        bt = as_mat(self.btilde, "btilde")
        ct = as_mat(self.ctilde, "ctilde")
        if ct.shape != (bt.shape[1], bt.shape[1]):
            raise DimensionError(f"ctilde must be {bt.shape[1]}x{bt.shape[1]}, got {ct.shape}")
        object.__setattr__(self, "btilde", bt)
        object.__setattr__(self, "ctilde", ct)

    @property
    def m(self):
        return self.btilde.shape[0]

    @property
    def r(self):
        return self.btilde.shape[1]

    @property
    def latent_rank(self):
        """K used by swap budgets: the stored rank, else ceil(r / 2)."""
        if self.rank is not None:
            return self.rank
        return max(1, (self.r + 1) // 2)

    def materialize(self):
        return self.btilde @ self.ctilde @ self.btilde.T

    def minor(self, items):
        rows = self.btilde[list(items)]
        return rows @ self.ctilde @ rows.T

    def diagonal(self):
        return np.einsum("ij,ij->i", self.btilde @ self.ctilde, self.btilde)

    def scaled(self, factor):
        return InferenceKernel(self.btilde, self.ctilde * factor, self.rank)


def kernel_from_matrix(l):
    """Wrap a dense M x M kernel as an InferenceKernel (btilde = I)."""
    l = as_mat(l, "kernel")
    if l.shape[0] != l.shape[1]:
        raise DimensionError("kernel must be square")
    return InferenceKernel(np.eye(l.shape[0]), l.copy())


def to_inference_kernel(p):
    """Rewrite ``V V^T + B C B^T`` as ``[V | B] blockdiag(I, C) [V | B]^T``."""
    k = p.k
    btilde = np.hstack([p.v, p.skew_factor])
    ctilde = np.zeros((2 * k, 2 * k))
    ctilde[:k, :k] = np.eye(k)
    ctilde[k:, k:] = p.c
    return InferenceKernel(btilde, ctilde, rank=k)


@dataclass(frozen=True)
class BlockC:
    """Block-diagonal skew matrix with 2x2 blocks [[0, lam], [-lam, 0]]."""

    lambdas: tuple

    def __post_init__(self):
        lams = tuple(float(x) for x in self.lambdas)
        if any(not x > 0 for x in lams):
            raise ValueError("every lambda must be positive")
        object.__setattr__(self, "lambdas", lams)

    @property
    def ell(self):
        return 2 * len(self.lambdas)

    def materialize(self):
        c = np.zeros((self.ell, self.ell))
        for i, lam in enumerate(self.lambdas):
            c[2 * i, 2 * i + 1] = lam
            c[2 * i + 1, 2 * i] = -lam
        return c


def skew_factorize(a, tol=1e-10, rank_rtol=1e-10):
    """Factor a skew-symmetric matrix as ``b @ c.materialize() @ b.T``.

    Pairs are peeled off one at a time: the top eigenvector ``u`` of the
    symmetric PSD matrix ``a^T a`` (eigenvalue lam^2) spans, together with
    ``w = a u / lam``, an invariant plane on which ``a`` acts as
    ``lam (w u^T - u w^T)``.  That plane is removed from ``a`` and the
    process repeats until the numerical rank is used up.  Columns of ``b``
    are orthonormal and the lambdas come out nonincreasing.
    """
    a = as_mat(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError("matrix must be square")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if a.size and np.max(np.abs(a + a.T)) > tol:
        raise NotSkewSymmetric("a + a^T is not zero within tolerance")
    m = a.shape[0]
    if scale == 0.0:
        return np.zeros((m, 0)), BlockC(())
    sv = np.linalg.svd(a, compute_uv=False)
    rank = int(np.count_nonzero(sv > rank_rtol * sv[0]))
    npairs = rank // 2 + rank % 2

    resid = 0.5 * (a - a.T)
    cols, lams = [], []
    for _ in range(npairs):
        evals, evecs = np.linalg.eigh(resid.T @ resid)
        u = evecs[:, -1]
        au = resid @ u
        lam = float(np.linalg.norm(au))
        if lam <= rank_rtol * sv[0]:
            break
        w = au / lam
        # keep the plane exactly orthogonal to u and to earlier columns
        w -= (w @ u) * u
        for prev in cols:
            w -= (w @ prev) * prev
        w /= np.linalg.norm(w)
        lam = float(w @ resid @ u)
        block = lam * (np.outer(w, u) - np.outer(u, w))
        resid = resid - block
        cols.extend([w, u])
        lams.append(lam)

    order = np.argsort(-np.asarray(lams), kind="stable")
    b = np.empty((m, 2 * len(lams)))
    for j, idx in enumerate(order):
        b[:, 2 * j] = cols[2 * idx]
        b[:, 2 * j + 1] = cols[2 * idx + 1]
    return b, BlockC(tuple(lams[i] for i in order))


_P0_TOL = -1e-10
_P0_MAX_M = 25


def _subsets_by_size(m, size):
    return itertools.combinations(range(m), size)


def principal_minors(l, sizes=None, chunk=4096):
    """Yield ``(subset, det)`` for every principal minor with the given sizes."""
    l = as_mat(l)
    m = l.shape[0]
    sizes = range(1, m + 1) if sizes is None else sizes
    for s in sizes:
        combos = _subsets_by_size(m, s)
        while True:
            batch = list(itertools.islice(combos, chunk))
            if not batch:
                break
            idx = np.asarray(batch)
            sub = l[idx[:, :, None], idx[:, None, :]]
            dets = np.linalg.det(sub)
            yield from zip(batch, dets)


def check_p0(l):
    """True iff every nonempty principal minor is >= -1e-10."""
    l = as_mat(l)
    if l.shape[0] != l.shape[1]:
        raise DimensionError("kernel must be square")
    if l.shape[0] > _P0_MAX_M:
        raise TooLarge(f"P0 check enumerates 2^M minors; M={l.shape[0]} exceeds {_P0_MAX_M}")
    return all(det >= _P0_TOL for _, det in principal_minors(l))


def check_psd_quadratic(l, tol=1e-10):
    """True iff x^T L x >= -tol ||x||^2 for every x, i.e. the symmetric part is PSD."""
    l = as_mat(l)
    sym = 0.5 * (l + l.T)
    return bool(np.linalg.eigvalsh(sym)[0] >= -tol) if sym.size else True


# Model file: "NDPP" magic, u32 version, u64 M, u64 K, u8 tied, f64 alpha,
# f64 beta, then row-major little-endian f64 arrays V, [B], D.
_MAGIC = b"NDPP"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQBdd")


def model_to_bytes(p):
    head = _HEADER.pack(_MAGIC, _VERSION, p.m, p.k, int(p.tied), p.alpha, p.beta)
    arrays = [p.v] if p.tied else [p.v, p.b]
    arrays.append(p.d)
    body = b"".join(np.ascontiguousarray(x, dtype="<f8").tobytes() for x in arrays)
    return head + body


def model_from_bytes(blob):
    if len(blob) < _HEADER.size:
        raise FormatError("file shorter than the model header")
    magic, version, m, k, tied, alpha, beta = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported model format version {version}")
    if tied not in (0, 1):
        raise FormatError(f"bad tied flag {tied}")
    n_factors = 1 if tied else 2
    expected = _HEADER.size + 8 * (n_factors * m * k + k * k)
    if len(blob) != expected:
        raise FormatError(f"expected {expected} bytes for M={m}, K={k}, got {len(blob)}")
    flat = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    v = flat[: m * k].reshape(m, k)
    pos = m * k
    b = None
    if not tied:
        b = flat[pos: pos + m * k].reshape(m, k)
        pos += m * k
    d = flat[pos:].reshape(k, k)
    try:
        return NdppParams(v=v, d=d, b=b, tied=bool(tied), alpha=alpha, beta=beta)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def save_model(p, path):
    """Write `p` atomically: a failed write leaves no file at `path`."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(model_to_bytes(p))
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
