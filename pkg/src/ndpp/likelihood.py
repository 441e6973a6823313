"""Regularized NDPP log-likelihood and its gradient in time linear in M.

With ``W = [V | B]`` and ``Ct = blockdiag(I_K, C)`` the kernel is
``L = W Ct W^T``, so ``det(I_M + L) = det(I_2K + W^T W Ct)``.  The
normalizer and its gradient only ever touch 2K x 2K matrices plus a single
pass over the M rows of ``W``.  Nothing here needs C to be invertible,
which matters because ``C = D - D^T`` is singular whenever K is odd.
"""
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonPositiveMinor, NumericalFailure, ZeroCount
from .matcore import lu_logdet

DEFAULT_EPS = 1e-5


@dataclass(frozen=True)
class LikelihoodReport:
    mean_subset_logdet: float
    log_normalizer: float
    reg: float
    objective: float
    feasible: bool = True


@dataclass(frozen=True, eq=False)
class Gradients:
    """Gradient of the objective (ascent direction).  ``gb`` is None when tied."""

    gv: np.ndarray
    gd: np.ndarray
    gb: Optional[np.ndarray] = None


def _blocks(p):
    k = p.k
    w = np.hstack([p.v, p.skew_factor])
    ct = np.zeros((2 * k, 2 * k))
    ct[:k, :k] = np.eye(k)
    ct[k:, k:] = p.c
    return w, ct


def _normalizer_system(p):
    w, ct = _blocks(p)
    gram = w.T @ w
    n = np.eye(2 * p.k) + gram @ ct
    return w, ct, gram, n


def log_normalizer(p):
    """log det(I + L) through the 2K x 2K identity; never forms an M x M matrix."""
    _, _, _, n = _normalizer_system(p)
    sign, logabs = lu_logdet(n)
    if sign <= 0:
        raise NumericalFailure("det(I + L) is not positive; kernel is not a valid NDPP")
    return logabs


def _normalizer_and_grad(p):
    w, ct, gram, n = _normalizer_system(p)
    sign, logabs = lu_logdet(n)
    if sign <= 0:
        raise NumericalFailure("det(I + L) is not positive; kernel is not a valid NDPP")
    ninv = np.linalg.inv(n)
    # d log det(I + G Ct) = tr(N^-1 dG Ct) + tr(N^-1 G dCt),  G = W^T W
    gw = w @ (ct @ ninv + ninv.T @ ct.T)
    gct = gram.T @ ninv.T
    k = p.k
    return logabs, gw[:, :k], gw[:, k:], gct[k:, k:]


def normalizer_grad_schur(p):
    """Gradient of log det(I + L) from the Schur-complement factorization.

    Uses ``X = I - V (I_K + V^T V)^-1 V^T`` and ``S = C^-1 + B^T X B``.  Needs
    C invertible; this is an independent cross-check of the inverse-free
    path, not used in training.  Returns ``(gV, gB, gC)``.
    """
    v, b, c = p.v, p.skew_factor, p.c
    k = p.k
    if abs(np.linalg.det(c)) <= 1e-10:
        raise NumericalFailure("C is singular; the Schur-form gradient does not apply")
    a = np.eye(k) + v.T @ v
    ainv = np.linalg.inv(a)
    xb = b - v @ (ainv @ (v.T @ b))
    xv = v - v @ (ainv @ (v.T @ v))
    cinv = np.linalg.inv(c)
    s = cinv + b.T @ xb
    sinv = np.linalg.inv(s)
    sym = sinv + sinv.T
    gv = 2 * v @ ainv - xb @ sym @ (b.T @ xv)
    gb = xb @ sym
    gc = cinv.T - cinv.T @ sinv.T @ cinv.T
    return gv, gb, gc


def _stabilized_minor(w, ct, items, eps):
    rows = w[list(items)]
    return rows @ ct @ rows.T + eps * np.eye(len(items))


def subset_logdet(p, y, eps=DEFAULT_EPS):
    """log det(L_Y + eps I) on the |Y| x |Y| minor."""
    y = list(y)
    if not y:
        raise ValueError("subset must be nonempty")
    if min(y) < 0 or max(y) >= p.m:
        raise IndexError(f"subset indices must lie in [0, {p.m})")
    w, ct = _blocks(p)
    sign, logabs = lu_logdet(_stabilized_minor(w, ct, y, eps))
    if sign <= 0:
        raise NonPositiveMinor(f"det(L_Y + eps I) <= 0 for Y={sorted(y)}")
    return logabs


def _check_mu(mu, m):
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (m,):
        raise ValueError(f"mu must have length {m}")
    if np.any(mu <= 0):
        raise ZeroCount(f"{int(np.count_nonzero(mu <= 0))} items have zero occurrence count")
    return mu


def regularizer(p, mu):
    """alpha * sum ||v_i||^2 / mu_i  (+ beta * sum ||b_i||^2 / mu_i when untied)."""
    if p.alpha == 0.0 and (p.tied or p.beta == 0.0):
        return 0.0
    mu = _check_mu(mu, p.m)
    total = p.alpha * float(np.sum(np.sum(p.v ** 2, axis=1) / mu))
    if not p.tied:
        total += p.beta * float(np.sum(np.sum(p.b ** 2, axis=1) / mu))
    return total


def _regularizer_grad(p, mu):
    if p.alpha == 0.0 and (p.tied or p.beta == 0.0):
        return np.zeros_like(p.v), None if p.tied else np.zeros_like(p.v)
    mu = _check_mu(mu, p.m)
    gv = 2 * p.alpha * p.v / mu[:, None]
    gb = None if p.tied else 2 * p.beta * p.b / mu[:, None]
    return gv, gb


def _group_by_size(batch):
    groups = defaultdict(list)
    for y in batch:
        groups[len(y)].append(tuple(y))
    return [(s, np.asarray(groups[s], dtype=np.intp)) for s in sorted(groups)]


def batch_subset_terms(p, batch, eps=DEFAULT_EPS, with_grad=True):
    """Sum of log det(L_Y + eps I) over `batch`, with optional gradients.

    Subsets of equal size are stacked so each group costs one batched LU.
    Returns ``(total, feasible, gW, gC)``; on infeasibility total is -inf and
    gradients are None.
    """
    w, ct = _blocks(p)
    total = 0.0
    gw = np.zeros_like(w) if with_grad else None
    gct = np.zeros_like(ct) if with_grad else None
    for size, idx in _group_by_size(batch):
        rows = w[idx]                                     # (n, s, 2K)
        minors = rows @ ct @ rows.transpose(0, 2, 1) + eps * np.eye(size)
        signs, logabs = np.linalg.slogdet(minors)
        if np.any(signs <= 0) or not np.all(np.isfinite(logabs)):
            return -math.inf, False, None, None
        total += float(np.sum(logabs))
        if with_grad:
            inv = np.linalg.inv(minors)
            inv_t = inv.transpose(0, 2, 1)
            grows = inv_t @ rows @ ct.T + inv @ rows @ ct
            np.add.at(gw, idx.ravel(), grows.reshape(-1, w.shape[1]))
            gct += np.einsum("nsa,nst,ntb->ab", rows, inv_t, rows)
    return total, True, gw, gct


def objective_and_grad(p, batch, mu, eps=DEFAULT_EPS):
    """Regularized log-likelihood over `batch` and its gradient.

    The subset term is averaged over the batch.  A subset whose stabilized
    minor has nonpositive determinant makes the report infeasible:
    objective -inf and zero gradients.
    """
    k = p.k
    batch = [tuple(y) for y in batch]
    n = len(batch)
    z, gzv, gzb, gzc = _normalizer_and_grad(p)
    reg = regularizer(p, mu)
    grv, grb = _regularizer_grad(p, mu)

    if n:
        total, ok, gw, gct = batch_subset_terms(p, batch, eps)
    else:
        total, ok, gw, gct = 0.0, True, np.zeros((p.m, 2 * k)), np.zeros((2 * k, 2 * k))
    if not ok:
        zero_b = None if p.tied else np.zeros_like(p.v)
        report = LikelihoodReport(-math.inf, z, reg, -math.inf, feasible=False)
        return report, Gradients(np.zeros_like(p.v), np.zeros_like(p.d), zero_b)

    mean_term = total / n if n else 0.0
    scale = 1.0 / n if n else 0.0
    g_v = scale * gw[:, :k] - gzv - grv
    g_b = scale * gw[:, k:] - gzb
    g_c = scale * gct[k:, k:] - gzc
    g_d = g_c - g_c.T
    if p.tied:
        grads = Gradients(gv=g_v + g_b, gd=g_d)
    else:
        grads = Gradients(gv=g_v, gd=g_d, gb=g_b - grb)
    report = LikelihoodReport(mean_term, z, reg, mean_term - z - reg)
    return report, grads


def objective(p, batch, mu, eps=DEFAULT_EPS):
    """Objective value only (no gradient)."""
    batch = [tuple(y) for y in batch]
    z = log_normalizer(p)
    reg = regularizer(p, mu)
    if not batch:
        return LikelihoodReport(0.0, z, reg, -z - reg)
    total, ok, _, _ = batch_subset_terms(p, batch, eps, with_grad=False)
    if not ok:
        return LikelihoodReport(-math.inf, z, reg, -math.inf, feasible=False)
    mean_term = total / len(batch)
    return LikelihoodReport(mean_term, z, reg, mean_term - z - reg)


def per_subset_loglik(p, subsets, eps=DEFAULT_EPS):
    """Unregularized log Pr(Y) = log det(L_Y + eps I) - log det(I + L) per subset."""
    z = log_normalizer(p)
    w, ct = _blocks(p)
    out = np.empty(len(subsets))
    for i, y in enumerate(subsets):
        sign, logabs = lu_logdet(_stabilized_minor(w, ct, y, eps))
        out[i] = logabs - z if sign > 0 else -math.inf
    return out
