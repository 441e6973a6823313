"""Recommendation metrics, MAP error, and the small-kernel greedy bound study."""
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .errors import BasketTooSmall, RejectionExhausted, TooLarge, ZeroReference
from .inference import condition_singletons, exact_map, greedy_map, DegenerateGain
from .kernel import InferenceKernel, NdppParams, check_p0, to_inference_kernel
from .likelihood import DEFAULT_EPS, per_subset_loglik
from .matcore import random_orthonormal_batch

N_BOOT = 1000
GREEDY_CONST = 4.0 * (1.0 - math.exp(-0.25))


def _as_kernel(model):
    if isinstance(model, NdppParams):
        return to_inference_kernel(model)
    return model


def bootstrap_ci(values, seed, n_boot=N_BOOT, stat=np.mean, level=0.95):
    """Percentile bootstrap CI of ``stat`` over resampled `values`."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return (math.nan, math.nan)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    stats = np.array([stat(values[row]) for row in idx])
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(stats, [tail, 100 - tail])
    return float(lo), float(hi)


def percentile_rank(scores, target, pool):
    """100 * |{i' in pool : score[target] >= score[i']}| / |pool|."""
    pool = np.asarray(pool)
    return 100.0 * np.count_nonzero(scores[target] >= scores[pool]) / len(pool)


def mpr(model, test, seed, n_boot=N_BOOT, scorer=None):
    """Mean percentile rank of a randomly held-out item from each basket.

    Scores come from conditioning the kernel on the rest of the basket;
    `scorer(J) -> length-M scores` overrides that (used for baselines).
    Returns ``(value, (lo, hi))``.
    """
    kernel = _as_kernel(model)
    if scorer is None:
        scorer = lambda j: condition_singletons(kernel, j)  # noqa: E731
    rng = np.random.default_rng(seed)
    m = test.m
    prs = []
    for y in test.baskets:
        if len(y) < 2:
            raise BasketTooSmall(f"basket {y} has fewer than 2 items")
        held = y[int(rng.integers(len(y)))]
        rest = [i for i in y if i != held]
        scores = np.asarray(scorer(rest), dtype=np.float64)
        outside = np.ones(m, dtype=bool)
        outside[rest] = False
        prs.append(percentile_rank(scores, held, np.flatnonzero(outside)))
    prs = np.asarray(prs)
    return float(prs.mean()), bootstrap_ci(prs, seed + 1, n_boot)


def auc_score(pos, neg):
    """Mann-Whitney AUC: P(pos > neg) + 0.5 P(pos == neg)."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    ranks = rankdata(np.concatenate([pos, neg]))
    n1, n2 = len(pos), len(neg)
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n2))


def random_baskets_like(baskets, m, rng):
    return [tuple(int(i) for i in rng.choice(m, size=len(y), replace=False)) for y in baskets]


def auc_discrimination(model, test, seed, n_boot=N_BOOT, eps=DEFAULT_EPS, score_fn=None):
    """AUC for telling observed baskets from uniform random ones of equal size.

    Baskets are scored by unregularized model log-likelihood; `score_fn`
    (list of baskets -> scores) overrides that.  The bootstrap resamples
    observed/random pairs.  Returns ``(value, (lo, hi))``.
    """
    if not len(test):
        raise ValueError("test set is empty")
    rng = np.random.default_rng(seed)
    fake = random_baskets_like(test.baskets, test.m, rng)
    if score_fn is None:
        score_fn = lambda sets: per_subset_loglik(model, sets, eps)  # noqa: E731
    pos = np.asarray(score_fn(test.baskets), dtype=np.float64)
    neg = np.asarray(score_fn(fake), dtype=np.float64)
    value = auc_score(pos, neg)
    brng = np.random.default_rng(seed + 1)
    n = len(pos)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        idx = brng.integers(0, n, size=n)
        boots[b] = auc_score(pos[idx], neg[idx])
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return value, (float(lo), float(hi))


def heldout_loglik(model, test, seed, eps=DEFAULT_EPS, n_boot=N_BOOT):
    """Mean per-basket log-likelihood on held-out baskets, with bootstrap CI."""
    ll = per_subset_loglik(model, test.baskets, eps)
    return float(ll.mean()), bootstrap_ci(ll, seed, n_boot)


def relative_logdet_error(candidate, reference):
    """|(ref - cand) / ref| on log-determinants."""
    ref = reference.log_det
    if ref == 0:
        raise ZeroReference("reference log-determinant is zero")
    return abs((ref - candidate.log_det) / ref)


@dataclass
class EvalReport:
    mpr: Optional[float] = None
    mpr_ci: Optional[tuple] = None
    auc: Optional[float] = None
    auc_ci: Optional[tuple] = None
    test_loglik: Optional[float] = None
    test_loglik_ci: Optional[tuple] = None
    rel_errors: dict = field(default_factory=dict)

    def as_row(self):
        row = {}
        for name in ("mpr", "auc", "test_loglik"):
            val = getattr(self, name)
            if val is None:
                continue
            lo, hi = getattr(self, name + "_ci")
            row.update({name: val, name + "_lo": lo, name + "_hi": hi})
        return row


def evaluate(model, test, metrics=("mpr", "auc", "ll"), seed=0, eps=DEFAULT_EPS):
    report = EvalReport()
    if "mpr" in metrics:
        report.mpr, report.mpr_ci = mpr(model, test, seed)
    if "auc" in metrics:
        report.auc, report.auc_ci = auc_discrimination(model, test, seed, eps=eps)
    if "ll" in metrics:
        report.test_loglik, report.test_loglik_ci = heldout_loglik(model, test, seed, eps)
    return report


def _p0_mask(ls, tol=-1e-10):
    """Vectorized P0 screen of a stack of small kernels, cheapest minors first."""
    n, m, _ = ls.shape
    alive = np.arange(n)
    for size in range(1, m + 1):
        for combo in itertools.combinations(range(m), size):
            if not len(alive):
                return alive
            c = list(combo)
            dets = np.linalg.det(ls[alive][:, c][:, :, c])
            alive = alive[dets >= tol]
    return alive


def sample_synthetic_p0(m=5, k=3, singular_values=(3.0, 2.0, 1.0), seed=0,
                        max_tries=2_000_000, symmetric=False, batch=8192):
    """Rejection-sample ``L = V1 diag(s) V2^T`` until L is a P0 matrix.

    V1, V2 are random m x k orthonormal matrices (QR of Gaussians with sign
    fixing); the symmetric variant uses V1 = V2, which is always accepted.
    Draws are screened in vectorized batches but consumed in draw order, so
    the result depends only on `seed`.  The kernel is returned in factored
    form with ``btilde = [V1 | V2]`` and ``ctilde = [[0, diag(s)], [0, 0]]``.
    """
    if not k <= m <= 25:
        raise TooLarge("need k <= m <= 25")
    s = np.asarray(singular_values, dtype=np.float64)
    if s.shape != (k,):
        raise ValueError(f"need {k} singular values")
    rng = np.random.default_rng(seed)
    tried = 0
    while tried < max_tries:
        n = min(batch, max_tries - tried)
        tried += n
        v1 = random_orthonormal_batch(rng, n, m, k)
        v2 = v1 if symmetric else random_orthonormal_batch(rng, n, m, k)
        ls = (v1 * s) @ v2.transpose(0, 2, 1)
        for j in _p0_mask(ls):
            if symmetric:
                kern = InferenceKernel(v1[j], np.diag(s), rank=k)
            else:
                ct = np.zeros((2 * k, 2 * k))
                ct[:k, k:] = np.diag(s)
                kern = InferenceKernel(np.hstack([v1[j], v2[j]]), ct, rank=k)
            if check_p0(kern.materialize()):
                return kern
    raise RejectionExhausted(f"no P0 kernel in {max_tries} draws")


@dataclass
class ApproxBoundReport:
    sigma_min: float
    sigma_max: float
    kappa: float
    k: int
    greedy_logdet: float
    exact_logdet: float
    greedy_ratio: float
    log_kappa_ratio: Optional[float] = None
    thm2_bound: Optional[float] = None
    cor1_multiplier: Optional[float] = None
    cor1_additive: Optional[float] = None

    @property
    def cor1_bound(self):
        """Lower bound on the greedy log det: multiplier * log det* - additive."""
        if self.cor1_multiplier is None:
            return None
        if self.cor1_additive == math.inf:
            return -math.inf
        return self.cor1_multiplier * self.exact_logdet - self.cor1_additive

    def as_row(self):
        return {
            "k": self.k, "sigma_min": self.sigma_min, "sigma_max": self.sigma_max,
            "kappa": self.kappa, "log_kappa_ratio": self.log_kappa_ratio,
            "thm2_bound": self.thm2_bound, "cor1_multiplier": self.cor1_multiplier,
            "cor1_additive": self.cor1_additive, "cor1_bound": self.cor1_bound,
            "greedy_logdet": self.greedy_logdet, "exact_logdet": self.exact_logdet,
            "greedy_ratio": self.greedy_ratio,
        }


def minor_singular_range(l, max_size):
    """Smallest and largest singular values over all principal minors up to `max_size`."""
    m = l.shape[0]
    lo, hi = math.inf, 0.0
    for size in range(1, min(max_size, m) + 1):
        idx = np.asarray(list(itertools.combinations(range(m), size)))
        sv = np.linalg.svd(l[idx[:, :, None], idx[:, None, :]], compute_uv=False)
        lo = min(lo, float(sv.min()))
        hi = max(hi, float(sv.max()))
    return lo, hi


def multiplicative_bound(sigma_min, sigma_max):
    """Greedy/optimal log-det ratio guarantee; requires sigma_min > 1."""
    ratio = math.log(sigma_max) / math.log(sigma_min)
    return GREEDY_CONST / (2.0 * ratio - 1.0), ratio


def additive_bound_terms(sigma_min, sigma_max, k):
    """(multiplier, additive) of the bound without the sigma_min > 1 condition."""
    if sigma_min <= 0:
        return 0.0, math.inf
    mult = GREEDY_CONST / (2.0 * math.log(sigma_max / sigma_min) + 1.0)
    return mult, (1.0 - mult) * k * (1.0 - math.log(sigma_min))


def approx_bound_study(kernel, kcap):
    """Greedy vs exact MAP on a small kernel, with both guarantee forms."""
    if kernel.m > 12:
        raise TooLarge("minor enumeration is limited to M <= 12")
    l = kernel.materialize()
    smin, smax = minor_singular_range(l, 2 * kcap)
    try:
        g = greedy_map(kernel, kcap)
    except DegenerateGain as exc:
        g = exc.partial
        g = type(g)(g.items, -math.inf, g.wall_ms, g.algorithm)
    e = exact_map(kernel, kcap)
    ratio = g.log_det / e.log_det if e.log_det not in (0.0, -math.inf) else math.nan
    report = ApproxBoundReport(
        sigma_min=smin, sigma_max=smax,
        kappa=smax / smin if smin > 0 else math.inf,
        k=kcap, greedy_logdet=g.log_det, exact_logdet=e.log_det, greedy_ratio=ratio)
    if smin > 1:
        report.thm2_bound, report.log_kappa_ratio = multiplicative_bound(smin, smax)
    report.cor1_multiplier, report.cor1_additive = additive_bound_terms(smin, smax, kcap)
    return report


def sample_baskets_mcmc(kernel, n, seed, burn_in=2000, thin=50, max_size=None):
    """Draw subsets approximately from Pr(Y) ~ det(L_Y) by a toggle chain.

    Each move proposes adding or removing one uniformly chosen item and
    accepts with the Metropolis ratio of determinants.  Only meant for
    building synthetic datasets from a planted kernel.  Empty states are
    visited by the chain but never emitted.
    """
    from .inference import minor_logdet

    rng = np.random.default_rng(seed)
    m = kernel.m
    cur = set()
    cur_val = 0.0
    out = []
    step = 0
    while len(out) < n:
        i = int(rng.integers(m))
        prop = cur ^ {i}
        if max_size is None or len(prop) <= max_size:
            sign, val = minor_logdet(kernel, sorted(prop))
            if sign > 0 and math.log(rng.random() + 1e-300) < val - cur_val:
                cur, cur_val = prop, val
        step += 1
        if step > burn_in and step % thin == 0 and cur:
            out.append(tuple(sorted(cur)))
    return out
