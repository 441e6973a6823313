"""MAP inference and conditioning for low-rank NDPP kernels.

Greedy keeps, for the chosen set Y, rows p_j and q_j with
``sum_j p_j^T q_j = B_Y^T (B_Y C B_Y^T)^-1 B_Y`` so that every marginal
gain ``det(L_{Y+i}) / det(L_Y)`` is refreshed in O(r) per item without any
inverse.  Ties in every argmax go to the smallest item index.
"""
import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConditioning, DegenerateGain, DimensionError, TooLarge
from .matcore import lu_logdet

GAIN_FLOOR = 1e-12
EXACT_MAX_SUBSETS = 2_000_000


@dataclass(frozen=True)
class MapResult:
    items: tuple
    log_det: float
    wall_ms: float
    algorithm: str

    def to_dict(self):
        return {"algorithm": self.algorithm, "items": list(self.items),
                "log_det": self.log_det, "wall_ms": self.wall_ms}


class GreedyState:
    def __init__(self, kernel):
        self.kernel = kernel
        bt, ct = kernel.btilde, kernel.ctilde
        self._bc = bt @ ct          # rows b_i C
        self._bct = bt @ ct.T       # rows b_i C^T
        self._pq = np.zeros((kernel.r, kernel.r))   # running sum of p_j^T q_j
        self.chosen = []
        self.p_rows = []
        self.q_rows = []
        self.delta = np.einsum("ij,ij->i", self._bc, bt)
        self.log_det = 0.0
        self._mask = np.zeros(kernel.m, dtype=bool)

    @property
    def pq_sum(self):
        return self._pq.copy()

    def gain(self, a):
        return float(self.delta[a])

    def add(self, a):
        """Append item `a`, refreshing p, q and every unchosen gain."""
        da = self.delta[a]
        if not abs(da) > GAIN_FLOOR:
            raise DegenerateGain(f"marginal gain {da:.3e} of item {a} is degenerate")
        b_a = self.kernel.btilde[a]
        p = (b_a - self._bct[a] @ self._pq.T) / da
        q = b_a - self._bc[a] @ self._pq
        self._pq += np.outer(p, q)
        self.p_rows.append(p)
        self.q_rows.append(q)
        self.chosen.append(int(a))
        self._mask[a] = True
        self.log_det += math.log(da) if da > 0 else math.nan
        self.delta = self.delta - (self._bc @ p) * (self._bct @ q)

    def masked_delta(self):
        """Gains with chosen items set to -inf."""
        out = self.delta.copy()
        out[self._mask] = -np.inf
        return out


def _check_k(kernel, k):
    if not 1 <= k <= kernel.m:
        raise DimensionError(f"k must lie in [1, {kernel.m}], got {k}")


def _ms(t0):
    return 1000.0 * (time.perf_counter() - t0)


def _run_greedy(kernel, k, pick, name):
    t0 = time.perf_counter()
    state = GreedyState(kernel)
    for _ in range(k):
        a = pick(state)
        if state.delta[a] <= GAIN_FLOOR:
            partial = MapResult(tuple(state.chosen), state.log_det, _ms(t0), name)
            raise DegenerateGain(
                f"best gain {state.delta[a]:.3e} after {len(state.chosen)} items", partial)
        state.add(a)
    return MapResult(tuple(state.chosen), state.log_det, _ms(t0), name)


def greedy_map(kernel, k):
    """Greedy MAP: repeatedly add the item with the largest marginal gain."""
    _check_k(kernel, k)
    return _run_greedy(kernel, k, lambda s: int(np.argmax(s.masked_delta())), "greedy")


def stochastic_sample_size(m, k):
    return int(math.floor((m / k) * math.log(10)))


def stochastic_greedy(kernel, k, seed, sample_size=None):
    """Greedy whose argmax runs over a fresh random sample of unchosen items."""
    _check_k(kernel, k)
    rng = np.random.default_rng(seed)
    size = stochastic_sample_size(kernel.m, k) if sample_size is None else sample_size
    size = max(size, 1)

    def pick(state):
        gains = state.masked_delta()
        remaining = np.flatnonzero(np.isfinite(gains))
        if size < len(remaining):
            remaining = np.sort(rng.choice(remaining, size=size, replace=False))
        return int(remaining[np.argmax(gains[remaining])])

    return _run_greedy(kernel, k, pick, "sgreedy")


def condition_singletons(kernel, y):
    """Gains det(L_{Y+i}) / det(L_Y) for all i, i.e. the diagonal of the
    kernel conditioned on Y.  Entries for items in Y are -inf."""
    state = condition_state(kernel, y)
    return state.masked_delta()


def condition_state(kernel, y):
    state = GreedyState(kernel)
    for a in y:
        a = int(a)
        if a in state.chosen:
            raise ValueError(f"item {a} repeated in conditioning set")
        if not abs(state.delta[a]) > GAIN_FLOOR:
            raise DegenerateConditioning(
                f"conditioning on item {a} gives gain {state.delta[a]:.3e}")
        state.add(a)
    return state


def minor_logdet(kernel, items):
    """(sign, log|det|) of L_Y from the factors, without forming L."""
    if not len(items):
        return 1, 0.0
    return lu_logdet(kernel.minor(sorted(items)))


def _signed_logdet_value(sign, logabs):
    return logabs if sign > 0 else -math.inf


def swap_acceptance(det_new, det_cur):
    """Probability det_new / (det_new + det_cur) of accepting a swap."""
    if det_new <= 0:
        return 0.0
    if det_cur <= 0:
        return 1.0
    return det_new / (det_new + det_cur)


def mcmc_map(kernel, k, seed, n_swaps=None):
    """Best state visited by a Gibbs swap chain over size-k subsets.

    Runs floor(3M / K) swap proposals by default, K being the kernel's
    latent rank.
    """
    _check_k(kernel, k)
    t0 = time.perf_counter()
    m = kernel.m
    rng = np.random.default_rng(seed)
    n_swaps = (3 * m) // kernel.latent_rank if n_swaps is None else n_swaps
    current = sorted(int(i) for i in rng.choice(m, size=k, replace=False))
    cur_val = _signed_logdet_value(*minor_logdet(kernel, current))
    best, best_val = list(current), cur_val
    if k < m:
        for _ in range(n_swaps):
            out_pos = int(rng.integers(k))
            outside = np.setdiff1d(np.arange(m), current, assume_unique=True)
            j = int(outside[rng.integers(len(outside))])
            proposal = sorted(current[:out_pos] + current[out_pos + 1:] + [j])
            prop_val = _signed_logdet_value(*minor_logdet(kernel, proposal))
            if prop_val == -math.inf:
                continue
            if cur_val == -math.inf:
                accept = 1.0
            else:
                # det_new / (det_new + det_cur) in log space
                accept = 1.0 / (1.0 + math.exp(min(cur_val - prop_val, 700.0)))
            if rng.random() < accept:
                current, cur_val = proposal, prop_val
                if cur_val > best_val:
                    best, best_val = list(current), cur_val
    return MapResult(tuple(best), best_val, _ms(t0), "mcmc")


def local_search_budget(k):
    return int(math.floor(k * k * math.log(10 * k)))


def local_search(kernel, k, seed=None, max_swaps=None, min_gain=1e-10):
    """Swap search from the greedy solution.

    Each round conditions on Y minus one item i at a time; the gains then
    give det(L_{Y-i+j}) = det(L_{Y-i}) * gain_j for every j outside Y.  The
    best swap is taken if it beats det(L_Y) by more than a relative
    `min_gain`.  `seed` is accepted for interface symmetry; the search is
    deterministic.
    """
    t0 = time.perf_counter()
    start = greedy_map(kernel, k)
    budget = local_search_budget(k) if max_swaps is None else max_swaps
    items = list(start.items)
    value = start.log_det
    for _ in range(budget):
        chosen = set(items)
        best = None
        for pos, i in enumerate(items):
            rest = items[:pos] + items[pos + 1:]
            try:
                state = condition_state(kernel, rest)
            except DegenerateConditioning:
                continue
            base = state.log_det
            if not math.isfinite(base):
                continue
            gains = state.masked_delta()
            gains[list(chosen)] = -np.inf
            j = int(np.argmax(gains))
            if gains[j] <= 0:
                continue
            cand = base + math.log(gains[j])
            if best is None or cand > best[0]:
                best = (cand, pos, j)
        if best is None or best[0] <= value + min_gain * max(1.0, abs(value)):
            break
        cand, pos, j = best
        items = items[:pos] + items[pos + 1:] + [j]
        value = cand
    return MapResult(tuple(items), value, _ms(t0), "local")


def exact_map(kernel, k, chunk=8192):
    """Exhaustive argmax of det(L_Y) over all size-k subsets."""
    _check_k(kernel, k)
    total = math.comb(kernel.m, k)
    if total > EXACT_MAX_SUBSETS:
        raise TooLarge(f"C({kernel.m},{k}) = {total} subsets exceeds {EXACT_MAX_SUBSETS}")
    t0 = time.perf_counter()
    l = kernel.materialize()
    best_items, best_val = None, -math.inf
    combos = itertools.combinations(range(kernel.m), k)
    while True:
        batch = list(itertools.islice(combos, chunk))
        if not batch:
            break
        idx = np.asarray(batch)
        signs, logabs = np.linalg.slogdet(l[idx[:, :, None], idx[:, None, :]])
        vals = np.where(signs > 0, logabs, -np.inf)
        j = int(np.argmax(vals))
        if best_items is None or vals[j] > best_val:
            best_items, best_val = batch[j], float(vals[j])
    return MapResult(tuple(best_items), best_val, _ms(t0), "exact")


ALGORITHMS = {
    "greedy": lambda kern, k, seed: greedy_map(kern, k),
    "sgreedy": stochastic_greedy,
    "mcmc": mcmc_map,
    "local": local_search,
    "exact": lambda kern, k, seed: exact_map(kern, k),
}


def run_map(kernel, k, algo, seed=0):
    try:
        fn = ALGORITHMS[algo]
    except KeyError:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {sorted(ALGORITHMS)}") from None
    return fn(kernel, k, seed)
