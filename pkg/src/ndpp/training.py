"""Basket data, parameter initialization and the Adam training loop."""
import csv
import dataclasses
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import Diverged, EmptyDataset, SplitTooLarge, UnknownItem
from .kernel import NdppParams
from .likelihood import DEFAULT_EPS, batch_subset_terms, objective, objective_and_grad

log = logging.getLogger(__name__)

MAX_BASKET = 100


@dataclass
class BasketDataset:
    m: int
    baskets: list
    mu: np.ndarray = None
    item_vocab: Optional[list] = None

    def __post_init__(self):
        self.baskets = [tuple(int(i) for i in y) for y in self.baskets]
        for y in self.baskets:
            if not y:
                raise ValueError("empty basket")
            if len(set(y)) != len(y):
                raise ValueError(f"duplicate items in basket {y}")
            if min(y) < 0 or max(y) >= self.m:
                raise ValueError(f"basket {y} has items outside [0, {self.m})")
        counts = item_counts(self.baskets, self.m)
        if self.mu is None:
            self.mu = counts
        elif not np.array_equal(np.asarray(self.mu), counts):
            raise ValueError("mu does not match the basket occurrence counts")
        if self.item_vocab is not None and len(self.item_vocab) != self.m:
            raise ValueError("vocabulary size differs from m")

    def __len__(self):
        return len(self.baskets)

    @property
    def max_size(self):
        return max((len(y) for y in self.baskets), default=0)

    def subset(self, indices):
        return BasketDataset(self.m, [self.baskets[i] for i in indices],
                             item_vocab=self.item_vocab)


def item_counts(baskets, m):
    mu = np.zeros(m, dtype=np.int64)
    for y in baskets:
        mu[list(y)] += 1
    return mu


def _dedup(tokens):
    return list(dict.fromkeys(tokens))


def load_baskets(path, max_basket=MAX_BASKET, vocab=None):
    """Read one basket per line of whitespace-separated item tokens.

    Tokens get dense indices in order of first appearance among the kept
    baskets.  With a fixed `vocab` (index -> token list) tokens are looked
    up instead and unknown ones raise UnknownItem.
    """
    baskets = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            tokens = _dedup(line.split())
            if tokens and len(tokens) <= max_basket:
                baskets.append(tokens)
    if not baskets:
        raise EmptyDataset(f"no usable baskets in {path}")
    if vocab is not None:
        index = {tok: i for i, tok in enumerate(vocab)}
        unknown = sorted({t for y in baskets for t in y if t not in index})
        if unknown:
            raise UnknownItem(unknown)
        vocab = list(vocab)
    else:
        index = {}
        for y in baskets:
            for t in y:
                index.setdefault(t, len(index))
        vocab = list(index)
    return BasketDataset(len(vocab), [[index[t] for t in y] for y in baskets],
                         item_vocab=vocab)


def save_baskets(data, path):
    names = data.item_vocab or [str(i) for i in range(data.m)]
    with open(path, "w", encoding="utf-8") as fh:
        for y in data.baskets:
            fh.write(" ".join(names[i] for i in y) + "\n")


@dataclass
class TrainConfig:
    k: Optional[int] = None          # None -> largest training basket
    tied: bool = True
    learn_skew: bool = True          # False trains the symmetric ablation (C = 0)
    alpha: float = 0.0
    beta: float = 0.0
    batch_size: int = 200
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eps_minor: float = DEFAULT_EPS
    val_size: int = 300
    test_size: int = 2000
    conv_rel_tol: float = 1e-4
    conv_patience: int = 3
    max_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.conv_rel_tol < 1:
            raise ValueError("conv_rel_tol must lie in [0, 1)")
        if self.batch_size < 1 or self.conv_patience < 1 or self.max_epochs < 0:
            raise ValueError("batch_size and conv_patience must be >= 1, max_epochs >= 0")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")

    @classmethod
    def from_file(cls, path):
        """Parse a flat ``key = value`` file; ``#`` starts a comment."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value")
                key, val = (s.strip() for s in line.split("=", 1))
                if key not in types:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = _parse_value(val, types[key])
        return cls(**values)

    def to_dict(self):
        return dataclasses.asdict(self)


def _parse_value(text, typ):
    typ = str(typ)
    if text.lower() in ("none", "") and "Optional" in typ:
        return None
    if "bool" in typ:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if "int" in typ:
        return int(text)
    return float(text)


@dataclass
class TraceRow:
    step: int
    epoch: int
    wall_ms: float
    train_nll: float
    val_ll: float


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)

    def append(self, row):
        if self.rows and row.wall_ms < self.rows[-1].wall_ms:
            raise ValueError("wall clock went backwards")
        self.rows.append(row)

    def write_csv(self, path):
        tmp = f"{os.fspath(path)}.tmp{os.getpid()}"
        try:
            with open(tmp, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["step", "epoch", "wall_ms", "train_nll", "val_ll"])
                for r in self.rows:
                    w.writerow([r.step, r.epoch, f"{r.wall_ms:.3f}",
                                repr(r.train_nll), repr(r.val_ll)])
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.remove(tmp)


def split(data, cfg, seed):
    """Random disjoint (train, val, test) split; each part recounts its own mu."""
    n = len(data)
    if cfg.val_size + cfg.test_size >= n:
        raise SplitTooLarge(
            f"val_size + test_size = {cfg.val_size + cfg.test_size} leaves no training baskets (n={n})")
    perm = np.random.default_rng(seed).permutation(n)
    val = perm[: cfg.val_size]
    test = perm[cfg.val_size: cfg.val_size + cfg.test_size]
    train = perm[cfg.val_size + cfg.test_size:]
    return data.subset(train), data.subset(val), data.subset(test)


def init_params(m, cfg, seed):
    """V (and B when untied) ~ uniform(0, 1); D ~ N(0, 1)."""
    if m < 1 or cfg.k is None or cfg.k < 1:
        raise ValueError("need m >= 1 and a resolved rank k >= 1")
    rng = np.random.default_rng(seed)
    k = cfg.k
    v = rng.uniform(0.0, 1.0, (m, k))
    b = None if cfg.tied else rng.uniform(0.0, 1.0, (m, k))
    d = rng.standard_normal((k, k)) if cfg.learn_skew else np.zeros((k, k))
    return NdppParams(v=v, d=d, b=b, tied=cfg.tied, alpha=cfg.alpha, beta=cfg.beta)


class Adam:
    """Adam with bias correction over a dict of named arrays."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def state(self):
        return self.t, {k: a.copy() for k, a in self.m.items()}, {k: a.copy() for k, a in self.v.items()}

    def restore(self, state):
        self.t, self.m, self.v = state[0], state[1], state[2]

    def step(self, params, grads, lr=None):
        """Return updated copies of `params` for minimizing; inputs are not modified."""
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        out = {}
        for name, theta in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(theta)
                self.v[name] = np.zeros_like(theta)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            out[name] = theta - lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def _trainable(p, cfg):
    names = ["v"]
    if not p.tied:
        names.append("b")
    if cfg.learn_skew:
        names.append("d")
    return names


class Trainer:
    """One optimization run.  `step` is exposed for unit testing."""

    def __init__(self, params, cfg, mu):
        self.params = params
        self.cfg = cfg
        self.mu = np.maximum(np.asarray(mu, dtype=np.float64), 1.0)
        self.adam = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.names = _trainable(params, cfg)

    def _feasible(self, p, batch):
        _, ok, _, _ = batch_subset_terms(p, batch, self.cfg.eps_minor, with_grad=False)
        return ok

    def step(self, batch):
        """One Adam ascent step on `batch`.  Returns ``(report, accepted)``.

        A step is rejected (parameters and Adam state left exactly as they
        were) when the current objective is -inf, or when the update lands
        on a -inf objective even after halving the learning rate once.
        """
        p = self.params
        report, grads = objective_and_grad(p, batch, self.mu, self.cfg.eps_minor)
        if not report.feasible:
            return report, False
        current = {n: getattr(p, n) for n in self.names}
        neg = {n: -getattr(grads, "g" + n) for n in self.names}
        saved = self.adam.state()
        for lr in (self.cfg.learning_rate, 0.5 * self.cfg.learning_rate):
            updated = self.adam.step(current, neg, lr=lr)
            candidate = p.replace(**updated)
            if self._feasible(candidate, batch):
                self.params = candidate
                return report, True
            self.adam.restore(saved)
            saved = self.adam.state()
        return report, False


def _val_loglik(p, val, eps):
    if not len(val):
        return math.nan
    rep = objective(p.replace(alpha=0.0, beta=0.0), val.baskets, np.ones(p.m), eps)
    return rep.objective


def _train_nll(p, train, mu, eps):
    return -objective(p, train.baskets, mu, eps).objective


def fit(train, val, cfg, params=None):
    """Train on `train`, track validation log-likelihood on `val`.

    Returns the parameters with the best validation score and the trace.
    Validation scores exclude the regularizer.  Stops after `conv_patience`
    consecutive epochs whose relative validation change is below
    `conv_rel_tol`, or after `max_epochs`.
    """
    cfg = dataclasses.replace(cfg, k=cfg.k or train.max_size)
    if params is None:
        params = init_params(train.m, cfg, cfg.seed)
    mu = np.maximum(train.mu, 1)
    trainer = Trainer(params, cfg, mu)
    trace = TrainTrace()
    t0 = time.perf_counter()
    eps = cfg.eps_minor

    def elapsed():
        return 1000.0 * (time.perf_counter() - t0)

    best_val = _val_loglik(params, val, eps)
    best = params
    trace.append(TraceRow(0, 0, elapsed(), _train_nll(params, train, mu, eps), best_val))
    prev_val = best_val
    calm = 0
    bad_epochs = 0
    step = 0
    n = len(train)
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        accepted = 0
        for start in range(0, n, cfg.batch_size):
            batch = [train.baskets[i] for i in order[start: start + cfg.batch_size]]
            _, ok = trainer.step(batch)
            accepted += ok
            step += 1
        if accepted == 0:
            bad_epochs += 1
            if bad_epochs >= 5:
                raise Diverged("5 consecutive epochs without a finite objective")
        else:
            bad_epochs = 0
        p = trainer.params
        val_ll = _val_loglik(p, val, eps)
        trace.append(TraceRow(step, epoch, elapsed(), _train_nll(p, train, mu, eps), val_ll))
        log.debug("epoch %d val_ll %.6f", epoch, val_ll)
        if math.isnan(best_val) or val_ll > best_val or not len(val):
            best_val, best = val_ll, p
        if math.isfinite(prev_val) and math.isfinite(val_ll):
            rel = abs(val_ll - prev_val) / max(abs(prev_val), 1e-12)
            calm = calm + 1 if rel < cfg.conv_rel_tol else 0
        prev_val = val_ll
        if calm >= cfg.conv_patience:
            break
    if not len(val):
        best = trainer.params
    return best, trace


def train(data, cfg):
    """Split `data` per `cfg`, then fit.  The test split is not touched."""
    tr, val, _ = split(data, cfg, cfg.seed)
    return fit(tr, val, cfg)
