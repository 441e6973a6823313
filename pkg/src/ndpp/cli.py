"""Command-line entry point: ``ndpp {train,map,predict,eval,bench,synth}``.

Exit codes: 0 success, 1 domain or I/O error, 2 usage error.
"""
import argparse
import csv
import dataclasses
import datetime
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import DegenerateGain, NdppError, UnknownItem
from .evaluation import (approx_bound_study, bootstrap_ci, evaluate,
                         relative_logdet_error, sample_synthetic_p0)
from .inference import (condition_singletons, greedy_map, local_search, mcmc_map,
                        run_map, stochastic_greedy)
from .kernel import check_p0, load_model, save_model, to_inference_kernel
from .training import TrainConfig, load_baskets, train


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _atomic_write_text(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _dump_json(path, obj):
    _atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _write_csv(path, rows, header):
    lines = []

    class _Sink:
        def write(self, s):
            lines.append(s)

    w = csv.DictWriter(_Sink(), fieldnames=header, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(v) for k, v in row.items()})
    _atomic_write_text(path, "".join(lines))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


class Manifest:
    """Run record written before the command starts and finalized after."""

    def __init__(self, path, command, args):
        self.path = path
        self.data = {
            "command": command,
            "args": {k: v for k, v in vars(args).items() if k != "func"},
            "seed": getattr(args, "seed", None),
            "code_version": __version__,
            "start": _now(),
            "end": None,
            "status": "running",
            "outputs": [],
            "config": None,
        }
        self._flush()

    def _flush(self):
        if self.path:
            _dump_json(self.path, self.data)

    def finish(self, status, **extra):
        self.data.update(extra)
        self.data["status"] = status
        self.data["end"] = _now()
        self._flush()


def _manifest_path(args, default_base):
    if getattr(args, "manifest", None):
        return args.manifest
    return f"{default_base}.manifest.json" if default_base else None


def _read_vocab(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def _parse_items(text, vocab, m):
    tokens = [t.strip() for t in text.split(",") if t.strip()]
    if vocab is not None:
        index = {t: i for i, t in enumerate(vocab)}
        unknown = [t for t in tokens if t not in index]
        if unknown:
            raise UnknownItem(unknown)
        return [index[t] for t in tokens], vocab
    bad = [t for t in tokens if not t.isdigit() or int(t) >= m]
    if bad:
        raise UnknownItem(bad)
    return [int(t) for t in tokens], None


def cmd_train(args):
    if not os.path.exists(args.data):
        raise FileNotFoundError(f"data file not found: {args.data}")
    manifest = Manifest(_manifest_path(args, args.out), "train", args)
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    manifest.data["config"] = cfg.to_dict()
    try:
        data = load_baskets(args.data, args.max_basket)
        params, trace = train(data, cfg)
        save_model(params, args.out)
        outputs = [args.out]
        if args.trace:
            trace.write_csv(args.trace)
            outputs.append(args.trace)
        if args.vocab_out:
            _atomic_write_text(args.vocab_out, "".join(t + "\n" for t in data.item_vocab))
            outputs.append(args.vocab_out)
    except Exception:
        manifest.finish("failed")
        raise
    manifest.finish("ok", outputs=outputs)
    print(f"trained M={params.m} K={params.k} epochs={trace.rows[-1].epoch} -> {args.out}")
    return 0


def _timing_free(result):
    """Result fields that depend only on the inputs; wall time goes to stdout only."""
    out = result.to_dict()
    out.pop("wall_ms")
    return out


def cmd_map(args):
    params = load_model(args.model)
    kernel = to_inference_kernel(params)
    manifest = Manifest(_manifest_path(args, args.out), "map", args)
    try:
        result = run_map(kernel, args.k, args.algo, args.seed)
    except DegenerateGain as exc:
        payload = {"error": str(exc), "partial": _timing_free(exc.partial) if exc.partial else None}
        if args.out:
            _dump_json(args.out, payload)
        manifest.finish("failed")
        raise
    except Exception:
        manifest.finish("failed")
        raise
    if args.out:
        _dump_json(args.out, _timing_free(result))
    manifest.finish("ok", outputs=[args.out] if args.out else [])
    print("items: " + " ".join(str(i) for i in result.items))
    print(f"log_det: {result.log_det!r}")
    print(f"wall_ms: {result.wall_ms:.3f}")
    return 0


def cmd_predict(args):
    params = load_model(args.model)
    vocab = _read_vocab(args.vocab) if args.vocab else None
    basket, vocab = _parse_items(args.basket or "", vocab, params.m)
    scores = condition_singletons(to_inference_kernel(params), basket)
    order = np.argsort(-scores, kind="stable")
    picks = [int(i) for i in order if np.isfinite(scores[i])][: args.top]
    names = vocab or [str(i) for i in range(params.m)]
    for i in picks:
        print(f"{names[i]}\t{float(scores[i])!r}")
    return 0


def cmd_eval(args):
    params = load_model(args.model)
    vocab = _read_vocab(args.vocab) if args.vocab else None
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - {"mpr", "auc", "ll"}
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    manifest = Manifest(_manifest_path(args, args.out), "eval", args)
    try:
        if vocab is None:
            data = load_baskets(args.data, args.max_basket,
                                vocab=[str(i) for i in range(params.m)])
        else:
            data = load_baskets(args.data, args.max_basket, vocab=vocab)
        report = evaluate(params, data, metrics, args.seed)
    except Exception:
        manifest.finish("failed")
        raise
    row = report.as_row()
    header = list(row)
    if args.out:
        _write_csv(args.out, [row], header)
    manifest.finish("ok", outputs=[args.out] if args.out else [])
    for k, v in row.items():
        print(f"{k}: {v!r}")
    return 0


BENCH_ALGOS = ("greedy", "sgreedy", "mcmc")


def cmd_bench(args):
    params = load_model(args.model)
    kernel = to_inference_kernel(params)
    manifest = Manifest(_manifest_path(args, args.out), "bench", args)
    try:
        reference = local_search(kernel, args.k)
        errors = {a: [] for a in BENCH_ALGOS}
        times = {a: [] for a in BENCH_ALGOS}
        for t in range(args.trials):
            seed = args.seed * 100_003 + t
            for algo, res in (("greedy", greedy_map(kernel, args.k)),
                              ("sgreedy", stochastic_greedy(kernel, args.k, seed)),
                              ("mcmc", mcmc_map(kernel, args.k, seed))):
                errors[algo].append(relative_logdet_error(res, reference))
                times[algo].append(res.wall_ms)
    except Exception:
        manifest.finish("failed")
        raise
    rows = []
    for algo in BENCH_ALGOS:
        errs = np.asarray(errors[algo])
        lo, hi = bootstrap_ci(errs, args.seed)
        rows.append({"algorithm": algo, "trials": args.trials, "mean_rel_error": float(errs.mean()),
                     "ci_lo": lo, "ci_hi": hi, "mean_wall_ms": float(np.mean(times[algo]))})
    header = ["algorithm", "trials", "mean_rel_error", "ci_lo", "ci_hi"]
    if args.out:
        _write_csv(args.out, rows, header)
    manifest.finish("ok", outputs=[args.out] if args.out else [],
                    reference_log_det=reference.log_det)
    for r in rows:
        print(f"{r['algorithm']:8s} {r['mean_rel_error']:.6f} [{r['ci_lo']:.6f}, {r['ci_hi']:.6f}]"
              f"  {r['mean_wall_ms']:.3f} ms")
    return 0


def cmd_synth(args):
    svals = tuple(float(x) for x in args.singular_values.split(","))
    if len(svals) != args.k:
        raise ValueError(f"--singular-values needs {args.k} values")
    manifest = Manifest(_manifest_path(args, args.out), "synth", args)
    rows = []
    try:
        for i in range(args.count):
            kern = sample_synthetic_p0(args.m, args.k, svals, seed=[args.seed, i],
                                       symmetric=args.symmetric)
            report = approx_bound_study(kern, args.k)
            row = {"index": i, "p0_ok": check_p0(kern.materialize())}
            row.update(report.as_row())
            rows.append(row)
    except Exception:
        manifest.finish("failed")
        raise
    header = ["index", "p0_ok", "k", "sigma_min", "sigma_max", "kappa", "log_kappa_ratio",
              "thm2_bound", "cor1_multiplier", "cor1_additive", "cor1_bound",
              "greedy_logdet", "exact_logdet", "greedy_ratio"]
    if args.out:
        _write_csv(args.out, rows, header)
    manifest.finish("ok", outputs=[args.out] if args.out else [])
    ratios = np.array([r["greedy_ratio"] for r in rows])
    print(f"kernels: {len(rows)}  median greedy ratio: {np.nanmedian(ratios):.6f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="ndpp", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS threads (default: $NDPP_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn a kernel from a basket file")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--trace", help="training trace CSV")
    p.add_argument("--vocab-out", help="write item tokens, one per line, in index order")
    p.add_argument("--max-basket", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("map", help="MAP inference on a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--algo", choices=["greedy", "sgreedy", "mcmc", "local", "exact"], default="greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON result file")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("predict", help="next-item prediction for a partial basket")
    p.add_argument("--model", required=True)
    p.add_argument("--basket", default="", help="comma-separated items")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--vocab")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="MPR / AUC / test log-likelihood")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", default="mpr,auc,ll")
    p.add_argument("--vocab")
    p.add_argument("--max-basket", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV report")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="relative log-det error of MAP heuristics vs local search")
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV table")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="greedy vs exact MAP on random small P0 kernels")
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--singular-values", default="3,2,1")
    p.add_argument("--symmetric", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV table")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_synth)
    return parser


def _thread_count(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("NDPP_THREADS")
    return int(env) if env else 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=_thread_count(args)):
            return args.func(args)
    except (NdppError, OSError, ValueError, KeyError, IndexError) as exc:
        msg = str(exc) if str(exc) else type(exc).__name__
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
