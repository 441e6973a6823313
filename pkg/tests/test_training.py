import dataclasses
import math

import numpy as np
import pytest

from ndpp import BasketDataset, NdppParams, TrainConfig, fit, init_params, load_baskets, split, train
from ndpp.errors import Diverged, EmptyDataset, SplitTooLarge, UnknownItem
from ndpp.training import Adam, TraceRow, Trainer, TrainTrace, item_counts, save_baskets


def toy_data(seed=0, m=10, n=50):
    rng = np.random.default_rng(seed)
    baskets = [tuple(rng.choice(m, size=int(rng.integers(1, 4)), replace=False)) for _ in range(n)]
    return BasketDataset(m, baskets)


def test_load_example(tmp_path):
    f = tmp_path / "b.txt"
    f.write_text("a b\nb c\n")
    data = load_baskets(f)
    assert data.m == 3
    assert data.baskets == [(0, 1), (1, 2)]
    np.testing.assert_array_equal(data.mu, [1, 2, 1])
    assert data.item_vocab == ["a", "b", "c"]


def test_load_drops_large_and_dedups(tmp_path):
    f = tmp_path / "b.txt"
    f.write_text(" ".join(f"x{i}" for i in range(101)) + "\n\ny y z\n")
    data = load_baskets(f, max_basket=100)
    assert data.baskets == [(0, 1)] and data.item_vocab == ["y", "z"]


def test_load_errors(tmp_path):
    f = tmp_path / "empty.txt"
    f.write_text("")
    with pytest.raises(EmptyDataset):
        load_baskets(f)
    g = tmp_path / "g.txt"
    g.write_text("a q\n")
    with pytest.raises(UnknownItem):
        load_baskets(g, vocab=["a", "b"])


def test_save_load_round_trip(tmp_path):
    data = toy_data()
    path = tmp_path / "d.txt"
    save_baskets(data, path)
    back = load_baskets(path, vocab=[str(i) for i in range(data.m)])
    assert back.baskets == data.baskets


def test_dataset_validation():
    with pytest.raises(ValueError):
        BasketDataset(3, [(0, 0)])
    with pytest.raises(ValueError):
        BasketDataset(3, [(0, 5)])
    with pytest.raises(ValueError):
        BasketDataset(3, [(0, 1)], mu=np.array([2, 1, 0]))


def test_split_sizes_and_counts():
    data = toy_data(n=100)
    cfg = TrainConfig(val_size=10, test_size=20)
    tr, va, te = split(data, cfg, seed=3)
    assert (len(tr), len(va), len(te)) == (70, 10, 20)
    assert sorted(tr.baskets + va.baskets + te.baskets) == sorted(data.baskets)
    brute = np.zeros(data.m, dtype=int)
    for y in tr.baskets:
        for i in y:
            brute[i] += 1
    np.testing.assert_array_equal(tr.mu, brute)
    again = split(data, cfg, seed=3)
    assert again[0].baskets == tr.baskets
    with pytest.raises(SplitTooLarge):
        split(data, TrainConfig(val_size=50, test_size=50), seed=0)


def test_init_params():
    cfg = TrainConfig(k=100, tied=False)
    p = init_params(30, cfg, seed=1)
    assert p == init_params(30, cfg, seed=1)
    assert p.v.min() >= 0 and p.v.max() < 1 and p.b.min() >= 0
    assert abs(p.d.mean()) < 5 / math.sqrt(100 ** 2)
    sym = init_params(30, dataclasses.replace(cfg, learn_skew=False), seed=1)
    assert not np.any(sym.d)


def test_adam_first_step_by_hand():
    opt = Adam(lr=0.1, beta1=0.9, beta2=0.999, eps=0.0)
    theta = {"w": np.array([1.0, -2.0])}
    grad = {"w": np.array([0.5, -4.0])}
    out = opt.step(theta, grad)
    # bias-corrected first step moves every coordinate by exactly lr * sign(g)
    np.testing.assert_allclose(out["w"], [0.9, -1.9], atol=1e-12)
    np.testing.assert_array_equal(theta["w"], [1.0, -2.0])
    out2 = opt.step(out, grad)
    m = 0.9 * 0.1 * grad["w"] + 0.1 * grad["w"]
    v = 0.999 * 0.001 * grad["w"] ** 2 + 0.001 * grad["w"] ** 2
    step = 0.1 * (m / (1 - 0.81)) / np.sqrt(v / (1 - 0.999 ** 2))
    np.testing.assert_allclose(out2["w"], out["w"] - step, atol=1e-12)


def test_rejected_step_leaves_state_untouched():
    p = NdppParams(v=np.ones((4, 1)), d=np.zeros((1, 1)))
    cfg = TrainConfig(k=1, eps_minor=0.0)
    trainer = Trainer(p, cfg, np.ones(4))
    before = trainer.adam.state()
    rep, ok = trainer.step([(0, 1, 2)])
    assert not ok and not rep.feasible
    assert trainer.params is p
    assert trainer.adam.t == before[0] and trainer.adam.m == {}


def test_step_increases_objective():
    data = toy_data()
    cfg = TrainConfig(k=3, learning_rate=0.01)
    p = init_params(data.m, cfg, seed=0)
    trainer = Trainer(p, cfg, data.mu)
    rep0, ok = trainer.step(data.baskets)
    rep1, _ = trainer.step(data.baskets)
    assert ok and rep1.objective > rep0.objective


def test_max_epochs_zero_returns_initial():
    data = toy_data()
    cfg = TrainConfig(k=4, max_epochs=0, val_size=5, test_size=5)
    tr, va, _ = split(data, cfg, 0)
    p0 = init_params(data.m, cfg, cfg.seed)
    p, trace = fit(tr, va, cfg)
    assert p == p0
    assert len(trace.rows) == 1 and trace.rows[0].epoch == 0


def test_training_improves_over_first_epochs():
    data = toy_data(seed=1)
    cfg = TrainConfig(k=4, max_epochs=10, val_size=5, test_size=5, batch_size=10,
                      learning_rate=0.05, conv_rel_tol=0.0)
    tr, va, _ = split(data, cfg, 0)
    _, trace = fit(tr, va, cfg)
    nll = [r.train_nll for r in trace.rows]
    assert len(nll) == 11
    assert np.all(np.diff(nll) < 0)
    assert [r.wall_ms for r in trace.rows] == sorted(r.wall_ms for r in trace.rows)


def test_huge_alpha_shrinks_v():
    data = toy_data(seed=2)
    cfg = TrainConfig(k=3, alpha=1e6, max_epochs=6, val_size=5, test_size=5,
                      batch_size=1000, learning_rate=0.01, conv_rel_tol=0.0)
    tr, _, _ = split(data, cfg, 0)
    p = init_params(data.m, cfg, 0)
    trainer = Trainer(p, cfg, tr.mu)
    norms = [np.linalg.norm(p.v)]
    for _ in range(6):
        trainer.step(tr.baskets)
        norms.append(np.linalg.norm(trainer.params.v))
    assert np.all(np.diff(norms) < 0)


def test_diverged_when_no_step_is_ever_feasible():
    data = BasketDataset(4, [(0, 1, 2)] * 20)
    cfg = TrainConfig(k=1, eps_minor=0.0, max_epochs=8, val_size=1, test_size=1)
    tr, va, _ = split(data, cfg, 0)
    with pytest.raises(Diverged):
        fit(tr, va, cfg)


def test_train_is_deterministic():
    data = toy_data(n=60)
    cfg = TrainConfig(k=3, max_epochs=3, val_size=5, test_size=5, seed=7)
    a, ta = train(data, cfg)
    b, tb = train(data, cfg)
    assert a == b
    assert [r.val_ll for r in ta.rows] == [r.val_ll for r in tb.rows]


def test_config_file(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("# comment\nk = 5\ntied = false\nlearning_rate = 0.02  # inline\nalpha=1e-3\n")
    cfg = TrainConfig.from_file(f)
    assert (cfg.k, cfg.tied, cfg.learning_rate, cfg.alpha) == (5, False, 0.02, 1e-3)
    f.write_text("nonsense = 1\n")
    with pytest.raises(ValueError):
        TrainConfig.from_file(f)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)


def test_trace_csv(tmp_path):
    trace = TrainTrace()
    trace.append(TraceRow(0, 0, 1.0, 2.5, -3.0))
    trace.append(TraceRow(4, 1, 2.0, 2.25, -2.75))
    with pytest.raises(ValueError):
        trace.append(TraceRow(5, 2, 1.5, 2.0, -2.0))
    out = tmp_path / "t.csv"
    trace.write_csv(out)
    assert out.read_text().splitlines() == [
        "step,epoch,wall_ms,train_nll,val_ll", "0,0,1.000,2.5,-3.0", "4,1,2.000,2.25,-2.75"]


def test_item_counts():
    np.testing.assert_array_equal(item_counts([(0, 2), (2,)], 4), [1, 0, 2, 0])
