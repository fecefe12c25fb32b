import itertools
from dataclasses import replace

import numpy as np
import pytest

from maxoutlab.dataio import Dataset, synth_teacher
from maxoutlab.dropout import (CompletionResult, TrainConfig, TrainingDiverged, _complete,
                               complete_by_continuation, complete_by_retrain, evaluate,
                               sample_masks, train, train_step)
from maxoutlab.network import (Linear, Maxout, NetworkSpec, Parameters, SoftmaxOutput, backward,
                               forward, init_params, project_max_norm)
from maxoutlab.numerics import DomainError, Prng
from maxoutlab.serialization import read_csv

SPEC = NetworkSpec(6, (Maxout(5, 3), Maxout(4, 2), SoftmaxOutput(3)))


def toy_data(n=200, seed=0):
    return synth_teacher(Prng(seed), NetworkSpec(6, (Maxout(4, 2), SoftmaxOutput(3))), n)


def plain(**kw):
    base = dict(epochs=3, batch_size=20, lr_initial=0.1, lr_final=0.1, momentum_initial=0.0,
                momentum_final=0.0, include_prob_input=1.0, include_prob_hidden=1.0)
    base.update(kw)
    return TrainConfig(**base)


# --- masks ---------------------------------------------------------------

def test_masks_all_ones_at_p_one():
    m = sample_masks(Prng(0), SPEC, (1.0, 1.0, 1.0), 7)
    assert all(a.all() for a in m)


def test_mask_shapes_for_mnist_mlp():
    spec = NetworkSpec(784, (Maxout(400, 2), Maxout(400, 2), SoftmaxOutput(10)))
    m = sample_masks(Prng(0), spec, (0.8, 0.5, 0.5), 32)
    assert [a.shape for a in m] == [(32, 784), (32, 400), (32, 400)]
    assert all(set(np.unique(a)) <= {0.0, 1.0} for a in m)


def test_mask_inclusion_rate():
    spec = NetworkSpec(1, (SoftmaxOutput(2),))
    m = sample_masks(Prng(3), spec, (0.8,), 10_000).masks[0]
    assert abs(m.mean() - 0.8) < 4 * np.sqrt(0.8 * 0.2 / 10_000)


def test_mask_rejects_zero_probability():
    with pytest.raises(DomainError):
        sample_masks(Prng(0), SPEC, (0.0, 0.5, 0.5), 2)


def test_shared_masks_repeat_rows():
    m = sample_masks(Prng(0), SPEC, (0.5, 0.5, 0.5), 4, share=True)
    assert all((a == a[0]).all() for a in m)


def test_masked_forward_equals_zeroed_subnetwork(rng):
    spec = NetworkSpec(4, (Maxout(3, 2), SoftmaxOutput(2)))
    p = init_params(spec, Prng(1), sigma=1.0)
    v = rng.standard_normal((1, 4))
    for bits in itertools.product((0.0, 1.0), repeat=4):
        mu = np.array([bits])
        masked = forward(p, spec, v, [mu, np.ones((1, 3))])
        sub = p.copy()
        sub.W[0] = sub.W[0] * mu[0][:, None, None]  # drop the rows of dropped inputs
        assert np.array_equal(masked.probs, forward(sub, spec, v).probs)


# --- train_step ----------------------------------------------------------

def test_zero_learning_rate_leaves_params(rng):
    p = init_params(SPEC, Prng(0))
    cfg = TrainConfig(lr_initial=0.0, lr_final=0.0)
    q, _, _ = train_step(p, SPEC, (rng.standard_normal((5, 6)), rng.integers(0, 3, 5)), cfg, Prng(1))
    assert q.equals(p)


def test_plain_step_is_gradient_step(rng):
    p = init_params(SPEC, Prng(0), sigma=0.5)
    x, y = rng.standard_normal((5, 6)), rng.integers(0, 3, 5)
    cfg = plain(lr_initial=0.3, lr_final=0.3)
    q, v, m = train_step(p, SPEC, (x, y), cfg, Prng(1))
    g = backward(p, SPEC, forward(p, SPEC, x), y)
    for a, b, gg, vv in zip(q.arrays(), p.arrays(), g.arrays(), v.arrays()):
        assert np.array_equal(vv, 0.0 * 0.0 - 0.3 * gg)
        np.testing.assert_allclose(a, b - 0.3 * gg, rtol=0, atol=1e-15)


def test_momentum_update_rule(rng):
    p = init_params(SPEC, Prng(0), sigma=0.5)
    cfg = plain(momentum_initial=0.9, momentum_final=0.9, lr_initial=0.1, lr_final=0.1)
    batch = (rng.standard_normal((5, 6)), rng.integers(0, 3, 5))
    p1, v1, _ = train_step(p, SPEC, batch, cfg, Prng(1))
    p2, v2, _ = train_step(p1, SPEC, batch, cfg, Prng(1), velocity=v1)
    g = backward(p1, SPEC, forward(p1, SPEC, batch[0]), batch[1])
    for new, old, gg in zip(v2.arrays(), v1.arrays(), g.arrays()):
        np.testing.assert_allclose(new, 0.9 * old - 0.1 * gg, atol=1e-15)


def test_norm_cap_after_step(rng):
    p = init_params(SPEC, Prng(0), sigma=2.0)
    cfg = replace(plain(lr_initial=5.0, lr_final=5.0), norm_cap=1.0)
    q, _, _ = train_step(p, SPEC, (rng.standard_normal((5, 6)), rng.integers(0, 3, 5)), cfg, Prng(1))
    assert max(np.linalg.norm(w, axis=0).max() for w in q.W) <= 1.0 + 1e-12


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(rng):
    p = init_params(SPEC, Prng(0))
    p.W[0][0, 0, 0] = np.inf
    with pytest.raises(TrainingDiverged) as e:
        train_step(p, SPEC, (np.ones((2, 6)), np.array([0, 1])), TrainConfig(), Prng(0), epoch=4, step=7)
    assert (e.value.epoch, e.value.step) == (4, 7)


def test_plain_sgd_matches_independent_loop():
    data = toy_data(100)
    cfg = plain(epochs=2, batch_size=25, lr_initial=0.2, lr_final=0.2)
    fit = train(SPEC, data, None, cfg)
    # oracle: same init and shuffles, hand-rolled SGD
    rng = Prng(cfg.seed)
    p = init_params(SPEC, rng.substream(0), cfg.init_sigma)
    shuffle = rng.substream(1)
    for _ in range(2):
        order = shuffle.permutation(100)
        for lo in range(0, 100, 25):
            idx = order[lo:lo + 25]
            g = backward(p, SPEC, forward(p, SPEC, data.inputs[idx]), data.labels[idx])
            p = Parameters([w - 0.2 * gw for w, gw in zip(p.W, g.W)],
                           [b - 0.2 * gb for b, gb in zip(p.b, g.b)])
    assert fit.params.equals(p)


# --- schedules -----------------------------------------------------------

def test_schedules():
    cfg = TrainConfig(lr_initial=1.0, lr_final=0.1, lr_decay_epochs=9, momentum_initial=0.5,
                      momentum_final=0.9, momentum_ramp_epochs=4)
    assert cfg.lr(0) == 1.0
    np.testing.assert_allclose([cfg.lr(3), cfg.lr(9), cfg.lr(50)], [0.7, 0.1, 0.1], rtol=1e-14)
    assert cfg.momentum(0) == 0.5 and abs(cfg.momentum(2) - 0.7) < 1e-15 and cfg.momentum(9) == 0.9


def test_config_validation():
    with pytest.raises(DomainError):
        TrainConfig(lr_initial=0.1, lr_final=0.2)
    with pytest.raises(DomainError):
        TrainConfig(momentum_initial=0.9, momentum_final=0.5)


# --- train ---------------------------------------------------------------

def test_zero_lr_epoch_keeps_validation_metrics():
    data, valid = toy_data(100), toy_data(50, seed=1)
    fit = train(SPEC, data, valid, TrainConfig(epochs=1, lr_initial=0.0, lr_final=0.0))
    assert fit.records[0].valid_nll == fit.initial.valid_nll
    assert fit.records[0].valid_err == fit.initial.valid_err


def test_train_is_deterministic(tmp_path):
    data, valid = toy_data(120), toy_data(40, seed=1)
    cfg = TrainConfig(epochs=3, batch_size=16, seed=5)
    a, b = train(SPEC, data, valid, cfg), train(SPEC, data, valid, cfg)
    assert a.params.equals(b.params)
    assert [r.row() for r in a.records] == [r.row() for r in b.records]
    a.write_csv(tmp_path / "m.csv")
    rows = read_csv(tmp_path / "m.csv")
    assert len(rows) == 4 and list(rows[0]) == ["epoch", "train_nll", "train_err", "valid_nll",
                                                "valid_err", "lr", "momentum"]
    assert (tmp_path / "m.csv").read_text().startswith("# maxoutlab-csv v1\n")


def test_separable_data_reaches_zero_error():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((200, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    x += np.where(y[:, None] == 1, 0.3, -0.3) * np.array([1.0, 0.5])  # margin
    spec = NetworkSpec(2, (Maxout(4, 2), SoftmaxOutput(2)))
    cfg = TrainConfig(epochs=50, batch_size=10, lr_initial=0.2, lr_final=0.05,
                      include_prob_input=1.0, include_prob_hidden=1.0, seed=1, init_sigma=0.5)
    fit = train(spec, Dataset(x, y), None, cfg)
    assert min(r.train_err for r in fit.records) == 0.0


def test_teacher_student_with_dropout():
    teacher = NetworkSpec(10, (Maxout(8, 3), SoftmaxOutput(3)))
    data = synth_teacher(Prng(4), teacher, 2000)
    student = NetworkSpec(10, (Maxout(32, 3), SoftmaxOutput(3)))
    cfg = TrainConfig(epochs=30, batch_size=50, lr_initial=0.2, lr_final=0.05, lr_decay_epochs=30,
                      include_prob_input=1.0, include_prob_hidden=0.8, seed=0, init_sigma=0.1)
    fit = train(student, data, None, cfg)
    assert fit.records[-1].train_err < 0.10


def test_callback_and_patience():
    data, valid = toy_data(100), toy_data(40, seed=1)
    seen = []
    cfg = TrainConfig(epochs=30, lr_initial=0.0, lr_final=0.0, patience=3)
    fit = train(SPEC, data, valid, cfg, callback=lambda e, p: seen.append(e) or {"probe": e})
    assert fit.stopped_early and len(fit.records) == 3
    assert seen == [0, 1, 2, 3]
    assert fit.records[1].extra == {"probe": 2}


# --- completion protocols ------------------------------------------------

def test_continuation_returns_immediately_when_target_met():
    data, valid = toy_data(100), toy_data(40, seed=1)
    fit = train(SPEC, data, valid, TrainConfig(epochs=2))
    res = complete_by_continuation(fit, SPEC, data, valid, target_ll=-1e9, config=TrainConfig())
    assert res.reached and res.epochs_run == 0 and res.params.equals(fit.best_params)


def test_continuation_stops_at_first_crossing():
    data, valid = toy_data(300), toy_data(100, seed=1)
    cfg = TrainConfig(epochs=3, lr_initial=0.05, lr_final=0.05, seed=2)
    fit = train(SPEC, data, valid, cfg)
    full = Dataset(np.concatenate([data.inputs, valid.inputs]),
                   np.concatenate([data.labels, valid.labels]))
    probe = complete_by_continuation(fit, SPEC, full, valid, target_ll=np.inf, config=cfg, epoch_cap=8)
    assert not probe.reached and probe.epochs_run == 8 and len(probe.series) == 9
    # oracle: first index of the uncapped series to reach a mid-range target
    target = float(np.median(probe.series[1:]))
    first = next(i for i, v in enumerate(probe.series) if v >= target)
    res = complete_by_continuation(fit, SPEC, full, valid, target_ll=target, config=cfg, epoch_cap=8)
    assert res.reached and res.epochs_run == first
    assert res.series == probe.series[:first + 1]


def test_continuation_cap_flag():
    data, valid = toy_data(100), toy_data(40, seed=1)
    fit = train(SPEC, data, valid, TrainConfig(epochs=1))
    res = complete_by_continuation(fit, SPEC, data, valid, target_ll=1.0, config=TrainConfig(), epoch_cap=2)
    assert not res.reached and res.epochs_run == 2


def test_retrain_cap_zero_returns_fresh_init():
    data = toy_data(50)
    cfg = TrainConfig(seed=3)
    res = complete_by_retrain(SPEC, data, 0.0, cfg, epoch_cap=0)
    assert res.params.equals(init_params(SPEC, Prng(3).substream(0), cfg.init_sigma))


def test_retrain_stops_at_first_crossing_and_is_deterministic():
    data = toy_data(300)
    cfg = TrainConfig(lr_initial=0.05, lr_final=0.05, seed=2)
    probe = complete_by_retrain(SPEC, data, np.inf, cfg, epoch_cap=6)
    target = float(np.median(probe.series[1:]))
    first = next(i for i, v in enumerate(probe.series) if v >= target)
    a = complete_by_retrain(SPEC, data, target, cfg, epoch_cap=6)
    b = complete_by_retrain(SPEC, data, target, cfg, epoch_cap=6)
    assert a.epochs_run == first and a.reached
    assert a.params.equals(b.params)
