import numpy as np
import pytest

from sgdlab import (ConfigError, DivergenceError, HyperParams, OptimizerState,
                    ProtocolKind, ProtocolSpec, QuadraticEnsemble,
                    minibatch_grad, read_run_csv, sgd_step, train,
                    write_run_csv)
from sgdlab.protocols import rate_at_epoch, sample_alpha


def rng(seed=0):
    return np.random.default_rng(seed)


def quadratic(seed=1, dim=3, samples=16):
    return QuadraticEnsemble.isotropic(dim, samples, rng(seed))


def hyper(l=0.05, batch=16, mu=0.0, nesterov=False, wd=0.0, protocol=None):
    return HyperParams(batch_size=batch,
                       protocol=protocol or ProtocolSpec.constant(l),
                       momentum=mu, nesterov=nesterov, weight_decay=wd)


def reference_train(objective, hp, epochs, seed):
    """Independent transcription of the update rules for cross-checking."""
    g = np.random.default_rng(seed)
    x = objective.initial_point(g)
    v = np.zeros_like(x)
    N, C = objective.sample_count, hp.batch_size
    for tau in range(epochs):
        l_tau = rate_at_epoch(hp.protocol, tau)
        perm = g.permutation(N)
        for b in range(N // C):
            idx = perm[b * C:(b + 1) * C]
            if hp.protocol.kind is ProtocolKind.CYCLIC_COSINE:
                alpha = 1.0
            else:
                alpha = sample_alpha(hp.protocol, g)
            xe = x + l_tau * hp.momentum * v if (hp.nesterov and hp.momentum) else x
            grad = objective.batch_grad(xe, idx) + hp.weight_decay * xe
            v = hp.momentum * v - alpha * grad
            x = x + l_tau * v
    return x


# -- single steps -------------------------------------------------------------

def test_momentum_step_hand_example():
    # x0=(1), v0=(0), mu=0.9, alpha=1, rate=0.1, grad=(2) -> v1=(-2), x1=(0.8)
    state = OptimizerState(np.array([1.0]), np.array([0.0]))
    out = sgd_step(state, np.array([2.0]), 1.0, 0.1, hyper(mu=0.9))
    assert out.v == pytest.approx([-2.0])
    assert out.x == pytest.approx([0.8])
    assert out.step == 1


def test_momentum_free_step_is_plain_sgd():
    state = OptimizerState(np.array([0.3, -0.4]), np.zeros(2))
    grad = np.array([1.0, -2.0])
    out = sgd_step(state, grad, 1.0, 0.05, hyper(mu=0.0))
    assert np.allclose(out.x, state.x - 0.05 * grad)


def test_zero_alpha_step_is_pure_momentum_decay():
    state = OptimizerState(np.array([1.0]), np.array([2.0]))
    out = sgd_step(state, np.array([5.0]), 0.0, 0.1, hyper(mu=0.9))
    assert out.v == pytest.approx([1.8])
    assert out.x == pytest.approx([1.18])


def test_weight_decay_enters_through_the_evaluation_point():
    state = OptimizerState(np.array([2.0]), np.array([0.0]))
    x_eval = np.array([3.0])
    out = sgd_step(state, np.array([1.0]), 1.0, 0.1, hyper(wd=0.5), x_eval=x_eval)
    # g = grad + wd * x_eval = 1 + 1.5
    assert out.v == pytest.approx([-2.5])


def test_step_validates_inputs():
    state = OptimizerState(np.zeros(2), np.zeros(2))
    with pytest.raises(ConfigError):
        sgd_step(state, np.zeros(3), 1.0, 0.1, hyper())
    with pytest.raises(ConfigError):
        sgd_step(state, np.zeros(2), -0.5, 0.1, hyper())


def test_step_detects_divergence_with_step_index():
    state = OptimizerState(np.array([1.0]), np.zeros(1), step=7)
    with pytest.raises(DivergenceError) as err:
        sgd_step(state, np.array([np.nan]), 1.0, 0.1, hyper())
    assert err.value.step == 7
    with pytest.raises(DivergenceError):
        sgd_step(state, np.array([1e15]), 1.0, 1.0, hyper())


# -- training loop ------------------------------------------------------------

def test_train_rejects_zero_epochs():
    with pytest.raises(ConfigError):
        train(quadratic(), hyper(), 0, 1)


def test_train_rejects_oversized_batch():
    with pytest.raises(ConfigError):
        train(quadratic(samples=8), hyper(batch=9), 1, 1)


def test_zero_gradient_objective_leaves_weights_unchanged():
    obj = QuadraticEnsemble(np.zeros((2, 2)), rng(3).standard_normal((8, 2)))
    record = train(obj, hyper(batch=4), 1, 5)
    g = np.random.default_rng(5)
    assert np.array_equal(record.final_x, obj.initial_point(g))


def test_full_batch_loss_monotone_on_quadratic():
    obj = quadratic()
    record = train(obj, hyper(l=0.1, batch=obj.sample_count), 25, 2)
    losses = [e.train_loss for e in record.epochs]
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_train_matches_reference_transcription_plain():
    obj = quadratic()
    hp = hyper(l=0.05, batch=4, mu=0.9)
    record = train(obj, hp, 4, 11)
    assert np.array_equal(record.final_x, reference_train(obj, hp, 4, 11))


def test_train_matches_reference_transcription_nesterov_decay_random():
    obj = quadratic()
    hp = hyper(batch=4, mu=0.8, nesterov=True, wd=0.01,
               protocol=ProtocolSpec.random(0.03, 1.0))
    record = train(obj, hp, 3, 13)
    assert np.array_equal(record.final_x, reference_train(obj, hp, 3, 13))


def test_train_matches_reference_transcription_cyclic():
    obj = quadratic()
    hp = hyper(batch=4, mu=0.5, protocol=ProtocolSpec.cyclic(0.04, 3))
    record = train(obj, hp, 6, 17)
    assert np.array_equal(record.final_x, reference_train(obj, hp, 6, 17))


def test_identical_seed_and_config_reproduce_bitwise():
    obj = quadratic()
    hp = hyper(batch=4, mu=0.9, protocol=ProtocolSpec.random(0.02, 1.0))
    r1 = train(obj, hp, 5, 23)
    r2 = train(obj, hp, 5, 23)
    assert np.array_equal(r1.final_x, r2.final_x)
    assert [e.train_loss for e in r1.epochs] == [e.train_loss for e in r2.epochs]
    assert r1.alpha_mean == r2.alpha_mean


def test_degenerate_random_protocol_reproduces_constant_trajectory():
    obj = quadratic()
    constant = train(obj, hyper(l=0.05, batch=4, mu=0.9), 5, 29)
    degenerate = train(obj, hyper(batch=4, mu=0.9,
                                  protocol=ProtocolSpec.random(0.05, 0.0)), 5, 29)
    assert np.array_equal(constant.final_x, degenerate.final_x)


def test_mean_update_matches_constant_protocol_on_frozen_weights():
    # averaging alpha * grad_batch over resampling recovers the full gradient
    obj = quadratic(samples=32)
    g = rng(31)
    x = g.standard_normal(obj.n)
    full = obj.grad(x)
    draws = 20_000
    acc = np.zeros(obj.n)
    per_sample = obj.per_sample_grads(x)
    for _ in range(draws):
        idx = g.choice(32, size=8, replace=False)
        alpha = g.uniform(0.0, 2.0)
        acc += alpha * per_sample[idx].mean(axis=0)
    mean_update = acc / draws
    scale = np.linalg.norm(full)
    assert np.linalg.norm(mean_update - full) <= 0.05 * scale


def test_remainder_batch_is_dropped():
    obj = quadratic(samples=10)
    record = train(obj, hyper(batch=3), 2, 1)
    assert record.steps == 2 * (10 // 3)


def test_alpha_summary_reflects_protocol():
    obj = quadratic()
    const = train(obj, hyper(batch=4), 2, 3)
    assert const.alpha_mean == 1.0 and const.alpha_min == 1.0
    rand = train(obj, hyper(batch=4, protocol=ProtocolSpec.random(0.05, 1.0)), 10, 3)
    assert 0.0 <= rand.alpha_min < rand.alpha_max <= 2.0
    assert rand.alpha_mean == pytest.approx(1.0, abs=0.15)


def test_probes_called_each_epoch():
    obj = quadratic()
    seen = []
    train(obj, hyper(batch=4), 3, 1, probes=[lambda state, stats: seen.append(stats.epoch)])
    assert seen == [1, 2, 3]


def test_divergence_propagates_from_training():
    obj = quadratic()
    with pytest.raises(DivergenceError):
        train(obj, hyper(l=1000.0, batch=obj.sample_count), 50, 1)


def test_classifier_metrics_recorded(digits_objective):
    record = train(digits_objective,
                   hyper(l=0.005, batch=256, mu=0.9, nesterov=True), 6, 1)
    first, last = record.epochs[0], record.epochs[-1]
    assert last.train_loss < first.train_loss
    assert last.test_acc > first.test_acc
    assert last.train_acc is not None


def test_run_csv_round_trip(tmp_path):
    obj = quadratic()
    record = train(obj, hyper(batch=4, protocol=ProtocolSpec.cyclic(0.05, 2)), 4, 7)
    path = tmp_path / "run.csv"
    write_run_csv(record, path)
    rows = read_run_csv(path)
    assert [r.epoch for r in rows] == [1, 2, 3, 4]
    assert rows[0].lr == record.epochs[0].lr
    assert rows[2].train_loss == record.epochs[2].train_loss
    assert rows[0].test_acc is None


def test_hyperparams_validation():
    with pytest.raises(ConfigError):
        HyperParams(batch_size=4, protocol=ProtocolSpec.constant(0.1), momentum=1.0)
    with pytest.raises(ConfigError):
        HyperParams(batch_size=0, protocol=ProtocolSpec.constant(0.1))
    with pytest.raises(ConfigError):
        HyperParams(batch_size=4, protocol=ProtocolSpec.constant(0.1), weight_decay=-0.1)
    hp = HyperParams(batch_size=4, protocol=ProtocolSpec.constant(0.1), momentum=0.9)
    assert hp.friction == pytest.approx(1.0)
