import math

import numpy as np
import pytest

from srforecast import autodiff as ad
from srforecast import scoring, training
from srforecast.dataset import WindowedDataset
from srforecast.models import DiscriminatorModel, GeneratorModel
from srforecast.training import (
    SGD,
    Adam,
    EarlyStopping,
    TrainConfig,
    batch_loss,
    fit,
    lr_sweep,
    sweep_grid,
    train_gan_epoch,
    train_sr_epoch,
    validation_score,
)


def synthetic(n, seed, noise=0.1):
    """x ~ N(0,1), y = x + eta with eta ~ N(0, noise^2), as one-step windows."""
    r = np.random.default_rng(seed)
    x = r.standard_normal(n)
    y = x + noise * r.standard_normal(n)
    return WindowedDataset(x.reshape(n, 1, 1), y.reshape(n, 1), 1, 1, np.arange(n))


# ---------------------------------------------------------------- optimisers

def test_sgd_example():
    p = ad.parameter(np.array([1.0]))
    p.grad = np.array([2.0])
    SGD([p], 0.1).step()
    assert math.isclose(p.value[0], 0.8, rel_tol=0, abs_tol=1e-15)


@pytest.mark.parametrize("opt", [SGD, Adam])
def test_zero_gradient_leaves_params(opt):
    p = ad.parameter(np.array([1.0, -3.0]))
    p.grad = np.zeros(2)
    opt([p], 0.1).step()
    assert np.array_equal(p.value, [1.0, -3.0])


@pytest.mark.parametrize("c", [0.5, -4.0, 1e-3])
def test_adam_first_step_magnitude(c):
    p = ad.parameter(np.array([2.0]))
    p.grad = np.array([c])
    Adam([p], 0.01).step()
    # bias-corrected moments give m/sqrt(v) = sign(c), damped only by eps
    assert abs(abs(p.value[0] - 2.0) - 0.01) < 0.01 * 1e-8 / abs(c) + 1e-15


def test_nonfinite_gradient_aborts():
    p = ad.parameter(np.array([1.0]))
    p.grad = np.array([np.nan])
    with pytest.raises(FloatingPointError):
        SGD([p], 0.1).step()


# ---------------------------------------------------------------- SR epochs

def test_zero_lr_keeps_params_and_reports_initial_loss():
    data = synthetic(64, 0)
    gen = GeneratorModel(1, 1, 1, [8, 8], seed=0)
    before = gen.net.get_flat()
    cfg = TrainConfig(spec=scoring.Energy(), m=5, batch_size=16, lr=0.0)
    loss = train_sr_epoch(gen, data, cfg, training.make_optimizer("adam", gen.params, 0.0), np.random.default_rng(1))
    assert np.array_equal(gen.net.get_flat(), before)
    # replay the same random stream without updates
    r = np.random.default_rng(1)
    order = r.permutation(64)
    expected = []
    for start in range(0, 64, 16):
        idx = order[start : start + 16]
        z = r.standard_normal((16, 5, 1))
        expected.append(batch_loss(gen, cfg.spec, data.flat_windows()[idx], data.targets[idx], z).item())
    assert loss == float(np.mean(expected))


def test_full_batch_gradient_is_mean_of_per_window_gradients():
    data = synthetic(6, 2)
    gen = GeneratorModel(1, 1, 2, [5], seed=3)
    spec = scoring.KernelGaussian(0.7)
    z = np.random.default_rng(4).standard_normal((6, 4, 2))
    ad.zero_grad(gen.params)
    batch_loss(gen, spec, data.flat_windows(), data.targets, z).backward()
    full = [p.grad.copy() for p in gen.params]
    acc = [np.zeros_like(g) for g in full]
    for t in range(6):
        ad.zero_grad(gen.params)
        batch_loss(gen, spec, data.flat_windows()[t : t + 1], data.targets[t : t + 1], z[t : t + 1]).backward()
        for a, p in zip(acc, gen.params):
            a += p.grad / 6
    for a, g in zip(acc, full):
        assert np.allclose(a, g, rtol=1e-12, atol=1e-14)


def test_energy_training_improves_synthetic_task():
    train, val = synthetic(600, 0), synthetic(200, 1)
    gen = GeneratorModel(1, 1, 1, [16, 16], seed=0)
    untrained = validation_score(gen, val, scoring.Energy(), 50, 9)
    cfg = TrainConfig(spec=scoring.Energy(), m=10, batch_size=100, epochs=50, lr=3e-3, patience=50)
    fit(gen, train, val, cfg)
    trained = validation_score(gen, val, scoring.Energy(), 50, 9)
    # Monte Carlo score of the true conditional N(x, 0.01)
    r = np.random.default_rng(5)
    x = val.windows[:, 0, :]
    true_ens = x[:, None, :] + 0.1 * r.standard_normal((200, 50, 1))
    oracle = float(np.mean(scoring.energy_score_estimate(true_ens, val.targets).value))
    assert trained < untrained
    assert trained < oracle + 0.1 * (untrained - oracle)


def test_gradient_is_unbiased_over_latent_redraws():
    data = synthetic(2, 7)
    gen = GeneratorModel(1, 1, 1, [6], seed=1)
    spec = scoring.Energy()
    r = np.random.default_rng(0)
    R, m = 10_000, 10
    acc = [np.zeros_like(p.value) for p in gen.params]
    w, y = data.flat_windows(), data.targets
    for _ in range(R):
        ad.zero_grad(gen.params)
        batch_loss(gen, spec, w, y, r.standard_normal((2, m, 1))).backward()
        for a, p in zip(acc, gen.params):
            a += p.grad / R
    # reference: large-m estimates, themselves averaged to suppress their noise
    big = 0.0
    for _ in range(40):
        ad.zero_grad(gen.params)
        batch_loss(gen, spec, w, y, r.standard_normal((2, 1000, 1))).backward()
        big = big + np.concatenate([p.grad.ravel() for p in gen.params]) / 40
    avg = np.concatenate([a.ravel() for a in acc])
    err = np.linalg.norm(avg - big) / np.linalg.norm(big)
    print("relative gradient error", err)
    assert err < 0.02


def test_single_batch_overfit():
    data = synthetic(10, 3, noise=1.0)
    gen = GeneratorModel(1, 1, 1, [32, 32], seed=0)
    cfg = TrainConfig(spec=scoring.Energy(), m=10, batch_size=10, epochs=1500, lr=3e-3, patience=1500)
    opt = training.make_optimizer("adam", gen.params, cfg.lr)
    r = np.random.default_rng(0)
    first = train_sr_epoch(gen, data, cfg, opt, r)
    for _ in range(cfg.epochs):
        last = train_sr_epoch(gen, data, cfg, opt, r)
    # collapsing every ensemble onto its own target scores exactly 0
    empirical_min = float(np.mean(scoring.energy_score_estimate(np.repeat(data.targets[:, None], 10, 1), data.targets).value))
    assert empirical_min == 0.0
    assert last - empirical_min <= 0.05 * (first - empirical_min)


def test_nan_loss_reports_batch():
    data = synthetic(20, 0)
    gen = GeneratorModel(1, 1, 1, [4], seed=0)
    gen.params[0].value = gen.params[0].value * np.nan
    cfg = TrainConfig(spec=scoring.Energy(), m=3, batch_size=10)
    with pytest.raises(training.TrainingDivergence, match="batch 0"):
        train_sr_epoch(gen, data, cfg, SGD(gen.params, 0.1), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ValueError, match="m >= 2"):
        TrainConfig(spec=scoring.Energy(), m=1)
    TrainConfig(method="gan", m=1)
    with pytest.raises(ValueError):
        TrainConfig(spec=scoring.Energy(), patience=0)


# ---------------------------------------------------------------- early stopping / fit

def test_early_stopping_trace():
    stop = EarlyStopping(2)
    decisions = [stop.update(e, s) for e, s in enumerate([5, 4, 4, 5, 6], start=1)]
    assert stop.best_epoch == 2
    assert [d[1] for d in decisions].index(True) + 1 == 4


def _scripted_fit(monkeypatch, scores, patience):
    it = iter(scores)
    monkeypatch.setattr(training, "validation_score", lambda *a, **k: next(it))
    gen = GeneratorModel(1, 1, 1, [4], seed=0)
    cfg = TrainConfig(spec=scoring.Energy(), m=3, batch_size=50, epochs=len(scores), lr=1e-3, patience=patience)
    return fit(gen, synthetic(50, 0), synthetic(20, 1), cfg)


def test_fit_patience_one(monkeypatch):
    rep = _scripted_fit(monkeypatch, [1.0, 2.0, 3.0, 4.0], 1)
    assert len(rep.val_score) == 2 and rep.best_epoch == 1


def test_fit_patience_two_with_tie(monkeypatch):
    rep = _scripted_fit(monkeypatch, [5.0, 4.0, 4.0, 5.0, 6.0, 1.0], 2)
    assert rep.best_epoch == 2 and len(rep.val_score) == 4


def test_fit_restores_best_params():
    train, val = synthetic(200, 0), synthetic(60, 1)
    gen = GeneratorModel(1, 1, 1, [8], seed=0)
    cfg = TrainConfig(spec=scoring.Energy(), m=5, batch_size=50, epochs=15, lr=3e-2, patience=3, seed=4)
    rep = fit(gen, train, val, cfg)
    val_seed = int(np.random.SeedSequence(cfg.seed).spawn(2)[1].generate_state(1)[0])
    restored = validation_score(gen, val, cfg.spec, cfg.m, val_seed)
    assert restored == rep.best_score == min(rep.val_score)


def test_fit_deterministic():
    train, val = synthetic(200, 0), synthetic(60, 1)

    def run():
        gen = GeneratorModel(1, 1, 1, [8], seed=0)
        cfg = TrainConfig(spec=scoring.Energy(), m=5, batch_size=64, epochs=5, lr=1e-2, seed=11)
        return fit(gen, train, val, cfg).to_json(include_time=False), gen.net.get_flat()

    a, b = run(), run()
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


# ---------------------------------------------------------------- GAN

def test_gan_zero_lr_leaves_both_nets():
    data = synthetic(40, 0)
    gen, disc = GeneratorModel(1, 1, 1, [6], seed=0), DiscriminatorModel(1, 1, [6], seed=1)
    g0, d0 = gen.net.get_flat(), disc.net.get_flat()
    cfg = TrainConfig(method="gan", m=1, batch_size=10, lr=0.0, lr_disc=0.0)
    train_gan_epoch(gen, disc, data, cfg, Adam(gen.params, 0.0), Adam(disc.params, 0.0), np.random.default_rng(0))
    assert np.array_equal(gen.net.get_flat(), g0) and np.array_equal(disc.net.get_flat(), d0)


def test_untrained_discriminator_generator_loss():
    data = synthetic(20, 0)
    gen, disc = GeneratorModel(1, 1, 1, [6], seed=0), DiscriminatorModel(1, 1, [6], seed=1)
    for p in disc.params:
        p.value = np.zeros_like(p.value)
    cfg = TrainConfig(method="gan", m=1, batch_size=20, lr=0.0, lr_disc=0.0)
    d_loss, g_loss = train_gan_epoch(gen, disc, data, cfg, SGD(gen.params, 0.0), SGD(disc.params, 0.0), np.random.default_rng(0))
    assert abs(g_loss - math.log(0.5)) < 1e-15
    assert abs(d_loss - 2 * math.log(2.0)) < 1e-15


def test_gan_improves_less_than_sr():
    train, val = synthetic(600, 0), synthetic(200, 1)
    spec = scoring.Energy()

    def score(gen):
        return validation_score(gen, val, spec, 50, 9)

    sr_gen = GeneratorModel(1, 1, 1, [16, 16], seed=0)
    gan_gen = GeneratorModel(1, 1, 1, [16, 16], seed=0)
    init = score(sr_gen)
    fit(sr_gen, train, val, TrainConfig(spec=spec, m=10, batch_size=100, epochs=40, lr=3e-3, patience=40))
    disc = DiscriminatorModel(1, 1, [16, 16], seed=1)
    fit(gan_gen, train, val, TrainConfig(method="gan", m=1, batch_size=100, epochs=40, lr=3e-3, lr_disc=3e-3, patience=40), disc=disc)
    assert score(gan_gen) < init
    assert score(sr_gen) < score(gan_gen)


# ---------------------------------------------------------------- sweeps

def test_single_candidate_sweep_equals_fit():
    train, val = synthetic(100, 0), synthetic(40, 1)

    def closure(lr):
        gen = GeneratorModel(1, 1, 1, [6], seed=0)
        return fit(gen, train, val, TrainConfig(spec=scoring.Energy(), m=4, batch_size=50, epochs=3, lr=lr))

    res = lr_sweep(closure, [1e-3])
    assert res.best.to_json(False) == closure(1e-3).to_json(False)


def test_sweep_picks_lowest_and_reports_divergence():
    def closure(lr):
        if lr > 1:
            raise training.TrainingDivergence("boom")
        rep = training.TrainReport(val_score=[abs(lr - 0.3)], best_epoch=1, lr=lr)
        return rep

    res = lr_sweep(closure, [0.1, 5.0, 0.25, 0.9])
    assert res.best.lr == 0.25 and res.best_index == 2
    assert res.candidates[1][2] == "boom"
    with pytest.raises(training.TrainingDivergence, match="all sweep candidates"):
        lr_sweep(closure, [2.0, 3.0])


def test_sweep_grids():
    assert len(sweep_grid(TrainConfig(spec=scoring.Energy()))) == 5
    gan = sweep_grid(TrainConfig(method="gan", m=1))
    assert len(gan) == 25 and len(set(gan)) == 25
