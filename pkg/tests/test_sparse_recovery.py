import math
from dataclasses import replace

import numpy as np
import pytest

from fri_jsr.core_model import (GridConfig, PulseSpectrum, SamplingPattern, generate_dataset, hit_rate,
                                make_pulse_spectrum, nmse)
from fri_jsr.errors import DimensionError
from fri_jsr.sparse_recovery import (AdamOptimizer, IstaConfig, ListaParams, RecoveryConfig, TrainConfig,
                                     continuation_thresholds, debias, default_lambda, equalized_ista_params,
                                     fista_recover, fista_solve, init_lista_params, initial_lista_params,
                                     ista_lista_params, ista_solve, learning_rate_at, lista_forward, lista_mse,
                                     lista_train, loss_and_gradients, measurement_matrix, rescale_thresholds,
                                     soft_threshold, spectral_norm_sq, training_scale, validation_rows,
                                     validation_split)


def _complex(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def test_soft_threshold_examples():
    np.testing.assert_allclose(soft_threshold(np.array([3.0, -3.0, 0.5]), 1.0), [2.0, -2.0, 0.0])
    assert soft_threshold(np.array([3 + 4j]), 1.0)[0] == pytest.approx(2.4 + 3.2j)
    assert soft_threshold(np.array([0j]), 0.0)[0] == 0
    with pytest.raises(ValueError):
        soft_threshold(np.ones(2), -0.1)


def test_soft_threshold_is_non_expansive():
    rng = np.random.default_rng(0)
    u, v = _complex(rng, 500), _complex(rng, 500)
    for alpha in (0.0, 0.3, 2.0):
        assert np.all(np.abs(soft_threshold(u, alpha) - soft_threshold(v, alpha)) <= np.abs(u - v) + 1e-12)


def test_spectral_norm_is_exact():
    rng = np.random.default_rng(1)
    B = _complex(rng, 10, 14)
    assert spectral_norm_sq(B) == pytest.approx(np.linalg.norm(B, 2) ** 2, rel=1e-12)
    assert spectral_norm_sq(np.zeros((3, 3))) == 0.0


def test_step_parameter_bounds_the_gram_spectrum():
    # nearly repeated top singular values make a short power iteration stall below the true norm
    rng = np.random.default_rng(4)
    U, _ = np.linalg.qr(_complex(rng, 12, 12))
    Vh, _ = np.linalg.qr(_complex(rng, 12, 12))
    s = np.array([5.0, 5.0 - 1e-9] + list(np.linspace(3.0, 0.1, 10)))
    B = (U * s) @ Vh
    mu = spectral_norm_sq(B)
    assert mu >= np.max(np.linalg.eigvalsh(B.conj().T @ B)) * (1 - 1e-12)
    grid = GridConfig(12, 2)
    pulse = make_pulse_spectrum(grid)
    for pattern in (SamplingPattern.full(12), SamplingPattern.from_indices(12, [1, 2, 5, 7, 10, 12])):
        Bm = measurement_matrix(pulse, pattern)
        assert spectral_norm_sq(Bm) >= np.max(np.linalg.eigvalsh(Bm.conj().T @ Bm)) * (1 - 1e-12)


def test_ista_identity_is_one_shrink():
    rng = np.random.default_rng(2)
    f = _complex(rng, 4)
    res = ista_solve(f, np.eye(4), IstaConfig(lam=0.5))
    np.testing.assert_allclose(res.x, soft_threshold(f, 0.5), atol=1e-12)
    assert res.converged and res.iterations == 2
    assert len(res.objective) == 3


def test_ista_without_penalty_inverts():
    rng = np.random.default_rng(3)
    B = np.eye(6) + 0.1 * _complex(rng, 6, 6)
    x = _complex(rng, 6)
    res = ista_solve(B @ x, B, IstaConfig(lam=0.0, max_iters=5000, tol=1e-14))
    np.testing.assert_allclose(res.x, x, atol=1e-6)


def test_ista_objective_is_monotone():
    rng = np.random.default_rng(4)
    B = _complex(rng, 8, 12)
    res = ista_solve(_complex(rng, 8), B, IstaConfig(lam=0.1, max_iters=200, tol=0.0))
    obj = np.array(res.objective)
    assert np.all(np.diff(obj) <= 1e-9 * obj[0])
    assert res.iterations == 200 and not res.converged


def test_record_flag_skips_objective():
    rng = np.random.default_rng(4)
    B = _complex(rng, 5, 7)
    res = fista_solve(_complex(rng, 5), B, IstaConfig(lam=0.1, max_iters=20), record=False)
    assert res.objective == []


def test_fista_beats_ista_at_fixed_budget():
    rng = np.random.default_rng(5)
    wins = 0
    for _ in range(20):
        B = _complex(rng, 10, 20)
        f = _complex(rng, 10)
        mu = np.linalg.norm(B, 2) ** 2
        cfg = IstaConfig(lam=0.05, mu=mu, max_iters=100, tol=0.0)
        ista = ista_solve(f, B, cfg).objective[-1]
        fista = fista_solve(f, B, cfg).objective[-1]
        wins += fista <= ista + 1e-9 * abs(ista)
    assert wins >= 18


def test_batched_columns_match_single_solves():
    rng = np.random.default_rng(6)
    B = _complex(rng, 6, 9)
    F = _complex(rng, 6, 3)
    lam = default_lambda(F, B)
    cfg = IstaConfig(max_iters=50, tol=0.0)
    batch = fista_solve(F, B, cfg, lam=lam)
    for q in range(3):
        single = fista_solve(F[:, q], B, IstaConfig(lam=lam[q], max_iters=50, tol=0.0))
        np.testing.assert_allclose(batch.x[:, q], single.x, atol=1e-10)
    with pytest.raises(DimensionError):
        fista_solve(F[:4], B, cfg)


def test_debias_restores_shrunk_amplitudes():
    rng = np.random.default_rng(7)
    B = _complex(rng, 12, 20)
    x = np.zeros(20)
    x[[2, 9, 15]] = [4.0, -2.5, 7.0]
    shrunk = 0.6 * x
    np.testing.assert_allclose(debias(B @ x, B, shrunk), x, atol=1e-10)
    noisy_support = shrunk + 1e-3 * (np.arange(20) == 4)
    np.testing.assert_allclose(debias(B @ x, B, noisy_support, support_size=3), x, atol=1e-10)
    assert not np.any(debias(B @ x, B, np.zeros(20)))


def test_fista_recover_finds_sparse_support():
    grid = GridConfig(30, 3)
    pulse = make_pulse_spectrum(grid)
    ds = generate_dataset(grid, pulse, 5, seed=3)
    rng = np.random.default_rng(8)
    pattern = SamplingPattern.from_indices(30, rng.choice(30, 20, replace=False) + 1)
    F_bar, _ = ds.measurements(pattern)
    est = fista_recover(F_bar, pulse, pattern, grid.L)
    exact = [nmse(ds.amplitudes[q:q + 1], est[q:q + 1]) < -100 for q in range(ds.Q)]
    assert sum(exact) >= 4
    assert hit_rate(ds.amplitudes, est, grid.L) >= 0.9


def test_fista_recover_empty_pattern():
    grid = GridConfig(8, 2)
    est = fista_recover(np.ones((3, 8)), make_pulse_spectrum(grid), SamplingPattern.empty(8), 2, RecoveryConfig())
    assert est.shape == (3, 8) and not np.any(est)


def test_lista_trivial_outputs():
    params = init_lista_params(3, 5, seed=0)
    assert not np.any(lista_forward(params, np.zeros(5)))
    params.lam[:] = 1e9
    rng = np.random.default_rng(9)
    assert not np.any(lista_forward(params, _complex(rng, 4, 5)))
    with pytest.raises(DimensionError):
        lista_forward(params, np.zeros(6))


def test_lista_params_validation():
    with pytest.raises(ValueError):
        ListaParams(np.array([-0.1]), np.zeros((1, 3, 3)), np.zeros((1, 3, 3)))
    with pytest.raises(DimensionError):
        ListaParams(np.zeros(2), np.zeros((2, 3, 3)), np.zeros((2, 3, 4)))
    assert init_lista_params(10, 30, seed=0).degrees_of_freedom == 10 * (2 * 900 + 1)


def test_ista_valued_lista_reproduces_ista():
    grid = GridConfig(12, 2)
    pulse = make_pulse_spectrum(grid)
    pattern = SamplingPattern.from_indices(12, [1, 2, 4, 5, 8, 9, 11])
    ds = generate_dataset(grid, pulse, 6, seed=1)
    F_bar, _ = ds.measurements(pattern)
    B = measurement_matrix(pulse, pattern)
    mu = np.linalg.norm(B, 2) ** 2
    lam_bar = 0.05 * mu
    params = ista_lista_params(B, mu, lam_bar, 7)
    ista = ista_solve(F_bar.T, B, IstaConfig(lam=lam_bar, mu=mu, max_iters=7, tol=0.0))
    ref = np.real(ista.x).T
    np.testing.assert_allclose(lista_forward(params, F_bar), ref, atol=1e-10 * np.max(np.abs(ref)))


def test_equalized_layers_reduce_to_ista_for_flat_pulse():
    pattern = SamplingPattern.from_indices(8, [1, 3, 4, 7])
    flat = PulseSpectrum(np.ones(8))
    B = measurement_matrix(flat, pattern)
    mu = np.linalg.norm(B, 2) ** 2
    thresholds = continuation_thresholds(0.4, 0.01, 5)
    eq = equalized_ista_params(flat, pattern, thresholds, floor=0.0)
    ref = ista_lista_params(B, mu, 0.0, 5)
    np.testing.assert_allclose(eq.W, ref.W, atol=1e-12)
    np.testing.assert_allclose(eq.V, ref.V, atol=1e-12)
    np.testing.assert_allclose(eq.lam, thresholds)
    assert thresholds[0] == pytest.approx(0.4) and thresholds[-1] == pytest.approx(0.01)
    assert np.all(np.diff(thresholds) < 0)
    np.testing.assert_array_equal(continuation_thresholds(0.01, 0.05, 3), [0.05, 0.05, 0.05])
    with pytest.raises(ValueError):
        equalized_ista_params(flat, SamplingPattern.empty(8), thresholds)


def test_equalized_layers_undo_the_pulse():
    grid = GridConfig(12, 2)
    pulse = make_pulse_spectrum(grid)
    pattern = SamplingPattern.from_indices(12, [1, 2, 5, 7, 10, 12])
    flat = PulseSpectrum(np.ones(12))
    X = generate_dataset(grid, pulse, 5, seed=3).amplitudes
    F_bar = X @ measurement_matrix(pulse, pattern).T
    F_flat = X @ measurement_matrix(flat, pattern).T
    eq = equalized_ista_params(pulse, pattern, np.zeros(1), floor=0.0)
    ref = equalized_ista_params(flat, pattern, np.zeros(1), floor=0.0)
    np.testing.assert_allclose(F_bar @ eq.V[0].T, F_flat @ ref.V[0].T, atol=1e-9)
    np.testing.assert_allclose(eq.W, ref.W, atol=1e-12)


def test_threshold_rescaling_is_homogeneous():
    rng = np.random.default_rng(12)
    params = init_lista_params(4, 7, seed=2, init_lambda=0.3)
    F = _complex(rng, 5, 7)
    scaled = rescale_thresholds(params, 20.0)
    np.testing.assert_allclose(lista_forward(scaled, 20.0 * F), 20.0 * lista_forward(params, F), rtol=1e-10,
                               atol=1e-10)
    assert scaled.W is not params.W
    np.testing.assert_array_equal(params.lam, np.full(4, 0.3))


def test_lista_is_permutation_equivariant():
    rng = np.random.default_rng(13)
    N, P = 7, 4
    params = init_lista_params(P, N, seed=4, init_lambda=0.2)
    F = _complex(rng, 6, N)
    perm = rng.permutation(N)
    moved = ListaParams(params.lam, params.W[:, perm][:, :, perm], params.V[:, perm][:, :, perm])
    np.testing.assert_allclose(lista_forward(moved, F[:, perm]), lista_forward(params, F)[:, perm], atol=1e-12)
    rows = rng.permutation(6)
    np.testing.assert_allclose(lista_forward(params, F[rows]), lista_forward(params, F)[rows], atol=1e-12)


def _loss(params, F, X):
    return loss_and_gradients(params, F, X)[0]


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    N, P, Q = 6, 3, 4
    params = init_lista_params(P, N, seed=1, init_lambda=0.05)
    F = _complex(rng, Q, N)
    X = rng.normal(size=(Q, N))
    _, grads = loss_and_gradients(params, F, X)
    h = 1e-6

    def numeric(name, index, delta):
        plus, minus = params.copy(), params.copy()
        getattr(plus, name)[index] += delta
        getattr(minus, name)[index] -= delta
        return (_loss(plus, F, X) - _loss(minus, F, X)) / (2 * h)

    for p in range(P):
        assert grads.lam[p] == pytest.approx(numeric("lam", p, h), rel=1e-5, abs=1e-6)
    for name in ("W", "V"):
        g = getattr(grads, name)
        for _ in range(6):
            index = (rng.integers(P), rng.integers(N), rng.integers(N))
            assert g[index].real == pytest.approx(numeric(name, index, h), rel=1e-5, abs=1e-6)
            assert g[index].imag == pytest.approx(numeric(name, index, 1j * h), rel=1e-5, abs=1e-6)


def test_loss_is_a_batch_mean():
    rng = np.random.default_rng(11)
    params = init_lista_params(2, 5, seed=3, init_lambda=0.1)
    F = _complex(rng, 6, 5)
    X = rng.normal(size=(6, 5))
    loss, grads = loss_and_gradients(params, F, X)
    loss2, grads2 = loss_and_gradients(params, np.vstack([F, F]), np.vstack([X, X]))
    assert loss2 == pytest.approx(loss, rel=1e-12)
    for a, b in zip(grads.arrays(), grads2.arrays()):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
    perm = rng.permutation(6)
    loss3, grads3 = loss_and_gradients(params, F[perm], X[perm])
    assert loss3 == pytest.approx(loss, rel=1e-12)
    for a, b in zip(grads.arrays(), grads3.arrays()):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
    assert lista_mse(params, F, X, chunk=4) == pytest.approx(loss, rel=1e-12)


def test_adam_first_step_and_convergence():
    w = np.zeros(1)
    AdamOptimizer(lr=0.01).step([w], [np.array([5.0])])
    assert w[0] == pytest.approx(-0.01, rel=1e-6)

    target = np.array([3.0 - 2.0j, -1.0 + 0.5j])
    z = np.zeros(2, dtype=complex)
    r = np.zeros(3)
    opt = AdamOptimizer(lr=0.01)
    for _ in range(3000):
        opt.step([z, r], [2 * (z - target), 2 * (r - 1.5)])
    np.testing.assert_allclose(z, target, atol=5e-2)
    np.testing.assert_allclose(r, 1.5, atol=5e-2)


def test_validation_split_properties():
    train, val = validation_split(100, 0.1, seed=4)
    assert val.size == 10 and train.size == 90
    assert np.union1d(train, val).tolist() == list(range(100))
    again, _ = validation_split(100, 0.1, seed=4)
    np.testing.assert_array_equal(train, again)
    assert validation_split(1, 0.1, 0)[1].size == 0
    assert validation_split(10, 0.0, 0)[1].size == 0
    np.testing.assert_array_equal(validation_rows(10, TrainConfig(validation_fraction=0.0)), np.arange(10))
    with pytest.raises(ValueError):
        TrainConfig(validation_fraction=1.0)


def _tiny_training():
    grid = GridConfig(6, 1)
    ds = generate_dataset(grid, make_pulse_spectrum(grid), 40, seed=2)
    pattern = SamplingPattern.from_indices(6, [1, 3, 4, 6])
    cfg = TrainConfig(learning_rate=1e-2, batch_size=8, max_epochs=3, patience=5, seed=1)
    return ds, pattern, cfg


def test_training_is_deterministic():
    ds, pattern, cfg = _tiny_training()
    a, log_a = lista_train(ds, pattern, cfg, P=2, init_seed=3, shuffle_seed=5)
    b, log_b = lista_train(ds, pattern, cfg, P=2, init_seed=3, shuffle_seed=5)
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(x, y)
    assert log_a.val_loss == log_b.val_loss
    assert len(log_a.val_loss) <= cfg.max_epochs
    assert log_a.best_val == min(log_a.val_loss)
    assert log_a.best_epoch == int(np.argmin(log_a.val_loss))
    assert np.all(a.lam >= 0)


def test_training_keeps_init_params_untouched():
    ds, pattern, cfg = _tiny_training()
    start = init_lista_params(2, 6, seed=9)
    before = start.copy()
    lista_train(ds, pattern, cfg, P=2, init_params=start)
    np.testing.assert_array_equal(start.W, before.W)
    with pytest.raises(ValueError):
        lista_train(ds.subset(np.arange(0)), pattern, cfg)


def test_warm_start_uses_falling_thresholds():
    ds, pattern, cfg = _tiny_training()
    params = initial_lista_params(ds, pattern, cfg, P=4)
    assert params.P == 4 and np.all(np.diff(params.lam) < 0)
    assert params.lam[-1] == pytest.approx(cfg.init_lambda)
    F_bar, _ = ds.measurements(pattern)
    train_idx, _ = validation_split(ds.Q, cfg.validation_fraction, cfg.seed)
    peaks = np.max(np.abs(F_bar[train_idx] @ params.V[0].T), axis=1)
    assert params.lam[0] == pytest.approx(0.5 * np.median(peaks))
    halved = initial_lista_params(ds, pattern, cfg, P=4, scale=2.0)
    assert halved.lam[0] == pytest.approx(params.lam[0] / 2)
    rand = initial_lista_params(ds, pattern, replace(cfg, init="random"), P=4, seed=3)
    np.testing.assert_array_equal(rand.W, init_lista_params(4, 6, 3, cfg.init_lambda).W)
    empty = initial_lista_params(ds, SamplingPattern.empty(6), cfg, P=4, seed=3)
    np.testing.assert_array_equal(empty.V, rand.V)


def test_learning_rate_schedule():
    cfg = TrainConfig(learning_rate=1e-3, max_epochs=11, min_lr_ratio=0.01)
    rates = [learning_rate_at(cfg, e) for e in range(11)]
    assert rates[0] == pytest.approx(1e-3)
    assert rates[-1] == pytest.approx(1e-5)
    assert rates[5] == pytest.approx(0.5 * (1e-3 + 1e-5))
    assert np.all(np.diff(rates) < 0)
    flat = replace(cfg, lr_schedule="constant")
    assert {learning_rate_at(flat, e) for e in range(11)} == {1e-3}
    assert learning_rate_at(TrainConfig(max_epochs=1), 0) == pytest.approx(1e-3)
    for bad in ({"init": "zeros"}, {"lr_schedule": "step"}, {"min_lr_ratio": 0.0}, {"init_lambda": -1.0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_training_scale_and_logged_units():
    assert training_scale(np.array([[3.0, 4.0], [0.0, 0.0]])) == pytest.approx(math.sqrt(12.5))
    assert training_scale(np.zeros((3, 2))) == 1.0
    assert training_scale(np.zeros((0, 2))) == 1.0
    ds, pattern, cfg = _tiny_training()
    params, log = lista_train(ds, pattern, cfg, P=2)
    F_bar, _ = ds.measurements(pattern)
    rows = validation_rows(ds.Q, cfg)
    assert lista_mse(params, F_bar[rows], ds.amplitudes[rows]) == log.best_val


@pytest.mark.slow
def test_training_improves_on_its_starting_layers():
    grid = GridConfig(12, 2)
    ds = generate_dataset(grid, make_pulse_spectrum(grid), 2000, seed=0)
    pattern = SamplingPattern.full(12)
    cfg = TrainConfig(max_epochs=30, patience=30)
    params, log = lista_train(ds, pattern, cfg, P=5, init_seed=0)
    F_bar, _ = ds.measurements(pattern)
    rows = validation_rows(ds.Q, cfg)
    scale = training_scale(ds.amplitudes[validation_split(ds.Q, cfg.validation_fraction, cfg.seed)[0]])
    start = rescale_thresholds(initial_lista_params(ds, pattern, cfg, 5, 0, scale), scale)
    assert log.best_val < lista_mse(start, F_bar[rows], ds.amplitudes[rows])
    assert lista_mse(params, F_bar[rows], ds.amplitudes[rows]) == pytest.approx(log.best_val)
    assert math.isfinite(log.best_val)


@pytest.mark.slow
def test_desk_training_fixture():
    grid = GridConfig(12, 2)
    ds = generate_dataset(grid, make_pulse_spectrum(grid), 2000, seed=0)
    pattern = SamplingPattern.from_indices(12, [1, 2, 5, 7, 10, 12])
    cfg = TrainConfig(batch_size=32, max_epochs=50, patience=50)
    params, log = lista_train(ds, pattern, cfg, P=10, init_seed=0)
    F_bar, _ = ds.measurements(pattern)
    rows = validation_rows(ds.Q, cfg)
    assert len(log.val_loss) <= 50
    assert nmse(ds.amplitudes[rows], lista_forward(params, F_bar[rows])) < -30.0
    smoothed = np.convolve(log.train_loss, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smoothed) <= 1e-2 * smoothed[:-1])
