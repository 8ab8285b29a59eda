import math

import numpy as np
import pytest

from fri_jsr.core_model import (GridConfig, PulseSpectrum, SamplingPattern, SparseVector, SparsityModel, add_noise,
                                floor_db, generate_dataset, hit_rate, make_pulse_spectrum, measurement_basis,
                                nmse, split_dataset, subsample, synthesize_fourier)
from fri_jsr.errors import DimensionError


def test_pulse_spectrum_values():
    h = make_pulse_spectrum(GridConfig(30, 5)).samples.real
    assert h[21] == pytest.approx(1.00005, abs=1e-5)
    assert h[0] == pytest.approx(0.749, abs=1e-3)
    assert np.all(h > 0.01)


def test_pulse_spectrum_rejects_zero_entry():
    with pytest.raises(ValueError):
        PulseSpectrum(np.array([1.0, 0.0, 2.0]))


def test_grid_validation():
    with pytest.raises(ValueError):
        GridConfig(10, 11)
    with pytest.raises(ValueError):
        GridConfig(10, 2, t_max=0.0)
    g = GridConfig(30, 5, t_max=2.0)
    assert g.delta == pytest.approx(2.0 / 30)
    assert g.omega0 == pytest.approx(math.pi)


def test_basis_is_scaled_unitary():
    A = measurement_basis(30).entries
    np.testing.assert_allclose(A @ A.conj().T, 30 * np.eye(30), atol=1e-9)


def test_single_spike_spectrum():
    grid = GridConfig(4, 1)
    pulse = PulseSpectrum(np.ones(4))
    x = SparseVector.from_support(4, [1], [1.0])
    f = synthesize_fourier(x, pulse, measurement_basis(4))
    np.testing.assert_allclose(f, [1j, -1, -1j, 1], atol=1e-12)
    assert np.all(synthesize_fourier(np.zeros(4), pulse, measurement_basis(4)) == 0)
    assert grid.N == x.N


def test_synthesis_matches_scalar_loop():
    rng = np.random.default_rng(3)
    N = 12
    x = rng.normal(size=N)
    h = rng.normal(size=N) + 1j * rng.normal(size=N) + 3.0
    f = synthesize_fourier(x, PulseSpectrum(h), measurement_basis(N))
    for k in range(1, N + 1):
        ref = h[k - 1] * sum(x[n - 1] * np.exp(2j * np.pi * k * n / N) for n in range(1, N + 1))
        assert abs(f[k - 1] - ref) < 1e-12 * max(1.0, abs(ref))
    # batch rows agree with single vectors
    X = rng.normal(size=(3, N))
    F = synthesize_fourier(X, PulseSpectrum(h), measurement_basis(N))
    np.testing.assert_allclose(F[1], synthesize_fourier(X[1], PulseSpectrum(h), measurement_basis(N)), atol=1e-12)


def test_synthesis_dimension_mismatch():
    with pytest.raises(DimensionError):
        synthesize_fourier(np.zeros(5), PulseSpectrum(np.ones(4)), measurement_basis(4))


def test_sparse_vector_invariants():
    with pytest.raises(ValueError):
        SparseVector(np.array([1.0, 2.0, 0.0]), (1,))
    v = SparseVector.from_values([0.0, 2.5, 0.0, -1.0])
    assert v.support == (2, 4)
    np.testing.assert_array_equal(v.amplitudes, [2.5, -1.0])
    with pytest.raises(ValueError):
        SparseVector.from_values([1.0, 1.0, 1.0], L=2)
    np.testing.assert_allclose(v.delays(GridConfig(4, 2)), [0.5, 1.0])


def test_sampling_pattern_operations():
    p = SamplingPattern.from_indices(5, [5, 2])
    assert p.indices == (2, 5)
    assert p.count == 2
    f = np.arange(1, 6).astype(complex)
    np.testing.assert_array_equal(subsample(f, p), [0, 2, 0, 0, 5])
    np.testing.assert_array_equal(subsample(f, SamplingPattern.full(5)), f)
    assert not np.any(subsample(f, SamplingPattern.empty(5)))
    q = p.with_index(3)
    assert p.issubset(q) and not q.issubset(p)
    assert q.without_index(3) == p
    assert hash(q.without_index(3)) == hash(p)
    with pytest.raises(ValueError):
        SamplingPattern.from_indices(5, [6])


def test_add_noise_clean_and_variance_formula():
    N = 16
    p = SamplingPattern.full(N)
    f = np.ones(N, dtype=complex)
    out, s2 = add_noise(f, "clean", p, np.random.default_rng(0))
    np.testing.assert_array_equal(out, f)
    assert s2 == 0.0
    _, s2 = add_noise(f, 0.0, p, np.random.default_rng(0))
    assert s2 == pytest.approx(1.0)


def test_add_noise_empirical_variance_and_mask():
    N = 100000
    p = SamplingPattern.full(N)
    f = np.ones(N, dtype=complex)
    noisy, s2 = add_noise(f, 10.0, p, np.random.default_rng(1))
    assert np.mean(np.abs(noisy - f) ** 2) == pytest.approx(s2, rel=0.02)

    small = SamplingPattern.from_indices(6, [1, 4])
    noisy, _ = add_noise(subsample(np.ones(6), small), 20.0, small, np.random.default_rng(2))
    assert np.all(noisy[~small.mask] == 0)


def test_generate_dataset_uniform_statistics():
    grid = GridConfig(30, 5)
    ds = generate_dataset(grid, make_pulse_spectrum(grid), 20000, seed=4)
    counts = np.count_nonzero(ds.amplitudes, axis=1)
    assert np.all(counts == 5)
    freq = np.mean(ds.amplitudes != 0, axis=0)
    sigma = math.sqrt((1 / 6) * (5 / 6) / ds.Q)
    assert np.all(np.abs(freq - 1 / 6) < 4 * sigma)
    nz = ds.amplitudes[ds.amplitudes != 0]
    assert nz.mean() == pytest.approx(10.0, abs=0.03)
    assert nz.var() == pytest.approx(3.0, rel=0.05)


def test_generate_dataset_is_deterministic():
    grid = GridConfig(12, 2)
    a = generate_dataset(grid, make_pulse_spectrum(grid), 50, seed=9)
    b = generate_dataset(grid, make_pulse_spectrum(grid), 50, seed=9)
    assert a.amplitudes.tobytes() == b.amplitudes.tobytes()
    c = generate_dataset(grid, make_pulse_spectrum(grid), 50, seed=10)
    assert not np.array_equal(a.amplitudes, c.amplitudes)


def test_structured_sparsity_blocks():
    grid = GridConfig(30, 5)
    model = SparsityModel.structured([(1, 10, 2), (21, 30, 3)])
    ds = generate_dataset(grid, make_pulse_spectrum(grid), 500, model, seed=1)
    nz = ds.amplitudes != 0
    assert not np.any(nz[:, 10:20])
    assert np.all(nz[:, :10].sum(axis=1) == 2)
    assert np.all(nz[:, 20:].sum(axis=1) == 3)


def test_structured_sparsity_rejects_bad_blocks():
    grid = GridConfig(30, 5)
    with pytest.raises(ValueError):
        SparsityModel.structured([(1, 10, 2), (21, 30, 2)]).validate(grid)
    with pytest.raises(ValueError):
        SparsityModel.structured([(25, 31, 5)]).validate(grid)
    with pytest.raises(ValueError):
        SparsityModel.structured([(1, 10, 2), (5, 15, 3)]).validate(grid)


def test_measurements_match_add_noise_per_example():
    grid = GridConfig(12, 2)
    ds = generate_dataset(grid, make_pulse_spectrum(grid), 8, seed=5, snr_db=20.0)
    p = SamplingPattern.from_indices(12, [1, 2, 5, 7, 11])
    F, s2 = ds.measurements(p)
    f = ds.fourier()
    for q in range(ds.Q):
        rng = np.random.default_rng([5, q, 1])
        ref, ref_s2 = add_noise(subsample(f[q], p), 20.0, p, rng)
        np.testing.assert_allclose(F[q], ref, atol=1e-12)
        assert s2[q] == pytest.approx(ref_s2)


def test_split_is_disjoint_and_keeps_noise():
    grid = GridConfig(12, 2)
    ds = generate_dataset(grid, make_pulse_spectrum(grid), 30, seed=2, snr_db=25.0)
    train, test = split_dataset(ds, 10)
    assert train.Q == 20 and test.Q == 10
    assert np.intersect1d(train.index, test.index).size == 0
    p = SamplingPattern.from_indices(12, [2, 3, 8])
    F_all, _ = ds.measurements(p)
    F_test, _ = test.measurements(p)
    np.testing.assert_allclose(F_test, F_all[20:], atol=1e-12)
    with pytest.raises(ValueError):
        split_dataset(ds, 30)


def test_nmse_values():
    x = np.array([[3.0, 4.0, 0.0]])
    assert nmse(x, x) == -math.inf
    assert floor_db(nmse(x, x)) == -200.0
    assert nmse(x, np.zeros_like(x)) == pytest.approx(0.0)
    assert nmse(x, np.array([[3.0, 4.0, 1.0]])) == pytest.approx(-13.979, abs=1e-3)
    with pytest.raises(ValueError):
        nmse(np.zeros((1, 3)), np.ones((1, 3)))


def test_hit_rate_counts():
    truth = np.zeros((1, 10))
    truth[0, [0, 2, 4, 6, 8]] = 1.0
    assert hit_rate(truth, truth, 5) == 1.0
    est = np.zeros((1, 10))
    est[0, [1, 3, 5, 7, 9]] = 1.0
    assert hit_rate(truth, est, 5) == 0.0
    est = np.zeros((1, 10))
    est[0, [0, 2, 4, 6, 9]] = 1.0
    assert hit_rate(truth, est, 5) == pytest.approx(0.8)


def test_hit_rate_rejects_empty_sets():
    with pytest.raises(ValueError):
        hit_rate(np.zeros((0, 10)), np.zeros((0, 10)), 5)
    with pytest.raises(ValueError):
        hit_rate(np.ones((2, 10)), np.ones((2, 10)), 0)
