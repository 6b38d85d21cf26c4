import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from copvae import simulator as sim
from copvae.simulator import DamageState, Environment
from copvae.errors import ArityError, ConfigurationError, DomainError

FS = 1.0 / sim.DT
ENV = Environment(6.0, 9.0, 12.0)


def test_healthy_natural_frequency():
    assert sim.natural_frequency(DamageState(0.0, 0.0), 0.02) == 0.02


def test_full_anchoring_natural_frequency():
    assert sim.natural_frequency(DamageState(0.0, 1.0), 0.02) == pytest.approx(0.02 * np.sqrt(0.6),
                                                                               rel=1e-15)


def test_simulation_is_deterministic():
    a = sim.simulate_response(DamageState(0.2, 0.4), ENV, 11)
    b = sim.simulate_response(DamageState(0.2, 0.4), ENV, 11)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (3, 18000)


def test_simulation_depends_on_seed():
    a = sim.simulate_response(DamageState(0.2, 0.4), ENV, 1)
    b = sim.simulate_response(DamageState(0.2, 0.4), ENV, 2)
    assert not np.array_equal(a, b)


def test_out_of_range_inputs():
    with pytest.raises(DomainError):
        sim.simulate_response(DamageState(0.2, 0.4), (1.0, 9.0, 12.0), 0)
    with pytest.raises(DomainError):
        DamageState(1.2, 0.0)
    with pytest.raises(ConfigurationError):
        sim.simulate_response(DamageState(0.2, 0.4), ENV, 0, n_dof=4)


def test_resonance_peak_tracks_natural_frequency():
    z = DamageState(0.3, 0.7)
    x = sim.simulate_response(z, ENV, 5, n_dof=1)[0]
    f1 = sim.extract_features(x, FS)[2]
    assert abs(f1 - sim.natural_frequency(z, 0.02)) <= 1.0 / (0.9 * sim.DURATION)


def test_constant_series():
    feats = sim.extract_features(np.full(1000, 3.5), FS)
    assert feats[0] == 3.5
    assert feats[1] == 0.0


def test_pure_sine():
    t = np.arange(18000) * sim.DT
    a, f = 2.0, 0.021
    feats = sim.extract_features(a * np.sin(2 * np.pi * f * t), FS)
    assert feats[1] == pytest.approx(a / np.sqrt(2), rel=0.01)
    assert abs(feats[2] - f) <= 1.0 / (0.9 * sim.DURATION)


def test_two_sines_peaks():
    t = np.arange(18000) * sim.DT
    x = np.sin(2 * np.pi * 0.03 * t) + 0.5 * np.sin(2 * np.pi * 0.12 * t + 1.0)
    feats = sim.extract_features(x, FS, f_lim=0.05)
    # Periodogram oracle: peak bins computed directly from the FFT.
    kept = x[1800:]
    spec = np.abs(np.fft.rfft(kept - kept.mean())) ** 2
    freqs = np.fft.rfftfreq(kept.size, sim.DT)
    low, high = freqs <= 0.05, freqs >= 0.05
    assert feats[2] == freqs[low][np.argmax(spec[low])]
    assert feats[3] == freqs[high][np.argmax(spec[high])]
    bin_width = freqs[1]
    assert abs(feats[2] - 0.03) <= bin_width
    assert abs(feats[3] - 0.12) <= bin_width


def test_m0_matches_hand_integral():
    t = np.arange(18000) * sim.DT
    x = np.sin(2 * np.pi * 0.03 * t)
    kept = x[1800:]
    n = kept.size
    freqs = np.fft.rfftfreq(n, sim.DT)
    psd = 2.0 * np.abs(np.fft.rfft(kept - kept.mean())) ** 2 * sim.DT / n
    psd[0] /= 2.0
    if n % 2 == 0:
        psd[-1] /= 2.0
    omega = 2 * np.pi * freqs
    ref = np.sum(0.5 * (omega[1:] * psd[1:] + omega[:-1] * psd[:-1]) * np.diff(omega))
    assert sim.extract_features(x, FS)[4] == pytest.approx(ref, rel=1e-10)


def test_feature_errors():
    with pytest.raises(ConfigurationError):
        sim.extract_features(np.ones(100), FS, f_lim=5.0)
    with pytest.raises(ArityError):
        sim.extract_features(np.ones(1), FS)


def test_discard_route_is_exact():
    x = sim.simulate_response(DamageState(0.1, 0.3), ENV, 3, n_dof=1)[0]
    n0 = int(0.1 * x.size)
    np.testing.assert_array_equal(sim.extract_features(x, FS),
                                  sim.extract_features(x[n0:], FS, discard=0.0))


def test_discarding_transient_twice_is_harmless():
    x = sim.simulate_response(DamageState(0.1, 0.3), ENV, 3, n_dof=1)[0]
    once = sim.extract_features(x, FS)
    twice = sim.extract_features(x[int(0.1 * x.size):], FS)
    np.testing.assert_allclose(once[:2], twice[:2], rtol=0.01)
    assert abs(once[2] - twice[2]) <= 1.0 / (0.81 * sim.DURATION)
    assert abs(once[3] - twice[3]) <= 1.0 / (0.81 * sim.DURATION)


def test_feature_invariants_on_simulated_records(rng):
    for _ in range(10):
        z, w = sim.sample_damage(rng), sim.sample_environment(rng)
        f = sim.scenario_features(z, w, rng).reshape(3, 5)
        assert np.all(f[:, 1] >= 0)
        assert np.all((0 <= f[:, 2]) & (f[:, 2] <= sim.F_LIM) & (sim.F_LIM <= f[:, 3]))
        assert np.all(f[:, 4] >= 0)


def _grid_average(column, dof=0):
    rng = np.random.default_rng(4)
    envs = [sim.sample_environment(rng) for _ in range(50)]
    out = []
    for z2 in (0.0, 0.25, 0.5, 0.75, 1.0):
        f = [sim.scenario_features(DamageState(0.0, z2), w, i, n_dof=dof + 1)
             for i, w in enumerate(envs)]
        out.append(np.mean([row[5 * dof + column] for row in f]))
    return np.array(out)


def test_peak_frequency_falls_with_anchoring():
    assert np.all(np.diff(_grid_average(2)) < 0)


def test_mean_offset_grows_with_anchoring():
    assert np.all(np.diff(_grid_average(0)) > 0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_damage_in_unit_square(seed):
    z = sim.sample_damage(np.random.default_rng(seed)).as_array()
    assert np.all((0 <= z) & (z <= 1))


def test_damage_distribution_statistics(rng):
    z = np.array([sim.sample_damage(rng).as_array() for _ in range(100000)])
    assert np.all(np.median(z, axis=0) < 0.25)
    assert np.all((z == 1.0).mean(axis=0) < 0.01)
    # The folded normal median is 0.25 * Phi^-1(0.75).
    np.testing.assert_allclose(np.median(z, axis=0), 0.25 * stats.norm.ppf(0.75), atol=0.005)


def test_environment_in_box(rng):
    for _ in range(100):
        w = sim.sample_environment(rng).as_array()
        assert np.all((sim.ENV_BOUNDS[:, 0] <= w) & (w <= sim.ENV_BOUNDS[:, 1]))


@pytest.fixture(scope="module")
def small():
    return sim.build_dataset(100, seed=3)


def test_split_counts(small):
    assert [int(small.mask(s).sum()) for s in ("train", "val", "test")] == [70, 20, 10]
    assert sim.split_counts(6000) == (4200, 1200, 600)


def test_scaled_train_range(small):
    m, w, _, _ = small.part("train")
    np.testing.assert_array_equal(m.min(axis=0), 0.0)
    np.testing.assert_array_equal(m.max(axis=0)[small.scaler.high > small.scaler.low], 1.0)
    assert np.all((0 <= w) & (w <= 1))


def test_scaler_round_trip(small):
    back = small.scaler.inverse(small.scaler.transform(small.m))
    np.testing.assert_allclose(back, small.m, rtol=1e-12, atol=1e-12)
    again = sim.MinMaxScaler.from_dict(small.scaler.to_dict())
    np.testing.assert_array_equal(again.low, small.scaler.low)


def test_dataset_reproducible(small):
    again = sim.build_dataset(100, seed=3)
    assert again.m.tobytes() == small.m.tobytes()
    assert list(again.split) == list(small.split)


def test_parallel_build_matches_serial(small):
    par = sim.build_dataset(100, seed=3, workers=2)
    assert par.m.tobytes() == small.m.tobytes()
    assert par.env.tobytes() == small.env.tobytes()


def test_dataset_needs_ten():
    with pytest.raises(ConfigurationError):
        sim.build_dataset(5)
