import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superchem import DivergenceError, ModeAmplitudes, ModelParams, ParameterError, TimeGrid, initial_state
from superchem.meanfield import mf_drift
from superchem.positive_p import (
    NoiseIncrement,
    noise_amplitudes,
    pp_step,
    run_trajectory,
    simulate_ensemble,
    trajectory_seed,
)


def params(**kw):
    base = dict(g_rf=0.0, lambda_a=0.0, lambda_b=0.0)
    base.update(kw)
    return ModelParams(**base)


def test_noise_vanishes_on_fresh_condensate_without_collisions():
    s = noise_amplitudes(initial_state(1000), params(g_rf=28))
    assert all(v == 0 for v in s)


def test_noise_amplitude_values():
    la = 1e-3
    s = noise_amplitudes(initial_state(1000), params(lambda_a=la))
    assert s[0] == pytest.approx(np.sqrt(-2j * la * 1000))
    assert s[1] == pytest.approx(np.sqrt(2j * la * 1000))
    assert s[2:] == (0, 0, 0, 0)

    s = noise_amplitudes(ModeAmplitudes(b=0.5j, bp=-0.5j), params())
    # -2i * (i/2) = 1 and 2i * (-i/2) = 1
    assert s[2] == pytest.approx(1)
    assert s[3] == pytest.approx(1)


def test_step_hand_evaluated():
    state = ModeAmplitudes(a2=1, a2p=1, b=0.5j, bp=-0.5j)
    out = pp_step(state, params(), 0.01, NoiseIncrement((0, 0, 0.1, 0, 0, 0)))
    # da2 = -2i a2p b dt + 1 * eta; da2p = 2i a2 bp dt; db = -i a2^2 dt
    assert out.a2 == pytest.approx(1 + 0.01 + 0.1)
    assert out.a2p == pytest.approx(1.01)
    assert out.b == pytest.approx(0.5j - 0.01j)
    assert out.bp == pytest.approx(-0.5j + 0.01j)
    assert out.a1 == out.a1p == 0


def test_step_without_noise_is_euler():
    p = params(g_rf=3, lambda_a=0.01, lambda_b=0.02, delta=0.3, gamma_decay=0.1)
    s = ModeAmplitudes(1 + 1j, 1 - 1j, 0.5, 0.5, 0.2j, -0.2j)
    out = pp_step(s, p, 1e-3, NoiseIncrement((0,) * 6))
    d = mf_drift(s, p)
    np.testing.assert_allclose(out.as_array(), s.as_array() + 1e-3 * d.as_array())


def test_noise_increment_needs_six_channels():
    with pytest.raises(ParameterError):
        NoiseIncrement((0.0,) * 5)


def test_uncoupled_state_is_stationary():
    p = params()
    tr = run_trajectory(initial_state(50), p, TimeGrid(0.5, 1e-3, 50), seed=3)
    assert np.all(tr.moment_samples[:, 0] == pytest.approx(50))
    assert not tr.diverged


def test_trajectory_reproducible():
    p = params(g_rf=4, lambda_a=1e-3, lambda_b=1e-3)
    grid = TimeGrid(0.05, 1e-4, 50)
    a = run_trajectory(initial_state(1000), p, grid, seed=123)
    b = run_trajectory(initial_state(1000), p, grid, seed=123)
    c = run_trajectory(initial_state(1000), p, grid, seed=124)
    assert a.moment_samples.tobytes() == b.moment_samples.tobytes()
    assert a.moment_samples.tobytes() != c.moment_samples.tobytes()


def test_trajectory_matches_python_stepper():
    """The compiled kernel reproduces the reference single-step function."""
    p = params(g_rf=4, lambda_a=1e-2, lambda_b=2e-2, delta=0.2, gamma_decay=0.1)
    grid = TimeGrid(0.02, 1e-3)
    seed = trajectory_seed(7, 0)
    tr = run_trajectory(initial_state(20), p, grid, seed)
    gen = np.random.Generator(np.random.Philox(seed))
    eta = gen.standard_normal((grid.n_steps, 6)) * math.sqrt(grid.dt)
    s = initial_state(20)
    for row in eta:
        s = pp_step(s, p, grid.dt, NoiseIncrement(tuple(row)))
    np.testing.assert_allclose(tr.amplitude_samples[-1], s.as_array(), rtol=1e-12, atol=1e-12)


def test_refined_noise_follows_fine_path():
    # A coarse run with refine=2 sees the summed increments of the fine run.
    p = params()
    grid = TimeGrid(0.002, 1e-3)
    seed = 99
    gen = np.random.Generator(np.random.Philox(seed))
    fine = gen.standard_normal((4, 6)) * math.sqrt(5e-4)
    coarse = fine.reshape(2, 2, 6).sum(axis=1)
    init = ModeAmplitudes(a2=2, a2p=2, b=0.3j, bp=-0.3j)
    s = init
    for row in coarse:
        s = pp_step(s, p, 1e-3, NoiseIncrement(tuple(row)))
    tr = run_trajectory(init, p, grid, seed, refine=2)
    np.testing.assert_allclose(tr.amplitude_samples[-1], s.as_array(), rtol=1e-12)


def test_noiseless_ensemble_is_euler_meanfield():
    p = params(g_rf=4, lambda_a=1e-3, lambda_b=1e-3)
    grid = TimeGrid(0.02, 1e-4, 20)
    st_ = simulate_ensemble(initial_state(1000), p, grid, 4, master_seed=1, noiseless=True)
    s = initial_state(1000)
    ref = [s.as_array()]
    for k in range(grid.n_steps):
        s = ModeAmplitudes.from_array(s.as_array() + grid.dt * mf_drift(s, p).as_array())
        if (k + 1) % 20 == 0:
            ref.append(s.as_array())
    ref = np.array(ref)
    np.testing.assert_allclose(st_.amp_mean, ref, rtol=1e-12)
    assert np.all(st_.stderr[1:] == 0)


def test_early_time_matches_euler_meanfield():
    # While b is tiny and collisions are off, noise is negligible.
    p = params(g_rf=4)
    grid = TimeGrid(0.01, 1e-4, 10)
    st_ = simulate_ensemble(initial_state(1000), p, grid, 500, master_seed=2)
    s = initial_state(1000)
    ref = [s]
    for k in range(grid.n_steps):
        s = ModeAmplitudes.from_array(s.as_array() + grid.dt * mf_drift(s, p).as_array())
        if (k + 1) % 10 == 0:
            ref.append(s)
    from superchem import observables

    for row, se, r in zip(st_.mean, st_.stderr, ref):
        o = observables(r, 0.0)
        for j, name in enumerate(("n1", "n2", "nb")):
            assert abs(row[j] - getattr(o, name)) <= 3 * se[j] + 1e-9 * 1000


def test_ensemble_preserves_total_number():
    p = params(g_rf=2, lambda_a=1e-2, lambda_b=1e-2)
    st_ = simulate_ensemble(initial_state(10), p, TimeGrid(0.3, 1e-3, 30), 2000, master_seed=5)
    mean, se = st_.series("n_total")
    assert np.all(np.abs(mean - 10) <= 3 * se + 1e-9)


def test_conjugate_means():
    p = params(g_rf=2, lambda_a=1e-2, lambda_b=1e-2)
    st_ = simulate_ensemble(initial_state(10), p, TimeGrid(0.3, 1e-3, 30), 2000, master_seed=6)
    m, se = st_.amp_mean, st_.amp_stderr
    for k in (0, 2, 4):
        diff = m[:, k + 1] - m[:, k].conj()
        tol = 3 * np.hypot(se[:, k].real, se[:, k + 1].real) + 1e-9
        assert np.all(np.abs(diff.real) <= tol)
        tol = 3 * np.hypot(se[:, k].imag, se[:, k + 1].imag) + 1e-9
        assert np.all(np.abs(diff.imag) <= tol)


def test_stderr_shrinks_as_inverse_root():
    p = params(g_rf=2, lambda_a=1e-2, lambda_b=1e-2)
    grid = TimeGrid(0.3, 1e-3, 100)
    small = simulate_ensemble(initial_state(10), p, grid, 4000, master_seed=8)
    large = simulate_ensemble(initial_state(10), p, grid, 8000, master_seed=8)
    ratio = large.stderr[-1, 2] / small.stderr[-1, 2]
    assert ratio == pytest.approx(1 / math.sqrt(2), rel=0.1)


def test_worker_count_does_not_change_output():
    p = params(g_rf=4, lambda_a=1e-3, lambda_b=1e-3)
    grid = TimeGrid(0.02, 1e-4, 20)
    runs = [simulate_ensemble(initial_state(1000), p, grid, 2500, master_seed=42, n_workers=w) for w in (1, 3, 8)]
    for r in runs[1:]:
        assert r.mean.tobytes() == runs[0].mean.tobytes()
        assert r.stderr.tobytes() == runs[0].stderr.tobytes()


def test_seeds_are_distinct_and_stable():
    seeds = {trajectory_seed(1, k) for k in range(2000)}
    assert len(seeds) == 2000
    assert trajectory_seed(1, 5) == trajectory_seed(1, 5)
    assert trajectory_seed(1, 5) != trajectory_seed(2, 5)


def test_ensemble_first_sample_exact():
    p = params(g_rf=4, lambda_a=1e-3)
    st_ = simulate_ensemble(initial_state(1000), p, TimeGrid(0.01, 1e-3), 10, master_seed=0)
    assert st_.mean[0, 0] == pytest.approx(1000)
    assert st_.stderr[0, 0] == 0


def test_divergence_is_counted_and_flagged(caplog):
    p = params(g_rf=2, lambda_a=1e-2, lambda_b=1e-2)
    st_ = simulate_ensemble(initial_state(10), p, TimeGrid(1.0, 1e-2, 10), 400, master_seed=3, guard_factor=1.02)
    assert 0 < st_.n_diverged < 400
    assert st_.unreliable
    assert st_.n_surviving[0] == 400
    assert st_.n_surviving[-1] == 400 - st_.n_diverged
    assert "unreliable" in caplog.text


def test_total_divergence_raises():
    p = params(lambda_a=50.0)
    bad = ModeAmplitudes(a1=30, a1p=-30j)
    with pytest.raises(DivergenceError):
        simulate_ensemble(bad, p, TimeGrid(1.0, 1e-3), 4, master_seed=0, guard_factor=10.0, noiseless=True)


def test_extrapolation_is_second_order():
    # Deterministic limit: Richardson on Euler halves the order gap.
    from superchem.meanfield import integrate_mf

    p = params(g_rf=2, lambda_a=1e-2, lambda_b=1e-2)
    exact = integrate_mf(initial_state(10), p, TimeGrid(0.4, 1e-4, 4000)).samples[-1].nb

    def err(dt, extrapolate):
        grid = TimeGrid(0.4, dt, int(round(0.4 / dt)))
        st_ = simulate_ensemble(initial_state(10), p, grid, 2, 0, noiseless=True, extrapolate=extrapolate)
        return abs(st_.mean[-1, 2] - exact)

    assert err(1e-2, False) / err(5e-3, False) == pytest.approx(2, rel=0.15)
    assert err(1e-2, True) / err(5e-3, True) == pytest.approx(4, rel=0.25)
    assert err(1e-2, True) < 0.1 * err(1e-2, False)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(0, 5000))
def test_stream_depends_only_on_master_and_index(master, idx):
    p = params(lambda_a=0.1)
    grid = TimeGrid(0.01, 1e-3)
    one = run_trajectory(initial_state(5), p, grid, trajectory_seed(master, idx))
    two = run_trajectory(initial_state(5), p, grid, trajectory_seed(master, idx))
    assert one.amplitude_samples.tobytes() == two.amplitude_samples.tobytes()
