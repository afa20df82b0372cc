import numpy as np
import pytest

from relkin.exceptions import DomainError
from relkin.fields import DriftFields, Field, PhysicalConstants, ProcessSpec, ScalarField, free_particle_spec
from relkin.gauge import affine_gauge, identity_gauge
from relkin.geometry import boost, transform_tensor2, transform_vector
from relkin.sde import (
    IncrementMomentEstimator,
    SimulationConfig,
    block_generators,
    diffusion_factor,
    estimate_diffusion,
    estimate_drift,
    gaussian_backward_drift,
    integration_by_parts_check,
    simulate_ensemble,
    stochastic_derivative,
)

K = PhysicalConstants.natural()
W_REST = 1 / (4 * np.pi)


def rest_ensemble(n_paths=20000, step=1e-3, n_steps=10, seed=7, **kw):
    cfg = SimulationConfig(step=step, n_steps=n_steps, n_paths=n_paths, seed=seed, **kw)
    return simulate_ensemble(free_particle_spec(K), np.zeros(4), 0.0, cfg)


def two_sample_z(a, b):
    return np.abs(a.value - b.value) / np.sqrt(a.stderr**2 + b.stderr**2)


def test_diffusion_factor_examples(rng):
    np.testing.assert_allclose(diffusion_factor(np.eye(4) * W_REST), np.eye(4) * np.sqrt(1 / (2 * np.pi)),
                               rtol=1e-15)
    for _ in range(20):
        A = rng.normal(size=(4, 4))
        w = A @ A.T + 0.1 * np.eye(4)
        b = diffusion_factor(w)
        assert np.max(np.abs(b @ b.T / 2 - w)) <= 1e-12 * np.max(np.abs(w))
        assert np.array_equal(b, np.tril(b))
    with pytest.raises(DomainError):
        diffusion_factor(np.diag([1.0, 1.0, -0.1, 1.0]))


def test_config_validation():
    with pytest.raises(DomainError):
        SimulationConfig(step=0.0, n_steps=1, n_paths=1)
    with pytest.raises(ValueError):
        SimulationConfig(step=0.1, n_steps=1, n_paths=0)
    with pytest.raises(ValueError):
        SimulationConfig(step=0.1, n_steps=1, n_paths=1, direction="sideways")
    cfg = SimulationConfig(step=0.1, n_steps=7, n_paths=1, record_every=3)
    assert list(cfg.recorded_steps) == [0, 3, 6, 7]


def test_deterministic_limit_is_straight_line():
    v = np.array([1.0, 0.3, -0.2, 0.1])
    spec = ProcessSpec(K, DriftFields.constant(np.zeros(4), v), diffusion_override=lambda x: np.zeros((4, 4)))
    gauge = affine_gauge(2.0, 0.5)
    cfg = SimulationConfig(step=0.01, n_steps=50, n_paths=3, seed=1, gauge=gauge)
    x0 = np.array([0.1, 0.2, 0.3, 0.4])
    e = simulate_ensemble(spec, x0, 0.25, cfg)
    expected = x0 + np.multiply.outer(gauge(e.s_values) - gauge(0.25), v)
    for p in e:
        np.testing.assert_allclose(p.points, expected, atol=1e-12)
    drift = estimate_drift(e)
    np.testing.assert_allclose(drift.value, v, rtol=1e-12)
    assert np.all(drift.stderr == 0)
    diff, trace = estimate_diffusion(e)
    assert np.array_equal(diff.value, np.zeros((4, 4)))
    assert trace.value == 0.0


def test_seed_determinism_and_thread_independence():
    a = rest_ensemble(n_paths=5000, block_size=1000, seed=3, n_jobs=1)
    b = rest_ensemble(n_paths=5000, block_size=1000, seed=3, n_jobs=4)
    c = rest_ensemble(n_paths=5000, block_size=1000, seed=3)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.points, c.points)
    d = rest_ensemble(n_paths=5000, block_size=1000, seed=4)
    assert not np.array_equal(a.points, d.points)


def test_env_thread_cap(monkeypatch):
    monkeypatch.setenv("RELKIN_THREADS", "2")
    a = rest_ensemble(n_paths=3000, block_size=500, seed=9)
    monkeypatch.setenv("RELKIN_THREADS", "1")
    b = rest_ensemble(n_paths=3000, block_size=500, seed=9)
    assert np.array_equal(a.points, b.points)


def test_shared_start_and_monotone_parameter():
    e = rest_ensemble(n_paths=10, n_steps=5, direction="backward")
    assert np.all(np.diff(e.s_values) < 0)
    assert np.all(e.points[:, 0] == 0.0)
    f = rest_ensemble(n_paths=10, n_steps=5)
    assert np.all(np.diff(f.s_values) > 0)


def test_x1_variance_growth():
    e = rest_ensemble(n_paths=100000, step=1e-3, n_steps=10, seed=11)
    dx = e.increments()[:, 1]
    n = len(dx)
    var = dx.var(ddof=1)
    se = np.sqrt(np.mean((dx - dx.mean()) ** 4) - var**2) / np.sqrt(n)
    assert abs(var - 2 * W_REST * 0.01) <= 3 * se


def test_rest_estimates_within_three_sigma():
    e = rest_ensemble(n_paths=100000, step=1e-3, n_steps=10, seed=1)
    drift = estimate_drift(e)
    assert np.all(drift.within(np.array([1.0, 0, 0, 0])))
    diff, trace = estimate_diffusion(e)
    assert np.all(diff.within(np.eye(4) * W_REST))
    assert trace.within(-1 / (2 * np.pi))


def test_boosted_drift_estimate():
    spec = free_particle_spec(K, boost([0.6, 0, 0]))
    cfg = SimulationConfig(step=1e-3, n_steps=10, n_paths=100000, seed=2)
    e = simulate_ensemble(spec, np.zeros(4), 0.0, cfg)
    drift = estimate_drift(e)
    assert np.all(drift.within(np.array([1.25, 0.75, 0, 0])))


def test_estimator_needs_two_samples():
    est = IncrementMomentEstimator(dg=0.1).fit(np.ones((1, 4)))
    assert np.all(np.isnan(est.drift_stderr_))
    assert np.isnan(est.metric_trace_stderr_)
    with pytest.raises(ValueError):
        IncrementMomentEstimator(dg=0.0).fit(np.ones((3, 4)))
    assert IncrementMomentEstimator(dg=0.3).get_params() == {"dg": 0.3}


def test_wiener_noise_moments():
    n = 1_000_000
    gd, step = 2.0, 1e-3  # affine gauge slope 2
    xi = block_generators(123, 1)[0].standard_normal((n, 4)) * np.sqrt(gd * step)
    var = gd * step
    assert np.all(np.abs(xi.mean(axis=0)) <= 4 * np.sqrt(var / n))
    assert np.all(np.abs(xi.var(axis=0) - var) <= 4 * var * np.sqrt(2 / n))
    corr = np.corrcoef(xi.T)
    assert np.max(np.abs(corr - np.eye(4))) <= 4 / np.sqrt(n)


def test_forward_backward_consistency():
    fwd = rest_ensemble(n_paths=50000, seed=21)
    bwd = rest_ensemble(n_paths=50000, seed=22, direction="backward")
    assert np.all(two_sample_z(estimate_drift(fwd), estimate_drift(bwd)) <= 3)
    df, _ = estimate_diffusion(fwd)
    db, _ = estimate_diffusion(bwd)
    assert np.all(two_sample_z(df, db) <= 3)


def test_lorentz_consistency_of_paths():
    L = boost([0.6, 0, 0])
    rest = rest_ensemble(n_paths=50000, seed=31).boosted(L)
    cfg = SimulationConfig(step=1e-3, n_steps=10, n_paths=50000, seed=32)
    direct = simulate_ensemble(free_particle_spec(K, L), np.zeros(4), 0.0, cfg)
    assert np.all(two_sample_z(estimate_drift(rest), estimate_drift(direct)) <= 3)
    dr, _ = estimate_diffusion(rest)
    dd, _ = estimate_diffusion(direct)
    assert np.all(two_sample_z(dr, dd) <= 3)
    np.testing.assert_allclose(transform_tensor2(L, np.eye(4) * W_REST)[0, 1], 1.5 * 1.25 * W_REST)


def ou_spec(kappa):
    u = Field(lambda x: np.stack([0 * x[..., 0], -kappa * x[..., 1], 0 * x[..., 0], 0 * x[..., 0]], axis=-1))
    return ProcessSpec(K, DriftFields(u, Field.constant_value([1.0, 0, 0, 0])))


def test_drift_bias_linear_in_window():
    kappa, x1 = 2.0, 1.0
    spec = ou_spec(kappa)
    biases = []
    for window in (0.2, 0.1, 0.05):
        cfg = SimulationConfig(step=window / 10, n_steps=10, n_paths=100000, seed=5)
        e = simulate_ensemble(spec, np.array([0, x1, 0, 0]), 0.0, cfg)
        biases.append(estimate_drift(e).value[1] - (-kappa * x1))
    ratios = np.array(biases[:-1]) / np.array(biases[1:])
    assert np.all((ratios > 1.6) & (ratios < 2.4))


def test_path_failure_is_flagged():
    # v^1 = 2 x^1 turns spacelike once |x^1| > 0.5
    v = Field(lambda x: np.stack([1 + 0 * x[..., 0], 2 * x[..., 1], 0 * x[..., 0], 0 * x[..., 0]], axis=-1))
    spec = ProcessSpec(K, DriftFields(Field.constant_value(np.zeros(4)), v))
    cfg = SimulationConfig(step=0.01, n_steps=40, n_paths=200, seed=3)
    e = simulate_ensemble(spec, np.zeros(4), 0.0, cfg)
    assert e.failed.any() and not e.failed.all()
    p = e.path(int(np.flatnonzero(e.failed)[0]))
    assert p.failed_at is not None
    assert np.all(np.isnan(p.points[p.failed_at + 1:]))
    assert len(e.increments()) == (~e.failed).sum()


def test_stochastic_derivative_examples():
    spec = free_particle_spec(PhysicalConstants(c=2.0))
    x = np.array([0.3, 0.0, 0.1, -0.2])
    assert stochastic_derivative(ScalarField.coordinate(1), spec, x, 0.0) == 0.0
    assert stochastic_derivative(ScalarField.coordinate(0), spec, x, 0.0) == pytest.approx(2.0)
    sq = ScalarField.coordinate_square(1)
    nat = free_particle_spec(K)
    assert stochastic_derivative(sq, nat, x, 0.0, "forward") == pytest.approx(1 / (2 * np.pi))
    assert stochastic_derivative(sq, nat, x, 0.0, "backward") == pytest.approx(-1 / (2 * np.pi))
    # finite-difference fallback for fields without analytic derivatives
    fd_sq = ScalarField(lambda X, s: X[..., 1] ** 2)
    assert stochastic_derivative(fd_sq, nat, x, 0.0) == pytest.approx(1 / (2 * np.pi), rel=1e-6)


def test_gaussian_backward_drift():
    spec = free_particle_spec(K)
    vm = gaussian_backward_drift(spec, np.zeros(4), 0.0, identity_gauge())
    np.testing.assert_allclose(vm(np.array([0.5, 0.1, 0, 0]), 0.5), [1.0, 0.2, 0, 0])


@pytest.mark.parametrize("case", ["one", "x0", "x1"])
def test_integration_by_parts(case):
    one, x0f, x1f = ScalarField.constant(1.0), ScalarField.coordinate(0), ScalarField.coordinate(1)
    f, g = {"one": (one, one), "x0": (x0f, one), "x1": (x1f, x1f)}[case]
    cfg = SimulationConfig(step=1e-3, n_steps=1, n_paths=20000, seed=8)
    r = integration_by_parts_check(f, g, free_particle_spec(K), np.zeros(4), (0.0, 0.2), cfg)
    assert r.passed
    expected = {"one": 0.0, "x0": 0.2, "x1": 2 * W_REST * 0.2}[case]
    assert r.rhs == pytest.approx(expected, abs=4 * r.stderr + 1e-3)
