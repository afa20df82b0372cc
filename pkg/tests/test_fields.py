import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relkin.exceptions import DomainError, SingularDiffusionError
from relkin.fd import FiniteDifference
from relkin.fields import (
    DriftFields,
    EMPotential,
    Field,
    PhysicalConstants,
    ScalarField,
    backward_drift_from_density,
    canonical_momenta,
    check_field_consistency,
    continuity_residual,
    diffusion_from_velocity,
    diffusion_inverse,
    diffusion_tensor,
    field_tensor,
    forward_backward_drifts,
    free_particle_rest,
    free_particle_spec,
    gradient_condition_residual,
    inverse_from_velocity,
    lagrangian,
    lagrangian_value,
    nelson1_residual,
    nelson1_residual_general,
    nelson2_residual,
    normalization_residual,
    normalized_vectors,
    osmotic_relation_residual,
)
from relkin.gauge import identity_gauge
from relkin.geometry import METRIC, boost, transform_tensor2, transform_vector

X = np.array([0.2, -0.4, 0.7, 1.3])


def timelike(rng, n, c=1.0):
    beta = rng.uniform(-0.55, 0.55, (n, 3))
    gamma = 1 / np.sqrt(1 - np.sum(beta**2, axis=1))
    return c * gamma[:, None] * np.column_stack([np.ones(n), beta]) * rng.uniform(0.5, 3, (n, 1))


def test_constants():
    assert PhysicalConstants.electron().rest_rate == pytest.approx(7.763440705e20, rel=1e-9)
    # the reduced constant would give a different rate
    k = PhysicalConstants.electron()
    assert 2 * np.pi * k.m * k.c**2 / (k.h / (2 * np.pi)) == pytest.approx(4.878e21, rel=1e-3)
    with pytest.raises(DomainError):
        PhysicalConstants(m=0.0)


def test_forward_backward_examples(rng):
    d = free_particle_rest(PhysicalConstants(c=2.0))
    vp, vm = forward_backward_drifts(d, X)
    assert np.array_equal(vp, [2, 0, 0, 0]) and np.array_equal(vm, [2, 0, 0, 0])
    v = rng.normal(size=4)
    vp, vm = forward_backward_drifts(DriftFields.constant(v, v), X)
    assert np.array_equal(vm, np.zeros(4))
    u, v = rng.normal(size=4), rng.normal(size=4)
    d = DriftFields.from_forward_backward(v + u, v - u)
    vp, vm = forward_backward_drifts(d, X)
    np.testing.assert_array_equal((vp + vm) / 2, d.v(X))
    np.testing.assert_array_equal((vp - vm) / 2, d.u(X))


def test_rest_diffusion(natural):
    w = diffusion_tensor(free_particle_rest(natural), natural, X)
    np.testing.assert_allclose(w, np.eye(4) / (4 * np.pi), atol=1e-17)
    assert np.einsum("ij,ij->", METRIC, w) == pytest.approx(-1 / (2 * np.pi), rel=1e-14)
    winv = diffusion_inverse(free_particle_rest(natural), natural, X)
    np.testing.assert_allclose(winv, 4 * np.pi * np.eye(4), rtol=1e-14)


@pytest.mark.parametrize("v", [[1, 1, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0]])
def test_non_timelike_rejected(natural, v):
    with pytest.raises(SingularDiffusionError):
        diffusion_from_velocity(np.array(v, float), natural)


def test_identity_suite_random(rng):
    k = PhysicalConstants(m=2.0, c=1.5, h=0.7)
    v = timelike(rng, 1000, k.c)
    W = diffusion_from_velocity(v, k)
    Winv = inverse_from_velocity(v, k)
    assert np.array_equal(W, np.swapaxes(W, 1, 2))
    assert np.max(np.abs(Winv @ W - np.eye(4))) <= 1e-10
    np.testing.assert_allclose(Winv, np.linalg.inv(W), rtol=1e-10, atol=1e-10 * np.abs(Winv).max())
    contraction = np.einsum("pij,pj->pi", Winv, v)
    np.testing.assert_allclose(contraction, v * np.diag(METRIC) * 4 * np.pi * k.m / k.h, rtol=1e-10, atol=1e-9)
    trace = np.einsum("ij,pij->p", METRIC, W)
    np.testing.assert_allclose(trace, -k.h / (2 * np.pi * k.m), rtol=1e-10)
    assert np.min(np.linalg.eigvalsh(W)) > 0


@settings(max_examples=40)
@given(st.lists(st.floats(-0.9, 0.9), min_size=3, max_size=3), st.lists(st.floats(-0.5, 0.5), min_size=3,
                                                                           max_size=3))
def test_diffusion_commutes_with_boost(beta, vel):
    if np.linalg.norm(beta) >= 0.95:
        return
    k = PhysicalConstants.natural()
    v = np.array([1.0, *vel]) * 1.3
    L = boost(beta)
    lhs = diffusion_from_velocity(transform_vector(L, v), k)
    rhs = transform_tensor2(L, diffusion_from_velocity(v, k))
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * np.max(np.abs(rhs))


def test_normalization_examples(natural):
    d = free_particle_rest(natural)
    assert normalization_residual(d, natural, X) == 0.0
    k = PhysicalConstants(c=1.7)
    d2 = DriftFields.constant(np.zeros(4), [2 * k.c, 0, 0, 0])
    assert normalization_residual(d2, k, X) == pytest.approx(3 * k.c**2)
    u, v = normalized_vectors(d2, k, X)
    np.testing.assert_allclose(v, [k.c, 0, 0, 0])
    assert np.array_equal(u, np.zeros(4))
    spec = free_particle_spec(k, boost([0.5, 0.2, 0]))
    assert normalization_residual(spec.drift, k, X) == pytest.approx(0.0, abs=1e-12)


def test_normalized_vectors_idempotent(rng):
    k = PhysicalConstants(c=2.0)
    for _ in range(20):
        v = timelike(rng, 1, k.c)[0]
        u = 0.1 * rng.normal(size=4)
        d = DriftFields.constant(u, v)
        ut, vt = normalized_vectors(d, k, X)
        assert normalization_residual(DriftFields.constant(ut, vt), k, X) == pytest.approx(0, abs=1e-12)
        ut2, vt2 = normalized_vectors(DriftFields.constant(ut, vt), k, X)
        np.testing.assert_allclose(ut2, ut, rtol=1e-15, atol=1e-15)
        np.testing.assert_allclose(vt2, vt, rtol=1e-15)
    with pytest.raises(DomainError):
        normalized_vectors(DriftFields.constant(np.zeros(4), [0, 1, 0, 0]), k, X)


def test_nelson_rest_solution(natural):
    d = free_particle_rest(natural)
    A = EMPotential.zero()
    assert nelson1_residual(d, natural, X) == 0.0
    assert np.array_equal(nelson2_residual(d, natural, A, X), np.zeros(4))
    assert np.array_equal(gradient_condition_residual(d, natural, A, X), np.zeros((4, 4)))


def test_nelson1_hand_example():
    k = PhysicalConstants(c=2.0, m=1.5, h=0.8)
    eps = 0.3
    d = DriftFields.constant([eps * k.c, 0, 0, 0], [k.c, 0, 0, 0])
    assert nelson1_residual(d, k, X) == pytest.approx(eps * k.c**2)
    d_perp = DriftFields.constant([0, eps * k.c, 0, 0], [k.c, 0, 0, 0])
    assert nelson1_residual(d_perp, k, X) == 0.0


def smooth_fields(c=1.0):
    def v(x):
        return np.stack([c * (2 + np.sin(x[..., 1])), 0.3 * np.cos(x[..., 2]), 0.1 * x[..., 3],
                         0.2 * np.sin(x[..., 0])], axis=-1)

    def u(x):
        return np.stack([0.1 * x[..., 2], 0.2 + 0 * x[..., 0], 0.1 * np.sin(x[..., 3]), 0.05 * x[..., 1] ** 2],
                        axis=-1)

    return DriftFields(Field(u), Field(v))


def test_nelson1_general_form_agrees():
    k = PhysicalConstants(m=1.3, h=0.9)
    d = smooth_fields()
    for x in [X, np.array([0.5, 1.0, -0.3, 0.2])]:
        simple = nelson1_residual(d, k, x)
        general = nelson1_residual_general(d, k, x)
        scale = 4 * np.pi * k.m / k.h
        assert general == pytest.approx(scale * simple, rel=1e-6)


def test_nelson2_constant_fields_zero():
    k = PhysicalConstants(q=0.0)
    d = DriftFields.constant([0.1, 0.2, 0, 0], [1.5, 0.1, 0, 0])
    assert np.array_equal(nelson2_residual(d, k, EMPotential.zero(), X), np.zeros(4))


def test_nelson2_linear_potential_force():
    k = PhysicalConstants(q=0.7, c=2.0)
    a = 1.9
    J = np.zeros((4, 4))
    J[1, 0] = a  # A_0 = a x^1
    A = EMPotential.linear(J)
    d = free_particle_rest(k)
    r = nelson2_residual(d, k, A, X)
    np.testing.assert_allclose(r, [0, -k.q * k.c * a, 0, 0], atol=1e-14)


def test_field_tensor_examples():
    J = np.zeros((4, 4))
    J[1, 0] = 1.0
    B = field_tensor(EMPotential.linear(J), X)
    assert B[0, 1] == 1.0 and B[1, 0] == -1.0
    assert np.array_equal(B, -B.T)
    # pure gauge potential from phi = x0 x1 + x2^2
    grad = lambda x: np.stack([x[..., 1], x[..., 0], 2 * x[..., 2], 0 * x[..., 3]], axis=-1)  # noqa: E731
    A = EMPotential(Field(grad))
    assert np.max(np.abs(field_tensor(A, X))) < 1e-8
    hess = np.zeros((4, 4))
    hess[0, 1] = hess[1, 0] = 1
    hess[2, 2] = 2
    A_exact = EMPotential.gradient_of(grad, lambda x: hess)
    assert np.array_equal(field_tensor(A_exact, X), np.zeros((4, 4)))


def test_gradient_condition_curl():
    k = PhysicalConstants(m=1.2)
    kappa = 0.4
    d = DriftFields(Field.constant_value(np.zeros(4)),
                    Field.affine([1.0, 0, 0, 0], np.array([[0, 0, 0, 0], [0, 0, kappa, 0], [0] * 4, [0] * 4])))
    R = gradient_condition_residual(d, k, EMPotential.zero(), X)
    assert R[1, 2] == pytest.approx(k.m * kappa)
    assert R[2, 1] == pytest.approx(-k.m * kappa)
    grad = lambda x: np.stack([x[..., 1], x[..., 0], 0 * x[..., 2], 0 * x[..., 3]], axis=-1)  # noqa: E731
    kq = PhysicalConstants(q=1.0)
    d0 = DriftFields.constant(np.zeros(4), np.zeros(4))
    assert np.max(np.abs(gradient_condition_residual(d0, kq, EMPotential(Field(grad)), X))) < 1e-8


def test_lagrangian_examples():
    k = PhysicalConstants(m=1.5, c=2.0, q=0.5)
    d = free_particle_rest(k)
    g = identity_gauge()
    assert lagrangian(d, k, EMPotential.zero(), X, g, 0.0) == pytest.approx(k.m * k.c**2)
    V = 0.8
    assert lagrangian(d, k, EMPotential.constant(V, k.c), X, g, 0.0) == pytest.approx(k.m * k.c**2 - k.q * V)
    with pytest.raises(DomainError):
        lagrangian_value(np.zeros(4), np.array([0, 1.0, 0, 0]), np.zeros(4), k)


def test_canonical_momenta_match_finite_differences(rng):
    k = PhysicalConstants(m=1.5, c=2.0, q=0.5)
    fd = FiniteDifference(step=1e-6)
    A_val = np.array([0.2, -0.1, 0.3, 0.05])
    A = EMPotential(Field.constant_value(A_val))
    u0 = 0.1 * rng.normal(size=4)
    v0 = timelike(rng, 1, k.c)[0]
    d = DriftFields.constant(u0, v0)
    pu, pv = canonical_momenta(d, k, A, X)
    du = fd.gradient(lambda U: np.array([lagrangian_value(x, v0, A_val, k) for x in U]), u0)
    dv = fd.gradient(lambda V: np.array([lagrangian_value(u0, x, A_val, k) for x in V]), v0)
    np.testing.assert_allclose(du, pu, atol=1e-7)
    np.testing.assert_allclose(dv, pv, atol=1e-7)


def gaussian_x1(sigma, shift=None):
    def value(x, s):
        m = 0.0 if shift is None else shift * s
        return np.exp(-((x[..., 1] - m) ** 2) / (2 * sigma**2))

    return ScalarField(value)


def test_osmotic_relation(natural):
    d = free_particle_rest(natural)
    const_p = ScalarField.constant(1.0)
    np.testing.assert_allclose(osmotic_relation_residual(d, natural, const_p, X), 0.0, atol=1e-12)
    sigma = 0.8
    w11 = 1 / (4 * np.pi)
    u = Field(lambda x: np.stack([0 * x[..., 0], -w11 * x[..., 1] / sigma**2, 0 * x[..., 0], 0 * x[..., 0]],
                                 axis=-1))
    d_os = DriftFields(u, Field.constant_value([1.0, 0, 0, 0]))
    p = gaussian_x1(sigma)
    np.testing.assert_allclose(osmotic_relation_residual(d_os, natural, p, X), 0.0, atol=1e-8)
    r = osmotic_relation_residual(d, natural, p, X)
    assert abs(r[1]) > 1e-3


def test_continuity(natural):
    d = free_particle_rest(natural)
    g = identity_gauge()
    assert continuity_residual(d, ScalarField.constant(1.0), g, 0.3, X) == 0.0
    a = 0.4
    d_adv = DriftFields.constant(np.zeros(4), [1.0, a, 0, 0])
    p = gaussian_x1(0.7, shift=a)
    assert abs(continuity_residual(d_adv, p, g, 0.3, X)) < 1e-8
    p_static = gaussian_x1(0.7)
    assert abs(continuity_residual(d_adv, p_static, g, 0.3, X)) > 1e-3


def test_backward_drift_from_density(natural):
    spec = free_particle_spec(natural)
    sigma2 = 2 / (4 * np.pi) * 0.5
    p = ScalarField(lambda x, s: np.exp(-np.sum(x[..., 1:] ** 2, axis=-1) / (2 * sigma2)))
    vm = backward_drift_from_density(spec, p, X)
    # v- = v+ + (x - mean) / S for the Gaussian spread over S = 0.5
    np.testing.assert_allclose(vm[1:], X[1:] / 0.5, rtol=1e-7)
    assert vm[0] == pytest.approx(1.0)


def test_field_consistency():
    J = np.zeros((4, 4))
    J[1, 0] = 1.0
    A = EMPotential.linear(J)
    still = DriftFields.constant(np.zeros(4), np.zeros(4))
    assert not check_field_consistency(A, still, [X])
    assert check_field_consistency(A, free_particle_rest(PhysicalConstants()), [X])
    assert check_field_consistency(EMPotential.zero(), still, [X])
