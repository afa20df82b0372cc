import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relkin.exceptions import DomainError
from relkin.geometry import (
    METRIC,
    METRIC_INV,
    IntervalKind,
    LorentzTransform,
    axis_permutation,
    boost,
    classify_interval,
    lower_index,
    minkowski_norm2,
    raise_index,
    transform_tensor2,
    transform_vector,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
vectors = st.lists(finite, min_size=4, max_size=4).map(np.array)


@st.composite
def betas(draw, limit=0.99):
    direction = np.array(draw(st.lists(st.floats(-1, 1), min_size=3, max_size=3)))
    speed = draw(st.floats(0, limit))
    n = np.linalg.norm(direction)
    return np.zeros(3) if n < 1e-6 else direction / n * speed


def test_metric_inverse_identity():
    assert np.array_equal(METRIC @ METRIC_INV, np.eye(4))
    with pytest.raises(ValueError):
        METRIC[0, 0] = 2.0


def test_lower_index_examples():
    assert np.array_equal(lower_index([1, 2, 3, 4]), [1, -2, -3, -4])
    assert np.array_equal(lower_index(np.zeros(4)), np.zeros(4))


@given(vectors)
def test_raise_lower_roundtrip_exact(v):
    assert np.array_equal(raise_index(lower_index(v)), v)


def test_norm_examples():
    c = 3.0
    assert minkowski_norm2([c, 0, 0, 0]) == c**2
    assert minkowski_norm2([1, 1, 0, 0]) == 0.0
    assert minkowski_norm2(transform_vector(boost([0.3, -0.2, 0.5]), [c, 0, 0, 0])) == pytest.approx(c**2, rel=1e-12)


def test_classify_examples():
    tau = 0.7
    assert classify_interval([tau, 0, 0, 0], np.zeros(4)) is IntervalKind.TIMELIKE
    assert classify_interval([0, tau, 0, 0], np.zeros(4)) is IntervalKind.SPACELIKE
    assert classify_interval([2.5, 2.5, 0, 0], np.zeros(4)) is IntervalKind.LIGHTLIKE
    # rounding in the boosted null vector stays lightlike
    null = transform_vector(boost([0.6, 0.1, 0]), [1.0, 1.0, 0, 0])
    assert classify_interval(null, np.zeros(4)) is IntervalKind.LIGHTLIKE


def test_boost_examples():
    assert np.array_equal(boost([0, 0, 0]).matrix, np.eye(4))
    c = 2.0
    V = transform_vector(boost([0.6, 0, 0]), [c, 0, 0, 0])
    np.testing.assert_allclose(V, [1.25 * c, 0.75 * c, 0, 0], rtol=1e-14)


@pytest.mark.parametrize("beta", [[1.0, 0, 0], [0.8, 0.6, 0.0], [0.9, 0.9, 0]])
def test_boost_rejects_superluminal(beta):
    with pytest.raises(DomainError):
        boost(beta)


def test_non_lorentz_matrix_rejected():
    with pytest.raises(DomainError):
        LorentzTransform(np.diag([1.0, 2.0, 1.0, 1.0]))


@settings(max_examples=60)
@given(betas())
def test_boost_preserves_metric(beta):
    L = boost(beta).matrix
    assert np.max(np.abs(L.T @ METRIC @ L - METRIC)) <= 1e-12 * np.max(np.abs(L))


@settings(max_examples=60)
@given(betas(), vectors)
def test_norm_invariant_under_boost(beta, v):
    L = boost(beta)
    before = minkowski_norm2(v)
    after = minkowski_norm2(transform_vector(L, v))
    scale = np.sum(transform_vector(L, v) ** 2) + np.sum(v**2)
    assert abs(after - before) <= 1e-10 * max(scale, 1e-300)


@settings(max_examples=60)
@given(betas(), vectors, vectors)
def test_classification_invariant_under_boost(beta, x1, x0):
    L = boost(beta)
    d = x1 - x0
    q = d[0] ** 2 - np.sum(d[1:] ** 2)
    size = max(np.max(np.abs(x1)), np.max(np.abs(x0)))
    if abs(q) < 1e-6 * np.sum(d * d) or np.sum(d * d) < 1e-12 * size**2:
        return  # too close to the light cone, or the difference drowns in rounding
    assert classify_interval(transform_vector(L, x1), transform_vector(L, x0)) is classify_interval(x1, x0)


def test_transform_identity_and_composition(rng):
    v = rng.normal(size=4)
    w = rng.normal(size=(4, 4))
    I = LorentzTransform.identity()
    assert np.array_equal(transform_vector(I, v), v)
    assert np.array_equal(transform_tensor2(I, w), w)
    L1, L2 = boost([0.3, 0, 0]), boost([0, 0.4, 0.1])
    np.testing.assert_allclose(transform_vector(L2 @ L1, v), transform_vector(L2, transform_vector(L1, v)),
                               rtol=1e-13, atol=1e-13)


def test_inverse_transform(rng):
    L = boost([0.2, -0.5, 0.3]) @ axis_permutation((3, 1, 2))
    v = rng.normal(size=4)
    np.testing.assert_allclose(transform_vector(L.inverse(), transform_vector(L, v)), v, atol=1e-13)


def test_rest_diffusion_boost_oracle():
    k = 1 / (4 * np.pi)
    b = 0.6
    g = 1 / np.sqrt(1 - b * b)
    W = transform_tensor2(boost([b, 0, 0]), k * np.eye(4))
    assert W[0, 0] == pytest.approx(k * (g**2 + g**2 * b**2), rel=1e-14)
    assert W[0, 1] == pytest.approx(k * 2 * g**2 * b, rel=1e-14)
    assert W[2, 2] == pytest.approx(k)


@settings(max_examples=40)
@given(betas())
def test_full_contraction_invariant(beta):
    w = np.diag([0.3, 0.1, 0.2, 0.4]) + 0.05
    W = transform_tensor2(boost(beta), w)
    assert np.einsum("ij,ij->", METRIC, W) == pytest.approx(np.einsum("ij,ij->", METRIC, w), rel=1e-9, abs=1e-9)
