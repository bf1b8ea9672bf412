import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import riccati_checks as rc
from helpers import min_eig, rand_model, rand_path, rand_psd, rand_spd
from infoplan.kalman import (
    LinearObservation,
    LinearTargetModel,
    NotPositiveDefiniteError,
    directional_derivative,
    gain,
    info_matrix,
    is_psd,
    logdet,
    loewner_leq,
    riccati_predict,
    riccati_step,
    riccati_update,
    step_info,
    t_step_map,
)

seeds = st.integers(0, 2**32 - 1)


def test_info_matrix_scalar():
    obs = LinearObservation(np.array([[2.0]]), np.array([[4.0]]))
    assert info_matrix(obs) == pytest.approx(np.array([[1.0]]))


def test_absent_observation_leaves_covariance():
    sigma = np.diag([2.0, 3.0])
    m = info_matrix(LinearObservation.absent(2))
    assert np.array_equal(m, np.zeros((2, 2)))
    assert np.allclose(riccati_update(sigma, m), sigma)


def test_singular_noise_rejected():
    with pytest.raises(ValueError):
        info_matrix(LinearObservation(np.eye(2), np.diag([1.0, 0.0])))


def test_scalar_update_predict():
    # 1/(1/2 + 1) = 2/3, then 2 * 2/3 * 2 + 1
    model = LinearTargetModel(np.array([[2.0]]), np.array([[1.0]]))
    out = riccati_step(np.array([[2.0]]), LinearObservation(np.array([[1.0]]), np.array([[1.0]])), model)
    assert out[0, 0] == pytest.approx(4 * 2 / 3 + 1, rel=1e-14)


def test_update_matches_information_form():
    rng = np.random.default_rng(1)
    for _ in range(50):
        s, m = rand_spd(rng, 3), rand_psd(rng, 3)
        ref = np.linalg.inv(np.linalg.inv(s) + m)
        assert np.allclose(riccati_update(s, m), ref, atol=1e-12)


def test_update_handles_singular_prior():
    sigma = np.diag([1.0, 0.0])
    out = riccati_update(sigma, np.eye(2))
    assert np.allclose(out, np.diag([0.5, 0.0]))


def test_gain_identity():
    rng = np.random.default_rng(2)
    s, m = rand_spd(rng, 3), rand_psd(rng, 3)
    assert np.allclose(gain(s, m) @ s, riccati_update(s, m), atol=1e-12)


def test_t_step_map_examples():
    rng = np.random.default_rng(3)
    model = rand_model(rng, 3)
    path = rand_path(rng, 3, 2)
    s = rand_spd(rng, 3)
    assert np.array_equal(t_step_map([], s, model), s)
    twice = step_info(step_info(s, path[0], model.A, model.W), path[1], model.A, model.W)
    assert np.allclose(t_step_map(path, s, model), twice, atol=1e-13)
    unit = LinearTargetModel(np.eye(2), np.eye(2))
    assert np.allclose(t_step_map([np.zeros((2, 2))] * 3, np.zeros((2, 2)), unit), 3 * np.eye(2))


def test_logdet_examples():
    assert logdet(np.eye(4)) == 0.0
    assert logdet(np.diag([2.0, 3.0])) == pytest.approx(math.log(6.0), rel=1e-15)
    with pytest.raises(NotPositiveDefiniteError):
        logdet(np.diag([1.0, 0.0]))
    with pytest.raises(NotPositiveDefiniteError):
        logdet(np.diag([1.0, -1.0]))


@given(seeds, st.floats(0.01, 100.0))
def test_logdet_scaling(seed, c):
    s = rand_spd(np.random.default_rng(seed), 3)
    assert logdet(c * s) == pytest.approx(3 * math.log(c) + logdet(s), abs=1e-10)


def test_loewner_helpers():
    assert loewner_leq(np.eye(2), 2 * np.eye(2))
    assert not loewner_leq(2 * np.eye(2), np.eye(2))
    assert is_psd(np.diag([1.0, -1e-12]))
    assert not is_psd(np.diag([1.0, -1e-3]))


def test_directional_derivative_zero_and_bad_t():
    rng = np.random.default_rng(4)
    model, path = rand_model(rng, 2), rand_path(rng, 2, 3)
    assert np.array_equal(directional_derivative(path, rand_spd(rng, 2), np.zeros((2, 2)), model), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        directional_derivative(path, np.eye(2), np.eye(2), model, t=4)


@given(seeds, st.floats(0, 3), st.floats(0, 3))
def test_directional_derivative_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    model, path = rand_model(rng, 3), rand_path(rng, 3, 3)
    s, q1, q2 = rand_spd(rng, 3), rand_psd(rng, 3), rand_psd(rng, 3)
    lhs = directional_derivative(path, s, a * q1 + b * q2, model)
    rhs = a * directional_derivative(path, s, q1, model) + b * directional_derivative(path, s, q2, model)
    assert np.allclose(lhs, rhs, atol=1e-10 * (1 + np.abs(rhs).max()))


@given(seeds)
def test_directional_derivative_psd(seed):
    rng = np.random.default_rng(seed)
    model, path = rand_model(rng, 3), rand_path(rng, 3, 4)
    g = directional_derivative(path, rand_spd(rng, 3), rand_psd(rng, 3), model)
    assert min_eig(g) >= -1e-10


@settings(max_examples=100)
@given(seeds)
def test_directional_derivative_finite_difference(seed):
    assert rc.fd_error(np.random.default_rng(seed)) <= rc.FD_RTOL


@pytest.mark.parametrize("name", sorted(rc.LOEWNER_CHECKS))
@settings(max_examples=200)
@given(seed=seeds)
def test_loewner_property(name, seed):
    assert rc.LOEWNER_CHECKS[name](np.random.default_rng(seed)) >= -rc.LOEWNER_TOL


@given(seeds)
def test_update_shrinks_predict_dominates_w(seed):
    rng = np.random.default_rng(seed)
    model = rand_model(rng, 3)
    s, m = rand_spd(rng, 3), rand_psd(rng, 3)
    up = riccati_update(s, m)
    assert loewner_leq(up, s, 1e-9)
    assert loewner_leq(model.W, riccati_predict(up, model), 1e-9)


def test_stack_aware_step():
    rng = np.random.default_rng(5)
    model = rand_model(rng, 2)
    S = np.stack([rand_spd(rng, 2) for _ in range(4)])
    M = np.stack([rand_psd(rng, 2) for _ in range(4)])
    batch = step_info(S, M, model.A, model.W)
    for k in range(4):
        assert np.allclose(batch[k], step_info(S[k], M[k], model.A, model.W), atol=1e-14)
