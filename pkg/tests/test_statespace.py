import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from airtrack.blobs import Measurement
from airtrack.statespace import GaussianState, constrain, initial_state, make_models

pos = st.floats(0.01, 10.0)


def test_default_process_noise():
    mm = make_models(delta=1.0, sigma_q=0.3)
    np.testing.assert_allclose(np.diag(mm.Q), [0, 0, 0, 0.09, 0.09, 0.09, 0.09])
    assert np.count_nonzero(mm.Q - np.diag(np.diag(mm.Q))) == 0


def test_default_measurement_noise():
    mm = make_models(sigma_m_pos=2.0, sigma_m_r=1.0)
    np.testing.assert_array_equal(mm.R, np.diag([4.0, 4.0, 4.0, 1.0]))


def test_transition_unit_step():
    mm = make_models(delta=1.0)
    np.testing.assert_array_equal(mm.F @ np.array([0, 0, 0, 1, 1, 0, 0.0]), [1, 0, 0, 1, 1, 0, 0])


@settings(max_examples=50, deadline=None)
@given(delta=pos, sq=pos, sp=pos, sr=pos)
def test_matrix_layout(delta, sq, sp, sr):
    mm = make_models(delta, sq, sp, sr)
    F = np.eye(7)
    F[0, 4] = F[1, 5] = F[2, 6] = delta
    np.testing.assert_array_equal(mm.F, F)
    Q = np.zeros((7, 7))
    Q[3:, 3:] = sq**2 * delta * np.eye(4)
    np.testing.assert_allclose(mm.Q, Q, rtol=1e-15)
    np.testing.assert_array_equal(mm.H, np.eye(4, 7))
    np.testing.assert_allclose(mm.R, np.diag([sp**2] * 3 + [sr**2]))
    # PSD by construction
    assert np.linalg.eigvalsh(mm.Q).min() >= 0
    assert np.linalg.eigvalsh(mm.R).min() > 0
    assert mm.delta == delta


@settings(max_examples=50, deadline=None)
@given(delta=pos, x=arrays(np.float64, 7, elements=st.floats(-100, 100)))
def test_two_steps_equal_one_double_step(delta, x):
    one = make_models(delta)
    two = make_models(2 * delta)
    np.testing.assert_allclose((one.F @ one.F @ x)[:3], (two.F @ x)[:3], rtol=1e-12, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(x=arrays(np.float64, 7, elements=st.floats(-1e6, 1e6)))
def test_H_extracts_first_four(x):
    mm = make_models()
    assert np.array_equal(mm.H @ x, x[:4])


@pytest.mark.parametrize("kw", [{"delta": 0}, {"sigma_q": -1}, {"sigma_m_pos": 0}, {"sigma_m_r": 0}])
def test_make_models_rejects_nonpositive(kw):
    with pytest.raises(ValueError):
        make_models(**kw)


def test_model_matrices_read_only():
    mm = make_models()
    with pytest.raises(ValueError):
        mm.F[0, 0] = 2.0


def test_initial_state_default_prior():
    m = Measurement((0.0, 0.0, 0.0), 2.0, 1.0, -1.0)
    s = initial_state(m, (0.0, 0.0, 1.0), 1.0)
    np.testing.assert_array_equal(s.mean, [0, 0, 0, 2, 0, 0, 1])
    np.testing.assert_array_equal(s.cov, np.eye(7))
    back = initial_state(m, (0.0, 0.0, -1.0), 1.0)
    np.testing.assert_array_equal(back.mean, [0, 0, 0, 2, 0, 0, -1])


@pytest.mark.parametrize("axis,p0", [((0, 0, 1), 0.0), ((0, 0, 0), 1.0), ((0, 0, 2), 1.0)])
def test_initial_state_rejects(axis, p0):
    m = Measurement((0.0, 0.0, 0.0), 2.0, 1.0, -1.0)
    with pytest.raises(ValueError):
        initial_state(m, axis, p0)


def test_constrain_clamps_radius_and_renormalizes():
    s = GaussianState(np.array([0, 0, 0, -0.5, 0, 3.0, 4.0]), np.eye(7))
    cov = s.cov.copy()
    constrain(s)
    assert s.radius == 0.1
    np.testing.assert_allclose(s.direction, [0, 0.6, 0.8])
    np.testing.assert_array_equal(s.cov, cov)


def test_constrain_switches():
    s = GaussianState(np.array([0, 0, 0, -0.5, 0, 3.0, 4.0]), np.eye(7))
    constrain(s, renormalize=False, min_radius=None)
    np.testing.assert_array_equal(s.mean, [0, 0, 0, -0.5, 0, 3.0, 4.0])
