import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from craneplan.bspline import BSplinePath, clamped_knots, initial_control_points
from craneplan.chain import ContractError

from oracles import cox_de_boor


@given(st.integers(4, 15), st.floats(0.0, 1.0))
def test_basis_partition_of_unity(n_ctrl, s):
    path = BSplinePath.clamped(np.zeros((n_ctrl, 1)))
    B = path.basis_matrix([s])
    assert np.isclose(B.sum(), 1.0, atol=1e-14)
    assert np.all(B >= -1e-15)


def test_matches_recursive_basis(rng):
    P = rng.normal(size=(12, 3))
    path = BSplinePath.clamped(P)
    for s in np.linspace(0.0, 1.0, 41):
        N = np.array([cox_de_boor(path.knots, 3, i, s) for i in range(12)])
        assert np.allclose(path(s), N @ P, atol=1e-13)


def test_endpoints_interpolate_control_points(rng):
    P = rng.normal(size=(9, 4))
    path = BSplinePath.clamped(P)
    assert np.allclose(path(0.0), P[0], atol=0) and np.allclose(path(1.0), P[-1], atol=1e-15)


def test_derivative_matches_finite_differences(rng):
    path = BSplinePath.clamped(rng.normal(size=(12, 2)))
    dpath = path.derivative()
    for s in (0.05, 0.33, 0.5, 0.91):
        fd = (path(s + 1e-6) - path(s - 1e-6)) / 2e-6
        assert np.allclose(dpath(s), fd, atol=1e-6)


def test_array_evaluation_shape():
    path = BSplinePath.clamped(np.arange(24.0).reshape(8, 3))
    assert path(np.zeros((4, 5))).shape == (4, 5, 3)
    assert path(0.5).shape == (3,)


def test_straight_line_initialization_stays_on_segment():
    q0, qd = np.array([0.0, 1.0]), np.array([2.0, -1.0])
    path = BSplinePath.clamped(initial_control_points(q0, qd, 12))
    pts = path(np.linspace(0, 1, 50))
    # collinear with the segment
    t = (pts[:, 0] - q0[0]) / (qd[0] - q0[0])
    assert np.allclose(pts, q0 + t[:, None] * (qd - q0), atol=1e-12)
    # clamped ends dwell, so progress is monotone but not strictly so
    assert np.all(np.diff(t) >= -1e-15) and t[0] == 0 and np.isclose(t[-1], 1.0)


def test_interior_rows_evenly_spaced():
    P = initial_control_points([0.0], [1.0], 12)
    assert np.allclose(P[4:8, 0], [0.2, 0.4, 0.6, 0.8], atol=1e-15)
    assert np.all(P[:4] == 0.0) and np.all(P[8:] == 1.0)


def test_eight_control_points_have_no_free_rows():
    P = initial_control_points([0.0, 1.0], [1.0, 3.0], 8)
    assert np.array_equal(P[:4], np.tile([0.0, 1.0], (4, 1)))
    assert np.array_equal(P[4:], np.tile([1.0, 3.0], (4, 1)))


def test_constant_path():
    q = np.array([0.3, -0.2])
    path = BSplinePath.clamped(initial_control_points(q, q))
    assert np.allclose(path(np.linspace(0, 1, 11)), q, atol=0)


def test_contracts():
    path = BSplinePath.clamped(np.zeros((5, 1)))
    for s in (-1e-9, 1.0 + 1e-9, np.nan):
        with pytest.raises(ContractError):
            path(s)
    with pytest.raises(ContractError):
        clamped_knots(3, 3)
    with pytest.raises(ContractError):
        BSplinePath(np.zeros((5, 1)), np.zeros(5))
    with pytest.raises(ContractError):
        initial_control_points([0.0], [1.0], 7)
