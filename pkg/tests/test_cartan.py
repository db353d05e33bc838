import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcrlab import presets
from gcrlab.cartan import (canonical_form, cartan_data, connection_form, first_structure_residual,
                           orthonormal_coframe, second_structure_residual, structure_norm)
from gcrlab.errors import ValidationError
from gcrlab.gcr import observed_orders
from gcrlab.grid import Chart, ChartField

CHART = Chart.box((0, 0), (1, 1), (9, 9))


def const(arr, chart=CHART):
    return ChartField.constant(chart, np.asarray(arr, dtype=float))


def test_coframe_examples():
    fr = orthonormal_coframe(const(np.eye(2)))
    np.testing.assert_array_equal(fr.E.values[0, 0], np.eye(2))
    np.testing.assert_array_equal(fr.omega.values[0, 0], np.eye(2))
    fr = orthonormal_coframe(const(np.diag([1.0, 4.0])))
    np.testing.assert_allclose(fr.E.values[3, 3], np.diag([1.0, 0.5]), atol=1e-15)
    np.testing.assert_allclose(fr.omega.values[3, 3], np.diag([1.0, 2.0]), atol=1e-15)
    fr = orthonormal_coframe(const([[2.0, 1.0], [1.0, 1.0]]))
    r2 = np.sqrt(2.0)
    np.testing.assert_allclose(fr.E.values[1, 2], [[1 / r2, 0.0], [-1 / r2, r2]], atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 4), st.floats(0.3, 4), st.floats(-0.8, 0.8))
def test_coframe_is_dual_to_frame(a, b, r):
    off = r * np.sqrt(a * b)
    fr = orthonormal_coframe(const([[a, off], [off, b]], Chart.box((0, 0), (1, 1), (3, 3))))
    # omega^a(E_b) = delta_ab
    pair = np.einsum("...aj,...bj->...ab", fr.omega.values, fr.E.values)
    np.testing.assert_allclose(pair, np.broadcast_to(np.eye(2), pair.shape), atol=1e-12)


def test_flat_data_connection_is_zero():
    p = presets.plane(9)
    _, w, W = cartan_data(p.g, p.h, p.kappa)
    assert np.all(W.values == 0)
    assert np.all(first_structure_residual(w, W).values == 0)
    assert np.all(second_structure_residual(W).values == 0)


def test_cylinder_connection():
    cyl = presets.cylinder(17)
    _, _, W = cartan_data(cyl.g, cyl.h, cyl.kappa)
    Wx = W.values[..., 0, :, :]
    expected = np.zeros((3, 3))
    expected[0, 2], expected[2, 0] = -1.0, 1.0
    np.testing.assert_allclose(Wx, np.broadcast_to(expected, Wx.shape), atol=1e-15)
    assert np.max(np.abs(W.values[..., 1, :, :])) <= 1e-15


def test_rotating_frame_normal_block():
    p = presets.plane_r4(9)
    _, _, W = cartan_data(p.g, p.h, p.kappa)
    np.testing.assert_allclose(W.values[4, 4, 0, 2:, 2:], [[0.0, 1.0], [-1.0, 0.0]])
    assert np.all(W.values[..., 1, :, :] == 0)


@pytest.mark.parametrize("name", sorted(presets.ALL))
def test_connection_is_antisymmetric(name):
    p = presets.get(name, 12)
    _, _, W = cartan_data(p.g, p.h, p.kappa)
    np.testing.assert_allclose(W.values, -np.swapaxes(W.values, -1, -2), atol=1e-14)


def test_sphere_structure_residuals_second_order():
    e1, e2, hs = [], [], []
    for N in (32, 64, 128):
        s = presets.sphere(N)
        _, w, W = cartan_data(s.g, s.h, s.kappa)
        e1.append(structure_norm(first_structure_residual(w, W)))
        e2.append(structure_norm(second_structure_residual(W)))
        hs.append(max(s.chart.spacing))
    assert min(observed_orders(e1, hs)) >= 1.8
    assert min(observed_orders(e2, hs)) >= 1.8


def test_first_structure_negative_control():
    # dropping the connection leaves d(omega), which is cos(theta) dtheta ^ dphi on the sphere
    s = presets.sphere(33)
    frames, w, W = cartan_data(s.g, s.h, s.kappa)
    res = first_structure_residual(w, W.with_values(np.zeros_like(W.values)))
    assert structure_norm(res) >= 0.5


def test_second_structure_commuting_and_not():
    J = np.zeros((3, 3))
    J[0, 1], J[1, 0] = 1.0, -1.0
    K = np.zeros((3, 3))
    K[1, 2], K[2, 1] = 2.0, -2.0
    single = const(np.stack([J, np.zeros((3, 3))]))
    assert np.all(second_structure_residual(single).values == 0)
    both = const(np.stack([J, K]))
    res = second_structure_residual(both).values
    np.testing.assert_allclose(res[..., 0, 1, :, :], np.broadcast_to(J @ K - K @ J, res.shape[:2] + (3, 3)), atol=1e-14)
    np.testing.assert_allclose(res[..., 1, 0, :, :], -res[..., 0, 1, :, :])


def test_negative_controls_have_large_structure_residuals():
    for name in presets.NEGATIVE:
        p = presets.get(name, 33)
        _, w, W = cartan_data(p.g, p.h, p.kappa)
        worst = max(structure_norm(first_structure_residual(w, W)), structure_norm(second_structure_residual(W)))
        assert worst >= 1e-2


def test_canonical_form_padding():
    p = presets.plane_r4(9)
    fr, w, _ = cartan_data(p.g, p.h, p.kappa)
    assert w.comp_shape == (2, 4)
    assert np.all(w.values[..., 2:] == 0)
    np.testing.assert_allclose(canonical_form(fr, 2).values, w.values)


def test_shape_checks():
    p = presets.sphere(9)
    fr = orthonormal_coframe(p.g)
    with pytest.raises(ValidationError):
        connection_form(p.g, p.h, presets.plane_r4(9).kappa, fr)
    with pytest.raises(ValidationError):
        second_structure_residual(p.g)
