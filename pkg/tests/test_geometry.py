import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcrlab import presets
from gcrlab.errors import ValidationError
from gcrlab.gcr import observed_orders
from gcrlab.geometry import (check_metric, christoffel, extract_first_form, extract_normal_connection,
                             extract_normal_frame, extract_second_form, orthonormal_frame, riemann, seed_normals,
                             shape_operator)
from gcrlab.grid import Chart, ChartField


def diag_metric(chart, a, b):
    x, y = chart.mesh()
    one = np.ones_like(x)
    return ChartField(chart, np.stack([np.stack([a(x, y) * one, 0 * x], -1), np.stack([0 * x, b(x, y) * one], -1)], -2))


def test_identity_metric_has_zero_christoffel_and_curvature():
    c = Chart.box((0, 0), (1, 1), (9, 9))
    g = ChartField.constant(c, np.eye(2))
    assert np.all(christoffel(g).values == 0)
    assert np.all(riemann(g).values == 0)
    assert np.all(riemann(ChartField.constant(c, 3.5 * np.eye(2))).values == 0)


def test_polar_metric_christoffel_at_r2():
    c = Chart.box((1.0, 0.0), (3.0, 1.0), (201, 5))
    g = diag_metric(c, lambda r, p: 1.0, lambda r, p: r ** 2)
    G = christoffel(g).values[100, 2]  # r = 2
    assert G[0, 1, 1] == pytest.approx(-2.0, abs=1e-10)
    assert G[1, 0, 1] == pytest.approx(0.5, abs=1e-10)
    assert G[1, 1, 0] == pytest.approx(0.5, abs=1e-10)
    assert abs(G[0, 0, 0]) + abs(G[0, 0, 1]) + abs(G[1, 0, 0]) + abs(G[1, 1, 1]) < 1e-10


def test_sphere_christoffel_at_quarter_pi():
    errs = []
    for N in (33, 65):
        c = Chart.box((np.pi / 8, 0.0), (3 * np.pi / 8, 1.0), (N, 5))
        g = diag_metric(c, lambda t, p: 1.0, lambda t, p: np.sin(t) ** 2)
        G = christoffel(g).values[(N - 1) // 2, 2]
        errs.append(max(abs(G[0, 1, 1] + 0.5), abs(G[1, 0, 1] - 1.0)))
        assert G[0, 1, 1] == pytest.approx(-0.5, abs=1e-3)
        assert G[1, 0, 1] == pytest.approx(1.0, abs=1e-3)
    assert errs[1] < errs[0] / 3


def test_sphere_riemann_at_equator_converges():
    errs, hs = [], []
    for N in (17, 33, 65):
        c = Chart.box((np.pi / 4, 0.0), (3 * np.pi / 4, 1.0), (N, 5))
        g = diag_metric(c, lambda t, p: 1.0, lambda t, p: np.sin(t) ** 2)
        R = riemann(g).values[(N - 1) // 2, 2]
        errs.append(abs(R[0, 1, 0, 1] - 1.0))
        hs.append(c.spacing[0])
        # symmetries of the curvature tensor
        assert R[0, 1, 0, 1] == pytest.approx(-R[1, 0, 0, 1], abs=1e-14)
        assert R[0, 1, 0, 1] == pytest.approx(-R[0, 1, 1, 0], abs=1e-14)
    assert errs[-1] < 1e-3
    assert min(observed_orders(errs, hs)) >= 1.8


@pytest.mark.parametrize("bad", [np.array([[1.0, 0.5], [0.0, 1.0]]), np.array([[1.0, 0.0], [0.0, -1.0]]),
                                 np.zeros((2, 2))])
def test_check_metric_rejects(bad):
    with pytest.raises(ValidationError):
        check_metric(ChartField.constant(Chart.box((0, 0), (1, 1), (4, 4)), bad))


def test_first_form_examples():
    p = presets.plane(16)
    np.testing.assert_allclose(extract_first_form(p.f).values, p.g.values, atol=1e-13)
    cyl = presets.cylinder(129)
    err = np.abs(extract_first_form(cyl.f).values - cyl.g.values)[cyl.chart.interior(1)]
    assert err.max() < 2e-3
    errs = []
    for N in (33, 65):
        s = presets.sphere(N)
        errs.append(np.max(np.abs(extract_first_form(s.f).values - s.g.values)[s.chart.interior(1)]))
    assert errs[1] < errs[0] / 3.5


def test_normal_frame_examples():
    p = presets.plane(8)
    np.testing.assert_allclose(extract_normal_frame(p.f).values[..., 0, :], np.broadcast_to([0, 0, 1.0], (8, 8, 3)),
                               atol=1e-14)
    cyl = presets.cylinder(65)
    eta = extract_normal_frame(cyl.f).values
    np.testing.assert_allclose(eta[0, :, 0, :], np.tile([1.0, 0, 0], (65, 1)), atol=1e-3)
    c = Chart.box((0, 0), (1, 1), (6, 6))
    f4 = ChartField.from_function(c, lambda x, y: np.stack([x, y, 0 * x, 0 * x]), (4,))
    eta4 = extract_normal_frame(f4).values
    np.testing.assert_allclose(eta4[..., 0, :], np.broadcast_to([0, 0, 1.0, 0], eta4.shape[:2] + (4,)), atol=1e-14)
    np.testing.assert_allclose(eta4[..., 1, :], np.broadcast_to([0, 0, 0, 1.0], eta4.shape[:2] + (4,)), atol=1e-14)


def test_normal_frame_is_orthonormal_and_normal():
    s = presets.sphere(33)
    eta = extract_normal_frame(s.f).values
    from gcrlab.geometry import jacobian

    J = jacobian(s.f)
    assert np.max(np.abs(np.einsum("...la,...ia->...li", eta, J))) < 1e-12
    np.testing.assert_allclose(np.linalg.norm(eta, axis=-1), 1.0, atol=1e-14)


def test_degenerate_immersion_rejected():
    c = Chart.box((0, 0), (1, 1), (6, 6))
    f = ChartField.from_function(c, lambda x, y: np.stack([x, x, 0 * x]), (3,))
    with pytest.raises(ValidationError):
        extract_normal_frame(f)
    with pytest.raises(ValidationError):
        seed_normals(np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]), tol=1e-6)


def test_second_form_examples():
    p = presets.plane(9)
    assert np.max(np.abs(extract_second_form(p.f, extract_normal_frame(p.f)).values)) < 1e-13
    cyl = presets.cylinder(129)
    h = extract_second_form(cyl.f, cyl.frame).values
    assert np.max(np.abs(h - cyl.h.values)[cyl.chart.interior(1)]) < 1e-3
    s = presets.sphere(65)
    hs = extract_second_form(s.f, extract_normal_frame(s.f)).values
    assert np.max(np.abs(hs[..., 0, :, :] + s.g.values)) < 2e-3


def test_frame_mismatch_rejected():
    cyl = presets.cylinder(9)
    with pytest.raises(ValidationError):
        extract_second_form(cyl.f, presets.cylinder(10).frame)


def test_normal_connection_examples():
    s = presets.sphere(9)
    assert np.all(extract_normal_connection(s.f, extract_normal_frame(s.f)).values == 0)
    p = presets.plane_r4(65)
    k = extract_normal_connection(p.f, p.frame).values
    assert np.max(np.abs(k[..., 0, 0, 1] - 1.0)) < 1e-3
    assert np.max(np.abs(k[..., 1, :, :])) < 1e-14
    const = extract_normal_connection(p.f, extract_normal_frame(p.f)).values
    assert np.max(np.abs(const)) < 1e-14


def test_shape_operator_examples():
    c = Chart.box((0, 0), (1, 1), (4, 4))
    h = ChartField.constant(c, np.zeros((1, 2, 2)))
    assert np.all(shape_operator(h, ChartField.constant(c, np.eye(2)), 0).values == 0)
    h = ChartField.constant(c, [np.diag([-1.0, 0.0])])
    np.testing.assert_allclose(shape_operator(h, ChartField.constant(c, np.eye(2)), 0).values[1, 1], np.diag([-1.0, 0]))
    h = ChartField.constant(c, [np.diag([2.0, 2.0])])
    S = shape_operator(h, ChartField.constant(c, np.diag([1.0, 4.0])), 0).values
    np.testing.assert_allclose(S[2, 3], np.diag([2.0, 0.5]), atol=1e-15)
    with pytest.raises(ValidationError):
        shape_operator(h, ChartField.constant(c, np.eye(2)), 1)


spd = st.tuples(st.floats(0.2, 5), st.floats(0.2, 5), st.floats(-0.9, 0.9))


@settings(max_examples=40, deadline=None)
@given(spd)
def test_orthonormal_frame_property(p):
    a, b, r = p
    off = r * np.sqrt(a * b)
    g = ChartField.constant(Chart.box((0, 0), (1, 1), (3, 3)), [[a, off], [off, b]])
    E = orthonormal_frame(g)
    np.testing.assert_allclose(np.einsum("...im,...mn,...jn->...ij", E, g.values, E), np.broadcast_to(np.eye(2), E.shape),
                               atol=1e-10)
    assert np.all(E[..., 0, 1] == 0)  # Gram-Schmidt in index order keeps E_1 along d_1
