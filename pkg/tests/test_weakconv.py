import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcrlab import dec
from gcrlab.errors import ValidationError
from gcrlab.geometry import extract_first_form, extract_normal_frame, extract_second_form
from gcrlab.grid import Chart, ChartField
from gcrlab.weakconv import (DEFAULT_FAKIR_PSI, ConvergenceTable, Dictionary, SeparablePoly, SequenceSpec,
                             dictionary_coefficients, dictionary_pairing, divcurl_experiment, equiintegrability_index,
                             fakir_coefficients, fakir_div_bound, fakir_pairing, fakir_pairing_against,
                             fakir_tail_mass, immersion_family, lp_norm, oscillation_pair, rigidity_experiment,
                             weak_limit_estimate)

BOX = Chart.box((0.0, 0.0), (2 * np.pi, 1.0), (257, 9))


def test_dictionary_size():
    assert len(Dictionary(2).terms) == 25 + 8
    assert len(Dictionary(3).terms) == 125 + 26
    labels = Dictionary(2).labels()
    assert labels[0] == "1*1" and len(set(labels)) == len(labels)


@pytest.mark.parametrize("m", [10, 100, 1000])
def test_fakir_pairing_closed_form(m):
    assert fakir_pairing(m) == Fraction(m - 1, m)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 3000))
def test_fakir_pairing_property(m):
    val = fakir_pairing(m)
    assert val == Fraction(m - 1, m)
    assert fakir_pairing_against(m, SeparablePoly.of((1,), (1,), (1,))) == val


def test_fakir_div_bound_constant_psi_is_zero():
    b = fakir_div_bound(100, SeparablePoly.of((3,), (1,), (1,)))
    assert b.exact_sum == 0 and b.value == 0.0


@pytest.mark.parametrize("psi", DEFAULT_FAKIR_PSI, ids=lambda p: p.name)
def test_fakir_div_bound_ratio_at_most_one(psi):
    for m in (25, 100, 400, 1600):
        assert fakir_div_bound(m, psi).ratio <= 1.0


def test_fakir_div_bound_bubble_in_x1():
    psi = SeparablePoly.of((0, 1, -1), (1,), (1,))
    assert psi.w1inf_norm() == pytest.approx(1.0)
    vals = [fakir_div_bound(m, psi).value for m in (25, 100, 400)]
    assert vals[1] <= 0.1 * psi.w1inf_norm()
    # the exact value falls like m^(-5/2); require at least the m^(-1/2) of the bound
    for a, b in zip(vals, vals[1:]):
        assert b <= a / 2 * 1.2


def test_fakir_coefficient_decay_order():
    ms = (25, 100, 400)
    c = [float(np.max(np.abs(fakir_coefficients(m)))) for m in ms]
    assert all(v <= 2 / math.sqrt(m) for v, m in zip(c, ms))
    orders = [math.log(c[i] / c[i + 1]) / math.log(4) for i in range(2)]
    assert all(abs(o - 0.5) <= 0.1 for o in orders)


def test_fakir_tail_mass():
    assert fakir_tail_mass(100, 50) == Fraction(99, 100)
    assert fakir_tail_mass(100, 100) == 0
    idx = equiintegrability_index(("fakir", 64), [1, 32, 63.9, 64, 100])
    assert [v for _, v in idx] == [63 / 64, 63 / 64, 63 / 64, 0.0, 0.0]
    with pytest.raises(ValidationError):
        fakir_pairing(1)


def test_equiintegrability_of_bounded_field():
    fld = ChartField.from_function(BOX, lambda x, y: np.sin(3 * x) * y)
    out = equiintegrability_index(fld, [0.0, 0.25, 0.5, 2.0])
    assert out[-1] == (2.0, 0.0)
    vals = [v for _, v in out]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_lp_norm_of_corrugation_second_form():
    eps = 1 / 16
    mem = immersion_family("corrugation_family", eps, grid=(16 * 16 + 1, 9))
    h = extract_second_form(mem.f, extract_normal_frame(mem.f))
    # |h_11| ~ |sin(x/eps)|, so the L2 norm approaches sqrt(vol / 2)
    assert lp_norm(h, 2) == pytest.approx(math.sqrt(np.pi), rel=2e-2)


def test_oscillation_pair_examples():
    w, t = oscillation_pair(1 / 8)
    assert abs(dictionary_pairing(w, t)[0]) <= 1e-12
    w, t = oscillation_pair(1 / 8, negative=True)
    vol = w.mesh.volume
    assert dictionary_pairing(w, t)[0] == pytest.approx(vol / 2, rel=1e-12)
    assert np.max(np.abs(dec.d(oscillation_pair(1 / 8)[0]).values)) < 1e-12
    assert np.max(np.abs(dec.delta(oscillation_pair(1 / 8)[1]).values)) < 1e-12
    with pytest.raises(ValidationError):
        oscillation_pair(1 / 8, N=32)
    with pytest.raises(ValidationError):
        oscillation_pair(0.3)


def test_weak_limit_of_constant_family():
    fld = ChartField.from_function(BOX, lambda x, y: 2.0 + 0 * x)
    wl = weak_limit_estimate([fld] * 4, [1 / 2, 1 / 4, 1 / 8, 1 / 16])
    assert wl.declared
    assert np.all(wl.coefficients == wl.coefficients[0])
    np.testing.assert_allclose(wl.field().values, fld.values, atol=1e-8)


def test_weak_limit_of_oscillation_is_zero_at_rate_eps():
    eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    members = [ChartField.from_function(BOX, lambda x, y, e=e: np.cos(x / e)) for e in eps]
    wl = weak_limit_estimate(members, eps)
    assert wl.declared and wl.is_zero()
    for e, c in zip(eps, wl.coefficients):
        assert np.max(np.abs(c)) <= e


def test_non_cauchy_family_has_no_limit():
    members = [ChartField.from_function(BOX, lambda x, y, s=s: s + 0 * x) for s in (1.0, -1.0, 1.0, -1.0)]
    wl = weak_limit_estimate(members, [1 / 2, 1 / 4, 1 / 8, 1 / 16])
    assert not wl.declared
    with pytest.raises(ValidationError):
        wl.field()


def test_dictionary_coefficients_of_known_mode():
    fld = ChartField.from_function(BOX, lambda x, y: np.cos(x) + 0 * y)
    d = Dictionary(2)
    c = dictionary_coefficients(fld, d)[0]
    assert c[d.index("cos1*1")] == pytest.approx(0.5, abs=1e-4)
    assert abs(c[d.index("1*1")]) < 1e-12


def test_sequence_spec_validation():
    with pytest.raises(ValidationError):
        SequenceSpec("bogus", (0.1,))
    with pytest.raises(ValidationError):
        SequenceSpec("fakir", (0.1, 0.2))
    with pytest.raises(ValidationError):
        SequenceSpec("fakir", (0.1, -0.01))


def test_convergence_table_csv():
    t = ConvergenceTable()
    t.add(0.5, "a", 1 / 3)
    t.add(0.25, "a", 2 / 3)
    lines = t.to_csv().splitlines()
    assert lines[0] == "epsilon,diagnostic,value"
    assert lines[1].startswith("0.5,a,0.333333333333")
    assert float(lines[1].split(",")[2]) == 1 / 3
    assert t.get(0.25, "a") == 2 / 3
    with pytest.raises(KeyError):
        t.get(0.1, "a")


def test_divcurl_fakir_fails():
    t = divcurl_experiment(SequenceSpec("fakir", (1 / 10, 1 / 100, 1 / 1000)))
    assert t.verdict == "fails"
    assert t.values("pairing_const") == [0.9, 0.99, 0.999]


def test_divcurl_small_oscillation_pair():
    spec = SequenceSpec("oscillation_pair", (1 / 4, 1 / 8, 1 / 16))
    assert divcurl_experiment(spec).verdict == "converges"
    neg = SequenceSpec("oscillation_pair", (1 / 4, 1 / 8, 1 / 16), {"negative": True})
    assert divcurl_experiment(neg).verdict == "fails"


def test_immersion_families():
    mem = immersion_family("cylinder_family", 1 / 8)
    g = extract_first_form(mem.f).values
    assert np.max(np.abs(g - np.eye(2))[mem.f.chart.interior(1)]) < 1e-3
    cor = immersion_family("corrugation_family", 1 / 8)
    np.testing.assert_allclose(extract_first_form(cor.f).values[cor.f.chart.interior(1)],
                               cor.g.values[cor.f.chart.interior(1)], atol=5e-3)
    with pytest.raises(ValidationError):
        immersion_family("corrugation_family", 0.3)
    with pytest.raises(ValidationError):
        immersion_family("fakir", 0.1)


def test_rigidity_verdicts_small():
    t = rigidity_experiment(SequenceSpec("cylinder_family", (1 / 4, 1 / 8, 1 / 16)), grid=(65, 9))
    assert t.verdict == "rigid"
    p = rigidity_experiment(SequenceSpec("perturbed_gcr", (1 / 4, 1 / 8, 1 / 16), seed=1), grid=33)
    assert p.verdict == "rigid (approximate)"
    gauss = p.values("gcr_gauss")
    assert all(b < a for a, b in zip(gauss, gauss[1:]))
    with pytest.raises(ValidationError):
        rigidity_experiment(SequenceSpec("fakir", (1 / 4, 1 / 8, 1 / 16)))
