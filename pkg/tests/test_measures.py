import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from spikelab import measures as ms
from spikelab.errors import DomainError, PoleError, PreconditionError
from spikelab.measures import Measure, SupportSet, fattened


@st.composite
def atomic_measures(draw, lo=-5.0, hi=5.0, max_atoms=6, carrier="real"):
    k = draw(st.integers(1, max_atoms))
    # distinct locations on a 1e-3 grid; closer atoms would be merged
    locs = [i / 1000 for i in draw(st.lists(st.integers(int(lo * 1000), int(hi * 1000)), min_size=k, max_size=k, unique=True))]
    raw = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k)))
    return Measure.atomic(locs, (raw / raw.sum()).tolist(), carrier=carrier)


upper_points = st.builds(complex, st.floats(-20, 20), st.floats(1e-3, 20))


# -- Cauchy / F / h ------------------------------------------------------------


def test_cauchy_two_atoms_matches_closed_form(mu_pm3):
    # G(z) = z / (z^2 - 9)
    assert ms.cauchy_transform(mu_pm3, 5.0) == pytest.approx(0.3125, abs=1e-15)
    z = 1.3 + 0.7j
    assert ms.cauchy_transform(mu_pm3, z) == pytest.approx(z / (z * z - 9), rel=1e-14)


def test_cauchy_point_mass_at_zero():
    assert ms.cauchy_transform(Measure.atomic([0.0]), 1j) == pytest.approx(-1j, abs=1e-15)


def test_cauchy_semicircle_decaying_branch(semicircle):
    assert ms.cauchy_transform(semicircle, 3.0) == pytest.approx((3 - math.sqrt(5)) / 2, abs=1e-14)
    assert ms.cauchy_transform(semicircle, -3.0) == pytest.approx(-(3 - math.sqrt(5)) / 2, abs=1e-14)


def test_f_transform_semicircle_against_quadrature(semicircle):
    g, _ = integrate.quad(lambda t: math.sqrt(4 - t * t) / (2 * math.pi) / (3.0 - t), -2, 2, epsabs=1e-13)
    assert 1 / g == pytest.approx(2.618034, abs=1e-6)
    assert ms.f_transform(semicircle, 3.0) == pytest.approx(1 / g, rel=1e-10)
    assert ms.f_transform(semicircle, 3.0) == pytest.approx(2 / (3 - math.sqrt(5)), rel=1e-14)


def test_f_transform_examples(mu_pm3):
    assert ms.f_transform(mu_pm3, 5.0) == pytest.approx(3.2, abs=1e-14)
    c = 1.7
    for z in (2.0 + 1j, -4.0, 0.3j):
        assert ms.f_transform(Measure.atomic([c]), z) == pytest.approx(z - c, abs=1e-14)


def test_f_times_g_is_one(mu_pm3, semicircle):
    z = np.array([0.4 + 2j, -7 + 0.01j, 3.5 + 1e-6j])
    for m in (mu_pm3, semicircle, Measure.empirical([0.1, 0.4, 2.0])):
        fg = ms.f_transform(m, z) * ms.cauchy_transform(m, z)
        assert np.max(np.abs(fg - 1)) < 1e-14


def test_h_transform_is_f_minus_z(mu_pm3, semicircle):
    z = np.array([0.4 + 2j, -7 + 0.01j, 3.5 + 1e-3j, 50 + 1j])
    for m in (mu_pm3, semicircle):
        assert np.allclose(ms.h_transform(m, z), ms.f_transform(m, z) - z, atol=1e-11)


def test_transform_errors(mu_pm3, semicircle):
    with pytest.raises(DomainError):
        ms.cauchy_transform(mu_pm3, 3.0)
    with pytest.raises(DomainError):
        ms.cauchy_transform(semicircle, 1.0)
    with pytest.raises(PoleError):
        ms.f_transform(mu_pm3, 0.0)


@given(atomic_measures(), upper_points)
def test_atomic_cauchy_equals_direct_sum(m, z):
    direct = sum(w / (z - t) for t, w in zip(m.locations, m.weights))
    assert abs(ms.cauchy_transform(m, z) - direct) <= 1e-13 * max(1.0, abs(direct))


@given(atomic_measures(), upper_points)
def test_cauchy_maps_upper_to_lower_half_plane(m, z):
    assert ms.cauchy_transform(m, z).imag < 0


@pytest.mark.parametrize("m", [Measure.semicircle(1.0, 0.5), Measure.atomic([-3, 3]), Measure.empirical([0.0, 1.0, 4.0])])
def test_cauchy_decays_like_one_over_z(m):
    for arg in np.linspace(0.1, math.pi - 0.1, 7):
        z = 1e6 * complex(math.cos(arg), math.sin(arg))
        assert abs(z * ms.cauchy_transform(m, z) - 1) < 1e-5


def test_stieltjes_inversion_recovers_semicircle_density(semicircle):
    x = np.linspace(-1.99, 1.99, 81)
    dens = -np.imag(ms.cauchy_transform(semicircle, x + 1e-6j)) / math.pi
    assert np.max(np.abs(dens - np.sqrt(4 - x**2) / (2 * math.pi))) < 1e-4
    assert np.allclose(semicircle.density(x), np.sqrt(4 - x**2) / (2 * math.pi), atol=1e-14)


# -- multiplicative transforms -------------------------------------------------


def test_eta_of_point_mass():
    # psi(w) = aw/(1 - aw), eta(w) = aw
    m = Measure.atomic([2.5], carrier="positive")
    w = np.array([0.1 + 0.2j, -1.0, 0.3j])
    assert np.allclose(ms.eta_transform(m, w), 2.5 * w, atol=1e-14)
    assert ms.eta_over_w(m, 0.0) == pytest.approx(2.5)


def test_psi_matches_moment_series():
    m = Measure.atomic([0.5, 1.0, 2.0], [0.2, 0.5, 0.3], carrier="positive")
    w = 0.05 + 0.02j
    series = sum(w**k * sum(p * t**k for t, p in zip(m.locations, m.weights)) for k in range(1, 60))
    assert ms.psi_transform(m, w) == pytest.approx(series, abs=1e-14)


def test_semicircle_psi_tilde_at_zero_is_mean():
    m = Measure.semicircle(3.0, 1.0, carrier="positive")
    assert ms.psi_tilde(m, 1e-16) == pytest.approx(3.0)
    assert ms.psi_tilde(m, 1e-3) == pytest.approx(3.0 + 1e-3 * (9 + 0.25), rel=1e-5)


# -- supports ------------------------------------------------------------------


def test_fattened_examples():
    assert fattened(SupportSet(((0, 1),)), 0).intervals == ((0, 1),)
    (merged,) = fattened(SupportSet(((0, 1), (1.1, 2))), 0.1).intervals
    assert merged == pytest.approx((-0.1, 2.1))
    assert fattened(SupportSet(((-2, 2),)), 0.5).intervals == ((-2.5, 2.5),)


def test_fattened_circle_wraps():
    s = fattened(SupportSet(((0.0, 0.0), (3.0, 3.0)), circle=True), 0.1)
    assert s.contains(2 * math.pi - 0.05)
    assert s.contains(0.05) and not s.contains(0.2)
    assert s.distance(2 * math.pi - 0.3) == pytest.approx(0.2)


def test_support_examples(mu_pm3, semicircle):
    assert ms.support(mu_pm3).intervals == ((-3.0, -3.0), (3.0, 3.0))
    assert ms.support(semicircle).intervals == ((-2.0, 2.0),)
    assert ms.support(Measure.empirical([1, 2, 5])).intervals == ((1.0, 5.0),)


def test_support_gaps_and_distance():
    s = SupportSet(((-1, 0), (2, 3)))
    assert s.gaps(-5, 5) == [(-5, -1), (0, 2), (3, 5)]
    assert s.distance(1.5) == pytest.approx(0.5)
    assert s.distance(-0.5) == 0


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(0, 3)), min_size=1, max_size=6), st.floats(0, 2))
def test_fattening_is_monotone_and_sorted(raw, eps):
    s = SupportSet(tuple((a, a + d) for a, d in raw))
    f = s.fattened(eps)
    assert all(a <= b for a, b in f.intervals)
    assert all(b1 < a2 for (_, b1), (a2, _) in zip(f.intervals, f.intervals[1:]))
    for a, b in s.intervals:
        assert f.contains(a) and f.contains(b)


# -- measures as values ----------------------------------------------------------


def test_weights_must_sum_to_one():
    with pytest.raises(PreconditionError):
        Measure.atomic([0, 1], [0.5, 0.6])
    m = Measure.from_dict({"kind": "atomic", "atoms": [[0, 0.5], [1, 0.5 + 5e-10]]})
    assert sum(m.weights) == pytest.approx(1, abs=1e-15)
    with pytest.raises(PreconditionError):
        Measure.from_dict({"kind": "atomic", "atoms": [[0, 0.5], [1, 0.5 + 1e-8]]})


def test_carrier_checks():
    with pytest.raises(PreconditionError):
        Measure.atomic([-1.0, 1.0], carrier="positive")
    with pytest.raises(PreconditionError):
        Measure.atomic([1.1 + 0j], carrier="circle")
    m = Measure.atomic([1j, -1.0], carrier="circle")
    assert m.locations == pytest.approx((math.pi / 2, math.pi))


@pytest.mark.parametrize(
    "m",
    [
        Measure.atomic([-3, 3]),
        Measure.semicircle(0.5, 1.5),
        Measure.empirical([0.2, 0.9, 0.9]),
        Measure.atomic([0.0, 0.6], [0.3, 0.7], carrier="circle"),
        Measure.atomic([1, 2], carrier="positive"),
    ],
)
def test_json_round_trip(m):
    back = Measure.from_dict(json.loads(json.dumps(m.to_dict())))
    assert back == m


def test_isclose_ignores_atom_order():
    a = Measure.atomic([3, -3, 1], [0.2, 0.3, 0.5])
    b = Measure.atomic([1, 3 + 1e-12, -3], [0.5, 0.2, 0.3])
    assert a.isclose(b)
    assert not a.isclose(Measure.atomic([1, 3, -2], [0.5, 0.2, 0.3]))


def test_semicircle_quantiles_invert_cdf(semicircle):
    p = np.linspace(0.01, 0.99, 25)
    assert np.allclose(semicircle.cdf(semicircle.quantile(p)), p, atol=1e-12)


# -- total variation ---------------------------------------------------------------


def test_total_variation_examples():
    a = Measure.atomic([0.0, 1.0, 2.0])
    assert ms.total_variation_distance(a, a) == 0
    assert ms.total_variation_distance(Measure.atomic([0.0]), Measure.atomic([1.0])) == 1


def test_total_variation_moved_atoms_within_bound():
    locs = np.arange(100) / 100.0
    moved = locs.copy()
    moved[:10] = 5.0 + np.arange(10)
    v = ms.total_variation_distance(Measure.atomic(locs), Measure.atomic(moved))
    assert 0.10 - 1e-12 <= v <= (10 - 1) / 100 + 10 / 100


@given(atomic_measures(), atomic_measures(), atomic_measures())
def test_total_variation_is_a_metric(a, b, c):
    d = ms.total_variation_distance
    assert 0 <= d(a, b) <= 1
    assert d(a, b) == pytest.approx(d(b, a), abs=1e-12)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12
    assert d(a, a) == 0
