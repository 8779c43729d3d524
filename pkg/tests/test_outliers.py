import json
import math

import numpy as np
import pytest

from spikelab import freeconv as fc
from spikelab import rmt
from spikelab.errors import PreconditionError
from spikelab.measures import Measure, SupportSet
from spikelab.outliers import (
    Growth,
    OutlierPrediction,
    SpikeSchedule,
    affine_spikes,
    assemble_Kprime,
    predict_outliers,
    predict_outliers_multiplicative,
    predictions_to_json,
)


def a_side_outlier(theta):
    # omega_mu solves z = w (w^2 - 8) / (w^2 - 9) off the support
    return theta * (theta**2 - 8) / (theta**2 - 9)


def b_side_outliers(tau):
    g = (tau - math.copysign(math.sqrt(tau * tau - 4), tau)) / 2  # G_s(tau)
    root = math.sqrt(1 + 36 * g * g)
    return sorted(tau - (1 + s * root) / (2 * g) for s in (1, -1))


@pytest.fixture(scope="module")
def example_predictions(mu_pm3, semicircle, pair_ts, support_ts):
    return predict_outliers(SpikeSchedule((-5.0, 6.0), mu_pm3), SpikeSchedule((7.0, -10.0), semicircle), pair_ts, K=support_ts)


def test_example_a_side(mu_pm3, pair_ts, support_ts):
    preds = predict_outliers(SpikeSchedule((-5.0, 6.0), mu_pm3), None, pair_ts, K=support_ts)
    assert [p.location for p in preds] == pytest.approx([-85 / 16, 56 / 9], abs=1e-9)
    assert [p.location for p in preds] == pytest.approx([a_side_outlier(-5.0), a_side_outlier(6.0)], abs=1e-9)
    assert all(p.side == "A" and p.multiplicity == 1 for p in preds)


def test_example_b_side(semicircle, pair_ts, support_ts):
    preds = predict_outliers(None, SpikeSchedule((7.0, -10.0), semicircle), pair_ts, K=support_ts)
    locs = [p.location for p in preds]
    assert locs == pytest.approx([-10.8382, -0.9817, 0.7372, 8.1276], abs=1e-4)
    expected = sorted(b_side_outliers(7.0) + b_side_outliers(-10.0))
    assert locs == pytest.approx(expected, abs=1e-8)
    assert {p.sources for p in preds} == {(("B", 0),), (("B", 1),)}


def test_example_full_model(example_predictions, pair_ts, support_ts):
    preds = example_predictions
    assert len(preds) == 6
    assert all(p.multiplicity == 1 for p in preds)
    for p in preds:
        assert p.window > 0
        assert support_ts.distance(p.location) >= 2 * p.window - 1e-12
    # round trip through the subordination functions
    spikes = {"A": (-5.0, 6.0), "B": (7.0, -10.0)}
    for p in preds:
        (side, i), = p.sources
        w = fc.omega_real_boundary(pair_ts, p.location, support_ts, which=1 if side == "A" else 2)
        assert abs(w - spikes[side][i]) < 1e-6


def test_identity_partner_keeps_spike():
    mu = Measure.semicircle(0.0, 2.0)
    sp = fc.SubordinationPair.additive(mu, Measure.atomic([0.0]))
    (p,) = predict_outliers(SpikeSchedule((5.0,), mu), None, sp)
    assert p.location == pytest.approx(5.0, abs=1e-9) and p.multiplicity == 1


def test_spikes_below_cut_are_ignored(mu_pm3, pair_ts, support_ts):
    # 4.5 is 1.5 from the atom at 3: dropped at eps_cut = 2, kept at 0.05
    sched = SpikeSchedule((4.5,), mu_pm3)
    assert predict_outliers(sched, None, pair_ts, eps_cut=2.0, K=support_ts) == []
    (p,) = predict_outliers(sched, None, pair_ts, eps_cut=0.05, K=support_ts)
    assert p.location == pytest.approx(a_side_outlier(4.5), abs=1e-8)


def test_weak_spike_has_no_outlier(mu_pm3, pair_ts, support_ts):
    # omega1 maps the right gap onto roughly (3.9, inf): 3.3 never detaches,
    # although the closed form z(w) at w = 3.3 lands outside K on the wrong branch
    assert a_side_outlier(3.3) > support_ts.hi
    assert predict_outliers(SpikeSchedule((3.3,), mu_pm3), None, pair_ts, eps_cut=0.01, K=support_ts) == []


def test_eps_cut_must_be_positive(mu_pm3, pair_ts):
    with pytest.raises(PreconditionError):
        predict_outliers(SpikeSchedule((6.0,), mu_pm3), None, pair_ts, eps_cut=0.0)


def test_order_preservation(mu_pm3, pair_ts, support_ts):
    thetas = (4.0, 5.0, 6.5, 9.0, 15.0)
    preds = predict_outliers(SpikeSchedule(thetas, mu_pm3), None, pair_ts, K=support_ts)
    by_source = {p.sources[0][1]: p.location for p in preds}
    locs = [by_source[i] for i in range(len(thetas))]
    assert np.all(np.diff(locs) > 0)


def test_repeated_spikes_add_multiplicity(mu_pm3, pair_ts, support_ts):
    preds = predict_outliers(SpikeSchedule((6.0, 6.0), mu_pm3), None, pair_ts, K=support_ts)
    (p,) = preds
    assert p.multiplicity == 2 and p.sources == (("A", 0), ("A", 1))


def test_coincident_sides_merge():
    s = Measure.semicircle(0.0, 2.0)
    sp = fc.SubordinationPair.additive(s, s)
    (p,) = predict_outliers(SpikeSchedule((4.0,), s), SpikeSchedule((4.0,), s), sp)
    assert p.side == "AB" and p.multiplicity == 2
    K = sp.support
    kp = assemble_Kprime(K, [p])
    assert len(kp) == len(K) + 1


def test_assemble_kprime(example_predictions, support_ts):
    assert assemble_Kprime(support_ts, []) == support_ts
    kp = assemble_Kprime(support_ts, example_predictions)
    points = sorted(a for a, b in kp.intervals if a == b)
    assert points == pytest.approx([-10.8382, -5.3125, -0.9817, 0.7372, 6.2222, 8.1276], abs=1e-4)
    assert assemble_Kprime(kp, example_predictions) == kp


def test_prediction_json(example_predictions):
    doc = json.loads(predictions_to_json(example_predictions))
    assert set(doc[0]) >= {"rho", "side", "sources", "multiplicity", "window"}
    back = [OutlierPrediction.from_dict(d) for d in doc]
    assert back == list(example_predictions)


# -- multiplicative ------------------------------------------------------------------


def test_multiplicative_identity_partner():
    mu = Measure.atomic([1.0, 2.0], carrier="positive")
    sp = fc.SubordinationPair.multiplicative(mu, Measure.atomic([1.0], carrier="positive"))
    (p,) = predict_outliers_multiplicative(SpikeSchedule((5.0,), mu), None, sp)
    assert p.location == pytest.approx(5.0, abs=1e-8)


def test_multiplicative_scaling():
    a = 2.0
    nu = Measure.atomic([0.5, 1.0], carrier="positive")
    sp = fc.SubordinationPair.multiplicative(Measure.atomic([a], carrier="positive"), nu)
    (p,) = predict_outliers_multiplicative(None, SpikeSchedule((3.0,), nu), sp)
    assert p.location == pytest.approx(a * 3.0, abs=1e-8)


def test_additive_pair_rejected_by_multiplicative_solver(mu_pm3, pair_ts):
    with pytest.raises(PreconditionError):
        predict_outliers_multiplicative(SpikeSchedule((6.0,), mu_pm3), None, pair_ts)


def test_positive_spike_must_be_positive():
    mu = Measure.atomic([1.0, 2.0], carrier="positive")
    with pytest.raises(PreconditionError):
        SpikeSchedule((0.0,), mu)


def test_positive_prediction_matches_simulation():
    rng = np.random.default_rng(0)
    g = rng.standard_normal((40, 80))
    nu = Measure.empirical(np.linalg.eigvalsh(g @ g.T / 80), carrier="positive")
    mu = Measure.atomic([1.0, 2.0], carrier="positive")
    sp = fc.SubordinationPair.multiplicative(mu, nu)
    a, b = SpikeSchedule((), mu), SpikeSchedule((9.0,), nu)
    (p,) = predict_outliers(a, b, sp)
    ev = rmt.run_model(rmt.ModelSpec(rmt.MULT_POSITIVE, a, b, 2000, seed=1)).values()
    assert abs(ev[-1] - p.location) < 0.1
    assert ev[-2] < p.location - 1


def test_unitary_prediction_matches_simulation():
    mu = Measure.atomic([0.0, 0.6], carrier="circle")
    nu = Measure.atomic([0.0, 0.5], [0.7, 0.3], carrier="circle")
    sp = fc.SubordinationPair.multiplicative(mu, nu)
    a, b = SpikeSchedule((2.0,), mu), SpikeSchedule((4.0,), nu)
    preds = predict_outliers(a, b, sp)
    assert all(p.circle for p in preds)
    run = rmt.run_model(rmt.ModelSpec(rmt.MULT_UNITARY, a, b, 800, seed=3))
    args = run.values()
    for p in preds:
        d = np.abs(np.angle(np.exp(1j * (args - p.location))))
        assert np.count_nonzero(d < p.window) == p.multiplicity
        assert d.min() < 0.02


# -- spike schedules -------------------------------------------------------------------


def test_spike_inside_support_rejected(mu_pm3, semicircle):
    with pytest.raises(PreconditionError):
        SpikeSchedule((3.0,), mu_pm3)
    with pytest.raises(PreconditionError):
        SpikeSchedule((1.0,), semicircle)


def test_growth_rules():
    assert Growth("sqrt")(1600) == 40
    assert Growth("constant", 3)(10, available=2) == 2
    assert Growth("power", 0.5)(100) == 10
    assert Growth()(50, available=7) == 7
    with pytest.raises(PreconditionError):
        Growth("power", 1.0)


def test_schedule_checks(semicircle):
    sched = SpikeSchedule(affine_spikes(2.0, 10.0, 1, 100), semicircle, Growth("sqrt"))
    sched.check(accumulation_tol=0.2, envelope=0.11)
    with pytest.raises(PreconditionError):
        sched.check(accumulation_tol=0.05)
    with pytest.raises(PreconditionError):
        sched.check(envelope=0.05)
    assert sched.count(2000) == 44
    assert len(sched.active(400)) == 20


def test_affine_spikes():
    s = affine_spikes(2.0, 10.0, 1, 4)
    assert s == pytest.approx((12.0, 7.0, 2 + 10 / 3, 4.5))


def test_schedule_round_trip(semicircle):
    sched = SpikeSchedule((7.0, -10.0), semicircle, Growth("power", 0.25), gue_bulk=True)
    assert SpikeSchedule.from_dict(json.loads(json.dumps(sched.to_dict()))) == sched


def test_increasing_spikes_keep_only_far_ones(semicircle, mu_pm3):
    sp = fc.SubordinationPair.additive(mu_pm3, semicircle)
    sched = SpikeSchedule(affine_spikes(2.0, 10.0, 1, 100), semicircle)
    preds = predict_outliers(None, sched, sp, eps_cut=0.05)
    used = {i for p in preds for _, i in p.sources}
    # 2 + 10/k is farther than 0.05 from [-2, 2] exactly for k < 200
    assert max(used) <= 99
    for p in preds:
        assert p.window > 0
