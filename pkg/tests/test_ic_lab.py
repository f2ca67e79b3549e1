import numpy as np
import pytest

from dealmech.errors import GuardExceeded, NotConvexError
from dealmech.general import GeneralInstance, OutcomeBid
from dealmech.ic_lab import (
    IC_HOLDS,
    IC_VIOLATED,
    InstanceSampler,
    check_ic_general,
    check_ic_single_slot,
    check_ir,
    demo_no_approximation,
    general_deviation_grid,
    instance_fingerprint,
    sample_instances,
    single_slot_truthful_utilities,
)
from dealmech.single_slot import SingleSlotBid
from dealmech.welfare import concave_counterexample_g, linear_g, separable_welfare, square_g, threshold_g

YN = ("n", "y")

# committed regression fixture: concave g admits a profitable quality misreport
CONCAVE_FIXTURE = [SingleSlotBid(5.0, 0.5), SingleSlotBid(1.0, 0.5)]


def concave_gain(p_true, q_report):
    """Score gain from reporting q instead of p under g = -(x - 1/2)^2, by hand."""
    g = lambda x: -(x - 0.5) ** 2  # noqa: E731
    dg = lambda x: -2.0 * (x - 0.5)  # noqa: E731
    return g(q_report) + dg(q_report) * (p_true - q_report) - g(p_true)


def test_sampler_is_deterministic():
    a = list(sample_instances(InstanceSampler(seed=9), 20))
    b = list(sample_instances(InstanceSampler(seed=9), 20))
    assert a == b
    assert a != list(sample_instances(InstanceSampler(seed=10), 20))
    for bids in a:
        assert 2 <= len(bids) <= 6
        assert all(0.0 <= b.value <= 10.0 and 0.0 <= b.quality <= 1.0 for b in bids)


def test_fingerprints_frozen():
    assert instance_fingerprint(sample_instances(InstanceSampler(seed=42), 100)) == (
        "e75d027360972d893410711c02c496033133a9c317e7104f52228d492ce70411")
    general = InstanceSampler(seed=42, kind="general", welfare="linear")
    assert instance_fingerprint(sample_instances(general, 20)) == (
        "10aebbf1bf467e819cb6abd2fbb308ca107c343c22496ebd7269d2d36810eb31")


def test_unknown_sampler_kind():
    with pytest.raises(ValueError):
        next(sample_instances(InstanceSampler(kind="auction"), 1))


@pytest.mark.parametrize("g", [linear_g(1.0), square_g(), threshold_g(0.2, 0.6, 10.0)],
                         ids=["linear", "square", "threshold"])
def test_single_slot_scan_clean(g):
    for bids in sample_instances(InstanceSampler(seed=4), 10):
        for rep in check_ic_single_slot(bids, g, 41):
            assert rep.gap <= 1e-9 and rep.verdict == IC_HOLDS
        assert all(check_ir(bids, g))


def test_truth_is_on_the_grid():
    bids = [SingleSlotBid(3.14159, 0.123456), SingleSlotBid(2.0, 0.5)]
    reps = check_ic_single_slot(bids, square_g(), 11)
    # off-grid truth adds one point; 0.5 is already on the 11-point grid
    assert reps[0].grid == (12, 12)
    assert reps[1].grid == (12, 11)
    with pytest.raises(ValueError):
        check_ic_single_slot(bids, square_g(), 5)


def test_scan_agrees_with_direct_utilities():
    bids = [SingleSlotBid(2.0, 0.3), SingleSlotBid(1.5, 0.9), SingleSlotBid(0.2, 0.1)]
    reps = check_ic_single_slot(bids, square_g(), 21)
    direct = single_slot_truthful_utilities(bids, square_g())
    assert [r.truthful_utility for r in reps] == pytest.approx(direct, abs=1e-12)


def test_concave_fixture_violates_ic():
    with pytest.raises(NotConvexError):
        check_ic_single_slot(CONCAVE_FIXTURE, concave_counterexample_g())
    reps = check_ic_single_slot(CONCAVE_FIXTURE, concave_counterexample_g(), allow_nonconvex=True)
    assert reps[0].verdict == IC_VIOLATED
    assert reps[0].gap == pytest.approx(0.25, abs=1e-12)
    assert reps[0].gap == pytest.approx(concave_gain(0.5, reps[0].best_deviation[1]), abs=1e-12)
    assert reps[0].best_deviation[1] in (0.0, 1.0)


@pytest.mark.parametrize("q", [0.0, 0.2, 0.9])
def test_concave_gain_formula(q):
    assert concave_gain(0.5, q) == pytest.approx((0.5 - q) ** 2)


def concave_general():
    return GeneralInstance(
        ("A", "B"),
        ({"A": OutcomeBid(5.0, YN, (0.5, 0.5))}, {"B": OutcomeBid(1.0, YN, (0.5, 0.5))}),
        {"A": separable_welfare("concave_demo", [0]), "B": separable_welfare("concave_demo", [1])},
    )


def test_general_negative_demo():
    with pytest.raises(NotConvexError):
        check_ic_general(concave_general())
    reps = check_ic_general(concave_general(), verify=False)
    assert reps[0].verdict == IC_VIOLATED
    assert reps[0].gap == pytest.approx(0.25, abs=1e-12)


@pytest.mark.parametrize("welfare", ["zero", "linear", "product"])
def test_general_scans_clean(welfare):
    sampler = InstanceSampler(seed=2, kind="general", welfare=welfare, bidders=(2, 3), outcomes=(1, 2),
                              states=(1, 2))
    for inst in sample_instances(sampler, 4):
        for rep in check_ic_general(inst, 5):
            assert rep.gap <= 1e-9
        assert all(check_ir(inst))


def test_custom_deviations_and_guard():
    inst = concave_general()
    reps = check_ic_general(inst, deviations={0: [{"A": OutcomeBid(5.0, YN, (1.0, 0.0))}]}, bidders=[0],
                            verify=False)
    assert len(reps) == 1 and reps[0].gap == pytest.approx(0.25)
    with pytest.raises(GuardExceeded):
        general_deviation_grid(inst, 0, 5, max_deviations=10)


def test_ir_needs_g_for_single_slot():
    with pytest.raises(ValueError):
        check_ir([SingleSlotBid(1.0, 0.5)])


def test_threshold_witness():
    w = demo_no_approximation(0.2, 0.6, 10.0)
    assert w.quoted_bound == pytest.approx(20.0, abs=1e-12)
    assert w.adjusted_values[0] == pytest.approx(w.quoted_bound, abs=1e-12)
    assert w.value_threshold == pytest.approx(10.0, abs=1e-12)
    assert w.winner_index == 0 and w.winner.value == 0.0
    assert w.approximation_ratio == 0.0
    assert w.quality_guarantee_holds


def test_threshold_witness_flips_above_threshold():
    w = demo_no_approximation(0.2, 0.6, 10.0, challenger_value=10.5)
    assert w.winner_index == 1


@pytest.mark.parametrize("alpha, beta, vmax", [(0.1, 0.3, 5.0), (0.0, 0.5, 1.0), (0.4, 0.9, 100.0)])
def test_threshold_witness_family(alpha, beta, vmax):
    w = demo_no_approximation(alpha, beta, vmax)
    assert w.quoted_bound == pytest.approx((1 - alpha) / (beta - alpha) * vmax, rel=1e-12)
    assert w.value_threshold == pytest.approx((1 - beta) / (beta - alpha) * vmax, rel=1e-12)
    assert w.winner_index == 0
    assert w.quality_guarantee_holds


def test_report_serializes():
    rep = check_ic_single_slot([SingleSlotBid(1.0, 0.5), SingleSlotBid(0.5, 0.5)], square_g(), 11)[0]
    d = rep.to_dict()
    assert set(d) == {"bidder", "truthful_utility", "best_deviation_utility", "best_deviation", "gap", "grid",
                      "verdict"}
    assert np.isfinite(d["gap"])
