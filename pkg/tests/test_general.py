import itertools

import numpy as np
import pytest

from dealmech.errors import InvalidInstance, NotConvexError
from dealmech.general import (
    GeneralInstance,
    OutcomeBid,
    bidder_expected_utility,
    component_slice,
    counterfactual_value,
    realize_states,
    run_general,
    select_outcome,
)
from dealmech.ic_lab import InstanceSampler, sample_instances
from dealmech.welfare import (
    custom_welfare,
    linear_welfare,
    product_form_g,
    separable_welfare,
    square_g,
    zero_welfare,
)

SALE = ("no_sale", "sale")


def worked_example():
    # bidder 0 wants A (value 3, sells w.p. 0.4); bidder 1 wants B (value 2)
    return GeneralInstance(
        ("A", "B"),
        ({"A": OutcomeBid(3.0, SALE, (0.6, 0.4))}, {"B": OutcomeBid(2.0)}),
        {"A": linear_welfare({0: [0.0, 1.0]}), "B": zero_welfare()},
    )


def test_worked_example():
    res = run_general(worked_example())
    assert res.objectives == pytest.approx({"A": 3.4, "B": 2.0})
    assert res.chosen_outcome == "A"
    assert res.counterfactuals[0] == pytest.approx(2.0)
    assert res.counterfactual_rule[0] == "baseline"
    assert res.transfers[(0, "sale")] == pytest.approx(1.0, abs=1e-12)
    assert res.transfers[(0, "no_sale")] == pytest.approx(2.0, abs=1e-12)
    assert res.transfers[(1, "none")] == pytest.approx(0.0, abs=1e-12)
    assert bidder_expected_utility(worked_example(), 0) == pytest.approx(1.4, abs=1e-12)


def test_realized_payments():
    res = run_general(worked_example(), {0: "sale", 1: "none"})
    assert res.realized_payments[0] == pytest.approx(1.0)
    with pytest.raises(InvalidInstance):
        run_general(worked_example(), {0: "refund", 1: "none"})
    with pytest.raises(InvalidInstance):
        run_general(worked_example(), {0: "sale"})


def test_single_bidder_pays_minus_score():
    inst = GeneralInstance(
        ("X",), ({"X": OutcomeBid(1.0, SALE, (0.7, 0.3))},), {"X": separable_welfare("square", [0])})
    res = run_general(inst)
    assert res.counterfactual_rule[0] == "empty"
    # payment is minus the square tangent score at p = 0.3
    assert res.transfers[(0, "sale")] == pytest.approx(-(2 * 0.3 - 0.09))
    assert res.transfers[(0, "no_sale")] == pytest.approx(0.09)
    assert bidder_expected_utility(inst, 0) == pytest.approx(1.0 + 0.09)


def test_ties_pick_smallest_outcome_id():
    inst = GeneralInstance(("b", "a"), ({"a": OutcomeBid(1.0), "b": OutcomeBid(1.0)},),
                           {"a": zero_welfare(), "b": zero_welfare()})
    assert select_outcome(inst) == "a"


def test_requires_excludes_outcomes():
    inst = GeneralInstance(
        ("A", "B"),
        ({"A": OutcomeBid(3.0)}, {"B": OutcomeBid(1.0)}),
        {"A": linear_welfare({}, 5.0), "B": zero_welfare()},
        requires={0: {"A"}},
    )
    assert counterfactual_value(inst, 0) == (1.0, "excluded")
    assert counterfactual_value(inst, 1) == (8.0, "baseline")
    everything = GeneralInstance(inst.outcomes, inst.bids, inst.welfare, requires={0: {"A", "B"}})
    assert counterfactual_value(everything, 0) == (5.0, "baseline_fallback")


def test_baseline_replaces_removed_prediction():
    inst = GeneralInstance(
        ("A", "B"),
        ({"A": OutcomeBid(0.0, SALE, (0.0, 1.0))}, {"B": OutcomeBid(0.2)}),
        {"A": linear_welfare({0: [0.0, 1.0]}), "B": zero_welfare()},
    )
    # uniform baseline gives bidder 0 half the welfare weight at A
    assert counterfactual_value(inst, 0) == (0.5, "baseline")


def test_state_set_is_fixed_by_outcome():
    with pytest.raises(InvalidInstance):
        worked_example().with_bid(0, {"A": OutcomeBid(3.0, ("x", "y"), (0.5, 0.5))})


def test_instance_validation():
    with pytest.raises(InvalidInstance):
        GeneralInstance((), ({},), {})
    with pytest.raises(InvalidInstance):
        GeneralInstance(("A",), ({"Z": OutcomeBid()},), {"A": zero_welfare()})
    with pytest.raises(InvalidInstance):
        GeneralInstance(("A",), ({},), {})
    with pytest.raises(InvalidInstance) as err:
        OutcomeBid(1.0, SALE, (0.5, 0.3))
    assert err.value.field == "prediction"


def test_product_slice_is_linear_with_slope():
    preds = [np.array([0.5, 0.5]), np.array([0.2, 0.8])]
    fn = component_slice(product_form_g(), preds, 0)
    assert fn.subgrad(np.array([0.3, 0.7]))[1] == pytest.approx(0.3)
    assert fn(np.array([0.0, 1.0])) - fn(np.array([1.0, 0.0])) == pytest.approx(0.3)


def test_concave_slice_rejected():
    preds = [np.array([0.5, 0.5])]
    with pytest.raises(NotConvexError):
        component_slice(separable_welfare("concave_demo", [0]), preds, 0)
    component_slice(separable_welfare("concave_demo", [0]), preds, 0, verify=False)


def test_finite_difference_slice():
    g = square_g()
    fam = custom_welfare(lambda preds: float(g(preds[0][1])))
    preds = [np.array([0.4, 0.6])]
    fn = component_slice(fam, preds, 0)
    assert fn.subgrad(np.array([0.4, 0.6]))[1] - fn.subgrad(np.array([0.4, 0.6]))[0] == pytest.approx(1.2, abs=1e-6)
    concave = custom_welfare(lambda preds: -float(g(preds[0][1])))
    with pytest.raises(NotConvexError):
        component_slice(concave, preds, 0)


def brute_force_outcome(inst):
    best, best_val = None, -np.inf
    for o in sorted(inst.outcomes):
        v = sum(inst.bids[i][o].value for i in range(inst.n_bidders))
        v += inst.welfare[o].evaluate([np.asarray(inst.bids[i][o].prediction) for i in range(inst.n_bidders)])
        if v > best_val:
            best, best_val = o, v
    return best


def clarke_pivot(inst):
    """Textbook VCG payments for value-only bids."""
    vals = {o: [inst.bids[i][o].value for i in range(inst.n_bidders)] for o in inst.outcomes}
    chosen = max(sorted(inst.outcomes), key=lambda o: sum(vals[o]))
    pays = []
    for i in range(inst.n_bidders):
        if inst.n_bidders == 1:
            pays.append(0.0)
            continue
        without = max(sum(v for j, v in enumerate(vals[o]) if j != i) for o in inst.outcomes)
        pays.append(without - sum(v for j, v in enumerate(vals[chosen]) if j != i))
    return chosen, pays


@pytest.mark.parametrize("welfare", ["zero", "linear", "product"])
def test_outcome_matches_brute_force(welfare):
    for inst in sample_instances(InstanceSampler(seed=3, kind="general", welfare=welfare), 60):
        assert run_general(inst).chosen_outcome == brute_force_outcome(inst)


def test_zero_welfare_is_clarke_pivot():
    sampler = InstanceSampler(seed=11, kind="general", bidders=(1, 5), welfare="zero")
    for inst in sample_instances(sampler, 100):
        res = run_general(inst)
        chosen, pays = clarke_pivot(inst)
        assert res.chosen_outcome == chosen
        for i, pay in enumerate(pays):
            for s in inst.bids[i][chosen].states:
                assert abs(res.transfers[(i, s)] - pay) <= 1e-12


@pytest.mark.parametrize("welfare", ["linear", "product"])
def test_truthful_utility_is_marginal_contribution(welfare):
    for inst in sample_instances(InstanceSampler(seed=5, kind="general", welfare=welfare), 40):
        res = run_general(inst)
        for i in range(inst.n_bidders):
            expected = res.objective_value - res.counterfactuals[i]
            assert bidder_expected_utility(inst, i) == pytest.approx(expected, abs=1e-9)


def test_realize_states_deterministic_and_consistent():
    inst = worked_example()
    draws = [realize_states(inst, "A", seed)[0] for seed in range(400)]
    assert draws == [realize_states(inst, "A", seed)[0] for seed in range(400)]
    assert 0.3 < draws.count("sale") / 400 < 0.5
    assert all(realize_states(inst, "A", s)[1] == "none" for s in range(10))


def test_misreport_grid_never_beats_truth():
    inst = worked_example()
    truth = bidder_expected_utility(inst, 0)
    for v, p in itertools.product(np.linspace(0, 6, 13), np.linspace(0, 1, 11)):
        report = {"A": OutcomeBid(v, SALE, (1 - p, p))}
        assert bidder_expected_utility(inst, 0, report) <= truth + 1e-12
