import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dealmech.errors import InvalidInstance, NotConvexError
from dealmech.single_slot import (
    SingleSlotBid,
    expected_winner_utility,
    realize_purchase,
    realize_purchases,
    run_auction,
)
from dealmech.welfare import WelfareFamily, concave_counterexample_g, linear_g, square_g, threshold_g

ZERO = linear_g(0.0)


def bids(*pairs):
    return [SingleSlotBid(v, p) for v, p in pairs]


def test_linear_worked_example():
    res = run_auction(bids((1.0, 0.2), (0.5, 0.9)), linear_g(1.0))
    assert res.winner_index == 1
    assert res.adjusted_values == pytest.approx((1.2, 1.4))
    # second adjusted 1.2 minus the linear score (1 on purchase, 0 otherwise)
    assert res.payment_if_purchase == pytest.approx(0.2, abs=1e-12)
    assert res.payment_if_no_purchase == pytest.approx(1.2, abs=1e-12)
    assert res.payment(0, 1) == 0.0 and res.payment(0, 0) == 0.0


def test_square_worked_example():
    res = run_auction(bids((2.0, 0.5), (1.0, 1.0)), square_g())
    # h = 2.25 and 2.0
    assert res.winner_index == 0
    assert res.payment_if_purchase == pytest.approx(2.0 - 0.75)
    assert res.payment_if_no_purchase == pytest.approx(2.0 + 0.25)
    assert res.expected_payment(0.5) == pytest.approx(2.0 - 0.25)


def test_zero_welfare_is_second_price():
    res = run_auction(bids((3.0, 0.1), (5.0, 0.7), (4.0, 0.4)), ZERO)
    assert res.winner_index == 1
    assert res.payment_if_purchase == res.payment_if_no_purchase == 4.0


def test_ties_go_to_lowest_index():
    res = run_auction(bids((1.0, 0.5), (1.0, 0.5), (0.5, 0.5)), linear_g(1.0))
    assert res.winner_index == 0
    assert res.second_adjusted == pytest.approx(1.5)


def test_single_bidder_pays_minus_score():
    res = run_auction(bids((2.0, 0.4)), square_g())
    assert res.second_adjusted == 0.0
    assert res.payment_if_purchase == pytest.approx(-(2 * 0.4 - 0.16))
    assert res.payment_if_no_purchase == pytest.approx(0.16)
    # truthful utility is v + g(p)
    assert expected_winner_utility(bids((2.0, 0.4)), SingleSlotBid(2.0, 0.4), square_g()) == pytest.approx(2.16)


def test_threshold_anchor():
    g = threshold_g(0.2, 0.6, 10.0)
    res = run_auction(bids((0.0, 1.0), (9.0, 0.6)), g)
    assert res.winner_index == 0
    assert res.adjusted_values == pytest.approx((20.0, 19.0), abs=1e-12)


def test_invalid_bids():
    with pytest.raises(InvalidInstance) as err:
        SingleSlotBid(1.0, 1.2)
    assert err.value.field == "quality"
    with pytest.raises(InvalidInstance):
        SingleSlotBid(float("nan"), 0.5)
    with pytest.raises(InvalidInstance):
        run_auction([], square_g())


def test_rejects_wrong_input_type():
    with pytest.raises(TypeError):
        run_auction(bids((1.0, 0.5)), WelfareFamily("zero"))


def test_concave_requires_opt_in():
    with pytest.raises(NotConvexError):
        run_auction(bids((1.0, 0.5)), concave_counterexample_g())
    run_auction(bids((1.0, 0.5)), concave_counterexample_g(), allow_nonconvex=True)


def test_realize_purchase_edges():
    for seed in range(20):
        assert realize_purchase(0.0, seed) == 0
        assert realize_purchase(1.0, seed) == 1


def test_realize_purchase_frequency_regression():
    draws = realize_purchases(0.3, 7, 1_000_000)
    assert int(draws.sum()) == 300359
    assert abs(draws.mean() - 0.3) < 5 * np.sqrt(0.21 / 1e6)
    assert realize_purchase(0.3, 7) == int(draws[0])


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 1)), min_size=1, max_size=6),
       st.sampled_from(["linear", "square", "threshold"]))
def test_winner_matches_brute_force(pairs, name):
    g = {"linear": linear_g(1.0), "square": square_g(), "threshold": threshold_g(0.2, 0.6, 10.0)}[name]
    res = run_auction(bids(*pairs), g)
    best = 0
    for k, (v, p) in enumerate(pairs):
        if v + float(g(p)) > pairs[best][0] + float(g(pairs[best][1])):
            best = k
    assert res.winner_index == best
    assert expected_winner_utility(bids(*pairs), bids(pairs[best])[0], g) >= -1e-12
