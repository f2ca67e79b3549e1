"""Truthful scoring-rule auctions for deals platforms and beyond."""

from .errors import GuardExceeded, InvalidInstance, MechanismError, NotConvexError, SimplexError
from .general import (
    GeneralInstance,
    GeneralResult,
    OutcomeBid,
    bidder_expected_utility,
    component_slice,
    run_general,
    select_outcome,
)
from .scoring import (
    BinaryScoringRule,
    ConvexFn,
    SimplexConvexFn,
    SimplexScoringRule,
    expected_score,
    make_binary_rule,
    make_simplex_rule,
    subgrad_of_pointwise_max,
)
from .single_slot import SingleSlotBid, SingleSlotResult, realize_purchase, run_auction
from .welfare import (
    WelfareFamily,
    catalog_entry,
    concave_counterexample_g,
    linear_g,
    linear_welfare,
    product_form_g,
    separable_welfare,
    square_g,
    threshold_g,
    zero_welfare,
)

__version__ = "0.1.0"
