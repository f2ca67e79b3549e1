"""Single-slot deals auction.

Each merchant reports a value ``v`` (total expected value of being shown)
and a quality ``p`` (purchase probability). The auction shows the merchant
with the largest adjusted value ``h = v + g(p)`` and charges it
``h_second - S_g(p_winner, w)`` once the purchase outcome ``w`` is known,
where ``S_g`` is the tangent scoring rule of ``g``. Everyone else pays 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInstance
from .scoring import ConvexFn, check_probability, make_binary_rule


@dataclass(frozen=True)
class SingleSlotBid:
    value: float
    quality: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise InvalidInstance(f"value must be finite, got {self.value!r}", "value")
        try:
            q = check_probability(self.quality)
        except ValueError as exc:
            raise InvalidInstance(str(exc), "quality") from None
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "quality", q)


@dataclass(frozen=True)
class SingleSlotResult:
    winner_index: int
    payment_if_purchase: float
    payment_if_no_purchase: float
    adjusted_values: tuple[float, ...]
    second_adjusted: float

    def payment(self, bidder: int, omega: int) -> float:
        """Amount ``bidder`` owes when the purchase state is ``omega``."""
        if bidder != self.winner_index:
            return 0.0
        return self.payment_if_purchase if omega == 1 else self.payment_if_no_purchase

    def expected_payment(self, quality: float) -> float:
        return quality * self.payment_if_purchase + (1.0 - quality) * self.payment_if_no_purchase


def adjusted_values(bids: Sequence[SingleSlotBid], g: ConvexFn) -> np.ndarray:
    return np.array([b.value + float(g.eval(b.quality)) for b in bids])


def run_auction(bids: Sequence[SingleSlotBid], g: ConvexFn, *, allow_nonconvex: bool = False) -> SingleSlotResult:
    """Pick the highest adjusted value (lowest index on ties) and price it.

    With one bidder the second adjusted value is taken to be 0.
    """
    if len(bids) == 0:
        raise InvalidInstance("need at least one bid", "bids")
    rule = make_binary_rule(g, allow_nonconvex=allow_nonconvex)
    h = adjusted_values(bids, g)
    winner = int(np.argmax(h))
    others = np.delete(h, winner)
    second = float(others.max()) if others.size else 0.0
    p = bids[winner].quality
    return SingleSlotResult(
        winner_index=winner,
        payment_if_purchase=second - float(rule.score(p, 1)),
        payment_if_no_purchase=second - float(rule.score(p, 0)),
        adjusted_values=tuple(float(x) for x in h),
        second_adjusted=second,
    )


def realize_purchases(true_quality: float, rng_seed: int, n: int) -> np.ndarray:
    """``n`` purchase draws (0/1) from numpy's PCG64 stream seeded by ``rng_seed``."""
    q = check_probability(true_quality)
    rng = np.random.default_rng(rng_seed)
    return (rng.random(n) < q).astype(int)


def realize_purchase(true_quality: float, rng_seed: int) -> int:
    """One seeded purchase draw; the first draw of :func:`realize_purchases`."""
    return int(realize_purchases(true_quality, rng_seed, 1)[0])


def expected_winner_utility(
    bids: Sequence[SingleSlotBid],
    true_type: SingleSlotBid,
    g: ConvexFn,
    bidder: int | None = None,
    *,
    allow_nonconvex: bool = False,
) -> float:
    """Expected utility of ``bidder`` (default: the winner) under ``true_type``.

    ``bids`` are the reports, including this bidder's possibly untruthful
    one. The expectation is over the purchase state drawn with the true
    quality, so it is exact.
    """
    result = run_auction(bids, g, allow_nonconvex=allow_nonconvex)
    if bidder is None:
        bidder = result.winner_index
    if bidder != result.winner_index:
        return 0.0
    return true_type.value - result.expected_payment(true_type.quality)
