"""VCG with scoring rules over a finite outcome space.

Bidder ``i`` reports, for every outcome ``o``, a value ``v_i(o)`` and a
prediction ``p_i(o)`` over the finite states ``Omega_{i,o}`` that will be
observed if ``o`` is chosen. The mechanism picks the outcome maximizing

    W^o = sum_i v_i(o) + g_o(p_1(o), ..., p_m(o))

and, once bidder ``i``'s state ``w`` is observed, charges it

    W_{-i} - sum_{j != i} v_j(o*) - S_{o*,i}(p_i(o*), w)

where ``S_{o*,i}`` is the Savage rule of ``g_{o*}`` viewed as a function
of ``p_i`` alone, with everyone else's predictions held fixed.

``W_{-i}`` is the best objective without bidder ``i``: its values are
dropped, outcomes listed in ``requires[i]`` become unavailable, and its
component of ``g_o`` is replaced by the welfare family's baseline
(uniform unless declared). With no other bidders left it is 0. If every
outcome requires ``i`` the exclusion is ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidInstance, NotConvexError
from .scoring import (
    SUBGRAD_TOL,
    SimplexConvexFn,
    SimplexScoringRule,
    check_simplex,
    finite_difference_gradient,
    simplex_subgradient_violation,
)
from .welfare import WelfareFamily

SINGLETON = ("none",)
FD_STEP = 1e-6
FD_TOL = 1e-7
SLICE_RESOLUTION = 11


@dataclass(frozen=True)
class OutcomeBid:
    """A bidder's report at one outcome. Defaults describe a bystander."""

    value: float = 0.0
    states: tuple[str, ...] = SINGLETON
    prediction: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        object.__setattr__(self, "prediction", tuple(float(x) for x in self.prediction))
        if not np.isfinite(self.value):
            raise InvalidInstance(f"non-finite value {self.value!r}", "value")
        if len(set(self.states)) != len(self.states) or not self.states:
            raise InvalidInstance(f"states must be distinct and non-empty, got {self.states}", "states")
        try:
            check_simplex(self.prediction, len(self.states))
        except ValueError as exc:
            raise InvalidInstance(str(exc), "prediction") from None


@dataclass(frozen=True)
class GeneralInstance:
    """Reported bids ``bids[i][o]`` plus the welfare family of each outcome."""

    outcomes: tuple[str, ...]
    bids: tuple[Mapping[str, OutcomeBid], ...]
    welfare: Mapping[str, WelfareFamily]
    requires: Mapping[int, frozenset] = field(default_factory=dict)

    def __post_init__(self):
        outcomes = tuple(str(o) for o in self.outcomes)
        object.__setattr__(self, "outcomes", outcomes)
        if not outcomes:
            raise InvalidInstance("outcome set is empty", "outcomes")
        if len(set(outcomes)) != len(outcomes):
            raise InvalidInstance("duplicate outcome ids", "outcomes")
        if not self.bids:
            raise InvalidInstance("need at least one bidder", "bidders")
        bids = []
        for i, per in enumerate(self.bids):
            unknown = set(per) - set(outcomes)
            if unknown:
                raise InvalidInstance(f"unknown outcome(s) {sorted(unknown)}", f"bidders.{i}")
            bids.append({o: per.get(o, OutcomeBid()) for o in outcomes})
        object.__setattr__(self, "bids", tuple(bids))
        missing = [o for o in outcomes if o not in self.welfare]
        if missing:
            raise InvalidInstance(f"no welfare function for outcome(s) {missing}", "welfare")
        object.__setattr__(self, "welfare", {o: self.welfare[o] for o in outcomes})
        req = {}
        for i, outs in self.requires.items():
            i = int(i)
            if not 0 <= i < len(bids):
                raise InvalidInstance(f"unknown bidder {i}", "requires")
            outs = frozenset(str(o) for o in outs)
            if outs - set(outcomes):
                raise InvalidInstance(f"unknown outcome(s) {sorted(outs - set(outcomes))}", f"requires.{i}")
            if outs:
                req[i] = outs
        object.__setattr__(self, "requires", req)

    @property
    def n_bidders(self) -> int:
        return len(self.bids)

    def predictions_at(self, o: str) -> list[np.ndarray]:
        return [np.asarray(self.bids[i][o].prediction) for i in range(self.n_bidders)]

    def with_bid(self, i: int, bid: Mapping[str, OutcomeBid]) -> "GeneralInstance":
        """Copy with bidder ``i``'s report replaced (state sets must be kept)."""
        bids = list(self.bids)
        merged = dict(bids[i])
        for o, b in bid.items():
            if b.states != merged[o].states:
                raise InvalidInstance(f"state set of bidder {i} at {o} cannot change", f"bidders.{i}.{o}")
            merged[o] = b
        bids[i] = merged
        return replace(self, bids=tuple(bids))


@dataclass(frozen=True)
class GeneralResult:
    chosen_outcome: str
    objective_value: float
    objectives: dict[str, float]
    counterfactuals: dict[int, float]
    counterfactual_rule: dict[int, str]
    transfers: dict[tuple[int, str], float]
    realized_states: dict[int, str] | None = None
    realized_payments: dict[int, float] | None = None

    def transfer_vector(self, i: int, states: Sequence[str]) -> np.ndarray:
        return np.array([self.transfers[(i, s)] for s in states])


def objective(instance: GeneralInstance, o: str) -> float:
    """``W^o`` under the reported bids."""
    total = sum(instance.bids[i][o].value for i in range(instance.n_bidders))
    return total + instance.welfare[o].evaluate(instance.predictions_at(o))


def _argmax_outcome(values: Mapping[str, float]) -> str:
    best = None
    for o in sorted(values):
        if best is None or values[o] > values[best]:
            best = o
    return best


def select_outcome(instance: GeneralInstance) -> str:
    """Outcome with the largest ``W^o``; exact ties go to the smallest id."""
    return _argmax_outcome({o: objective(instance, o) for o in instance.outcomes})


def counterfactual_value(instance: GeneralInstance, i: int) -> tuple[float, str]:
    """``(W_{-i}, rule)`` where ``rule`` names how the removal was resolved."""
    if instance.n_bidders == 1:
        return 0.0, "empty"
    excluded = instance.requires.get(i, frozenset())
    candidates = [o for o in instance.outcomes if o not in excluded]
    rule = "excluded" if excluded else "baseline"
    if not candidates:
        candidates = list(instance.outcomes)
        rule = "baseline_fallback"
    values = {}
    for o in candidates:
        preds = instance.predictions_at(o)
        preds[i] = instance.welfare[o].baseline(i, len(preds[i]))
        others = sum(instance.bids[j][o].value for j in range(instance.n_bidders) if j != i)
        values[o] = others + instance.welfare[o].evaluate(preds)
    return values[_argmax_outcome(values)], rule


def component_slice(
    welfare: WelfareFamily,
    preds: Sequence[np.ndarray],
    i: int,
    *,
    verify: bool = True,
    resolution: int = SLICE_RESOLUTION,
) -> SimplexConvexFn:
    """``q -> g_o(q, others)`` as a function of bidder ``i``'s prediction.

    Uses the family's analytic gradient when it has one and central finite
    differences otherwise. With ``verify`` the slice must pass the simplex
    grid subgradient test or :class:`NotConvexError` is raised.
    """
    base = [np.asarray(p, dtype=float) for p in preds]
    n = len(base[i])

    def with_q(q):
        out = list(base)
        out[i] = np.asarray(q, dtype=float)
        return out

    def ev(q):
        return welfare.evaluate(with_q(q))

    analytic = welfare.grad is not None

    def sg(q):
        if analytic:
            return welfare.gradient(with_q(q), i)
        return finite_difference_gradient(ev, q, FD_STEP)

    fn = SimplexConvexFn(n, ev, sg, name=f"{welfare.type}[bidder {i}]")
    if verify and n > 1:
        violation, p, q = simplex_subgradient_violation(fn, resolution)
        scale = 1.0 + max(abs(ev(x)) for x in (p, q))
        tol = SUBGRAD_TOL * scale if analytic else FD_TOL * scale
        if violation > tol:
            raise NotConvexError(
                f"welfare {welfare.type!r} is not component-wise convex in bidder {i}: "
                f"tangent at {np.round(p, 6).tolist()} exceeds value at {np.round(q, 6).tolist()} by {violation:.3g}",
                witness=(p, q, violation),
            )
    return fn


def scoring_rule(instance: GeneralInstance, o: str, i: int, *, verify: bool = True) -> SimplexScoringRule:
    """Savage rule for bidder ``i`` at outcome ``o`` given the others' reports."""
    fn = component_slice(instance.welfare[o], instance.predictions_at(o), i, verify=verify)
    return SimplexScoringRule(fn)


def others_value(instance: GeneralInstance, o: str, i: int) -> float:
    return sum(instance.bids[j][o].value for j in range(instance.n_bidders) if j != i)


def run_general(
    instance: GeneralInstance,
    realized_states: Mapping[int, str] | None = None,
    *,
    verify: bool = True,
) -> GeneralResult:
    """Choose the outcome and compute every bidder's state-contingent payment.

    ``transfers[(i, w)]`` is what bidder ``i`` owes if its state is ``w``;
    negative amounts are paid to it. Passing ``realized_states`` also fills
    ``realized_payments``.
    """
    objectives = {o: objective(instance, o) for o in instance.outcomes}
    chosen = _argmax_outcome(objectives)
    counterfactuals, rules, transfers = {}, {}, {}
    for i in range(instance.n_bidders):
        w_minus, rule_name = counterfactual_value(instance, i)
        counterfactuals[i] = w_minus
        rules[i] = rule_name
        bid = instance.bids[i][chosen]
        scores = scoring_rule(instance, chosen, i, verify=verify).scores(bid.prediction)
        base = w_minus - others_value(instance, chosen, i)
        for state, s in zip(bid.states, scores):
            transfers[(i, state)] = base - float(s)

    realized_payments = None
    if realized_states is not None:
        realized_payments = {}
        for i in range(instance.n_bidders):
            if i not in realized_states:
                raise InvalidInstance(f"no realized state for bidder {i}", "realized_states")
            w = str(realized_states[i])
            if (i, w) not in transfers:
                raise InvalidInstance(
                    f"state {w!r} not in {list(instance.bids[i][chosen].states)} for outcome {chosen!r}",
                    f"realized_states.{i}",
                )
            realized_payments[i] = transfers[(i, w)]
        realized_states = {i: str(realized_states[i]) for i in range(instance.n_bidders)}

    return GeneralResult(
        chosen_outcome=chosen,
        objective_value=objectives[chosen],
        objectives=objectives,
        counterfactuals=counterfactuals,
        counterfactual_rule=rules,
        transfers=transfers,
        realized_states=realized_states,
        realized_payments=realized_payments,
    )


def bidder_expected_utility(
    instance: GeneralInstance,
    i: int,
    report_override: Mapping[str, OutcomeBid] | None = None,
    true_type: Mapping[str, OutcomeBid] | None = None,
    *,
    verify: bool = True,
) -> float:
    """Exact expected utility of bidder ``i``.

    ``instance`` holds everyone's reports; ``report_override`` replaces
    bidder ``i``'s report and ``true_type`` (default: its report in
    ``instance``) supplies its real values and predictions.
    """
    truth = dict(instance.bids[i])
    if true_type is not None:
        truth.update(true_type)
    reported = instance.with_bid(i, report_override) if report_override else instance
    result = run_general(reported, verify=verify)
    o = result.chosen_outcome
    t = truth[o]
    pay = result.transfer_vector(i, reported.bids[i][o].states)
    return t.value - float(np.asarray(t.prediction) @ pay)


def realize_states(instance: GeneralInstance, outcome: str, seed: int) -> dict[int, str]:
    """Draw each bidder's state independently from its reported prediction.

    Bidders are drawn in index order from one PCG64 stream seeded by ``seed``.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for i in range(instance.n_bidders):
        bid = instance.bids[i][outcome]
        u = rng.random()
        cdf = np.cumsum(bid.prediction)
        k = min(int(np.searchsorted(cdf, u, side="right")), len(bid.states) - 1)
        out[i] = bid.states[k]
    return out
