"""Grid-based incentive-compatibility and individual-rationality checks.

Every utility here is an exact expectation over the finite states, so a
gap above 1e-9 is a real profitable misreport rather than sampling noise.
A clean scan only says that no grid deviation helps: verdicts read
``IC_holds (grid)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import GuardExceeded
from .general import (
    GeneralInstance,
    OutcomeBid,
    counterfactual_value,
    others_value,
    run_general,
    scoring_rule,
)
from .scoring import ConvexFn, make_binary_rule, simplex_grid
from .single_slot import SingleSlotBid, adjusted_values, run_auction
from .welfare import threshold_g

IC_TOL = 1e-9
IR_TOL = 1e-12
IC_HOLDS = "IC_holds (grid)"
IC_VIOLATED = "IC_violated"
MAX_DEVIATIONS = 200_000


@dataclass(frozen=True)
class DeviationReport:
    bidder: int
    truthful_utility: float
    best_deviation_utility: float
    best_deviation: object
    gap: float
    grid: tuple[int, int]
    verdict: str

    def to_dict(self) -> dict:
        return asdict(self)


def _verdict(gap: float) -> str:
    return IC_VIOLATED if gap > IC_TOL else IC_HOLDS


def _grid_with(points: np.ndarray, x: float) -> np.ndarray:
    return np.unique(np.append(points, x))


# ---------------------------------------------------------------------------
# Single slot


def _single_slot_utilities(h_others_before, h_others_after, true_bid, values, qualities, g, rule):
    """Utility of every ``(value, quality)`` report for a bidder with ``true_bid``.

    ``h_others_before``/``after`` are adjusted values of lower/higher-index
    bidders; ties go to the lower index, as in :func:`run_auction`.
    """
    before = max(h_others_before, default=-np.inf)
    after = max(h_others_after, default=-np.inf)
    others = [*h_others_before, *h_others_after]
    second = max(others) if others else 0.0
    h = values[:, None] + np.asarray(g.eval(qualities), dtype=float)[None, :]
    wins = (h > before) & (h >= after)
    score = np.asarray(rule.expected(qualities, true_bid.quality), dtype=float)
    util = true_bid.value - second + score[None, :]
    return np.where(wins, util, 0.0)


def check_ic_single_slot(
    bids: Sequence[SingleSlotBid],
    g: ConvexFn,
    grid_resolution: int = 101,
    *,
    allow_nonconvex: bool = False,
) -> list[DeviationReport]:
    """Scan value x quality misreports for every bidder, others truthful.

    Values span the instance's range padded by ``1 + range(g) + 10%`` so that
    both winning and losing reports are covered; the truthful point is
    always on the grid.
    """
    if grid_resolution < 11:
        raise ValueError("grid_resolution must be at least 11")
    rule = make_binary_rule(g, allow_nonconvex=allow_nonconvex)
    qgrid = np.linspace(0.0, 1.0, grid_resolution)
    gvals = np.asarray(g.eval(qgrid), dtype=float)
    vs = [b.value for b in bids]
    pad = 1.0 + float(gvals.max() - gvals.min()) + 0.1 * (max(vs) - min(vs))
    vgrid = np.linspace(min(vs) - pad, max(vs) + pad, grid_resolution)
    h = adjusted_values(bids, g)

    reports = []
    for i, truth in enumerate(bids):
        values = _grid_with(vgrid, truth.value)
        qualities = _grid_with(qgrid, truth.quality)
        util = _single_slot_utilities(list(h[:i]), list(h[i + 1:]), truth, values, qualities, g, rule)
        vi = int(np.searchsorted(values, truth.value))
        qi = int(np.searchsorted(qualities, truth.quality))
        truthful = float(util[vi, qi])
        k = int(np.argmax(util))
        a, b = divmod(k, util.shape[1])
        best = float(util[a, b])
        gap = best - truthful
        reports.append(DeviationReport(
            bidder=i,
            truthful_utility=truthful,
            best_deviation_utility=best,
            best_deviation=(float(values[a]), float(qualities[b])),
            gap=gap,
            grid=(len(values), len(qualities)),
            verdict=_verdict(gap),
        ))
    return reports


def single_slot_truthful_utilities(bids: Sequence[SingleSlotBid], g: ConvexFn, *, allow_nonconvex=False) -> list[float]:
    result = run_auction(bids, g, allow_nonconvex=allow_nonconvex)
    out = [0.0] * len(bids)
    w = result.winner_index
    out[w] = bids[w].value - result.expected_payment(bids[w].quality)
    return out


# ---------------------------------------------------------------------------
# General mechanism


class _BidderTable:
    """Per-outcome pieces needed to score any report of bidder ``i`` exactly.

    Objectives of the truthful report are computed once; a candidate only
    recomputes the outcomes where its bid differs. Scoring rules are built
    (and verified) on first use, as :func:`run_general` does for the chosen
    outcome.
    """

    def __init__(self, instance: GeneralInstance, i: int, *, verify: bool):
        self.instance, self.i, self.verify = instance, i, verify
        self.w_minus, _ = counterfactual_value(instance, i)
        self.order = sorted(instance.outcomes)
        self.index = {o: k for k, o in enumerate(self.order)}
        self.others = {o: others_value(instance, o, i) for o in self.order}
        self.preds = {o: instance.predictions_at(o) for o in self.order}
        self._welfare = {o: {} for o in self.order}
        self._rules = {}
        self.truth = instance.bids[i]
        self.base = np.array([self.objective(o, self.truth[o]) for o in self.order])

    def welfare(self, o: str, prediction) -> float:
        cache = self._welfare[o]
        if prediction not in cache:
            preds = list(self.preds[o])
            preds[self.i] = np.asarray(prediction)
            cache[prediction] = self.instance.welfare[o].evaluate(preds)
        return cache[prediction]

    def objective(self, o: str, bid: OutcomeBid) -> float:
        return self.others[o] + bid.value + self.welfare(o, bid.prediction)

    def rule(self, o: str):
        if o not in self._rules:
            self._rules[o] = scoring_rule(self.instance, o, self.i, verify=self.verify)
        return self._rules[o]

    def utility(self, report: Mapping[str, OutcomeBid]) -> float:
        values = self.base.copy()
        for o, bid in report.items():
            if bid is not self.truth[o]:
                values[self.index[o]] = self.objective(o, bid)
        # first maximum in sorted order = smallest id on ties
        o = self.order[int(np.argmax(values))]
        t = self.truth[o]
        exp_score = float(np.asarray(t.prediction) @ self.rule(o).scores(report[o].prediction))
        return t.value - self.w_minus + self.others[o] + exp_score


def general_deviation_grid(
    instance: GeneralInstance, i: int, grid_resolution: int = 5, max_deviations: int = MAX_DEVIATIONS,
) -> list[dict[str, OutcomeBid]]:
    """Product over outcomes of (value grid) x (simplex grid) reports.

    Each outcome's value grid spans the reported values padded by one unit
    plus the welfare range and includes bidder ``i``'s own value; each
    simplex grid includes its own prediction.
    """
    all_values = [b.value for per in instance.bids for b in per.values()]
    wvals = [instance.welfare[o].evaluate(instance.predictions_at(o)) for o in instance.outcomes]
    pad = 1.0 + (max(wvals) - min(wvals)) + (max(all_values) - min(all_values))
    base = np.linspace(min(all_values) - pad, max(all_values) + pad, grid_resolution)
    per_outcome = []
    size = 1
    for o in instance.outcomes:
        own = instance.bids[i][o]
        values = _grid_with(base, own.value)
        preds = [tuple(p) for p in simplex_grid(len(own.states), grid_resolution)]
        if tuple(own.prediction) not in preds:
            preds.append(tuple(own.prediction))
        options = [OutcomeBid(v, own.states, p) for v in values for p in preds]
        size *= len(options)
        if size > max_deviations:
            raise GuardExceeded(f"deviation grid for bidder {i} exceeds {max_deviations} reports")
        per_outcome.append(options)
    out = [{}]
    for o, options in zip(instance.outcomes, per_outcome):
        out = [{**d, o: b} for d in out for b in options]
    return out


def check_ic_general(
    instance: GeneralInstance,
    grid_resolution: int = 5,
    *,
    deviations: Mapping[int, Iterable[Mapping[str, OutcomeBid]]] | None = None,
    bidders: Sequence[int] | None = None,
    max_deviations: int = MAX_DEVIATIONS,
    verify: bool = True,
) -> list[DeviationReport]:
    """Search misreports of each bidder, others fixed at their reports.

    ``deviations`` supplies custom report lists per bidder (partial maps are
    merged over the truthful report); otherwise the full product grid from
    :func:`general_deviation_grid` is used. ``verify=False`` forces the
    scoring construction through non-convex welfare for negative demos.
    """
    reports = []
    for i in (range(instance.n_bidders) if bidders is None else bidders):
        table = _BidderTable(instance, i, verify=verify)
        truth = table.truth
        truthful = table.utility(truth)
        if deviations is not None and i in deviations:
            candidates = [{**truth, **d} for d in deviations[i]]
            if len(candidates) > max_deviations:
                raise GuardExceeded(f"{len(candidates)} deviations for bidder {i} exceed {max_deviations}")
        else:
            candidates = general_deviation_grid(instance, i, grid_resolution, max_deviations)
        best, best_report = truthful, truth
        for cand in candidates:
            u = table.utility(cand)
            if u > best:
                best, best_report = u, cand
        gap = best - truthful
        reports.append(DeviationReport(
            bidder=i,
            truthful_utility=truthful,
            best_deviation_utility=best,
            best_deviation={o: {"value": b.value, "prediction": list(b.prediction)} for o, b in best_report.items()},
            gap=gap,
            grid=(grid_resolution, len(candidates)),
            verdict=_verdict(gap),
        ))
    return reports


def general_truthful_utilities(instance: GeneralInstance, *, verify: bool = True) -> list[float]:
    """Expected utility of each bidder when everyone reports truthfully."""
    result = run_general(instance, verify=verify)
    o = result.chosen_outcome
    out = []
    for i in range(instance.n_bidders):
        bid = instance.bids[i][o]
        out.append(bid.value - float(np.asarray(bid.prediction) @ result.transfer_vector(i, bid.states)))
    return out


def check_ir(instance, g: ConvexFn | None = None) -> list[bool]:
    """Truthful expected utility >= -1e-12, per bidder.

    ``instance`` is either a list of single-slot bids (then ``g`` is
    required) or a :class:`GeneralInstance`.
    """
    if isinstance(instance, GeneralInstance):
        utils = general_truthful_utilities(instance)
    else:
        if g is None:
            raise ValueError("single-slot IR needs a welfare function g")
        utils = single_slot_truthful_utilities(instance, g)
    return [u >= -IR_TOL for u in utils]


# ---------------------------------------------------------------------------
# Threshold demonstration


@dataclass(frozen=True)
class ThresholdWitness:
    alpha: float
    beta: float
    v_max: float
    bids: tuple[SingleSlotBid, ...]
    adjusted_values: tuple[float, ...]
    winner_index: int
    winner: SingleSlotBid
    quoted_bound: float
    value_threshold: float
    approximation_ratio: float
    quality_guarantee_holds: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bids"] = [asdict(b) for b in self.bids]
        d["winner"] = asdict(self.winner)
        return d


def demo_no_approximation(alpha: float, beta: float, v_max: float, challenger_value: float | None = None) -> ThresholdWitness:
    """Run the threshold-``g`` auction on ``[(0, 1), (challenger_value, beta)]``.

    ``quoted_bound`` is ``(1 - alpha)/(beta - alpha) * v_max``, the adjusted
    value of the perfect-quality, zero-value bidder. The challenger loses
    exactly when ``challenger_value < value_threshold`` where
    ``value_threshold = quoted_bound - v_max``; by default it bids just
    below ``min(value_threshold, v_max)``, so the zero-value bidder wins and
    the ratio ``winner value / best value among quality >= beta`` is 0.
    """
    g = threshold_g(alpha, beta, v_max)
    quoted = (1.0 - alpha) / (beta - alpha) * v_max
    threshold = quoted - v_max
    if challenger_value is None:
        challenger_value = max(0.0, min(threshold, v_max) - 1e-9 * max(1.0, v_max))
    bids = (SingleSlotBid(0.0, 1.0), SingleSlotBid(challenger_value, beta))
    result = run_auction(bids, g)
    winner = bids[result.winner_index]
    best_high_quality = max(b.value for b in bids if b.quality >= beta)
    ratio = winner.value / best_high_quality if best_high_quality > 0 else float("nan")
    return ThresholdWitness(
        alpha=alpha,
        beta=beta,
        v_max=v_max,
        bids=bids,
        adjusted_values=result.adjusted_values,
        winner_index=result.winner_index,
        winner=winner,
        quoted_bound=quoted,
        value_threshold=threshold,
        approximation_ratio=ratio,
        quality_guarantee_holds=winner.quality >= alpha,
    )


# ---------------------------------------------------------------------------
# Sampling


@dataclass(frozen=True)
class InstanceSampler:
    """Seeded stream of random instances.

    ``kind="single_slot"`` yields lists of :class:`SingleSlotBid` with
    uniform values and qualities. ``kind="general"`` yields
    :class:`GeneralInstance` values with uniform values, Dirichlet(1)
    predictions and ``welfare`` in ``{"zero", "linear", "product"}``.
    """

    seed: int = 42
    kind: str = "single_slot"
    bidders: tuple[int, int] = (2, 6)
    value_range: tuple[float, float] = (0.0, 10.0)
    quality_range: tuple[float, float] = (0.0, 1.0)
    outcomes: tuple[int, int] = (1, 3)
    states: tuple[int, int] = (1, 3)
    welfare: str = "zero"


def sample_instances(sampler: InstanceSampler, n: int) -> Iterator:
    rng = np.random.default_rng(sampler.seed)
    for _ in range(n):
        if sampler.kind == "single_slot":
            yield _sample_single_slot(rng, sampler)
        elif sampler.kind == "general":
            yield _sample_general(rng, sampler)
        else:
            raise ValueError(f"unknown sampler kind {sampler.kind!r}")


def _sample_single_slot(rng, s: InstanceSampler) -> list[SingleSlotBid]:
    m = int(rng.integers(s.bidders[0], s.bidders[1] + 1))
    values = rng.uniform(*s.value_range, size=m)
    qualities = rng.uniform(*s.quality_range, size=m)
    return [SingleSlotBid(float(v), float(q)) for v, q in zip(values, qualities)]


def _sample_general(rng, s: InstanceSampler) -> GeneralInstance:
    from .welfare import linear_welfare, product_form_g, zero_welfare

    m = int(rng.integers(s.bidders[0], s.bidders[1] + 1))
    k = int(rng.integers(s.outcomes[0], s.outcomes[1] + 1))
    outcomes = tuple(f"o{j}" for j in range(k))
    bids = [{} for _ in range(m)]
    welfare = {}
    for o in outcomes:
        for i in range(m):
            n_states = 2 if s.welfare == "product" else int(rng.integers(s.states[0], s.states[1] + 1))
            states = tuple(f"s{t}" for t in range(n_states))
            pred = rng.dirichlet(np.ones(n_states))
            pred[-1] = 1.0 - pred[:-1].sum()
            bids[i][o] = OutcomeBid(float(rng.uniform(*s.value_range)), states, tuple(float(x) for x in pred))
        if s.welfare == "zero":
            welfare[o] = zero_welfare()
        elif s.welfare == "linear":
            welfare[o] = linear_welfare(
                {i: rng.uniform(0.0, 5.0, size=len(bids[i][o].states)).tolist() for i in range(m)}
            )
        elif s.welfare == "product" and m >= 2:
            welfare[o] = product_form_g((0, 1))
        else:
            welfare[o] = zero_welfare()
    return GeneralInstance(outcomes, tuple(bids), welfare)


def instance_fingerprint(instances: Iterable) -> str:
    """SHA-256 of a canonical JSON rendering of a stream of instances."""
    from .io import dump_instance

    h = hashlib.sha256()
    for inst in instances:
        h.update(json.dumps(dump_instance(inst), sort_keys=True).encode())
        h.update(b"\n")
    return h.hexdigest()
