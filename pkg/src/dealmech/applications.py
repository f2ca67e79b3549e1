"""Builders that compile concrete procurement and allocation problems into
:class:`~dealmech.general.GeneralInstance` values.

* reliable path procurement, with per-edge failure or delay states;
* principal-agent hiring with effort levels;
* multi-slot deals where quality mixes merchant and platform signals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import GuardExceeded, InvalidInstance
from .general import GeneralInstance, GeneralResult, OutcomeBid, run_general
from .scoring import check_probability, check_simplex
from .welfare import (
    WelfareFamily,
    all_succeed_welfare,
    failure_welfare,
    linear_welfare,
    separable_welfare,
    zero_welfare,
)

FAIL_SUCCEED = ("fail", "succeed")
MAX_OUTCOMES = 10_000


# ---------------------------------------------------------------------------
# Network procurement


@dataclass(frozen=True)
class Edge:
    u: str
    v: str
    owner: str
    cost: float
    failure_prob: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.cost) or self.cost < 0:
            raise InvalidInstance(f"edge cost must be finite and >= 0, got {self.cost!r}", "cost")
        try:
            object.__setattr__(self, "failure_prob", check_probability(self.failure_prob))
        except ValueError as exc:
            raise InvalidInstance(str(exc), "failure_prob") from None
        object.__setattr__(self, "cost", float(self.cost))


@dataclass(frozen=True)
class NetworkProcurementSpec:
    """Edges owned one-per-bidder; bidder ``i`` owns ``edges[i]``."""

    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    source: str
    sink: str
    failure_penalty: float = 0.0
    directed: bool = False

    def __post_init__(self):
        nodes = tuple(str(n) for n in self.nodes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple(self.edges))
        if len(set(nodes)) != len(nodes):
            raise InvalidInstance("duplicate node ids", "nodes")
        for k, e in enumerate(self.edges):
            for end in (e.u, e.v):
                if end not in nodes:
                    raise InvalidInstance(f"unknown node {end!r}", f"edges.{k}")
        owners = [e.owner for e in self.edges]
        if len(set(owners)) != len(owners):
            raise InvalidInstance("each edge needs its own owner", "edges")
        for end in (self.source, self.sink):
            if end not in nodes:
                raise InvalidInstance(f"unknown node {end!r}", "source/sink")
        if self.source == self.sink:
            raise InvalidInstance("source and sink must differ", "sink")
        if not np.isfinite(self.failure_penalty) or self.failure_penalty < 0:
            raise InvalidInstance("failure penalty must be finite and >= 0", "failure_penalty")
        object.__setattr__(self, "failure_penalty", float(self.failure_penalty))


def enumerate_paths(
    nodes: Sequence[str], ends: Sequence[tuple[str, str]], source: str, sink: str,
    directed: bool = False, max_paths: int = MAX_OUTCOMES,
) -> list[tuple[int, ...]]:
    """Simple source-sink paths as tuples of edge indices, depth first.

    Neighbours are expanded in edge-index order, so the result is stable.
    """
    adjacency: dict[str, list[tuple[int, str]]] = {n: [] for n in nodes}
    for k, (u, v) in enumerate(ends):
        adjacency[u].append((k, v))
        if not directed:
            adjacency[v].append((k, u))
    paths: list[tuple[int, ...]] = []
    stack = [(source, (), frozenset([source]))]
    # explicit stack, children pushed in reverse to keep index order
    while stack:
        node, edges, seen = stack.pop()
        if node == sink:
            paths.append(edges)
            if len(paths) > max_paths:
                raise GuardExceeded(f"more than {max_paths} simple paths")
            continue
        for k, nxt in reversed(adjacency[node]):
            if nxt not in seen:
                stack.append((nxt, edges + (k,), seen | {nxt}))
    return paths


def _path_id(owners: Sequence[str], path: Sequence[int]) -> str:
    return ">".join(owners[k] for k in path)


def network_paths(spec: NetworkProcurementSpec, max_paths: int = MAX_OUTCOMES) -> dict[str, tuple[int, ...]]:
    paths = enumerate_paths(
        spec.nodes, [(e.u, e.v) for e in spec.edges], spec.source, spec.sink, spec.directed, max_paths
    )
    if not paths:
        raise InvalidInstance(f"no path from {spec.source!r} to {spec.sink!r}", "edges")
    owners = [e.owner for e in spec.edges]
    return {_path_id(owners, p): p for p in paths}


def build_network_instance(spec: NetworkProcurementSpec, max_paths: int = MAX_OUTCOMES) -> GeneralInstance:
    """Outcomes are simple paths; on-path edges report ``(fail, succeed)`` odds.

    ``v_i(o) = -cost_i`` on the path and 0 off it; the welfare of a path is
    ``-C * P(some edge fails)``. Removing an edge owner removes its paths.
    """
    paths = network_paths(spec, max_paths)
    bids: list[dict[str, OutcomeBid]] = [{} for _ in spec.edges]
    welfare = {}
    requires: dict[int, set] = {i: set() for i in range(len(spec.edges))}
    for oid, path in paths.items():
        for k in path:
            e = spec.edges[k]
            bids[k][oid] = OutcomeBid(-e.cost, FAIL_SUCCEED, (e.failure_prob, 1.0 - e.failure_prob))
            requires[k].add(oid)
        welfare[oid] = failure_welfare(spec.failure_penalty, sorted(path))
    return GeneralInstance(tuple(paths), tuple(bids), welfare, requires)


def edge_report(instance: GeneralInstance, i: int, cost: float, failure_prob: float) -> dict[str, OutcomeBid]:
    """Bidder ``i``'s full report if its edge claims ``(cost, failure_prob)``."""
    bid = OutcomeBid(-cost, FAIL_SUCCEED, (failure_prob, 1.0 - failure_prob))
    return {o: bid for o, b in instance.bids[i].items() if b.states == FAIL_SUCCEED}


def path_cost(spec: NetworkProcurementSpec, path: Sequence[int]) -> float:
    """``sum cost + C * P(some edge fails)`` for a path of edge indices."""
    ok = 1.0
    for k in path:
        ok *= 1.0 - spec.edges[k].failure_prob
    return sum(spec.edges[k].cost for k in path) + spec.failure_penalty * (1.0 - ok)


# ---------------------------------------------------------------------------
# Delay-sensitive procurement


_DELAY_COSTS: dict[str, Callable[..., Callable[[float], float]]] = {
    "linear": lambda rate=1.0: (lambda d: rate * d),
    "sqrt": lambda scale=1.0: (lambda d: scale * np.sqrt(d)),
    "log1p": lambda scale=1.0: (lambda d: scale * np.log1p(d)),
    "power": lambda exponent=0.5, scale=1.0: (lambda d: scale * np.power(d, exponent)),
}


def delay_cost(name: str, params: Mapping[str, float] | None = None) -> Callable[[float], float]:
    if name not in _DELAY_COSTS:
        raise InvalidInstance(f"unknown delay cost {name!r}; choose from {sorted(_DELAY_COSTS)}", "cost_of_delay")
    return _DELAY_COSTS[name](**{k: float(v) for k, v in (params or {}).items()})


@dataclass(frozen=True)
class DelayEdge:
    u: str
    v: str
    owner: str
    cost: float
    delays: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "delays", tuple(float(d) for d in self.delays))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.delays) != len(self.probs) or not self.delays:
            raise InvalidInstance("delays and probs must be non-empty and the same length", "delays")
        if len(set(self.delays)) != len(self.delays):
            raise InvalidInstance("delay support values must be distinct", "delays")
        if not np.isfinite(self.cost) or self.cost < 0:
            raise InvalidInstance(f"edge cost must be finite and >= 0, got {self.cost!r}", "cost")
        try:
            check_simplex(self.probs, len(self.probs))
        except ValueError as exc:
            raise InvalidInstance(str(exc), "probs") from None

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(f"{d:g}" for d in self.delays)


@dataclass(frozen=True)
class DelayNetworkSpec:
    nodes: tuple[str, ...]
    edges: tuple[DelayEdge, ...]
    source: str
    sink: str
    cost_of_delay: str = "linear"
    cost_params: Mapping[str, float] = field(default_factory=dict)
    directed: bool = False

    def __post_init__(self):
        nodes = tuple(str(n) for n in self.nodes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple(self.edges))
        for k, e in enumerate(self.edges):
            for end in (e.u, e.v):
                if end not in nodes:
                    raise InvalidInstance(f"unknown node {end!r}", f"edges.{k}")
        for end in (self.source, self.sink):
            if end not in nodes:
                raise InvalidInstance(f"unknown node {end!r}", "source/sink")


def check_concave_on_hull(f: Callable[[float], float], support: Sequence[float], points: int = 101) -> None:
    """Midpoint concavity test on ``[min(support), max(support)]``."""
    lo, hi = float(min(support)), float(max(support))
    xs = np.linspace(lo, hi, points)
    fx = np.array([f(x) for x in xs])
    mids = np.array([[f(0.5 * (a + b)) for b in xs] for a in xs])
    chords = 0.5 * (fx[:, None] + fx[None, :])
    worst = float((chords - mids).max())
    if worst > 1e-12 * (1.0 + float(np.abs(fx).max())):
        raise InvalidInstance(
            f"delay cost is not concave on [{lo:g}, {hi:g}]: a concave objective is not implementable",
            "cost_of_delay",
        )


def build_delay_instance(spec: DelayNetworkSpec, max_paths: int = MAX_OUTCOMES) -> GeneralInstance:
    """States are an edge's possible delays; welfare is ``-sum E[cost(delay)]``."""
    f = delay_cost(spec.cost_of_delay, spec.cost_params)
    support = [d for e in spec.edges for d in e.delays]
    check_concave_on_hull(f, support)
    owners = [e.owner for e in spec.edges]
    if len(set(owners)) != len(owners):
        raise InvalidInstance("each edge needs its own owner", "edges")
    paths = enumerate_paths(spec.nodes, [(e.u, e.v) for e in spec.edges], spec.source, spec.sink,
                            spec.directed, max_paths)
    if not paths:
        raise InvalidInstance(f"no path from {spec.source!r} to {spec.sink!r}", "edges")
    bids: list[dict[str, OutcomeBid]] = [{} for _ in spec.edges]
    welfare, requires = {}, {i: set() for i in range(len(spec.edges))}
    for path in paths:
        oid = _path_id(owners, path)
        weights = {}
        for k in path:
            e = spec.edges[k]
            bids[k][oid] = OutcomeBid(-e.cost, e.states, e.probs)
            weights[k] = [-float(f(d)) for d in e.delays]
            requires[k].add(oid)
        welfare[oid] = linear_welfare(weights)
    return GeneralInstance(tuple(welfare), tuple(bids), welfare, requires)


# ---------------------------------------------------------------------------
# Principal-agent


@dataclass(frozen=True)
class EffortLevel:
    name: str
    cost: float
    success_prob: float

    def __post_init__(self):
        if self.name == "skip":
            raise InvalidInstance("'skip' is reserved", "efforts")
        if not np.isfinite(self.cost) or self.cost < 0:
            raise InvalidInstance(f"effort cost must be >= 0, got {self.cost!r}", "cost")
        try:
            object.__setattr__(self, "success_prob", check_probability(self.success_prob))
        except ValueError as exc:
            raise InvalidInstance(str(exc), "success_prob") from None
        object.__setattr__(self, "cost", float(self.cost))


@dataclass(frozen=True)
class Agent:
    name: str
    efforts: tuple[EffortLevel, ...]

    def __post_init__(self):
        object.__setattr__(self, "efforts", tuple(self.efforts))
        if not self.efforts:
            raise InvalidInstance(f"agent {self.name!r} has no effort levels", "efforts")
        names = [e.name for e in self.efforts]
        if len(set(names)) != len(names):
            raise InvalidInstance(f"duplicate effort names for agent {self.name!r}", "efforts")

    def effort(self, name: str) -> EffortLevel:
        for e in self.efforts:
            if e.name == name:
                return e
        raise KeyError(name)


@dataclass(frozen=True)
class PrincipalAgentSpec:
    """``project`` is ``"all_succeed"`` (scale x P(every hire succeeds)) or
    ``"expected_successes"`` (scale x expected number of successes)."""

    agents: tuple[Agent, ...]
    scale: float
    project: str = "all_succeed"

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if self.project not in ("all_succeed", "expected_successes"):
            raise InvalidInstance(f"unknown project welfare {self.project!r}", "project")
        names = [a.name for a in self.agents]
        if len(set(names)) != len(names) or not names:
            raise InvalidInstance("agent names must be distinct and non-empty", "agents")


def _assignment_id(agents: Sequence[Agent], choice: Sequence[str | None]) -> str:
    return ",".join(f"{a.name}={c or 'skip'}" for a, c in zip(agents, choice))


def build_principal_agent_instance(spec: PrincipalAgentSpec, max_outcomes: int = MAX_OUTCOMES) -> GeneralInstance:
    """Outcomes assign each agent either ``skip`` or an effort level."""
    total = 1
    for a in spec.agents:
        total *= len(a.efforts) + 1
    if total > max_outcomes:
        raise GuardExceeded(f"{total} hire/effort assignments exceed the guard of {max_outcomes}")
    bids: list[dict[str, OutcomeBid]] = [{} for _ in spec.agents]
    welfare, requires = {}, {i: set() for i in range(len(spec.agents))}
    outcomes = []
    for choice in product(*[[None] + [e.name for e in a.efforts] for a in spec.agents]):
        oid = _assignment_id(spec.agents, choice)
        outcomes.append(oid)
        hired = []
        for i, (a, c) in enumerate(zip(spec.agents, choice)):
            if c is None:
                continue
            e = a.effort(c)
            bids[i][oid] = OutcomeBid(-e.cost, FAIL_SUCCEED, (1.0 - e.success_prob, e.success_prob))
            requires[i].add(oid)
            hired.append(i)
        if spec.project == "all_succeed":
            welfare[oid] = all_succeed_welfare(spec.scale, hired)
        else:
            welfare[oid] = linear_welfare({i: [0.0, spec.scale] for i in hired})
    return GeneralInstance(tuple(outcomes), tuple(bids), welfare, requires)


def assignment_of(spec: PrincipalAgentSpec, outcome: str) -> list[str | None]:
    """Effort names per agent (``None`` for not hired) encoded in an outcome id."""
    out = []
    for part in outcome.split(","):
        _, effort = part.rsplit("=", 1)
        out.append(None if effort == "skip" else effort)
    return out


def effort_obedience(spec: PrincipalAgentSpec, result: GeneralResult) -> dict[int, float]:
    """For each hired agent, assigned-effort utility minus the best alternative.

    Utility of exerting ``e`` is ``-c(e) - E_{p(e)}[payment]`` under the
    payment schedule of the chosen outcome; a non-negative margin means the
    agent is happy to obey. Agents with a single effort level get margin 0.
    """
    margins = {}
    for i, (agent, assigned) in enumerate(zip(spec.agents, assignment_of(spec, result.chosen_outcome))):
        if assigned is None:
            continue
        pay = result.transfer_vector(i, FAIL_SUCCEED)

        def utility(e: EffortLevel) -> float:
            return -e.cost - ((1.0 - e.success_prob) * pay[0] + e.success_prob * pay[1])

        mine = utility(agent.effort(assigned))
        alt = [utility(e) for e in agent.efforts if e.name != assigned]
        margins[i] = mine - max(alt) if alt else 0.0
    return margins


# ---------------------------------------------------------------------------
# Multi-slot deals with platform information


_QUALITY_MODELS: dict[str, Callable[[tuple, int, float, float], float]] = {
    "merchant": lambda o, i, x, y: x,
    "signal_sum": lambda o, i, x, y: min(1.0, x + y),
    "signal_product": lambda o, i, x, y: x * y,
    "zero": lambda o, i, x, y: 0.0,
}


@dataclass(frozen=True)
class Merchant:
    name: str
    display_value: float
    purchase_value: float
    signal: float


@dataclass(frozen=True)
class SplitInfoDealSpec:
    """Merchant reports ``(a_i, c_i, x_i)``; the platform holds ``y_i``.

    ``quality_model`` is a name from the built-in table or a callable
    ``f(assignment, i, x_i, y_i)``. Consumer welfare at an assignment is
    ``sum g(p_i)`` over shown merchants for the binary catalog function
    ``welfare``.
    """

    merchants: tuple[Merchant, ...]
    platform_signals: tuple[float, ...]
    quality_model: str | Callable = "merchant"
    welfare: str = "linear"
    welfare_params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "merchants", tuple(self.merchants))
        object.__setattr__(self, "platform_signals", tuple(float(y) for y in self.platform_signals))
        if len(self.platform_signals) != len(self.merchants):
            raise InvalidInstance("need one platform signal per merchant", "platform_signals")
        if isinstance(self.quality_model, str) and self.quality_model not in _QUALITY_MODELS:
            raise InvalidInstance(f"unknown quality model {self.quality_model!r}", "quality_model")

    def quality(self, assignment: tuple[int, ...], i: int) -> float:
        f = _QUALITY_MODELS[self.quality_model] if isinstance(self.quality_model, str) else self.quality_model
        q = float(f(assignment, i, self.merchants[i].signal, self.platform_signals[i]))
        if not 0.0 <= q <= 1.0:
            raise InvalidInstance(f"quality model returned {q!r} for merchant {i} at {assignment}", "quality_model")
        return q


def _slot_id(spec: SplitInfoDealSpec, assignment: tuple[int, ...]) -> str:
    return "+".join(spec.merchants[i].name for i in assignment) or "none"


def build_split_info_instance(spec: SplitInfoDealSpec, slot_assignments: Sequence[Sequence[int]]) -> GeneralInstance:
    """Outcomes are the given sets of shown merchants (index tuples).

    A shown merchant bids ``a_i + f * c_i`` and predicts purchase with
    probability ``f``; merchants not shown are bystanders.
    """
    if not slot_assignments:
        raise InvalidInstance("need at least one slot assignment", "slot_assignments")
    bids: list[dict[str, OutcomeBid]] = [{} for _ in spec.merchants]
    welfare: dict[str, WelfareFamily] = {}
    requires = {i: set() for i in range(len(spec.merchants))}
    outcomes = []
    for assignment in slot_assignments:
        assignment = tuple(int(i) for i in assignment)
        oid = _slot_id(spec, assignment)
        if oid in welfare:
            raise InvalidInstance(f"duplicate slot assignment {oid!r}", "slot_assignments")
        outcomes.append(oid)
        for i in assignment:
            m = spec.merchants[i]
            q = spec.quality(assignment, i)
            bids[i][oid] = OutcomeBid(m.display_value + q * m.purchase_value, ("no_purchase", "purchase"), (1.0 - q, q))
            requires[i].add(oid)
        if assignment:
            welfare[oid] = separable_welfare(spec.welfare, sorted(assignment), spec.welfare_params)
        else:
            welfare[oid] = zero_welfare()
    return GeneralInstance(tuple(outcomes), tuple(bids), welfare, requires)


def run_split_info(
    spec: SplitInfoDealSpec,
    slot_assignments: Sequence[Sequence[int]],
    realized_states: Mapping[int, str] | None = None,
) -> GeneralResult:
    return run_general(build_split_info_instance(spec, slot_assignments), realized_states)
