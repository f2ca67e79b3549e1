"""Consumer-welfare functions.

Two families live here:

* binary functions of a single purchase probability (``linear``, ``square``,
  ``threshold``, ``concave_demo``), packaged as :class:`ConvexFn`;
* per-outcome welfare over the vector of all bidders' predictions
  (:class:`WelfareFamily`), used by the general mechanism. These are
  described by a ``type`` plus JSON-compatible ``params`` so instances
  can be written to and read from files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NotConvexError
from .scoring import (
    CONVEX,
    NON_CONVEX,
    STRICTLY_CONVEX,
    ConvexFn,
    pointwise_max_fn,
    subgradient_violation,
    verify_convex,
)

COMPONENT_WISE_CONVEX_ONLY = "component_wise_convex_only"


def linear_g(slope: float = 1.0) -> ConvexFn:
    slope = float(slope)
    return ConvexFn(
        lambda p: slope * np.asarray(p, dtype=float),
        lambda p: np.full(np.shape(p), slope) if np.ndim(p) else slope,
        CONVEX,
        "linear",
    )


def square_g() -> ConvexFn:
    return ConvexFn(
        lambda p: np.square(p),
        lambda p: 2.0 * np.asarray(p, dtype=float),
        STRICTLY_CONVEX,
        "square",
    )


def threshold_g(alpha: float, beta: float, v_max: float) -> ConvexFn:
    """Zero below ``alpha``, then rising linearly to ``v_max`` at ``beta``.

    At the kink ``p == alpha`` the subgradient is the left slope, 0.
    """
    alpha, beta, v_max = float(alpha), float(beta), float(v_max)
    if not 0.0 <= alpha < beta <= 1.0:
        raise ValueError(f"need 0 <= alpha < beta <= 1, got alpha={alpha}, beta={beta}")
    if v_max <= 0:
        raise ValueError(f"v_max must be positive, got {v_max}")
    slope = v_max / (beta - alpha)
    return pointwise_max_fn([(0.0, 0.0), (slope, -(slope * alpha))], name="threshold")


def concave_counterexample_g() -> ConvexFn:
    """``-(p - 1/2)^2`` with its tangent slope; flagged non-convex."""
    return ConvexFn(
        lambda p: -np.square(np.asarray(p, dtype=float) - 0.5),
        lambda p: -2.0 * (np.asarray(p, dtype=float) - 0.5),
        NON_CONVEX,
        "concave_demo",
    )


_BINARY_BUILDERS: dict[str, Callable[..., ConvexFn]] = {
    "linear": linear_g,
    "square": square_g,
    "threshold": threshold_g,
    "concave_demo": concave_counterexample_g,
}

_BINARY_DEFAULTS: dict[str, dict[str, float]] = {
    "linear": {"slope": 1.0},
    "square": {},
    "threshold": {"alpha": 0.2, "beta": 0.6, "v_max": 10.0},
    "concave_demo": {},
}

CATALOG_NAMES = ("linear", "square", "threshold", "product", "concave_demo")


@dataclass(frozen=True)
class WelfareSpec:
    """A named catalog entry whose convexity claim has been checked on a grid."""

    name: str
    kind: str
    parameters: Mapping[str, float]
    convexity_claim: str
    fn: object = field(compare=False, repr=False)


def binary_welfare(name: str, params: Mapping[str, float] | None = None) -> ConvexFn:
    """Build a binary catalog function by name, filling default parameters."""
    if name not in _BINARY_BUILDERS:
        raise KeyError(f"unknown binary welfare function {name!r}; choose from {sorted(_BINARY_BUILDERS)}")
    merged = dict(_BINARY_DEFAULTS[name])
    merged.update(params or {})
    unknown = set(merged) - set(_BINARY_DEFAULTS[name])
    if unknown:
        raise KeyError(f"unknown parameter(s) {sorted(unknown)} for {name!r}")
    return _BINARY_BUILDERS[name](**{k: float(v) for k, v in merged.items()})


def catalog_entry(name: str, params: Mapping[str, float] | None = None) -> WelfareSpec:
    """Look up a catalog function and verify its convexity claim.

    Raises :class:`NotConvexError` if the grid test disagrees with the claim.
    """
    if name == "product":
        fam = product_form_g()
        witness = product_joint_convexity_witness(fam)
        if witness is None:
            raise NotConvexError("product welfare unexpectedly passed the joint convexity check")
        return WelfareSpec(name, "component_wise", {}, COMPONENT_WISE_CONVEX_ONLY, fam)
    fn = binary_welfare(name, params)
    merged = dict(_BINARY_DEFAULTS[name])
    merged.update(params or {})
    if fn.strictness == NON_CONVEX:
        violation, _, _ = subgradient_violation(fn)
        if violation <= 0.0:
            raise NotConvexError(f"{name} is claimed non-convex but passed the grid test")
    else:
        verify_convex(fn)
    return WelfareSpec(name, "binary", {k: float(v) for k, v in merged.items()}, fn.strictness, fn)


# ---------------------------------------------------------------------------
# Per-outcome welfare over all bidders' predictions


def _canonical(params) -> dict:
    return json.loads(json.dumps(params, sort_keys=True))


@dataclass(frozen=True)
class WelfareFamily:
    """Welfare ``g_o`` at one outcome, a function of every bidder's prediction.

    ``evaluate`` takes a sequence with one probability vector per bidder.
    ``gradient(preds, i)`` returns the analytic gradient in bidder ``i``'s
    component, or ``None`` when only finite differences are available.
    """

    type: str
    params: Mapping = field(default_factory=dict)
    fn: Callable[[Sequence[np.ndarray]], float] | None = field(default=None, compare=False, repr=False)
    grad: Callable[[Sequence[np.ndarray], int], np.ndarray] | None = field(
        default=None, compare=False, repr=False
    )

    def __post_init__(self):
        if self.fn is None:
            if self.type not in _FAMILY_TYPES:
                raise KeyError(f"unknown welfare type {self.type!r}")
            params = _canonical(self.params)
            fn, grad = _FAMILY_TYPES[self.type](params)
            object.__setattr__(self, "params", params)
            object.__setattr__(self, "fn", fn)
            object.__setattr__(self, "grad", grad)

    def evaluate(self, preds: Sequence[np.ndarray]) -> float:
        return float(self.fn(preds))

    def gradient(self, preds: Sequence[np.ndarray], i: int):
        if self.grad is None:
            return None
        return np.asarray(self.grad(preds, i), dtype=float)

    def baseline(self, i: int, n_states: int) -> np.ndarray:
        """Stand-in prediction for bidder ``i`` once its bid is removed.

        Uses ``params["baselines"][str(i)]`` when it has the right length,
        otherwise the uniform distribution.
        """
        declared = (self.params or {}).get("baselines", {}).get(str(i))
        if declared is not None and len(declared) == n_states:
            return np.asarray(declared, dtype=float)
        return np.full(n_states, 1.0 / n_states)

    def to_dict(self) -> dict:
        if self.type == "custom":
            raise TypeError("custom welfare functions cannot be serialized")
        return {"type": self.type, **self.params}


def welfare_from_dict(doc: Mapping) -> WelfareFamily:
    doc = dict(doc)
    kind = doc.pop("type")
    return WelfareFamily(kind, doc)


def _zero(params):
    return (lambda preds: 0.0), (lambda preds, i: np.zeros(len(preds[i])))


def _linear(params):
    weights = {int(k): np.asarray(v, dtype=float) for k, v in params.get("weights", {}).items()}
    constant = float(params.get("constant", 0.0))

    def fn(preds):
        return constant + sum(float(w @ preds[i]) for i, w in weights.items())

    def grad(preds, i):
        return weights[i].copy() if i in weights else np.zeros(len(preds[i]))

    return fn, grad


def _separable(params):
    g = binary_welfare(params["function"], params.get("params"))
    bidders = [int(b) for b in params["bidders"]]
    k = int(params.get("state", 1))
    scale = float(params.get("scale", 1.0))

    def fn(preds):
        return scale * sum(float(g.eval(preds[b][k])) for b in bidders)

    def grad(preds, i):
        out = np.zeros(len(preds[i]))
        if i in bidders:
            out[k] = scale * float(g.subgrad(preds[i][k]))
        return out

    return fn, grad


def _product(params):
    a, b = (int(x) for x in params.get("bidders", [0, 1]))
    k = int(params.get("state", 1))
    c = float(params.get("center", 0.5))

    def fn(preds):
        return (preds[a][k] - c) * (preds[b][k] - c)

    def grad(preds, i):
        out = np.zeros(len(preds[i]))
        if i == a:
            out[k] += preds[b][k] - c
        if i == b:
            out[k] += preds[a][k] - c
        return out

    return fn, grad


def _success_product(preds, bidders, k, skip=None):
    prod = 1.0
    for b in bidders:
        if b != skip:
            prod *= preds[b][k]
    return prod


def _failure(params):
    penalty = float(params["penalty"])
    bidders = [int(b) for b in params["bidders"]]
    k = int(params.get("state", 1))

    def fn(preds):
        return -penalty * (1.0 - _success_product(preds, bidders, k))

    def grad(preds, i):
        out = np.zeros(len(preds[i]))
        if i in bidders:
            out[k] = penalty * _success_product(preds, bidders, k, skip=i)
        return out

    return fn, grad


def _all_succeed(params):
    scale = float(params["scale"])
    bidders = [int(b) for b in params["bidders"]]
    k = int(params.get("state", 1))

    def fn(preds):
        if not bidders:
            return 0.0
        return scale * _success_product(preds, bidders, k)

    def grad(preds, i):
        out = np.zeros(len(preds[i]))
        if i in bidders:
            out[k] = scale * _success_product(preds, bidders, k, skip=i)
        return out

    return fn, grad


_FAMILY_TYPES = {
    "zero": _zero,
    "linear": _linear,
    "separable": _separable,
    "product": _product,
    "failure": _failure,
    "all_succeed": _all_succeed,
}


def zero_welfare() -> WelfareFamily:
    return WelfareFamily("zero")


def linear_welfare(weights: Mapping[int, Sequence[float]], constant: float = 0.0) -> WelfareFamily:
    """Expected-value welfare ``constant + sum_i w_i . p_i``."""
    return WelfareFamily(
        "linear",
        {"weights": {str(i): [float(x) for x in w] for i, w in weights.items()}, "constant": float(constant)},
    )


def separable_welfare(
    function: str,
    bidders: Sequence[int],
    params: Mapping[str, float] | None = None,
    state: int = 1,
    scale: float = 1.0,
) -> WelfareFamily:
    """``scale * sum_{i in bidders} g(p_i[state])`` for a binary catalog ``g``."""
    doc = {"function": function, "bidders": [int(b) for b in bidders], "state": state, "scale": float(scale)}
    if params:
        doc["params"] = {k: float(v) for k, v in params.items()}
    return WelfareFamily("separable", doc)


def product_form_g(bidders: Sequence[int] = (0, 1), state: int = 1) -> WelfareFamily:
    """``(p_a - 1/2)(p_b - 1/2)`` over two binary predictions.

    Linear in each argument with the other fixed, but not jointly convex.
    """
    return WelfareFamily("product", {"bidders": [int(b) for b in bidders], "state": state, "center": 0.5})


def failure_welfare(penalty: float, bidders: Sequence[int], state: int = 1) -> WelfareFamily:
    """``-penalty * P(some listed bidder fails)`` with independent successes."""
    return WelfareFamily("failure", {"penalty": float(penalty), "bidders": [int(b) for b in bidders], "state": state})


def all_succeed_welfare(scale: float, bidders: Sequence[int], state: int = 1) -> WelfareFamily:
    """``scale * P(every listed bidder succeeds)``; zero when nobody is listed."""
    return WelfareFamily("all_succeed", {"scale": float(scale), "bidders": [int(b) for b in bidders], "state": state})


def custom_welfare(fn, grad=None, name: str = "custom") -> WelfareFamily:
    """Wrap arbitrary Python callables. Not serializable."""
    return WelfareFamily("custom", {"name": name}, fn, grad)


def product_joint_convexity_witness(fam: WelfareFamily):
    """Return ``(x, y, midpoint_value, chord_value)`` breaking joint convexity, if found.

    Checks the anti-diagonal chord from (0, 1) to (1, 0), where the product
    form sits at -1/4 on both ends and 0 at the midpoint.
    """

    def at(p1, p2):
        return fam.evaluate([np.array([1 - p1, p1]), np.array([1 - p2, p2])])

    x, y = (0.0, 1.0), (1.0, 0.0)
    mid = at(0.5, 0.5)
    chord = 0.5 * (at(*x) + at(*y))
    if mid > chord:
        return x, y, mid, chord
    return None
