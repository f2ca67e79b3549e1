"""JSON instance documents.

Every document is an object with a ``kind`` discriminator:

``single_slot``
    ``{"bids": [{"value": v, "quality": p}, ...], "welfare": {"name": ..., "params": {...}}}``
    (``welfare`` optional; command-line flags take precedence).
``general``
    ``{"outcomes": [...], "bidders": [{outcome: {"value", "states", "prediction"}}, ...],
    "welfare": {outcome: {"type": ..., ...}}, "requires": {bidder: [outcome, ...]}}``.
    Missing bidder/outcome entries mean value 0 and a single state.
``network``
    ``{"nodes", "edges": [{"u", "v", "owner", "cost", "failure_prob"}], "source", "sink",
    "failure_penalty", "directed"}``.
``delay_network``
    like ``network`` with per-edge ``delays``/``probs`` and ``cost_of_delay``/``cost_params``.
``principal_agent``
    ``{"agents": [{"name", "efforts": [{"name", "cost", "success_prob"}]}], "scale", "project"}``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .applications import (
    Agent,
    DelayEdge,
    DelayNetworkSpec,
    Edge,
    EffortLevel,
    NetworkProcurementSpec,
    PrincipalAgentSpec,
)
from .errors import InvalidInstance, MechanismError
from .general import GeneralInstance, OutcomeBid
from .single_slot import SingleSlotBid
from .welfare import welfare_from_dict

KINDS = ("single_slot", "general", "network", "delay_network", "principal_agent")


class ParseError(MechanismError):
    """The file is not valid JSON or not a JSON object."""


def read_document(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return doc


def load_instance(path):
    """Read and validate an instance file; see the module docstring for schemas."""
    return parse_instance(read_document(path))


def _req(doc: dict, key: str, where: str):
    if key not in doc:
        raise InvalidInstance("missing field", f"{where}.{key}" if where else key)
    return doc[key]


def _wrap(where: str, build):
    """Run ``build()``, prefixing any validation error with ``where``."""
    try:
        return build()
    except InvalidInstance as exc:
        field = ".".join(x for x in (where, exc.field) if x)
        raise InvalidInstance(exc.message, field) from None
    except (TypeError, ValueError, KeyError) as exc:
        raise InvalidInstance(str(exc), where or None) from None


def parse_instance(doc: dict[str, Any]):
    kind = doc.get("kind")
    if kind not in KINDS:
        raise InvalidInstance(f"unknown kind {kind!r}; expected one of {list(KINDS)}", "kind")
    return _PARSERS[kind](doc)


def _parse_single_slot(doc):
    bids = _req(doc, "bids", "")
    if not isinstance(bids, list) or not bids:
        raise InvalidInstance("need a non-empty list of bids", "bids")
    return [
        _wrap(f"bids[{k}]", lambda b=b, k=k: SingleSlotBid(float(_req(b, "value", "")),
                                                           float(_req(b, "quality", ""))))
        for k, b in enumerate(bids)
    ]


def _parse_general(doc):
    outcomes = [str(o) for o in _req(doc, "outcomes", "")]
    bidders = _req(doc, "bidders", "")
    bids = []
    for i, per in enumerate(bidders):
        entry = {}
        for o, b in per.items():
            where = f"bidders[{i}].{o}"
            entry[o] = _wrap(where, lambda b=b: OutcomeBid(
                float(b.get("value", 0.0)),
                tuple(b.get("states", ("none",))),
                tuple(b.get("prediction", (1.0,))),
            ))
        bids.append(entry)
    welfare = {o: _wrap(f"welfare.{o}", lambda w=w: welfare_from_dict(w))
               for o, w in _req(doc, "welfare", "").items()}
    requires = {int(i): frozenset(outs) for i, outs in doc.get("requires", {}).items()}
    return _wrap("", lambda: GeneralInstance(tuple(outcomes), tuple(bids), welfare, requires))


def _parse_network(doc):
    edges = tuple(
        _wrap(f"edges[{k}]", lambda e=e, k=k: Edge(
            str(_req(e, "u", "")), str(_req(e, "v", "")),
            str(e.get("owner", f"e{k}")), float(_req(e, "cost", "")),
            float(e.get("failure_prob", 0.0)),
        ))
        for k, e in enumerate(_req(doc, "edges", ""))
    )
    return _wrap("", lambda: NetworkProcurementSpec(
        tuple(_req(doc, "nodes", "")), edges, str(_req(doc, "source", "")), str(_req(doc, "sink", "")),
        float(doc.get("failure_penalty", 0.0)), bool(doc.get("directed", False)),
    ))


def _parse_delay(doc):
    edges = tuple(
        _wrap(f"edges[{k}]", lambda e=e, k=k: DelayEdge(
            str(_req(e, "u", "")), str(_req(e, "v", "")),
            str(e.get("owner", f"e{k}")), float(_req(e, "cost", "")),
            tuple(_req(e, "delays", "")), tuple(_req(e, "probs", "")),
        ))
        for k, e in enumerate(_req(doc, "edges", ""))
    )
    return _wrap("", lambda: DelayNetworkSpec(
        tuple(str(n) for n in _req(doc, "nodes", "")), edges, str(_req(doc, "source", "")),
        str(_req(doc, "sink", "")), str(doc.get("cost_of_delay", "linear")),
        {k: float(v) for k, v in doc.get("cost_params", {}).items()}, bool(doc.get("directed", False)),
    ))


def _parse_principal_agent(doc):
    agents = []
    for i, a in enumerate(_req(doc, "agents", "")):
        efforts = tuple(
            _wrap(f"agents[{i}].efforts[{k}]", lambda e=e: EffortLevel(
                str(e["name"]), float(e["cost"]), float(e["success_prob"])))
            for k, e in enumerate(_req(a, "efforts", f"agents[{i}]"))
        )
        agents.append(_wrap(f"agents[{i}]", lambda a=a, efforts=efforts: Agent(str(a["name"]), efforts)))
    return _wrap("", lambda: PrincipalAgentSpec(
        tuple(agents), float(_req(doc, "scale", "")), str(doc.get("project", "all_succeed"))))


_PARSERS = {
    "single_slot": _parse_single_slot,
    "general": _parse_general,
    "network": _parse_network,
    "delay_network": _parse_delay,
    "principal_agent": _parse_principal_agent,
}


def dump_instance(obj) -> dict:
    """Inverse of :func:`parse_instance`."""
    if isinstance(obj, GeneralInstance):
        return _dump_general(obj)
    if isinstance(obj, NetworkProcurementSpec):
        return {
            "kind": "network",
            "nodes": list(obj.nodes),
            "edges": [{"u": e.u, "v": e.v, "owner": e.owner, "cost": e.cost, "failure_prob": e.failure_prob}
                      for e in obj.edges],
            "source": obj.source,
            "sink": obj.sink,
            "failure_penalty": obj.failure_penalty,
            "directed": obj.directed,
        }
    if isinstance(obj, DelayNetworkSpec):
        return {
            "kind": "delay_network",
            "nodes": list(obj.nodes),
            "edges": [{"u": e.u, "v": e.v, "owner": e.owner, "cost": e.cost,
                       "delays": list(e.delays), "probs": list(e.probs)} for e in obj.edges],
            "source": obj.source,
            "sink": obj.sink,
            "cost_of_delay": obj.cost_of_delay,
            "cost_params": dict(obj.cost_params),
            "directed": obj.directed,
        }
    if isinstance(obj, PrincipalAgentSpec):
        return {
            "kind": "principal_agent",
            "agents": [{"name": a.name, "efforts": [{"name": e.name, "cost": e.cost, "success_prob": e.success_prob}
                                                    for e in a.efforts]} for a in obj.agents],
            "scale": obj.scale,
            "project": obj.project,
        }
    if isinstance(obj, (list, tuple)) and all(isinstance(b, SingleSlotBid) for b in obj):
        return {"kind": "single_slot", "bids": [{"value": b.value, "quality": b.quality} for b in obj]}
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _dump_general(inst: GeneralInstance) -> dict:
    default = OutcomeBid()
    bidders = []
    for per in inst.bids:
        bidders.append({
            o: {"value": b.value, "states": list(b.states), "prediction": list(b.prediction)}
            for o, b in per.items() if b != default
        })
    return {
        "kind": "general",
        "outcomes": list(inst.outcomes),
        "bidders": bidders,
        "welfare": {o: w.to_dict() for o, w in inst.welfare.items()},
        "requires": {str(i): sorted(outs) for i, outs in sorted(inst.requires.items())},
    }


def write_instance(obj, path) -> None:
    Path(path).write_text(json.dumps(dump_instance(obj), indent=2) + "\n")
