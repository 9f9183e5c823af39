"""Fiber plant, loss budgets, star topology and the hub q-ROADM.

Attenuation tables and unit losses below are configuration seeds drawn from
common datasheet values; every one of them can be overridden from a
topology document.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Union

import numpy as np

from .errors import ConflictingAssignment, NegativeLoss, UnmappedChannel, WavelengthOutOfRange

GROUP_INDEX = 1.468
_PS_PER_KM = GROUP_INDEX / 299_792_458.0 * 1e3 * 1e12


@dataclass(frozen=True)
class FiberKind:
    """A fiber type with a tabulated attenuation curve (dB/km vs nm)."""

    name: str
    attenuation_curve: Mapping[float, float]

    def __post_init__(self):
        if not self.attenuation_curve:
            raise ValueError(f"fiber kind {self.name!r} has an empty attenuation table")
        table = {float(k): float(v) for k, v in self.attenuation_curve.items()}
        if any(v < 0 for v in table.values()):
            raise ValueError(f"negative attenuation in table of {self.name!r}")
        object.__setattr__(self, "attenuation_curve", MappingProxyType(dict(sorted(table.items()))))

    def __hash__(self):
        return hash((self.name, tuple(self.attenuation_curve.items())))

    @property
    def wavelength_range(self) -> tuple[float, float]:
        keys = list(self.attenuation_curve)
        return keys[0], keys[-1]

    def attenuation(self, wavelength_nm: float) -> float:
        """dB/km at ``wavelength_nm``, linearly interpolated between table points."""
        lo, hi = self.wavelength_range
        lam = float(wavelength_nm)
        if lam < lo:
            raise WavelengthOutOfRange(
                f"{lam:g} nm is below the lowest tabulated wavelength ({lo:g} nm) of {self.name}")
        if lam > hi:
            raise WavelengthOutOfRange(
                f"{lam:g} nm is above the highest tabulated wavelength ({hi:g} nm) of {self.name}")
        xs = list(self.attenuation_curve)
        ys = list(self.attenuation_curve.values())
        return float(np.interp(lam, xs, ys))

    def supports(self, wavelength_nm: float) -> bool:
        lo, hi = self.wavelength_range
        return lo <= float(wavelength_nm) <= hi


SMF28 = FiberKind("SMF-28", {1060.0: 1.5, 1330.0: 0.35, 1550.0: 0.2, 1625.0: 0.23})
HP780 = FiberKind("780-HP", {780.0: 3.5})
XP1060 = FiberKind("1060-XP", {1060.0: 1.5})
DEFAULT_FIBER_KINDS = {k.name: k for k in (SMF28, HP780, XP1060)}


@dataclass(frozen=True)
class UnitLosses:
    splice_db: float = 0.05
    connector_db: float = 0.3
    roadm_db: float = 2.0

    def __post_init__(self):
        for name in ("splice_db", "connector_db", "roadm_db"):
            if getattr(self, name) < 0:
                raise NegativeLoss(f"{name} must be non-negative")


@dataclass(frozen=True)
class FiberSpan:
    length_km: float
    kind: FiberKind
    splices: int = 0
    connectors: int = 0

    def __post_init__(self):
        if not self.length_km > 0:
            raise ValueError("span length_km must be positive")
        if self.splices < 0 or self.connectors < 0:
            raise ValueError("splice and connector counts must be non-negative")

    @property
    def delay_ps(self) -> float:
        return self.length_km * _PS_PER_KM


@dataclass(frozen=True)
class Element:
    """Passive or active component with a fixed insertion loss (WDM, switch, polarizer)."""

    name: str
    insertion_loss_db: float

    def __post_init__(self):
        if self.insertion_loss_db < 0:
            raise NegativeLoss(f"insertion loss of {self.name!r} must be non-negative")


PathItem = Union[FiberSpan, Element]


def loss_budget(path: Iterable[PathItem], wavelength_nm: float,
                unit_losses: UnitLosses = UnitLosses()) -> float:
    """Total loss in dB of an ordered path at one wavelength.

    Sum of fiber attenuation times length, splice and connector counts times
    their unit losses, and element insertion losses.
    """
    total = 0.0
    for item in path:
        if isinstance(item, FiberSpan):
            total += item.kind.attenuation(wavelength_nm) * item.length_km
            total += item.splices * unit_losses.splice_db
            total += item.connectors * unit_losses.connector_db
        elif isinstance(item, Element):
            total += item.insertion_loss_db
        else:
            raise TypeError(f"unsupported path item {item!r}")
    return total


def transmittance(loss_db: float) -> float:
    """Survival probability for a loss in dB."""
    if loss_db < 0:
        raise NegativeLoss(f"loss must be non-negative, got {loss_db!r}")
    return 10.0 ** (-loss_db / 10.0)


def path_length_km(path: Iterable[PathItem]) -> float:
    return sum(p.length_km for p in path if isinstance(p, FiberSpan))


def propagation_delay_ps(path: Iterable[PathItem]) -> float:
    return sum(p.delay_ps for p in path if isinstance(p, FiberSpan))


# --- topology -------------------------------------------------------------

@dataclass(frozen=True)
class Link:
    """Cable between two nodes.

    ``spans`` describe the route of the cable; ``strands`` lists the fiber
    kinds present in it (the spans' own kinds are always included).
    ``background_rate_hz`` is an optional noise click rate from classical
    traffic sharing the cable.
    """

    a: str
    b: str
    spans: tuple[FiberSpan, ...]
    strands: tuple[str, ...] = ()
    direct: bool = False
    background_rate_hz: float = 0.0

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("link endpoints must differ")
        if not self.spans:
            raise ValueError(f"link {self.a}-{self.b} has no spans")
        kinds = tuple(dict.fromkeys(list(self.strands) + [s.kind.name for s in self.spans]))
        object.__setattr__(self, "strands", kinds)
        object.__setattr__(self, "spans", tuple(self.spans))

    @property
    def key(self) -> frozenset:
        return frozenset((self.a, self.b))

    def spans_on(self, fiber: FiberKind | None) -> tuple[FiberSpan, ...]:
        """Spans of this cable using strand ``fiber`` (same lengths and terminations)."""
        if fiber is None:
            return self.spans
        if fiber.name not in self.strands:
            raise LookupError(f"cable {self.a}-{self.b} carries no {fiber.name} strand")
        return tuple(FiberSpan(s.length_km, fiber, s.splices, s.connectors) for s in self.spans)


@dataclass(frozen=True)
class Topology:
    nodes: frozenset
    links: Mapping[frozenset, Link]
    hub: str
    fiber_kinds: Mapping[str, FiberKind] = field(default_factory=lambda: dict(DEFAULT_FIBER_KINDS))
    unit_losses: UnitLosses = UnitLosses()
    roadm: "RoadmConfig | None" = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", frozenset(self.nodes))
        object.__setattr__(self, "links", MappingProxyType(dict(self.links)))
        object.__setattr__(self, "fiber_kinds", MappingProxyType(dict(self.fiber_kinds)))
        if self.hub not in self.nodes:
            raise ValueError(f"hub {self.hub!r} is not a node")
        for key, link in self.links.items():
            missing = [n for n in key if n not in self.nodes]
            if missing:
                raise ValueError(f"link references unknown node(s) {missing}")

    @classmethod
    def build(cls, hub: str, links: Iterable[Link], nodes: Iterable[str] = (), **kw) -> "Topology":
        links = list(links)
        table: dict[frozenset, Link] = {}
        for link in links:
            if link.key in table:
                raise ValueError(f"duplicate link {link.a}-{link.b}")
            table[link.key] = link
        all_nodes = set(nodes) | {hub} | {n for l in links for n in (l.a, l.b)}
        return cls(frozenset(all_nodes), table, hub, **kw)

    def link(self, a: str, b: str) -> Link:
        try:
            return self.links[frozenset((a, b))]
        except KeyError:
            raise LookupError(f"no link between {a} and {b}") from None

    def neighbors(self, node: str) -> set[str]:
        return {n for key in self.links for n in key if node in key and n != node}

    def star_violations(self) -> list[str]:
        """Reasons the topology is not a star with optional direct extras.

        Every non-hub node needs exactly one link to the hub.  Links between
        two non-hub nodes must be declared ``direct`` and may not share an
        endpoint (a direct cable is a point-to-point extra, not a mesh).
        """
        problems = []
        seen_direct: dict[str, str] = {}
        for node in sorted(self.nodes - {self.hub}):
            if frozenset((node, self.hub)) not in self.links:
                problems.append(f"{node} has no link to hub {self.hub}")
        for key, link in sorted(self.links.items(), key=lambda kv: sorted(kv[0])):
            if self.hub in key:
                continue
            a, b = sorted(key)
            if not link.direct:
                problems.append(f"{a}-{b} links two non-hub nodes without being declared direct")
            for n in (a, b):
                if n in seen_direct:
                    problems.append(f"{n} is an endpoint of direct links {seen_direct[n]} and {a}-{b}")
                else:
                    seen_direct[n] = f"{a}-{b}"
        return problems

    def is_star(self) -> bool:
        return not self.star_violations()

    def path(self, src: str, dst: str, fiber: FiberKind | str | None = None) -> list[PathItem]:
        """Ordered path between two nodes.

        A direct cable is used when one exists; otherwise the route goes
        through the hub and picks up the ROADM insertion loss.
        """
        for n in (src, dst):
            if n not in self.nodes:
                raise LookupError(f"unknown node {n!r}")
        if src == dst:
            return []
        if isinstance(fiber, str):
            fiber = self.fiber_kinds[fiber]
        key = frozenset((src, dst))
        if key in self.links:
            return list(self.links[key].spans_on(fiber))
        first = self.link(src, self.hub).spans_on(fiber)
        second = self.link(self.hub, dst).spans_on(fiber)
        roadm_db = self.unit_losses.roadm_db if self.roadm is None else self.roadm.loss_for(src, dst)
        return list(first) + [Element("q-ROADM", roadm_db)] + list(second)

    def links_on_path(self, src: str, dst: str) -> list[Link]:
        key = frozenset((src, dst))
        if key in self.links:
            return [self.links[key]]
        return [self.link(src, self.hub), self.link(self.hub, dst)]

    def loss_budget(self, src: str, dst: str, wavelength_nm: float,
                    fiber: FiberKind | str | None = None) -> float:
        return loss_budget(self.path(src, dst, fiber), wavelength_nm, self.unit_losses)


# --- q-ROADM --------------------------------------------------------------

Port = Union[int, str]


def _channel_index(channel) -> int:
    return int(getattr(channel, "index", channel))


@dataclass(frozen=True)
class RoadmConfig:
    """Wavelength-selective switch state at the hub.

    ``port_map`` maps ``(input_port, channel_index)`` to an output port.  For
    any one channel no two inputs may share an output.
    """

    port_map: Mapping[tuple[Port, int], Port] = field(default_factory=dict)
    insertion_loss_db: float = 2.0
    path_losses: Mapping[tuple[Port, Port], float] = field(default_factory=dict)

    def __post_init__(self):
        pm = {(p, int(ch)): out for (p, ch), out in dict(self.port_map).items()}
        _check_injective(pm)
        if self.insertion_loss_db < 0 or any(v < 0 for v in dict(self.path_losses).values()):
            raise NegativeLoss("ROADM insertion loss must be non-negative")
        object.__setattr__(self, "port_map", MappingProxyType(pm))
        object.__setattr__(self, "path_losses", MappingProxyType(dict(self.path_losses)))

    def __eq__(self, other):
        if not isinstance(other, RoadmConfig):
            return NotImplemented
        return (dict(self.port_map) == dict(other.port_map)
                and self.insertion_loss_db == other.insertion_loss_db
                and dict(self.path_losses) == dict(other.path_losses))

    def __hash__(self):
        return hash((frozenset(self.port_map.items()), self.insertion_loss_db,
                     frozenset(self.path_losses.items())))

    def loss_for(self, in_port: Port, out_port: Port) -> float:
        return float(self.path_losses.get((in_port, out_port), self.insertion_loss_db))


def _check_injective(pm: Mapping[tuple[Port, int], Port]) -> None:
    used: dict[tuple[int, Port], Port] = {}
    for (inp, ch), out in sorted(pm.items(), key=lambda kv: (kv[0][1], str(kv[0][0]))):
        if (ch, out) in used:
            raise ConflictingAssignment(
                f"channel {ch}: inputs {used[(ch, out)]!r} and {inp!r} both map to output {out!r}")
        used[(ch, out)] = inp


def roadm_route(cfg: RoadmConfig, in_port: Port, channel) -> tuple[Port, float]:
    """Output port and insertion loss for a channel entering ``in_port``."""
    key = (in_port, _channel_index(channel))
    try:
        out = cfg.port_map[key]
    except KeyError:
        raise UnmappedChannel(f"channel {key[1]} on port {in_port!r} is not configured") from None
    return out, cfg.loss_for(in_port, out)


def reconfigure(cfg: RoadmConfig, changes: Mapping) -> RoadmConfig:
    """New config with ``changes`` applied; ``cfg`` itself is untouched.

    ``changes`` maps ``(input_port, channel)`` to a new output port, or to
    ``None`` to remove the entry.
    """
    pm = dict(cfg.port_map)
    for (inp, ch), out in dict(changes).items():
        key = (inp, _channel_index(ch))
        if out is None:
            pm.pop(key, None)
        else:
            pm[key] = out
    return RoadmConfig(pm, cfg.insertion_loss_db, cfg.path_losses)


# --- topology documents ---------------------------------------------------

def _fiber_kinds_from(doc: Mapping) -> dict[str, FiberKind]:
    kinds = dict(DEFAULT_FIBER_KINDS)
    for name, table in (doc or {}).items():
        kinds[name] = FiberKind(name, {float(k): float(v) for k, v in table.items()})
    return kinds


def topology_from_dict(doc: Mapping) -> Topology:
    kinds = _fiber_kinds_from(doc.get("fiber_kinds", {}))
    ul = doc.get("unit_losses", {})
    unit_losses = UnitLosses(**{k: float(v) for k, v in ul.items()})
    links = []
    for entry in doc.get("links", []):
        spans = [FiberSpan(float(s["length_km"]), kinds[s.get("kind", "SMF-28")],
                           int(s.get("splices", 0)), int(s.get("connectors", 0)))
                 for s in entry["spans"]]
        links.append(Link(entry["a"], entry["b"], tuple(spans), tuple(entry.get("strands", ())),
                          bool(entry.get("direct", False)),
                          float(entry.get("background_rate_hz", 0.0))))
    roadm = None
    if "roadm" in doc:
        r = doc["roadm"]
        pm = {(e["in"], int(e["channel"])): e["out"] for e in r.get("port_map", [])}
        roadm = RoadmConfig(pm, float(r.get("insertion_loss_db", unit_losses.roadm_db)))
    return Topology.build(doc["hub"], links, doc.get("nodes", ()), fiber_kinds=kinds,
                          unit_losses=unit_losses, roadm=roadm)


def load_topology(path: str | Path) -> Topology:
    with open(path, encoding="utf-8") as fh:
        return topology_from_dict(json.load(fh))


def bundled_topology_path(name: str = "garching") -> Path:
    return Path(__file__).parent / "data" / f"{name}.topology"
