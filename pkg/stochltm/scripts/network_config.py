"""
Scenario configuration: links, nodes, demand profiles, signal settings.

Scenario files are JSON documents with top-level keys `links`, `nodes`,
`demand`, `delta_s`, `horizon_s`, `output_stride_s` and an optional
`signals` block used by signal optimization.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

from .errors import ConfigurationError
from .link_model import LinkParams, compute_geometry
from .node_model import MAX_DOWNSTREAM_LINKS, NodeSpec

PROBABILITY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DemandSegment:
    start: float
    end: float
    rate: float


@dataclass(frozen=True)
class PhaseSpec:
    phase_id: str
    links: Tuple[str, ...]


@dataclass(frozen=True)
class IntersectionSpec:
    """
    Fixed-time controlled intersection.

    Attributes:
        intersection_id: Identifier
        phases: Endogenous phases, each serving a set of links
        available_ratio: b_d, ratio of available cycle time to total cycle time
        fixed_green: e_i per signalized link, ratio of fixed green time to cycle time
        cycle: Cycle time C [s]
    """

    intersection_id: str
    phases: Tuple[PhaseSpec, ...]
    available_ratio: float
    fixed_green: Mapping[str, float] = field(default_factory=dict)
    cycle: float = 90.0

    def signalized_links(self) -> Tuple[str, ...]:
        seen: List[str] = []
        for phase in self.phases:
            for link_id in phase.links:
                if link_id not in seen:
                    seen.append(link_id)
        for link_id in self.fixed_green:
            if link_id not in seen:
                seen.append(link_id)
        return tuple(seen)


@dataclass(frozen=True)
class SignalSettings:
    intersections: Tuple[IntersectionSpec, ...]
    saturation_flow: float = 0.5
    min_green: float = 4.0
    objective_minutes: int = 15

    def lower_bound(self, intersection: IntersectionSpec) -> float:
        """Minimum green split x_LB as a ratio of the cycle."""
        return self.min_green / intersection.cycle


@dataclass(frozen=True)
class NetworkConfig:
    """A runnable network scenario."""

    links: Mapping[str, LinkParams]
    nodes: Tuple[NodeSpec, ...]
    demand: Mapping[str, Tuple[DemandSegment, ...]]
    delta: float
    horizon: float
    output_stride: float
    signals: Optional[SignalSettings] = None
    name: str = ""

    def link_ids(self) -> List[str]:
        return list(self.links.keys())

    def entry_rate(self, link_id: str, t: float) -> float:
        """Exogenous entry rate gamma of a link at time t [veh/s]."""
        segments = self.demand.get(link_id)
        if not segments:
            return self.links[link_id].entry_rate
        for segment in segments:
            if segment.start <= t < segment.end:
                return segment.rate
        if t >= segments[-1].end:
            return segments[-1].rate
        return 0.0

    def max_entry_rate(self, link_id: str) -> float:
        segments = self.demand.get(link_id)
        if not segments:
            return self.links[link_id].entry_rate
        return max(segment.rate for segment in segments)

    def source_links(self) -> List[str]:
        return [link_id for link_id in self.links if self.max_entry_rate(link_id) > 0.0]

    def exit_node(self, link_id: str) -> Optional[NodeSpec]:
        """Node at the downstream end of a link (the link is in its M)."""
        for node in self.nodes:
            if link_id in node.upstream:
                return node
        return None

    def entry_node(self, link_id: str) -> Optional[NodeSpec]:
        """Node at the upstream end of a link (the link is in its N)."""
        for node in self.nodes:
            if link_id in node.downstream:
                return node
        return None

    def with_overrides(
        self,
        *,
        horizon: Optional[float] = None,
        output_stride: Optional[float] = None,
        delta: Optional[float] = None,
        mixture_weight: Optional[float] = None,
        service_rates: Optional[Mapping[str, float]] = None,
    ) -> "NetworkConfig":
        links = dict(self.links)
        if mixture_weight is not None:
            links = {k: replace(v, mixture_weight=float(mixture_weight)) for k, v in links.items()}
        if service_rates:
            for link_id, mu in service_rates.items():
                links[link_id] = replace(links[link_id], service_rate=float(mu))
        return replace(
            self,
            links=links,
            horizon=self.horizon if horizon is None else float(horizon),
            output_stride=self.output_stride if output_stride is None else float(output_stride),
            delta=self.delta if delta is None else float(delta),
        )

    def steps(self) -> int:
        return int(round(self.horizon / self.delta))

    def stride_steps(self) -> int:
        return max(1, int(round(self.output_stride / self.delta)))


def _require(data: Mapping, key: str, where: str):
    if key not in data:
        raise ConfigurationError(f"missing '{key}' in {where}")
    return data[key]


def _link_from_dict(link_id: str, data: Mapping) -> LinkParams:
    where = f"link {link_id}"
    weight = data.get("mixture_weight")
    try:
        return LinkParams(
            length=float(_require(data, "length_km", where)),
            free_flow_speed=float(_require(data, "free_flow_speed_kmps", where)),
            backward_wave_speed=float(_require(data, "backward_wave_speed_kmps", where)),
            jam_density=float(_require(data, "jam_density_vpkm", where)),
            flow_capacity=float(_require(data, "flow_capacity_vps", where)),
            service_rate=float(_require(data, "service_rate_vps", where)),
            entry_rate=float(data.get("entry_rate_vps", 0.0)),
            mixture_weight=None if weight is None else float(weight),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc


def _node_from_dict(data: Mapping) -> NodeSpec:
    node_id = str(data.get("id", ""))
    turning = {
        str(i): {str(j): float(p) for j, p in dict(row).items()} for i, row in dict(data.get("turning", {})).items()
    }
    return NodeSpec(
        node_id=node_id,
        upstream=tuple(str(x) for x in data.get("upstream", [])),
        downstream=tuple(str(x) for x in data.get("downstream", [])),
        turning=turning,
    )


def _signals_from_dict(data: Mapping) -> SignalSettings:
    intersections = []
    for item in _require(data, "intersections", "signals"):
        phases = tuple(
            PhaseSpec(phase_id=str(p.get("id", "")), links=tuple(str(x) for x in p.get("links", [])))
            for p in item.get("phases", [])
        )
        intersections.append(
            IntersectionSpec(
                intersection_id=str(item.get("id", "")),
                phases=phases,
                available_ratio=float(item.get("available_ratio", 1.0)),
                fixed_green={str(k): float(v) for k, v in dict(item.get("fixed_green", {})).items()},
                cycle=float(item.get("cycle_s", 90.0)),
            )
        )
    return SignalSettings(
        intersections=tuple(intersections),
        saturation_flow=float(data.get("saturation_flow_vps", 0.5)),
        min_green=float(data.get("min_green_s", 4.0)),
        objective_minutes=int(data.get("objective_minutes", 15)),
    )


def network_config_from_dict(data: Mapping, *, name: str = "") -> NetworkConfig:
    try:
        links = {str(k): _link_from_dict(str(k), v) for k, v in dict(_require(data, "links", "scenario")).items()}
        nodes = tuple(_node_from_dict(n) for n in data.get("nodes", []))
        demand = {
            str(link_id): tuple(
                DemandSegment(start=float(s["start_s"]), end=float(s["end_s"]), rate=float(s["rate_vps"]))
                for s in segments
            )
            for link_id, segments in dict(data.get("demand", {})).items()
        }
        signals = _signals_from_dict(data["signals"]) if data.get("signals") else None
        return NetworkConfig(
            links=links,
            nodes=nodes,
            demand=demand,
            delta=float(_require(data, "delta_s", "scenario")),
            horizon=float(_require(data, "horizon_s", "scenario")),
            output_stride=float(_require(data, "output_stride_s", "scenario")),
            signals=signals,
            name=str(data.get("name", name)),
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigurationError(f"malformed scenario: {exc}") from exc


def load_network_config(path: Path) -> NetworkConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"scenario file not found: {path}")
    try:
        # utf-8-sig also accepts files saved with a BOM.
        data = json.loads(path.read_text(encoding="utf-8-sig"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"scenario file {path} is not valid JSON: {exc}") from exc
    return network_config_from_dict(data, name=path.stem)


def network_config_to_dict(config: NetworkConfig) -> dict:
    links = {}
    for link_id, p in config.links.items():
        links[link_id] = {
            "length_km": p.length,
            "free_flow_speed_kmps": p.free_flow_speed,
            "backward_wave_speed_kmps": p.backward_wave_speed,
            "jam_density_vpkm": p.jam_density,
            "flow_capacity_vps": p.flow_capacity,
            "service_rate_vps": p.service_rate,
            "entry_rate_vps": p.entry_rate,
            "mixture_weight": p.mixture_weight,
        }
    payload = {
        "name": config.name,
        "links": links,
        "nodes": [
            {
                "id": n.node_id,
                "upstream": list(n.upstream),
                "downstream": list(n.downstream),
                "turning": {i: dict(row) for i, row in n.turning.items()},
            }
            for n in config.nodes
        ],
        "demand": {
            link_id: [{"start_s": s.start, "end_s": s.end, "rate_vps": s.rate} for s in segments]
            for link_id, segments in config.demand.items()
        },
        "delta_s": config.delta,
        "horizon_s": config.horizon,
        "output_stride_s": config.output_stride,
    }
    if config.signals is not None:
        s = config.signals
        payload["signals"] = {
            "saturation_flow_vps": s.saturation_flow,
            "min_green_s": s.min_green,
            "objective_minutes": s.objective_minutes,
            "intersections": [
                {
                    "id": d.intersection_id,
                    "available_ratio": d.available_ratio,
                    "cycle_s": d.cycle,
                    "fixed_green": dict(d.fixed_green),
                    "phases": [{"id": ph.phase_id, "links": list(ph.links)} for ph in d.phases],
                }
                for d in s.intersections
            ],
        }
    return payload


def save_network_config(config: NetworkConfig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(network_config_to_dict(config), indent=2, sort_keys=True), encoding="utf-8")
    return path


def validate_config(config: NetworkConfig) -> List[str]:
    """
    Collect every reason the scenario cannot be run. An empty list means runnable.
    """
    problems: List[str] = []
    if not config.delta > 0:
        problems.append(f"time step delta_s must be positive, got {config.delta}")
    if not config.horizon > 0:
        problems.append(f"horizon_s must be positive, got {config.horizon}")
    if not config.output_stride > 0:
        problems.append(f"output_stride_s must be positive, got {config.output_stride}")
    elif config.delta > 0 and config.output_stride < config.delta:
        problems.append(f"output_stride_s {config.output_stride} is shorter than delta_s {config.delta}")

    if config.delta > 0:
        for link_id, params in config.links.items():
            try:
                compute_geometry(params, config.delta)
            except ConfigurationError as exc:
                problems.append(f"link {link_id}: {exc}")

    problems.extend(_node_problems(config))
    problems.extend(_demand_problems(config))
    if config.signals is not None:
        problems.extend(_signal_problems(config))
    return problems


def _node_problems(config: NetworkConfig) -> List[str]:
    problems: List[str] = []
    upstream_owner: Dict[str, str] = {}
    downstream_owner: Dict[str, str] = {}
    for node in config.nodes:
        label = f"node {node.node_id}"
        for link_id in node.upstream + node.downstream:
            if link_id not in config.links:
                problems.append(f"{label} references unknown link {link_id}")
        overlap = set(node.upstream) & set(node.downstream)
        if overlap:
            problems.append(f"{label} lists links {sorted(overlap)} both upstream and downstream")
        if len(node.downstream) > MAX_DOWNSTREAM_LINKS:
            problems.append(
                f"{label} has {len(node.downstream)} downstream links (max {MAX_DOWNSTREAM_LINKS}); split the node"
            )
        for link_id in node.upstream:
            if link_id in upstream_owner:
                problems.append(f"link {link_id} enters both node {upstream_owner[link_id]} and {label}")
            upstream_owner[link_id] = node.node_id
        for link_id in node.downstream:
            if link_id in downstream_owner:
                problems.append(f"link {link_id} leaves both node {downstream_owner[link_id]} and {label}")
            downstream_owner[link_id] = node.node_id
        for i, row in node.turning.items():
            if i not in node.upstream:
                problems.append(f"{label} has turning probabilities for link {i}, which is not upstream of it")
                continue
            for j, p in row.items():
                if j not in node.downstream:
                    problems.append(f"{label} turns link {i} into link {j}, which is not downstream of it")
                if p < 0:
                    problems.append(f"{label} has negative turning probability {p} from link {i} to {j}")
            total = math.fsum(row.values())
            if total > 1.0 + PROBABILITY_TOLERANCE:
                problems.append(f"turning probabilities of link {i} at {label} sum to {total:g} > 1")
    return problems


def _demand_problems(config: NetworkConfig) -> List[str]:
    problems: List[str] = []
    for link_id, segments in config.demand.items():
        if link_id not in config.links:
            problems.append(f"demand given for unknown link {link_id}")
            continue
        ordered = sorted(segments, key=lambda s: s.start)
        cursor = 0.0
        for segment in ordered:
            if segment.rate < 0:
                problems.append(f"demand for link {link_id} has negative rate {segment.rate}")
            if segment.end <= segment.start:
                problems.append(f"demand for link {link_id} has empty segment [{segment.start:g}, {segment.end:g})")
            if segment.start > cursor + PROBABILITY_TOLERANCE:
                problems.append(f"demand for link {link_id} leaves [{cursor:g}, {segment.start:g}) uncovered")
            elif segment.start < cursor - PROBABILITY_TOLERANCE:
                problems.append(f"demand for link {link_id} overlaps itself at [{segment.start:g}, {cursor:g})")
            cursor = max(cursor, segment.end)
        if cursor < config.horizon - PROBABILITY_TOLERANCE:
            problems.append(f"demand for link {link_id} leaves [{cursor:g}, {config.horizon:g}) uncovered")
    return problems


def _signal_problems(config: NetworkConfig) -> List[str]:
    problems: List[str] = []
    signals = config.signals
    assert signals is not None
    if signals.saturation_flow <= 0:
        problems.append(f"saturation flow must be positive, got {signals.saturation_flow}")
    if signals.objective_minutes * 60.0 > config.horizon + PROBABILITY_TOLERANCE:
        problems.append(
            f"objective window of {signals.objective_minutes} min exceeds the horizon of {config.horizon:g} s"
        )
    for d in signals.intersections:
        label = f"intersection {d.intersection_id}"
        if not 0.0 < d.available_ratio <= 1.0:
            problems.append(f"{label} available ratio {d.available_ratio} outside (0, 1]")
        if d.cycle <= 0:
            problems.append(f"{label} cycle must be positive, got {d.cycle}")
            continue
        if not d.phases:
            problems.append(f"{label} has no endogenous phases")
        if d.available_ratio <= len(d.phases) * signals.lower_bound(d):
            problems.append(
                f"{label} cannot give {len(d.phases)} phases the minimum green of {signals.min_green:g} s "
                f"within available ratio {d.available_ratio:g}"
            )
        seen: Dict[str, str] = {}
        for phase in d.phases:
            for link_id in phase.links:
                if link_id not in config.links:
                    problems.append(f"{label} phase {phase.phase_id} serves unknown link {link_id}")
                if link_id in seen:
                    problems.append(f"{label} phases {seen[link_id]} and {phase.phase_id} both serve link {link_id}")
                seen[link_id] = phase.phase_id
        for link_id, ratio in d.fixed_green.items():
            if link_id not in config.links:
                problems.append(f"{label} fixed green given for unknown link {link_id}")
            if not 0.0 <= ratio <= 1.0:
                problems.append(f"{label} fixed green ratio {ratio} of link {link_id} outside [0, 1]")
        # Largest green a link can get: every phase not serving it sits at the minimum.
        for link_id in d.signalized_links():
            serving = sum(1 for phase in d.phases if link_id in phase.links)
            most = 0.0
            if serving:
                most = d.available_ratio - (len(d.phases) - serving) * signals.lower_bound(d)
            total = most + float(d.fixed_green.get(link_id, 0.0))
            if total > 1.0 + PROBABILITY_TOLERANCE:
                problems.append(
                    f"{label} can give link {link_id} a green ratio of {total:g} > 1 "
                    f"(phase splits plus fixed green)"
                )
    return problems


def require_runnable(config: NetworkConfig) -> None:
    """Raise ConfigurationError listing every problem validate_config finds."""
    problems = validate_config(config)
    if problems:
        raise ConfigurationError("; ".join(problems))
