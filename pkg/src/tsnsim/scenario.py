"""Scenario description, YAML serialization and the two-switch case study.

Scenario files are YAML with explicit units on every quantity::

    horizon: 500ms
    flows:
      - {id: flow1, sender: node1, receiver: node3, pcp: 7, vlan: 1,
         size: 1522B, period: 1ms, start: 100ms, offset: 0ns}

Durations accept ``ns``, ``us``, ``ms`` and ``s``; sizes take a ``B`` suffix;
link speeds take ``bps``, ``kbps``, ``Mbps`` or ``Gbps``.
"""
from __future__ import annotations

import enum
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dataplane import (
    ALL_OPEN,
    FlowEntry,
    Forward,
    GateControlList,
    Link,
    Match,
    format_mac,
    parse_mac,
    transmission_duration,
)
from .kernel import MS, US, format_duration, parse_duration
from .netconf import AddFlowEntry, ReplaceGcl


class ScenarioInvalid(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


class Mode(str, enum.Enum):
    TRANSACTIONAL = "transactional"
    NON_TRANSACTIONAL = "non-transactional"


_SPEED = {"bps": 1, "kbps": 10**3, "Mbps": 10**6, "Gbps": 10**9}


def parse_speed(text) -> int:
    if isinstance(text, int):
        return text
    m = re.fullmatch(r"\s*(\d+)\s*(bps|kbps|Mbps|Gbps)\s*", str(text))
    if not m:
        raise ValueError(f"not a link speed: {text!r}")
    return int(m.group(1)) * _SPEED[m.group(2)]


def format_speed(bps: int) -> str:
    for unit in ("Gbps", "Mbps", "kbps"):
        if bps % _SPEED[unit] == 0:
            return f"{bps // _SPEED[unit]}{unit}"
    return f"{bps}bps"


def parse_size(text) -> int:
    if isinstance(text, int):
        return text
    m = re.fullmatch(r"\s*(\d+)\s*B\s*", str(text))
    if not m:
        raise ValueError(f"not a byte size: {text!r}")
    return int(m.group(1))


def parse_length(text) -> int:
    if isinstance(text, int):
        return text
    m = re.fullmatch(r"\s*(\d+)\s*m\s*", str(text))
    if not m:
        raise ValueError(f"not a length: {text!r}")
    return int(m.group(1))


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    kind: str  # "switch" | "station"
    mac: int


@dataclass(frozen=True)
class FlowSpec:
    flow_id: str
    sender: str
    receiver: str
    pcp: int
    vlan_id: int
    size: int
    period: int
    start: int
    offset: int = 0


@dataclass(frozen=True)
class Admission:
    """Admit ``flow_id`` into the network schedule, starting at ``trigger``."""

    flow_id: str
    trigger: int


@dataclass(frozen=True)
class ControlParams:
    d_ctrl_min: int = 50 * US
    d_ctrl_max: int = 250 * US
    p_proc: int = 10 * US
    apply_margin: int = 10 * US
    phase_timeout: int = 10 * MS
    align_to_period: bool = True


@dataclass(frozen=True)
class Reconfiguration:
    name: str
    trigger: int
    changesets: dict
    transactional: bool


@dataclass
class Scenario:
    name: str = "scenario"
    mode: Mode = Mode.TRANSACTIONAL
    seed: int = 1
    horizon: int = 500 * MS
    record_from: int = 50 * MS
    cycle: int = 1 * MS
    sync_bound: int = 500
    clock_error: str = "switches"  # which devices get a random clock offset: switches | all | none
    link: Link = field(default_factory=Link)
    forwarding_delay: int = 3 * US
    slot_margin: int = 1 * US
    guard_band: int | None = None  # None: one maximum-size frame
    tolerance: int = 1 * US
    direct_spacing: int = 2 * MS
    control: ControlParams = field(default_factory=ControlParams)
    devices: list[DeviceSpec] = field(default_factory=list)
    links: list[tuple[str, str]] = field(default_factory=list)
    flows: list[FlowSpec] = field(default_factory=list)
    admissions: list[Admission] = field(default_factory=list)

    # -- lookup helpers ------------------------------------------------------
    def device(self, name: str) -> DeviceSpec:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(name)

    def flow(self, flow_id: str) -> FlowSpec:
        for f in self.flows:
            if f.flow_id == flow_id:
                return f
        raise KeyError(flow_id)

    @property
    def switches(self) -> list[str]:
        return [d.name for d in self.devices if d.kind == "switch"]

    @property
    def stations(self) -> list[str]:
        return [d.name for d in self.devices if d.kind == "station"]

    def ports(self) -> dict[tuple[str, str], int]:
        """(device, neighbour) -> port id, numbered in link order per device."""
        count: dict[str, int] = {}
        out = {}
        for a, b in self.links:
            for x, y in ((a, b), (b, a)):
                out[(x, y)] = count.get(x, 0)
                count[x] = out[(x, y)] + 1
        return out

    def route(self, flow: FlowSpec) -> list[str]:
        adj: dict[str, list[str]] = {}
        for a, b in self.links:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        prev = {flow.sender: None}
        todo = deque([flow.sender])
        while todo:
            u = todo.popleft()
            if u == flow.receiver:
                break
            for v in adj.get(u, []):
                if v not in prev and (v == flow.receiver or self.device(v).kind == "switch"):
                    prev[v] = u
                    todo.append(v)
        if flow.receiver not in prev:
            raise ScenarioInvalid([f"no route for {flow.flow_id} from {flow.sender} to {flow.receiver}"])
        path = [flow.receiver]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        return path[::-1]

    # -- analytic timing --------------------------------------------------------
    def hop_offsets(self, flow: FlowSpec) -> list[tuple[str, int]]:
        """(device, delay after creation at which the frame is queued for egress there)
        for every transmitting device on the route, assuming no waiting."""
        path = self.route(flow)
        tx = transmission_duration(flow.size, self.link)
        out = [(path[0], 0)]
        t = 0
        for dev in path[1:-1]:
            t += tx + self.link.propagation_delay + self.forwarding_delay
            out.append((dev, t))
        return out

    def baseline_latency(self, flow: FlowSpec) -> int:
        """Transmission plus propagation per link, plus forwarding delay per switch."""
        path = self.route(flow)
        hops = len(path) - 1
        tx = transmission_duration(flow.size, self.link)
        return hops * (tx + self.link.propagation_delay) + (hops - 1) * self.forwarding_delay

    def baselines(self) -> dict[str, int]:
        return {f.flow_id: self.baseline_latency(f) for f in self.flows}

    def slot_gcl(self, device: str, flows: list[FlowSpec]) -> GateControlList:
        """GCL for an egress port carrying ``flows``: one scheduled slot covering their
        zero-wait transmissions (k frames back to back plus ``slot_margin``, split
        evenly before and after) preceded by an all-closed guard band."""
        if not flows:
            return GateControlList.always_open(self.cycle)
        spans = []
        mask = 0
        for f in flows:
            rel = dict(self.hop_offsets(f))[device]
            start = (f.offset + rel) % self.cycle
            spans.append((start, start + transmission_duration(f.size, self.link)))
            mask |= 1 << f.pcp
        half = self.slot_margin // 2
        slot_start = min(s for s, _ in spans) - half
        slot_len = max(e for _, e in spans) + (self.slot_margin - half) - slot_start
        guard = self.guard_band if self.guard_band is not None else transmission_duration(1522, self.link)
        guard = min(guard, self.cycle - slot_len)
        rest = self.cycle - guard - slot_len
        if rest < 0:
            raise ScenarioInvalid([f"slot on {device} ({slot_len} ns) does not fit in the cycle"])
        entries = [(d, m) for d, m in ((guard, 0), (slot_len, mask), (rest, ALL_OPEN & ~mask)) if d > 0]
        return GateControlList(self.cycle, tuple(entries), (slot_start - guard) % self.cycle)

    def station_gcl(self, station: str) -> GateControlList:
        return self.slot_gcl(station, [f for f in self.flows if f.sender == station])

    # -- changes ---------------------------------------------------------------
    def _egress(self, flow: FlowSpec) -> list[tuple[str, int]]:
        path = self.route(flow)
        ports = self.ports()
        return [(path[i], ports[(path[i], path[i + 1])]) for i in range(1, len(path) - 1)]

    def flow_changes(self, flow: FlowSpec) -> dict[str, tuple]:
        dst = self.device(flow.receiver).mac
        match = Match(dst_mac=dst, vlan_id=flow.vlan_id, pcp=flow.pcp)
        return {sw: (AddFlowEntry(FlowEntry(match, Forward(port))),) for sw, port in self._egress(flow)}

    def gate_changes(self, flow: FlowSpec, admitted: list[FlowSpec]) -> dict[str, tuple]:
        out = {}
        for sw, port in self._egress(flow):
            carried = [f for f in [*admitted, flow] if (sw, port) in self._egress(f)]
            out[sw] = (ReplaceGcl.of(port, self.slot_gcl(sw, carried)),)
        return out

    def update_script(self) -> list[Reconfiguration]:
        """Reconfiguration steps for this scenario's mode.

        Transactional mode bundles the flow-table and GCL changes of one admission
        into a single transaction (T1, T2, ...).  Non-transactional mode issues
        them as two independent updates (U1, U2, ...) ``direct_spacing`` apart.
        """
        script = []
        admitted: list[FlowSpec] = []
        for i, adm in enumerate(self.admissions):
            flow = self.flow(adm.flow_id)
            fc = self.flow_changes(flow)
            gc = self.gate_changes(flow, admitted)
            if self.mode is Mode.TRANSACTIONAL:
                merged = {sw: fc.get(sw, ()) + gc.get(sw, ()) for sw in {*fc, *gc}}
                script.append(Reconfiguration(f"T{i + 1}", adm.trigger, dict(sorted(merged.items())), True))
            else:
                script.append(Reconfiguration(f"U{2 * i + 1}", adm.trigger, fc, False))
                script.append(Reconfiguration(f"U{2 * i + 2}", adm.trigger + self.direct_spacing, gc, False))
            admitted.append(flow)
        return script

    # -- validation ------------------------------------------------------------
    def validate(self) -> None:
        problems = []
        names = [d.name for d in self.devices]
        if len(set(names)) != len(names):
            problems.append("duplicate device names")
        macs = [d.mac for d in self.devices]
        if len(set(macs)) != len(macs):
            problems.append("duplicate MAC addresses")
        known = set(names)
        for a, b in self.links:
            if a not in known or b not in known:
                problems.append(f"link {a}-{b} references an unknown device")
        for f in self.flows:
            for end in (f.sender, f.receiver):
                if end not in known:
                    problems.append(f"{f.flow_id} references unknown device {end}")
                elif self.device(end).kind != "station":
                    problems.append(f"{f.flow_id} endpoint {end} is not a station")
            if not 0 <= f.pcp <= 7:
                problems.append(f"{f.flow_id} pcp {f.pcp} outside 0..7")
            if f.period <= 0 or (self.horizon - self.record_from) % f.period:
                problems.append(f"{f.flow_id} period does not divide the recorded horizon")
        flow_ids = {f.flow_id for f in self.flows}
        last = -1
        for adm in self.admissions:
            if adm.flow_id not in flow_ids:
                problems.append(f"admission of unknown flow {adm.flow_id}")
            if adm.trigger <= last:
                problems.append("admission triggers must be strictly increasing")
            last = adm.trigger
        if self.mode is Mode.NON_TRANSACTIONAL:
            ts = [adm.trigger + d for adm in self.admissions for d in (0, self.direct_spacing)]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                problems.append("update triggers must be strictly increasing")
        if not problems:
            for f in self.flows:
                try:
                    self.route(f)
                except ScenarioInvalid as exc:
                    problems.extend(exc.problems)
        if problems:
            raise ScenarioInvalid(problems)

    # -- serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        d = format_duration
        c = self.control
        return {
            "name": self.name,
            "mode": self.mode.value,
            "seed": self.seed,
            "horizon": d(self.horizon),
            "record_from": d(self.record_from),
            "cycle": d(self.cycle),
            "sync_bound": d(self.sync_bound),
            "clock_error": self.clock_error,
            "link": {
                "speed": format_speed(self.link.speed),
                "length": f"{self.link.length}m",
                "propagation": f"{self.link.propagation_ns_per_m}ns/m",
            },
            "forwarding_delay": d(self.forwarding_delay),
            "slot_margin": d(self.slot_margin),
            "guard_band": None if self.guard_band is None else d(self.guard_band),
            "tolerance": d(self.tolerance),
            "direct_spacing": d(self.direct_spacing),
            "control": {
                "d_ctrl_min": d(c.d_ctrl_min),
                "d_ctrl_max": d(c.d_ctrl_max),
                "p_proc": d(c.p_proc),
                "apply_margin": d(c.apply_margin),
                "phase_timeout": d(c.phase_timeout),
                "alignment": "period" if c.align_to_period else "none",
            },
            "devices": [{"name": x.name, "kind": x.kind, "mac": format_mac(x.mac)} for x in self.devices],
            "links": [[a, b] for a, b in self.links],
            "flows": [
                {
                    "id": f.flow_id, "sender": f.sender, "receiver": f.receiver, "pcp": f.pcp,
                    "vlan": f.vlan_id, "size": f"{f.size}B", "period": d(f.period),
                    "start": d(f.start), "offset": d(f.offset),
                }
                for f in self.flows
            ],
            "admissions": [{"flow": a.flow_id, "trigger": d(a.trigger)} for a in self.admissions],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        p = parse_duration
        try:
            link = raw.get("link", {})
            prop = str(link.get("propagation", "5ns/m"))
            m = re.fullmatch(r"\s*(\d+)\s*ns/m\s*", prop)
            if not m:
                raise ValueError(f"bad propagation {prop!r}")
            ctl = raw.get("control", {})
            defaults = ControlParams()
            control = ControlParams(
                d_ctrl_min=p(ctl.get("d_ctrl_min", defaults.d_ctrl_min)),
                d_ctrl_max=p(ctl.get("d_ctrl_max", defaults.d_ctrl_max)),
                p_proc=p(ctl.get("p_proc", defaults.p_proc)),
                apply_margin=p(ctl.get("apply_margin", defaults.apply_margin)),
                phase_timeout=p(ctl.get("phase_timeout", defaults.phase_timeout)),
                align_to_period=ctl.get("alignment", "period") == "period",
            )
            guard = raw.get("guard_band")
            sc = cls(
                name=raw.get("name", "scenario"),
                mode=Mode(raw.get("mode", Mode.TRANSACTIONAL.value)),
                seed=int(raw.get("seed", 1)),
                horizon=p(raw.get("horizon", "500ms")),
                record_from=p(raw.get("record_from", "50ms")),
                cycle=p(raw.get("cycle", "1ms")),
                sync_bound=p(raw.get("sync_bound", "500ns")),
                clock_error=raw.get("clock_error", "switches"),
                link=Link(parse_speed(link.get("speed", "100Mbps")), parse_length(link.get("length", "10m")),
                          int(m.group(1))),
                forwarding_delay=p(raw.get("forwarding_delay", "3us")),
                slot_margin=p(raw.get("slot_margin", "1us")),
                guard_band=None if guard is None else p(guard),
                tolerance=p(raw.get("tolerance", "1us")),
                direct_spacing=p(raw.get("direct_spacing", "2ms")),
                control=control,
                devices=[DeviceSpec(x["name"], x["kind"], parse_mac(x["mac"])) for x in raw.get("devices", [])],
                links=[(a, b) for a, b in raw.get("links", [])],
                flows=[
                    FlowSpec(f["id"], f["sender"], f["receiver"], int(f.get("pcp", 7)), int(f["vlan"]),
                             parse_size(f.get("size", "1522B")), p(f.get("period", "1ms")),
                             p(f.get("start", "0ns")), p(f.get("offset", "0ns")))
                    for f in raw.get("flows", [])
                ],
                admissions=[Admission(a["flow"], p(a["trigger"])) for a in raw.get("admissions", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioInvalid([f"malformed scenario: {exc}"]) from exc
        if sc.clock_error not in ("switches", "all", "none"):
            raise ScenarioInvalid([f"clock_error must be switches, all or none, not {sc.clock_error!r}"])
        return sc

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Scenario":
        raw = yaml.safe_load(text)
        if not isinstance(raw, dict):
            raise ScenarioInvalid(["scenario file must contain a mapping"])
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.loads(Path(path).read_text())


def build_case_study(mode: Mode | str = Mode.TRANSACTIONAL, seed: int = 1) -> Scenario:
    """Four stations on two switches; three real-time flows to node3, admitted 100 ms apart.

    Slot phases are chosen so that every flow crosses every hop without waiting
    once admitted: node1 transmits at cycle start, node4 right behind node1 on
    the trunk, and node2's frames reach switch2's egress just before flow 1's.
    """
    mode = Mode(mode)
    tx = transmission_duration(1522, Link())
    sw_ingress = tx + Link().propagation_delay + 3 * US  # creation -> first switch egress
    flow1_at_sw2 = 2 * sw_ingress
    devices = [
        DeviceSpec("switch1", "switch", parse_mac("02:00:00:00:00:01")),
        DeviceSpec("switch2", "switch", parse_mac("02:00:00:00:00:02")),
        DeviceSpec("node1", "station", parse_mac("02:00:00:00:01:01")),
        DeviceSpec("node2", "station", parse_mac("02:00:00:00:01:02")),
        DeviceSpec("node3", "station", parse_mac("02:00:00:00:01:03")),
        DeviceSpec("node4", "station", parse_mac("02:00:00:00:01:04")),
    ]
    links = [("node1", "switch1"), ("node4", "switch1"), ("switch1", "switch2"),
             ("node2", "switch2"), ("node3", "switch2")]
    flows = [
        FlowSpec("flow1", "node1", "node3", 7, 1, 1522, 1 * MS, 100 * MS, 0),
        FlowSpec("flow2", "node2", "node3", 7, 2, 1522, 1 * MS, 200 * MS, flow1_at_sw2 - tx - sw_ingress),
        FlowSpec("flow3", "node4", "node3", 7, 3, 1522, 1 * MS, 300 * MS, tx),
    ]
    admissions = [Admission(f.flow_id, f.start + 2 * MS) for f in flows]
    return Scenario(name="case-study", mode=mode, seed=seed, devices=devices, links=links,
                    flows=flows, admissions=admissions)
