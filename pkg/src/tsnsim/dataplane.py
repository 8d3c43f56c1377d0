"""TSN data plane: tagged frames, links, gate control lists, flow tables and the
store-and-forward devices that move frames between end stations.

Every egress port owns eight FIFO queues (one per PCP).  A frame leaves a queue only
when its transmission-selection algorithm permits it, its gate is OPEN at the
device's local time, and the whole transmission fits before that gate closes.
"""
from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .kernel import S, Kernel, SimulationError

PREAMBLE_BYTES = 8
MIN_FRAME_BYTES = 64
MAX_TAGGED_FRAME_BYTES = 1522
NUM_PRIORITIES = 8
ALL_OPEN = (1 << NUM_PRIORITIES) - 1


class QueueOverflow(SimulationError):
    pass


class InvalidGcl(ValueError):
    pass


def parse_mac(text: str | int) -> int:
    if isinstance(text, int):
        return text
    parts = text.split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC address {text!r}")
    return int("".join(parts), 16)


def format_mac(mac: int) -> str:
    return ":".join(f"{(mac >> s) & 0xFF:02x}" for s in range(40, -8, -8))


@dataclass(eq=False)
class Frame:
    """A VLAN-tagged Ethernet frame.  ``size`` is the framed size in bytes
    (header, tag, payload and FCS) without the preamble."""

    src_mac: int
    dst_mac: int
    vlan_id: int
    pcp: int
    size: int
    flow_id: str = ""
    created_at: int = 0
    received_at: int | None = None
    uid: int = 0

    def __post_init__(self):
        if not 0 <= self.pcp < NUM_PRIORITIES:
            raise ValueError(f"pcp {self.pcp} outside 0..7")
        if not 0 <= self.vlan_id < 4096:
            raise ValueError(f"vlan id {self.vlan_id} is not 12-bit")
        if not MIN_FRAME_BYTES <= self.size <= MAX_TAGGED_FRAME_BYTES:
            raise ValueError(f"frame size {self.size} B outside {MIN_FRAME_BYTES}..{MAX_TAGGED_FRAME_BYTES}")

    @property
    def on_wire_size(self) -> int:
        return self.size + PREAMBLE_BYTES


@dataclass(frozen=True)
class Link:
    speed: int = 100_000_000  # bit/s
    length: int = 10  # m
    propagation_ns_per_m: int = 5

    @property
    def propagation_delay(self) -> int:
        return self.length * self.propagation_ns_per_m


def transmission_duration(frame: Frame | int, link: Link) -> int:
    """Serialization time in ns of ``frame`` (or a framed size in bytes), rounded up."""
    if link.speed <= 0:
        raise ValueError("link speed must be positive")
    size = frame if isinstance(frame, int) else frame.size
    bits = (size + PREAMBLE_BYTES) * 8
    return -(-bits * S // link.speed)


class GateState(enum.Enum):
    OPEN = "OPEN"
    CLOSED = "CLOSED"


@dataclass(frozen=True)
class GateControlList:
    cycle_duration: int
    entries: tuple[tuple[int, int], ...]
    base_offset: int = 0

    def __post_init__(self):
        entries = tuple((int(d), int(m)) for d, m in self.entries)
        object.__setattr__(self, "entries", entries)
        if self.cycle_duration <= 0:
            raise InvalidGcl("cycle duration must be positive")
        if not entries:
            raise InvalidGcl("GCL needs at least one entry")
        if any(d <= 0 for d, _ in entries):
            raise InvalidGcl("entry durations must be positive")
        if any(not 0 <= m <= ALL_OPEN for _, m in entries):
            raise InvalidGcl("gate mask must fit in 8 bits")
        if sum(d for d, _ in entries) != self.cycle_duration:
            raise InvalidGcl(
                f"entry durations sum to {sum(d for d, _ in entries)} ns, cycle is {self.cycle_duration} ns"
            )
        ends = tuple(itertools.accumulate(d for d, _ in entries))
        object.__setattr__(self, "_ends", ends)

    @classmethod
    def always_open(cls, cycle: int) -> "GateControlList":
        return cls(cycle, ((cycle, ALL_OPEN),))

    def _locate(self, t: int) -> tuple[int, int]:
        """(entry index, cycle start) for local time ``t``."""
        pos = (t - self.base_offset) % self.cycle_duration
        cycle_start = t - pos
        for i, end in enumerate(self._ends):
            if pos < end:
                return i, cycle_start
        raise AssertionError("unreachable")

    def is_open(self, pcp: int, t: int) -> bool:
        i, _ = self._locate(t)
        return bool(self.entries[i][1] >> pcp & 1)

    def open_until(self, pcp: int, t: int) -> int | None:
        """Local instant at which the gate for ``pcp`` next closes, seen from ``t``.

        Returns ``t`` when it is closed already and ``None`` when it never closes.
        """
        i, cycle_start = self._locate(t)
        if not self.entries[i][1] >> pcp & 1:
            return t
        n = len(self.entries)
        for k in range(1, n + 1):
            j = (i + k) % n
            wraps = (i + k) // n
            if not self.entries[j][1] >> pcp & 1:
                start_j = cycle_start + wraps * self.cycle_duration + (self._ends[j - 1] if j else 0)
                return start_j
        return None

    def next_change(self, t: int) -> int:
        """First entry boundary strictly after local time ``t``."""
        i, cycle_start = self._locate(t)
        return cycle_start + self._ends[i]

    def intervals(self, pcp: int) -> list[tuple[int, int]]:
        """OPEN intervals for ``pcp`` within one cycle, relative to ``base_offset``."""
        out = []
        start = 0
        for (d, m), end in zip(self.entries, self._ends):
            if m >> pcp & 1:
                if out and out[-1][1] == start:
                    out[-1] = (out[-1][0], end)
                else:
                    out.append((start, end))
            start = end
        return out


def gate_state_at(gcl: GateControlList | None, pcp: int, t_local: int) -> GateState:
    if gcl is None or gcl.is_open(pcp, t_local):
        return GateState.OPEN
    return GateState.CLOSED


@dataclass(frozen=True)
class Match:
    dst_mac: int | None = None
    vlan_id: int | None = None
    pcp: int | None = None

    def matches(self, frame: Frame) -> bool:
        return (
            (self.dst_mac is None or self.dst_mac == frame.dst_mac)
            and (self.vlan_id is None or self.vlan_id == frame.vlan_id)
            and (self.pcp is None or self.pcp == frame.pcp)
        )


@dataclass(frozen=True)
class Forward:
    port: int


@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class FlowEntry:
    match: Match
    action: Forward | Drop


@dataclass(frozen=True)
class FlowTable:
    entries: tuple[FlowEntry, ...] = ()

    def lookup(self, frame: Frame) -> Forward | Drop | None:
        for entry in self.entries:
            if entry.match.matches(frame):
                return entry.action
        return None


def always_permit(queue: Sequence[Frame], t_local: int) -> bool:
    return True


TRANSMISSION_SELECTION = {"strict": always_permit}


@dataclass(frozen=True)
class Transmission:
    device: str
    port: int
    pcp: int
    flow_id: str
    frame_uid: int
    start: int
    end: int
    start_local: int
    gcl: GateControlList | None


@dataclass(frozen=True)
class LatencySample:
    flow_id: str
    recv_time: int
    latency: int


class EgressPort:
    def __init__(self, owner: "Device", port_id: int, link: Link, capacity: int | None = None):
        self.owner = owner
        self.port_id = port_id
        self.link = link
        self.peer: tuple[Device, int] | None = None
        self.queues: list[deque[Frame]] = [deque() for _ in range(NUM_PRIORITIES)]
        self.tsa: list[Callable[[Sequence[Frame], int], bool]] = [always_permit] * NUM_PRIORITIES
        self.capacity = capacity
        self.busy = False
        self._wake = None

    @property
    def gcl(self) -> GateControlList | None:
        return self.owner.gcl_for(self.port_id)

    def queued(self) -> int:
        return sum(len(q) for q in self.queues)

    def enqueue(self, frame: Frame) -> None:
        q = self.queues[frame.pcp]
        if self.capacity is not None and len(q) >= self.capacity:
            raise QueueOverflow(f"{self.owner.name} port {self.port_id} queue {frame.pcp} is full")
        q.append(frame)
        if not self.busy:
            self.kick()

    def kick(self) -> None:
        """Attempt a transmission now; if nothing qualifies, wake at the next gate change."""
        if self.busy:
            return
        kernel = self.owner.kernel
        Kernel.cancel(self._wake)
        self._wake = None
        t_local = kernel.local_time(self.owner.name)
        frame = select_frame(self, t_local)
        if frame is None:
            gcl = self.gcl
            if gcl is not None and self.queued():
                when = kernel.local_to_global(self.owner.name, gcl.next_change(t_local))
                self._wake = kernel.at(when, self.owner.name, self.kick, "gate")
            return
        self._transmit(frame, t_local)

    def _transmit(self, frame: Frame, t_local: int) -> None:
        kernel = self.owner.kernel
        net = self.owner.network
        duration = transmission_duration(frame, self.link)
        start = kernel.now
        self.busy = True
        net.on_wire += 1
        net.transmissions.append(
            Transmission(self.owner.name, self.port_id, frame.pcp, frame.flow_id, frame.uid,
                         start, start + duration, t_local, self.gcl)
        )
        kernel.at(start + duration, self.owner.name, lambda: self._done(frame), "tx-end")

    def _done(self, frame: Frame) -> None:
        kernel = self.owner.kernel
        self.busy = False
        peer, peer_port = self.peer
        kernel.at(kernel.now + self.link.propagation_delay, peer.name,
                  lambda: peer.receive(frame, peer_port), "rx")
        self.kick()


def select_frame(port: EgressPort, t_local: int) -> Frame | None:
    """Dequeue the head of the highest-priority eligible queue, if any."""
    gcl = port.gcl
    for pcp in range(NUM_PRIORITIES - 1, -1, -1):
        q = port.queues[pcp]
        if not q or not port.tsa[pcp](q, t_local):
            continue
        if gcl is not None:
            close = gcl.open_until(pcp, t_local)
            if close is not None and close - t_local < transmission_duration(q[0], port.link):
                continue
        return q.popleft()
    return None


class Device:
    def __init__(self, network: "Network", name: str, mac: int):
        self.network = network
        self.kernel = network.kernel
        self.name = name
        self.mac = mac
        self.ports: dict[int, EgressPort] = {}

    def add_port(self, link: Link) -> EgressPort:
        port = EgressPort(self, len(self.ports), link, self.network.queue_capacity)
        self.ports[port.port_id] = port
        return port

    def gcl_for(self, port_id: int) -> GateControlList | None:
        raise NotImplementedError

    def receive(self, frame: Frame, ingress_port: int) -> None:
        raise NotImplementedError


class EndStation(Device):
    def __init__(self, network, name, mac, gcl: GateControlList | None = None):
        super().__init__(network, name, mac)
        self.gcl = gcl

    def gcl_for(self, port_id):
        return self.gcl

    def send(self, frame: Frame) -> None:
        frame.created_at = self.kernel.now
        self.network.created += 1
        frame.uid = self.network.created
        self.ports[0].enqueue(frame)

    def receive(self, frame, ingress_port):
        self.network.on_wire -= 1
        if frame.dst_mac != self.mac:
            self.network.drop(self, frame)
            return
        frame.received_at = self.kernel.now
        self.network.record_latency(frame)


class Switch(Device):
    def __init__(self, network, name, mac, forwarding_delay: int, config=None):
        super().__init__(network, name, mac)
        self.forwarding_delay = forwarding_delay
        self.config = config
        self.gcl_history: dict[int, list[tuple[int, GateControlList | None]]] = {}

    def gcl_for(self, port_id):
        if self.config is None:
            return None
        return self.config.gcls.get(port_id)

    def install(self, config) -> None:
        """Swap the active configuration; ports re-evaluate their gates immediately."""
        self.config = config
        now = self.kernel.now
        for pid in self.ports:
            self.gcl_history.setdefault(pid, []).append((now, self.gcl_for(pid)))
        for port in self.ports.values():
            port.kick()

    def receive(self, frame, ingress_port):
        self.network.on_wire -= 1
        self.network.in_lookup += 1
        self.kernel.after(self.forwarding_delay, self.name, lambda: self.forward(frame, ingress_port), "lookup")

    def forward(self, frame: Frame, ingress_port: int) -> None:
        self.network.in_lookup -= 1
        action = self.config.flow_table.lookup(frame) if self.config is not None else None
        if isinstance(action, Forward) and action.port in self.ports:
            self.ports[action.port].enqueue(frame)
        else:
            self.network.drop(self, frame)


@dataclass
class TrafficGenerator:
    """Creates one frame per ``period`` on the sender's local clock, at instants
    congruent to ``offset`` modulo ``period`` in ``[start, stop)``."""

    station: EndStation
    flow_id: str
    dst_mac: int
    vlan_id: int
    pcp: int
    size: int
    period: int
    start: int
    stop: int
    offset: int = 0
    generated: int = 0

    def arm(self) -> None:
        first = self.start + (self.offset - self.start) % self.period
        self._schedule(first)

    def _schedule(self, t_local: int) -> None:
        if t_local >= self.stop:
            return
        kernel = self.station.kernel
        when = kernel.local_to_global(self.station.name, t_local)
        kernel.at(max(when, kernel.now), self.station.name, lambda: self._fire(t_local), "gen")

    def _fire(self, t_local: int) -> None:
        self.generated += 1
        st = self.station
        st.send(Frame(st.mac, self.dst_mac, self.vlan_id, self.pcp, self.size, self.flow_id))
        self._schedule(t_local + self.period)


class Network:
    def __init__(self, kernel: Kernel, record_from: int = 0, queue_capacity: int | None = None):
        self.kernel = kernel
        self.record_from = record_from
        self.queue_capacity = queue_capacity
        self.devices: dict[str, Device] = {}
        self.links: list[tuple[str, int, str, int, Link]] = []
        self.generators: list[TrafficGenerator] = []
        self.transmissions: list[Transmission] = []
        self.samples: dict[str, list[LatencySample]] = {}
        self.drops: dict[str, int] = {}
        self.created = 0
        self.received = 0
        self.dropped = 0
        self.on_wire = 0
        self.in_lookup = 0

    def add(self, device: Device) -> Device:
        if device.name in self.devices:
            raise ValueError(f"duplicate device {device.name}")
        self.devices[device.name] = device
        return device

    def connect(self, a: str, b: str, link: Link) -> tuple[int, int]:
        da, db = self.devices[a], self.devices[b]
        pa, pb = da.add_port(link), db.add_port(link)
        pa.peer = (db, pb.port_id)
        pb.peer = (da, pa.port_id)
        self.links.append((a, pa.port_id, b, pb.port_id, link))
        return pa.port_id, pb.port_id

    def neighbors(self, name: str) -> Iterable[tuple[int, str]]:
        for pid, port in self.devices[name].ports.items():
            yield pid, port.peer[0].name

    def record_latency(self, frame: Frame) -> LatencySample:
        self.received += 1
        sample = LatencySample(frame.flow_id, frame.received_at, frame.received_at - frame.created_at)
        if frame.received_at >= self.record_from:
            self.samples.setdefault(frame.flow_id, []).append(sample)
        return sample

    def drop(self, device: Device, frame: Frame) -> None:
        self.dropped += 1
        self.drops[device.name] = self.drops.get(device.name, 0) + 1

    def queued(self) -> int:
        return sum(p.queued() for d in self.devices.values() for p in d.ports.values())

    def in_flight(self) -> int:
        return self.queued() + self.on_wire + self.in_lookup


def audit_gates(network: Network, strict: bool = False) -> list[Transmission]:
    """Transmissions that start in, or run into, a CLOSED interval of their own gate.

    Each transmission is replayed against the GCL that was active when it started.
    With ``strict``, the remainder of the frame is also replayed against every GCL
    installed on that port while the frame was on the wire.
    """
    bad = []
    kernel = network.kernel
    for tx in network.transmissions:
        offset = kernel.clock(tx.device).offset
        end_local = tx.end + offset
        checks = [(tx.start_local, tx.gcl)]
        if strict:
            dev = network.devices[tx.device]
            for t, g in getattr(dev, "gcl_history", {}).get(tx.port, []):
                if tx.start < t < tx.end:
                    checks.append((t + offset, g))
        for t_local, gcl in checks:
            if gcl is None:
                continue
            close = gcl.open_until(tx.pcp, t_local)
            if close is not None and close < end_local:
                bad.append(tx)
                break
    return bad
