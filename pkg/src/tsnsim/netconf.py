"""Per-switch configuration agent: running/candidate datastores, exclusive locks,
edits and a commit that executes at a scheduled local timestamp.

Protocol operations are modelled as typed messages over a reliable, ordered
control network.  The ``handle_*`` methods are the agent's synchronous state
machine; :meth:`Agent.receive` wraps them with processing delay and replies.
"""
from __future__ import annotations

import enum
import hashlib
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .dataplane import FlowEntry, FlowTable, Forward, GateControlList, InvalidGcl
from .kernel import US, Event, Kernel

log = logging.getLogger(__name__)

DEFAULT_APPLY_MARGIN = 10 * US
DEFAULT_P_PROC = 10 * US
DEFAULT_D_CTRL_MAX = 250 * US


class Store(str, enum.Enum):
    RUNNING = "running"
    CANDIDATE = "candidate"


class Reason(str, enum.Enum):
    LOCK_DENIED = "LockDenied"
    NO_LOCK = "NoLock"
    NOT_HOLDER = "NotHolder"
    CANDIDATE_EXISTS = "CandidateExists"
    NO_CANDIDATE = "NoCandidate"
    INVALID_EDIT = "InvalidEdit"
    COPY_FAILED = "CopyFailed"
    TIMESTAMP_IN_PAST = "TimestampInPast"
    NOTHING_PREPARED = "NothingPrepared"
    COMMIT_PENDING = "CommitPending"
    INJECTED = "InjectedFailure"


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class DeviceConfig:
    flow_table: FlowTable = field(default_factory=FlowTable)
    gcls: dict[int, GateControlList] = field(default_factory=dict)

    def canonical(self) -> tuple:
        return (self.flow_table.entries, tuple(sorted(self.gcls.items())))

    def digest(self) -> str:
        return hashlib.sha256(repr(self.canonical()).encode()).hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, DeviceConfig) and self.canonical() == other.canonical()

    def __hash__(self):
        return hash(self.canonical())


class InvalidEdit(ValueError):
    pass


@dataclass(frozen=True)
class AddFlowEntry:
    entry: FlowEntry
    position: int | None = None  # None appends


@dataclass(frozen=True)
class RemoveFlowEntry:
    position: int


@dataclass(frozen=True)
class ReplaceGcl:
    """Raw GCL content; it is validated only when the edit is applied."""

    port: int
    cycle_duration: int
    entries: tuple[tuple[int, int], ...]
    base_offset: int = 0

    @classmethod
    def of(cls, port: int, gcl: GateControlList) -> "ReplaceGcl":
        return cls(port, gcl.cycle_duration, gcl.entries, gcl.base_offset)


Edit = Union[AddFlowEntry, RemoveFlowEntry, ReplaceGcl]


def apply_changeset(config: DeviceConfig, changeset, ports) -> DeviceConfig:
    """Apply edits in order, returning a new config; raises InvalidEdit and leaves
    ``config`` untouched on any failure."""
    entries = list(config.flow_table.entries)
    gcls = dict(config.gcls)
    ports = set(ports)
    for edit in changeset:
        if isinstance(edit, AddFlowEntry):
            pos = len(entries) if edit.position is None else edit.position
            if not 0 <= pos <= len(entries):
                raise InvalidEdit(f"flow entry position {pos} out of range")
            entries.insert(pos, edit.entry)
        elif isinstance(edit, RemoveFlowEntry):
            if not 0 <= edit.position < len(entries):
                raise InvalidEdit(f"no flow entry at position {edit.position}")
            del entries[edit.position]
        elif isinstance(edit, ReplaceGcl):
            if edit.port not in ports:
                raise InvalidEdit(f"no port {edit.port}")
            try:
                gcls[edit.port] = GateControlList(edit.cycle_duration, edit.entries, edit.base_offset)
            except InvalidGcl as exc:
                raise InvalidEdit(str(exc)) from None
        else:
            raise InvalidEdit(f"unknown edit {edit!r}")
    new = DeviceConfig(FlowTable(tuple(entries)), gcls)
    validate_config(new, ports)
    return new


def validate_config(config: DeviceConfig, ports) -> None:
    for entry in config.flow_table.entries:
        if isinstance(entry.action, Forward) and entry.action.port not in ports:
            raise InvalidEdit(f"flow entry forwards to missing port {entry.action.port}")
    for port in config.gcls:
        if port not in ports:
            raise InvalidEdit(f"GCL for missing port {port}")


# -- messages ----------------------------------------------------------------

@dataclass(frozen=True)
class Lock:
    store: Store = Store.RUNNING


@dataclass(frozen=True)
class Unlock:
    store: Store = Store.RUNNING


@dataclass(frozen=True)
class CopyConfig:
    pass


@dataclass(frozen=True)
class EditConfig:
    store: Store
    changeset: tuple = ()


@dataclass(frozen=True)
class Validate:
    store: Store = Store.CANDIDATE


@dataclass(frozen=True)
class CommitPrepare:
    execute_at: int


@dataclass(frozen=True)
class CommitExecute:
    pass


@dataclass(frozen=True)
class CommitCancel:
    pass


@dataclass(frozen=True)
class Ok:
    pass


@dataclass(frozen=True)
class Error:
    reason: Reason


@dataclass(frozen=True)
class CommitReadyAck:
    pass


@dataclass(frozen=True)
class CommitNack:
    reason: Reason


REPLIES = (Ok, Error, CommitReadyAck, CommitNack)


@dataclass(frozen=True)
class Message:
    msg_id: int
    session: str
    body: object

    @property
    def is_reply(self) -> bool:
        return isinstance(self.body, REPLIES)


# -- agent -------------------------------------------------------------------

@dataclass
class Datastore:
    kind: Store
    config: DeviceConfig
    lock: str | None = None


@dataclass
class PendingCommit:
    session: str
    execute_at: int
    timer: Event | None = None


class Agent:
    """Configuration agent of one switch.

    ``install`` is called with the new running config whenever it changes; the
    data plane swaps to it between events, so no frame sees a mixed config.
    """

    def __init__(
        self,
        device_id: str,
        config: DeviceConfig,
        ports,
        kernel: Kernel | None = None,
        install: Callable[[DeviceConfig], None] | None = None,
        network: "ControlNetwork | None" = None,
        p_proc: int = DEFAULT_P_PROC,
        apply_margin: int = DEFAULT_APPLY_MARGIN,
    ):
        self.device_id = device_id
        self.ports = tuple(ports)
        self.kernel = kernel
        self.install = install
        self.network = network
        self.p_proc = p_proc
        self.apply_margin = apply_margin
        validate_config(config, self.ports)
        self.running = Datastore(Store.RUNNING, config)
        self.candidate: Datastore | None = None
        self.pending: PendingCommit | None = None
        self.faults: set[str] = set()
        self.applied: list[tuple[str, int, int]] = []  # (session, global, local)
        self.late: list[tuple[str, int, int]] = []  # execute received after its timestamp
        self.handled = 0
        self._busy_until = 0
        if network is not None:
            network.attach(device_id, self.receive, agent=True)

    # -- helpers -----------------------------------------------------------
    def local_now(self) -> int:
        return self.kernel.local_time(self.device_id) if self.kernel else 0

    def _fault(self, name: str) -> bool:
        if name in self.faults:
            self.faults.discard(name)
            return True
        return False

    def _store(self, kind: Store) -> Datastore | None:
        return self.running if kind is Store.RUNNING else self.candidate

    def _set_running(self, config: DeviceConfig) -> None:
        self.running.config = config
        if self.install is not None:
            self.install(config)

    def locks_held(self) -> int:
        return sum(1 for ds in (self.running, self.candidate) if ds is not None and ds.lock)

    # -- operations --------------------------------------------------------
    def handle_lock(self, session: str, store: Store = Store.RUNNING):
        ds = self._store(store)
        if ds is None:
            return Error(Reason.NO_CANDIDATE)
        if ds.lock not in (None, session) or self._fault("lock" if store is Store.RUNNING else "lock_candidate"):
            return Error(Reason.LOCK_DENIED)
        ds.lock = session
        return Ok()

    def handle_copy_config(self, session: str):
        if self.running.lock != session:
            return Error(Reason.NO_LOCK)
        if self.candidate is not None:
            return Error(Reason.CANDIDATE_EXISTS)
        if self._fault("copy"):
            return Error(Reason.COPY_FAILED)
        self.candidate = Datastore(Store.CANDIDATE, self.running.config, lock=session)
        return Ok()

    def handle_edit_config(self, session: str, store: Store, changeset):
        ds = self._store(store)
        if ds is None:
            return Error(Reason.NO_CANDIDATE)
        if ds.lock != session:
            return Error(Reason.NO_LOCK)
        if store is Store.CANDIDATE and self.pending is not None:
            return Error(Reason.COMMIT_PENDING)
        if self._fault("edit"):
            return Error(Reason.INVALID_EDIT)
        try:
            new = apply_changeset(ds.config, changeset, self.ports)
        except InvalidEdit as exc:
            log.debug("%s rejected edit: %s", self.device_id, exc)
            return Error(Reason.INVALID_EDIT)
        if store is Store.RUNNING:
            self._set_running(new)
        else:
            ds.config = new
        return Ok()

    def handle_validate(self, session: str, store: Store = Store.CANDIDATE):
        ds = self._store(store)
        if ds is None:
            return Error(Reason.NO_CANDIDATE)
        if ds.lock != session:
            return Error(Reason.NO_LOCK)
        if self._fault("validate"):
            return Error(Reason.INVALID_EDIT)
        try:
            validate_config(ds.config, self.ports)
        except InvalidEdit:
            return Error(Reason.INVALID_EDIT)
        return Ok()

    def handle_commit_prepare(self, session: str, execute_at_local: int):
        if self.candidate is None or self.candidate.lock != session:
            return CommitNack(Reason.NO_CANDIDATE)
        if self.pending is not None and self.pending.session != session:
            return CommitNack(Reason.COMMIT_PENDING)
        if execute_at_local <= self.local_now() + self.apply_margin:
            return CommitNack(Reason.TIMESTAMP_IN_PAST)
        if self._fault("prepare"):
            return CommitNack(Reason.INJECTED)
        self.pending = PendingCommit(session, execute_at_local)
        return CommitReadyAck()

    def handle_commit_execute(self, session: str):
        p = self.pending
        if p is None or p.session != session or p.timer is not None:
            return Error(Reason.NOTHING_PREPARED)
        now_local = self.local_now()
        if now_local >= p.execute_at:
            self.late.append((session, self.kernel.now, now_local))
            log.warning("%s: commit execute for %s arrived late", self.device_id, session)
            self._apply()
        else:
            when = self.kernel.local_to_global(self.device_id, p.execute_at)
            p.timer = self.kernel.at(when, self.device_id, self._apply, "commit-apply")
        return Ok()

    def handle_commit_cancel(self, session: str):
        p = self.pending
        if p is None or p.session != session:
            return Error(Reason.NOTHING_PREPARED)
        Kernel.cancel(p.timer)
        self.pending = None
        self.candidate = None
        return Ok()

    def _apply(self) -> None:
        p = self.pending
        self.pending = None
        self.applied.append((p.session, self.kernel.now, self.local_now()))
        self._set_running(self.candidate.config)

    def handle_unlock(self, session: str, store: Store = Store.RUNNING):
        ds = self._store(store)
        if ds is None or ds.lock is None:
            return Ok()
        if ds.lock != session:
            return Error(Reason.NOT_HOLDER)
        if store is Store.CANDIDATE:
            if self.pending is not None and self.pending.session == session:
                return Error(Reason.COMMIT_PENDING)
            self.candidate = None
        else:
            ds.lock = None
        return Ok()

    def handle(self, session: str, body):
        """Dispatch one request and return its reply."""
        self.handled += 1
        if isinstance(body, Lock):
            return self.handle_lock(session, body.store)
        if isinstance(body, Unlock):
            return self.handle_unlock(session, body.store)
        if isinstance(body, CopyConfig):
            return self.handle_copy_config(session)
        if isinstance(body, EditConfig):
            return self.handle_edit_config(session, body.store, body.changeset)
        if isinstance(body, Validate):
            return self.handle_validate(session, body.store)
        if isinstance(body, CommitPrepare):
            return self.handle_commit_prepare(session, body.execute_at)
        if isinstance(body, CommitExecute):
            return self.handle_commit_execute(session)
        if isinstance(body, CommitCancel):
            return self.handle_commit_cancel(session)
        return Error(Reason.INVALID_EDIT)

    # -- event-driven wrapper ----------------------------------------------
    def receive(self, src: str, msg: Message) -> None:
        # Requests are served one at a time, each taking p_proc.
        start = max(self.kernel.now, self._busy_until)
        self._busy_until = start + self.p_proc
        self.kernel.at(self._busy_until, self.device_id, lambda: self._process(src, msg), "agent")

    def _process(self, src: str, msg: Message) -> None:
        reply = self.handle(msg.session, msg.body)
        self.network.send(self.device_id, src, Message(msg.msg_id, msg.session, reply))


# -- control network ---------------------------------------------------------

class ControlNetwork:
    """Reliable, ordered, loss-free message transport.

    One-way latency is drawn uniformly from ``[d_min, d_max]``; deliveries on the
    same (src, dst) channel never overtake each other.
    """

    def __init__(self, kernel: Kernel, d_min: int = 50 * US, d_max: int = DEFAULT_D_CTRL_MAX,
                 rng: np.random.Generator | None = None):
        if not 0 <= d_min <= d_max:
            raise ValueError("need 0 <= d_min <= d_max")
        self.kernel = kernel
        self.d_min = d_min
        self.d_max = d_max
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._endpoints: dict[str, Callable[[str, Message], None]] = {}
        self._agents: set[str] = set()
        self._last: dict[tuple[str, str], int] = {}
        self.log: list[str] = []
        self.sent = 0

    def attach(self, name: str, handler: Callable[[str, Message], None], agent: bool = False) -> None:
        self._endpoints[name] = handler
        if agent:
            self._agents.add(name)

    def _log(self, src: str, dst: str, msg: Message) -> None:
        if dst in self._agents:
            direction, device = "down", dst
        else:
            direction, device = "up", src
        self.log.append(f"{self.kernel.now} {direction} {type(msg.body).__name__} {device} {msg.msg_id}")

    def latency(self) -> int:
        if self.d_min == self.d_max:
            return self.d_max
        return int(self.rng.integers(self.d_min, self.d_max, endpoint=True))

    def send(self, src: str, dst: str, msg: Message) -> None:
        self.sent += 1
        self._log(src, dst, msg)
        key = (src, dst)
        when = max(self.kernel.now + self.latency(), self._last.get(key, 0))
        self._last[key] = when
        handler = self._endpoints[dst]
        self.kernel.at(when, dst, lambda: handler(src, msg), "msg")


class HeldNetwork(ControlNetwork):
    """Transport whose deliveries are chosen externally, one message at a time.

    Only the oldest message of each channel is deliverable, which keeps the
    reliable-ordered guarantee while exposing every cross-channel interleaving.
    """

    def __init__(self, kernel: Kernel):
        super().__init__(kernel, 0, 0)
        self.channels: dict[tuple[str, str], deque[Message]] = {}

    def send(self, src, dst, msg):
        self.sent += 1
        self._log(src, dst, msg)
        self.channels.setdefault((src, dst), deque()).append(msg)

    def deliverable(self) -> list[tuple[str, str]]:
        return sorted(k for k, q in self.channels.items() if q)

    def deliver(self, channel: tuple[str, str]) -> None:
        src, dst = channel
        msg = self.channels[channel].popleft()
        handler = self._endpoints[dst]
        self.kernel.after(1, dst, lambda: handler(src, msg), "msg")

    def in_flight(self) -> tuple:
        return tuple(
            (src, dst, m.session, type(m.body).__name__, m.msg_id)
            for (src, dst), q in sorted(self.channels.items()) for m in q
        )
