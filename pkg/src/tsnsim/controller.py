"""SDN controller: four-phase synchronous transactions and direct (non-transactional) updates.

A transaction locks every participant's running datastore in ascending MAC order,
stages the changes in per-switch candidates, runs a two-stage commit whose
execution timestamp is derived from the worst-case commit latency, and finally
unlocks everything regardless of the outcome.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable

from .kernel import MS, Kernel
from .netconf import (
    CommitCancel,
    CommitExecute,
    CommitPrepare,
    CommitReadyAck,
    ControlNetwork,
    CopyConfig,
    EditConfig,
    Lock,
    Message,
    Ok,
    Store,
    Unlock,
    Validate,
    DEFAULT_D_CTRL_MAX,
    DEFAULT_P_PROC,
)

log = logging.getLogger(__name__)

DEFAULT_PHASE_TIMEOUT = 10 * MS


@dataclass(frozen=True)
class NextPeriodStart:
    cycle: int
    base: int = 0


@dataclass(frozen=True)
class WcetModel:
    d_ctrl_max: int = DEFAULT_D_CTRL_MAX
    p_proc_max: int = DEFAULT_P_PROC
    sync_bound: int = 500
    n_participants: int = 1
    alignment: NextPeriodStart | None = None

    def __post_init__(self):
        if self.d_ctrl_max <= 0 or self.p_proc_max <= 0 or self.n_participants <= 0:
            raise ValueError("WCET components must be strictly positive")
        if self.sync_bound < 0:
            raise ValueError("sync bound must be non-negative")

    def bound(self) -> int:
        """Worst-case time from sending CommitPrepare until the last agent has
        processed CommitExecute, plus one clock-error margin.

        The prepare leg, the ready-ack leg and the execute leg each cost one
        maximal one-way message latency plus one maximal processing time (agent,
        controller, agent).  Prepares fan out in parallel, so the bound does not
        grow with the number of participants or with the size of the changes.
        """
        hop = self.d_ctrl_max + self.p_proc_max
        return 2 * hop + hop + self.sync_bound


def compute_execute_at(wcet: WcetModel, t_now: int) -> int:
    raw = t_now + wcet.bound()
    a = wcet.alignment
    if a is None:
        return raw
    k = -(-(raw - a.base) // a.cycle)
    return a.base + k * a.cycle


class Phase(enum.Enum):
    IDLE = "idle"
    LOCKING = "lock"
    EDITING = "reconfigure"
    COMMITTING = "commit"
    UNLOCKING = "unlock"
    DONE = "done"


class AbortReason(str, enum.Enum):
    LOCK_DENIED = "LockDenied"
    EDIT_REJECTED = "EditRejected"
    PREPARE_NACKED = "PrepareNacked"
    INTERNAL_FAILURE = "InternalFailure"


@dataclass(frozen=True)
class Committed:
    def __str__(self):
        return "Committed"


@dataclass(frozen=True)
class Aborted:
    reason: AbortReason

    def __str__(self):
        return f"Aborted({self.reason.value})"


@dataclass
class Transaction:
    txn_id: str
    participants: list[str]
    changesets: dict[str, tuple]
    phase: Phase = Phase.IDLE
    outcome: Committed | Aborted | None = None
    execute_at: int | None = None
    phase_log: list[tuple[str, int, int, str]] = field(default_factory=list)
    lock_order: list[str] = field(default_factory=list)

    @property
    def done(self) -> bool:
        return self.phase is Phase.DONE


class Controller:
    """Hosts reconfiguration engines and owns request/reply bookkeeping.

    Every reply is handled ``p_proc`` after it arrives.
    """

    def __init__(
        self,
        kernel: Kernel,
        network: ControlNetwork,
        macs: dict[str, int],
        wcet: WcetModel | None = None,
        name: str = "controller",
        p_proc: int = DEFAULT_P_PROC,
        phase_timeout: int | None = DEFAULT_PHASE_TIMEOUT,
    ):
        self.kernel = kernel
        self.network = network
        self.macs = dict(macs)
        self.wcet = wcet or WcetModel(network.d_max, p_proc)
        self.name = name
        self.p_proc = p_proc
        self.phase_timeout = phase_timeout
        self.transactions: list[Transaction] = []
        self.updates: list[DirectUpdate] = []
        self._next_msg = 0
        self._pending: dict[int, Callable[[object], None]] = {}
        network.attach(name, self.receive)

    def request(self, session: str, device: str, body, callback: Callable[[object], None]) -> None:
        self._next_msg += 1
        self._pending[self._next_msg] = callback
        self.network.send(self.name, device, Message(self._next_msg, session, body))

    def receive(self, src: str, msg: Message) -> None:
        callback = self._pending.pop(msg.msg_id)
        self.kernel.after(self.p_proc, self.name, lambda: callback(msg.body), "ctrl")

    def run_transaction(self, changesets: dict[str, tuple], txn_id: str | None = None,
                        on_done: Callable[[Transaction], None] | None = None) -> Transaction:
        if not changesets:
            raise ValueError("a transaction needs at least one participant")
        txn_id = txn_id or f"{self.name}-T{len(self.transactions) + 1}"
        participants = sorted(changesets, key=lambda d: self.macs[d])
        txn = Transaction(txn_id, participants, {d: tuple(c) for d, c in changesets.items()})
        self.transactions.append(txn)
        TransactionCoordinator(self, txn, on_done).start()
        return txn

    def run_direct_update(self, switch: str, changeset, label: str | None = None,
                          on_done: Callable[["DirectUpdate"], None] | None = None) -> "DirectUpdate":
        label = label or f"{self.name}-U{len(self.updates) + 1}"
        upd = DirectUpdate(self, label, switch, tuple(changeset), on_done)
        self.updates.append(upd)
        upd.start()
        return upd

    def log_rows(self) -> list[str]:
        rows = []
        for rec in [*self.transactions, *self.updates]:
            for phase, enter, leave, outcome in rec.phase_log:
                rows.append(f"{rec.txn_id},{phase},{enter},{leave},{outcome}")
        return rows


class TransactionCoordinator:
    def __init__(self, ctrl: Controller, txn: Transaction, on_done=None):
        self.ctrl = ctrl
        self.kernel = ctrl.kernel
        self.txn = txn
        self.on_done = on_done
        self.locked: list[str] = []
        self.copied: list[str] = []
        self.prepared: list[str] = []
        self.failure: AbortReason | None = None
        self._gen = 0  # bumps on every phase change; stale callbacks compare against it
        self._entered = 0
        self._timer = None

    # -- plumbing ----------------------------------------------------------
    def _send(self, device: str, body, on_reply) -> None:
        gen = self._gen

        def cb(reply):
            if gen == self._gen:
                on_reply(reply)

        self.ctrl.request(self.txn.txn_id, device, body, cb)

    def _enter(self, phase: Phase) -> None:
        self._gen += 1
        self.txn.phase = phase
        self._entered = self.kernel.now
        Kernel.cancel(self._timer)
        self._timer = None
        if self.ctrl.phase_timeout is not None and phase is not Phase.DONE:
            gen = self._gen
            self._timer = self.kernel.after(self.ctrl.phase_timeout, self.ctrl.name,
                                            lambda: self._timeout(gen), "timeout")

    def _leave(self, outcome: str) -> None:
        self.txn.phase_log.append((self.txn.phase.value, self._entered, self.kernel.now, outcome))

    def _timeout(self, gen: int) -> None:
        if gen != self._gen:
            return
        log.warning("%s timed out in %s", self.txn.txn_id, self.txn.phase.value)
        if self.txn.phase is Phase.UNLOCKING:
            self._leave("timeout")
            self._finish()
        else:
            self._fail(AbortReason.INTERNAL_FAILURE)

    def _fail(self, reason: AbortReason) -> None:
        self.failure = reason
        self._leave(f"failed:{reason.value}")
        self._unlock_phase()

    # -- phases ------------------------------------------------------------
    def start(self) -> None:
        self._enter(Phase.LOCKING)
        self._lock_next(0)

    def _lock_next(self, i: int) -> None:
        parts = self.txn.participants
        if i == len(parts):
            self._leave("ok")
            self._enter(Phase.EDITING)
            self._stage(0)
            return
        dev = parts[i]
        self.txn.lock_order.append(dev)

        def on_reply(reply):
            if isinstance(reply, Ok):
                self.locked.append(dev)
                self._lock_next(i + 1)
            else:
                self._fail(AbortReason.LOCK_DENIED)

        self._send(dev, Lock(Store.RUNNING), on_reply)

    def _stage(self, i: int) -> None:
        parts = self.txn.participants
        if i == len(parts):
            self._leave("ok")
            self._commit_phase()
            return
        dev = parts[i]
        steps = [
            (CopyConfig(), AbortReason.INTERNAL_FAILURE),
            (Lock(Store.CANDIDATE), AbortReason.INTERNAL_FAILURE),
            (EditConfig(Store.CANDIDATE, self.txn.changesets[dev]), AbortReason.EDIT_REJECTED),
            (Validate(Store.CANDIDATE), AbortReason.EDIT_REJECTED),
        ]

        def run(k: int) -> None:
            if k == len(steps):
                self._stage(i + 1)
                return
            body, reason = steps[k]

            def on_reply(reply):
                if not isinstance(reply, Ok):
                    self._fail(reason)
                    return
                if k == 0:
                    self.copied.append(dev)
                run(k + 1)

            self._send(dev, body, on_reply)

        run(0)

    def _commit_phase(self) -> None:
        self._enter(Phase.COMMITTING)
        txn = self.txn
        txn.execute_at = compute_execute_at(self.ctrl.wcet, self.kernel.now)
        replies: dict[str, object] = {}

        def on_prepare(dev, reply):
            replies[dev] = reply
            if isinstance(reply, CommitReadyAck):
                self.prepared.append(dev)
            if len(replies) == len(txn.participants):
                if len(self.prepared) == len(txn.participants):
                    self._execute()
                else:
                    self._cancel()

        for dev in txn.participants:
            self._send(dev, CommitPrepare(txn.execute_at), lambda r, dev=dev: on_prepare(dev, r))

    def _execute(self) -> None:
        txn = self.txn
        acks: dict[str, object] = {}

        def on_reply(dev, reply):
            acks[dev] = reply
            if len(acks) < len(txn.participants):
                return
            if not all(isinstance(r, Ok) for r in acks.values()):
                self._fail(AbortReason.INTERNAL_FAILURE)
                return
            # Unlocking early would discard candidates that have not been applied yet.
            latest = txn.execute_at + self.ctrl.wcet.sync_bound
            gen = self._gen
            self.kernel.at(max(latest, self.kernel.now), self.ctrl.name,
                           lambda: gen == self._gen and self._committed(), "await-apply")

        for dev in txn.participants:
            self._send(dev, CommitExecute(), lambda r, dev=dev: on_reply(dev, r))

    def _committed(self) -> None:
        self._leave("ok")
        self._unlock_phase()

    def _cancel(self) -> None:
        targets = list(self.prepared)
        if not targets:
            self._fail(AbortReason.PREPARE_NACKED)
            return
        done: list[str] = []

        def on_reply(dev, reply):
            done.append(dev)
            if len(done) == len(targets):
                self._fail(AbortReason.PREPARE_NACKED)

        for dev in targets:
            self._send(dev, CommitCancel(), lambda r, dev=dev: on_reply(dev, r))

    def _unlock_phase(self) -> None:
        self._enter(Phase.UNLOCKING)
        steps = []
        for dev in reversed(self.locked):
            if dev in self.copied:
                steps.append((dev, Unlock(Store.CANDIDATE)))
            steps.append((dev, Unlock(Store.RUNNING)))

        def run(k):
            if k == len(steps):
                self._leave("ok")
                self._finish()
                return
            dev, body = steps[k]
            self._send(dev, body, lambda reply: run(k + 1))

        run(0)

    def _finish(self) -> None:
        txn = self.txn
        txn.outcome = Committed() if self.failure is None else Aborted(self.failure)
        self._enter(Phase.DONE)
        txn.phase_log.append(("done", self.kernel.now, self.kernel.now, str(txn.outcome)))
        log.info("%s %s at %d ns", txn.txn_id, txn.outcome, self.kernel.now)
        if self.on_done is not None:
            self.on_done(txn)


@dataclass
class DirectUpdate:
    """Lock, edit and unlock the running datastore of one switch, no coordination."""

    ctrl: Controller
    txn_id: str
    switch: str
    changeset: tuple
    on_done: Callable[["DirectUpdate"], None] | None = None
    result: object = None
    edited_at: int | None = None
    phase_log: list[tuple[str, int, int, str]] = field(default_factory=list)

    @property
    def done(self) -> bool:
        return self.result is not None

    def start(self) -> None:
        t0 = self.ctrl.kernel.now

        def finish(result):
            self.result = result
            now = self.ctrl.kernel.now
            self.phase_log.append(("done", now, now, "Ok" if isinstance(result, Ok) else str(result)))
            if self.on_done is not None:
                self.on_done(self)

        def after_unlock(reply, t1, result):
            self.phase_log.append(("unlock", t1, self.ctrl.kernel.now, type(reply).__name__))
            finish(result)

        def after_edit(reply, t1):
            now = self.ctrl.kernel.now
            self.phase_log.append(("edit", t1, now, type(reply).__name__))
            if isinstance(reply, Ok):
                self.edited_at = now
            self.ctrl.request(self.txn_id, self.switch, Unlock(Store.RUNNING),
                              lambda r: after_unlock(r, now, reply))

        def after_lock(reply):
            now = self.ctrl.kernel.now
            self.phase_log.append(("lock", t0, now, type(reply).__name__))
            if not isinstance(reply, Ok):
                finish(reply)
                return
            self.ctrl.request(self.txn_id, self.switch, EditConfig(Store.RUNNING, self.changeset),
                              lambda r: after_edit(r, now))

        self.ctrl.request(self.txn_id, self.switch, Lock(Store.RUNNING), after_lock)
