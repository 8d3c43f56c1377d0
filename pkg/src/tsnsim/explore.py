"""Exhaustive exploration of control-message interleavings.

The control network is replaced by a :class:`~tsnsim.netconf.HeldNetwork`; after
every delivery the kernel runs until it is idle (processing delays, commit timers),
and then each channel head in turn is delivered next.  States reached through
different orders are merged by fingerprint, so every distinct protocol state is
visited once.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from .controller import Committed, Controller, NextPeriodStart, Transaction, WcetModel
from .dataplane import FlowEntry, Forward, GateControlList, Match
from .kernel import MS, ClockModel, Kernel
from .netconf import AddFlowEntry, Agent, DeviceConfig, HeldNetwork, ReplaceGcl


@dataclass
class World:
    kernel: Kernel
    network: HeldNetwork
    agents: dict[str, Agent]
    controllers: list[Controller]
    launch: Callable[["World"], None]
    txns: list[Transaction] = field(default_factory=list)

    def settle(self) -> None:
        self.kernel.run(max_events=100_000)

    def fingerprint(self) -> tuple:
        agents = tuple(
            (
                name,
                a.running.config.digest(),
                a.running.lock,
                None if a.candidate is None else (a.candidate.config.digest(), a.candidate.lock),
                None if a.pending is None else (a.pending.session, a.pending.timer is not None),
                len(a.applied),
            )
            for name, a in sorted(self.agents.items())
        )
        ctrls = tuple(tuple(sorted(c._pending)) for c in self.controllers)
        txns = tuple((t.phase.value, len(t.phase_log), str(t.outcome)) for t in self.txns)
        return agents, ctrls, txns, self.network.in_flight()


@dataclass
class ExplorationResult:
    states: int = 0
    terminals: int = 0
    outcomes: Counter = field(default_factory=Counter)
    deadlocks: list[tuple] = field(default_factory=list)
    violations: list[tuple[tuple, str]] = field(default_factory=list)
    late_executions: int = 0

    @property
    def ok(self) -> bool:
        return not self.deadlocks and not self.violations


def check_terminal(world: World) -> list[str]:
    problems = []
    if not any(isinstance(t.outcome, Committed) for t in world.txns):
        problems.append("no transaction committed")
    for name, a in world.agents.items():
        if a.locks_held():
            problems.append(f"{name} still locked")
        if a.candidate is not None:
            problems.append(f"{name} has a live candidate")
        if a.pending is not None:
            problems.append(f"{name} has a pending commit")
    return problems


def explore(make_world: Callable[[], World], check=check_terminal, max_states: int = 200_000) -> ExplorationResult:
    """Depth-first search over delivery orders.

    Timing is abstracted away: timers fire as soon as the network is otherwise
    idle, so an agent may see CommitExecute after its timestamp has passed.  Such
    late executions are counted in ``late_executions``, not reported as violations.
    """
    agent_log = logging.getLogger("tsnsim.netconf")
    level = agent_log.level
    agent_log.setLevel(logging.ERROR)
    try:
        return _explore(make_world, check, max_states)
    finally:
        agent_log.setLevel(level)


def _explore(make_world, check, max_states) -> ExplorationResult:
    result = ExplorationResult()
    seen = set()
    stack: list[tuple] = [()]
    while stack:
        prefix = stack.pop()
        world = make_world()
        world.launch(world)
        world.settle()
        for choice in prefix:
            world.network.deliver(choice)
            world.settle()
        fp = world.fingerprint()
        if fp in seen:
            continue
        seen.add(fp)
        result.states += 1
        if result.states > max_states:
            raise RuntimeError(f"state budget of {max_states} exceeded")
        choices = world.network.deliverable()
        if choices:
            stack.extend(prefix + (c,) for c in reversed(choices))
            continue
        result.terminals += 1
        if not all(t.done for t in world.txns):
            result.deadlocks.append(prefix)
            continue
        result.outcomes[tuple(str(t.outcome) for t in world.txns)] += 1
        result.late_executions += sum(len(a.late) for a in world.agents.values())
        for problem in check(world):
            result.violations.append((prefix, problem))
    return result


SWITCH_MACS = {"switch1": 0x020000000001, "switch2": 0x020000000002}


def two_transactions_world(mac_ordered: bool = True) -> World:
    """Two coordinators, each reconfiguring both switches, launched at the same instant.

    With ``mac_ordered=False`` the second coordinator sees the MAC order reversed
    and so locks switch2 before switch1.
    """
    kernel = Kernel()
    net = HeldNetwork(kernel)
    cycle = 1 * MS
    agents = {}
    for name in SWITCH_MACS:
        kernel.register(ClockModel(name, 0))
        agents[name] = Agent(name, DeviceConfig(gcls={0: GateControlList.always_open(cycle)}), [0, 1],
                             kernel, None, net)
    wcet = WcetModel(alignment=NextPeriodStart(cycle))
    macs_b = SWITCH_MACS if mac_ordered else {k: -v for k, v in SWITCH_MACS.items()}
    ctrls = [
        Controller(kernel, net, SWITCH_MACS, wcet, name="ctrlA", phase_timeout=None),
        Controller(kernel, net, macs_b, wcet, name="ctrlB", phase_timeout=None),
    ]
    rule = AddFlowEntry(FlowEntry(Match(vlan_id=1), Forward(1)))
    gate = ReplaceGcl(0, cycle, ((cycle // 2, 0x80), (cycle // 2, 0x7F)))

    def launch(world: World) -> None:
        world.txns.append(ctrls[0].run_transaction({s: (rule,) for s in SWITCH_MACS}, "A"))
        world.txns.append(ctrls[1].run_transaction({s: (gate,) for s in SWITCH_MACS}, "B"))

    return World(kernel, net, agents, ctrls, launch)
