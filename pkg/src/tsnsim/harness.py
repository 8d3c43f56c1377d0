"""Build a simulation from a :class:`Scenario`, run it and summarize latencies."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .controller import Aborted, Controller, NextPeriodStart, WcetModel
from .dataplane import EndStation, Network, Switch, TrafficGenerator, audit_gates
from .kernel import ClockModel, Kernel, format_seconds
from .netconf import Agent, ControlNetwork, DeviceConfig
from .scenario import Mode, Scenario

log = logging.getLogger(__name__)

CONTROLLER = "controller"


@dataclass
class LatencySeries:
    flow_id: str
    samples: list[tuple[int, int]] = field(default_factory=list)  # (recv_time, latency) in ns

    @property
    def recv_times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples], dtype=np.int64)

    @property
    def latencies(self) -> np.ndarray:
        return np.array([x for _, x in self.samples], dtype=np.int64)

    def to_csv(self) -> str:
        lines = ["flow_id,recv_time_s,latency_s"]
        lines += [f"{self.flow_id},{format_seconds(t)},{format_seconds(x)}" for t, x in self.samples]
        return "\n".join(lines) + "\n"


@dataclass
class FlowStats:
    count: int
    min: int | None
    max: int | None
    mean: float | None
    baseline: int
    violation_count: int
    first_violation: int | None
    last_violation: int | None


@dataclass
class RunSummary:
    flows: dict[str, FlowStats] = field(default_factory=dict)
    transactions: list[dict] = field(default_factory=list)
    tolerance: int = 0

    @property
    def total_violations(self) -> int:
        return sum(s.violation_count for s in self.flows.values())

    def to_dict(self) -> dict:
        return {
            "tolerance_ns": self.tolerance,
            "flows": {k: asdict(v) for k, v in self.flows.items()},
            "transactions": self.transactions,
        }


def summarize(series: dict[str, LatencySeries], baselines: dict[str, int], tolerance: int) -> RunSummary:
    """Per-flow statistics; a violation is a sample above ``baseline + tolerance``."""
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    out = RunSummary(tolerance=tolerance)
    for flow_id, baseline in baselines.items():
        s = series.get(flow_id, LatencySeries(flow_id))
        lat, t = s.latencies, s.recv_times
        bad = t[lat > baseline + tolerance]
        out.flows[flow_id] = FlowStats(
            count=int(lat.size),
            min=int(lat.min()) if lat.size else None,
            max=int(lat.max()) if lat.size else None,
            mean=float(lat.mean()) if lat.size else None,
            baseline=baseline,
            violation_count=int(bad.size),
            first_violation=int(bad[0]) if bad.size else None,
            last_violation=int(bad[-1]) if bad.size else None,
        )
    return out


@dataclass
class Simulation:
    scenario: Scenario
    kernel: Kernel
    network: Network
    control: ControlNetwork
    controller: Controller
    agents: dict[str, Agent]
    script: list
    records: dict = field(default_factory=dict)  # reconfiguration name -> Transaction | [DirectUpdate]

    def run(self) -> None:
        self.kernel.run_until(self.scenario.horizon)

    def series(self) -> dict[str, LatencySeries]:
        return {
            f.flow_id: LatencySeries(f.flow_id, [(s.recv_time, s.latency)
                                                 for s in self.network.samples.get(f.flow_id, [])])
            for f in self.scenario.flows
        }

    def running_configs(self) -> dict[str, DeviceConfig]:
        return {name: a.running.config for name, a in self.agents.items()}

    def reconfiguration_report(self) -> list[dict]:
        rows = []
        for rc in self.script:
            rec = self.records.get(rc.name)
            row = {"name": rc.name, "trigger_ns": rc.trigger, "transactional": rc.transactional,
                   "switches": sorted(rc.changesets)}
            if rec is None:
                row["outcome"] = "not started"
            elif rc.transactional:
                row["outcome"] = str(rec.outcome) if rec.outcome else "pending"
                row["execute_at_ns"] = rec.execute_at
                row["applied"] = {
                    name: [{"global_ns": g, "local_ns": loc} for s, g, loc in agent.applied if s == rec.txn_id]
                    for name, agent in self.agents.items() if name in rc.changesets
                }
            else:
                row["outcome"] = ",".join(
                    "pending" if u.result is None else type(u.result).__name__ for u in rec)
                row["applied"] = {u.switch: u.edited_at for u in rec}
            rows.append(row)
        return rows

    def unexpected_aborts(self) -> list[str]:
        bad = []
        for rc in self.script:
            rec = self.records.get(rc.name)
            if rec is None:
                continue
            if rc.transactional and isinstance(rec.outcome, Aborted):
                bad.append(rc.name)
            if not rc.transactional and any(u.result is not None and type(u.result).__name__ != "Ok" for u in rec):
                bad.append(rc.name)
        return bad

    def summary(self) -> RunSummary:
        s = summarize(self.series(), self.scenario.baselines(), self.scenario.tolerance)
        s.transactions = self.reconfiguration_report()
        return s

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for flow_id, series in self.series().items():
            (out / f"latency_{flow_id}.csv").write_text(series.to_csv())
        (out / "summary.json").write_text(json.dumps(self.summary().to_dict(), indent=2, sort_keys=True) + "\n")
        (out / "control.log").write_text("".join(line + "\n" for line in self.control.log))
        rows = ["txn_id,phase,enter_time_ns,exit_time_ns,outcome", *self.controller.log_rows()]
        (out / "transactions.csv").write_text("\n".join(rows) + "\n")


def draw_offsets(scenario: Scenario) -> dict[str, int]:
    rng = np.random.default_rng([scenario.seed, 1])
    if scenario.clock_error == "none":
        chosen = []
    elif scenario.clock_error == "all":
        chosen = [d.name for d in scenario.devices]
    else:
        chosen = scenario.switches
    b = scenario.sync_bound
    return {d.name: int(rng.integers(-b, b, endpoint=True)) if d.name in chosen else 0
            for d in scenario.devices}


def build(scenario: Scenario, trace: bool = False, offsets: dict[str, int] | None = None) -> Simulation:
    scenario.validate()
    kernel = Kernel(trace=trace)
    offsets = draw_offsets(scenario) if offsets is None else offsets
    for d in scenario.devices:
        kernel.register(ClockModel(d.name, offsets.get(d.name, 0), scenario.sync_bound))
    kernel.register(ClockModel(CONTROLLER, 0, scenario.sync_bound))

    net = Network(kernel, record_from=scenario.record_from)
    for d in scenario.devices:
        if d.kind == "switch":
            net.add(Switch(net, d.name, d.mac, scenario.forwarding_delay))
        else:
            net.add(EndStation(net, d.name, d.mac, scenario.station_gcl(d.name)))
    for a, b in scenario.links:
        net.connect(a, b, scenario.link)

    c = scenario.control
    control = ControlNetwork(kernel, c.d_ctrl_min, c.d_ctrl_max, np.random.default_rng([scenario.seed, 2]))
    agents = {}
    for name in scenario.switches:
        sw = net.devices[name]
        initial = DeviceConfig(gcls={pid: scenario.slot_gcl(name, []) for pid in sw.ports})
        sw.install(initial)
        agents[name] = Agent(name, initial, sw.ports, kernel, sw.install, control,
                             p_proc=c.p_proc, apply_margin=c.apply_margin)
    alignment = NextPeriodStart(scenario.cycle, 0) if c.align_to_period else None
    wcet = WcetModel(c.d_ctrl_max, c.p_proc, scenario.sync_bound, max(1, len(agents)), alignment)
    controller = Controller(kernel, control, {d.name: d.mac for d in scenario.devices}, wcet,
                            CONTROLLER, c.p_proc, c.phase_timeout)

    by_name = {d.name: d for d in scenario.devices}
    for f in scenario.flows:
        gen = TrafficGenerator(net.devices[f.sender], f.flow_id, by_name[f.receiver].mac, f.vlan_id,
                               f.pcp, f.size, f.period, f.start, scenario.horizon, f.offset)
        net.generators.append(gen)
        gen.arm()

    sim = Simulation(scenario, kernel, net, control, controller, agents, scenario.update_script())
    for rc in sim.script:
        kernel.at(rc.trigger, CONTROLLER, lambda rc=rc: _launch(sim, rc), f"trigger:{rc.name}")
    return sim


def _launch(sim: Simulation, rc) -> None:
    ctl = sim.controller
    if rc.transactional:
        sim.records[rc.name] = ctl.run_transaction(rc.changesets, txn_id=rc.name)
    else:
        sim.records[rc.name] = [ctl.run_direct_update(sw, cs, label=f"{rc.name}:{sw}")
                                for sw, cs in rc.changesets.items()]


def run_scenario(scenario: Scenario, out_dir=None, trace: bool = False) -> Simulation:
    """Run ``scenario`` to its horizon; write CSVs, logs and summary when ``out_dir`` is given."""
    sim = build(scenario, trace=trace)
    sim.run()
    if out_dir is not None:
        sim.write(out_dir)
    return sim


def gate_violations(sim: Simulation, strict: bool = False):
    return audit_gates(sim.network, strict=strict)


__all__ = [
    "LatencySeries", "FlowStats", "RunSummary", "Simulation", "summarize", "build", "run_scenario",
    "draw_offsets", "gate_violations", "Mode",
]
