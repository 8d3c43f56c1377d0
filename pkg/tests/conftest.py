import numpy as np
import pytest

from tsnsim import Controller, NextPeriodStart, WcetModel
from tsnsim.dataplane import GateControlList
from tsnsim.harness import run_scenario
from tsnsim.kernel import MS, ClockModel, Kernel
from tsnsim.netconf import Agent, ControlNetwork, DeviceConfig
from tsnsim.scenario import build_case_study

MACS = {"switch1": 0x020000000001, "switch2": 0x020000000002}


@pytest.fixture(scope="session")
def transactional_run():
    return run_scenario(build_case_study("transactional", seed=1))


@pytest.fixture(scope="session")
def direct_run():
    return run_scenario(build_case_study("non-transactional", seed=1))


class ControlWorld:
    """Controller plus two switch agents on a timed control network; no data plane."""

    def __init__(self, seed=0, offsets=None, d_min=50_000, d_max=250_000, p_proc=10_000,
                 sync_bound=500, cycle=1 * MS, ports=(0, 1), phase_timeout=10 * MS, macs=MACS):
        self.kernel = Kernel(trace=True)
        offsets = offsets or {}
        self.macs = dict(macs)
        for name in self.macs:
            self.kernel.register(ClockModel(name, offsets.get(name, 0), sync_bound))
        self.kernel.register(ClockModel("controller", 0, sync_bound))
        self.net = ControlNetwork(self.kernel, d_min, d_max, np.random.default_rng(seed))
        self.installed = {name: [] for name in self.macs}
        self.agents = {
            name: Agent(name, DeviceConfig(gcls={p: GateControlList.always_open(cycle) for p in ports}),
                        ports, self.kernel, self.installed[name].append, self.net, p_proc=p_proc)
            for name in self.macs
        }
        wcet = WcetModel(d_max, p_proc, sync_bound, len(self.macs), NextPeriodStart(cycle))
        self.ctrl = Controller(self.kernel, self.net, self.macs, wcet, p_proc=p_proc, phase_timeout=phase_timeout)

    def running(self):
        return {name: a.running.config for name, a in self.agents.items()}

    def run(self, changesets, at=0):
        txn = None

        def go():
            nonlocal txn
            txn = self.ctrl.run_transaction(changesets)

        self.kernel.at(max(at, self.kernel.now), "controller", go)
        self.kernel.run(max_events=100_000)
        return txn

    def clean(self):
        return all(a.locks_held() == 0 and a.candidate is None and a.pending is None
                   for a in self.agents.values())


@pytest.fixture
def control_world():
    return ControlWorld
