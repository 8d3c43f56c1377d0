import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsnsim.dataplane import FlowEntry, Forward, GateControlList, Match
from tsnsim.kernel import MS, US, ClockModel, Kernel
from tsnsim.netconf import (
    AddFlowEntry, Agent, CommitNack, CommitReadyAck, ControlNetwork, CopyConfig,
    DeviceConfig, EditConfig, Error, InvalidEdit, Lock, Message, Ok, Reason, RemoveFlowEntry,
    ReplaceGcl, Store, Unlock, Validate, apply_changeset,
)

R, C = Store.RUNNING, Store.CANDIDATE
RULE = AddFlowEntry(FlowEntry(Match(vlan_id=1), Forward(1)))
NARROW = ReplaceGcl(0, 1 * MS, ((100 * US, 0x80), (900 * US, 0x7F)))


def initial():
    return DeviceConfig(gcls={0: GateControlList.always_open(MS), 1: GateControlList.always_open(MS)})


def agent(offset=0, **kw):
    k = Kernel(trace=True)
    k.register(ClockModel("sw", offset))
    installed = []
    a = Agent("sw", initial(), [0, 1], k, installed.append, **kw)
    a.installed = installed
    return a


def staged(a, session="s1", changeset=(RULE,)):
    assert isinstance(a.handle_lock(session, R), Ok)
    assert isinstance(a.handle_copy_config(session), Ok)
    assert isinstance(a.handle_edit_config(session, C, changeset), Ok)
    return a


# -- lock ----------------------------------------------------------------------

def test_lock_records_holder():
    a = agent()
    assert isinstance(a.handle_lock("s1"), Ok)
    assert a.running.lock == "s1"


def test_lock_held_by_other_session_is_denied():
    a = agent()
    a.handle_lock("s1")
    assert a.handle_lock("s2") == Error(Reason.LOCK_DENIED)
    assert a.running.lock == "s1"


def test_relock_is_idempotent():
    a = agent()
    a.handle_lock("s1")
    assert isinstance(a.handle_lock("s1"), Ok)


# -- copy ----------------------------------------------------------------------

def test_copy_creates_locked_candidate_equal_to_running():
    a = agent()
    a.handle_lock("s1")
    assert isinstance(a.handle_copy_config("s1"), Ok)
    assert a.candidate.config == a.running.config and a.candidate.lock == "s1"
    assert isinstance(a.handle_lock("s1", C), Ok)


def test_copy_without_lock():
    assert agent().handle_copy_config("s1") == Error(Reason.NO_LOCK)


def test_copy_twice():
    a = agent()
    a.handle_lock("s1")
    a.handle_copy_config("s1")
    assert a.handle_copy_config("s1") == Error(Reason.CANDIDATE_EXISTS)


def test_injected_copy_failure_leaves_running():
    a = agent()
    before = a.running.config.digest()
    a.handle_lock("s1")
    a.faults.add("copy")
    assert a.handle_copy_config("s1") == Error(Reason.COPY_FAILED)
    assert a.candidate is None and a.running.config.digest() == before


# -- edit ----------------------------------------------------------------------

def test_edit_candidate_differs_by_exactly_that_entry():
    a = staged(agent())
    assert a.candidate.config.flow_table.entries == (RULE.entry,)
    assert a.running.config.flow_table.entries == ()
    assert a.candidate.config.gcls == a.running.config.gcls


def test_invalid_gcl_edit_is_rejected_without_partial_application():
    a = agent()
    a.handle_lock("s1")
    a.handle_copy_config("s1")
    bad = ReplaceGcl(0, 1 * MS, ((100 * US, 0x80),))
    assert a.handle_edit_config("s1", C, (RULE, bad)) == Error(Reason.INVALID_EDIT)
    assert a.candidate.config == a.running.config


def test_edit_needs_lock():
    a = agent()
    assert a.handle_edit_config("s1", R, (RULE,)) == Error(Reason.NO_LOCK)
    a.handle_lock("s1")
    assert a.handle_edit_config("s2", R, (RULE,)) == Error(Reason.NO_LOCK)


def test_direct_edit_of_running_installs_immediately():
    a = agent()
    a.handle_lock("s1")
    assert isinstance(a.handle_edit_config("s1", R, (NARROW,)), Ok)
    assert a.installed[-1].gcls[0].entries == NARROW.entries


@pytest.mark.parametrize("bad", [
    RemoveFlowEntry(0),
    AddFlowEntry(FlowEntry(Match(), Forward(9))),
    AddFlowEntry(FlowEntry(Match(), Forward(1)), position=3),
    ReplaceGcl(5, 1 * MS, ((1 * MS, 0xFF),)),
    ReplaceGcl(0, 0, ()),
])
def test_apply_changeset_rejects(bad):
    with pytest.raises(InvalidEdit):
        apply_changeset(initial(), (bad,), [0, 1])


def test_apply_changeset_positions():
    e1, e2 = FlowEntry(Match(vlan_id=1), Forward(0)), FlowEntry(Match(vlan_id=2), Forward(1))
    cfg = apply_changeset(initial(), (AddFlowEntry(e1), AddFlowEntry(e2, position=0)), [0, 1])
    assert cfg.flow_table.entries == (e2, e1)
    cfg = apply_changeset(cfg, (RemoveFlowEntry(0),), [0, 1])
    assert cfg.flow_table.entries == (e1,)


# -- validate ------------------------------------------------------------------

def test_validate_staged_candidate():
    a = staged(agent())
    assert isinstance(a.handle_validate("s1"), Ok)
    assert a.handle_validate("s2") == Error(Reason.NO_LOCK)
    assert agent().handle_validate("s1") == Error(Reason.NO_CANDIDATE)


# -- commit --------------------------------------------------------------------

def test_prepare_ahead_is_acked():
    a = staged(agent())
    assert isinstance(a.handle_commit_prepare("s1", 2 * MS), CommitReadyAck)
    assert a.pending.execute_at == 2 * MS


def test_prepare_in_the_past_is_nacked():
    a = staged(agent(offset=500))
    a.kernel.run_until(1 * MS - 500)
    # local clock reads exactly 1 ms; the margin makes anything up to 1.01 ms unreachable
    assert a.handle_commit_prepare("s1", 1 * MS) == CommitNack(Reason.TIMESTAMP_IN_PAST)
    assert a.handle_commit_prepare("s1", 1 * MS + 10 * US) == CommitNack(Reason.TIMESTAMP_IN_PAST)
    assert isinstance(a.handle_commit_prepare("s1", 1 * MS + 10 * US + 1), CommitReadyAck)


def test_prepare_without_candidate():
    assert agent().handle_commit_prepare("s1", 5 * MS) == CommitNack(Reason.NO_CANDIDATE)


def test_execute_applies_exactly_at_local_timestamp():
    a = staged(agent(offset=-300))
    a.handle_commit_prepare("s1", 2 * MS)
    assert isinstance(a.handle_commit_execute("s1"), Ok)
    assert a.running.config.flow_table.entries == ()
    a.kernel.run()
    assert a.applied == [("s1", 2 * MS + 300, 2 * MS)]
    assert a.running.config.flow_table.entries == (RULE.entry,)
    fired = [t for t, _, target, label in a.kernel.trace if label == "commit-apply"]
    assert fired == [2 * MS + 300]
    assert a.late == []


def test_execute_without_prepare():
    assert agent().handle_commit_execute("s1") == Error(Reason.NOTHING_PREPARED)


@given(st.integers(-500, 500), st.integers(-500, 500))
def test_two_agents_apply_within_twice_the_bound(o1, o2):
    instants = []
    for off in (o1, o2):
        a = staged(agent(offset=off))
        a.handle_commit_prepare("s1", 3 * MS)
        a.handle_commit_execute("s1")
        a.kernel.run()
        instants.append(a.applied[0][1])
    assert abs(instants[0] - instants[1]) <= 1000


def test_cancel_before_timestamp_discards_candidate():
    a = staged(agent())
    before = a.running.config
    a.handle_commit_prepare("s1", 2 * MS)
    a.handle_commit_execute("s1")
    assert isinstance(a.handle_commit_cancel("s1"), Ok)
    a.kernel.run()
    assert a.running.config == before and a.candidate is None and a.pending is None and a.applied == []


# -- unlock --------------------------------------------------------------------

def test_unlock_held_lock():
    a = agent()
    a.handle_lock("s1")
    assert isinstance(a.handle_unlock("s1"), Ok)
    assert a.running.lock is None


def test_unlock_discards_uncommitted_candidate():
    a = staged(agent())
    before = a.running.config.digest()
    assert isinstance(a.handle_unlock("s1", C), Ok)
    assert isinstance(a.handle_unlock("s1", R), Ok)
    assert a.candidate is None and a.running.config.digest() == before and a.locks_held() == 0


def test_unlock_is_idempotent_and_guarded():
    a = agent()
    assert isinstance(a.handle_unlock("s1"), Ok)
    a.handle_lock("s1")
    assert a.handle_unlock("s2") == Error(Reason.NOT_HOLDER)


def test_candidate_with_pending_commit_cannot_be_unlocked():
    a = staged(agent())
    a.handle_commit_prepare("s1", 2 * MS)
    assert a.handle_unlock("s1", C) == Error(Reason.COMMIT_PENDING)


# -- message wrapper -----------------------------------------------------------

def test_every_request_gets_one_reply_after_processing_delay():
    k = Kernel()
    k.register(ClockModel("sw"))
    k.register(ClockModel("ctl"))
    net = ControlNetwork(k, 100 * US, 100 * US)
    Agent("sw", initial(), [0, 1], k, None, net, p_proc=10 * US)
    replies = []
    net.attach("ctl", lambda src, m: replies.append((k.now, m.msg_id, m.body)))
    for i, body in enumerate([Lock(), CopyConfig(), EditConfig(C, (RULE,)), Validate(), Unlock(C), Unlock()]):
        net.send("ctl", "sw", Message(i, "s1", body))
    k.run()
    assert [m for _, m, _ in replies] == list(range(6))
    assert all(isinstance(b, Ok) for _, _, b in replies)
    assert [t for t, _, _ in replies] == [210 * US + 10 * US * i for i in range(6)]
    assert net.log[0] == "0 down Lock sw 0"
    assert net.log[-1] == f"{160 * US} up Ok sw 5"


def test_control_channel_is_fifo():
    k = Kernel()
    net = ControlNetwork(k, 0, 250 * US, np.random.default_rng(3))
    got = []
    net.attach("b", lambda src, m: got.append(m.msg_id))
    for i in range(200):
        net.send("a", "b", Message(i, "s", Ok()))
    k.run()
    assert got == list(range(200))


ops = st.lists(st.tuples(st.sampled_from(["s1", "s2"]),
                         st.sampled_from(["lock", "copy", "edit", "validate", "unlock_c", "unlock_r"])),
               max_size=25)


@settings(max_examples=200)
@given(ops)
def test_isolation_other_sessions_never_mutate_a_locked_store(seq):
    a = agent()
    for session, op in seq:
        holder = a.running.lock
        before = (a.running.config, None if a.candidate is None else a.candidate.config)
        body = {"lock": Lock(), "copy": CopyConfig(), "edit": EditConfig(C, (RULE,)),
                "validate": Validate(), "unlock_c": Unlock(C), "unlock_r": Unlock()}[op]
        a.handle(session, body)
        if holder is not None and holder != session:
            assert a.running.lock == holder
            assert (a.running.config, None if a.candidate is None else a.candidate.config) == before
        assert a.running.config == initial()
