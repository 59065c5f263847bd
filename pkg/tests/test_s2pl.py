import random

import pytest

from isoguard import core
from isoguard.core import T_INIT, TxId, Version
from isoguard.protocols import S2PL, Scope, ev, footprint
from isoguard.protocols.base import CL_ABORTED, CL_COMMITTED, CL_INIT, CL_PREPARED, DisabledEvent
from isoguard.protocols.s2pl import (
    ABORTED,
    COMMITTED,
    NOT_OKAY,
    PREPARED,
    READ_LOCK,
    WRITE_LOCK,
    get_txn,
    r_kvs_tpl,
)

P = S2PL()
SCOPE = Scope(clients=3, keys=2)
T0, T1, T2 = TxId("c0", 0), TxId("c1", 0), TxId("c2", 0)


def run(*events, s=None):
    s = s if s is not None else P.initial(SCOPE)
    for e in events:
        if e.name == "cl_commit" and "u" not in e.params:
            e = P.commit_ghosts(s, e["cl"])
        s = P.step(s, e)
        assert P.invariants(s) == [], (e, P.invariants(s))
    return s


def commit(cl):
    return ev("cl_commit", cl=cl)


def writer_locked(cl="c0", t=T0, k="A", v="x", mode="w"):
    return [
        ev("cl_prepare", cl=cl, footprint=footprint({k: mode})),
        ev("svr_prepare", k=k, t=t),
        ev("acq_wr_lock", k=k, v_w=v, v_r=None if mode == "w" else "v0", t=t),
    ]


def test_cl_prepare_lifecycle():
    s = P.initial(SCOPE)
    fp = footprint("A:r")
    assert P.try_step(s, ev("cl_prepare", cl="c0", footprint=fp)) is not None
    s = run(ev("cl_prepare", cl="c0", footprint=fp))
    assert s.cls["c0"].cl_state == CL_PREPARED
    assert P.try_step(s, ev("cl_prepare", cl="c0", footprint=fp)) is None
    s = run(ev("svr_prepare", k="A", t=T0), ev("acq_rd_lock", k="A", v_r="v0", t=T0), commit("c0"),
            ev("svr_commit", k="A", t=T0), ev("cl_ready_c", cl="c0"), s=s)
    assert s.cls["c0"].cl_state == CL_INIT and s.cls["c0"].cl_sn == 1
    assert P.try_step(s, ev("cl_prepare", cl="c0", footprint=fp)) is not None


def test_svr_prepare_once_and_not_for_stale_sn():
    s = run(ev("cl_prepare", cl="c0", footprint=footprint("A:w")), ev("svr_prepare", k="A", t=T0))
    assert P.try_step(s, ev("svr_prepare", k="A", t=T0)) is None
    assert P.try_step(s, ev("svr_prepare", k="A", t=TxId("c0", 1))) is None
    # B is outside the footprint
    assert P.try_step(s, ev("svr_prepare", k="B", t=T0)) is None


def test_shared_read_locks_and_value():
    s = run(
        ev("cl_prepare", cl="c0", footprint=footprint("A:r")),
        ev("cl_prepare", cl="c1", footprint=footprint("A:r")),
        ev("svr_prepare", k="A", t=T0),
        ev("svr_prepare", k="A", t=T1),
        ev("acq_rd_lock", k="A", v_r="v0", t=T0),
        ev("acq_rd_lock", k="A", v_r="v0", t=T1),
    )
    assert s.svrs["A"].state_of(T0) == s.svrs["A"].state_of(T1) == READ_LOCK
    assert s.svrs["A"].svr_fp[(T0, "R")] == "v0"
    # only the last committed value may be read
    s2 = run(ev("cl_prepare", cl="c2", footprint=footprint("A:r")), ev("svr_prepare", k="A", t=T2), s=s)
    assert P.try_step(s2, ev("acq_rd_lock", k="A", v_r="other", t=T2)) is None


def test_reader_blocked_by_writer_then_nok():
    s = run(*writer_locked(), ev("cl_prepare", cl="c1", footprint=footprint("A:r")), ev("svr_prepare", k="A", t=T1))
    assert P.try_step(s, ev("acq_rd_lock", k="A", v_r="v0", t=T1)) is None
    s = run(ev("svr_nok", k="A", t=T1), s=s)
    assert s.svrs["A"].state_of(T1) == NOT_OKAY
    s = run(ev("cl_abort", cl="c1"), ev("svr_abort", k="A", t=T1), ev("cl_ready_a", cl="c1"), s=s)
    assert s.cls["c1"].cl_state == CL_INIT and s.cls["c1"].cl_sn == 1


def test_write_lock_variants():
    s = run(*writer_locked())
    assert dict(s.svrs["A"].svr_fp) == {(T0, "W"): "x"}
    s = run(*writer_locked(mode="rw"))
    assert dict(s.svrs["A"].svr_fp) == {(T0, "W"): "x", (T0, "R"): "v0"}
    assert s.svrs["A"].state_of(T0) == WRITE_LOCK


def test_writer_blocked_by_reader():
    s = run(
        ev("cl_prepare", cl="c0", footprint=footprint("A:r")),
        ev("svr_prepare", k="A", t=T0),
        ev("acq_rd_lock", k="A", v_r="v0", t=T0),
        ev("cl_prepare", cl="c1", footprint=footprint("A:w")),
        ev("svr_prepare", k="A", t=T1),
    )
    assert P.try_step(s, ev("acq_wr_lock", k="A", v_w="y", v_r=None, t=T1)) is None
    assert P.try_step(s, ev("svr_nok", k="A", t=T1)) is not None


def test_nok_never_on_uncontended_key():
    s = run(ev("cl_prepare", cl="c0", footprint=footprint("A:rw,B:r")), ev("svr_prepare", k="A", t=T0),
            ev("svr_prepare", k="B", t=T0))
    assert P.try_step(s, ev("svr_nok", k="A", t=T0)) is None
    assert P.try_step(s, ev("svr_nok", k="B", t=T0)) is None


def test_cl_commit_guard_and_fingerprint():
    s = run(
        ev("cl_prepare", cl="c0", footprint=footprint("A:w,B:rw")),
        ev("svr_prepare", k="A", t=T0),
        ev("svr_prepare", k="B", t=T0),
        ev("acq_wr_lock", k="A", v_w="a", v_r=None, t=T0),
    )
    ghost = P.commit_ghosts(s, "c0")
    assert P.try_step(s, ghost) is None  # B not yet locked
    s = run(ev("acq_wr_lock", k="B", v_w="b", v_r="v0", t=T0), s=s)
    ghost = P.commit_ghosts(s, "c0")
    assert ghost["f"] == core.fingerprint(reads={"B": "v0"}, writes={"A": "a", "B": "b"})
    bad = ev("cl_commit", cl="c0", sn=0, u=ghost["u"], f=core.fingerprint(writes={"A": "a"}))
    assert P.try_step(s, bad) is None
    s = run(ghost, s=s)
    assert s.cls["c0"].cl_state == CL_COMMITTED
    # after a client commit no abort path is enabled for its servers
    assert P.try_step(s, ev("svr_abort", k="A", t=T0)) is None
    assert P.try_step(s, ev("cl_abort", cl="c0")) is None


def test_commit_then_apply_and_lock_release():
    s = run(*writer_locked(), ev("cl_prepare", cl="c1", footprint=footprint("A:w")), ev("svr_prepare", k="A", t=T1))
    assert P.try_step(s, ev("acq_wr_lock", k="A", v_w="y", v_r=None, t=T1)) is None
    s = run(commit("c0"), s=s)
    # client-committed write shows in the mapping before the server applies it
    assert r_kvs_tpl(s)["A"][-1] == Version("x", T0)
    assert s.svrs["A"].svr_vl == (Version("v0", T_INIT),)
    before = r_kvs_tpl(s)
    s = run(ev("svr_commit", k="A", t=T0), s=s)
    assert r_kvs_tpl(s) == before
    assert s.svrs["A"].state_of(T0) == COMMITTED
    assert P.try_step(s, ev("acq_wr_lock", k="A", v_w="y", v_r=None, t=T1)) is not None


def test_abort_discards_fingerprint():
    s = run(
        *writer_locked(),
        ev("cl_prepare", cl="c1", footprint=footprint("A:w")),
        ev("svr_prepare", k="A", t=T1),
        ev("svr_nok", k="A", t=T1),
        ev("cl_abort", cl="c1"),
        ev("svr_abort", k="A", t=T1),
    )
    assert s.svrs["A"].state_of(T1) == ABORTED
    assert all(key[0] != T1 for key in s.svrs["A"].svr_fp)


def test_ready_bumps_sn_by_one():
    s = run(*writer_locked(), commit("c0"), ev("svr_commit", k="A", t=T0))
    s2 = run(ev("cl_ready_c", cl="c0"), s=s)
    assert s2.cls["c0"].cl_sn == s.cls["c0"].cl_sn + 1
    assert get_txn(s2, "c0") == TxId("c0", 1)


def test_step_raises_on_disabled_and_bad_params():
    s = P.initial(SCOPE)
    with pytest.raises(DisabledEvent):
        P.step(s, ev("cl_abort", cl="c0"))
    with pytest.raises(DisabledEvent, match="unknown event"):
        P.step(s, ev("teleport", cl="c0"))
    with pytest.raises(DisabledEvent, match="bad parameters"):
        P.step(s, ev("cl_prepare", cl="c0"))


def test_mapping_quiescent_state_is_server_lists():
    s = run(*writer_locked(), commit("c0"), ev("svr_commit", k="A", t=T0), ev("cl_ready_c", cl="c0"))
    assert r_kvs_tpl(s) == core.kvstore({k: svr.svr_vl for k, svr in s.svrs.items()})


def test_random_runs_keep_invariants():
    """Lock and fingerprint invariants; sn never decreases; mapping stable under server events."""
    rng = random.Random(5)
    scope = Scope(clients=3, keys=2, txns_per_client=2, values=2)
    for _ in range(200):
        s = P.initial(scope)
        for _ in range(60):
            evs = P.enabled(s, scope)
            if not evs:
                break
            e = rng.choice(evs)
            s2 = P.step(s, e)
            assert P.invariants(s2) == []
            for cl in s.cls:
                assert s2.cls[cl].cl_sn >= s.cls[cl].cl_sn
            if e.name != "cl_commit":
                assert r_kvs_tpl(s2) == r_kvs_tpl(s)
            s = s2
