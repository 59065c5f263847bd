"""TAPIR's concurrency-control core: 2PC with timestamp-based OCC validation.

Replication is not modelled. The OCC outcomes ABSTAIN and RETRY are both
treated as an abort. Servers keep only per-transaction version states; the
``commit_order`` history variable records, per key, writers in client-commit
order and is read by the refinement mapping only, never by a guard.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

from isoguard import core
from isoguard.core import R, W, Fingerprint, KVStore, TxId, Version, View
from isoguard.frozen import FrozenDict
from isoguard.protocols.base import (
    CL_ABORTED,
    CL_COMMITTED,
    CL_INIT,
    CL_PREPARED,
    Event,
    Footprint,
    Protocol,
    Scope,
    ev,
    write_value,
)

# Timestamps are (clock, client) pairs compared lexicographically, so ties
# between clients never happen.
Ts = tuple[int, str]
INIT_TS: Ts = (0, "")

WORKING = "working"
PREPARED = "prepared"
COMMITTED = "committed"
ABORTED = "aborted"

JOURNAL = "journal"
CONFERENCE = "conference"
VARIANTS = (JOURNAL, CONFERENCE)


@dataclass(frozen=True)
class VerState:
    kind: str
    ts: Ts | None = None
    read: TxId | None = None
    write: str | None = None

    def __str__(self) -> str:
        if self.kind in (PREPARED, COMMITTED):
            return f"{self.kind}({self.ts[0]}, {self.read or '⊥'}, {self.write or '⊥'})"
        return self.kind


WORKING_STATE = VerState(WORKING)
ABORTED_STATE = VerState(ABORTED)


def prepared(ts: Ts, read: TxId | None = None, write: str | None = None) -> VerState:
    return VerState(PREPARED, ts, read, write)


def committed(ts: Ts, read: TxId | None = None, write: str | None = None) -> VerState:
    return VerState(COMMITTED, ts, read, write)


@dataclass(frozen=True)
class TapirClientConf:
    cl_state: str = CL_INIT
    cl_sn: int = 0
    cl_local_time: int = 0
    ts: Ts | None = None
    footprint: Footprint | None = None
    # read results are collected from the servers' prepare responses at commit
    readmap: FrozenDict[str, TxId] = FrozenDict()
    writemap: FrozenDict[str, str] = FrozenDict()


ServerStates = FrozenDict[TxId, VerState]


@dataclass(frozen=True)
class TapirGlobalConf:
    cls: FrozenDict[str, TapirClientConf]
    svrs: FrozenDict[str, ServerStates]
    commit_order: FrozenDict[str, tuple[TxId, ...]]

    def state(self, k: str, t: TxId) -> VerState:
        return self.svrs[k].get(t, WORKING_STATE)


def initial_state(keys: Iterable[str], clients: Iterable[str]) -> TapirGlobalConf:
    keys = list(keys)
    init = committed(INIT_TS, None, core.INIT_VALUE)
    return TapirGlobalConf(
        FrozenDict({cl: TapirClientConf() for cl in clients}),
        FrozenDict({k: FrozenDict({core.T_INIT: init}) for k in keys}),
        FrozenDict({k: (core.T_INIT,) for k in keys}),
    )


def get_txn(s: TapirGlobalConf, cl: str) -> TxId:
    return TxId(cl, s.cls[cl].cl_sn)


def _client_committed(s: TapirGlobalConf, t: TxId) -> bool:
    c = s.cls.get(t.cl)
    return c is not None and c.cl_sn == t.sn and c.cl_state == CL_COMMITTED


# -- timestamp sets -------------------------------------------------------------


def prepared_rd_tstmps(svr: Mapping[TxId, VerState]) -> set[Ts]:
    return {st.ts for st in svr.values() if st.kind == PREPARED and st.read is not None}


def prepared_wr_tstmps(svr: Mapping[TxId, VerState]) -> set[Ts]:
    return {st.ts for st in svr.values() if st.kind == PREPARED and st.write is not None}


def committed_wr_tstmps(svr: Mapping[TxId, VerState]) -> set[Ts]:
    return {st.ts for st in svr.values() if st.kind == COMMITTED and st.write is not None}


def ver_ts(svr: Mapping[TxId, VerState], t: TxId) -> Ts:
    st = svr.get(t)
    if st is None or st.ts is None:
        raise core.ContractError(f"{t} has no timestamped version state")
    return st.ts


def occ_check_branch(
    svr: Mapping[TxId, VerState],
    ts: Ts,
    t_r: TxId | None,
    v_w: str | None,
    variant: str = JOURNAL,
) -> tuple[VerState, str]:
    """Run the validation cascade; also name the branch that decided."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown OCC variant {variant!r}")
    cw = committed_wr_tstmps(svr)
    pw = prepared_wr_tstmps(svr)
    pr = prepared_rd_tstmps(svr)
    if t_r is not None and cw and ver_ts(svr, t_r) < max(cw):
        return ABORTED_STATE, "read-stale"
    if variant == JOURNAL:
        if t_r is not None and pw and ts > min(pw):
            return ABORTED_STATE, "read-after-prepared-write"  # originally ABSTAIN
    elif t_r is not None and pw and ver_ts(svr, t_r) < min(pw):
        return ABORTED_STATE, "read-version-before-prepared-write"  # originally ABSTAIN
    if v_w is not None and pr and ts < max(pr):
        return ABORTED_STATE, "write-before-prepared-read"  # originally RETRY
    if v_w is not None and cw and ts < max(cw):
        return ABORTED_STATE, "write-before-committed-write"  # originally RETRY
    return prepared(ts, t_r, v_w), "prepared"


def tapir_occ_check(
    s: TapirGlobalConf,
    k: str,
    t: TxId,
    ts: Ts,
    t_r: TxId | None,
    v_w: str | None,
    variant: str = JOURNAL,
) -> VerState:
    """OCC validation of ``t`` on server ``k``: ``aborted`` or ``prepared``."""
    return occ_check_branch(s.svrs[k], ts, t_r, v_w, variant)[0]


def latest_committed_writer(svr: Mapping[TxId, VerState]) -> TxId:
    best = max(
        ((st.ts, t) for t, st in svr.items() if st.kind == COMMITTED and st.write is not None),
    )
    return best[1]


# -- refinement mapping support ---------------------------------------------------


def _reader_visible(s: TapirGlobalConf, t: TxId, st: VerState) -> bool:
    if st.kind == COMMITTED:
        return True
    return st.kind == PREPARED and _client_committed(s, t)


def r_kvs_tapir(s: TapirGlobalConf) -> KVStore:
    """Versions in client-commit order; reader sets from client-committed reads."""
    out = {}
    for k, order in s.commit_order.items():
        svr = s.svrs[k]
        readers: dict[TxId, set[TxId]] = {}
        for t, st in svr.items():
            if st.read is not None and t != core.T_INIT and _reader_visible(s, t, st):
                readers.setdefault(st.read, set()).add(t)
        out[k] = tuple(
            Version(svr[w].write, w, frozenset(readers.get(w, ()))) for w in order
        )
    return FrozenDict(out)


def txn_fingerprint(s: TapirGlobalConf, t: TxId) -> Fingerprint:
    """The fingerprint assembled from prepare responses and the client's writes."""
    fp = {}
    c = s.cls[t.cl]
    for k in sorted(c.footprint or ()):
        st = s.state(k, t)
        if st.read is not None:
            fp[(k, R)] = s.svrs[k][st.read].write
    for k, v in c.writemap.items():
        fp[(k, W)] = v
    return FrozenDict(fp)


class Tapir(Protocol):
    name = "tapir"

    def __init__(self, variant: str = JOURNAL) -> None:
        if variant not in VARIANTS:
            raise ValueError(f"unknown TAPIR variant {variant!r}")
        self.variant = variant

    def initial(self, scope: Scope) -> TapirGlobalConf:
        return initial_state(scope.key_names, scope.client_names)

    def reconstruct_kvs(self, s: TapirGlobalConf) -> KVStore:
        return r_kvs_tapir(s)

    @staticmethod
    def _set_client(s: TapirGlobalConf, cl: str, **changes) -> TapirGlobalConf:
        return replace(s, cls=s.cls.set(cl, replace(s.cls[cl], **changes)))

    @staticmethod
    def _set_state(s: TapirGlobalConf, k: str, t: TxId, st: VerState) -> TapirGlobalConf:
        return replace(s, svrs=s.svrs.set(k, s.svrs[k].set(t, st)))

    @staticmethod
    def _current(s: TapirGlobalConf, t: TxId, cl_state: str) -> TapirClientConf | None:
        c = s.cls.get(t.cl)
        if c is None or c.cl_sn != t.sn or c.cl_state != cl_state:
            return None
        return c

    # -- client events -----------------------------------------------------------

    def ev_cl_prepare(
        self, s: TapirGlobalConf, cl: str, ts: int, footprint: Footprint, writemap: Mapping[str, str]
    ):
        c = s.cls.get(cl)
        if c is None or c.cl_state != CL_INIT or not footprint:
            return None
        # loosely synchronised clocks: any strictly larger local value
        if ts <= c.cl_local_time:
            return None
        if set(footprint) - set(s.svrs):
            return None
        if set(writemap) != {k for k, m in footprint.items() if "w" in m}:
            return None
        return self._set_client(
            s,
            cl,
            cl_state=CL_PREPARED,
            cl_local_time=ts,
            ts=(ts, cl),
            footprint=footprint,
            readmap=FrozenDict(),
            writemap=FrozenDict(writemap),
        )

    def ev_cl_commit(self, s: TapirGlobalConf, cl: str, sn: int, u: View, f: Fingerprint):
        c = s.cls.get(cl)
        if c is None or c.cl_state != CL_PREPARED or sn != c.cl_sn:
            return None
        t = get_txn(s, cl)
        for k in c.footprint:
            st = s.state(k, t)
            if st.kind != PREPARED or st.ts != c.ts:
                return None
        if f != txn_fingerprint(s, t):
            return None
        if u != core.full_view(r_kvs_tapir(s)):
            return None
        readmap = FrozenDict({k: s.state(k, t).read for k, m in c.footprint.items() if "r" in m})
        order = dict(s.commit_order)
        for k in c.writemap:
            order[k] = order[k] + (t,)
        s = replace(s, commit_order=FrozenDict(order))
        return self._set_client(s, cl, cl_state=CL_COMMITTED, readmap=readmap)

    def ev_cl_abort(self, s: TapirGlobalConf, cl: str):
        c = s.cls.get(cl)
        if c is None or c.cl_state != CL_PREPARED:
            return None
        t = get_txn(s, cl)
        if not any(s.state(k, t).kind == ABORTED for k in c.footprint):
            return None
        return self._set_client(s, cl, cl_state=CL_ABORTED)

    def _ready(self, s: TapirGlobalConf, cl: str, cl_state: str, kind: str):
        c = s.cls.get(cl)
        if c is None or c.cl_state != cl_state:
            return None
        t = get_txn(s, cl)
        if not all(s.state(k, t).kind == kind for k in c.footprint):
            return None
        return self._set_client(
            s,
            cl,
            cl_state=CL_INIT,
            cl_sn=c.cl_sn + 1,
            ts=None,
            footprint=None,
            readmap=FrozenDict(),
            writemap=FrozenDict(),
        )

    def ev_cl_ready_c(self, s: TapirGlobalConf, cl: str):
        return self._ready(s, cl, CL_COMMITTED, COMMITTED)

    def ev_cl_ready_a(self, s: TapirGlobalConf, cl: str):
        return self._ready(s, cl, CL_ABORTED, ABORTED)

    # -- server events -----------------------------------------------------------

    def ev_svr_prepare(self, s: TapirGlobalConf, k: str, t: TxId):
        c = self._current(s, t, CL_PREPARED)
        if c is None or k not in c.footprint or k not in s.svrs:
            return None
        if s.state(k, t).kind != WORKING:
            return None
        svr = s.svrs[k]
        mode = c.footprint[k]
        t_r = latest_committed_writer(svr) if "r" in mode else None
        v_w = c.writemap.get(k)
        return self._set_state(s, k, t, occ_check_branch(svr, c.ts, t_r, v_w, self.variant)[0])

    def ev_svr_commit(self, s: TapirGlobalConf, k: str, t: TxId):
        if self._current(s, t, CL_COMMITTED) is None or k not in s.svrs:
            return None
        st = s.state(k, t)
        if st.kind != PREPARED:
            return None
        return self._set_state(s, k, t, replace(st, kind=COMMITTED))

    def ev_svr_abort(self, s: TapirGlobalConf, k: str, t: TxId):
        c = self._current(s, t, CL_ABORTED)
        if c is None or k not in c.footprint:
            return None
        if s.state(k, t).kind not in (WORKING, PREPARED):
            return None
        return self._set_state(s, k, t, ABORTED_STATE)

    # -- exploration -------------------------------------------------------------

    def commit_ghosts(self, s: TapirGlobalConf, cl: str) -> Event:
        t = get_txn(s, cl)
        return ev("cl_commit", cl=cl, sn=t.sn, u=core.full_view(r_kvs_tapir(s)), f=txn_fingerprint(s, t))

    def candidates(self, s: TapirGlobalConf, scope: Scope) -> Iterable[Event]:
        for cl, c in s.cls.items():
            if c.cl_state == CL_INIT:
                if c.cl_sn >= scope.txns_per_client:
                    continue
                t = get_txn(s, cl)
                for fp in scope.footprints_for(cl):
                    wkeys = [k for k, m in fp.items() if "w" in m]
                    for choice in _value_choices(len(wkeys), scope.values):
                        wm = FrozenDict({k: write_value(t, k, i) for k, i in zip(wkeys, choice)})
                        for ts in range(c.cl_local_time + 1, scope.ts_bound + 1):
                            yield ev("cl_prepare", cl=cl, ts=ts, footprint=fp, writemap=wm)
                continue
            t = get_txn(s, cl)
            if c.cl_state == CL_PREPARED:
                if all(s.state(k, t).kind == PREPARED for k in c.footprint):
                    yield self.commit_ghosts(s, cl)
                yield ev("cl_abort", cl=cl)
            yield ev("cl_ready_c", cl=cl)
            yield ev("cl_ready_a", cl=cl)
            for k in c.footprint:
                yield ev("svr_prepare", k=k, t=t)
                yield ev("svr_commit", k=k, t=t)
                yield ev("svr_abort", k=k, t=t)

    def invariants(self, s: TapirGlobalConf) -> list[str]:
        problems = []
        for k, order in sorted(s.commit_order.items()):
            if len(set(order)) != len(order):
                problems.append(f"commit_order: {k} has duplicates")
            svr = s.svrs[k]
            expected = {
                t
                for t, st in svr.items()
                if t != core.T_INIT and st.write is not None and _reader_visible(s, t, st)
            }
            if set(order) - {core.T_INIT} != expected:
                problems.append(f"commit_order: {k} lists {list(map(str, order))}, expected writers {sorted(map(str, expected))}")
        for k, svr in sorted(s.svrs.items()):
            for t, st in svr.items():
                if t == core.T_INIT:
                    continue
                c = s.cls.get(t.cl)
                if c is None:
                    problems.append(f"past/future: {k} knows unknown client of {t}")
                    continue
                if t.sn > c.cl_sn:
                    problems.append(f"past/future: future transaction {t} is {st.kind} on {k}")
                elif t.sn < c.cl_sn and st.kind not in (COMMITTED, ABORTED):
                    problems.append(f"past/future: past transaction {t} is {st.kind} on {k}")
                elif t.sn == c.cl_sn:
                    if c.cl_state == CL_INIT:
                        problems.append(f"past/future: {t} is {st.kind} on {k} before its prepare")
                    if st.kind == COMMITTED and (c.cl_state != CL_COMMITTED or st.ts != c.ts):
                        problems.append(f"commit: {k}/{t} committed without a matching client commit")
        kvs = r_kvs_tapir(s)
        problems += [f"snapshot: {p}" for p in core.kvs_problems(kvs)]
        used = core.txids(kvs)
        for cl, c in sorted(s.cls.items()):
            t = get_txn(s, cl)
            if c.cl_state != CL_COMMITTED and t in used:
                problems.append(f"freshness: current transaction {t} occurs in the store")
        return problems


def _value_choices(n: int, values: int) -> Iterable[tuple[int, ...]]:
    return itertools.product(range(values), repeat=n)
