"""Strict two-phase locking over two-phase commit, no-wait variant.

Each server holds one key: its committed version list, a per-transaction
version state and the per-transaction fingerprint recorded when a lock is
taken. Clients run one transaction at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

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

WORKING = "working"
PREPARED = "prepared"
READ_LOCK = "read_lock"
WRITE_LOCK = "write_lock"
NOT_OKAY = "not_okay"
COMMITTED = "committed"
ABORTED = "aborted"

LOCKED = frozenset({READ_LOCK, WRITE_LOCK})


@dataclass(frozen=True)
class TplClientConf:
    cl_state: str = CL_INIT
    cl_sn: int = 0
    footprint: Footprint | None = None


@dataclass(frozen=True)
class TplServerConf:
    svr_vl: tuple[Version, ...]
    # transactions never touched by this server are implicitly `working`
    svr_state: FrozenDict[TxId, str] = FrozenDict()
    svr_fp: FrozenDict[tuple[TxId, str], str] = FrozenDict()

    def state_of(self, t: TxId) -> str:
        return self.svr_state.get(t, WORKING)

    def last_ver_v(self) -> str:
        return self.svr_vl[-1].value

    def holders(self, kinds: frozenset[str]) -> list[TxId]:
        return [t for t, st in self.svr_state.items() if st in kinds]


@dataclass(frozen=True)
class TplGlobalConf:
    cls: FrozenDict[str, TplClientConf]
    svrs: FrozenDict[str, TplServerConf]


def get_txn(s: TplGlobalConf, cl: str) -> TxId:
    return TxId(cl, s.cls[cl].cl_sn)


def _is_current(s: TplGlobalConf, t: TxId, cl_state: str) -> bool:
    c = s.cls.get(t.cl)
    return c is not None and c.cl_sn == t.sn and c.cl_state == cl_state


def initial_state(keys: Iterable[str], clients: Iterable[str]) -> TplGlobalConf:
    return TplGlobalConf(
        FrozenDict({cl: TplClientConf() for cl in clients}),
        FrozenDict({k: TplServerConf((Version(core.INIT_VALUE, core.T_INIT),)) for k in keys}),
    )


def _apply_fp(vl: list[Version], t: TxId, reads: str | None, writes: str | None) -> None:
    if reads is not None:
        vl[-1] = vl[-1].with_reader(t)
    if writes is not None:
        vl.append(Version(writes, t))


class MappingError(AssertionError):
    """The reconstructed abstract store is ill-defined for this state."""


def r_kvs_tpl(s: TplGlobalConf) -> KVStore:
    """Server version lists extended with client-committed but not yet
    server-committed operations."""
    out = {}
    for k, svr in s.svrs.items():
        vl = list(svr.svr_vl)
        pending = sorted(
            t for t, st in svr.svr_state.items() if st in LOCKED and _is_current(s, t, CL_COMMITTED)
        )
        writers = [t for t in pending if (t, W) in svr.svr_fp]
        if len(writers) > 1:
            raise MappingError(f"{k}: several client-committed writers {writers}")
        # reads attach to the pre-write last version
        for t in pending:
            _apply_fp(vl, t, svr.svr_fp.get((t, R)), None)
        for t in writers:
            _apply_fp(vl, t, None, svr.svr_fp[(t, W)])
        out[k] = tuple(vl)
    return FrozenDict(out)


def txn_fingerprint(s: TplGlobalConf, t: TxId) -> Fingerprint:
    fp = {}
    for k, svr in s.svrs.items():
        for op in (R, W):
            v = svr.svr_fp.get((t, op))
            if v is not None:
                fp[(k, op)] = v
    return FrozenDict(fp)


class S2PL(Protocol):
    name = "s2pl"

    def initial(self, scope: Scope) -> TplGlobalConf:
        return initial_state(scope.key_names, scope.client_names)

    def reconstruct_kvs(self, s: TplGlobalConf) -> KVStore:
        return r_kvs_tpl(s)

    # -- helpers ---------------------------------------------------------------

    @staticmethod
    def _set_client(s: TplGlobalConf, cl: str, **changes) -> TplGlobalConf:
        return replace(s, cls=s.cls.set(cl, replace(s.cls[cl], **changes)))

    @staticmethod
    def _set_server(s: TplGlobalConf, k: str, svr: TplServerConf) -> TplGlobalConf:
        return replace(s, svrs=s.svrs.set(k, svr))

    @staticmethod
    def _mode(s: TplGlobalConf, k: str, t: TxId) -> str | None:
        c = s.cls.get(t.cl)
        if c is None or c.footprint is None or c.cl_sn != t.sn:
            return None
        return c.footprint.get(k)

    # -- client events -----------------------------------------------------------

    def ev_cl_prepare(self, s: TplGlobalConf, cl: str, footprint: Footprint):
        c = s.cls.get(cl)
        if c is None or c.cl_state != CL_INIT or not footprint:
            return None
        if set(footprint) - set(s.svrs):
            return None
        return self._set_client(s, cl, cl_state=CL_PREPARED, footprint=footprint)

    def ev_cl_commit(self, s: TplGlobalConf, cl: str, sn: int, u: View, f: Fingerprint):
        c = s.cls.get(cl)
        if c is None or c.cl_state != CL_PREPARED or sn != c.cl_sn:
            return None
        t = get_txn(s, cl)
        if not all(s.svrs[k].state_of(t) in LOCKED for k in c.footprint):
            return None
        if f != txn_fingerprint(s, t):
            return None
        if u != core.full_view(r_kvs_tpl(s)):
            return None
        return self._set_client(s, cl, cl_state=CL_COMMITTED)

    def ev_cl_abort(self, s: TplGlobalConf, cl: str):
        c = s.cls.get(cl)
        if c is None or c.cl_state != CL_PREPARED:
            return None
        t = get_txn(s, cl)
        if not any(s.svrs[k].state_of(t) == NOT_OKAY for k in c.footprint):
            return None
        return self._set_client(s, cl, cl_state=CL_ABORTED)

    def _ready(self, s: TplGlobalConf, cl: str, cl_state: str, svr_state: str):
        c = s.cls.get(cl)
        if c is None or c.cl_state != cl_state:
            return None
        t = get_txn(s, cl)
        if not all(s.svrs[k].state_of(t) == svr_state for k in c.footprint):
            return None
        return self._set_client(s, cl, cl_state=CL_INIT, cl_sn=c.cl_sn + 1, footprint=None)

    def ev_cl_ready_c(self, s: TplGlobalConf, cl: str):
        return self._ready(s, cl, CL_COMMITTED, COMMITTED)

    def ev_cl_ready_a(self, s: TplGlobalConf, cl: str):
        return self._ready(s, cl, CL_ABORTED, ABORTED)

    # -- server events -----------------------------------------------------------

    def ev_svr_prepare(self, s: TplGlobalConf, k: str, t: TxId):
        if self._mode(s, k, t) is None or not _is_current(s, t, CL_PREPARED):
            return None
        svr = s.svrs[k]
        if svr.state_of(t) != WORKING:
            return None
        return self._set_server(s, k, replace(svr, svr_state=svr.svr_state.set(t, PREPARED)))

    def ev_acq_rd_lock(self, s: TplGlobalConf, k: str, v_r: str, t: TxId):
        svr = s.svrs.get(k)
        if svr is None or svr.state_of(t) != PREPARED or self._mode(s, k, t) != "r":
            return None
        if any(o != t for o in svr.holders(frozenset({WRITE_LOCK}))):
            return None
        if v_r != svr.last_ver_v():
            return None
        return self._set_server(
            s,
            k,
            replace(
                svr,
                svr_state=svr.svr_state.set(t, READ_LOCK),
                svr_fp=svr.svr_fp.set((t, R), v_r),
            ),
        )

    def ev_acq_wr_lock(self, s: TplGlobalConf, k: str, v_w: str, v_r: str | None, t: TxId):
        svr = s.svrs.get(k)
        mode = self._mode(s, k, t)
        if svr is None or svr.state_of(t) != PREPARED or mode not in ("w", "rw"):
            return None
        if any(o != t for o in svr.holders(LOCKED)):
            return None
        # the footprint decides whether the write lock also reads
        if mode == "w" and v_r is not None:
            return None
        if mode == "rw" and v_r != svr.last_ver_v():
            return None
        fp = svr.svr_fp.set((t, W), v_w)
        if v_r is not None:
            fp = fp.set((t, R), v_r)
        return self._set_server(s, k, replace(svr, svr_state=svr.svr_state.set(t, WRITE_LOCK), svr_fp=fp))

    def ev_svr_nok(self, s: TplGlobalConf, k: str, t: TxId):
        svr = s.svrs.get(k)
        mode = self._mode(s, k, t)
        if svr is None or mode is None or svr.state_of(t) != PREPARED:
            return None
        blocking = frozenset({WRITE_LOCK}) if mode == "r" else LOCKED
        if not any(o != t for o in svr.holders(blocking)):
            return None
        return self._set_server(s, k, replace(svr, svr_state=svr.svr_state.set(t, NOT_OKAY)))

    @staticmethod
    def _drop_fp(svr: TplServerConf, t: TxId) -> FrozenDict:
        return FrozenDict({key: v for key, v in svr.svr_fp.items() if key[0] != t})

    def ev_svr_commit(self, s: TplGlobalConf, k: str, t: TxId):
        svr = s.svrs.get(k)
        if svr is None or svr.state_of(t) not in LOCKED or not _is_current(s, t, CL_COMMITTED):
            return None
        vl = list(svr.svr_vl)
        _apply_fp(vl, t, svr.svr_fp.get((t, R)), None)
        _apply_fp(vl, t, None, svr.svr_fp.get((t, W)))
        return self._set_server(
            s,
            k,
            TplServerConf(tuple(vl), svr.svr_state.set(t, COMMITTED), self._drop_fp(svr, t)),
        )

    def ev_svr_abort(self, s: TplGlobalConf, k: str, t: TxId):
        svr = s.svrs.get(k)
        if svr is None or self._mode(s, k, t) is None or not _is_current(s, t, CL_ABORTED):
            return None
        if svr.state_of(t) not in (WORKING, PREPARED, READ_LOCK, WRITE_LOCK, NOT_OKAY):
            return None
        return self._set_server(
            s, k, TplServerConf(svr.svr_vl, svr.svr_state.set(t, ABORTED), self._drop_fp(svr, t))
        )

    # -- exploration -------------------------------------------------------------

    def commit_ghosts(self, s: TplGlobalConf, cl: str) -> Event:
        t = get_txn(s, cl)
        return ev(
            "cl_commit",
            cl=cl,
            sn=t.sn,
            u=core.full_view(r_kvs_tpl(s)),
            f=txn_fingerprint(s, t),
        )

    def candidates(self, s: TplGlobalConf, scope: Scope) -> Iterable[Event]:
        for cl, c in s.cls.items():
            if c.cl_state == CL_INIT:
                if c.cl_sn < scope.txns_per_client:
                    for fp in scope.footprints_for(cl):
                        yield ev("cl_prepare", cl=cl, footprint=fp)
                continue
            t = get_txn(s, cl)
            if c.cl_state == CL_PREPARED:
                if all(s.svrs[k].state_of(t) in LOCKED for k in c.footprint):
                    yield self.commit_ghosts(s, cl)
                yield ev("cl_abort", cl=cl)
            yield ev("cl_ready_c", cl=cl)
            yield ev("cl_ready_a", cl=cl)
            for k, mode in c.footprint.items():
                svr = s.svrs[k]
                yield ev("svr_prepare", k=k, t=t)
                if mode == "r":
                    yield ev("acq_rd_lock", k=k, v_r=svr.last_ver_v(), t=t)
                else:
                    v_r = None if mode == "w" else svr.last_ver_v()
                    for i in range(scope.values):
                        yield ev("acq_wr_lock", k=k, v_w=write_value(t, k, i), v_r=v_r, t=t)
                yield ev("svr_nok", k=k, t=t)
                yield ev("svr_commit", k=k, t=t)
                yield ev("svr_abort", k=k, t=t)

    # -- runtime invariants ------------------------------------------------------

    def invariants(self, s: TplGlobalConf) -> list[str]:
        problems = []
        for k, svr in sorted(s.svrs.items()):
            wl = svr.holders(frozenset({WRITE_LOCK}))
            rl = svr.holders(frozenset({READ_LOCK}))
            if len(wl) > 1:
                problems.append(f"lock: {k} has several write-lock holders {sorted(wl)}")
            if wl and rl:
                problems.append(f"lock: {k} has write lock {wl[0]} and read locks {sorted(rl)}")
            for t, st in svr.svr_state.items():
                has_r = (t, R) in svr.svr_fp
                has_w = (t, W) in svr.svr_fp
                if st == READ_LOCK and (not has_r or has_w):
                    problems.append(f"fingerprint: {k}/{t} read_lock without exactly a read")
                if st == READ_LOCK and has_r and svr.svr_fp[(t, R)] != svr.last_ver_v():
                    problems.append(f"fingerprint: {k}/{t} read value is not the last version")
                if st == WRITE_LOCK and not has_w:
                    problems.append(f"fingerprint: {k}/{t} write_lock without a write")
                if st == WRITE_LOCK and has_r and svr.svr_fp[(t, R)] != svr.last_ver_v():
                    problems.append(f"fingerprint: {k}/{t} read value is not the last version")
                if st not in LOCKED and (has_r or has_w):
                    problems.append(f"fingerprint: {k}/{t} unlocked {st} keeps a fingerprint")
                c = s.cls.get(t.cl)
                if c is None:
                    problems.append(f"past/future: {k} knows unknown client of {t}")
                    continue
                if t.sn < c.cl_sn and st not in (COMMITTED, ABORTED):
                    problems.append(f"past/future: past transaction {t} is {st} on {k}")
                if t.sn > c.cl_sn:
                    problems.append(f"past/future: future transaction {t} is {st} on {k}")
                if t.sn == c.cl_sn and c.cl_state == CL_INIT:
                    problems.append(f"past/future: {t} is {st} on {k} before its prepare")
        try:
            kvs = r_kvs_tpl(s)
        except MappingError as exc:
            return problems + [f"mapping: {exc}"]
        problems += [f"snapshot: {p}" for p in core.kvs_problems(kvs)]
        used = core.txids(kvs)
        for cl, c in sorted(s.cls.items()):
            t = get_txn(s, cl)
            if c.cl_state != CL_COMMITTED and t in used:
                problems.append(f"freshness: current transaction {t} occurs in the store")
        return problems
