"""Builtin counterexample schedules and histories.

Client commits are listed without ghost parameters; replay computes them from
the state reached so far.
"""

from __future__ import annotations

from dataclasses import dataclass

from isoguard.core import TxId
from isoguard.frozen import FrozenDict
from isoguard.protocols.base import Event, Scope, ev, footprint, write_value


@dataclass(frozen=True)
class Schedule:
    name: str
    protocol: str
    variant: str | None
    isolation: str
    scope: Scope
    events: tuple[Event, ...]
    description: str = ""


def _prepare(cl: str, ts: int, fp: str) -> Event:
    f = footprint(fp)
    t = TxId(cl, 0)
    wm = FrozenDict({k: write_value(t, k) for k, m in f.items() if "w" in m})
    return ev("cl_prepare", cl=cl, ts=ts, footprint=f, writemap=wm)


def _t(cl: str) -> TxId:
    return TxId(cl, 0)


def _commit(cl: str) -> Event:
    return ev("cl_commit", cl=cl)


def _svr(name: str, k: str, cl: str) -> Event:
    return ev(name, k=k, t=_t(cl))


def fig9a() -> Schedule:
    # c0 runs tx1 (writes A, B at ts 8); c1 runs tx2 (reads A, B at ts 5).
    # tx2 prepares after A1 is committed but while B1 is only prepared.
    events = (
        _prepare("c0", 8, "A:w,B:w"),
        _svr("svr_prepare", "A", "c0"),
        _svr("svr_prepare", "B", "c0"),
        _commit("c0"),
        _svr("svr_commit", "A", "c0"),
        _prepare("c1", 5, "A:r,B:r"),
        _svr("svr_prepare", "A", "c1"),
        _svr("svr_prepare", "B", "c1"),
        _commit("c1"),
        _svr("svr_commit", "B", "c0"),
        _svr("svr_commit", "A", "c1"),
        _svr("svr_commit", "B", "c1"),
        ev("cl_ready_c", cl="c0"),
        ev("cl_ready_c", cl="c1"),
    )
    scope = Scope(
        clients=2,
        keys=2,
        txns_per_client=1,
        ts_bound=9,
        footprints=FrozenDict({"c0": (footprint("A:w,B:w"),), "c1": (footprint("A:r,B:r"),)}),
    )
    return Schedule("fig9a", "tapir", "journal", "sser", scope, events, "TAPIR (journal OCC check): tx2 observes A1 but B0")


def fig9b() -> Schedule:
    # c0: tx1 writes A, B at ts 8; c1: tx2 reads A, B at ts 5;
    # c2: tx3 writes B at ts 6; c3: tx4 prepares a write on B at ts 3 and never commits.
    events = (
        _prepare("c2", 6, "B:w"),
        _svr("svr_prepare", "B", "c2"),
        _prepare("c3", 3, "B:w"),
        _svr("svr_prepare", "B", "c3"),
        _prepare("c0", 8, "A:w,B:w"),
        _svr("svr_prepare", "A", "c0"),
        _svr("svr_prepare", "B", "c0"),
        _commit("c2"),
        _svr("svr_commit", "B", "c2"),
        _commit("c0"),
        _svr("svr_commit", "A", "c0"),
        _prepare("c1", 5, "A:r,B:r"),
        _svr("svr_prepare", "A", "c1"),
        _svr("svr_prepare", "B", "c1"),
        _commit("c1"),
        _svr("svr_commit", "B", "c0"),
        _svr("svr_commit", "A", "c1"),
        _svr("svr_commit", "B", "c1"),
        ev("cl_ready_c", cl="c0"),
        ev("cl_ready_c", cl="c1"),
        ev("cl_ready_c", cl="c2"),
    )
    scope = Scope(
        clients=4,
        keys=2,
        txns_per_client=1,
        ts_bound=9,
        footprints=FrozenDict(
            {
                "c0": (footprint("A:w,B:w"),),
                "c1": (footprint("A:r,B:r"),),
                "c2": (footprint("B:w"),),
                "c3": (footprint("B:w"),),
            }
        ),
    )
    return Schedule(
        "fig9b", "tapir", "conference", "sser", scope, events, "TAPIR (conference OCC check): tx2 observes A1 but B3"
    )


SCHEDULES = {"fig9a": fig9a, "fig9b": fig9b}


def appendix_a_history() -> dict:
    """Txn81 reads K87 from Txn67 and K56 from Txn68, while Txn68 (after Txn67
    in the same session) overwrites K87."""
    return {
        "sessions": [
            {
                "client": "Clt70",
                "txns": [
                    {
                        "name": "Txn67",
                        "sn": 0,
                        "ops": [{"op": "w", "key": "K87", "value": "x67"}],
                    },
                    {
                        "name": "Txn68",
                        "sn": 1,
                        "ops": [
                            {"op": "w", "key": "K87", "value": "x68"},
                            {"op": "w", "key": "K56", "value": "y68"},
                        ],
                    },
                ],
            },
            {
                "client": "Clt01",
                "txns": [
                    {
                        "name": "Txn81",
                        "sn": 0,
                        "ops": [
                            {"op": "r", "key": "K87", "value": "x67"},
                            {"op": "r", "key": "K56", "value": "y68"},
                        ],
                    }
                ],
            },
        ]
    }


HISTORIES = {"appendixA": appendix_a_history}


def get_schedule(name: str) -> Schedule:
    try:
        return SCHEDULES[name]()
    except KeyError:
        raise KeyError(f"unknown schedule {name!r}; builtin: {sorted(SCHEDULES)}") from None
