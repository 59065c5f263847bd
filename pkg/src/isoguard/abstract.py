"""The parametrised abstract transaction model as an executable step function."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Union

from isoguard import core
from isoguard.core import Fingerprint, KVStore, TxId, View
from isoguard.frozen import FrozenDict
from isoguard.levels import IsolationLevel, new_indices


@dataclass(frozen=True)
class Commit:
    cl: str
    sn: int
    u: View
    f: Fingerprint
    u_prime: View | None = None

    @property
    def txid(self) -> TxId:
        return TxId(self.cl, self.sn)


@dataclass(frozen=True)
class XView:
    cl: str
    u: View


@dataclass(frozen=True)
class Skip:
    pass


AbstractEvent = Union[Commit, XView, Skip]


@dataclass(frozen=True)
class Config:
    kvs: KVStore
    views: FrozenDict[str, View] = field(default_factory=FrozenDict)

    def view_of(self, cl: str) -> View:
        """A client without a recorded view sees only initial versions."""
        u = self.views.get(cl)
        return u if u is not None else core.initial_view(self.kvs)


def initial_config(keys: Iterable[str], clients: Iterable[str] = ()) -> Config:
    kvs = core.initial_kvs(keys)
    u0 = core.initial_view(kvs)
    return Config(kvs, FrozenDict({cl: u0 for cl in clients}))


# diagnostic order: basic view guards, LWW, freshness, level-specific, mapping
GUARDS = (
    "view_extension",
    "wf_u",
    "wf_u_prime",
    "lww",
    "freshness",
    "can_commit",
    "v_shift",
    "update_correspondence",
)


@dataclass(frozen=True)
class GuardReport:
    view_extension: bool = True
    wf_u: bool = True
    wf_u_prime: bool = True
    lww: bool = True
    freshness: bool = True
    can_commit: bool = True
    v_shift: bool = True
    update_correspondence: bool = True
    details: FrozenDict[str, str] = field(default_factory=FrozenDict)

    @property
    def passed(self) -> bool:
        return all(getattr(self, g) for g in GUARDS)

    def failed(self) -> list[str]:
        return [g for g in GUARDS if not getattr(self, g)]

    def to_json(self) -> dict:
        out: dict = {g: getattr(self, g) for g in GUARDS}
        out["details"] = dict(sorted(self.details.items()))
        return out


def default_u_prime(kvs: KVStore, kvs2: KVStore, u: View) -> View:
    """``u`` extended with the versions appended by the commit."""
    added = new_indices(kvs, kvs2)
    return FrozenDict({k: u.get(k, frozenset()) | added.get(k, frozenset()) for k in kvs2})


def eval_commit(
    level: IsolationLevel,
    cfg: Config,
    ev: Commit,
    u_prime: View | Callable[[KVStore, KVStore, View], View] | None = None,
) -> tuple[KVStore | None, View | None, GuardReport]:
    """Evaluate every commit guard; return the post-store and post-view if defined.

    ``u_prime`` may be a rule computing the post-commit view from the pre- and
    post-store and ``u``.
    """
    kvs, u, f, t = cfg.kvs, ev.u, ev.f, ev.txid
    details: dict[str, str] = {}

    ext = core.view_leq(cfg.view_of(ev.cl), u)
    if not ext:
        details["view_extension"] = f"current view of {ev.cl} is not included in u"

    problem = core.wf_problem(kvs, u)
    wf_u = problem is None
    if problem:
        details["wf_u"] = problem

    bad_keys = sorted({k for (k, _op) in f if k not in kvs})
    if bad_keys:
        details["fingerprint"] = f"fingerprint mentions unknown keys {bad_keys}"

    if wf_u and not bad_keys:
        lww_problem = core.lww_problem(kvs, u, f)
        kvs2 = core.apply_fingerprint(kvs, t, u, f)
    else:
        lww_problem = "undefined: view not wellformed"
        kvs2 = None
    lww_ok = lww_problem is None
    if lww_problem:
        details["lww"] = lww_problem

    fresh = t in core.next_txids(kvs, ev.cl)
    if not fresh:
        details["freshness"] = f"{t} not fresh; min fresh sn is {core.min_fresh_sn(kvs, ev.cl)}"

    if wf_u:
        deps = level.dep_relation(kvs)
        cc_problem = core.closure_problem(kvs, u, deps)
    else:
        cc_problem = "undefined: view not wellformed"
    if cc_problem:
        details["can_commit"] = cc_problem

    u2 = u_prime if u_prime is not None else ev.u_prime
    if kvs2 is None:
        wf_u2, vs_ok = False, False
        details["wf_u_prime"] = details["v_shift"] = "undefined: post-state not computable"
    else:
        if u2 is None:
            u2 = default_u_prime(kvs, kvs2, u)
        elif callable(u2):
            u2 = u2(kvs, kvs2, u)
        problem2 = core.wf_problem(kvs2, u2)
        wf_u2 = problem2 is None
        if problem2:
            details["wf_u_prime"] = problem2
        vs_ok = level.v_shift(kvs, u, kvs2, u2)
        if not vs_ok:
            details["v_shift"] = f"{level.name} view shift rejected u -> u'"

    report = GuardReport(
        view_extension=ext,
        wf_u=wf_u,
        wf_u_prime=wf_u2,
        lww=lww_ok,
        freshness=fresh,
        can_commit=cc_problem is None,
        v_shift=vs_ok,
        details=FrozenDict(details),
    )
    return kvs2, u2, report


def abs_step(
    level: IsolationLevel, cfg: Config, ev: AbstractEvent, u_prime: View | None = None
) -> tuple[Config, GuardReport]:
    """One abstract transition. Guard failures leave ``cfg`` unchanged."""
    if isinstance(ev, Skip):
        return cfg, GuardReport()
    if isinstance(ev, XView):
        ext = core.view_leq(cfg.view_of(ev.cl), ev.u)
        problem = core.wf_problem(cfg.kvs, ev.u)
        details = {}
        if not ext:
            details["view_extension"] = f"current view of {ev.cl} is not included in u"
        if problem:
            details["wf_u"] = problem
        report = GuardReport(view_extension=ext, wf_u=problem is None, details=FrozenDict(details))
        if not report.passed:
            return cfg, report
        return replace(cfg, views=cfg.views.set(ev.cl, ev.u)), report
    if isinstance(ev, Commit):
        kvs2, u2, report = eval_commit(level, cfg, ev, u_prime)
        if not report.passed:
            return cfg, report
        return Config(kvs2, cfg.views.set(ev.cl, u2)), report
    raise TypeError(f"not an abstract event: {ev!r}")


def abs_run(
    level: IsolationLevel,
    cfg0: Config,
    events: Iterable[AbstractEvent],
    keep_going: bool = False,
) -> tuple[Config, list[GuardReport]]:
    cfg = cfg0
    reports = []
    for ev in events:
        cfg, report = abs_step(level, cfg, ev)
        reports.append(report)
        if not report.passed and not keep_going:
            break
    return cfg, reports


def encode_event(ev: AbstractEvent) -> dict:
    from isoguard import codec

    if isinstance(ev, Commit):
        d = {
            "event": "commit",
            "cl": ev.cl,
            "sn": ev.sn,
            "u": codec.encode_view(ev.u),
            "f": codec.encode_fp(ev.f),
        }
        if ev.u_prime is not None:
            d["u_prime"] = codec.encode_view(ev.u_prime)
        return d
    if isinstance(ev, XView):
        return {"event": "xview", "cl": ev.cl, "u": codec.encode_view(ev.u)}
    return {"event": "skip"}


def decode_event(d: Mapping) -> AbstractEvent:
    from isoguard import codec

    kind = d["event"]
    if kind == "commit":
        up = d.get("u_prime")
        return Commit(
            d["cl"],
            int(d["sn"]),
            codec.decode_view(d["u"]),
            codec.decode_fp(d["f"]),
            codec.decode_view(up) if up is not None else None,
        )
    if kind == "xview":
        return XView(d["cl"], codec.decode_view(d["u"]))
    if kind == "skip":
        return Skip()
    raise ValueError(f"unknown abstract event {kind!r}")


def encode_run(cfg0: Config, events: list[AbstractEvent], reports: list[GuardReport]) -> dict:
    from isoguard import codec

    return {
        "initial": codec.encode_kvs(cfg0.kvs),
        "events": [encode_event(e) for e in events],
        "reports": [r.to_json() for r in reports],
    }
