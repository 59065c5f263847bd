"""Runtime refinement checking of protocol steps against the abstract model.

For each concrete transition ``s --e--> s'`` the monitor maps both states to
abstract configurations. Client commits must be accepted by the abstract
commit (every guard holds) and land exactly on the mapped post-state; every
other event must leave the mapped store unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping

from isoguard import codec, core
from isoguard.abstract import (
    AbstractEvent,
    Commit,
    Config,
    GuardReport,
    Skip,
    default_u_prime,
    eval_commit,
)
from isoguard.core import KVStore, View
from isoguard.frozen import FrozenDict
from isoguard.levels import IsolationLevel
from isoguard.protocols.base import Event, Protocol
from isoguard.protocols.s2pl import MappingError, r_kvs_tpl
from isoguard.protocols.tapir import r_kvs_tapir

RA_CANDIDATE = "RA-candidate"
LEVEL_SPECIFIC = "level-specific"
MAPPING_SUSPECT = "mapping-suspect"
INVARIANT = "invariant"

DIAGNOSIS = {
    "view_extension": RA_CANDIDATE,
    "wf_u": RA_CANDIDATE,
    "wf_u_prime": RA_CANDIDATE,
    "lww": RA_CANDIDATE,
    "freshness": MAPPING_SUSPECT,
    "can_commit": LEVEL_SPECIFIC,
    "v_shift": LEVEL_SPECIFIC,
    "update_correspondence": MAPPING_SUSPECT,
    "skip_identity": MAPPING_SUSPECT,
    "initial_state": MAPPING_SUSPECT,
    "mapping": MAPPING_SUSPECT,
    "invariant": INVARIANT,
}

EXPLANATION = {
    "lww": "a read does not return the latest version in the commit view; "
    "when another key of the same writer is seen this is a fractured read "
    "and atomic visibility (RA) is violated",
    "wf_u": "the commit view is not atomic or points at missing versions; "
    "either the protocol lacks atomic views (RA violated) or the view mapping is wrong",
    "wf_u_prime": "the post-commit view is not wellformed",
    "view_extension": "versions previously visible to the client vanished from its view",
    "can_commit": "the view is not closed under the level's dependencies: "
    "following them backwards reaches an invisible writer",
    "v_shift": "the client's view change violates the level's session guarantees",
    "freshness": "the committing transaction id is already used in the store",
    "update_correspondence": "the mapped post-state differs from the abstract update",
    "skip_identity": "a non-commit event changed the mapped store",
    "initial_state": "the mapped initial state is not an abstract initial state",
    "mapping": "the refinement mapping is undefined for this state",
    "invariant": "a protocol invariant does not hold",
}


@dataclass(frozen=True)
class RefinementMapping:
    name: str
    r_kvs: Callable[[Any], KVStore]
    r_views: Callable[[Any], Mapping[str, View]]
    pi: Callable[[Event], AbstractEvent]
    u_prime: Callable[[KVStore, KVStore, View], View] = default_u_prime

    def config(self, s: Any) -> Config:
        return Config(self.r_kvs(s), FrozenDict(self.r_views(s)))


def initial_views(s: Any) -> Mapping[str, View]:
    """Every client is mapped to the initial view λk.{0}."""
    return FrozenDict()


def pi_client_commit(e: Event) -> AbstractEvent:
    if e.name == "cl_commit":
        return Commit(e["cl"], e["sn"], e["u"], e["f"])
    return Skip()


TPL_MAPPING = RefinementMapping("s2pl", r_kvs_tpl, initial_views, pi_client_commit)
TAPIR_MAPPING = RefinementMapping("tapir", r_kvs_tapir, initial_views, pi_client_commit)


def mapping_for(protocol: Protocol) -> RefinementMapping:
    return {"s2pl": TPL_MAPPING, "tapir": TAPIR_MAPPING}[protocol.name]


@dataclass(frozen=True)
class Violation:
    step: int
    event: Event | None
    guard: str
    diagnosis: str
    detail: str
    failed_guards: tuple[str, ...] = ()
    abstract_state: Mapping = field(default_factory=dict, compare=False)
    report: GuardReport | None = field(default=None, compare=False)

    def to_json(self) -> dict:
        d = {
            "step": self.step,
            "event": self.event.to_json() if self.event is not None else None,
            "guard": self.guard,
            "failed_guards": list(self.failed_guards or (self.guard,)),
            "diagnosis": self.diagnosis,
            "detail": self.detail,
            "abstract_state": self.abstract_state,
        }
        if self.report is not None:
            d["report"] = self.report.to_json()
        return d

    def text(self) -> str:
        where = f"step {self.step}" + (f" ({self.event})" if self.event is not None else "")
        lines = [
            f"violation at {where}: guard {self.guard} failed [{self.diagnosis}]",
            f"  {self.detail}",
            f"  meaning: {EXPLANATION.get(self.guard, '')}",
        ]
        others = [g for g in self.failed_guards if g != self.guard]
        if others:
            lines.append(f"  also failed: {', '.join(others)}")
        return "\n".join(lines)

    __str__ = text


def _violation(step, e, guard, detail, kvs=None, failed=(), report=None) -> Violation:
    return Violation(
        step=step,
        event=e,
        guard=guard,
        diagnosis=DIAGNOSIS[guard],
        detail=detail,
        failed_guards=tuple(failed) or (guard,),
        abstract_state=codec.encode_kvs(kvs) if kvs is not None else {},
        report=report,
    )


def check_initial(mapping: RefinementMapping, s0: Any) -> Violation | None:
    """The mapped initial state must be an abstract initial configuration."""
    try:
        kvs = mapping.r_kvs(s0)
    except MappingError as exc:
        return _violation(0, None, "mapping", str(exc))
    expected = core.initial_kvs(kvs.keys())
    if kvs != expected:
        return _violation(0, None, "initial_state", "store is not the initial store", kvs)
    views = mapping.r_views(s0)
    u0 = core.initial_view(kvs)
    bad = sorted(cl for cl, u in views.items() if u != u0)
    if bad:
        return _violation(0, None, "initial_state", f"clients {bad} start with non-initial views", kvs)
    return None


def monitor_step(
    mapping: RefinementMapping,
    level: IsolationLevel,
    s: Any,
    e: Event,
    s2: Any,
    step: int = 0,
) -> GuardReport | Violation:
    """Check one concrete transition; pure in its inputs."""
    try:
        cfg = mapping.config(s)
        kvs2 = mapping.r_kvs(s2)
    except MappingError as exc:
        return _violation(step, e, "mapping", str(exc))
    for kvs in (cfg.kvs, kvs2):
        problems = core.kvs_problems(kvs)
        if problems:
            return _violation(step, e, "mapping", "mapped store ill-formed: " + "; ".join(problems), kvs)

    aev = mapping.pi(e)
    if isinstance(aev, Skip):
        if codec.kvs_digest(cfg.kvs) != codec.kvs_digest(kvs2):
            return _violation(step, e, "skip_identity", _store_diff(cfg.kvs, kvs2), cfg.kvs)
        return GuardReport()
    if not isinstance(aev, Commit):
        raise TypeError(f"mapping produced unsupported abstract event {aev!r}")

    post, _u2, report = eval_commit(level, cfg, aev, mapping.u_prime)
    details = dict(report.details)
    if post is None:
        corr = False
        details["update_correspondence"] = "abstract post-state undefined"
    else:
        corr = codec.kvs_digest(post) == codec.kvs_digest(kvs2)
        if not corr:
            details["update_correspondence"] = _store_diff(post, kvs2)
    report = replace(report, update_correspondence=corr, details=FrozenDict(details))
    if report.passed:
        return report
    failed = report.failed()
    guard = failed[0]
    return _violation(step, e, guard, details.get(guard, ""), cfg.kvs, failed, report)


def _store_diff(a: KVStore, b: KVStore) -> str:
    ea, eb = codec.encode_kvs(a), codec.encode_kvs(b)
    keys = sorted(set(ea) | set(eb))
    diffs = [k for k in keys if ea.get(k) != eb.get(k)]
    parts = []
    for k in diffs:
        va = [(v["value"], len(v["readerset"])) for v in ea.get(k, [])]
        vb = [(v["value"], len(v["readerset"])) for v in eb.get(k, [])]
        parts.append(f"{k}: expected {va}, mapped {vb}")
    return "stores differ on " + "; ".join(parts) if parts else "stores differ"


def invariant_violation(protocol: Protocol, s: Any, step: int, e: Event | None) -> Violation | None:
    problems = protocol.invariants(s)
    if not problems:
        return None
    return _violation(step, e, "invariant", "; ".join(problems))


def monitor_run(
    protocol: Protocol,
    level: IsolationLevel,
    s0: Any,
    events: Iterable[Event],
    check_invariants: bool = True,
) -> list[Violation]:
    """Replay ``events`` from ``s0`` under the monitor; collect every violation.

    Raises :class:`~isoguard.protocols.base.DisabledEvent` if an event's guard
    does not hold.
    """
    mapping = mapping_for(protocol)
    out = []
    v0 = check_initial(mapping, s0)
    if v0:
        out.append(v0)
    s = s0
    for i, e in enumerate(events, start=1):
        s2 = protocol.step(s, e)
        res = monitor_step(mapping, level, s, e, s2, i)
        if isinstance(res, Violation):
            out.append(res)
        if check_invariants:
            inv = invariant_violation(protocol, s2, i, e)
            if inv:
                out.append(inv)
        s = s2
    return out
