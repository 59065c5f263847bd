"""Bounded exploration of protocol transition systems under the refinement monitor.

Two modes share one step routine: exhaustive depth-first search with a
visited set, and seeded random walks that restart from the initial state once
no event is enabled. Every transition is checked by the monitor and every new
state by the protocol's invariants.
"""

from __future__ import annotations

import os
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from isoguard import codec
from isoguard.core import R, W, T_INIT, TxId
from isoguard.levels import IsolationLevel, get_level
from isoguard.monitor import (
    Violation,
    check_initial,
    invariant_violation,
    mapping_for,
    monitor_step,
)
from isoguard.protocols import make_protocol
from isoguard.protocols.base import DisabledEvent, Event, Protocol, Scope

CLEAN = "clean"
VIOLATION = "violation"
BOUNDED = "bounded"


def successors(protocol: Protocol, s: Any, scope: Scope) -> list[tuple[Event, Any]]:
    """Enabled events with their successor states, in canonical order."""
    out = []
    for e in protocol.candidates(s, scope):
        s2 = protocol.try_step(s, e)
        if s2 is not None:
            out.append((e, s2))
    out.sort(key=lambda p: p[0].sort_key())
    return out


def enabled_events(protocol: Protocol, s: Any, scope: Scope) -> list[Event]:
    return [e for e, _ in successors(protocol, s, scope)]


@dataclass
class Stats:
    states: int = 0
    transitions: int = 0
    max_depth: int = 0
    per_depth: list[int] = field(default_factory=list)
    terminal_states: int = 0
    restarts: int = 0
    filtered: int = 0
    elapsed: float = 0.0

    def record_depth(self, d: int) -> None:
        while len(self.per_depth) <= d:
            self.per_depth.append(0)
        self.per_depth[d] += 1
        self.max_depth = max(self.max_depth, d)

    def to_json(self) -> dict:
        # elapsed time is left out so identical runs serialise identically
        return {
            "states": self.states,
            "transitions": self.transitions,
            "max_depth": self.max_depth,
            "per_depth": list(self.per_depth),
            "terminal_states": self.terminal_states,
            "restarts": self.restarts,
            "filtered": self.filtered,
        }


@dataclass
class ExploreResult:
    protocol: str
    variant: str | None
    isolation: str
    scope: Scope
    mode: str
    verdict: str
    violations: list[Violation]
    traces: list[list[Event]]
    stats: Stats
    seed: int | None = None
    histories: list[list[Event]] = field(default_factory=list)
    bound_reason: str | None = None

    @property
    def first_trace(self) -> list[Event] | None:
        return self.traces[0] if self.traces else None

    def trace_json(self, index: int = 0) -> dict:
        return trace_to_json(
            self.protocol,
            self.variant,
            self.isolation,
            self.scope,
            self.traces[index],
            {"status": VIOLATION, "violations": [self.violations[index].to_json()]},
        )

    def to_json(self) -> dict:
        d = {
            "protocol": self.protocol,
            "variant": self.variant,
            "isolation": self.isolation,
            "scope": self.scope.to_json(),
            "mode": self.mode,
            "seed": self.seed,
            "verdict": self.verdict,
            "violations": [v.to_json() for v in self.violations],
            "stats": self.stats.to_json(),
        }
        if self.bound_reason:
            d["bound_reason"] = self.bound_reason
        return d


def trace_to_json(
    protocol: str,
    variant: str | None,
    isolation: str,
    scope: Scope,
    events: Sequence[Event],
    verdict: Mapping,
) -> dict:
    return {
        "protocol": protocol,
        "variant": variant,
        "isolation": isolation,
        "scope": scope.to_json(),
        "events": [e.to_json() for e in events],
        "verdict": dict(verdict),
    }


def _check_edge(protocol, mapping, level, s, e, s2, step, new_state) -> list[Violation]:
    found = []
    res = monitor_step(mapping, level, s, e, s2, step)
    if isinstance(res, Violation):
        found.append(res)
    if new_state:
        inv = invariant_violation(protocol, s2, step, e)
        if inv is not None:
            found.append(inv)
    return found


def explore_dfs(
    protocol: Protocol,
    level: IsolationLevel,
    scope: Scope,
    max_states: int | None = None,
    keep_going: bool = False,
    collect_histories: bool = False,
    accept: Callable[[Violation, list[Event]], bool] | None = None,
) -> ExploreResult:
    """Depth-first search over reachable states within ``scope.depth``.

    States are frozen dataclasses, so the visited set hashes them structurally.
    Stops at the first violation unless ``keep_going``. With ``accept``, only
    violations it approves are reported; the others are counted in
    ``stats.filtered`` and the search continues.
    """
    t0 = time.perf_counter()
    mapping = mapping_for(protocol)
    stats = Stats()
    violations: list[Violation] = []
    traces: list[list[Event]] = []
    histories: list[list[Event]] = []
    bound_reason = None

    s0 = protocol.initial(scope)
    v0 = check_initial(mapping, s0)
    if v0 is not None:
        violations.append(v0)
        traces.append([])
    inv0 = invariant_violation(protocol, s0, 0, None)
    if inv0 is not None:
        violations.append(inv0)
        traces.append([])

    visited = {s0}
    stats.states = 1
    stats.record_depth(0)
    path: list[Event] = []
    succ0 = successors(protocol, s0, scope)
    stack = [iter(succ0)]
    states = [s0]
    if not succ0:
        stats.terminal_states += 1
        if collect_histories:
            histories.append([])
    stop = bool(violations) and not keep_going

    while stack and not stop:
        nxt = next(stack[-1], None)
        if nxt is None:
            stack.pop()
            states.pop()
            if path:
                path.pop()
            continue
        e, s2 = nxt
        s = states[-1]
        depth = len(path) + 1
        stats.transitions += 1
        is_new = s2 not in visited
        found = _check_edge(protocol, mapping, level, s, e, s2, depth, is_new)
        if found and accept is not None:
            kept = [v for v in found if accept(v, path + [e])]
            stats.filtered += len(found) - len(kept)
            found = kept
        if found:
            for v in found:
                violations.append(v)
                traces.append(path + [e])
            if not keep_going:
                stop = True
                break
        if not is_new:
            continue
        if max_states is not None and stats.states >= max_states:
            bound_reason = f"state cap {max_states} reached"
            break
        visited.add(s2)
        stats.states += 1
        stats.record_depth(depth)
        succ = successors(protocol, s2, scope)
        if not succ:
            stats.terminal_states += 1
            if collect_histories:
                histories.append(path + [e])
            continue
        if depth >= scope.depth:
            bound_reason = f"depth bound {scope.depth} reached"
            continue
        path.append(e)
        states.append(s2)
        stack.append(iter(succ))

    if violations:
        verdict = VIOLATION
    elif bound_reason:
        verdict = BOUNDED
    else:
        verdict = CLEAN
    stats.elapsed = time.perf_counter() - t0
    return ExploreResult(
        protocol.name,
        protocol.variant,
        level.name,
        scope,
        "dfs",
        verdict,
        violations,
        traces,
        stats,
        histories=histories,
        bound_reason=bound_reason,
    )


def random_walk(
    protocol: Protocol,
    level: IsolationLevel,
    scope: Scope,
    seed: int,
    steps: int,
    keep_going: bool = True,
    collect_histories: bool = False,
) -> ExploreResult:
    """A seeded walk of ``steps`` transitions choosing uniformly among enabled events.

    When no event is enabled the walk restarts from the initial state; each
    violation's trace runs from the most recent restart.
    """
    t0 = time.perf_counter()
    rng = random.Random(seed)
    mapping = mapping_for(protocol)
    stats = Stats()
    violations: list[Violation] = []
    traces: list[list[Event]] = []
    histories: list[list[Event]] = []

    s0 = protocol.initial(scope)
    v0 = check_initial(mapping, s0)
    if v0 is not None:
        violations.append(v0)
        traces.append([])
    s = s0
    path: list[Event] = []
    seen = {s0}
    stats.states = 1
    for _ in range(steps):
        succ = successors(protocol, s, scope)
        if not succ or len(path) >= scope.depth:
            if not succ:
                stats.terminal_states += 1
                if collect_histories:
                    histories.append(path)
            stats.restarts += 1
            s, path = s0, []
            succ = successors(protocol, s, scope)
            if not succ:
                break
        e, s2 = succ[rng.randrange(len(succ))]
        stats.transitions += 1
        is_new = s2 not in seen
        if is_new:
            seen.add(s2)
            stats.states += 1
        found = _check_edge(protocol, mapping, level, s, e, s2, len(path) + 1, True)
        path = path + [e]
        for v in found:
            violations.append(v)
            traces.append(path)
        if found and not keep_going:
            break
        s = s2
        stats.record_depth(len(path))
    stats.elapsed = time.perf_counter() - t0
    return ExploreResult(
        protocol.name,
        protocol.variant,
        level.name,
        scope,
        "random",
        VIOLATION if violations else CLEAN,
        violations,
        traces,
        stats,
        seed=seed,
        histories=histories,
    )


def explore(
    protocol: Protocol,
    level: IsolationLevel,
    scope: Scope,
    mode: str = "dfs",
    seed: int = 0,
    steps: int = 10_000,
    max_states: int | None = None,
    keep_going: bool = False,
    collect_histories: bool = False,
    accept: Callable[[Violation, list[Event]], bool] | None = None,
) -> ExploreResult:
    if mode == "dfs":
        return explore_dfs(protocol, level, scope, max_states, keep_going, collect_histories, accept)
    if mode == "random":
        return random_walk(protocol, level, scope, seed, steps, keep_going, collect_histories)
    raise ValueError(f"unknown exploration mode {mode!r}")


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("ISOGUARD_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"ISOGUARD_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


def _walk_job(args: tuple) -> ExploreResult:
    proto_name, variant, level_name, scope, seed, steps, keep_going, histories = args
    protocol = make_protocol(proto_name, variant)
    return random_walk(protocol, get_level(level_name), scope, seed, steps, keep_going, histories)


def run_walks(
    protocol: Protocol,
    level: IsolationLevel,
    scope: Scope,
    seeds: Iterable[int],
    steps: int,
    keep_going: bool = True,
    workers: int | None = None,
    collect_histories: bool = False,
) -> list[ExploreResult]:
    """Independent random walks, one per seed, in seed order."""
    variant = protocol.variant if protocol.name == "tapir" else None
    jobs = [(protocol.name, variant, level.name, scope, sd, steps, keep_going, collect_histories) for sd in seeds]
    n = min(worker_count(workers), len(jobs))
    if n <= 1:
        return [_walk_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_walk_job, jobs))


# -- replay ------------------------------------------------------------------------


@dataclass
class ReplayResult:
    protocol: str
    variant: str | None
    isolation: str
    scope: Scope
    events: list[Event]
    violations: list[Violation]
    disabled: tuple[int, Event, str] | None = None
    final_state: Any = None

    @property
    def verdict(self) -> str:
        if self.disabled is not None:
            return "invalid"
        return VIOLATION if self.violations else CLEAN

    def to_json(self) -> dict:
        d = trace_to_json(
            self.protocol,
            self.variant,
            self.isolation,
            self.scope,
            self.events,
            {"status": self.verdict, "violations": [v.to_json() for v in self.violations]},
        )
        if self.disabled is not None:
            i, e, why = self.disabled
            d["disabled"] = {"step": i, "event": e.to_json(), "reason": why}
        return d


def resolve_event(protocol: Protocol, s: Any, e: Event) -> Event:
    """Fill in a client commit's ghost parameters when a schedule omits them."""
    if e.name == "cl_commit" and "u" not in e.params and hasattr(protocol, "commit_ghosts"):
        cl = e["cl"]
        if cl in s.cls:
            full = protocol.commit_ghosts(s, cl)
            if "sn" in e.params and e["sn"] != full["sn"]:
                return Event(e.name, full.params.set("sn", e["sn"]))
            return full
    return e


def replay(
    protocol: Protocol,
    level: IsolationLevel,
    scope: Scope,
    events: Iterable[Event],
    check_invariants: bool = True,
) -> ReplayResult:
    """Execute ``events`` exactly, stopping at the first disabled one."""
    mapping = mapping_for(protocol)
    s = protocol.initial(scope)
    out: list[Violation] = []
    v0 = check_initial(mapping, s)
    if v0 is not None:
        out.append(v0)
    done: list[Event] = []
    disabled = None
    for i, e in enumerate(events, start=1):
        e = resolve_event(protocol, s, e)
        try:
            s2 = protocol.step(s, e)
        except DisabledEvent as exc:
            disabled = (i, e, str(exc))
            break
        done.append(e)
        res = monitor_step(mapping, level, s, e, s2, i)
        if isinstance(res, Violation):
            out.append(res)
        if check_invariants:
            inv = invariant_violation(protocol, s2, i, e)
            if inv is not None:
                out.append(inv)
        s = s2
    variant = protocol.variant if protocol.name == "tapir" else None
    return ReplayResult(protocol.name, variant, level.name, scope, done, out, disabled, s)


def load_trace(d: Mapping) -> tuple[Protocol, IsolationLevel, Scope, list[Event]]:
    for key in ("protocol", "isolation", "events"):
        if key not in d:
            raise ValueError(f"trace lacks field {key!r}")
    protocol = make_protocol(d["protocol"], d.get("variant"))
    level = get_level(d["isolation"])
    scope = Scope.from_json(d.get("scope", {}))
    events = [Event.from_json(e) for e in d["events"]]
    return protocol, level, scope, events


# -- history emission -----------------------------------------------------------------


def _txn_label(t: TxId | None) -> str:
    return "init" if t is None or t == T_INIT else f"{t.cl}:{t.sn}"


def emit_history(events: Iterable[Event], initial: str = "v0") -> dict:
    """Project client-committed transactions into per-client sessions.

    Transactions appear in commit order within their session; aborted ones never
    reach a client commit and are dropped. Reads name the writer inferred from
    the (unique) value.
    """
    sessions: dict[str, list[dict]] = {}
    writer_of: dict[tuple[str, str], TxId] = {}
    for e in events:
        if e.name != "cl_commit":
            continue
        f = e["f"]
        t = TxId(e["cl"], e["sn"])
        for (k, op), v in f.items():
            if op == W:
                writer_of[(k, v)] = t
        ops = []
        for (k, op), v in sorted(f.items()):
            if op == R:
                ops.append({"op": "r", "key": k, "value": v})
        for (k, op), v in sorted(f.items()):
            if op == W:
                ops.append({"op": "w", "key": k, "value": v})
        sessions.setdefault(t.cl, []).append({"sn": t.sn, "ops": ops})
    for txns in sessions.values():
        for txn in txns:
            for op in txn["ops"]:
                if op["op"] == "r":
                    op["writer"] = _txn_label(writer_of.get((op["key"], op["value"])))
    return {"sessions": [{"client": cl, "txns": txns} for cl, txns in sorted(sessions.items())]}


def trace_dot(events: Sequence[Event], violations: Sequence[Violation] = ()) -> str:
    """A linear DOT rendering of a trace; violating steps are highlighted."""
    bad = {v.step for v in violations}
    lines = ["digraph trace {", "  rankdir=TB;", "  node [shape=box, fontname=monospace];"]
    lines.append('  s0 [label="initial"];')
    for i, e in enumerate(events, start=1):
        colour = ', color=red, fontcolor=red' if i in bad else ""
        label = str(e).replace('"', "'")
        lines.append(f'  s{i} [label="{i}: {label}"{colour}];')
        lines.append(f"  s{i - 1} -> s{i};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def dumps_trace(d: Mapping) -> str:
    return codec.dumps(d, indent=2) + "\n"


def confirmed_by_history(v: Violation, trace: list[Event]) -> bool:
    """True when the trace's client history itself violates RA."""
    from isoguard import history

    h = history.from_json(emit_history(trace))
    return bool(h.txns) and not history.check_ra(h).ok
