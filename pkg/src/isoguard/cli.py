"""Command-line entry point: explore, replay, simulate, check-history.

Exit codes: 0 clean, 1 violation, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Sequence

from isoguard import codec, history
from isoguard.explorer import (
    BOUNDED,
    ExploreResult,
    confirmed_by_history,
    dumps_trace,
    emit_history,
    explore,
    load_trace,
    replay,
    run_walks,
    trace_dot,
)
from isoguard.levels import get_level, levels
from isoguard.protocols import make_protocol
from isoguard.protocols.base import Scope, parse_footprints
from isoguard.schedules import HISTORIES, SCHEDULES, get_schedule

EXIT_CLEAN = 0
EXIT_VIOLATION = 1
EXIT_ERROR = 2


class UsageError(Exception):
    pass


def _scope_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scope")
    g.add_argument("--clients", type=int, default=2)
    g.add_argument("--keys", type=int, default=2)
    g.add_argument("--txns", type=int, default=1, help="transactions per client")
    g.add_argument("--values", type=int, default=1, help="write-value choices per key")
    g.add_argument("--ts-bound", type=int, default=9, help="largest TAPIR timestamp")
    g.add_argument("--depth", type=int, default=200)
    g.add_argument(
        "--footprints",
        default="all",
        help='per-client footprints, e.g. "c0=A:w,B:w;c1=A:r,B:r|A:rw" (default: all)',
    )


def _protocol_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--protocol", choices=("s2pl", "tapir"), default="s2pl")
    p.add_argument("--variant", choices=("journal", "conference"), default=None, help="TAPIR OCC check")
    p.add_argument("--isolation", default="sser", help="ra | tcc | sser")


def _output_args(p: argparse.ArgumentParser, trace: bool = True) -> None:
    if trace:
        p.add_argument("--trace-out", metavar="PATH", help="write the (counterexample) trace as JSON")
        p.add_argument("--emit-history", metavar="PATH", help="write the client history as JSON")
    p.add_argument("--emit-dot", metavar="PATH", help="write a DOT graph")
    p.add_argument("--report-dir", metavar="DIR", help="write summary.csv and PNG figures here")
    p.add_argument("--json", action="store_true", help="machine-readable output on stdout")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isoguard", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("explore", help="bounded exploration under the refinement monitor")
    _protocol_args(e)
    _scope_args(e)
    e.add_argument("--mode", choices=("dfs", "random"), default="dfs")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--steps", type=int, default=10_000, help="steps per random walk")
    e.add_argument("--walks", type=int, default=1, help="random walks (seeds seed, seed+1, ...)")
    e.add_argument("--max-states", type=int, default=None, help="cap on visited states (dfs)")
    e.add_argument("--keep-going", action="store_true", help="collect every violation")
    e.add_argument(
        "--confirm-ra",
        action="store_true",
        help="report only violations whose client history fails the black-box RA check (dfs)",
    )
    _output_args(e)

    r = sub.add_parser("replay", help="replay a builtin schedule or a trace file")
    r.add_argument("target", help=f"builtin ({', '.join(sorted(SCHEDULES))}) or trace JSON path")
    r.add_argument("--isolation", default=None, help="override the trace's isolation level")
    r.add_argument("--variant", choices=("journal", "conference"), default=None, help="override TAPIR variant")
    _output_args(r)

    s = sub.add_parser("simulate", help="seeded random walks")
    _protocol_args(s)
    _scope_args(s)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=10_000)
    s.add_argument("--walks", type=int, default=1)
    _output_args(s)

    c = sub.add_parser("check-history", help="black-box read-atomicity check of a history")
    c.add_argument("target", help=f"history file (JSON or line log) or builtin ({', '.join(sorted(HISTORIES))})")
    _output_args(c, trace=False)

    sub.add_parser("list", help="list builtin schedules, histories and isolation levels")
    return p


# -- helpers ----------------------------------------------------------------------------


def _scope(a: argparse.Namespace) -> Scope:
    try:
        fps = parse_footprints(a.footprints)
        return Scope(
            clients=a.clients,
            keys=a.keys,
            txns_per_client=a.txns,
            values=a.values,
            ts_bound=a.ts_bound,
            depth=a.depth,
            footprints=fps,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _protocol(a: argparse.Namespace):
    if a.protocol != "tapir" and a.variant is not None:
        raise UsageError("--variant is only valid with --protocol tapir")
    try:
        return make_protocol(a.protocol, a.variant), get_level(a.isolation)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc).strip("'\"")) from None


def _write(path: str, text: str) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _out(a: argparse.Namespace, payload: dict, text: str) -> None:
    if a.json:
        sys.stdout.write(codec.dumps(payload, indent=2) + "\n")
    else:
        sys.stdout.write(text.rstrip("\n") + "\n")


def _history_check(events) -> tuple[dict, history.RAResult | None]:
    """Black-box RA verdict for the client history of ``events``."""
    hj = emit_history(events)
    h = history.from_json(hj)
    if not h.txns:
        return hj, None
    return hj, history.check_ra(h)


def _history_summary(res: history.RAResult | None, monitor_violation: bool) -> str:
    if res is None:
        return "history check: no committed transactions"
    if res.ok and monitor_violation:
        return (
            "history check: RA holds on the client history, so the monitor violation "
            "stems from the commit-order mapping, not from a fractured read"
        )
    if res.ok:
        return "history check: RA holds"
    return "history check: " + res.text().replace("\n", "\n  ")


# -- commands ---------------------------------------------------------------------------


def cmd_explore(a: argparse.Namespace) -> int:
    protocol, level = _protocol(a)
    scope = _scope(a)
    if a.mode == "random":
        results = run_walks(
            protocol,
            level,
            scope,
            range(a.seed, a.seed + a.walks),
            a.steps,
            # walks always report every violation they meet
            keep_going=True,
            collect_histories=bool(a.emit_history),
        )
        return _report_walks(a, results, "explore")
    accept = confirmed_by_history if a.confirm_ra else None
    res = explore(protocol, level, scope, "dfs", max_states=a.max_states, keep_going=a.keep_going, accept=accept)
    payload = res.to_json()
    lines = [
        f"explore {res.protocol}" + (f" ({res.variant})" if res.protocol == "tapir" else "") + f" under {res.isolation}",
        f"scope: {codec.dumps(scope.to_json())}",
        f"states {res.stats.states}, transitions {res.stats.transitions}, "
        f"max depth {res.stats.max_depth}, {res.stats.elapsed:.2f}s"
        + (f", {res.stats.filtered} unconfirmed violation(s) skipped" if a.confirm_ra else ""),
        f"verdict: {res.verdict}" + (f" ({res.bound_reason})" if res.bound_reason else ""),
    ]
    hres = None
    if res.violations:
        trace = res.first_trace
        v = res.violations[0]
        lines.append(v.text())
        lines.append("counterexample:")
        lines += [f"  {i:3d}. {e}" for i, e in enumerate(trace, start=1)]
        hj, hres = _history_check(trace)
        lines.append(_history_summary(hres, True))
        payload["trace"] = res.trace_json()
        payload["history_check"] = hres.to_json() if hres else None
        if a.trace_out:
            _write(a.trace_out, dumps_trace(res.trace_json()))
            lines.append(f"trace written to {a.trace_out}")
        if a.emit_history:
            _write(a.emit_history, codec.dumps(hj, indent=2) + "\n")
        if a.emit_dot:
            _write(a.emit_dot, trace_dot(trace, [v]))
    elif a.emit_dot:
        _write(a.emit_dot, trace_dot([], []))
    if a.report_dir:
        _explore_report(a.report_dir, res, hres)
    _out(a, payload, "\n".join(lines))
    if res.verdict == BOUNDED and not a.json:
        sys.stderr.write("warning: bounds exhausted before the search completed\n")
    return EXIT_VIOLATION if res.violations else EXIT_CLEAN


def _explore_report(d: str, res: ExploreResult, hres) -> None:
    from isoguard import report

    report.ensure_dir(d)
    row = {
        "protocol": res.protocol,
        "variant": res.variant or "",
        "isolation": res.isolation,
        "mode": res.mode,
        "verdict": res.verdict,
        "states": res.stats.states,
        "transitions": res.stats.transitions,
        "max_depth": res.stats.max_depth,
        "terminal_states": res.stats.terminal_states,
        "violations": len(res.violations),
        "first_guard": res.violations[0].guard if res.violations else "",
        "diagnosis": res.violations[0].diagnosis if res.violations else "",
    }
    report.write_summary(os.path.join(d, "summary.csv"), [row])
    report.plot_depth_profile(res.stats.per_depth, os.path.join(d, "depth_profile.png"))
    if hres is not None and hres.graph is not None:
        report.plot_dependency_graph(hres.graph, os.path.join(d, "history_graph.png"), hres.cycle or ())


def _report_walks(a: argparse.Namespace, results: list[ExploreResult], command: str) -> int:
    rows = []
    violations = []
    for r in results:
        rows.append(
            {
                "seed": r.seed,
                "steps": r.stats.transitions,
                "states": r.stats.states,
                "restarts": r.stats.restarts,
                "violations": len(r.violations),
                "first_guard": r.violations[0].guard if r.violations else "",
            }
        )
        violations += [(r, i) for i in range(len(r.violations))]
    first = results[0]
    payload = {
        "command": command,
        "protocol": first.protocol,
        "variant": first.variant,
        "isolation": first.isolation,
        "scope": first.scope.to_json(),
        "walks": [dict(r.to_json(), seed=r.seed) for r in results],
        "verdict": "violation" if violations else "clean",
    }
    lines = [
        f"{command} {first.protocol}" + (f" ({first.variant})" if first.protocol == "tapir" else "")
        + f" under {first.isolation}: {len(results)} walk(s)",
    ]
    for row in rows:
        lines.append(
            f"  seed {row['seed']}: {row['steps']} steps, {row['states']} distinct states, "
            f"{row['restarts']} restarts, {row['violations']} violation(s)"
        )
    lines.append(f"verdict: {payload['verdict']}")
    if violations:
        r, i = violations[0]
        lines.append(r.violations[i].text())
        if a.trace_out:
            _write(a.trace_out, dumps_trace(r.trace_json(i)))
            lines.append(f"trace written to {a.trace_out}")
    if a.emit_history:
        hist = _longest_history(results[0])
        _write(a.emit_history, codec.dumps(hist, indent=2) + "\n")
        lines.append(f"history written to {a.emit_history}")
    if a.emit_dot and violations:
        r, i = violations[0]
        _write(a.emit_dot, trace_dot(r.traces[i], [r.violations[i]]))
    if a.report_dir:
        from isoguard import report

        report.ensure_dir(a.report_dir)
        report.write_summary(os.path.join(a.report_dir, "summary.csv"), rows)
        report.plot_walks(rows, os.path.join(a.report_dir, "walks.png"))
    _out(a, payload, "\n".join(lines))
    return EXIT_VIOLATION if violations else EXIT_CLEAN


def _longest_history(res: ExploreResult) -> dict:
    """History of the walk segment with the most client commits (first on ties)."""
    best: list = []
    best_n = -1
    for seg in res.histories or [res.traces[0] if res.traces else []]:
        n = sum(1 for e in seg if e.name == "cl_commit")
        if n > best_n:
            best, best_n = seg, n
    return emit_history(best)


def cmd_simulate(a: argparse.Namespace) -> int:
    protocol, level = _protocol(a)
    scope = _scope(a)
    seeds = range(a.seed, a.seed + a.walks)
    results = run_walks(protocol, level, scope, seeds, a.steps, collect_histories=bool(a.emit_history))
    return _report_walks(a, results, "simulate")


def cmd_replay(a: argparse.Namespace) -> int:
    if a.target in SCHEDULES:
        sc = get_schedule(a.target)
        variant = a.variant or sc.variant
        protocol = make_protocol(sc.protocol, variant if sc.protocol == "tapir" else None)
        level = get_level(a.isolation or sc.isolation)
        scope, events = sc.scope, list(sc.events)
        source = f"builtin {sc.name}: {sc.description}"
    else:
        if not os.path.exists(a.target):
            raise UsageError(f"no builtin schedule or file named {a.target!r}; builtin: {sorted(SCHEDULES)}")
        with open(a.target, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{a.target}: invalid JSON ({exc})") from None
        if a.variant:
            d = dict(d, variant=a.variant)
        if a.isolation:
            d = dict(d, isolation=a.isolation)
        try:
            protocol, level, scope, events = load_trace(d)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"{a.target}: {str(exc).strip(chr(39))}") from None
        source = f"trace {a.target}"
    res = replay(protocol, level, scope, events)
    payload = res.to_json()
    lines = [
        f"replay {source}",
        f"protocol {res.protocol}" + (f" ({res.variant})" if res.variant else "") + f", isolation {res.isolation}",
        f"{len(res.events)} of {len(events)} events executed",
    ]
    if res.disabled is not None:
        i, e, why = res.disabled
        lines.append(f"invalid schedule: {why} at step {i}")
    lines.append(f"violations: {len(res.violations)}")
    lines += [v.text() for v in res.violations]
    hj, hres = _history_check(res.events)
    lines.append(_history_summary(hres, bool(res.violations)))
    payload["history_check"] = hres.to_json() if hres else None
    if a.trace_out:
        _write(a.trace_out, dumps_trace(res.to_json()))
    if a.emit_history:
        _write(a.emit_history, codec.dumps(hj, indent=2) + "\n")
    if a.emit_dot:
        _write(a.emit_dot, trace_dot(res.events, res.violations))
    if a.report_dir:
        from isoguard import report

        report.ensure_dir(a.report_dir)
        rows = [
            {
                "step": v.step,
                "event": str(v.event) if v.event else "",
                "guard": v.guard,
                "diagnosis": v.diagnosis,
                "failed_guards": ";".join(v.failed_guards),
            }
            for v in res.violations
        ] or [{"step": "", "event": "", "guard": "", "diagnosis": "", "failed_guards": ""}]
        report.write_summary(os.path.join(a.report_dir, "summary.csv"), rows)
        if hres is not None and hres.graph is not None:
            report.plot_dependency_graph(
                hres.graph, os.path.join(a.report_dir, "history_graph.png"), hres.cycle or ()
            )
    _out(a, payload, "\n".join(lines))
    if res.disabled is not None:
        return EXIT_ERROR
    return EXIT_VIOLATION if res.violations else EXIT_CLEAN


def cmd_check_history(a: argparse.Namespace) -> int:
    try:
        if a.target in HISTORIES and not os.path.exists(a.target):
            h = history.from_json(HISTORIES[a.target]())
        else:
            h = history.load(a.target)
    except OSError as exc:
        raise UsageError(f"cannot read {a.target}: {exc.strerror}") from None
    except history.HistoryError as exc:
        raise UsageError(f"invalid history: {exc}") from None
    res = history.check_ra(h)
    payload = {"history": history.history_stats(h), **res.to_json()}
    stats = history.history_stats(h)
    lines = [
        f"history: {stats['sessions']} sessions, {stats['transactions']} transactions, "
        f"{stats['keys']} keys, {stats['operations']} operations",
        res.text(),
    ]
    if a.emit_dot:
        _write(a.emit_dot, history.to_dot(res.graph, res.cycle or ()))
    if a.report_dir:
        from isoguard import report

        report.ensure_dir(a.report_dir)
        rows = [
            {"edge": i, "kind": e.kind, "key": e.key or "", "src": e.src, "dst": e.dst, "in_cycle": e in set(res.cycle or ())}
            for i, e in enumerate(res.graph.edges)
        ]
        report.write_summary(os.path.join(a.report_dir, "edges.csv"), rows or [{"edge": "", "kind": ""}])
        report.plot_dependency_graph(res.graph, os.path.join(a.report_dir, "history_graph.png"), res.cycle or ())
    _out(a, payload, "\n".join(lines))
    return EXIT_CLEAN if res.ok else EXIT_VIOLATION


def cmd_list(a: argparse.Namespace) -> int:
    print("schedules: " + ", ".join(sorted(SCHEDULES)))
    print("histories: " + ", ".join(sorted(HISTORIES)))
    print("isolation levels: " + ", ".join(sorted(n.lower() for n in levels())))
    return EXIT_CLEAN


COMMANDS = {
    "explore": cmd_explore,
    "replay": cmd_replay,
    "simulate": cmd_simulate,
    "check-history": cmd_check_history,
    "list": cmd_list,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help
        return int(exc.code or 0)
    try:
        return COMMANDS[a.command](a)
    except UsageError as exc:
        sys.stderr.write(f"isoguard: error: {exc}\n")
        return EXIT_ERROR
    except ValueError as exc:
        sys.stderr.write(f"isoguard: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
