"""Black-box read-atomicity checking over client histories.

Initial values are writes of a virtual transaction ``init`` that precedes every
session. The checker builds session order (SO), write-read (WR) edges from the
unique written values, and infers write-write (WW) edges from the read-atomic
axiom:

    t reads k from t1, t2 != t1 also writes k, and t2 is directly visible
    to t (t reads some key from t2, or t2 precedes t in t's session)
    ==> t2 must be ordered before t1.

A history is read atomic iff SO, WR and the inferred WW edges are acyclic.
"""

from __future__ import annotations

import itertools
import json
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

INIT = "init"
DEFAULT_INITIAL = "v0"

SO = "SO"
WR = "WR"
WW = "WW"


class HistoryError(ValueError):
    """The history is malformed (duplicate writes, unknown read values, bad fields)."""


@dataclass(frozen=True)
class Op:
    op: str  # "r" | "w"
    key: str
    value: str


@dataclass(frozen=True)
class Txn:
    id: str
    client: str
    sn: int
    ops: tuple[Op, ...]

    def writes(self) -> dict[str, str]:
        """Final written value per key."""
        out = {}
        for o in self.ops:
            if o.op == "w":
                out[o.key] = o.value
        return out

    def external_reads(self) -> list[Op]:
        """Reads of keys the transaction has not written before them."""
        written = set()
        out = []
        for o in self.ops:
            if o.op == "w":
                written.add(o.key)
            elif o.key not in written:
                out.append(o)
        return out


@dataclass(frozen=True)
class History:
    sessions: tuple[tuple[str, tuple[Txn, ...]], ...]
    initial: Mapping[str, str] = field(default_factory=dict)

    @property
    def txns(self) -> list[Txn]:
        return [t for _, txns in self.sessions for t in txns]

    def keys(self) -> set[str]:
        return {o.key for t in self.txns for o in t.ops}

    def initial_value(self, key: str) -> str:
        return self.initial.get(key, DEFAULT_INITIAL)

    def to_json(self) -> dict:
        d: dict[str, Any] = {
            "sessions": [
                {
                    "client": cl,
                    "txns": [
                        {
                            "name": t.id,
                            "sn": t.sn,
                            "ops": [{"op": o.op, "key": o.key, "value": o.value} for o in t.ops],
                        }
                        for t in txns
                    ],
                }
                for cl, txns in self.sessions
            ]
        }
        if self.initial:
            d["initial"] = dict(sorted(self.initial.items()))
        return d


def _txn_id(client: str, sn: int, name: str | None) -> str:
    return name if name else f"{client}:{sn}"


def from_json(d: Mapping) -> History:
    """Parse the explorer's History JSON; validates the result."""
    if not isinstance(d, Mapping) or "sessions" not in d:
        raise HistoryError("history JSON needs a 'sessions' list")
    sessions = []
    for i, sess in enumerate(d["sessions"]):
        try:
            client = str(sess["client"])
            txns = []
            for j, tx in enumerate(sess.get("txns", [])):
                sn = int(tx.get("sn", j))
                ops = tuple(Op(str(o["op"]).lower(), str(o["key"]), str(o["value"])) for o in tx.get("ops", []))
                txns.append(Txn(_txn_id(client, sn, tx.get("name")), client, sn, ops))
        except (KeyError, TypeError, ValueError) as exc:
            raise HistoryError(f"session {i}: malformed entry ({exc})") from None
        sessions.append((client, tuple(txns)))
    initial = {str(k): str(v) for k, v in (d.get("initial") or {}).items()}
    h = History(tuple(sessions), initial)
    validate(h)
    return h


def parse_log(text: str) -> History:
    """Parse the line format ``session txn op key value`` (blank lines and
    ``#`` comments ignored). Transactions keep first-appearance order per session."""
    order: dict[str, list[str]] = {}
    ops: dict[tuple[str, str], list[Op]] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 5:
            raise HistoryError(f"line {n}: expected 'session txn op key value', got {line!r}")
        sess, txn, op, key, value = parts
        op = op.lower()
        if op in ("read", "r"):
            op = "r"
        elif op in ("write", "w"):
            op = "w"
        else:
            raise HistoryError(f"line {n}: unknown operation {op!r}")
        if (sess, txn) not in ops:
            order.setdefault(sess, []).append(txn)
            ops[(sess, txn)] = []
        ops[(sess, txn)].append(Op(op, key, value))
    sessions = []
    for sess, names in order.items():
        sessions.append(
            (sess, tuple(Txn(name, sess, i, tuple(ops[(sess, name)])) for i, name in enumerate(names)))
        )
    h = History(tuple(sessions))
    validate(h)
    return h


def load(path: str) -> History:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise HistoryError(f"{path}: invalid JSON ({exc})") from None
        return from_json(d)
    return parse_log(text)


def validate(h: History) -> None:
    ids = [t.id for t in h.txns]
    dup_ids = sorted({i for i in ids if ids.count(i) > 1})
    if dup_ids:
        raise HistoryError(f"duplicate transaction ids {dup_ids}")
    if INIT in ids:
        raise HistoryError(f"transaction id {INIT!r} is reserved")
    for t in h.txns:
        for o in t.ops:
            if o.op not in ("r", "w"):
                raise HistoryError(f"{t.id}: unknown operation {o.op!r}")
    seen: dict[tuple[str, str], str] = {}
    for t in h.txns:
        for o in t.ops:
            if o.op != "w":
                continue
            if o.value == h.initial_value(o.key):
                raise HistoryError(f"{t.id} writes the initial value {o.value!r} of {o.key}")
            prev = seen.get((o.key, o.value))
            if prev is not None:
                raise HistoryError(f"write {o.key}={o.value!r} occurs in both {prev} and {t.id}")
            seen[(o.key, o.value)] = t.id
    for t in h.txns:
        for o in t.ops:
            if o.op == "r" and o.value != h.initial_value(o.key) and (o.key, o.value) not in seen:
                raise HistoryError(f"{t.id} reads {o.key}={o.value!r}, which nobody writes")


# -- dependency graph ---------------------------------------------------------------


@dataclass(frozen=True, order=True)
class DepEdge:
    src: str
    dst: str
    kind: str
    key: str | None = None
    # for inferred WW: the reader whose observation forces the edge, and how the
    # overwriting transaction is visible to it ("WR" or "SO")
    via: str | None = None
    because: str | None = None

    def label(self) -> str:
        return self.kind + (f"({self.key})" if self.key else "")

    def to_json(self) -> dict:
        d = {"src": self.src, "dst": self.dst, "kind": self.kind}
        if self.key is not None:
            d["key"] = self.key
        if self.kind == WW:
            d["inferred"] = True
            d["reader"] = self.via
            d["visibility"] = self.because
        return d

    def __str__(self) -> str:
        return f"{self.label()}: {self.src} -> {self.dst}"


@dataclass
class DepGraph:
    nodes: list[str]
    edges: list[DepEdge]
    # anomalies inside a single transaction (these need no graph)
    internal: list[str] = field(default_factory=list)
    reads_from: dict[str, set[tuple[str, str]]] = field(default_factory=dict)

    def by_kind(self, kind: str) -> list[DepEdge]:
        return [e for e in self.edges if e.kind == kind]

    def adjacency(self) -> dict[str, list[DepEdge]]:
        adj: dict[str, list[DepEdge]] = {n: [] for n in self.nodes}
        for e in self.edges:
            adj[e.src].append(e)
        return adj


def _writer_index(h: History) -> dict[tuple[str, str], str]:
    idx = {(k, h.initial_value(k)): INIT for k in h.keys()}
    for t in h.txns:
        for o in t.ops:
            if o.op == "w":
                idx[(o.key, o.value)] = t.id
    return idx


def _internal_problems(t: Txn) -> list[str]:
    out = []
    own: dict[str, str] = {}
    for o in t.ops:
        if o.op == "w":
            own[o.key] = o.value
        elif o.key in own and o.value != own[o.key]:
            out.append(f"{t.id} reads {o.key}={o.value!r} after writing {own[o.key]!r}")
    return out


def build_graph(h: History) -> DepGraph:
    """SO (consecutive, with ``init`` first in every session), WR and inferred WW."""
    txns = h.txns
    nodes = [INIT] + [t.id for t in txns]
    edges: set[DepEdge] = set()
    internal: list[str] = []
    for _cl, sess in h.sessions:
        prev = INIT
        for t in sess:
            edges.add(DepEdge(prev, t.id, SO))
            prev = t.id

    writer = _writer_index(h)
    final = {t.id: t.writes() for t in txns}
    writes_k: dict[str, set[str]] = {k: {INIT} for k in h.keys()}
    for t in txns:
        for k in t.writes():
            writes_k[k].add(t.id)

    # reads_from[t] = {(key, writer)} over external reads
    reads_from: dict[str, set[tuple[str, str]]] = {}
    for t in txns:
        internal += _internal_problems(t)
        rf = set()
        for o in t.external_reads():
            w = writer[(o.key, o.value)]
            if w != INIT and final[w].get(o.key) != o.value:
                internal.append(f"{t.id} reads {o.key}={o.value!r}, an intermediate write of {w}")
            rf.add((o.key, w))
            edges.add(DepEdge(w, t.id, WR, o.key))
        reads_from[t.id] = rf

    # direct visibility into t: earlier transactions of its session, WR sources
    for _cl, sess in h.sessions:
        for i, t in enumerate(sess):
            vis = {p.id: SO for p in sess[:i]}
            for _k, w in reads_from[t.id]:
                if w != INIT:
                    vis[w] = WR
            for k, t1 in sorted(reads_from[t.id]):
                # init precedes everything, so edges into it from init are never needed
                for t2 in sorted(writes_k[k] - {INIT, t1, t.id}):
                    how = vis.get(t2)
                    if how is not None:
                        edges.add(DepEdge(t2, t1, WW, k, t.id, how))
    return DepGraph(nodes, sorted(edges, key=_edge_order), internal, reads_from)


_KIND_RANK = {SO: 0, WR: 1, WW: 2}


def _edge_order(e: DepEdge):
    return (e.src, e.dst, _KIND_RANK[e.kind], e.key or "", e.via or "")


def shortest_cycle(g: DepGraph) -> list[DepEdge] | None:
    """A shortest cycle, found by BFS from each node in order; ties keep the first."""
    adj = g.adjacency()
    best: list[DepEdge] | None = None
    for start in g.nodes:
        # BFS over paths from start; the first edge back to start closes a cycle
        parent: dict[str, DepEdge | None] = {start: None}
        q = deque([start])
        found = None
        while q and found is None:
            n = q.popleft()
            for e in adj[n]:
                if e.dst == start:
                    found = e
                    break
                if e.dst not in parent:
                    parent[e.dst] = e
                    q.append(e.dst)
        if found is None:
            continue
        path = [found]
        cur = found.src
        while cur != start:
            pe = parent[cur]
            path.append(pe)
            cur = pe.src
        path.reverse()
        if best is None or len(path) < len(best):
            best = path
        if len(best) == 1:
            break
    return best


@dataclass
class RAResult:
    ok: bool
    cycle: list[DepEdge] | None = None
    labels: list[str] = field(default_factory=list)
    fractured: list[dict] = field(default_factory=list)
    internal: list[str] = field(default_factory=list)
    graph: DepGraph | None = None

    def to_json(self) -> dict:
        return {
            "ra": "holds" if self.ok else "violated",
            "labels": list(self.labels),
            "cycle": [e.to_json() for e in self.cycle] if self.cycle else [],
            "fractured_reads": list(self.fractured),
            "internal": list(self.internal),
        }

    def text(self) -> str:
        if self.ok:
            return "RA holds: SO ∪ WR ∪ inferred WW is acyclic"
        lines = ["RA violated" + (f" ({', '.join(self.labels)})" if self.labels else "")]
        for p in self.internal:
            lines.append(f"  internal: {p}")
        if self.cycle:
            lines.append(f"  cycle of length {len(self.cycle)}:")
            for e in self.cycle:
                extra = ""
                if e.kind == WW:
                    extra = f"  [inferred: {e.via} reads {e.key} from {e.dst}, {e.src} visible via {e.because}]"
                lines.append(f"    {e}{extra}")
        for fr in self.fractured:
            lines.append(
                f"  fractured read: {fr['reader']} sees {fr['writer']}'s {fr['seen_key']} "
                f"but reads {fr['stale_key']} from {fr['stale_writer']}"
            )
        return "\n".join(lines)


def _reaches(adj: Mapping[str, list[DepEdge]], a: str, b: str) -> bool:
    seen = {a}
    stack = [a]
    while stack:
        n = stack.pop()
        if n == b:
            return True
        for e in adj[n]:
            if e.dst not in seen:
                seen.add(e.dst)
                stack.append(e.dst)
    return False


def fractured_reads(g: DepGraph) -> list[dict]:
    """Readers that see one write of a transaction and, for another key that
    transaction wrote, a version ordered before it."""
    adj = g.adjacency()
    out = []
    for e in g.by_kind(WW):
        if e.because != WR:
            continue
        # e: t2 -> t1 forced because reader sees t2 via WR yet reads key from t1;
        # fractured when t1 is already ordered before t2
        if _reaches(adj, e.dst, e.src):
            seen_key = sorted(k for k, w in g.reads_from.get(e.via, ()) if w == e.src and k != e.key)
            out.append(
                {
                    "reader": e.via,
                    "writer": e.src,
                    "seen_key": seen_key[0] if seen_key else None,
                    "stale_key": e.key,
                    "stale_writer": e.dst,
                }
            )
    return out


def check_ra(h: History) -> RAResult:
    g = build_graph(h)
    cycle = shortest_cycle(g)
    labels = []
    if g.internal:
        labels.append("internal inconsistency")
    if cycle is None and not g.internal:
        return RAResult(True, graph=g)
    fr = fractured_reads(g) if cycle else []
    if cycle:
        if any(e.kind == WW and e.because == WR for e in cycle):
            labels.append("fractured reads")
        elif any(e.kind == WW for e in cycle):
            labels.append("missed session writes")
        else:
            labels.append("dependency cycle")
    return RAResult(False, cycle, labels, fr, list(g.internal), g)


# -- brute-force oracle ---------------------------------------------------------------


def check_ra_oracle(h: History, max_txns: int = 6) -> bool:
    """Read atomicity by enumerating commit orders.

    RA holds iff some total order, with init first and extending session
    order, lets every transaction read from a snapshot: the set made of its
    session predecessors and the transactions it reads from, all committed
    before it, where each external read returns the last write of its key in
    that set and reads after an own write return that write.
    """
    txns = h.txns
    if len(txns) > max_txns:
        raise ValueError(f"oracle limited to {max_txns} transactions, got {len(txns)}")
    wrote: dict[tuple[str, str], str] = {}
    for t in txns:
        for o in t.ops:
            if o.op == "w":
                wrote[(o.key, o.value)] = t.id
    final = {t.id: t.writes() for t in txns}
    final[INIT] = {k: h.initial_value(k) for k in h.keys()}
    preds = {t.id: [p.id for p in sess[:i]] for _cl, sess in h.sessions for i, t in enumerate(sess)}
    so_pairs = [(a.id, b.id) for _cl, sess in h.sessions for a, b in itertools.combinations(sess, 2)]

    reads: dict[str, list[Op]] = {}
    for t in txns:
        own: dict[str, str] = {}
        ext = []
        for o in t.ops:
            if o.op == "w":
                own[o.key] = o.value
            elif o.key in own:
                if own[o.key] != o.value:
                    return False
            else:
                ext.append(o)
        reads[t.id] = ext
    snapshot = {
        t.id: {INIT, *preds[t.id], *(wrote.get((o.key, o.value), INIT) for o in reads[t.id])} for t in txns
    }

    def serves(order: Sequence[str]) -> bool:
        rank = {INIT: -1, **{tid: i for i, tid in enumerate(order)}}
        if any(rank[a] > rank[b] for a, b in so_pairs):
            return False
        for t in txns:
            snap = snapshot[t.id]
            if any(rank[x] >= rank[t.id] for x in snap):
                return False
            for o in reads[t.id]:
                latest = max((x for x in snap if o.key in final[x]), key=rank.__getitem__)
                if final[latest][o.key] != o.value:
                    return False
        return True

    return any(serves(order) for order in itertools.permutations([t.id for t in txns]))


# -- generation --------------------------------------------------------------------------


def random_history(
    rng: random.Random,
    max_txns: int = 5,
    max_keys: int = 3,
    max_sessions: int = 3,
    max_ops: int = 4,
    serial_bias: float = 0.3,
) -> History:
    """A unique-write history.

    With probability ``serial_bias`` the reads come from a serial execution
    (so RA holds); otherwise each external read picks uniformly among every
    value of its key, which yields mostly non-atomic histories.
    """
    n = rng.randint(1, max_txns)
    keys = [f"k{i}" for i in range(rng.randint(1, max_keys))]
    n_sess = rng.randint(1, min(max_sessions, n))
    plan = []
    for i in range(n):
        ops = []
        for j in range(rng.randint(1, max_ops)):
            k = rng.choice(keys)
            if rng.random() < 0.5:
                ops.append(("w", k, f"{k}.{i}.{j}"))
            else:
                ops.append(("r", k, None))
        plan.append(ops)
    values: dict[str, list[str]] = {k: [DEFAULT_INITIAL] for k in keys}
    for ops in plan:
        for op, k, v in ops:
            if op == "w":
                values[k].append(v)
    serial = rng.random() < serial_bias
    current = {k: DEFAULT_INITIAL for k in keys}
    sessions: dict[str, list[Txn]] = {}
    # in serial mode sessions are assigned in execution order, so SO agrees with it
    for i, ops in enumerate(plan):
        cl = f"s{rng.randrange(n_sess)}"
        own: dict[str, str] = {}
        real = []
        for op, k, v in ops:
            if op == "w":
                own[k] = v
                real.append(Op("w", k, v))
            elif k in own:
                real.append(Op("r", k, own[k]))
            elif serial:
                real.append(Op("r", k, current[k]))
            else:
                real.append(Op("r", k, rng.choice(values[k])))
        current.update(own)
        sess = sessions.setdefault(cl, [])
        sess.append(Txn(f"t{i}", cl, len(sess), tuple(real)))
    return History(tuple((cl, tuple(ts)) for cl, ts in sorted(sessions.items())))


# -- output ----------------------------------------------------------------------------------


_DOT_STYLE = {SO: "color=black", WR: "color=blue", WW: "color=red, style=dashed"}


def to_dot(g: DepGraph, highlight: Sequence[DepEdge] = ()) -> str:
    hl = set(highlight)
    lines = ["digraph history {", "  rankdir=LR;", "  node [shape=ellipse, fontname=monospace];"]
    for n in g.nodes:
        lines.append(f'  "{n}";')
    for e in g.edges:
        style = _DOT_STYLE[e.kind]
        if e in hl:
            style += ", penwidth=3"
        lines.append(f'  "{e.src}" -> "{e.dst}" [label="{e.label()}", {style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def history_stats(h: History) -> dict:
    txns = h.txns
    return {
        "sessions": len(h.sessions),
        "transactions": len(txns),
        "keys": len(h.keys()),
        "operations": sum(len(t.ops) for t in txns),
    }


def histories_from(events_list: Iterable[Iterable]) -> list[History]:
    from isoguard.explorer import emit_history

    return [from_json(emit_history(events)) for events in events_list]
