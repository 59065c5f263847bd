"""Abstract multi-version key-value store.

The store maps every key to a non-empty list of versions; index 0 holds the
initial version written by :data:`T_INIT`. Client views select version
indices per key, and a transaction's effect is summarised by a fingerprint
mapping ``(key, "R" | "W")`` to a value.

Everything here is a pure function over immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

from isoguard.frozen import FrozenDict

R = "R"
W = "W"
INIT_CLIENT = "__init__"
INIT_VALUE = "v0"


class ContractError(ValueError):
    """Raised when an operation is called outside its precondition."""


@dataclass(frozen=True, order=True)
class TxId:
    cl: str
    sn: int

    def __str__(self) -> str:
        if self.cl == INIT_CLIENT:
            return "T_init"
        return f"Tn({self.sn},{self.cl})"


T_INIT = TxId(INIT_CLIENT, 0)


@dataclass(frozen=True)
class Version:
    value: str
    writer: TxId
    readerset: frozenset[TxId] = frozenset()

    def with_reader(self, t: TxId) -> Version:
        return Version(self.value, self.writer, self.readerset | {t})


# key -> versions, key -> visible indices, (key, op) -> value
KVStore = FrozenDict[str, tuple[Version, ...]]
View = FrozenDict[str, frozenset[int]]
Fingerprint = FrozenDict[tuple[str, str], str]


class Edge(NamedTuple):
    """A dependency ``src -> dst`` of the given kind (SO, WR, WW, ...)."""

    src: TxId
    dst: TxId
    kind: str
    key: str | None = None


Relation = frozenset[Edge]


# --- constructors -----------------------------------------------------------


def kvstore(data: Mapping[str, Iterable[Version]]) -> KVStore:
    return FrozenDict({k: tuple(vs) for k, vs in data.items()})


def initial_kvs(keys: Iterable[str], value: str = INIT_VALUE) -> KVStore:
    return FrozenDict({k: (Version(value, T_INIT),) for k in keys})


def view(data: Mapping[str, Iterable[int]]) -> View:
    return FrozenDict({k: frozenset(ix) for k, ix in data.items()})


def initial_view(keys: Iterable[str]) -> View:
    return FrozenDict({k: frozenset({0}) for k in keys})


def fingerprint(
    reads: Mapping[str, str] | None = None, writes: Mapping[str, str] | None = None
) -> Fingerprint:
    fp: dict[tuple[str, str], str] = {}
    for k, v in (reads or {}).items():
        fp[(k, R)] = v
    for k, v in (writes or {}).items():
        fp[(k, W)] = v
    return FrozenDict(fp)


def fold_ops(ops: Iterable[tuple[str, str, str]]) -> Fingerprint:
    """Collapse ``(op, key, value)`` steps into a fingerprint.

    Only reads preceding the transaction's first write on a key are external;
    the last write on a key wins.
    """
    fp: dict[tuple[str, str], str] = {}
    for op, k, v in ops:
        op = op.upper()
        if op == R:
            if (k, W) not in fp and (k, R) not in fp:
                fp[(k, R)] = v
        elif op == W:
            fp[(k, W)] = v
        else:
            raise ValueError(f"unknown operation {op!r}")
    return FrozenDict(fp)


# --- views -----------------------------------------------------------------


def view_leq(u: Mapping[str, frozenset[int]], u2: Mapping[str, frozenset[int]]) -> bool:
    """Pointwise inclusion ``u ⊑ u2``."""
    return all(ix <= u2.get(k, frozenset()) for k, ix in u.items())


def full_view(kvs: KVStore) -> View:
    return FrozenDict({k: frozenset(range(len(vs))) for k, vs in kvs.items()})


def _writes_by_txn(kvs: KVStore) -> dict[TxId, list[tuple[str, int]]]:
    out: dict[TxId, list[tuple[str, int]]] = {}
    for k, vs in kvs.items():
        for i, v in enumerate(vs):
            out.setdefault(v.writer, []).append((k, i))
    return out


def wf(kvs: KVStore, u: Mapping[str, frozenset[int]]) -> bool:
    """View wellformedness: indices exist, 0 is visible, and the view is atomic."""
    if set(u) - set(kvs):
        return False
    for k, vs in kvs.items():
        ix = u.get(k)
        if not ix or 0 not in ix:
            return False
        if any(i < 0 or i >= len(vs) for i in ix):
            return False
    for locs in _writes_by_txn(kvs).values():
        seen = {i in u[k] for k, i in locs}
        if len(seen) > 1:
            return False
    return True


def wf_problem(kvs: KVStore, u: Mapping[str, frozenset[int]]) -> str | None:
    """Explain why ``wf`` fails, or None."""
    extra = set(u) - set(kvs)
    if extra:
        return f"view mentions unknown keys {sorted(extra)}"
    for k, vs in kvs.items():
        ix = u.get(k)
        if not ix or 0 not in ix:
            return f"initial version of {k} not visible"
        bad = sorted(i for i in ix if i < 0 or i >= len(vs))
        if bad:
            return f"indices {bad} out of range for {k} (len {len(vs)})"
    for t, locs in sorted(_writes_by_txn(kvs).items()):
        seen = {i in u[k] for k, i in locs}
        if len(seen) > 1:
            vis = sorted(f"{k}@{i}" for k, i in locs if i in u[k])
            hid = sorted(f"{k}@{i}" for k, i in locs if i not in u[k])
            return f"view not atomic for {t}: sees {vis}, misses {hid}"
    return None


def lww(kvs: KVStore, u: Mapping[str, frozenset[int]], f: Fingerprint) -> bool:
    for (k, op), v in f.items():
        if op == R and kvs[k][max(u[k])].value != v:
            return False
    return True


def lww_problem(kvs: KVStore, u: Mapping[str, frozenset[int]], f: Fingerprint) -> str | None:
    for (k, op), v in sorted(f.items()):
        if op != R:
            continue
        i = max(u[k])
        latest = kvs[k][i]
        if latest.value != v:
            return (
                f"read {k}={v!r} but latest visible version {k}@{i} "
                f"holds {latest.value!r} (writer {latest.writer})"
            )
    return None


# --- transaction sets ---------------------------------------------------------


def vis_tx(kvs: KVStore, u: Mapping[str, frozenset[int]]) -> frozenset[TxId]:
    return frozenset(kvs[k][i].writer for k, ix in u.items() for i in ix)


def writers(kvs: KVStore) -> frozenset[TxId]:
    return frozenset(v.writer for vs in kvs.values() for v in vs)


def txids(kvs: KVStore) -> frozenset[TxId]:
    """Every transaction id occurring in the store as writer or reader."""
    out = set()
    for vs in kvs.values():
        for v in vs:
            out.add(v.writer)
            out |= v.readerset
    return frozenset(out)


def rdonly(kvs: KVStore) -> frozenset[TxId]:
    readers = frozenset(t for vs in kvs.values() for v in vs for t in v.readerset)
    return readers - writers(kvs)


def inverse_closure(r: Iterable[Edge], start: Iterable[TxId]) -> frozenset[TxId]:
    """``(r⁻¹)⁺(start)``: everything reaching ``start`` by one or more edges."""
    preds: dict[TxId, set[TxId]] = {}
    for e in r:
        preds.setdefault(e.dst, set()).add(e.src)
    reached: set[TxId] = set()
    stack = list(start)
    while stack:
        x = stack.pop()
        for p in preds.get(x, ()):
            if p not in reached:
                reached.add(p)
                stack.append(p)
    return frozenset(reached)


def closed(kvs: KVStore, u: Mapping[str, frozenset[int]], r: Iterable[Edge]) -> bool:
    vis = vis_tx(kvs, u)
    return inverse_closure(r, vis) <= vis | rdonly(kvs)


def closure_problem(kvs: KVStore, u: Mapping[str, frozenset[int]], r: Iterable[Edge]) -> str | None:
    vis = vis_tx(kvs, u)
    bad = inverse_closure(r, vis) - vis - rdonly(kvs)
    if bad:
        return "dependency closure reaches invisible transactions " + ", ".join(
            str(t) for t in sorted(bad)
        )
    return None


def can_commit(
    kvs: KVStore, u: Mapping[str, frozenset[int]], f: Fingerprint, r: Iterable[Edge]
) -> bool:
    # f is unused: the commit condition depends only on the view
    return closed(kvs, u, r)


# --- freshness ---------------------------------------------------------------


def used_sns(kvs: KVStore, cl: str) -> frozenset[int]:
    return frozenset(t.sn for t in txids(kvs) if t.cl == cl)


def min_fresh_sn(kvs: KVStore, cl: str) -> int:
    sns = used_sns(kvs, cl)
    return max(sns) + 1 if sns else 0


class NextTxids:
    """The (infinite) set of fresh transaction ids of one client, as a predicate."""

    def __init__(self, kvs: KVStore, cl: str) -> None:
        self.cl = cl
        self.min_sn = min_fresh_sn(kvs, cl)

    def __contains__(self, t: object) -> bool:
        return isinstance(t, TxId) and t.cl == self.cl and t.sn >= self.min_sn

    def __repr__(self) -> str:
        return f"NextTxids({self.cl!r}, sn >= {self.min_sn})"


def next_txids(kvs: KVStore, cl: str) -> NextTxids:
    return NextTxids(kvs, cl)


# --- dependency relations ------------------------------------------------------


def so_rel(ts: Iterable[TxId]) -> Relation:
    by_cl: dict[str, list[TxId]] = {}
    for t in set(ts):
        by_cl.setdefault(t.cl, []).append(t)
    out = set()
    for group in by_cl.values():
        for a in group:
            for b in group:
                if a.sn < b.sn:
                    out.add(Edge(a, b, "SO"))
    return frozenset(out)


def wr_rel(kvs: KVStore) -> Relation:
    return frozenset(
        Edge(v.writer, t, "WR", k) for k, vs in kvs.items() for v in vs for t in v.readerset
    )


def ww_rel(kvs: KVStore) -> Relation:
    out = set()
    for k, vs in kvs.items():
        for i in range(len(vs)):
            for j in range(i + 1, len(vs)):
                out.add(Edge(vs[i].writer, vs[j].writer, "WW", k))
    return frozenset(out)


def inverse(r: Iterable[Edge]) -> Relation:
    return frozenset(Edge(e.dst, e.src, e.kind + "^-1", e.key) for e in r)


# --- store update and wellformedness ---------------------------------------------


def apply_fingerprint(kvs: KVStore, t: TxId, u: Mapping[str, frozenset[int]], f: Fingerprint) -> KVStore:
    """UpdateKV without precondition checks (caller guarantees ``wf(kvs, u)``)."""
    out = dict(kvs)
    for (k, op), v in f.items():
        if op != R:
            continue
        vs = list(out[k])
        i = max(u[k])
        vs[i] = vs[i].with_reader(t)
        out[k] = tuple(vs)
    for (k, op), v in f.items():
        if op == W:
            out[k] = out[k] + (Version(v, t),)
    return FrozenDict(out)


def update_kv(kvs: KVStore, t: TxId, u: Mapping[str, frozenset[int]], f: Fingerprint) -> KVStore:
    """Record ``f`` as transaction ``t`` reading through view ``u``.

    Reads add ``t`` to the reader set of the latest version visible in ``u``;
    writes append a new version. Reads resolve against the store before any of
    ``t``'s writes.
    """
    problem = wf_problem(kvs, u)
    if problem:
        raise ContractError(f"update_kv: view not wellformed: {problem}")
    if t not in next_txids(kvs, t.cl):
        raise ContractError(f"update_kv: {t} is not fresh")
    for (k, op) in f:
        if k not in kvs:
            raise ContractError(f"update_kv: fingerprint key {k!r} not in store")
        if op not in (R, W):
            raise ContractError(f"update_kv: bad operation {op!r} on {k!r}")
    return apply_fingerprint(kvs, t, u, f)


def kvs_problems(kvs: KVStore) -> list[str]:
    """Violations of store wellformedness, including the snapshot property.

    Per key: the list is non-empty, index 0 was written by T_init, a
    transaction writes at most one version and reads at most one version, a
    writer never reads its own version, and a read precedes the same
    transaction's write.
    """
    problems = []
    for k, vs in sorted(kvs.items()):
        if not vs:
            problems.append(f"{k}: empty version list")
            continue
        if vs[0].writer != T_INIT:
            problems.append(f"{k}: index 0 written by {vs[0].writer}")
        wrote: dict[TxId, int] = {}
        read: dict[TxId, int] = {}
        for i, v in enumerate(vs):
            if v.writer in wrote:
                problems.append(f"{k}: {v.writer} writes versions {wrote[v.writer]} and {i}")
            wrote.setdefault(v.writer, i)
            if v.writer in v.readerset:
                problems.append(f"{k}@{i}: writer {v.writer} in its own reader set")
            for t in v.readerset:
                if t in read:
                    problems.append(f"{k}: {t} reads versions {read[t]} and {i}")
                read.setdefault(t, i)
        for t, i in read.items():
            if t in wrote and wrote[t] <= i:
                problems.append(f"{k}: {t} reads index {i} at or after its own write {wrote[t]}")
    return problems


def snapshot_property(kvs: KVStore) -> bool:
    return not kvs_problems(kvs)
