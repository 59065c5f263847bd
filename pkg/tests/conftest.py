import itertools
import random

import pytest

from isoguard import core
from isoguard.core import T_INIT, TxId, Version
from isoguard.frozen import FrozenDict


def T(cl, sn=0):
    return TxId(cl, sn)


TX1 = T("c0")
TX2 = T("c1")


def fig9a_store():
    """After tx1 writes A, B and tx2 reads A1 and B0."""
    return core.kvstore(
        {
            "A": [Version("v0", T_INIT), Version("a1", TX1, frozenset({TX2}))],
            "B": [Version("v0", T_INIT, frozenset({TX2})), Version("b1", TX1)],
        }
    )


def wf_views(kvs):
    """Every wellformed view: each is the set of versions of a writer subset containing T_init."""
    ws = sorted(core.writers(kvs) - {T_INIT})
    for r in range(len(ws) + 1):
        for chosen in itertools.combinations(ws, r):
            vis = {T_INIT, *chosen}
            yield FrozenDict({k: frozenset(i for i, v in enumerate(vs) if v.writer in vis) for k, vs in kvs.items()})


def random_view(rng, kvs, base=None):
    ws = sorted(core.writers(kvs) - {T_INIT})
    vis = {T_INIT} | {w for w in ws if rng.random() < 0.5}
    if base is not None:
        vis |= core.vis_tx(kvs, base)
    return FrozenDict({k: frozenset(i for i, v in enumerate(vs) if v.writer in vis) for k, vs in kvs.items()})


def random_fingerprint(rng, keys, t, lww_from=None):
    """Random reads and writes; read values follow LWW in ``lww_from=(kvs, u)`` when given."""
    fp = {}
    for k in keys:
        if rng.random() < 0.5:
            if lww_from is not None:
                kvs, u = lww_from
                fp[(k, core.R)] = kvs[k][max(u[k])].value
            else:
                fp[(k, core.R)] = f"r{rng.randrange(3)}"
        if rng.random() < 0.5:
            fp[(k, core.W)] = f"{t.cl}.{t.sn}.{k}"
    return FrozenDict(fp)


def random_store(rng, keys=("A", "B"), commits=4, clients=("c0", "c1", "c2")):
    """A store built by random RA-style commits through update_kv."""
    kvs = core.initial_kvs(keys)
    for _ in range(commits):
        cl = rng.choice(clients)
        t = T(cl, core.min_fresh_sn(kvs, cl))
        u = random_view(rng, kvs)
        f = random_fingerprint(rng, keys, t, (kvs, u))
        kvs = core.update_kv(kvs, t, u, f)
    return kvs


def exhaustive_stores(keys, max_commits, clients=("c0", "c1")):
    """Every store reachable by commits with any wellformed view and any
    fingerprint over ``keys`` (reads follow LWW), deduplicated."""
    shapes = []
    for modes in itertools.product(("", "r", "w", "rw"), repeat=len(keys)):
        if any(modes):
            shapes.append(dict(zip(keys, modes)))
    frontier = {core.initial_kvs(keys)}
    seen = set(frontier)
    for _ in range(max_commits):
        nxt = set()
        for kvs in frontier:
            for cl in clients:
                t = T(cl, core.min_fresh_sn(kvs, cl))
                for u in wf_views(kvs):
                    for shape in shapes:
                        fp = {}
                        for k, m in shape.items():
                            if "r" in m:
                                fp[(k, core.R)] = kvs[k][max(u[k])].value
                            if "w" in m:
                                fp[(k, core.W)] = f"{t.cl}.{t.sn}.{k}"
                        s2 = core.update_kv(kvs, t, u, FrozenDict(fp))
                        if s2 not in seen:
                            seen.add(s2)
                            nxt.add(s2)
        frontier = nxt
    return seen


@pytest.fixture
def rng():
    return random.Random(20240601)
