"""Isolation-level instances of the abstract commit guard.

A level is a dependency relation over the store (the views of committing
clients must be closed under it) plus a predicate on how the committing
client's view may change across the commit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

from isoguard.core import KVStore, Relation, View, inverse, so_rel, txids, view_leq, wr_rel, ww_rel

VShift = Callable[[KVStore, View, KVStore, View], bool]


@dataclass(frozen=True)
class IsolationLevel:
    name: str
    dep_relation: Callable[[KVStore], Relation]
    v_shift: VShift

    def __str__(self) -> str:
        return self.name


def _empty(kvs: KVStore) -> Relation:
    return frozenset()


def _always(kvs: KVStore, u: View, kvs2: KVStore, u2: View) -> bool:
    return True


def new_indices(kvs: KVStore, kvs2: KVStore) -> dict[str, frozenset[int]]:
    """Indices appended to each key between two stores."""
    return {k: frozenset(range(len(kvs.get(k, ())), len(vs))) for k, vs in kvs2.items()}


def v_shift_tcc(kvs: KVStore, u: View, kvs2: KVStore, u2: View) -> bool:
    # monotonic reads: the view only grows
    if not view_leq(u, u2):
        return False
    # read your writes: the committed transaction's versions are visible afterwards
    return all(ix <= u2.get(k, frozenset()) for k, ix in new_indices(kvs, kvs2).items())


def _tcc_deps(kvs: KVStore) -> Relation:
    return so_rel(txids(kvs)) | wr_rel(kvs)


def _sser_deps(kvs: KVStore) -> Relation:
    return inverse(ww_rel(kvs))


def level_ra() -> IsolationLevel:
    return IsolationLevel("RA", _empty, _always)


def level_tcc() -> IsolationLevel:
    return IsolationLevel("TCC", _tcc_deps, v_shift_tcc)


def level_sser() -> IsolationLevel:
    return IsolationLevel("SSER", _sser_deps, _always)


_REGISTRY: dict[str, IsolationLevel] = {}


def register_level(level: IsolationLevel) -> None:
    """Make a level available by name (case-insensitive)."""
    _REGISTRY[level.name.lower()] = level


def get_level(name: str) -> IsolationLevel:
    try:
        return _REGISTRY[name.lower()]
    except KeyError:
        raise KeyError(f"unknown isolation level {name!r}; known: {sorted(_REGISTRY)}") from None


def levels() -> Mapping[str, IsolationLevel]:
    return dict(_REGISTRY)


for _lvl in (level_ra(), level_tcc(), level_sser()):
    register_level(_lvl)
