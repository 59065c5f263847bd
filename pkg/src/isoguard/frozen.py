"""A hashable, immutable mapping used for every state component."""

from __future__ import annotations

from typing import Any, Iterator, Mapping, TypeVar

K = TypeVar("K")
V = TypeVar("V")


class FrozenDict(Mapping[K, V]):
    __slots__ = ("_d", "_h")

    def __init__(self, *args: Any, **kwargs: Any) -> None:
        self._d: dict[K, V] = dict(*args, **kwargs)
        self._h: int | None = None

    def __getitem__(self, key: K) -> V:
        return self._d[key]

    def __iter__(self) -> Iterator[K]:
        return iter(self._d)

    def __len__(self) -> int:
        return len(self._d)

    def __contains__(self, key: object) -> bool:
        return key in self._d

    def __hash__(self) -> int:
        if self._h is None:
            self._h = hash(frozenset(self._d.items()))
        return self._h

    def __eq__(self, other: object) -> bool:
        if isinstance(other, FrozenDict):
            if self._h is not None and other._h is not None and self._h != other._h:
                return False
            return self._d == other._d
        if isinstance(other, Mapping):
            return self._d == dict(other)
        return NotImplemented

    def __repr__(self) -> str:
        return f"FrozenDict({self._d!r})"

    def set(self, key: K, value: V) -> FrozenDict[K, V]:
        """Return a copy with ``key`` bound to ``value``."""
        d = dict(self._d)
        d[key] = value
        return FrozenDict(d)

    def update(self, other: Mapping[K, V]) -> FrozenDict[K, V]:
        d = dict(self._d)
        d.update(other)
        return FrozenDict(d)

    def without(self, key: K) -> FrozenDict[K, V]:
        d = dict(self._d)
        d.pop(key, None)
        return FrozenDict(d)
