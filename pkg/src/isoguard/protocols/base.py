"""Shared protocol plumbing: concrete events, exploration scope, footprints."""

from __future__ import annotations

import functools
import inspect
import itertools
import string
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from isoguard import codec
from isoguard.core import TxId
from isoguard.frozen import FrozenDict

# footprint: key -> "r" | "w" | "rw"
Footprint = FrozenDict[str, str]
MODES = ("r", "w", "rw")

CL_INIT = "cl_init"
CL_PREPARED = "cl_prepared"
CL_COMMITTED = "cl_committed"
CL_ABORTED = "cl_aborted"


class DisabledEvent(Exception):
    """An event was applied in a state where its guard does not hold."""


@dataclass(frozen=True)
class Event:
    name: str
    params: FrozenDict[str, Any] = field(default_factory=FrozenDict)

    def __getitem__(self, key: str) -> Any:
        return self.params[key]

    def __str__(self) -> str:
        shown = []
        for k, v in self.params.items():
            if k in ("u", "f", "writemap"):
                continue
            if k == "footprint" and v is not None:
                v = ",".join(f"{key}:{m}" for key, m in sorted(v.items()))
            shown.append(f"{k}={v}")
        return f"{self.name}({', '.join(shown)})"

    def to_json(self) -> dict:
        return {"name": self.name, "params": codec.encode_params(self.params)}

    @classmethod
    def from_json(cls, d: Mapping) -> Event:
        return cls(d["name"], FrozenDict(codec.decode_params(d.get("params", {}))))

    def sort_key(self) -> tuple[str, str]:
        return (self.name, codec.dumps(codec.encode_params(self.params)))


def ev(name: str, **params: Any) -> Event:
    return Event(name, FrozenDict(params))


def footprint(spec: Mapping[str, str] | str) -> Footprint:
    """Build a footprint from a mapping or a string like ``"A:w,B:r"``."""
    if isinstance(spec, str):
        pairs = {}
        for part in spec.split(","):
            part = part.strip()
            if not part:
                continue
            k, _, m = part.partition(":")
            pairs[k.strip()] = (m.strip() or "rw").lower()
        spec = pairs
    fp = FrozenDict(dict(sorted(spec.items())))
    for k, m in fp.items():
        if m not in MODES:
            raise ValueError(f"bad footprint mode {m!r} for key {k!r}")
    if not fp:
        raise ValueError("footprint must not be empty")
    return fp


def all_footprints(keys: Iterable[str]) -> tuple[Footprint, ...]:
    keys = list(keys)
    out = []
    for modes in itertools.product((None,) + MODES, repeat=len(keys)):
        d = {k: m for k, m in zip(keys, modes) if m is not None}
        if d:
            out.append(FrozenDict(d))
    return tuple(out)


def key_names(n: int) -> list[str]:
    letters = string.ascii_uppercase
    if n <= len(letters):
        return list(letters[:n])
    return [f"K{i}" for i in range(n)]


def client_names(n: int) -> list[str]:
    return [f"c{i}" for i in range(n)]


def write_value(t: TxId, key: str, choice: int = 0) -> str:
    """Values are tagged with writer and key so every write is unique."""
    base = f"{t.cl}.{t.sn}.{key}"
    return base if choice == 0 else f"{base}#{choice}"


@dataclass(frozen=True)
class Scope:
    """Bounds for exploration. ``footprints`` maps a client to the footprints
    each of its transactions may choose from (default: every footprint)."""

    clients: int = 2
    keys: int = 2
    txns_per_client: int = 1
    values: int = 1
    ts_bound: int = 9
    depth: int = 200
    footprints: FrozenDict[str, tuple[Footprint, ...]] | None = None

    def __post_init__(self) -> None:
        for name in ("clients", "keys", "txns_per_client", "values", "ts_bound", "depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"scope.{name} must be >= 1")
        if self.footprints is not None:
            keys = set(self.key_names)
            for cl, fps in self.footprints.items():
                if cl not in self.client_names:
                    raise ValueError(f"footprint for unknown client {cl!r}")
                if not fps:
                    raise ValueError(f"empty footprint set for {cl!r}")
                for fp in fps:
                    if not fp or set(fp) - keys:
                        raise ValueError(f"footprint {dict(fp)} of {cl!r} outside keys {sorted(keys)}")

    @property
    def key_names(self) -> list[str]:
        return key_names(self.keys)

    @property
    def client_names(self) -> list[str]:
        return client_names(self.clients)

    def footprints_for(self, cl: str) -> tuple[Footprint, ...]:
        if self.footprints is not None and cl in self.footprints:
            return self.footprints[cl]
        return all_footprints(self.key_names)

    def to_json(self) -> dict:
        d: dict[str, Any] = {
            "clients": self.clients,
            "keys": self.keys,
            "txns_per_client": self.txns_per_client,
            "values": self.values,
            "ts_bound": self.ts_bound,
            "depth": self.depth,
        }
        if self.footprints is not None:
            d["footprints"] = {
                cl: [dict(sorted(fp.items())) for fp in fps] for cl, fps in sorted(self.footprints.items())
            }
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> Scope:
        fps = d.get("footprints")
        return cls(
            clients=int(d.get("clients", 2)),
            keys=int(d.get("keys", 2)),
            txns_per_client=int(d.get("txns_per_client", 1)),
            values=int(d.get("values", 1)),
            ts_bound=int(d.get("ts_bound", 9)),
            depth=int(d.get("depth", 200)),
            footprints=None
            if fps is None
            else FrozenDict({cl: tuple(footprint(fp) for fp in lst) for cl, lst in fps.items()}),
        )


def parse_footprints(spec: str) -> FrozenDict[str, tuple[Footprint, ...]] | None:
    """Parse ``"c0=A:w,B:w;c1=A:r,B:r|A:rw"``; ``"all"`` means unrestricted."""
    spec = spec.strip()
    if spec in ("", "all"):
        return None
    out = {}
    for clause in spec.split(";"):
        clause = clause.strip()
        if not clause:
            continue
        cl, sep, alts = clause.partition("=")
        if not sep:
            raise ValueError(f"footprint clause {clause!r} lacks '='")
        out[cl.strip()] = tuple(footprint(a) for a in alts.split("|"))
    return FrozenDict(out)


@functools.lru_cache(maxsize=None)
def _signature(cls: type, name: str) -> inspect.Signature:
    return inspect.signature(getattr(cls, f"ev_{name}"))


class Protocol:
    """A concrete protocol LTS.

    Subclasses implement one ``ev_<name>`` method per event, returning the
    successor state or ``None`` when the guard does not hold, plus
    ``candidates`` proposing parameterised events for a scope.
    """

    name = "protocol"
    variant: str | None = None

    def initial(self, scope: Scope) -> Any:
        raise NotImplementedError

    def candidates(self, state: Any, scope: Scope) -> Iterable[Event]:
        raise NotImplementedError

    def try_step(self, state: Any, e: Event) -> Any | None:
        handler = getattr(self, f"ev_{e.name}", None)
        if handler is None:
            raise DisabledEvent(f"unknown event {e.name!r} for {self.name}")
        try:
            _signature(type(self), e.name).bind(self, state, **e.params)
        except TypeError as exc:
            raise DisabledEvent(f"bad parameters for {e}: {exc}") from None
        return handler(state, **e.params)

    def step(self, state: Any, e: Event) -> Any:
        nxt = self.try_step(state, e)
        if nxt is None:
            raise DisabledEvent(f"{e} is not enabled")
        return nxt

    def enabled(self, state: Any, scope: Scope) -> list[Event]:
        out = [e for e in self.candidates(state, scope) if self.try_step(state, e) is not None]
        out.sort(key=Event.sort_key)
        return out

    def invariants(self, state: Any) -> list[str]:
        return []

    def reconstruct_kvs(self, state: Any):
        raise NotImplementedError

    def is_commit(self, e: Event) -> bool:
        return e.name == "cl_commit"
