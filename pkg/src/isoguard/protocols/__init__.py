"""Executable protocol models."""

from __future__ import annotations

from isoguard.protocols.base import DisabledEvent, Event, Protocol, Scope, ev, footprint
from isoguard.protocols.s2pl import S2PL
from isoguard.protocols.tapir import Tapir


def make_protocol(name: str, variant: str | None = None) -> Protocol:
    name = name.lower()
    if name == "s2pl":
        if variant is not None:
            raise ValueError("--variant only applies to tapir")
        return S2PL()
    if name == "tapir":
        return Tapir(variant or "journal")
    raise ValueError(f"unknown protocol {name!r}")


__all__ = ["DisabledEvent", "Event", "Protocol", "S2PL", "Scope", "Tapir", "ev", "footprint", "make_protocol"]
