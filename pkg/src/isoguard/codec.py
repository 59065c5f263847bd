"""Canonical JSON encoding of stores, views, fingerprints and event parameters."""

from __future__ import annotations

import json
from typing import Any, Mapping

from isoguard.core import R, W, Fingerprint, KVStore, TxId, Version, View
from isoguard.frozen import FrozenDict


def dumps(obj: Any, indent: int | None = None) -> str:
    if indent is None:
        return json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return json.dumps(obj, sort_keys=True, indent=indent)


def encode_txid(t: TxId | None) -> dict | None:
    return None if t is None else {"cl": t.cl, "sn": t.sn}


def decode_txid(d: Mapping | None) -> TxId | None:
    return None if d is None else TxId(str(d["cl"]), int(d["sn"]))


def encode_kvs(kvs: KVStore) -> dict:
    return {
        k: [
            {
                "value": v.value,
                "writer": encode_txid(v.writer),
                "readerset": [encode_txid(t) for t in sorted(v.readerset)],
            }
            for v in vs
        ]
        for k, vs in sorted(kvs.items())
    }


def decode_kvs(d: Mapping) -> KVStore:
    return FrozenDict(
        {
            k: tuple(
                Version(
                    v["value"],
                    decode_txid(v["writer"]),
                    frozenset(decode_txid(t) for t in v.get("readerset", [])),
                )
                for v in vs
            )
            for k, vs in d.items()
        }
    )


def encode_view(u: Mapping[str, frozenset[int]]) -> dict:
    return {k: sorted(ix) for k, ix in sorted(u.items())}


def decode_view(d: Mapping) -> View:
    return FrozenDict({k: frozenset(int(i) for i in ix) for k, ix in d.items()})


def encode_fp(f: Fingerprint) -> dict:
    out: dict[str, dict[str, str]] = {}
    for (k, op), v in sorted(f.items()):
        out.setdefault(k, {})[op] = v
    return out


def decode_fp(d: Mapping) -> Fingerprint:
    fp = {}
    for k, ops in d.items():
        for op, v in ops.items():
            if op not in (R, W):
                raise ValueError(f"bad fingerprint operation {op!r}")
            fp[(k, op)] = v
    return FrozenDict(fp)


def kvs_digest(kvs: KVStore) -> str:
    return dumps(encode_kvs(kvs))


# Event parameters: name -> (encode, decode). Unlisted names are plain JSON scalars.
def _enc_footprint(fp):
    return None if fp is None else dict(sorted(fp.items()))


def _dec_footprint(d):
    return None if d is None else FrozenDict(d)


def _enc_writemap(m):
    return dict(sorted(m.items()))


PARAM_CODECS = {
    "t": (encode_txid, decode_txid),
    "u": (encode_view, decode_view),
    "f": (encode_fp, decode_fp),
    "footprint": (_enc_footprint, _dec_footprint),
    "writemap": (_enc_writemap, lambda d: FrozenDict(d)),
}


def encode_params(params: Mapping[str, Any]) -> dict:
    out = {}
    for name, value in params.items():
        enc = PARAM_CODECS.get(name, (lambda x: x, None))[0]
        out[name] = enc(value)
    return out


def decode_params(d: Mapping[str, Any]) -> dict:
    out = {}
    for name, value in d.items():
        dec = PARAM_CODECS.get(name, (None, lambda x: x))[1]
        out[name] = dec(value)
    return out
