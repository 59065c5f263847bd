import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isoguard import history
from isoguard.history import (
    INIT,
    SO,
    WR,
    WW,
    HistoryError,
    build_graph,
    check_ra,
    check_ra_oracle,
    from_json,
    parse_log,
    random_history,
)
from isoguard.schedules import appendix_a_history


def h(*sessions, initial=None):
    """sessions: (client, [(name, [(op, key, value), ...]), ...])"""
    d = {
        "sessions": [
            {
                "client": cl,
                "txns": [
                    {"name": n, "sn": i, "ops": [{"op": o, "key": k, "value": v} for o, k, v in ops]}
                    for i, (n, ops) in enumerate(txns)
                ],
            }
            for cl, txns in sessions
        ]
    }
    if initial:
        d["initial"] = initial
    return from_json(d)


def test_appendix_a_witness():
    r = check_ra(from_json(appendix_a_history()))
    assert not r.ok
    assert [(e.kind, e.src, e.dst, e.key) for e in r.cycle] == [
        (SO, "Txn67", "Txn68", None),
        (WW, "Txn68", "Txn67", "K87"),
    ]
    ww = r.cycle[1]
    assert ww.via == "Txn81" and ww.because == WR
    assert r.labels == ["fractured reads"]
    assert r.fractured and r.fractured[0]["reader"] == "Txn81"
    assert not check_ra_oracle(from_json(appendix_a_history()))
    assert "cycle of length 2" in r.text()


def test_serial_history_holds():
    hh = h(("s0", [("t1", [("w", "x", "1"), ("w", "y", "1")])]), ("s1", [("t2", [("r", "x", "1"), ("r", "y", "1")])]))
    r = check_ra(hh)
    assert r.ok and r.cycle is None
    assert check_ra_oracle(hh)
    assert "acyclic" in r.text()


def test_missed_session_write():
    hh = h(("s0", [("t1", [("w", "x", "1")]), ("t2", [("r", "x", "v0")])]))
    r = check_ra(hh)
    assert not r.ok and r.labels == ["missed session writes"]
    assert not check_ra_oracle(hh)


def test_plain_dependency_cycle():
    hh = h(
        ("s0", [("t1", [("r", "y", "2"), ("w", "x", "1")])]),
        ("s1", [("t2", [("r", "x", "1"), ("w", "y", "2")])]),
    )
    r = check_ra(hh)
    assert not r.ok and r.labels == ["dependency cycle"]
    assert all(e.kind == WR for e in r.cycle)
    assert not check_ra_oracle(hh)


def test_internal_inconsistencies():
    hh = h(("s0", [("t1", [("w", "x", "1"), ("r", "x", "v0")])]))
    r = check_ra(hh)
    assert not r.ok and "internal inconsistency" in r.labels
    assert not check_ra_oracle(hh)
    # reading an overwritten intermediate value of another transaction
    hh = h(("s0", [("t1", [("w", "x", "1"), ("w", "x", "2")])]), ("s1", [("t2", [("r", "x", "1")])]))
    r = check_ra(hh)
    assert not r.ok and any("intermediate" in p for p in r.internal)
    assert not check_ra_oracle(hh)


def test_graph_shape():
    g = build_graph(from_json(appendix_a_history()))
    assert g.nodes[0] == INIT
    so = {(e.src, e.dst) for e in g.by_kind(SO)}
    assert so == {(INIT, "Txn67"), ("Txn67", "Txn68"), (INIT, "Txn81")}
    wr = {(e.src, e.dst, e.key) for e in g.by_kind(WR)}
    assert wr == {("Txn67", "Txn81", "K87"), ("Txn68", "Txn81", "K56")}


def test_validation_errors():
    with pytest.raises(HistoryError, match="sessions"):
        from_json({})
    with pytest.raises(HistoryError, match="nobody writes"):
        h(("s0", [("t1", [("r", "x", "9")])]))
    with pytest.raises(HistoryError, match="both"):
        h(("s0", [("t1", [("w", "x", "1")]), ("t2", [("w", "x", "1")])]))
    with pytest.raises(HistoryError, match="initial value"):
        h(("s0", [("t1", [("w", "x", "v0")])]))
    with pytest.raises(HistoryError, match="duplicate"):
        h(("s0", [("t1", [])]), ("s1", [("t1", [])]))
    with pytest.raises(HistoryError, match="reserved"):
        h(("s0", [("init", [])]))
    with pytest.raises(HistoryError, match="unknown operation"):
        h(("s0", [("t1", [("x", "k", "1")])]))
    with pytest.raises(HistoryError, match="malformed"):
        from_json({"sessions": [{"txns": []}]})


def test_custom_initial_values():
    hh = h(("s0", [("t1", [("r", "x", "zero")])]), initial={"x": "zero"})
    assert check_ra(hh).ok and hh.initial_value("x") == "zero"
    assert from_json(hh.to_json()) == hh


def test_parse_log_and_load(tmp_path):
    text = """
    # session txn op key value
    Clt70 Txn67 w K87 x67
    Clt70 Txn68 write K87 x68
    Clt70 Txn68 w K56 y68
    Clt01 Txn81 read K87 x67
    Clt01 Txn81 r K56 y68
    """
    hh = parse_log(text)
    assert [t.id for t in hh.txns] == ["Txn67", "Txn68", "Txn81"]
    assert check_ra(hh).to_json()["ra"] == "violated"
    p = tmp_path / "h.log"
    p.write_text(text)
    assert history.load(str(p)) == hh
    with pytest.raises(HistoryError, match="line"):
        parse_log("a b c")
    with pytest.raises(HistoryError, match="unknown operation"):
        parse_log("s t x k v")
    pj = tmp_path / "bad.json"
    pj.write_text("{nope")
    with pytest.raises(HistoryError, match="invalid JSON"):
        history.load(str(pj))


def test_dot_and_stats():
    hh = from_json(appendix_a_history())
    r = check_ra(hh)
    dot = history.to_dot(r.graph, r.cycle)
    assert "penwidth=3" in dot and '"Txn68" -> "Txn67"' in dot
    assert history.history_stats(hh) == {"sessions": 2, "transactions": 3, "keys": 2, "operations": 5}


def test_oracle_size_limit():
    rng = random.Random(0)
    big = random_history(rng, max_txns=9)
    while len(big.txns) <= 6:
        big = random_history(rng, max_txns=9)
    with pytest.raises(ValueError):
        check_ra_oracle(big)


def test_random_histories_are_valid_and_mixed():
    rng = random.Random(1)
    verdicts = []
    for _ in range(300):
        hh = random_history(rng)
        history.validate(hh)
        verdicts.append(check_ra(hh).ok)
    assert any(verdicts) and not all(verdicts)


def test_checker_matches_oracle_2000():
    rng = random.Random(2024)
    for i in range(2000):
        hh = random_history(rng, max_txns=5, max_keys=3)
        assert check_ra(hh).ok == check_ra_oracle(hh), hh.to_json()


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.floats(min_value=0.0, max_value=1.0))
def test_checker_matches_oracle_property(seed, bias):
    hh = random_history(random.Random(seed), max_txns=5, max_keys=3, serial_bias=bias)
    assert check_ra(hh).ok == check_ra_oracle(hh)


def test_serial_histories_always_hold():
    rng = random.Random(77)
    for _ in range(300):
        hh = random_history(rng, serial_bias=1.0)
        assert check_ra(hh).ok
