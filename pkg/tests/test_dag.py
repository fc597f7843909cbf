import random

import pytest
from hypothesis import given, settings, strategies as st

from dagbft.dag import DagView, InsertResult, InvalidBlock, Reason, blocks_to_view, rr
from dagbft.engine import advance_target
from dagbft.types import Block, Config, SimulatedSigner, make_block

from helpers import DagBuilder
from oracles import advance_bf, past_bf, random_dag, strong_bf, supp_bf


def full_rounds(rounds, n=4):
    d = DagBuilder(n, (n - 1) // 3)
    for r in range(1, rounds + 1):
        for c in range(n):
            d.add(r, c)
    return d


def test_rr_schedule():
    assert [rr(r, 4) for r in range(1, 9)] == [1, 2, 3, 0, 1, 2, 3, 0]


def test_three_distinct_parents_valid():
    d = full_rounds(1)
    v = d.view()
    b = make_block(2, 0, [d.blocks[(1, c)].id for c in (0, 1, 2)], signer=d.signer)
    assert v.validate(b) is Reason.OK


@pytest.mark.parametrize("build,reason", [
    (lambda d, s: make_block(2, 0, [d.blocks[(1, c)].id for c in (0, 1)], signer=s), Reason.INSUFFICIENT_PARENTS),
    (lambda d, s: make_block(2, 0, [d.blocks[(1, 0)].id, d.blocks[(1, 1)].id, b"\x09" * 32], signer=s),
     Reason.UNKNOWN_PARENT),
    (lambda d, s: make_block(2, 0, [d.blocks[(1, c)].id for c in (0, 1, 2)], signer=s, sign_as=1),
     Reason.BAD_SIGNATURE),
    (lambda d, s: make_block(2, 7, [d.blocks[(1, c)].id for c in (0, 1, 2)], signer=s), Reason.BAD_CREATOR),
    (lambda d, s: make_block(3, 0, [d.blocks[(1, c)].id for c in (0, 1, 2)], signer=s), Reason.BAD_ROUND),
    (lambda d, s: make_block(1, 0, [d.blocks[(1, 1)].id], signer=s), Reason.BAD_ROUND),
])
def test_invalid_blocks(build, reason):
    d = full_rounds(1)
    v = d.view()
    assert v.validate(build(d, d.signer)) is reason


def test_duplicate_creator_parents_rejected():
    d = full_rounds(1)
    twin = make_block(1, 0, payload=b"twin", signer=d.signer)
    v = d.view()
    v.insert(twin)
    b = make_block(2, 1, [d.blocks[(1, 0)].id, twin.id, d.blocks[(1, 1)].id, d.blocks[(1, 2)].id],
                   signer=d.signer)
    assert v.validate(b) is Reason.DUPLICATE_CREATOR_PARENT


def test_weak_ref_must_be_older_than_previous_round():
    d = full_rounds(2)
    v = d.view()
    strong = [d.blocks[(2, c)].id for c in range(3)]
    ok = make_block(3, 0, strong, [d.blocks[(1, 3)].id], signer=d.signer)
    bad = make_block(3, 1, strong, [d.blocks[(2, 3)].id], signer=d.signer)
    assert v.validate(ok) is Reason.OK
    assert v.validate(bad) is Reason.BAD_ROUND


def test_insert_rejects_invalid_and_detects_duplicates():
    d = full_rounds(1)
    v = d.view()
    with pytest.raises(InvalidBlock):
        v.insert(make_block(2, 0, [d.blocks[(1, 0)].id], signer=d.signer))
    assert v.insert(d.blocks[(1, 0)]) is InsertResult.DUPLICATE


def test_equivocation_recorded():
    d = full_rounds(1)
    v = d.view()
    twin = make_block(1, 2, payload=b"other", signer=d.signer)
    assert v.insert(twin) is InsertResult.EQUIVOCATION
    assert v.equivocations[(2, 1)] == {twin.id, d.blocks[(1, 2)].id}
    assert len(v.slot_blocks(2, 1)) == 2


def test_supp_counts_distinct_next_round_creators():
    d = full_rounds(1)
    for c in range(3):
        d.add(2, c)
    d.add(2, 3, strong=[(1, 0), (1, 1), (1, 3)])
    v = d.view()
    assert v.supp(d.blocks[(1, 0)]) == 4
    assert v.supp(d.blocks[(1, 2)]) == 3
    assert v.supp(d.blocks[(1, 3)]) == 4


def test_supp_split_between_equivocations():
    d = full_rounds(1)
    twin = make_block(1, 1, payload=b"twin", signer=d.signer)
    v = d.view()
    v.insert(twin)
    a = make_block(2, 0, [d.blocks[(1, c)].id for c in range(4)], signer=d.signer)
    b = make_block(2, 2, [twin.id] + [d.blocks[(1, c)].id for c in (0, 2, 3)], signer=d.signer)
    v.insert(a)
    v.insert(b)
    assert v.supp(d.blocks[(1, 1)]) == 1
    assert v.supp(twin) == 1
    assert not v.supp_anchor(1)


def test_quorum_and_anchor_predicates():
    d = DagBuilder()
    for c in (0, 1, 2):
        d.add(1, c)
    v = d.view()
    assert v.quorum(1)
    assert not v.quorum(2)
    assert v.anchor(1)
    assert not v.anchor(3)
    assert v.anchor(0) and v.anchor(-1) and v.supp_anchor(0)


def test_strong_and_past_closures():
    d = full_rounds(2)
    d.add(3, 0, strong=[(2, 0), (2, 1), (2, 2)], weak=[(1, 3)])
    v = d.view()
    top = d.blocks[(3, 0)]
    strong = v.strong(top)
    assert d.blocks[(2, 3)] not in strong
    assert d.blocks[(1, 3)] in strong  # through (2, 0)
    assert v.past(top) >= strong


def test_prune_keeps_undelivered_and_tombstones():
    d = full_rounds(3)
    v = d.view()
    delivered = {d.blocks[(1, c)].id for c in (0, 1, 2)}
    removed = v.prune(2, delivered)
    assert removed == 3
    assert d.blocks[(1, 3)].id in v
    assert v.known(d.blocks[(1, 0)].id) and d.blocks[(1, 0)].id not in v
    assert v.tombstones[d.blocks[(1, 0)].id] == (1, 0)
    # a late round-2 block referencing pruned parents still validates
    late = make_block(2, 3, [d.blocks[(1, c)].id for c in range(4)], payload=b"late", signer=d.signer)
    assert v.validate(late) is Reason.OK


def test_dump_is_deterministic_and_ordered():
    d = full_rounds(2)
    a = d.view().dump()
    rev = DagView(d.cfg, d.signer)
    for b in sorted(d.blocks.values(), key=lambda b: (b.round, -b.creator)):
        rev.insert(b)
    assert rev.dump() == a
    lines = a.splitlines()
    assert len(lines) == 8
    assert [l.split()[:2] for l in lines[:4]] == [["1", "0"], ["1", "1"], ["1", "2"], ["1", "3"]]
    assert lines[4].startswith("2 0 ") and "strong=[" in lines[4]


@given(st.integers(0, 10**9))
@settings(max_examples=60, deadline=None)
def test_indexes_match_brute_force(seed):
    cfg, signer, blocks, _ = random_dag(random.Random(seed))
    view = blocks_to_view(blocks.values(), cfg, signer)
    for bid, b in blocks.items():
        assert view.supp(b) == supp_bf(bid, blocks)
        assert {x.id for x in view.strong(b)} == strong_bf(bid, blocks)
        assert {x.id for x in view.past(b)} == past_bf(bid, blocks)
    for r in range(1, view.max_round + 1):
        assert advance_target(view, r) == advance_bf(r, blocks, cfg)
        assert advance_target(view, r, {r}) == advance_bf(r, blocks, cfg, {r})
