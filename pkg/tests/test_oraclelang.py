import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emcomm.errors import CapacityError
from emcomm.oraclelang import (
    OracleMapping,
    build_mapping,
    decode_message,
    encode_instance,
    export_corpus,
    make_supervised_pairs,
)

PAPER_TR = OracleMapping(tr=(3, 8, 2), c_voc=10)


@pytest.mark.parametrize(
    "instance, message",
    [((0, 0), (3, 3)), ((1, 0), (8, 8, 3)), ((2, 1), (2, 2, 8, 8))],
)
def test_worked_examples(instance, message):
    assert encode_instance(PAPER_TR, instance) == message


def test_permutation_when_vocab_equals_values():
    m = build_mapping(12, 12, seed=0)
    assert sorted(m.tr) == list(range(12))


def test_mapping_is_seeded():
    assert build_mapping(20, 30, seed=4) == build_mapping(20, 30, seed=4)
    assert build_mapping(20, 30, seed=4) != build_mapping(20, 30, seed=5)


def test_inverse_composes_to_identity():
    m = build_mapping(10, 15, seed=1)
    inv = m.inverse()
    assert [inv[m.tr[v]] for v in range(10)] == list(range(10))


def test_capacity_error():
    with pytest.raises(CapacityError):
        build_mapping(10, 9, seed=0)


def test_value_outside_domain():
    with pytest.raises(IndexError):
        encode_instance(PAPER_TR, (0, 3))


def test_lossless_over_full_space():
    m = build_mapping(100, 100, seed=0)
    seen = {}
    for inst in itertools.product(range(100), repeat=2):
        msg = encode_instance(m, inst)
        assert 2 <= len(msg) <= 4
        assert msg not in seen
        seen[msg] = inst
        assert decode_message(m, msg) == inst


@settings(max_examples=60, deadline=None)
@given(
    n_val=st.integers(2, 30),
    extra=st.integers(0, 10),
    seed=st.integers(0, 10_000),
    data=st.data(),
)
def test_decode_inverts_encode(n_val, extra, seed, data):
    m = build_mapping(n_val, n_val + extra, seed)
    i_att = data.draw(st.integers(1, 4))
    inst = tuple(data.draw(st.lists(st.integers(0, n_val - 1), min_size=i_att, max_size=i_att)))
    msg = encode_instance(m, inst)
    assert i_att <= len(msg) <= 2 * i_att
    assert decode_message(m, msg) == inst


def test_supervised_pairs_and_export(tmp_path):
    pairs = make_supervised_pairs(PAPER_TR, [(0, 0), (2, 1)])
    assert pairs == [((0, 0), (3, 3)), ((2, 1), (2, 2, 8, 8))]
    corpus, manifest = export_corpus(PAPER_TR, pairs, tmp_path)
    assert corpus.read_text() == "0,0\t3 3\n2,1\t2 2 8 8\n"
    assert '"tr"' in manifest.read_text()
