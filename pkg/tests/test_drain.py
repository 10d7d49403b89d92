from __future__ import annotations

import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from translog.drain import (MASK_PRESETS, WILDCARD, CorpusError, EmptyLineError, ParserConfig,
                            TemplateMiner, mine_corpus, parse_line, read_assignments,
                            read_templates, similarity, write_assignments, write_templates)
from translog.synth import pattern_corpus


def test_identical_lines_share_template():
    miner = TemplateMiner()
    assert miner.parse_line("send block 5") == 0
    assert miner.parse_line("send block 5") == 0
    assert miner.templates[0].tokens == ["send", "block", WILDCARD]
    assert miner.templates[0].match_count == 2


def test_merge_hand_trace():
    miner = TemplateMiner(ParserConfig(tree_depth=3, similarity_threshold=0.5))
    assert miner.parse_line("send block 5 ok") == 0
    assert miner.parse_line("send block 7 fail") == 0
    assert miner.templates[0].tokens == ["send", "block", WILDCARD, WILDCARD]


def test_dissimilar_lines_split():
    miner = TemplateMiner()
    assert [miner.parse_line("open file A"), miner.parse_line("close socket B")] == [0, 1]


def test_functional_parse_line_returns_state():
    tid, state = parse_line("a b c", TemplateMiner())
    assert tid == 0 and len(state.templates) == 1


def test_empty_line_rejected():
    with pytest.raises(EmptyLineError):
        TemplateMiner().parse_line("   \t ")


def test_malformed_utf8_is_replaced():
    miner = TemplateMiner()
    tid = miner.parse_line(b"bad \xff\xfe bytes")
    assert "�" in miner.templates[tid].text


def test_empty_corpus():
    with pytest.raises(CorpusError, match="empty corpus"):
        mine_corpus([])
    with pytest.raises(CorpusError, match="empty corpus"):
        mine_corpus(["", "  "])


def test_per_line_errors_reported_with_numbers():
    with pytest.raises(CorpusError) as info:
        mine_corpus(["a b", "", "c d", " "])
    assert [n for n, _ in info.value.errors] == [2, 4]


def test_single_line_corpus():
    templates, assignments = mine_corpus(["only one line"])
    assert len(templates) == 1 and assignments == [0]


def test_pattern_corpus_recovers_every_generator():
    lines, truth = pattern_corpus(10, 1000, seed=0)
    templates, assignments = mine_corpus(lines)
    assert len(templates) == 10
    # the mapping between generator ids and template ids is a bijection
    pairs = set(zip(truth, assignments))
    assert len(pairs) == 10
    assert len({t for t, _ in pairs}) == len({a for _, a in pairs}) == 10


def test_max_children_overflow_uses_catch_all():
    miner = TemplateMiner(ParserConfig(tree_depth=3, max_children=3, mask_patterns=[]))
    for w in ("alpha", "beta", "gamma", "delta"):
        miner.parse_line(f"{w} x y z")
    keys = set(miner.root.children["4"].children)
    assert WILDCARD in keys and len(keys) == 3


def test_tie_break_lowest_id():
    miner = TemplateMiner(ParserConfig(tree_depth=3, similarity_threshold=0.5, mask_patterns=[]))
    miner.parse_line("a b c d")
    miner.parse_line("a x y z")  # 1/4 < 0.5: new template
    assert miner.parse_line("a b y z") == 0  # 2/4 against both; lowest id wins


def test_parser_config_validation():
    with pytest.raises(ValueError):
        ParserConfig(tree_depth=2)
    with pytest.raises(ValueError):
        ParserConfig(similarity_threshold=0)
    with pytest.raises(ValueError):
        ParserConfig(max_children=1)
    with pytest.raises(ValueError):
        ParserConfig.from_preset("nope")


def test_presets_mask_dataset_tokens():
    hdfs = TemplateMiner(ParserConfig.from_preset("hdfs"))
    tid = hdfs.parse_line("Receiving block blk_-1608999687919862906 src: /10.250.19.102:54106")
    assert "blk" not in hdfs.templates[tid].text
    assert "10.250" not in hdfs.templates[tid].text


def test_file_round_trip(tmp_path):
    templates, assignments = mine_corpus(["a 1", "b c", "a 2"])
    write_templates(tmp_path / "t.json", templates)
    write_assignments(tmp_path / "a.bin", assignments)
    assert read_templates(tmp_path / "t.json") == templates
    assert read_assignments(tmp_path / "a.bin") == assignments
    (tmp_path / "bad.bin").write_bytes(b"garbage!xxxx")
    with pytest.raises(ValueError):
        read_assignments(tmp_path / "bad.bin")


words = st.sampled_from(["alpha", "beta", "gamma", "delta", "eps", "42", "0x1f", "10.0.0.1"])
lines = st.lists(words, min_size=1, max_size=6).map(" ".join)


@given(st.lists(lines, min_size=1, max_size=30))
def test_mining_is_deterministic_and_complete(corpus):
    t1, a1 = mine_corpus(corpus)
    t2, a2 = mine_corpus(corpus)
    assert t1 == t2 and a1 == a2
    assert len(a1) == len(corpus)
    assert sorted(set(a1)) == list(range(len(t1)))  # dense, first-seen ids
    assert [t.match_count for t in t1] == [a1.count(t.id) for t in t1]


@given(st.lists(lines, min_size=1, max_size=20), lines)
def test_matching_is_idempotent(corpus, probe):
    miner = TemplateMiner()
    for ln in corpus:
        miner.parse_line(ln)
    tid = miner.parse_line(probe)
    assert miner.match(probe) == tid
    assert miner.parse_line(probe) == tid


@given(st.lists(lines, min_size=1, max_size=20))
def test_masked_substrings_never_stored(corpus):
    miner = TemplateMiner()
    for ln in corpus:
        miner.parse_line(ln)
    rxs = [re.compile(p) for p in MASK_PRESETS["generic"]]
    for t in miner.templates:
        for tok in t.tokens:
            assert tok == WILDCARD or not any(rx.search(tok) for rx in rxs)


@given(st.lists(lines, min_size=2, max_size=25))
def test_wildcards_are_monotone(corpus):
    miner = TemplateMiner()
    seen: dict[int, set[int]] = {}
    for ln in corpus:
        tid = miner.parse_line(ln)
        wild = {i for i, t in enumerate(miner.templates[tid].tokens) if t == WILDCARD}
        assert seen.get(tid, set()) <= wild
        seen[tid] = wild


@given(st.lists(words, min_size=1, max_size=6))
def test_similarity_self_is_one(tokens):
    assert similarity(tokens, tokens) == 1.0
    assert similarity(tokens, tokens + ["x"]) == 0.0
