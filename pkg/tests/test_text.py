import numpy as np
import pytest
from hypothesis import given, strategies as st

from signembed.errors import ValidationError
from signembed.pose import DatasetManifest, Record
from signembed.text import (
    CLS_ID,
    PAD_ID,
    UNK_ID,
    Prompt,
    Vocabulary,
    build_prompt,
    build_vocab,
    clean_gloss,
    filter_known_labels,
    parse_prompt,
    tokenize,
)


def recs(texts, split="train", signed="ase"):
    return [Record(f"{split}{i}", f"{i}.pose", t, "en", signed, split) for i, t in enumerate(texts)]


def test_prompt_rendering():
    assert build_prompt("Hello, can I help you?", "en", "ase").render() == "<en> <ase> Hello, can I help you?"
    assert build_prompt("", "en", "ase").render() == "<en> <ase>"
    assert build_prompt("Fingerspell the letter A in DGS.", "en", "gsg").render() == (
        "<en> <gsg> Fingerspell the letter A in DGS."
    )
    for bad in ("EN", "e", "engl", "e1", ""):
        with pytest.raises(ValidationError):
            build_prompt("x", bad, "ase")


@given(
    spoken=st.from_regex(r"[a-z]{2,3}", fullmatch=True),
    signed=st.from_regex(r"[a-z]{2,3}", fullmatch=True),
    text=st.text(),
)
def test_prompt_parse_round_trip(spoken, signed, text):
    p = Prompt(spoken, signed, text)
    assert parse_prompt(p.render()) == p or (text == "" and parse_prompt(p.render()) == Prompt(spoken, signed, ""))


def test_vocab_examples():
    v = build_vocab(recs(["a b", "a"]), 1)
    assert "a" in v and "b" in v
    assert [v.id(t) for t in ("[PAD]", "[UNK]", "[CLS]")] == [PAD_ID, UNK_ID, CLS_ID] == [0, 1, 2]
    assert "<en>" in v and "<ase>" in v
    v3 = build_vocab(recs(["a b", "a"]), 3)
    assert v3.tokens == ["[PAD]", "[UNK]", "[CLS]", "<ase>", "<en>"]
    # ordering: frequency then lexicographic
    v = build_vocab(recs(["b c c", "a b c"]), 1)
    assert v.tokens[5:] == ["c", "b", "a"]


def test_vocab_determinism_and_json(tmp_path):
    corpus = recs(["Hello, world!", "hello there", "World peace."]) + recs(["unseen"], "test", "gsg")
    a, b = build_vocab(corpus), build_vocab(list(reversed(corpus)))
    assert a == b and a.digest() == b.digest()
    assert "unseen" not in a and "<gsg>" in a
    a.save(tmp_path / "v.json")
    assert Vocabulary.load(tmp_path / "v.json") == a
    with pytest.raises(ValidationError):
        build_vocab(recs(["x"], "test"))


def test_tokenize():
    v = build_vocab(recs(["hello world"]))
    long = build_prompt(" ".join(["hello"] * 100), "en", "ase")
    t = tokenize(long, v, 64)
    assert len(t.ids) == 64 and t.length == 64
    empty = tokenize(build_prompt("", "en", "ase"), v, 8)
    assert list(empty.ids) == [CLS_ID, v.id("<en>"), v.id("<ase>")] + [PAD_ID] * 5
    assert empty.length == 3
    unk = tokenize(build_prompt("Hello mars", "en", "ase"), v, 8)
    assert list(unk.ids[:5]) == [CLS_ID, v.id("<en>"), v.id("<ase>"), v.id("hello"), UNK_ID]
    assert tokenize(long, v, 64) == t


@given(st.text())
def test_tokenize_bounded(text):
    v = build_vocab(recs(["a"]))
    t = tokenize(Prompt("en", "ase", text), v, 16)
    assert 3 <= t.length <= 16 and t.ids.shape == (16,) and t.ids[0] == CLS_ID
    assert np.all(t.ids[t.length:] == PAD_ID)


def test_clean_gloss():
    assert clean_gloss("HOUSE2") == "house"
    assert clean_gloss("BREAK_DOWN_1") == "break down"
    assert clean_gloss("hello") == "hello"
    assert clean_gloss("a_1_2") == "a"


@given(st.text(alphabet=st.sampled_from("AbC_ -.#0123456789x")))
def test_clean_gloss_idempotent(g):
    assert clean_gloss(clean_gloss(g)) == clean_gloss(g)


def test_filter_known_labels(tmp_path):
    rs = [
        Record("1", "1.pose", "house", "en", "ase", "test", "HOUSE2"),
        Record("2", "2.pose", "zebra", "en", "ase", "test", "ZEBRA"),
        Record("3", "3.pose", "zebra", "en", "ase", "train", "ZEBRA"),
    ]
    out = filter_known_labels(DatasetManifest(rs, tmp_path), ["house"])
    assert [r.id for r in out.records] == ["1", "3"]
