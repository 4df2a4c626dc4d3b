import pytest

from cantoasr.lexicon import (
    LexiconEntry,
    LexiconError,
    compile_lexicon,
    demo_lexicon_path,
    homophone_groups,
    lexicon_stats,
    read_lexicon,
    read_phone_lexicon,
    write_phone_lexicon,
)
from cantoasr.phonology import MergeRuleSet, default_inventory


@pytest.fixture(scope="module")
def inv():
    return default_inventory()


@pytest.fixture(scope="module")
def demo_entries():
    return read_lexicon(demo_lexicon_path())


def entry(word, *prons):
    return LexiconEntry(word, tuple(tuple(p.split()) for p in prons))


def test_compile_onc(inv):
    lex = compile_lexicon([entry("令狐", "ling4 wu4")], "onc", inv)
    (pron,) = lex.entries["令狐"]
    assert [p.label for p in pron] == ["l", "i4", "_ng4", "w", "u4"]


def test_compile_if(inv):
    lex = compile_lexicon([entry("令狐", "ling4 wu4")], "if", inv)
    (pron,) = lex.entries["令狐"]
    assert [p.label for p in pron] == ["l", "ing4", "w", "u4"]


def test_compile_empty(inv):
    lex = compile_lexicon([], "onc", inv)
    assert lex.entries == {} and not lex.phone_set


def test_compile_bad_syllable(inv):
    with pytest.raises(LexiconError, match="zzz9"):
        compile_lexicon([entry("壞", "zzz9")], "onc", inv)


def test_entry_length_mismatch():
    with pytest.raises(LexiconError, match="syllables"):
        entry("令狐", "ling4")


def test_stats(inv):
    lex = compile_lexicon([entry("天", "tin1")], "if", inv)
    st = lexicon_stats(lex)
    assert (st.entries, st.variants) == (1, 0)

    lex = compile_lexicon([entry("天", "tin1", "tin2", "tin4")], "if", inv)
    st = lexicon_stats(lex)
    assert (st.entries, st.variants) == (1, 2)
    assert str(st).startswith("entries=1 variants=2")


def test_merge_collision(inv):
    # coda merge makes 八 and 百 compile to identical sequences
    rules = MergeRuleSet.parse("t>k@aa,a,o")
    for scheme in ("if", "onc"):
        lex = compile_lexicon(
            [entry("八", "baat3"), entry("百", "baak3")], scheme, inv, merges=rules
        )
        assert lex.entries["八"] == lex.entries["百"]


def test_merge_keeps_onc_structure(inv):
    rules = MergeRuleSet.parse("t>k@aa,a,o")
    lex = compile_lexicon(
        [entry("逼", "bik1"), entry("百", "baak3")], "onc", inv, merges=rules
    )
    (bik,) = lex.entries["逼"]
    (baak,) = lex.entries["百"]
    # the coda base symbol is shared across the ik / aak contexts
    assert bik[-1].kind == "coda" and baak[-1].kind == "coda"
    assert bik[-1].base == baak[-1].base == "k"
    # while the nucleus stays its own unit, distinct from any coda label
    assert bik[1].kind == "nucleus" and bik[1].base == "i"


def test_write_read_round_trip(tmp_path, inv):
    lex = compile_lexicon(
        [entry("令狐", "ling4 wu4"), entry("生", "sang1", "saang1")], "onc", inv
    )
    write_phone_lexicon(lex, tmp_path)
    text = (tmp_path / "lexicon.txt").read_text(encoding="utf-8")
    assert "令狐\tl i4 _ng4 w u4" in text.splitlines()
    back = read_phone_lexicon(tmp_path, "onc")
    assert {w: set(p) for w, p in back.entries.items()} == {
        w: set(p) for w, p in lex.entries.items()
    }


def test_write_deterministic(tmp_path, inv, demo_entries):
    lex = compile_lexicon(demo_entries, "onc", inv)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    write_phone_lexicon(lex, d1)
    write_phone_lexicon(lex, d2)
    for name in ("lexicon.txt", "phones.txt"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_two_pronunciations_two_lines(tmp_path, inv):
    lex = compile_lexicon([entry("生", "sang1", "saang1")], "if", inv)
    write_phone_lexicon(lex, tmp_path)
    lines = (tmp_path / "lexicon.txt").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2 and all(l.startswith("生\t") for l in lines)


def test_demo_lexicon_clean(inv, demo_entries):
    assert len(demo_entries) >= 200
    assert homophone_groups(demo_entries) == {}


def test_onc_alphabet_smaller_on_demo(inv, demo_entries):
    lex_if = compile_lexicon(demo_entries, "if", inv)
    lex_onc = compile_lexicon(demo_entries, "onc", inv)
    # enough coverage for the base-alphabet saving to show up
    finals = {p.base for p in lex_if.phone_set if p.kind == "final"}
    final_tones = {(p.base, p.tone) for p in lex_if.phone_set if p.kind == "final"}
    assert len(final_tones) >= 25 and len(finals) >= 10
    assert len(lex_onc.labels) <= len(lex_if.labels)
