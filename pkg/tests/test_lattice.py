import math

import pytest

from cantoasr.lattice import (
    Arc,
    Hypothesis,
    Lattice,
    LatticeFormatError,
    best_path,
    demo_lattice_path,
    nbest,
    read_lattice,
    rescore_external,
    rescore_ngram,
    write_lattice,
)
from cantoasr.ngram import train_ngram

from oracles import enumerate_paths


def make_lattice(arcs, frames=None, start=0, finals=(1,)):
    nodes = {n for a in arcs for n in (a.src, a.dst)} | {start} | set(finals)
    node_frames = frames or {n: i for i, n in enumerate(sorted(nodes))}
    return Lattice(nodes=node_frames, start=start, finals=frozenset(finals), arcs=tuple(arcs))


@pytest.fixture()
def diamond():
    # two competing two-word paths plus a one-word shortcut
    arcs = [
        Arc(0, 1, "甲", -0.4, -0.1),
        Arc(0, 2, "乙", -0.6, -0.1),
        Arc(1, 3, "丙", -0.5, -0.1),
        Arc(2, 3, "丁", -0.6, -0.1),
        Arc(0, 3, "戊", -2.5, -0.1),
    ]
    return make_lattice(arcs, frames={0: 0, 1: 10, 2: 10, 3: 20}, finals=(3,))


def test_single_arc():
    lat = make_lattice([Arc(0, 1, "天", -1.5, -0.25)], frames={0: 0, 1: 8})
    hyp = best_path(lat, lm_weight=2.0)
    assert hyp.words == ("天",)
    assert hyp.am_total == pytest.approx(-1.5)
    assert hyp.lm_total == pytest.approx(-0.25)
    assert hyp.combined == pytest.approx(-2.0)


def test_diamond_best_path(diamond):
    hyp = best_path(diamond, lm_weight=1.0)
    oracle = enumerate_paths(diamond, 1.0)
    assert hyp.words == oracle[0][0] == ("甲", "丙")
    assert hyp.combined == pytest.approx(oracle[0][3])
    assert hyp.nodes == (0, 1, 3)


def test_nbest_matches_enumeration(diamond):
    for lm_weight in (1.0, 10.0):
        hyps = nbest(diamond, 5, lm_weight)
        oracle = enumerate_paths(diamond, lm_weight)
        assert len(hyps) == 3  # three distinct word sequences
        assert [h.words for h in hyps] == [o[0] for o in oracle]
        for h, o in zip(hyps, oracle):
            assert h.combined == pytest.approx(o[3], abs=1e-9)


def test_nbest_prefix_is_best_path(diamond):
    assert nbest(diamond, 1)[0] == best_path(diamond)


def test_nbest_default_is_200():
    import inspect

    sig = inspect.signature(nbest)
    assert sig.parameters["n"].default == 200


def test_combined_monotone_in_lm_weight(diamond):
    # the top path also has the best lm_total here, so raising lm_weight
    # cannot hurt its combined score
    scores = [best_path(diamond, w).combined for w in (1.0, 2.0, 5.0, 10.0)]
    assert scores == sorted(scores, reverse=True)


def test_demo_lattice_best_path():
    lat = read_lattice(demo_lattice_path())
    hyp = best_path(lat, lm_weight=1.0)
    assert hyp.text == "合共九千九百萬元"
    assert "-".join(str(n) for n in hyp.nodes) == "0-1-13-14-5-6-7-11-12"


def test_lattice_round_trip(tmp_path, diamond):
    p = tmp_path / "d.lat"
    write_lattice(diamond, p)
    back = read_lattice(p)
    assert back.nodes == diamond.nodes
    assert back.start == diamond.start and back.finals == diamond.finals
    assert back.arcs == diamond.arcs
    write_lattice(back, tmp_path / "d2.lat")
    assert (tmp_path / "d.lat").read_bytes() == (tmp_path / "d2.lat").read_bytes()


def test_lattice_undeclared_node(tmp_path):
    p = tmp_path / "bad.lat"
    p.write_text(
        "LATTICE v1\nnode 0 0\nnode 1 5\nstart 0\nfinal 1\n"
        "arc 0 9 天 -1.000000 -0.100000\n",
        encoding="utf-8",
    )
    with pytest.raises(LatticeFormatError, match="undeclared"):
        read_lattice(p)


def test_lattice_rejects_cycles():
    with pytest.raises(LatticeFormatError, match="cycle"):
        make_lattice(
            [Arc(0, 2, "a", 0, 0), Arc(2, 3, "b", 0, 0), Arc(3, 2, "c", 0, 0),
             Arc(3, 1, "d", 0, 0)],
            frames={0: 0, 1: 3, 2: 1, 3: 2},
        )


def test_lattice_rejects_unreachable():
    with pytest.raises(LatticeFormatError, match="unreachable"):
        make_lattice(
            [Arc(0, 1, "a", 0, 0), Arc(2, 1, "b", 0, 0)],
            frames={0: 0, 1: 5, 2: 3},
        )


def test_rescore_same_model_keeps_best_path():
    lm = train_ngram([list("天氣好"), list("天氣熱")], order=2)
    ln10 = math.log(10.0)

    def arc_lm(word, prev):
        total, h = 0.0, prev
        for ch in word:
            total += ln10 * lm.logprob10(ch, (h,))
            h = ch
        return total

    arcs = [
        Arc(0, 1, "天氣", -1.0, arc_lm("天氣", "<s>")),
        Arc(1, 2, "好", -1.0, arc_lm("好", "氣")),
        Arc(1, 2, "熱", -1.2, arc_lm("熱", "氣")),
    ]
    lat = make_lattice(arcs, frames={0: 0, 1: 10, 2: 20}, finals=(2,))
    before = best_path(lat, 10.0)
    after = best_path(rescore_ngram(lat, lm), 10.0)
    assert after.words == before.words
    assert after.combined == pytest.approx(before.combined, abs=1e-9)


@pytest.fixture()
def milk_lattice():
    # 奶有乳糖 vs 奶有魚塘 with equal acoustics: the LM decides
    arcs = [
        Arc(0, 1, "奶", -1.0, -0.5),
        Arc(1, 2, "有", -1.0, -0.5),
        Arc(2, 3, "乳糖", -2.0, -3.2),
        Arc(2, 3, "魚塘", -2.0, -2.1),
    ]
    return make_lattice(arcs, frames={0: 0, 1: 8, 2: 16, 3: 30}, finals=(3,))


def milk_corpus():
    # fishpond is frequent in broad contexts; lactose is rarer but always
    # follows the long-context milk cue
    corpus = []
    corpus += [list("山邊魚塘")] * 30
    corpus += [list("有魚塘水")] * 10
    corpus += [list("奶有乳糖")] * 4
    corpus += [list("日日有奶")] * 6
    return corpus


def test_rescore_flip_with_long_context(milk_lattice):
    corpus = milk_corpus()
    lm2 = train_ngram(corpus, order=2)
    lm4 = train_ngram(corpus, order=4)
    # decode-time bigram prefers the frequent fishpond reading
    assert lm2.prob("魚", ("有",)) > lm2.prob("乳", ("有",))
    before = best_path(milk_lattice, 10.0)
    assert before.text == "奶有魚塘"
    after = best_path(rescore_ngram(milk_lattice, lm4), 10.0)
    assert after.text == "奶有乳糖"


def test_rescore_preserves_sequences_and_am(milk_lattice):
    lm4 = train_ngram(milk_corpus(), order=4)
    rescored = rescore_ngram(milk_lattice, lm4)
    assert rescored.word_sequences() == milk_lattice.word_sequences()
    assert len(rescored.nodes) >= len(milk_lattice.nodes)
    for lat in (milk_lattice, rescored):
        for words, am, lm, _, _ in enumerate_paths(lat, 1.0):
            match = [
                o for o in enumerate_paths(milk_lattice, 1.0) if o[0] == words
            ]
            assert match and am == pytest.approx(match[0][1], abs=1e-9)


def test_rescore_external_orderings(diamond):
    hyps = nbest(diamond, 3, lm_weight=1.0)
    scores = {h.words: -1.0 for h in hyps}
    # interpolation 1.0 keeps the original order
    same = rescore_external(hyps, scores, 1.0)
    assert [h.words for h in same] == [h.words for h in hyps]
    # interpolation 0.0 with a dominant external score flips the ranking
    scores[hyps[1].words] = 50.0
    flipped = rescore_external(hyps, scores, 0.0)
    assert flipped[0].words == hyps[1].words


def test_rescore_external_hand_arithmetic():
    hyps = [
        Hypothesis(("a",), -1.0, -1.0, lm_weight=2.0),
        Hypothesis(("b",), -1.5, -0.5, lm_weight=2.0),
        Hypothesis(("c",), -2.0, -0.2, lm_weight=2.0),
    ]
    scores = {("a",): -2.0, ("b",): -0.1, ("c",): -0.3}
    out = rescore_external(hyps, scores, 0.25)
    expected = sorted(
        hyps,
        key=lambda h: -(
            h.am_total + 2.0 * (0.25 * h.lm_total + 0.75 * scores[h.words])
        ),
    )
    assert [h.words for h in out] == [h.words for h in expected]
    for h in out:
        assert h.lm_total == pytest.approx(
            0.25 * dict((x.words, x.lm_total) for x in hyps)[h.words]
            + 0.75 * scores[h.words]
        )


def test_rescore_external_missing_scores(diamond):
    hyps = nbest(diamond, 3, lm_weight=1.0)
    with pytest.raises(KeyError, match="甲丙"):
        rescore_external(hyps, {}, 0.5)
