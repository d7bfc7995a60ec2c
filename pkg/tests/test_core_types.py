import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vgnsl.core_types import (Caption, Corpus, FormatError, LabeledTree, Span, SpanTree, Token,
                              format_ptb, format_span_tree, parse_ptb, parse_span_tree,
                              read_captions, read_span_trees, read_treebank, spans_of,
                              write_span_trees)


def test_token_invariants():
    with pytest.raises(ValueError):
        Token("")
    with pytest.raises(ValueError):
        Token("a b")
    assert Token("dog", "NOUN").pos == "NOUN"


def test_caption_pos_all_or_nothing():
    with pytest.raises(ValueError):
        Caption((Token("a", "DET"), Token("dog")))
    with pytest.raises(ValueError):
        Caption(())


def test_span_bounds():
    with pytest.raises(ValueError):
        Span(0, 1)
    with pytest.raises(ValueError):
        Span(3, 2)
    assert len(Span(2, 4)) == 3


def test_span_tree_rejects_crossing():
    leaves = {Span(i, i) for i in range(1, 4)}
    with pytest.raises(ValueError, match="crossing"):
        SpanTree(3, leaves | {Span(1, 2), Span(2, 3), Span(1, 3)})
    with pytest.raises(ValueError, match="full span"):
        SpanTree(3, leaves | {Span(1, 2)})


class TestReadCaptions:
    def test_basic(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("a dog runs\nthe cat\n")
        corpus = read_captions(p)
        assert len(corpus) == 2
        assert corpus.captions[0].words == ("a", "dog", "runs")
        assert not corpus.captions[0].has_pos

    def test_pos_sidecar(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("a dog runs\n")
        (tmp_path / "c.pos").write_text("DET NOUN VERB\n")
        cap = read_captions(p).captions[0]
        assert cap.tags == ("DET", "NOUN", "VERB")

    def test_empty_line(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("a dog\n\nthe cat\n")
        with pytest.raises(FormatError, match="empty caption at line 2"):
            read_captions(p)

    def test_pos_length_mismatch(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("a dog runs\n")
        (tmp_path / "c.pos").write_text("DET NOUN\n")
        with pytest.raises(FormatError, match="line 1"):
            read_captions(p)

    def test_held_out_split_size(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("".join(f"a dog number{k}\n" for k in range(5000)))
        assert len(read_captions(p)) == 5000


class TestTreebank:
    def test_extracts_constituents(self):
        t = parse_ptb("(S (NP (DT a) (NN dog)) (VP (VBZ runs)))")
        phrasal = {(c.label, c.span) for c in t.constituents if not c.preterminal}
        assert phrasal == {("S", Span(1, 3)), ("NP", Span(1, 2)), ("VP", Span(3, 3))}
        pre = [(c.label, c.span) for c in t.constituents if c.preterminal]
        assert pre == [("DT", Span(1, 1)), ("NN", Span(2, 2)), ("VBZ", Span(3, 3))]
        assert t.words == ("a", "dog", "runs")

    def test_single_token(self):
        t = parse_ptb("(X (A a))")
        assert [(c.label, c.span, c.preterminal) for c in t.constituents] == [
            ("X", Span(1, 1), False), ("A", Span(1, 1), True)]

    def test_unbalanced(self):
        with pytest.raises(FormatError, match="unbalanced"):
            parse_ptb("(S (A a) (B b)")
        with pytest.raises(FormatError, match="character 9"):
            parse_ptb("(S (A a)))")

    def test_empty(self):
        with pytest.raises(FormatError, match="empty"):
            parse_ptb("   ")

    def test_unlabeled_wrapper(self):
        t = parse_ptb("( (S (A a) (B b)) )")
        assert {c.label for c in t.constituents} == {"S", "A", "B"}

    def test_file(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("(S (NP (DT a) (NN dog)) (VP (VBZ runs)))\n(X (A a))\n")
        trees = read_treebank(p)
        assert [t.n for t in trees] == [3, 1]
        p.write_text("(S (A a)\n")
        with pytest.raises(FormatError, match="line 1"):
            read_treebank(p)


@st.composite
def labeled_trees(draw, max_leaves=8):
    """Random PTB strings with arbitrary branching and unary chains."""
    counter = [0]

    def node(depth):
        if depth > 3 or draw(st.booleans()) and depth > 0:
            counter[0] += 1
            return f"(T{counter[0] % 3} w{counter[0]})"
        k = draw(st.integers(1, 3))
        kids = " ".join(node(depth + 1) for _ in range(k))
        return f"({draw(st.sampled_from(['NP', 'VP', 'PP', 'S']))} {kids})"

    return node(0)


@given(labeled_trees())
@settings(max_examples=80, deadline=None)
def test_treebank_round_trip(text):
    t = parse_ptb(text)
    again = parse_ptb(format_ptb(t))
    assert again.spans == t.spans
    assert [(c.label, c.span, c.preterminal) for c in again.constituents] == \
           [(c.label, c.span, c.preterminal) for c in t.constituents]
    assert again.words == t.words


class TestSpansOf:
    def test_n2_all_trivial(self):
        t = SpanTree(2, {Span(1, 1), Span(2, 2), Span(1, 2)})
        assert spans_of(t, include_trivial=False) == frozenset()

    def test_n4(self):
        t = SpanTree(4, {Span(i, i) for i in range(1, 5)} | {Span(1, 2), Span(3, 4), Span(1, 4)})
        assert spans_of(t, False) == {Span(1, 2), Span(3, 4)}
        assert len(spans_of(t, True)) == 7

    @given(labeled_trees())
    @settings(max_examples=50, deadline=None)
    def test_superset(self, text):
        t = parse_ptb(text)
        assert spans_of(t, True) >= spans_of(t, False)


def test_span_tree_format_round_trip(tmp_path):
    t = SpanTree(4, {Span(i, i) for i in range(1, 5)} | {Span(1, 2), Span(3, 4), Span(1, 4)})
    assert format_span_tree(t) == "((1 2) (3 4))"
    assert format_span_tree(t, "a b c d".split()) == "((a b) (c d))"
    back, leaves = parse_span_tree("((a b) (c d))")
    assert back == t and leaves == ("a", "b", "c", "d")
    one = SpanTree(1, {Span(1, 1)})
    assert format_span_tree(one, ["dog"]) == "(dog)"
    assert parse_span_tree("(dog)")[0] == one
    write_span_trees(tmp_path / "t.txt", [t, one])
    assert read_span_trees(tmp_path / "t.txt") == [t, one]


def test_corpus_length_check():
    cap = Caption.from_words(["a", "dog"])
    gold = parse_ptb("(X (A a))")
    with pytest.raises(ValueError, match="caption 0"):
        Corpus([cap], [gold])
