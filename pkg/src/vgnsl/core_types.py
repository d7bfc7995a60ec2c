"""Tokens, spans, trees and corpora, plus reading them from disk.

All span indices are 1-based and inclusive.  File formats use token offsets,
never character offsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence


class FormatError(ValueError):
    """Raised on malformed caption, POS, treebank or tree files."""


@dataclass(frozen=True)
class Token:
    surface: str
    pos: Optional[str] = None

    def __post_init__(self):
        if not self.surface:
            raise ValueError("token surface must be non-empty")
        if any(c.isspace() for c in self.surface):
            raise ValueError(f"token surface contains whitespace: {self.surface!r}")


@dataclass(frozen=True)
class Caption:
    tokens: tuple

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValueError("caption must have at least one token")
        tagged = [t.pos is not None for t in self.tokens]
        if any(tagged) and not all(tagged):
            raise ValueError("either every token carries a POS tag or none does")

    @classmethod
    def from_words(cls, words: Sequence[str], tags: Optional[Sequence[str]] = None) -> "Caption":
        if tags is not None and len(tags) != len(words):
            raise ValueError(f"{len(words)} words but {len(tags)} tags")
        if tags is None:
            return cls(tuple(Token(w) for w in words))
        return cls(tuple(Token(w, p) for w, p in zip(words, tags)))

    def __len__(self):
        return len(self.tokens)

    @property
    def words(self) -> tuple:
        return tuple(t.surface for t in self.tokens)

    @property
    def tags(self) -> Optional[tuple]:
        if self.tokens[0].pos is None:
            return None
        return tuple(t.pos for t in self.tokens)

    @property
    def has_pos(self) -> bool:
        return self.tokens[0].pos is not None

    def __str__(self):
        return " ".join(self.words)


@dataclass(frozen=True, order=True)
class Span:
    i: int
    j: int

    def __post_init__(self):
        if not 1 <= self.i <= self.j:
            raise ValueError(f"invalid span [{self.i},{self.j}]")

    def __len__(self):
        return self.j - self.i + 1

    def __iter__(self):
        yield self.i
        yield self.j

    def crosses(self, other: "Span") -> bool:
        return (self.i < other.i <= self.j < other.j) or (other.i < self.i <= other.j < self.j)

    def __repr__(self):
        return f"[{self.i},{self.j}]"


def _check_non_crossing(spans: Iterable[Span]) -> None:
    # After sorting by (start, -end) a non-crossing set behaves like nested
    # parentheses, so a stack of open spans is enough.
    stack: list = []
    for s in sorted(spans, key=lambda s: (s.i, -s.j)):
        while stack and stack[-1].j < s.i:
            stack.pop()
        if stack and s.j > stack[-1].j:
            raise ValueError(f"crossing spans {stack[-1]!r} and {s!r}")
        stack.append(s)


@dataclass(frozen=True)
class SpanTree:
    """Unlabeled constituent set over a sentence of length ``n``."""

    n: int
    spans: frozenset

    def __post_init__(self):
        object.__setattr__(self, "spans", frozenset(self.spans))
        if self.n < 1:
            raise ValueError("tree length must be >= 1")
        for s in self.spans:
            if s.j > self.n:
                raise ValueError(f"span {s!r} exceeds sentence length {self.n}")
        missing = [i for i in range(1, self.n + 1) if Span(i, i) not in self.spans]
        if missing:
            raise ValueError(f"tree is missing single-token spans at {missing}")
        if Span(1, self.n) not in self.spans:
            raise ValueError("tree is missing the full span")
        _check_non_crossing(self.spans)

    @property
    def is_binary(self) -> bool:
        return len(self.spans) == 2 * self.n - 1

    def __len__(self):
        return len(self.spans)


@dataclass(frozen=True)
class LabeledConstituent:
    span: Span
    label: str
    preterminal: bool = False

    def __post_init__(self):
        if not self.label:
            raise ValueError("constituent label must be non-empty")


@dataclass(frozen=True)
class LabeledTree:
    """Gold tree.  ``constituents`` are kept in preorder so the tree can be
    written back out; ``words`` holds the leaves when known."""

    n: int
    constituents: tuple
    words: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "constituents", tuple(self.constituents))
        if self.words is not None:
            object.__setattr__(self, "words", tuple(self.words))
            if len(self.words) != self.n:
                raise ValueError(f"tree has {len(self.words)} words but n={self.n}")
        for c in self.constituents:
            if c.span.j > self.n:
                raise ValueError(f"constituent {c!r} exceeds sentence length {self.n}")
        _check_non_crossing({c.span for c in self.constituents})

    @property
    def spans(self) -> frozenset:
        """Spans of all non-preterminal constituents (duplicates from unary
        chains collapse)."""
        return frozenset(c.span for c in self.constituents if not c.preterminal)

    @property
    def tags(self) -> Optional[tuple]:
        pre = {c.span.i: c.label for c in self.constituents if c.preterminal}
        if len(pre) != self.n:
            return None
        return tuple(pre[i] for i in range(1, self.n + 1))


@dataclass
class Corpus:
    captions: list
    gold: Optional[list] = None

    def __post_init__(self):
        if self.gold is not None:
            if len(self.gold) != len(self.captions):
                raise ValueError(
                    f"{len(self.captions)} captions but {len(self.gold)} gold trees")
            for k, (c, g) in enumerate(zip(self.captions, self.gold)):
                if len(c) != g.n:
                    raise ValueError(
                        f"caption {k} has {len(c)} tokens but its gold tree has {g.n}")

    def __len__(self):
        return len(self.captions)

    def __iter__(self) -> Iterator[Caption]:
        return iter(self.captions)

    def vocabulary(self) -> list:
        """Token surfaces in first-occurrence order."""
        seen = {}
        for cap in self.captions:
            for w in cap.words:
                seen.setdefault(w, None)
        return list(seen)

    def majority_pos(self) -> dict:
        """Most frequent POS tag per surface (ties resolved by first seen)."""
        counts: dict = {}
        for cap in self.captions:
            if not cap.has_pos:
                continue
            for t in cap.tokens:
                c = counts.setdefault(t.surface, {})
                c[t.pos] = c.get(t.pos, 0) + 1
        return {w: max(c, key=c.get) for w, c in counts.items()}


def spans_of(tree, include_trivial: bool = False) -> frozenset:
    """Return the span set of ``tree`` (a SpanTree or LabeledTree).

    With ``include_trivial=False`` the single-token spans and the full
    sentence span are dropped.
    """
    spans = tree.spans
    if include_trivial:
        return frozenset(spans)
    full = Span(1, tree.n)
    return frozenset(s for s in spans if s.i != s.j and s != full)


# ---------------------------------------------------------------------------
# Bracket reading


def _tokenize_brackets(text: str):
    """Yield ``(kind, value, offset)`` with kind in '(', ')', 'atom'."""
    k = 0
    n = len(text)
    while k < n:
        c = text[k]
        if c.isspace():
            k += 1
        elif c in "()":
            yield c, c, k
            k += 1
        else:
            start = k
            while k < n and not text[k].isspace() and text[k] not in "()":
                k += 1
            yield "atom", text[start:k], start


def _read_nested(text: str):
    """Parse one bracketed expression into nested lists of atoms."""
    stack: list = [[]]
    opened: list = []
    for kind, value, off in _tokenize_brackets(text):
        if kind == "(":
            stack.append([])
            opened.append(off)
        elif kind == ")":
            if len(stack) == 1:
                raise FormatError(f"unbalanced ')' at character {off}")
            node = stack.pop()
            opened.pop()
            stack[-1].append(node)
        else:
            stack[-1].append(value)
    if len(stack) != 1:
        raise FormatError(f"unbalanced '(' opened at character {opened[-1]}")
    top = stack[0]
    if not top:
        raise FormatError("empty tree")
    if len(top) != 1:
        raise FormatError("expected exactly one tree per line")
    return top[0]


def parse_ptb(text: str) -> LabeledTree:
    """Parse a PTB bracketed tree such as ``(S (NP (DT a) (NN dog)) (VP (VBZ runs)))``.

    An unlabeled outer wrapper ``( (S ...) )`` is dropped.
    """
    node = _read_nested(text)
    if isinstance(node, str):
        raise FormatError("tree must be bracketed")
    constituents: list = []
    words: list = []

    def visit(nd) -> Span:
        if not nd:
            raise FormatError("empty bracket")
        if isinstance(nd[0], str):
            label, children = nd[0], nd[1:]
        else:
            label, children = "", nd
        if not children:
            raise FormatError(f"bracket {label!r} has no children")
        if len(children) == 1 and isinstance(children[0], str):
            words.append(children[0])
            span = Span(len(words), len(words))
            if not label:
                raise FormatError("preterminal without a label")
            constituents.append(LabeledConstituent(span, label, preterminal=True))
            return span
        if any(isinstance(ch, str) for ch in children):
            raise FormatError(f"bracket {label!r} mixes words and subtrees")
        slot = len(constituents)
        if label:
            constituents.append(None)
        first = last = None
        for ch in children:
            s = visit(ch)
            first = s if first is None else first
            last = s
        span = Span(first.i, last.j)
        if label:
            constituents[slot] = LabeledConstituent(span, label)
        return span

    visit(node)
    return LabeledTree(len(words), tuple(constituents), tuple(words))


def format_ptb(tree: LabeledTree) -> str:
    """Write a LabeledTree back out as a one-line bracketed string."""
    words = tree.words or tuple(f"w{k}" for k in range(1, tree.n + 1))
    order = sorted(range(len(tree.constituents)),
                   key=lambda k: (tree.constituents[k].span.i, -tree.constituents[k].span.j, k))
    pieces: list = []
    stack: list = []  # open constituents

    def close_until(pos: int):
        while stack and stack[-1].span.j < pos:
            stack.pop()
            pieces.append(")")

    nxt = 1
    for k in order:
        c = tree.constituents[k]
        close_until(c.span.i)
        while nxt < c.span.i:  # uncovered words (not expected in well-formed trees)
            pieces.append(" " + words[nxt - 1])
            nxt += 1
        pieces.append(f" ({c.label}")
        stack.append(c)
        if c.preterminal:
            pieces.append(" " + words[c.span.i - 1] + ")")
            stack.pop()
            nxt = c.span.i + 1
    close_until(tree.n + 1)
    return "".join(pieces).strip()


def parse_span_tree(text: str):
    """Parse an unlabeled bracketing such as ``((a dog) runs)``.

    Returns ``(SpanTree, leaves)``.  A bare single atom is a one-token tree.
    """
    node = _read_nested(text)
    leaves: list = []
    spans: set = set()

    def visit(nd) -> Span:
        if isinstance(nd, str):
            leaves.append(nd)
            s = Span(len(leaves), len(leaves))
        else:
            if not nd:
                raise FormatError("empty bracket")
            parts = [visit(ch) for ch in nd]
            s = Span(parts[0].i, parts[-1].j)
        spans.add(s)
        return s

    visit(node)
    return SpanTree(len(leaves), frozenset(spans)), tuple(leaves)


def format_span_tree(tree: SpanTree, words: Optional[Sequence[str]] = None) -> str:
    """Bracket a SpanTree over ``words`` (or 1-based indices when omitted)."""
    leaves = [str(k) for k in range(1, tree.n + 1)] if words is None else list(words)
    if len(leaves) != tree.n:
        raise ValueError(f"{len(leaves)} words for a tree of length {tree.n}")
    children: dict = {}
    ordered = sorted(tree.spans, key=lambda s: (s.i, -s.j))
    stack: list = []
    for s in ordered:
        while stack and stack[-1].j < s.i:
            stack.pop()
        if stack:
            children.setdefault(stack[-1], []).append(s)
        stack.append(s)

    def render(s: Span, top: bool) -> str:
        kids = children.get(s)
        if not kids:
            if s.i == s.j:
                return f"({leaves[s.i - 1]})" if top else leaves[s.i - 1]
            kids = []
        out = []
        pos = s.i
        for ch in kids:
            while pos < ch.i:  # words not covered by a child (non-binary trees)
                out.append(leaves[pos - 1])
                pos += 1
            out.append(render(ch, False))
            pos = ch.j + 1
        while pos <= s.j:
            out.append(leaves[pos - 1])
            pos += 1
        return "(" + " ".join(out) + ")"

    return render(Span(1, tree.n), True)


# ---------------------------------------------------------------------------
# File ingestion


def pos_sidecar(path) -> Path:
    """The POS file belonging to a caption file: ``x.txt`` -> ``x.pos``."""
    path = Path(path)
    return path.with_suffix(".pos") if path.suffix else Path(str(path) + ".pos")


def _lines(path) -> list:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n").rstrip("\r") for line in f]


def read_captions(path, pos_path=None) -> Corpus:
    """Read one whitespace-tokenized caption per line.

    POS tags are attached when ``pos_path`` is given or the sidecar next to
    ``path`` exists.
    """
    lines = _lines(path)
    if pos_path is None:
        cand = pos_sidecar(path)
        pos_path = cand if cand.exists() and cand != Path(path) else None
    tag_lines = _lines(pos_path) if pos_path is not None else None
    if tag_lines is not None and len(tag_lines) != len(lines):
        raise FormatError(
            f"{pos_path}: {len(tag_lines)} POS lines for {len(lines)} captions")
    captions = []
    for k, line in enumerate(lines, start=1):
        words = line.split()
        if not words:
            raise FormatError(f"empty caption at line {k}")
        tags = None
        if tag_lines is not None:
            tags = tag_lines[k - 1].split()
            if len(tags) != len(words):
                raise FormatError(
                    f"POS length mismatch at line {k}: {len(words)} tokens, {len(tags)} tags")
        captions.append(Caption.from_words(words, tags))
    return Corpus(captions)


def read_treebank(path) -> list:
    trees = []
    for k, line in enumerate(_lines(path), start=1):
        if not line.strip():
            raise FormatError(f"{path}: empty tree at line {k}")
        try:
            trees.append(parse_ptb(line))
        except FormatError as e:
            raise FormatError(f"{path}: line {k}: {e}") from None
    return trees


def write_treebank(path, trees: Iterable[LabeledTree]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in trees:
            f.write(format_ptb(t) + "\n")


def read_span_trees(path) -> list:
    """Read a parser output file (one unlabeled bracketing per line)."""
    trees = []
    for k, line in enumerate(_lines(path), start=1):
        try:
            trees.append(parse_span_tree(line)[0])
        except (FormatError, ValueError) as e:
            raise FormatError(f"{path}: line {k}: {e}") from None
    return trees


def write_span_trees(path, trees: Sequence[SpanTree], captions: Optional[Sequence[Caption]] = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for k, t in enumerate(trees):
            words = None if captions is None else captions[k].words
            f.write(format_span_tree(t, words) + "\n")


def write_captions(path, captions: Sequence[Caption], with_pos: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for c in captions:
            f.write(" ".join(c.words) + "\n")
    if with_pos and captions and captions[0].has_pos:
        with open(pos_sidecar(path), "w", encoding="utf-8") as f:
            for c in captions:
                f.write(" ".join(c.tags) + "\n")
