"""Greedy bottom-up span merging and its stochastic (sampling) counterpart."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core_types import Caption, Corpus, Span, SpanTree
from .scoring import DegenerateCombineError


class ParseError(RuntimeError):
    pass


@dataclass(frozen=True)
class Decision:
    """One merge.  ``candidates`` is the candidate list C before the merge;
    pair ``k`` joins ``candidates[k]`` and ``candidates[k + 1]``."""

    chosen: int
    scores: tuple
    prob: float
    candidates: tuple

    @property
    def left(self) -> Span:
        return self.candidates[self.chosen]

    @property
    def right(self) -> Span:
        return self.candidates[self.chosen + 1]

    @property
    def merged(self) -> Span:
        return Span(self.left.i, self.right.j)


@dataclass(frozen=True)
class ParseTrace:
    decisions: tuple = ()

    @property
    def probability(self) -> float:
        return float(np.prod([d.prob for d in self.decisions])) if self.decisions else 1.0

    @property
    def log_probability(self) -> float:
        return float(np.sum(np.log([d.prob for d in self.decisions]))) if self.decisions else 0.0

    def __len__(self):
        return len(self.decisions)


@dataclass
class ParseState:
    """Candidate list C (ordered, partitioning [1, n]) and constituents T."""

    candidates: list
    embeddings: list
    constituents: set
    pair_scores: list = field(default_factory=list)


def softmax(scores: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(scores, dtype=float) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _init_state(model, caption: Caption) -> ParseState:
    n = len(caption)
    if n < 1:
        raise ParseError("cannot parse an empty caption")
    leaves = model.decision_embeddings(caption.words)
    cands = [Span(i, i) for i in range(1, n + 1)]
    state = ParseState(cands, [leaves[k] for k in range(n)], set(cands))
    state.pair_scores = [model.score_pair(state.embeddings[k], state.embeddings[k + 1])
                         for k in range(n - 1)]
    return state


def _merge(model, state: ParseState, k: int) -> Span:
    left, right = state.candidates[k], state.candidates[k + 1]
    merged = Span(left.i, right.j)
    try:
        emb = model.combine(state.embeddings[k], state.embeddings[k + 1])
    except DegenerateCombineError as e:
        raise DegenerateCombineError(f"merging {left!r} and {right!r} into {merged!r}: {e}") from None
    state.candidates[k:k + 2] = [merged]
    state.embeddings[k:k + 2] = [emb]
    state.constituents.add(merged)
    # Only the pairs touching the new span change.
    sc = state.pair_scores
    new = []
    if k > 0:
        new.append(model.score_pair(state.embeddings[k - 1], emb))
    if k < len(state.candidates) - 1:
        new.append(model.score_pair(emb, state.embeddings[k + 1]))
    lo = max(k - 1, 0)
    sc[lo:k + 2] = new
    return merged


def parse_greedy(model, caption: Caption):
    """Repeatedly merge the best-scoring adjacent pair; ties go leftmost.

    Returns ``(SpanTree, ParseTrace)``.
    """
    state = _init_state(model, caption)
    decisions = []
    while len(state.candidates) > 1:
        scores = tuple(state.pair_scores)
        k = int(np.argmax(scores))  # first maximum: leftmost tie-break
        decisions.append(Decision(k, scores, 1.0, tuple(state.candidates)))
        _merge(model, state, k)
    return SpanTree(len(caption), frozenset(state.constituents)), ParseTrace(tuple(decisions))


def _as_rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def parse_stochastic(model, caption: Caption, temperature: float = 1.0, rng_seed=None):
    """Sample merges from softmax(scores / temperature).

    ``rng_seed`` may be an integer seed or a ``numpy.random.Generator``.
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    rng = _as_rng(rng_seed)
    state = _init_state(model, caption)
    decisions = []
    while len(state.candidates) > 1:
        scores = tuple(state.pair_scores)
        probs = softmax(np.array(scores), temperature)
        u = rng.random()
        k = int(np.searchsorted(np.cumsum(probs), u, side="right"))
        k = min(k, len(probs) - 1)
        while probs[k] == 0.0:  # rounding in the cumulative sum can land on a zero bin
            k -= 1
        decisions.append(Decision(k, scores, float(probs[k]), tuple(state.candidates)))
        _merge(model, state, k)
    return SpanTree(len(caption), frozenset(state.constituents)), ParseTrace(tuple(decisions))


@dataclass
class CorpusParse:
    trees: list
    errors: list  # (caption index, message)

    @property
    def ok(self) -> bool:
        return not self.errors


def _parse_chunk(args):
    model, captions, mode, temperature, seeds = args
    out = []
    for cap, seed in zip(captions, seeds):
        try:
            if mode == "greedy":
                tree, _ = parse_greedy(model, cap)
            else:
                tree, _ = parse_stochastic(model, cap, temperature, seed)
            out.append((tree, None))
        except (ArithmeticError, ValueError, KeyError, ParseError) as e:
            out.append((None, f"{type(e).__name__}: {e}"))
    return out


def parse_corpus(model, corpus, mode: str = "greedy", temperature: float = 1.0,
                 seed: int = 0, workers: int = 1) -> CorpusParse:
    """Parse every caption, in order.  Failures are collected with their
    caption index rather than raised.

    Stochastic mode derives one independent seed per caption from ``seed``, so
    the output does not depend on ``workers``.
    """
    captions = list(corpus.captions if isinstance(corpus, Corpus) else corpus)
    if not captions:
        raise ValueError("corpus is empty")
    if mode not in ("greedy", "stochastic"):
        raise ValueError(f"unknown parse mode {mode!r}")
    seeds = [None] * len(captions)
    if mode == "stochastic":
        seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(len(captions))]
    if workers <= 1:
        results = _parse_chunk((model, captions, mode, temperature, seeds))
    else:
        size = max(1, -(-len(captions) // workers))
        chunks = [(model, captions[a:a + size], mode, temperature, seeds[a:a + size])
                  for a in range(0, len(captions), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [r for part in pool.map(_parse_chunk, chunks) for r in part]
    trees, errors = [], []
    for k, (tree, err) in enumerate(results):
        trees.append(tree)
        if err is not None:
            errors.append((k, err))
    return CorpusParse(trees, errors)
