"""Probes of what low-dimensional parsers learn: concreteness rankings,
correlation with norms, noun replacement, and embedding exports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .core_types import Caption, Corpus, Token
from .metrics import UndefinedCorrelation, corpus_f1, pearson
from .parser import parse_corpus

NOUN_TAGS = frozenset({"NOUN", "PROPN"})


class AnalysisError(ValueError):
    pass


def token_values(model, vocab: Sequence[str]) -> np.ndarray:
    """Reduced embedding of every token, shape (|vocab|, d)."""
    if model.bottleneck is None:
        raise AnalysisError("model has no low-dimensional bottleneck")
    return model.decision_embeddings(list(vocab))


def choose_orientation(values: np.ndarray, vocab: Sequence[str], norms: Optional[dict] = None,
                       pos: Optional[dict] = None) -> int:
    """Sign that makes a 1-d axis point towards concreteness.

    With norms, the sign giving non-negative Pearson r over shared tokens;
    otherwise the sign giving nouns the larger mean value; otherwise +1.
    """
    if norms:
        shared = [k for k, w in enumerate(vocab) if w in norms]
        if len(shared) >= 2:
            try:
                r = pearson(values[shared], [norms[vocab[k]] for k in shared])
                return 1 if r >= 0 else -1
            except UndefinedCorrelation:
                pass
    if pos:
        nouns = [k for k, w in enumerate(vocab) if pos.get(w) in NOUN_TAGS]
        if nouns:
            return 1 if values[nouns].mean() >= 0 else -1
    return 1


def _principal_axis(values: np.ndarray) -> np.ndarray:
    """Project 2-d values onto their first principal direction."""
    centered = values - values.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return values @ vt[0]


@dataclass(frozen=True)
class ConcretenessRanking:
    """Mean rank (1 = least concrete) of every token across models.
    ``orientation`` holds the sign applied to each model's raw values."""

    tokens: tuple
    mean_rank: np.ndarray
    orientation: tuple
    oriented: np.ndarray  # (n_models, |V|)

    def as_dict(self) -> dict:
        return dict(zip(self.tokens, self.mean_rank.tolist()))

    def most_concrete(self, among: Optional[set] = None) -> str:
        order = np.argsort(-self.mean_rank, kind="stable")
        for k in order:
            if among is None or self.tokens[k] in among:
                return self.tokens[k]
        raise AnalysisError("no candidate token for replacement")


def _oriented_1d(model, vocab, norms, pos, allow_2d=False):
    vals = token_values(model, vocab)
    if vals.shape[1] == 1:
        axis = vals[:, 0]
    elif allow_2d:
        axis = _principal_axis(vals)
    else:
        raise AnalysisError(f"concreteness ranking needs d=1 models, got d={vals.shape[1]}")
    sign = choose_orientation(axis, vocab, norms, pos)
    return vals, sign, sign * axis


def rank_concreteness(models: Sequence, vocab: Sequence[str], norms: Optional[dict] = None,
                      pos: Optional[dict] = None, allow_2d: bool = False) -> ConcretenessRanking:
    """Rank tokens by oriented d=1 value in each model (ties share the
    average rank) and average the ranks across models."""
    vocab = list(vocab)
    if not models:
        raise AnalysisError("no models given")
    if not vocab:
        raise AnalysisError("empty vocabulary")
    signs, oriented = [], []
    for m in models:
        _, sign, axis = _oriented_1d(m, vocab, norms, pos, allow_2d)
        signs.append(sign)
        oriented.append(axis)
    oriented = np.array(oriented)
    ranks = np.array([rankdata(o) for o in oriented])
    return ConcretenessRanking(tuple(vocab), ranks.mean(axis=0), tuple(signs), oriented)


@dataclass(frozen=True)
class Correlation:
    r: float
    overlap: int


def correlate_concreteness(values, norms: dict) -> Correlation:
    """Pearson r between model concreteness and norms over shared tokens.

    ``values`` is a ConcretenessRanking (mean ranks are used) or a mapping
    token -> value.
    """
    if isinstance(values, ConcretenessRanking):
        values = values.as_dict()
    shared = [w for w in values if w in norms]
    if len(shared) < 2:
        raise AnalysisError(f"need at least 2 tokens shared with the norms, found {len(shared)}")
    try:
        r = pearson([values[w] for w in shared], [norms[w] for w in shared])
    except UndefinedCorrelation as e:
        raise AnalysisError(str(e)) from None
    return Correlation(r, len(shared))


def oriented_values(model, vocab: Sequence[str], norms=None, pos=None) -> dict:
    _, _, axis = _oriented_1d(model, list(vocab), norms, pos)
    return dict(zip(vocab, axis.tolist()))


def replace_nouns(corpus: Corpus, replacement: str, noun_tags=NOUN_TAGS) -> Corpus:
    """Swap every noun for ``replacement``, keeping tags and length."""
    out = []
    for k, cap in enumerate(corpus.captions):
        if not cap.has_pos:
            raise AnalysisError(f"caption {k} has no POS tags")
        out.append(Caption(tuple(Token(replacement, t.pos) if t.pos in noun_tags else t
                                 for t in cap.tokens)))
    return Corpus(out, corpus.gold)


@dataclass
class ReplacementReport:
    replacement: str
    before: list  # micro F1 per model
    after: list
    include_trivial: bool = False

    @property
    def mean_before(self) -> float:
        return float(np.mean(self.before))

    @property
    def mean_after(self) -> float:
        return float(np.mean(self.after))

    def to_json(self) -> dict:
        return {"replacement": self.replacement, "include_trivial": self.include_trivial,
                "before": self.before, "after": self.after,
                "mean_before": self.mean_before, "mean_after": self.mean_after,
                "std_before": float(np.std(self.before)), "std_after": float(np.std(self.after))}


def _f1_of(model, corpus, include_trivial):
    res = parse_corpus(model, corpus)
    if res.errors:
        raise AnalysisError(f"parse failures: {res.errors[:3]}")
    return corpus_f1(res.trees, corpus.gold, include_trivial).f1


def replacement_experiment(models: Sequence, corpus: Corpus, ranking: ConcretenessRanking,
                           include_trivial: bool = False) -> ReplacementReport:
    """Parse with and without noun replacement and score both against the
    original gold trees.  The replacement is the noun-tagged token with the
    highest mean concreteness rank."""
    if corpus.gold is None:
        raise AnalysisError("replacement experiment needs gold trees")
    nouns = {t.surface for c in corpus.captions for t in c.tokens if t.pos in NOUN_TAGS}
    token = ranking.most_concrete(nouns or None)
    replaced = replace_nouns(corpus, token)
    before = [_f1_of(m, corpus, include_trivial) for m in models]
    after = [_f1_of(m, replaced, include_trivial) for m in models]
    return ReplacementReport(token, before, after, include_trivial)


EXPORT_COLUMNS_1D = ("model_id", "token", "pos", "v1", "oriented", "mean_rank")
EXPORT_COLUMNS_2D = ("model_id", "token", "pos", "v1", "v2", "oriented", "mean_rank")


def export_rows(models: Sequence, vocab: Sequence[str], pos: Optional[dict] = None,
                norms: Optional[dict] = None, model_ids: Optional[Sequence[str]] = None) -> list:
    """One row per (model, token).  For d=2 the oriented value is the
    projection on the model's first principal axis."""
    vocab = list(vocab)
    pos = pos or {}
    ids = list(model_ids) if model_ids is not None else [str(k) for k in range(len(models))]
    dims = {token_values(m, vocab[:1]).shape[1] for m in models}
    if len(dims) != 1:
        raise AnalysisError("all exported models must share one dimension")
    ranking = rank_concreteness(models, vocab, norms, pos, allow_2d=True)
    rows = []
    for mid, m, axis in zip(ids, models, ranking.oriented):
        vals = token_values(m, vocab)
        for k, w in enumerate(vocab):
            rows.append([mid, w, pos.get(w, ""), *vals[k].tolist(), float(axis[k]),
                         float(ranking.mean_rank[k])])
    return rows


def export_embeddings(path, models: Sequence, vocab: Sequence[str], pos: Optional[dict] = None,
                      norms: Optional[dict] = None, model_ids: Optional[Sequence[str]] = None) -> int:
    rows = export_rows(models, vocab, pos, norms, model_ids)
    d = len(rows[0]) - 5 if rows else 1
    header = EXPORT_COLUMNS_1D if d == 1 else EXPORT_COLUMNS_2D
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return len(rows)
