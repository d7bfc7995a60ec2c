"""Bracketing F1, per-category recall, self-F1 agreement and Pearson r."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core_types import LabeledTree, SpanTree, spans_of


@dataclass(frozen=True)
class F1Result:
    precision: float
    recall: float
    f1: float
    matched: int
    predicted: int
    gold: int

    @classmethod
    def from_counts(cls, matched: int, predicted: int, gold: int) -> "F1Result":
        # Two empty span sets agree perfectly.
        if predicted == 0 and gold == 0:
            return cls(1.0, 1.0, 1.0, 0, 0, 0)
        p = matched / predicted if predicted else 0.0
        r = matched / gold if gold else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f, matched, predicted, gold)

    def to_json(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "matched": self.matched, "predicted": self.predicted, "gold": self.gold}


def _check_len(pred, gold, where=""):
    if pred.n != gold.n:
        raise ValueError(f"length mismatch{where}: predicted n={pred.n}, gold n={gold.n}")


def _span_set(x, include_trivial: bool, n: Optional[int]) -> frozenset:
    if hasattr(x, "spans"):
        return spans_of(x, include_trivial)
    x = frozenset(x)
    if include_trivial or not x:
        return x
    n = n if n is not None else max(s.j for s in x)
    return frozenset(s for s in x if s.i != s.j and not (s.i == 1 and s.j == n))


def f1(predicted, gold, include_trivial: bool = False, n: Optional[int] = None) -> F1Result:
    """Unlabeled span F1 for one sentence.

    Either side may be a SpanTree, a LabeledTree (preterminals never count)
    or a bare set of Spans; ``n`` is needed to filter bare sets whose full
    span is not their widest member.
    """
    if hasattr(predicted, "n") and hasattr(gold, "n"):
        _check_len(predicted, gold)
    n = n if n is not None else getattr(predicted, "n", getattr(gold, "n", None))
    p = _span_set(predicted, include_trivial, n)
    g = _span_set(gold, include_trivial, n)
    return F1Result.from_counts(len(p & g), len(p), len(g))


def corpus_f1(predicted: Sequence, gold: Sequence, include_trivial: bool = False,
              macro: bool = False) -> F1Result:
    """Corpus F1.  Micro (summed counts) by default; ``macro`` averages the
    per-sentence precision, recall and F1 instead, keeping summed counts."""
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} predicted trees for {len(gold)} gold trees")
    if not predicted:
        raise ValueError("no trees to evaluate")
    per = []
    for k, (p, g) in enumerate(zip(predicted, gold)):
        _check_len(p, g, f" at index {k}")
        per.append(f1(p, g, include_trivial))
    m = sum(r.matched for r in per)
    np_ = sum(r.predicted for r in per)
    ng = sum(r.gold for r in per)
    if not macro:
        return F1Result.from_counts(m, np_, ng)
    return F1Result(float(np.mean([r.precision for r in per])), float(np.mean([r.recall for r in per])),
                    float(np.mean([r.f1 for r in per])), m, np_, ng)


@dataclass(frozen=True)
class CategoryRecall:
    per_label: dict  # label -> (matched, gold, recall)

    def __getitem__(self, label):
        return self.per_label[label][2]

    def __contains__(self, label):
        return label in self.per_label

    def to_json(self) -> dict:
        return {lab: {"matched": m, "gold": g, "recall": r} for lab, (m, g, r) in self.per_label.items()}


def category_recall(predicted: Sequence, gold: Sequence[LabeledTree], labels=("NP", "VP", "PP", "ADJP"),
                    include_trivial: bool = False) -> CategoryRecall:
    """Fraction of gold constituents of each label whose span the prediction
    contains.  A (label, span) pair counts once even in unary chains."""
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} predicted trees for {len(gold)} gold trees")
    counts = {lab: [0, 0] for lab in labels}
    for k, (p, g) in enumerate(zip(predicted, gold)):
        _check_len(p, g, f" at index {k}")
        pspans = spans_of(p, True)
        keep = spans_of(g, include_trivial)
        seen = set()
        for c in g.constituents:
            if c.preterminal or c.label not in counts or c.span not in keep:
                continue
            if (c.label, c.span) in seen:
                continue
            seen.add((c.label, c.span))
            counts[c.label][1] += 1
            counts[c.label][0] += c.span in pspans
    return CategoryRecall({lab: (m, g, m / g) for lab, (m, g) in counts.items() if g > 0})


@dataclass(frozen=True)
class AgreementResult:
    """``matrix[a, b]`` is the F1 between model a of set A and model b of
    set B.  In within-set mode only the upper triangle is filled (NaN
    elsewhere); ``mean`` is the mean of the filled entries."""

    mean: float
    matrix: np.ndarray
    within: bool = False

    @property
    def pairs(self) -> list:
        return [float(x) for x in self.matrix[~np.isnan(self.matrix)]]

    def to_json(self) -> dict:
        return {"mean": self.mean, "within": self.within, "n_pairs": len(self.pairs),
                "matrix": [[None if np.isnan(x) else float(x) for x in row] for row in self.matrix]}


def pair_f1(trees_a: Sequence[SpanTree], trees_b: Sequence[SpanTree], include_trivial: bool = False,
            macro: bool = False) -> float:
    return corpus_f1(trees_a, trees_b, include_trivial, macro).f1


def self_f1(set_a: Sequence[Sequence[SpanTree]], set_b: Optional[Sequence[Sequence[SpanTree]]] = None,
            include_trivial: bool = False, macro: bool = False) -> AgreementResult:
    """Agreement between parses of several models over the same captions.

    Cross-set mode averages over all |A|x|B| pairs.  Within-set mode
    (``set_b`` omitted) averages over unordered pairs of distinct models.
    """
    within = set_b is None
    if not set_a:
        raise ValueError("set_a is empty")
    ncap = len(set_a[0])
    for grp in (set_a, set_b or ()):
        for k, trees in enumerate(grp):
            if len(trees) != ncap:
                raise ValueError(f"model {k} has {len(trees)} parses, expected {ncap}")
    if within:
        if len(set_a) < 2:
            raise ValueError("within-set agreement needs at least two models")
        mat = np.full((len(set_a), len(set_a)), np.nan)
        for a, b in itertools.combinations(range(len(set_a)), 2):
            mat[a, b] = pair_f1(set_a[a], set_a[b], include_trivial, macro)
    else:
        if not set_b:
            raise ValueError("set_b is empty")
        mat = np.array([[pair_f1(ta, tb, include_trivial, macro) for tb in set_b] for ta in set_a])
    return AgreementResult(float(np.nanmean(mat)), mat, within)


class UndefinedCorrelation(ValueError):
    pass


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two equal-length 1-d sequences")
    if x.size < 2:
        raise UndefinedCorrelation("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(dx @ dx)
    sy = np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise UndefinedCorrelation("correlation undefined for constant input")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))
