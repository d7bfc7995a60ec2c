"""Test-side builders and independent oracles.

Nothing here calls the parser; the brute-force simulator re-implements the
merge loop and the score/combine formulas from scratch.
"""

import itertools
import math

import numpy as np

from vgnsl.core_types import Caption, Span, SpanTree
from vgnsl.embeddings import BottleneckNet, EmbeddingModel, EmbeddingTable, ModelConfig
from vgnsl.scoring import ScoreKind, ScoreParams


def scalar_model(values, score="m", combine="me", tau=None, u=1.0, v=1.0):
    """A d=1 model whose reduced token embeddings are exactly ``values``
    (a mapping token -> float), via a linear 1->1 bottleneck."""
    vocab = list(values)
    cfg = ModelConfig(d_full=1, d_reduced=1, score_kind=score, combine_kind=combine, tau=tau,
                      bottleneck_hidden=1)
    table = EmbeddingTable({w: k for k, w in enumerate(vocab)},
                           np.array([[float(values[w])] for w in vocab]))
    net = BottleneckNet(np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1), "linear")
    kind = ScoreKind(score)
    if kind is ScoreKind.WS:
        sp = ScoreParams(kind, u=np.array([float(u)]), v=np.array([float(v)]))
    elif kind is ScoreKind.MLP:
        raise ValueError("use init_model for MLP scoring")
    else:
        sp = ScoreParams(kind, tau=cfg.tau)
    return EmbeddingModel(cfg, table, net, sp)


def caption(words, tags=None):
    return Caption.from_words(words.split() if isinstance(words, str) else words, tags)


def indexed_caption(n):
    return Caption.from_words([f"t{k}" for k in range(1, n + 1)])


def right_branching(n):
    return SpanTree(n, {Span(i, i) for i in range(1, n + 1)} | {Span(i, n) for i in range(1, n)})


def left_branching(n):
    return SpanTree(n, {Span(i, i) for i in range(1, n + 1)} | {Span(1, j) for j in range(2, n + 1)})


# ---------------------------------------------------------------------------
# Independent formulas


def oracle_score(model, left, right):
    sp = model.score
    if sp.kind is ScoreKind.MLP:
        x = np.concatenate([left, right])
        h = np.tanh(sp.w1 @ x + sp.b1)
        return float(h @ sp.w2 + sp.b2)
    if sp.kind is ScoreKind.WS:
        return float(sp.u @ left + sp.v @ right)
    l, r = float(left[0]), float(right[0])
    return (l + sp.tau * r) / (1.0 + sp.tau)


def oracle_combine(model, left, right):
    kind = model.config.combine_kind.value
    if kind == "me":
        return (left + right) / 2.0
    if kind == "mx":
        return np.maximum(left, right)
    s = left + right
    m = np.max(np.abs(s))
    return s / (m * math.sqrt(float(np.sum((s / m) ** 2))))


def brute_force_parse(model, caption):
    """Greedy merging that rescoring every adjacent pair at every step."""
    leaves = model.decision_embeddings(caption.words)
    cands = [(Span(i, i), leaves[i - 1]) for i in range(1, len(caption) + 1)]
    tree = {s for s, _ in cands}
    while len(cands) > 1:
        best_k, best = None, -math.inf
        for k in range(len(cands) - 1):
            sc = oracle_score(model, cands[k][1], cands[k + 1][1])
            if sc > best:
                best_k, best = k, sc
        (ls, le), (rs, re) = cands[best_k], cands[best_k + 1]
        merged = Span(ls.i, rs.j)
        cands[best_k:best_k + 2] = [(merged, oracle_combine(model, le, re))]
        tree.add(merged)
    return frozenset(tree)


def enumerate_derivations(model, caption, temperature=1.0):
    """Every merge sequence with its exact sampling probability.

    Returns a list of ``(tuple of merged spans, probability)``.
    """
    leaves = model.decision_embeddings(caption.words)
    start = [(Span(i, i), leaves[i - 1]) for i in range(1, len(caption) + 1)]
    out = []

    def rec(cands, merges, prob):
        if len(cands) == 1:
            out.append((tuple(merges), prob))
            return
        scores = np.array([oracle_score(model, cands[k][1], cands[k + 1][1])
                           for k in range(len(cands) - 1)]) / temperature
        p = np.exp(scores - scores.max())
        p /= p.sum()
        for k in range(len(cands) - 1):
            (ls, le), (rs, re) = cands[k], cands[k + 1]
            merged = Span(ls.i, rs.j)
            rec(cands[:k] + [(merged, oracle_combine(model, le, re))] + cands[k + 2:],
                merges + [merged], prob * p[k])

    rec(start, [], 1.0)
    return out
