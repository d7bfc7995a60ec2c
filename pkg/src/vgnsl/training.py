"""Policy-gradient training of the parser against a pluggable reward.

The parser samples merges from a softmax over candidate-pair scores.  Each
merge decision is credited with the reward of the constituent it creates,
minus an exponential-moving-average baseline (REINFORCE).  With the visual
matching reward, a caption/scene matcher trained with a hinge triplet loss
is updated in alternation with the parser.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .core_types import Caption, Corpus, Span
from .embeddings import EmbeddingModel, ModelConfig, init_model
from .metrics import pair_f1
from .parser import ParseTrace, parse_corpus, parse_stochastic, softmax
from .scoring import combine_backward, combine_l2sum, score_pairs, score_pairs_backward

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class RewardKind(str, Enum):
    ORACLE_CONCRETENESS = "oracle"
    VSE_MATCH = "vse"


# ---------------------------------------------------------------------------
# Visual matching


@dataclass
class MatcherParams:
    caption_proj: np.ndarray  # (m, d_full)
    image_proj: np.ndarray  # (m, feature_dim)
    margin: float = 0.2

    def __post_init__(self):
        if self.caption_proj.shape[0] != self.image_proj.shape[0]:
            raise ValueError("projections must share the joint dimension m")
        if not self.margin > 0:
            raise ValueError("margin must be positive")

    def similarity(self, caption_emb, scene) -> float:
        a = self.caption_proj @ caption_emb
        b = self.image_proj @ scene
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            return 0.0
        return float(a @ b / (na * nb))


def init_matcher(d_full: int, feature_dim: int, joint_dim: int = 32, margin: float = 0.2,
                 seed: int = 0) -> MatcherParams:
    rng = np.random.default_rng(seed)
    return MatcherParams(rng.normal(0, 1 / np.sqrt(d_full), (joint_dim, d_full)),
                         rng.normal(0, 1 / np.sqrt(feature_dim), (joint_dim, feature_dim)), margin)


def _normalize_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero-norm projection in triplet loss")
    return x / norms, norms


def triplet_loss(matcher: MatcherParams, caption_embs, scene_feats):
    """Sum of hinge terms over all in-batch negatives, both directions.

    Returns ``(loss, grads)`` with gradients for ``caption_proj``,
    ``image_proj``, ``captions`` and ``scenes``.
    """
    c = np.asarray(caption_embs, dtype=float)
    s = np.asarray(scene_feats, dtype=float)
    if len(c) < 2 or len(c) != len(s):
        raise ValueError("triplet loss needs a batch of at least two aligned pairs")
    a, na = _normalize_rows(c @ matcher.caption_proj.T)
    b, nb = _normalize_rows(s @ matcher.image_proj.T)
    sim = a @ b.T
    pos = np.diag(sim)
    off = ~np.eye(len(c), dtype=bool)
    # caption k against wrong image l, and wrong caption k against image l
    cost_img = np.where(off, matcher.margin - pos[:, None] + sim, 0.0)
    cost_cap = np.where(off, matcher.margin - pos[None, :] + sim, 0.0)
    act_img = cost_img > 0
    act_cap = cost_cap > 0
    loss = float(cost_img[act_img].sum() + cost_cap[act_cap].sum())

    d_sim = act_img.astype(float) + act_cap.astype(float)
    d_sim[np.diag_indices(len(c))] -= act_img.sum(axis=1) + act_cap.sum(axis=0)
    d_a = d_sim @ b
    d_b = d_sim.T @ a
    d_a = (d_a - a * np.sum(d_a * a, axis=1, keepdims=True)) / na
    d_b = (d_b - b * np.sum(d_b * b, axis=1, keepdims=True)) / nb
    grads = {"caption_proj": d_a.T @ c, "image_proj": d_b.T @ s,
             "captions": d_a @ matcher.caption_proj, "scenes": d_b @ matcher.image_proj}
    return loss, grads


# ---------------------------------------------------------------------------
# Rewards


@dataclass
class RewardSource:
    """ORACLE_CONCRETENESS scores a span by the mean ground-truth
    concreteness of its words (unknown words count 0).  VSE_MATCH scores it
    by cosine similarity between the projected full-size span embedding and
    the projected scene."""

    kind: RewardKind
    concreteness: Optional[dict] = None
    matcher: Optional[MatcherParams] = None

    def __post_init__(self):
        self.kind = RewardKind(self.kind)
        if self.kind is RewardKind.ORACLE_CONCRETENESS and not self.concreteness:
            raise ValueError("oracle reward needs a concreteness table")
        if self.kind is RewardKind.VSE_MATCH and self.matcher is None:
            raise ValueError("matching reward needs matcher parameters")

    @property
    def bound(self) -> float:
        if self.kind is RewardKind.VSE_MATCH:
            return 1.0
        return max(abs(v) for v in self.concreteness.values())


def constituent_reward(source: RewardSource, span: Span, caption: Caption, scene=None,
                       span_emb_full=None) -> float:
    if source.kind is RewardKind.ORACLE_CONCRETENESS:
        words = caption.words[span.i - 1:span.j]
        value = float(np.mean([source.concreteness.get(w, 0.0) for w in words]))
    else:
        if scene is None or span_emb_full is None:
            raise ValueError("matching reward needs a scene and the full span embedding")
        value = source.matcher.similarity(np.asarray(span_emb_full), np.asarray(scene))
    if not np.isfinite(value):
        raise TrainingError(f"non-finite reward for span {span!r}")
    b = source.bound
    return float(np.clip(value, -b, b))


def mean_constituent_reward(model: EmbeddingModel, corpus: Corpus, source: RewardSource,
                            mode: str = "stochastic", seed: int = 0, temperature: float = 1.0,
                            scenes=None) -> float:
    """Mean reward over every merged constituent of the model's parses.

    In stochastic mode a fixed ``seed`` gives common random numbers across
    checkpoints, so differences between checkpoints are not swamped by
    sampling noise.
    """
    res = parse_corpus(model, corpus, mode=mode, temperature=temperature, seed=seed)
    if res.errors:
        raise TrainingError(f"parse failures: {res.errors[:3]}")
    vals = []
    for k, (cap, tree) in enumerate(zip(corpus.captions, res.trees)):
        full = None
        if source.kind is RewardKind.VSE_MATCH:
            full = _tree_full_embeddings(model.full_embeddings(cap.words), tree)
        scene = None if scenes is None else scenes[k]
        vals += [constituent_reward(source, s, cap, scene, None if full is None else full[s])
                 for s in sorted(tree.spans) if s.i != s.j]
    return float(np.mean(vals)) if vals else 0.0


def _tree_full_embeddings(rows, tree) -> dict:
    # A binary tree fixes each span's children, so the embedding does not
    # depend on the order the merges happened in.
    out = {}
    for s in sorted(tree.spans, key=len):
        if s.i == s.j:
            out[s] = rows[s.i - 1]
            continue
        k = next(k for k in range(s.i, s.j) if Span(s.i, k) in out and Span(k + 1, s.j) in out)
        out[s] = combine_l2sum(out[Span(s.i, k)], out[Span(k + 1, s.j)])
    return out


def full_span_embeddings(model: EmbeddingModel, caption: Caption, trace: ParseTrace) -> dict:
    """Full-size span embeddings along a derivation (L2-normalized sums of the
    unreduced token embeddings); these feed the matching reward."""
    rows = model.full_embeddings(caption.words)
    out = {Span(i, i): rows[i - 1] for i in range(1, len(caption) + 1)}
    for d in trace.decisions:
        out[d.merged] = combine_l2sum(out[d.left], out[d.right])
    return out


# ---------------------------------------------------------------------------
# Policy gradient


def trace_objective(model: EmbeddingModel, caption: Caption, trace: ParseTrace,
                    advantages: Sequence[float], temperature: float = 1.0):
    """Recompute ``sum_t advantage_t * log p(decision_t)`` from scratch and
    its gradient with respect to every model parameter.

    Returns ``(objective, grads)``; ``grads`` maps parameter names of
    ``model.parameters()`` to arrays of the same shape.
    """
    params = model.parameters()
    words = caption.words
    idx = model.indices(words)
    full = params["table"][idx]
    net = model.bottleneck
    if net is not None:
        hidden = net.hidden(full)
        leaves = hidden @ net.w2.T + net.b2
    else:
        leaves = full
    emb = {Span(i, i): leaves[i - 1] for i in range(1, len(words) + 1)}
    for d in trace.decisions:
        emb[d.merged] = model.combine(emb[d.left], emb[d.right])

    grads = {name: np.zeros_like(a) for name, a in params.items()}
    g_emb = {s: np.zeros_like(v) for s, v in emb.items()}
    objective = 0.0
    for d, adv in zip(trace.decisions, advantages):
        cands = d.candidates
        lefts = np.stack([emb[s] for s in cands[:-1]])
        rights = np.stack([emb[s] for s in cands[1:]])
        scores = score_pairs(model.score, lefts, rights)
        probs = softmax(scores, temperature)
        objective += adv * float(np.log(probs[d.chosen]))
        g = -probs
        g[d.chosen] += 1.0
        g *= adv / temperature
        d_l, d_r, pg = score_pairs_backward(model.score, lefts, rights, g)
        for name, val in pg.items():
            grads[name] += val
        for k in range(len(cands) - 1):
            g_emb[cands[k]] += d_l[k]
            g_emb[cands[k + 1]] += d_r[k]
    for d in reversed(trace.decisions):
        gl, gr = combine_backward(model.config.combine_kind, emb[d.left], emb[d.right],
                                  emb[d.merged], g_emb[d.merged])
        g_emb[d.left] += gl
        g_emb[d.right] += gr
    g_leaves = np.stack([g_emb[Span(i, i)] for i in range(1, len(words) + 1)])
    if net is not None:
        grads["bottleneck.w2"] += g_leaves.T @ hidden
        grads["bottleneck.b2"] += g_leaves.sum(axis=0)
        d_hidden = g_leaves @ net.w2
        d_z = d_hidden * (1.0 - hidden ** 2) if net.activation == "tanh" else d_hidden
        grads["bottleneck.w1"] += d_z.T @ full
        grads["bottleneck.b1"] += d_z.sum(axis=0)
        d_full = d_z @ net.w1
    else:
        d_full = g_leaves
    np.add.at(grads["table"], idx, d_full)
    return objective, grads


def trace_entropy(trace: ParseTrace, temperature: float = 1.0) -> float:
    """Mean per-decision entropy of the sampling distribution."""
    if not trace.decisions:
        return 0.0
    ents = []
    for d in trace.decisions:
        p = softmax(np.array(d.scores), temperature)
        p = p[p > 0]
        ents.append(float(-(p * np.log(p)).sum()))
    return float(np.mean(ents))


class EMABaseline:
    def __init__(self, decay: float = 0.9, value: float = 0.0):
        self.decay = decay
        self.value = value

    def update(self, reward: float) -> float:
        self.value = self.decay * self.value + (1.0 - self.decay) * reward
        return self.value


@dataclass
class StepStats:
    mean_reward: float
    entropy: float
    objective: float
    grad_norm: float
    baseline: float
    n_decisions: int
    root_embeddings: Optional[np.ndarray] = None  # full-size root spans, for the matcher

    def to_json(self) -> dict:
        return {"mean_reward": self.mean_reward, "entropy": self.entropy,
                "objective": self.objective, "grad_norm": self.grad_norm,
                "baseline": self.baseline, "n_decisions": self.n_decisions}


@dataclass
class TrainConfig:
    variant: str = "1,ws,me"
    d_full: int = 512
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 0.05
    temperature: float = 1.0
    baseline_decay: float = 0.9
    seeds: int = 5
    base_seed: int = 0
    reward: str = "oracle"
    margin: float = 0.2
    matcher_dim: int = 32
    matcher_lr: float = 0.05

    def problems(self) -> list:
        out = []
        for name in ("epochs",):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        for name in ("batch_size", "matcher_dim", "d_full"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1")
        for name in ("learning_rate", "matcher_lr"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be >= 0")
        for name in ("temperature", "margin"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        if not 0 <= self.baseline_decay < 1:
            out.append("baseline_decay must be in [0, 1)")
        if self.seeds < 1:
            out.append("seeds must be >= 1")
        try:
            RewardKind(self.reward)
        except ValueError:
            out.append(f"reward must be one of {[k.value for k in RewardKind]}")
        try:
            ModelConfig.from_variant(self.variant, d_full=self.d_full)
        except ValueError as e:
            out.append(f"variant: {e}")
        return out

    def validate(self) -> "TrainConfig":
        errors = self.problems()
        if errors:
            raise ValueError("invalid training config: " + "; ".join(errors))
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown training config keys: {unknown}")
        return cls(**d)

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_variant(self.variant, d_full=self.d_full)


def reinforce_step(model: EmbeddingModel, batch: Sequence[Caption], config: TrainConfig,
                   reward: RewardSource, baseline: EMABaseline, rng: np.random.Generator,
                   scenes: Optional[Sequence] = None) -> StepStats:
    """Sample a parse per caption, reinforce each merge with its
    constituent's advantage, and apply one gradient ascent step in place."""
    if reward.kind is RewardKind.VSE_MATCH and scenes is None:
        raise ValueError("matching reward needs scenes")
    params = model.parameters()
    total = {name: np.zeros_like(a) for name, a in params.items()}
    b = baseline.value
    rewards, ents, roots = [], [], []
    objective = 0.0
    n_dec = 0
    for k, cap in enumerate(batch):
        _, trace = parse_stochastic(model, cap, config.temperature, rng)
        full = None
        if reward.kind is RewardKind.VSE_MATCH:
            full = full_span_embeddings(model, cap, trace)
            roots.append(full[Span(1, len(cap))])
        r = [constituent_reward(reward, d.merged, cap, None if scenes is None else scenes[k],
                                None if full is None else full[d.merged])
             for d in trace.decisions]
        rewards.extend(r)
        ents.append(trace_entropy(trace, config.temperature))
        n_dec += len(r)
        if not r:
            continue
        obj, g = trace_objective(model, cap, trace, [x - b for x in r], config.temperature)
        objective += obj
        for name in total:
            total[name] += g[name]
    scale = config.learning_rate / max(len(batch), 1)
    sq = 0.0
    for name, g in total.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name} at step {model.step}; "
                                f"baseline={b}, rewards={rewards[:10]}")
        sq += float(np.sum(g * g))
    if scale > 0:
        for name, g in total.items():
            params[name] += scale * g
    mean_reward = float(np.mean(rewards)) if rewards else 0.0
    if rewards:
        baseline.update(mean_reward)
    model.step += 1
    return StepStats(mean_reward, float(np.mean(ents)) if ents else 0.0, objective / max(len(batch), 1),
                     float(np.sqrt(sq)) / max(len(batch), 1), baseline.value, n_dec,
                     np.array(roots) if roots else None)


# ---------------------------------------------------------------------------
# Multi-seed training


def seed_list(config: TrainConfig) -> list:
    return [config.base_seed + k for k in range(config.seeds)]


def train_seed(corpus: Corpus, config: TrainConfig, seed: int, scenes=None, concreteness=None,
               on_step: Optional[Callable[[dict], None]] = None) -> list:
    """Train one model; returns its checkpoint stream (initial model, then
    one snapshot at the end of every epoch)."""
    config.validate()
    kind = RewardKind(config.reward)
    vocab = corpus.vocabulary()
    model = init_model(config.model_config, vocab, seed)
    matcher = None
    if kind is RewardKind.VSE_MATCH:
        if scenes is None:
            raise ValueError("matching reward needs scene features")
        scenes = np.asarray(scenes, dtype=float)
        if len(scenes) != len(corpus):
            raise ValueError(f"{len(scenes)} scenes for {len(corpus)} captions")
        matcher = init_matcher(config.d_full, scenes.shape[1], config.matcher_dim, config.margin,
                               seed + 7919)
    reward = RewardSource(kind, concreteness, matcher)
    baseline = EMABaseline(config.baseline_decay)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    stream = [model.copy()]
    captions = corpus.captions
    for epoch in range(config.epochs):
        order = rng.permutation(len(captions))
        for start in range(0, len(order), config.batch_size):
            sel = order[start:start + config.batch_size]
            batch = [captions[k] for k in sel]
            batch_scenes = None if scenes is None else scenes[sel]
            stats = reinforce_step(model, batch, config, reward, baseline, rng, batch_scenes)
            record = {"seed": seed, "epoch": epoch, "step": model.step, **stats.to_json()}
            if matcher is not None and len(sel) >= 2:
                loss, g = triplet_loss(matcher, stats.root_embeddings, batch_scenes)
                matcher.caption_proj -= config.matcher_lr * g["caption_proj"] / len(sel)
                matcher.image_proj -= config.matcher_lr * g["image_proj"] / len(sel)
                record["loss"] = loss
            else:
                record["loss"] = None
            if on_step is not None:
                on_step(record)
        stream.append(model.copy())
        log.info("seed %d epoch %d done (step %d)", seed, epoch, model.step)
    return stream


def train_alternating(corpus: Corpus, config: TrainConfig, scenes=None, concreteness=None,
                      on_step: Optional[Callable[[dict], None]] = None) -> list:
    """One checkpoint stream per seed.  With the matching reward, each batch
    updates the parser (REINFORCE) and then the matcher (triplet loss); with
    the oracle reward there is no matcher phase."""
    config.validate()
    return [train_seed(corpus, config, s, scenes, concreteness, on_step) for s in seed_list(config)]


# ---------------------------------------------------------------------------
# Checkpoint selection


@dataclass
class Selection:
    indices: list  # chosen checkpoint index per stream, in input order
    models: list
    agreement: float  # mean pairwise self-F1 of the chosen checkpoints


def select_checkpoints(streams: Sequence[Sequence[EmbeddingModel]], validation,
                       include_trivial: bool = False, parses=None) -> Selection:
    """Pick one checkpoint per seed maximizing agreement with the other seeds.

    Starts from every stream's final checkpoint and sweeps coordinate ascent
    over seeds (in order of model seed, so the result does not depend on the
    order streams are passed in) until no choice changes.  Each seed takes
    the checkpoint with the highest mean self-F1 against the other seeds'
    current choices; ties go to the latest checkpoint.

    ``parses`` may supply precomputed greedy parses ``parses[s][c]``.
    """
    if len(streams) < 2:
        raise ValueError("checkpoint selection needs at least two seeds")
    if any(len(s) == 0 for s in streams):
        raise ValueError("empty checkpoint stream")
    if parses is None:
        if len(validation) == 0:
            raise ValueError("validation corpus is empty")
        parses = []
        for stream in streams:
            per = []
            for m in stream:
                res = parse_corpus(m, validation)
                if res.errors:
                    raise TrainingError(f"parse failures during selection: {res.errors[:3]}")
                per.append(res.trees)
            parses.append(per)
    order = sorted(range(len(streams)), key=lambda s: (getattr(streams[s][-1], "seed", 0), s))
    chosen = [len(st) - 1 for st in streams]
    cache: dict = {}

    def agree(s, c, t, e):
        key = (s, c, t, e) if s < t else (t, e, s, c)
        if key not in cache:
            cache[key] = pair_f1(parses[s][c], parses[t][e], include_trivial)
        return cache[key]

    for _ in range(100):
        changed = False
        for s in order:
            others = [t for t in range(len(streams)) if t != s]
            best, best_val = chosen[s], -1.0
            for c in range(len(streams[s]) - 1, -1, -1):  # latest first: ties keep latest
                val = float(np.mean([agree(s, c, t, chosen[t]) for t in others]))
                if val > best_val + 1e-15:
                    best, best_val = c, val
            if best != chosen[s]:
                chosen[s] = best
                changed = True
        if not changed:
            break
    pairs = [agree(s, chosen[s], t, chosen[t]) for s, t in itertools.combinations(range(len(streams)), 2)]
    return Selection(chosen, [streams[s][c] for s, c in enumerate(chosen)], float(np.mean(pairs)))
