"""Token embeddings, the low-dimensional bottleneck, and model checkpoints."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core_types import Caption, Token
from .scoring import CombineKind, ScoreKind, ScoreParams, combine

UNK = "<unk>"
CHECKPOINT_FORMAT = "vgnsl-checkpoint"
CHECKPOINT_VERSION = 1

BOTTLENECK_HIDDEN = 128
SCORE_HIDDEN = 128
WS_INIT = 0.01
DEFAULT_TAU = {ScoreKind.M: 1.0, ScoreKind.MHI: 20.0}


class CheckpointError(ValueError):
    pass


class OOVError(KeyError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_full: int = 512
    d_reduced: Optional[int] = None
    score_kind: ScoreKind = ScoreKind.MLP
    combine_kind: CombineKind = CombineKind.L2SUM
    tau: Optional[float] = None
    bottleneck_hidden: int = BOTTLENECK_HIDDEN
    score_hidden: int = SCORE_HIDDEN

    def __post_init__(self):
        object.__setattr__(self, "score_kind", ScoreKind(self.score_kind))
        object.__setattr__(self, "combine_kind", CombineKind(self.combine_kind))
        if self.tau is None:
            object.__setattr__(self, "tau", DEFAULT_TAU.get(self.score_kind, 1.0))
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self) -> list:
        out = []
        if self.d_full < 1:
            out.append("d_full must be >= 1")
        if self.d_reduced is not None and self.d_reduced not in (1, 2):
            out.append("d_reduced must be 1 or 2")
        if self.score_kind in (ScoreKind.M, ScoreKind.MHI) and self.d_reduced != 1:
            out.append(f"score {self.score_kind.value} requires d_reduced=1")
        if self.score_kind is ScoreKind.WS and self.d_reduced is None:
            out.append("score ws requires a bottleneck (d_reduced)")
        if not self.tau > 0:
            out.append("tau must be positive")
        if self.bottleneck_hidden < 1 or self.score_hidden < 1:
            out.append("hidden widths must be >= 1")
        return out

    @property
    def d(self) -> int:
        """Dimension of the embeddings that parsing decisions see."""
        return self.d_reduced if self.d_reduced is not None else self.d_full

    @classmethod
    def from_variant(cls, variant: str, **kw) -> "ModelConfig":
        """Build from triple notation, e.g. ``"1,ws,me"`` or ``"512,mlp,l2sum"``.

        A dimension equal to ``d_full`` means no bottleneck.
        """
        parts = [p.strip().lower() for p in variant.split(",")]
        if len(parts) != 3:
            raise ValueError(f"variant must be 'd,score,combine', got {variant!r}")
        d = int(parts[0])
        d_full = kw.pop("d_full", 512)
        if d in (1, 2):
            d_reduced = d
        elif d == d_full:
            d_reduced = None
        else:
            raise ValueError(f"dimension must be 1, 2 or d_full={d_full}, got {d}")
        return cls(d_full=d_full, d_reduced=d_reduced, score_kind=ScoreKind(parts[1]),
                   combine_kind=CombineKind(parts[2]), **kw)

    @property
    def variant(self) -> str:
        return f"{self.d},{self.score_kind.value},{self.combine_kind.value}"

    def to_json(self) -> dict:
        out = asdict(self)
        out["score_kind"] = self.score_kind.value
        out["combine_kind"] = self.combine_kind.value
        return out


PAPER_VARIANTS = ("1,ws,me", "2,ws,me", "1,m,me", "1,mhi,me", "1,m,mx", "1,mhi,mx")
ORIGINAL_VARIANT = "512,mlp,l2sum"


@dataclass
class EmbeddingTable:
    vocab: dict
    vectors: np.ndarray

    def __post_init__(self):
        if sorted(self.vocab.values()) != list(range(len(self.vocab))):
            raise ValueError("vocabulary indices must be dense")
        if self.vectors.shape[0] != len(self.vocab):
            raise ValueError("one embedding row per vocabulary entry required")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding rows must be finite")

    def index(self, surface: str, strict: bool = False) -> int:
        k = self.vocab.get(surface)
        if k is None:
            if strict or UNK not in self.vocab:
                raise OOVError(surface)
            k = self.vocab[UNK]
        return k


@dataclass
class BottleneckNet:
    """Two-layer tanh network from d_full down to 1 or 2 dimensions."""

    w1: np.ndarray  # (h, d_full)
    b1: np.ndarray
    w2: np.ndarray  # (d_reduced, h)
    b2: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        if self.w2.shape[0] not in (1, 2):
            raise ValueError("bottleneck must map to 1 or 2 dimensions")
        if self.activation not in ("tanh", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def hidden(self, x: np.ndarray) -> np.ndarray:
        z = x @ self.w1.T + self.b1
        return np.tanh(z) if self.activation == "tanh" else z

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.hidden(x) @ self.w2.T + self.b2

    @property
    def arrays(self) -> dict:
        return {"bottleneck.w1": self.w1, "bottleneck.b1": self.b1,
                "bottleneck.w2": self.w2, "bottleneck.b2": self.b2}


def embed_token(table: EmbeddingTable, net: Optional[BottleneckNet], token, strict: bool = False) -> np.ndarray:
    surface = token.surface if isinstance(token, Token) else token
    row = table.vectors[table.index(surface, strict)]
    return row.copy() if net is None else net(row)


@dataclass
class EmbeddingModel:
    """One parser: embeddings, optional bottleneck, score parameters."""

    config: ModelConfig
    table: EmbeddingTable
    bottleneck: Optional[BottleneckNet]
    score: ScoreParams
    seed: int = 0
    step: int = 0
    strict_oov: bool = False

    @property
    def vocab(self) -> list:
        return sorted(self.table.vocab, key=self.table.vocab.get)

    def parameters(self) -> dict:
        """Trainable arrays by name (the live arrays, not copies)."""
        out = {"table": self.table.vectors}
        if self.bottleneck is not None:
            out.update(self.bottleneck.arrays)
        out.update(self.score.arrays)
        return out

    def indices(self, words: Sequence[str]) -> np.ndarray:
        return np.array([self.table.index(w, self.strict_oov) for w in words], dtype=int)

    def full_embeddings(self, words: Sequence[str]) -> np.ndarray:
        return self.table.vectors[self.indices(words)]

    def decision_embeddings(self, words: Sequence[str]) -> np.ndarray:
        """Leaf embeddings the parser scores with: reduced when a bottleneck
        is configured, full otherwise.  Shape (n, d)."""
        full = self.full_embeddings(words)
        if self.bottleneck is None:
            return full
        # batched matmul can differ in the last ulp between identical rows,
        # so reduce row by row; identical inputs then give identical outputs
        return np.stack([self.bottleneck(row) for row in full])

    def embed(self, token) -> np.ndarray:
        return embed_token(self.table, self.bottleneck, token, self.strict_oov)

    def score_pair(self, left, right) -> float:
        return self.score(left, right)

    def combine(self, left, right) -> np.ndarray:
        return combine(self.config.combine_kind, left, right)

    def copy(self) -> "EmbeddingModel":
        return copy.deepcopy(self)


def _xavier(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_model(config: ModelConfig, vocab: Sequence[str], seed: int, strict_oov: bool = False) -> EmbeddingModel:
    """Randomly initialize a model.

    Embedding rows are uniform(-0.1, 0.1); network weights use Xavier
    uniform scaling with zero biases; weighted-sum vectors are
    uniform(-0.01, 0.01).  Unless ``strict_oov`` is set, an ``<unk>`` row is
    appended for out-of-vocabulary tokens.
    """
    vocab = list(dict.fromkeys(vocab))
    if not vocab:
        raise ValueError("vocabulary must be non-empty")
    if not strict_oov and UNK not in vocab:
        vocab.append(UNK)
    rng = np.random.default_rng(seed)
    vectors = rng.uniform(-0.1, 0.1, size=(len(vocab), config.d_full))
    table = EmbeddingTable({w: k for k, w in enumerate(vocab)}, vectors)

    bottleneck = None
    if config.d_reduced is not None:
        h = config.bottleneck_hidden
        bottleneck = BottleneckNet(
            w1=_xavier(rng, (h, config.d_full), config.d_full, h), b1=np.zeros(h),
            w2=_xavier(rng, (config.d_reduced, h), h, config.d_reduced),
            b2=np.zeros(config.d_reduced))

    d = config.d
    if config.score_kind is ScoreKind.MLP:
        h = config.score_hidden
        score = ScoreParams(ScoreKind.MLP, w1=_xavier(rng, (h, 2 * d), 2 * d, h), b1=np.zeros(h),
                            w2=_xavier(rng, (h,), h, 1), b2=np.zeros(()))
    elif config.score_kind is ScoreKind.WS:
        # Near-zero start: no initial structural bias, so seeds do not lock
        # into whichever sign pattern the draw happened to favour.
        score = ScoreParams(ScoreKind.WS, u=rng.uniform(-WS_INIT, WS_INIT, d),
                            v=rng.uniform(-WS_INIT, WS_INIT, d))
    else:
        score = ScoreParams(config.score_kind, tau=config.tau)
    return EmbeddingModel(config, table, bottleneck, score, seed=seed, strict_oov=strict_oov)


# ---------------------------------------------------------------------------
# Checkpoints


def _pack(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unpack(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=float).reshape(d["shape"])


def model_to_json(model: EmbeddingModel) -> dict:
    params = {name: _pack(a) for name, a in model.parameters().items()}
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_json(),
        "vocab": model.vocab,
        "seed": model.seed,
        "step": model.step,
        "strict_oov": model.strict_oov,
        "bottleneck_activation": None if model.bottleneck is None else model.bottleneck.activation,
        "params": params,
    }


def model_from_json(doc: dict) -> EmbeddingModel:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"not a {CHECKPOINT_FORMAT} document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {doc.get('version')!r} (expected {CHECKPOINT_VERSION})")
    try:
        config = ModelConfig(**doc["config"])
        p = {name: _unpack(v) for name, v in doc["params"].items()}
        vocab = doc["vocab"]
        table = EmbeddingTable({w: k for k, w in enumerate(vocab)}, p["table"])
        bottleneck = None
        if config.d_reduced is not None:
            bottleneck = BottleneckNet(p["bottleneck.w1"], p["bottleneck.b1"], p["bottleneck.w2"],
                                       p["bottleneck.b2"], doc.get("bottleneck_activation") or "tanh")
        if config.score_kind is ScoreKind.MLP:
            score = ScoreParams(ScoreKind.MLP, w1=p["score.w1"], b1=p["score.b1"],
                                w2=p["score.w2"], b2=p["score.b2"])
        elif config.score_kind is ScoreKind.WS:
            score = ScoreParams(ScoreKind.WS, u=p["score.u"], v=p["score.v"])
        else:
            score = ScoreParams(config.score_kind, tau=config.tau)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed checkpoint (version {CHECKPOINT_VERSION}): {e}") from None
    return EmbeddingModel(config, table, bottleneck, score, seed=int(doc.get("seed", 0)),
                          step=int(doc.get("step", 0)), strict_oov=bool(doc.get("strict_oov", False)))


def save_model(model: EmbeddingModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_json(model), f)


def load_model(path) -> EmbeddingModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: malformed checkpoint (version {CHECKPOINT_VERSION}): {e}") from None
    return model_from_json(doc)
