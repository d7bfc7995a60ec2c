"""Score and combine kernels.

Every forward kernel has a matching ``*_backward`` used by the policy-gradient
trainer.  Span embeddings are 1-d numpy arrays; scalar (d=1) embeddings are
arrays of shape ``(1,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

DEGENERATE_EPS = 1e-12


class ScoreKind(str, Enum):
    MLP = "mlp"
    WS = "ws"
    M = "m"
    MHI = "mhi"


class CombineKind(str, Enum):
    L2SUM = "l2sum"
    ME = "me"
    MX = "mx"


class DegenerateCombineError(ArithmeticError):
    """The L2-normalized sum of two span embeddings has (near) zero norm."""


def _check_pair(left, right):
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if left.shape != right.shape:
        raise ValueError(f"dimension mismatch: {left.shape} vs {right.shape}")
    return left, right


@dataclass
class ScoreParams:
    """Parameters of one score function.

    MLP: ``w1`` (h, 2d), ``b1`` (h,), ``w2`` (h,), ``b2`` shape ().
    WS: ``u`` and ``v`` of length d.  M/MHI: only ``tau``.
    """

    kind: ScoreKind
    w1: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None
    b2: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    tau: float = 1.0

    def __post_init__(self):
        self.kind = ScoreKind(self.kind)
        if self.kind is ScoreKind.MLP:
            if any(a is None for a in (self.w1, self.b1, self.w2, self.b2)):
                raise ValueError("MLP score needs w1, b1, w2, b2")
        elif self.kind is ScoreKind.WS:
            if self.u is None or self.v is None:
                raise ValueError("WS score needs u and v")
            if self.u.shape != self.v.shape:
                raise ValueError("u and v must have the same length")
        elif not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    @property
    def arrays(self) -> dict:
        """Trainable arrays by name."""
        if self.kind is ScoreKind.MLP:
            return {"score.w1": self.w1, "score.b1": self.b1,
                    "score.w2": self.w2, "score.b2": self.b2}
        if self.kind is ScoreKind.WS:
            return {"score.u": self.u, "score.v": self.v}
        return {}

    @property
    def dim(self) -> Optional[int]:
        if self.kind is ScoreKind.MLP:
            return self.w1.shape[1] // 2
        if self.kind is ScoreKind.WS:
            return self.u.shape[0]
        return 1

    def __call__(self, left, right) -> float:
        if self.kind is ScoreKind.MLP:
            return score_mlp(self, left, right)
        if self.kind is ScoreKind.WS:
            return score_ws(self.u, self.v, left, right)
        return score_mean(self.tau, left, right)


# ---------------------------------------------------------------------------
# Scores


def score_mlp(params: ScoreParams, left, right) -> float:
    left, right = _check_pair(left, right)
    if params.w1.shape[1] != 2 * left.shape[0]:
        raise ValueError(
            f"score network expects d={params.w1.shape[1] // 2}, got {left.shape[0]}")
    hidden = np.tanh(params.w1 @ np.concatenate([left, right]) + params.b1)
    return float(hidden @ params.w2 + params.b2)


def score_ws(u, v, left, right) -> float:
    left, right = _check_pair(left, right)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != left.shape or v.shape != left.shape:
        raise ValueError(f"weights of length {u.shape}/{v.shape} for d={left.shape}")
    return float(u @ left + v @ right)


def score_mean(tau: float, left, right) -> float:
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    left, right = _check_pair(left, right)
    if left.size != 1:
        raise ValueError("mean scoring is defined for d=1 only")
    return float((left.reshape(()) + tau * right.reshape(())) / (1.0 + tau))


def score_pairs(params: ScoreParams, lefts: np.ndarray, rights: np.ndarray) -> np.ndarray:
    """Vectorized scores for stacked pairs, shape (m, d) each -> (m,)."""
    if params.kind is ScoreKind.MLP:
        hidden = np.tanh(np.concatenate([lefts, rights], axis=1) @ params.w1.T + params.b1)
        return hidden @ params.w2 + params.b2
    if params.kind is ScoreKind.WS:
        return lefts @ params.u + rights @ params.v
    return (lefts[:, 0] + params.tau * rights[:, 0]) / (1.0 + params.tau)


def score_pairs_backward(params: ScoreParams, lefts, rights, grad_scores):
    """Gradients of ``sum(grad_scores * score_pairs(...))``.

    Returns ``(d_lefts, d_rights, param_grads)``.
    """
    g = np.asarray(grad_scores, dtype=float)
    if params.kind is ScoreKind.MLP:
        x = np.concatenate([lefts, rights], axis=1)
        hidden = np.tanh(x @ params.w1.T + params.b1)
        dz = (g[:, None] * params.w2[None, :]) * (1.0 - hidden ** 2)
        dx = dz @ params.w1
        d = lefts.shape[1]
        grads = {"score.w1": dz.T @ x, "score.b1": dz.sum(axis=0),
                 "score.w2": g @ hidden, "score.b2": np.asarray(g.sum())}
        return dx[:, :d], dx[:, d:], grads
    if params.kind is ScoreKind.WS:
        grads = {"score.u": g @ lefts, "score.v": g @ rights}
        return g[:, None] * params.u[None, :], g[:, None] * params.v[None, :], grads
    w = 1.0 / (1.0 + params.tau)
    return (g * w)[:, None], (g * params.tau * w)[:, None], {}


# ---------------------------------------------------------------------------
# Combines


def _scaled_norm(x: np.ndarray) -> float:
    # Scaling by the largest magnitude keeps d=1 exact: |x| * sqrt(1) == |x|.
    m = float(np.max(np.abs(x)))
    if m == 0.0:
        return 0.0
    return m * float(np.sqrt(np.sum((x / m) ** 2)))


def combine_l2sum(left, right) -> np.ndarray:
    left, right = _check_pair(left, right)
    total = left + right
    norm = _scaled_norm(total)
    if norm < DEGENERATE_EPS:
        raise DegenerateCombineError(f"L2 sum has norm {norm:.3g} < {DEGENERATE_EPS}")
    return total / norm


def combine_mean(left, right) -> np.ndarray:
    left, right = _check_pair(left, right)
    return (left + right) / 2.0


def combine_max(left, right) -> np.ndarray:
    left, right = _check_pair(left, right)
    return np.maximum(left, right)


COMBINES = {
    CombineKind.L2SUM: combine_l2sum,
    CombineKind.ME: combine_mean,
    CombineKind.MX: combine_max,
}


def combine(kind, left, right) -> np.ndarray:
    return COMBINES[CombineKind(kind)](left, right)


def combine_backward(kind, left, right, out, grad_out):
    """Return ``(d_left, d_right)`` given the gradient on the combined span."""
    kind = CombineKind(kind)
    if kind is CombineKind.ME:
        half = grad_out / 2.0
        return half, half
    if kind is CombineKind.MX:
        take_left = left >= right
        return np.where(take_left, grad_out, 0.0), np.where(take_left, 0.0, grad_out)
    norm = _scaled_norm(left + right)
    d_total = (grad_out - out * (out @ grad_out)) / norm
    return d_total, d_total
