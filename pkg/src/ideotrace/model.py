"""Model parameters, observation probabilities, the training loss and its gradients.

The probability that user ``j`` shares website ``i`` in bin ``t`` is
``logistic(w_i . c_j^t + mu_i^t + nu_j^t)``.  The loss summed over bins is a
weighted negative log-likelihood (weight ``beta`` on shares, 1 elsewhere)
plus L2 penalties on ``W`` and every ``C^t``, a graph-Laplacian smoothness
penalty on each ``C^t`` and a squared-difference penalty between adjacent
``C^t``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._textio import format_blocks, parse_blocks
from .data import SocialGraph, TimeBinnedObservations
from .errors import DataFormatError, DivergedError

MODEL_HEADER = "IDEOTRACE-MODEL v1"


def logistic(x):
    """Numerically stable ``1 / (1 + exp(-x))`` for scalars or arrays."""
    x = np.asarray(x, dtype=float)
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return out if out.ndim else float(out)


def softplus(x):
    """``log(1 + exp(x))`` without overflow; ``-log logistic(x) == softplus(-x)``."""
    x = np.asarray(x, dtype=float)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def observation_likelihood(y, logit):
    """Bernoulli likelihood of ``y`` given the logit: ``logistic((2y - 1) * logit)``."""
    y = np.asarray(y)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("y must be 0 or 1")
    return logistic((2 * y - 1) * np.asarray(logit, dtype=float))


@dataclass(frozen=True)
class Hyperparameters:
    K: int = 2
    beta: float = 2.0
    gamma: float = 0.01
    lam: float = 0.01
    tau: float = 0.1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        # beta == 1 is allowed so the unweighted likelihood stays reachable.
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if min(self.gamma, self.lam, self.tau) < 0:
            raise ValueError("gamma, lambda and tau must be non-negative")

    def key(self) -> tuple[float, float, float, float]:
        return (self.gamma, self.lam, self.tau, self.beta)


@dataclass(eq=False)
class ModelState:
    """All learned parameters.

    ``W`` is ``(M, K)``; ``C`` is ``(T+1, N, K)``; ``mu`` is ``(T+1, M)``;
    ``nu`` is ``(T+1, N)``.
    """

    W: np.ndarray
    C: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        M, K = self.W.shape
        S, N, K2 = self.C.shape
        if K2 != K:
            raise ValueError("W and C disagree on K")
        if self.mu.shape[1] != M or self.nu.shape[1] != N or self.mu.shape != (self.nu.shape[0], M):
            raise ValueError("bias shapes inconsistent with W and C")
        if S not in (1, self.mu.shape[0]):
            raise ValueError("C must have one matrix per bin")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """``(M, N, K, T)``."""
        return self.W.shape[0], self.C.shape[1], self.W.shape[1], self.mu.shape[0] - 1

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "C": self.C, "mu": self.mu, "nu": self.nu}

    def copy(self) -> ModelState:
        return ModelState(self.W.copy(), self.C.copy(), self.mu.copy(), self.nu.copy())

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays().values())

    def checksum(self, names=("W", "C", "mu", "nu")) -> str:
        h = hashlib.sha256()
        for name in names:
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def logits(self) -> np.ndarray:
        """``(T+1, M, N)`` array of ``w_i . c_j^t + mu_i^t + nu_j^t``."""
        return np.matmul(self.W, np.swapaxes(self.C, 1, 2)) + self.mu[:, :, None] + self.nu[:, None, :]

    def probabilities(self) -> np.ndarray:
        return logistic(self.logits())

    def to_text(self) -> str:
        M, N, K, T = self.dims
        blocks = [("W", self.W)]
        blocks += [(f"C{t}", self.C[t]) for t in range(T + 1)]
        blocks += [(f"mu{t}", self.mu[t]) for t in range(T + 1)]
        blocks += [(f"nu{t}", self.nu[t]) for t in range(T + 1)]
        return format_blocks(MODEL_HEADER, {"M": M, "N": N, "K": K, "T": T}, blocks)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> ModelState:
        dims, b = parse_blocks(path, MODEL_HEADER)
        try:
            M, N, K, T = (dims[k] for k in "MNKT")
            W = b["W"].reshape(M, K)
            C = np.stack([b[f"C{t}"].reshape(N, K) for t in range(T + 1)])
            mu = np.stack([b[f"mu{t}"].reshape(M) for t in range(T + 1)])
            nu = np.stack([b[f"nu{t}"].reshape(N) for t in range(T + 1)])
        except (KeyError, ValueError) as exc:
            raise DataFormatError(f"inconsistent checkpoint: {exc}", str(path)) from None
        return cls(W, C, mu, nu)


def share_probability(state: ModelState, t: int, i: int, j: int) -> float:
    M, N, _, T = state.dims
    for name, value, size in (("t", t, T + 1), ("i", i, M), ("j", j, N)):
        if not 0 <= value < size:
            raise IndexError(f"{name}={value} out of range [0, {size})")
    c = state.C[t if state.C.shape[0] > 1 else 0, j]
    return logistic(float(state.W[i] @ c) + state.mu[t, i] + state.nu[t, j])


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    nll: float
    l2_w: float
    l2_c: float
    graph: float
    temporal: float


@dataclass
class _Evaluation:
    loss: LossBreakdown
    grads: ModelState | None = field(default=None)


def evaluate(
    state: ModelState,
    Y: np.ndarray,
    laplacian: np.ndarray | None,
    hp: Hyperparameters,
    mask: np.ndarray | None = None,
    with_grad: bool = True,
) -> _Evaluation:
    """Loss terms and (optionally) gradients on a dense ``(T+1, M, N)`` ``Y``.

    ``mask`` (same shape as ``Y``, entries 0/1) drops cells from the
    likelihood.  A ``C`` stack of length one is shared by every bin.
    """
    if not state.is_finite():
        raise DivergedError("diverged state")
    W, C = state.W, state.C
    if Y.shape != (state.mu.shape[0], W.shape[0], C.shape[1]):
        raise ValueError(f"observation shape {Y.shape} does not match state {state.dims}")

    # Overflow here surfaces as a non-finite loss, which the optimizer reports.
    with np.errstate(over="ignore", invalid="ignore"):
        logits = state.logits()
        weight = np.where(Y > 0, hp.beta, 1.0)
        if mask is not None:
            weight = weight * mask
        nll = float(np.sum(weight * softplus(-(2.0 * Y - 1.0) * logits)))

        l2_w = 0.5 * hp.gamma * float(np.sum(W * W))
        l2_c = 0.5 * hp.gamma * float(np.sum(C * C))
        if laplacian is not None and hp.lam > 0:
            LC = laplacian @ C
            graph = hp.lam * float(np.sum(C * LC))
        else:
            LC = None
            graph = 0.0
        diff = C[1:] - C[:-1]
        temporal = hp.tau * float(np.sum(diff * diff))
        loss = LossBreakdown(nll + l2_w + l2_c + graph + temporal, nll, l2_w, l2_c, graph, temporal)
        if not with_grad:
            return _Evaluation(loss)

        # d(nll)/d(logit) = weight * (p - y) for either label.
        R = weight * (logistic(logits) - Y)
        Cb = np.broadcast_to(C, (R.shape[0],) + C.shape[1:])
        gW = np.einsum("tmn,tnk->mk", R, Cb) + hp.gamma * W
        gC = np.einsum("tmn,mk->tnk", R, W)
        if C.shape[0] == 1:
            gC = gC.sum(axis=0, keepdims=True)
        gC += hp.gamma * C
        if LC is not None:
            gC += 2.0 * hp.lam * LC
        if len(diff):
            gC[1:] += 2.0 * hp.tau * diff
            gC[:-1] -= 2.0 * hp.tau * diff
        grads = ModelState(gW, gC, R.sum(axis=2), R.sum(axis=1))
        return _Evaluation(loss, grads)


def _laplacian(graph: SocialGraph | None):
    return None if graph is None else graph.laplacian


def loss(
    state: ModelState,
    obs: TimeBinnedObservations,
    graph: SocialGraph | None,
    hp: Hyperparameters,
    mask: np.ndarray | None = None,
) -> LossBreakdown:
    return evaluate(state, obs.dense, _laplacian(graph), hp, mask, with_grad=False).loss


def gradients(
    state: ModelState,
    obs: TimeBinnedObservations,
    graph: SocialGraph | None,
    hp: Hyperparameters,
    mask: np.ndarray | None = None,
) -> ModelState:
    """Analytic gradient of :func:`loss`, returned as a :class:`ModelState`."""
    return evaluate(state, obs.dense, _laplacian(graph), hp, mask).grads


def with_params(state: ModelState, **arrays) -> ModelState:
    return replace(state, **arrays)
