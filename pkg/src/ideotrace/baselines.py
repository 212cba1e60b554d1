"""Comparison models: a Rasch model and a static matrix factorization.

The Rasch model fits ``logistic(alpha * (mu_i - nu_j))`` to the bins pooled
into one matrix.  The static factorization is the full model with one user
matrix ``C`` shared by every bin, no graph penalty and per-bin biases; it
runs through the same loss and gradient code as the full model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from ._textio import format_blocks, parse_blocks
from .data import TimeBinnedObservations
from .errors import DataFormatError, DivergedError
from .model import Hyperparameters, LossBreakdown, ModelState, evaluate, logistic, softplus
from .optim import AdamConfig, TrainReport, fit, init_state

RASCH_HEADER = "IDEOTRACE-RASCH v1"
SMF_HEADER = "IDEOTRACE-SMF v1"


@dataclass(eq=False)
class RaschState:
    alpha: float
    mu: np.ndarray
    nu: np.ndarray

    def copy(self) -> RaschState:
        return RaschState(float(self.alpha), self.mu.copy(), self.nu.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.alpha) and np.isfinite(self.mu).all() and np.isfinite(self.nu).all())

    def probabilities(self) -> np.ndarray:
        """``(M, N)`` share probabilities."""
        return logistic(self.alpha * (self.mu[:, None] - self.nu[None, :]))

    def to_text(self) -> str:
        return format_blocks(
            RASCH_HEADER,
            {"M": len(self.mu), "N": len(self.nu)},
            [("alpha", np.array([self.alpha])), ("mu", self.mu), ("nu", self.nu)],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> RaschState:
        dims, b = parse_blocks(path, RASCH_HEADER)
        try:
            return cls(float(b["alpha"][0, 0]), b["mu"].reshape(dims["M"]), b["nu"].reshape(dims["N"]))
        except (KeyError, ValueError) as exc:
            raise DataFormatError(f"inconsistent checkpoint: {exc}", str(path)) from None


def rasch_probability(state: RaschState, i: int, j: int) -> float:
    return logistic(state.alpha * (state.mu[i] - state.nu[j]))


def rasch_objective(Y: np.ndarray, mask: np.ndarray | None = None):
    """Unweighted Bernoulli NLL of a pooled ``(M, N)`` matrix and its gradient."""

    def objective(s: RaschState):
        if not s.is_finite():
            raise DivergedError("diverged state")
        gap = s.mu[:, None] - s.nu[None, :]
        x = s.alpha * gap
        terms = softplus(-(2.0 * Y - 1.0) * x)
        R = logistic(x) - Y
        if mask is not None:
            terms = terms * mask
            R = R * mask
        nll = float(terms.sum())
        grads = RaschState(
            float(np.sum(R * gap)), s.alpha * R.sum(axis=1), -s.alpha * R.sum(axis=0)
        )
        return LossBreakdown(nll, nll, 0.0, 0.0, 0.0, 0.0), grads

    return objective


def train_rasch(
    obs: TimeBinnedObservations | np.ndarray,
    adam: AdamConfig,
    *,
    init: RaschState | None = None,
    fit_alpha: bool = True,
    frozen: Iterable[str] = (),
) -> TrainReport:
    """Fit the Rasch model; ``obs`` bins are pooled (1 if shared in any bin).

    ``alpha`` starts at 1 and the biases at 0 unless ``init`` is given.
    """
    Y = obs.pooled() if isinstance(obs, TimeBinnedObservations) else np.asarray(obs, dtype=float)
    if not Y.any():
        raise ValueError("degenerate all-negative data")
    M, N = Y.shape
    if init is None:
        init = RaschState(1.0, np.zeros(M), np.zeros(N))
    frozen = set(frozen) | (set() if fit_alpha else {"alpha"})
    return fit(init, rasch_objective(Y), adam, frozen, params=("alpha", "mu", "nu"))


@dataclass(eq=False)
class StaticMFState:
    """``W`` is ``(M, K)``, ``C`` is ``(N, K)``, biases are per bin."""

    W: np.ndarray
    C: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    def as_model(self) -> ModelState:
        return ModelState(self.W, self.C[None], self.mu, self.nu)

    @classmethod
    def from_model(cls, state: ModelState) -> StaticMFState:
        if state.C.shape[0] != 1:
            raise ValueError("static model needs a single user matrix")
        return cls(state.W, state.C[0], state.mu, state.nu)

    def probabilities(self) -> np.ndarray:
        return self.as_model().probabilities()

    def to_text(self) -> str:
        M, K = self.W.shape
        T = self.mu.shape[0] - 1
        blocks = [("W", self.W), ("C", self.C)]
        blocks += [(f"mu{t}", self.mu[t]) for t in range(T + 1)]
        blocks += [(f"nu{t}", self.nu[t]) for t in range(T + 1)]
        return format_blocks(SMF_HEADER, {"M": M, "N": self.C.shape[0], "K": K, "T": T}, blocks)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> StaticMFState:
        dims, b = parse_blocks(path, SMF_HEADER)
        try:
            M, N, K, T = (dims[k] for k in "MNKT")
            return cls(
                b["W"].reshape(M, K),
                b["C"].reshape(N, K),
                np.stack([b[f"mu{t}"].reshape(M) for t in range(T + 1)]),
                np.stack([b[f"nu{t}"].reshape(N) for t in range(T + 1)]),
            )
        except (KeyError, ValueError) as exc:
            raise DataFormatError(f"inconsistent checkpoint: {exc}", str(path)) from None


def static_hyperparameters(hp: Hyperparameters) -> Hyperparameters:
    return replace(hp, lam=0.0, tau=0.0)


def train_static_mf(
    obs: TimeBinnedObservations,
    hp: Hyperparameters,
    adam: AdamConfig,
    *,
    init: StaticMFState | None = None,
    mask: np.ndarray | None = None,
    frozen: Iterable[str] = (),
) -> TrainReport:
    """Fit the static factorization.  ``report.final_state`` is a :class:`StaticMFState`."""
    M, N = obs.shape
    start = (
        init_state((M, N, hp.K, obs.T), adam.seed, shared_users=True)
        if init is None
        else init.as_model()
    )
    Y = obs.dense
    shp = static_hyperparameters(hp)

    def objective(s):
        ev = evaluate(s, Y, None, shp, mask)
        return ev.loss, ev.grads

    report = fit(start, objective, adam, frozen)
    report.final_state = StaticMFState.from_model(report.final_state)
    return report
