"""Full-batch Adam training and entry-masked cross-validation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .data import SocialGraph, TimeBinnedObservations
from .errors import DataFormatError, DivergedError
from .model import Hyperparameters, LossBreakdown, ModelState, evaluate
from .stats import f1

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 2000
    tolerance: float = 1e-6
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")


@dataclass
class TrainReport:
    epochs_run: int
    loss_trace: list[float]
    converged: bool
    final_state: ModelState
    final_loss: LossBreakdown

    def trace_text(self) -> str:
        return "".join(f"{e}\t{format(v, '.17g')}\n" for e, v in enumerate(self.loss_trace))


def init_state(dims: tuple[int, int, int, int], seed: int, shared_users: bool = False) -> ModelState:
    """Random ``W`` and ``C`` with N(0, 0.1^2) entries, zero biases.

    Draw order is ``W`` then ``C^0, C^1, ...``.  With ``shared_users`` only
    ``C^0`` is drawn, which makes the static model's initialization the
    same as the full model's when ``T == 0``.
    """
    M, N, K, T = dims
    if min(M, N, K) < 1 or T < 0:
        raise ValueError(f"invalid dimensions {dims}")
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, 0.1, size=(M, K))
    C = rng.normal(0.0, 0.1, size=(1 if shared_users else T + 1, N, K))
    return ModelState(W, C, np.zeros((T + 1, M)), np.zeros((T + 1, N)))


def adam_step(params, grads, moments, step_count: int, config: AdamConfig):
    """One bias-corrected Adam update.

    ``params`` and ``grads`` map names to arrays (or floats); ``moments``
    maps the same names to ``(m, v)`` pairs, or is empty on the first
    step.  Returns new ``(params, moments)``; the inputs are not modified.
    """
    if step_count < 1:
        raise ValueError("step_count starts at 1")
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**step_count
    bc2 = 1.0 - b2**step_count
    new_params, new_moments = {}, {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=float)
        if not np.isfinite(g).all():
            raise DivergedError("diverged gradient")
        m, v = moments.get(name, (0.0, 0.0))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        new_moments[name] = (m, v)
    return new_params, new_moments


def fit(
    state: ModelState,
    objective: Callable[[ModelState], tuple[LossBreakdown, ModelState]],
    adam: AdamConfig,
    frozen: Iterable[str] = (),
    params: Sequence[str] = ("W", "C", "mu", "nu"),
) -> TrainReport:
    """Adam on ``objective`` starting from ``state``.

    Stops after ``adam.max_epochs`` steps, or once the relative change in
    the total loss stays below ``adam.tolerance`` for ``adam.patience``
    consecutive epochs.  ``loss_trace[k]`` is the loss after ``k`` steps.
    """
    frozen = set(frozen)
    free = [p for p in params if p not in frozen]
    state = state.copy()
    moments: dict = {}
    trace: list[float] = []
    quiet = 0
    converged = False
    last_good = None
    epoch = 0
    while True:
        try:
            current, grads = objective(state)
        except DivergedError as exc:
            raise DivergedError(str(exc), last_good) from None
        if not math.isfinite(current.total):
            raise DivergedError("diverged loss", last_good)
        last_good = state
        trace.append(current.total)
        if len(trace) > 1:
            prev = trace[-2]
            rel = abs(prev - current.total) / max(abs(prev), 1e-300)
            quiet = quiet + 1 if rel < adam.tolerance else 0
            if quiet >= adam.patience:
                converged = True
                break
        if epoch >= adam.max_epochs:
            break
        epoch += 1
        try:
            updated, moments = adam_step(
                {p: getattr(state, p) for p in free},
                {p: getattr(grads, p) for p in free},
                moments,
                epoch,
                adam,
            )
        except DivergedError as exc:
            raise DivergedError(str(exc), last_good) from None
        state = replace(state, **updated)
    return TrainReport(epoch, trace, converged, state, current)


def train(
    obs: TimeBinnedObservations,
    graph: SocialGraph | None,
    hp: Hyperparameters,
    adam: AdamConfig,
    *,
    init: ModelState | None = None,
    mask: np.ndarray | None = None,
    frozen: Iterable[str] = (),
) -> TrainReport:
    """Fit the time-varying model to ``obs``."""
    M, N = obs.shape
    if init is None:
        init = init_state((M, N, hp.K, obs.T), adam.seed)
    Y = obs.dense
    L = None if graph is None else graph.laplacian
    if L is not None and L.shape != (N, N):
        raise ValueError("graph does not match the observed users")

    def objective(s):
        ev = evaluate(s, Y, L, hp, mask)
        return ev.loss, ev.grads

    report = fit(init, objective, adam, frozen)
    logger.info(
        "trained %d epochs, loss %.6g -> %.6g (converged=%s)",
        report.epochs_run, report.loss_trace[0], report.loss_trace[-1], report.converged,
    )
    return report


@dataclass
class CVResult:
    best: Hyperparameters
    scores: list[tuple[Hyperparameters, float, list[float]]] = field(default_factory=list)


def cv_masks(obs: TimeBinnedObservations, folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Held-out cells per fold: ``(flat_indices, labels)``.

    Positive cells are split evenly across folds; each fold adds as many
    negative cells drawn without replacement.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    Y = obs.dense.ravel()
    rng = np.random.default_rng(seed)
    pos = rng.permutation(np.flatnonzero(Y > 0))
    neg = np.flatnonzero(Y == 0)
    out = []
    for chunk in np.array_split(pos, folds):
        if len(chunk) == 0:
            raise ValueError("fold too sparse: no positive entries")
        negs = rng.choice(neg, size=min(len(chunk), len(neg)), replace=False)
        cells = np.concatenate([chunk, negs])
        out.append((cells, Y[cells]))
    return out


def cross_validate(
    obs: TimeBinnedObservations,
    graph: SocialGraph | None,
    grid: Sequence[Hyperparameters],
    folds: int,
    seed: int,
    adam: AdamConfig | None = None,
    threshold: float = 0.5,
) -> CVResult:
    """Pick the grid cell with the best mean held-out F1.

    Ties go to the smallest ``(gamma, lambda, tau, beta)``, then to the
    earliest cell in ``grid``.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    adam = adam or AdamConfig(seed=seed)
    masks = cv_masks(obs, folds, seed)
    scores = []
    for hp in grid:
        fold_scores = []
        for cells, labels in masks:
            mask = np.ones(obs.dense.size)
            mask[cells] = 0.0
            report = train(obs, graph, hp, adam, mask=mask.reshape(obs.dense.shape))
            prob = report.final_state.probabilities().ravel()[cells]
            fold_scores.append(f1(prob >= threshold, labels))
        scores.append((hp, float(np.mean(fold_scores)), fold_scores))
    order = sorted(range(len(grid)), key=lambda k: (-scores[k][1], grid[k].key(), k))
    return CVResult(grid[order[0]], scores)


# Flat key=value configuration files.

_HP_KEYS = {"K": "K", "beta": "beta", "gamma": "gamma", "lambda": "lam", "lam": "lam", "tau": "tau"}
_ADAM_KEYS = {f.name: f.name for f in fields(AdamConfig)}


def read_config(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError("expected key=value", str(path), lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _coerce(cls, name, value):
    # Field annotations are strings under postponed evaluation.
    typ = str({f.name: f.type for f in fields(cls)}[name])
    if "None" in typ and str(value).lower() == "none":
        return None
    return int(value) if typ.startswith("int") else float(value)


def configs_from_mapping(
    values: Mapping[str, object],
    hp: Hyperparameters | None = None,
    adam: AdamConfig | None = None,
) -> tuple[Hyperparameters, AdamConfig]:
    """Overlay recognised keys of ``values`` on ``hp`` and ``adam``; others are ignored."""
    hp = hp or Hyperparameters()
    adam = adam or AdamConfig()
    hp_kw = {_HP_KEYS[k]: _coerce(Hyperparameters, _HP_KEYS[k], v) for k, v in values.items() if k in _HP_KEYS}
    adam_kw = {k: _coerce(AdamConfig, k, v) for k, v in values.items() if k in _ADAM_KEYS}
    return replace(hp, **hp_kw), replace(adam, **adam_kw)


def read_grid(path: str | Path, base: Hyperparameters) -> list[Hyperparameters]:
    """One grid cell per non-blank line of whitespace-separated ``key=value`` pairs."""
    grid = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                pairs = dict(tok.split("=", 1) for tok in line.split())
                grid.append(configs_from_mapping(pairs, base)[0])
            except ValueError as exc:
                raise DataFormatError(str(exc), str(path), lineno) from None
    return grid
