"""Ground truth, recovery metrics, held-out prediction and polarization tracing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .baselines import RaschState, StaticMFState, rasch_objective, static_hyperparameters
from .data import SocialGraph, TimeBinnedObservations
from .model import Hyperparameters, ModelState, evaluate, logistic
from .optim import AdamConfig, fit
from .stats import dependent_t_test, f1, pearson, spearman

LIBERAL = "liberal"
CONSERVATIVE = "conservative"


def pca_project(X: np.ndarray, dims: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Project the rows of ``X`` onto its top principal component.

    Returns ``(scores, component)``.  ``component`` is the unit eigenvector
    of the sample covariance with the largest eigenvalue, signed so that
    its largest-magnitude coordinate is positive.
    """
    if dims != 1:
        raise NotImplementedError("only one-dimensional projections are supported")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two rows")
    if not np.isfinite(X).all():
        raise ValueError("non-finite input")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(1.0, float(np.abs(X).max()) ** 2)
    if evals[-1] <= 1e-14 * scale:
        raise ValueError("degenerate spectrum: zero variance")
    v = evecs[:, -1]
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return Xc @ v, v


def website_axis(W: np.ndarray, codes: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """1-D website scores, flipped to agree with label codes when enough are known.

    ``codes`` is aligned with the rows of ``W``; NaN marks unlabeled sites.
    """
    scores, comp = pca_project(W)
    if codes is not None:
        known = ~np.isnan(codes)
        if known.sum() >= 3 and np.ptp(codes[known]) > 0:
            if spearman(scores[known], codes[known]) < 0:
                scores, comp = -scores, -comp
    return scores, comp


def user_axis(C: np.ndarray, reference: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Scores ``(T+1, N)`` of every ``c_j^t`` on one axis fit to all bins at once.

    With ``reference`` (e.g. the website component) the axis is flipped to
    point the same way.
    """
    S, N, K = C.shape
    scores, comp = pca_project(C.reshape(S * N, K))
    if reference is not None and float(comp @ reference) < 0:
        scores, comp = -scores, -comp
    return scores.reshape(S, N), comp


@dataclass
class UserGroundTruth:
    per_bin: np.ndarray  # (T+1, N), NaN where the user shared nothing
    pooled: np.ndarray  # (N,)

    def as_map(self, user_index: Sequence[str]) -> dict[str, float]:
        return {u: float(v) for u, v in zip(user_index, self.pooled) if not math.isnan(v)}


def derive_user_ground_truth(
    W: np.ndarray, obs: TimeBinnedObservations, scores: np.ndarray | None = None
) -> UserGroundTruth:
    """Mean website score over the websites each user shared.

    ``scores`` defaults to the PCA projection of ``W``.  The pooled value
    averages over every (bin, website) share.
    """
    if scores is None:
        scores = pca_project(W)[0]
    Y = obs.dense
    if Y.shape[1] != len(scores):
        raise ValueError("website scores do not match observations")
    sums = np.einsum("tmn,m->tn", Y, scores)
    counts = Y.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_bin = np.where(counts > 0, sums / counts, np.nan)
        total = counts.sum(axis=0)
        pooled = np.where(total > 0, sums.sum(axis=0) / total, np.nan)
    return UserGroundTruth(per_bin, pooled)


@dataclass
class RecoveryMetrics:
    website_spearman: float | None
    user_pearson_per_bin: list[float]
    user_pearson_mean: float
    user_pearson_pooled: float


def recovery_metrics(
    state: ModelState, obs: TimeBinnedObservations, codes: np.ndarray | None = None
) -> RecoveryMetrics:
    """Correlations of the estimates against label-derived ground truth.

    ``website_spearman`` is None when fewer than three distinct labeled
    websites are available.
    """
    w_scores, w_comp = website_axis(state.W, codes)
    rho = None
    if codes is not None:
        known = ~np.isnan(codes)
        if known.sum() >= 3 and np.ptp(codes[known]) > 0:
            rho = spearman(w_scores[known], codes[known])
    gt = derive_user_ground_truth(state.W, obs, w_scores)
    u_scores, _ = user_axis(state.C, w_comp)
    per_bin = []
    for t in range(obs.n_bins):
        ok = ~np.isnan(gt.per_bin[t])
        per_bin.append(pearson(u_scores[min(t, len(u_scores) - 1), ok], gt.per_bin[t, ok]))
    ok = ~np.isnan(gt.pooled)
    pooled = pearson(u_scores.mean(axis=0)[ok], gt.pooled[ok])
    return RecoveryMetrics(rho, per_bin, float(np.mean(per_bin)), pooled)


@dataclass
class KMeansResult:
    assignment: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)


def _sq_dist(X, centers):
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _seed_centers(X, k, rng):
    first = int(rng.integers(len(X)))
    centers = [X[first]]
    for _ in range(1, k):
        d2 = _sq_dist(X, np.array(centers)).min(axis=1)
        centers.append(X[int(rng.choice(len(X), p=d2 / d2.sum()))])
    return np.array(centers)


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from ``centers``; ``history`` holds the objective after each assignment.

    A cluster left empty is re-seeded at the point farthest from its
    current centroid.
    """
    centers = centers.astype(float).copy()
    k = len(centers)
    assignment = None
    history = []
    for _ in range(max_iter):
        d2 = _sq_dist(X, centers)
        new = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(X)), new].sum()))
        if assignment is not None and np.array_equal(new, assignment):
            break
        assignment = new
        for c in range(k):
            members = assignment == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
            else:
                own = d2[np.arange(len(X)), assignment]
                far = int(np.argmax(own))
                centers[c] = X[far]
                assignment[far] = c
    d2 = _sq_dist(X, centers)
    inertia = float(d2[np.arange(len(X)), assignment].sum())
    return KMeansResult(assignment, centers, inertia, history)


def kmeans2(points: np.ndarray, seed: int, n_init: int = 20, max_iter: int = 300) -> KMeansResult:
    """Two-cluster k-means with D^2 seeding and ``n_init`` restarts.

    The restart with the lowest within-cluster sum of squares wins; ties
    go to the earliest restart.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least two points")
    if np.all(X == X[0]):
        raise ValueError("degenerate clustering: all points identical")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        result = lloyd(X, _seed_centers(X, 2, rng), max_iter)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


@dataclass
class PolarizationTrace:
    cluster_assignment: np.ndarray  # "liberal" / "conservative" per user
    distance_pct: np.ndarray
    lib_shift_pct: np.ndarray
    cons_shift_pct: np.ndarray
    t_test_p_lib: float
    t_test_p_cons: float
    t_stat_lib: float = math.nan
    t_stat_cons: float = math.nan
    distances: np.ndarray | None = None
    projection: np.ndarray | None = None

    def distance_text(self) -> str:
        rows = [f"{t}\t{format(v, '.17g')}" for t, v in enumerate(self.distance_pct)]
        return "bin\tdistance_pct\n" + "".join(r + "\n" for r in rows)

    def shift_text(self) -> str:
        rows = [
            f"{t}\t{format(a, '.17g')}\t{format(b, '.17g')}"
            for t, (a, b) in enumerate(zip(self.lib_shift_pct, self.cons_shift_pct))
        ]
        return "bin\tliberal_shift_pct\tconservative_shift_pct\n" + "".join(r + "\n" for r in rows)

    def ttest_text(self) -> str:
        f = lambda x: format(x, ".17g")
        return (
            "cluster\tt_statistic\tp_value\n"
            f"{LIBERAL}\t{f(self.t_stat_lib)}\t{f(self.t_test_p_lib)}\n"
            f"{CONSERVATIVE}\t{f(self.t_stat_cons)}\t{f(self.t_test_p_cons)}\n"
        )


def _paired(before, after):
    if len(before) < 2:
        return math.nan, math.nan
    try:
        return dependent_t_test(before, after)
    except ValueError:
        return math.nan, math.nan


def polarization_trace(
    C: np.ndarray,
    assignment: np.ndarray,
    ground_truth: np.ndarray | None = None,
    reference_axis: np.ndarray | None = None,
) -> PolarizationTrace:
    """Cluster-distance growth and per-cluster shift towards the extremes.

    ``assignment`` splits users into two clusters (0/1, from :func:`kmeans2`
    at bin 0).  The cluster with the lower mean ``ground_truth`` is named
    liberal; without ground truth the lower mean score on the common 1-D
    axis is used.  The paired t-tests compare each cluster's per-user
    scores on that axis at bin 0 and at the last bin.
    """
    C = np.asarray(C, dtype=float)
    assignment = np.asarray(assignment)
    clusters = np.unique(assignment)
    if len(clusters) != 2:
        raise ValueError("assignment must contain exactly two clusters")
    scores, _ = user_axis(C, reference_axis)
    a, b = (assignment == clusters[0]), (assignment == clusters[1])
    if ground_truth is not None and not np.isnan(ground_truth[a]).all() and not np.isnan(ground_truth[b]).all():
        lower_is_a = np.nanmean(ground_truth[a]) <= np.nanmean(ground_truth[b])
    else:
        lower_is_a = scores[0, a].mean() <= scores[0, b].mean()
    lib, cons = (a, b) if lower_is_a else (b, a)
    names = np.where(lib, LIBERAL, CONSERVATIVE)

    d = np.linalg.norm(C[:, cons].mean(axis=1) - C[:, lib].mean(axis=1), axis=1)
    if d[0] <= 1e-12 * max(1.0, float(np.abs(C).max())):
        raise ValueError("coincident clusters at t=0")
    distance_pct = 100.0 * (d - d[0]) / d[0]

    center0 = scores[0].mean()

    def shift(members):
        m = scores[:, members].mean(axis=1)
        offset = m[0] - center0
        if offset == 0:
            raise ValueError("cluster mean coincides with the global center at t=0")
        return 100.0 * np.sign(offset) * (m - m[0]) / abs(offset) + 0.0  # no negative zeros

    T = len(C) - 1
    t_lib, p_lib = _paired(scores[0, lib], scores[T, lib]) if T > 0 else (math.nan, math.nan)
    t_cons, p_cons = _paired(scores[0, cons], scores[T, cons]) if T > 0 else (math.nan, math.nan)
    return PolarizationTrace(
        names, distance_pct, shift(lib), shift(cons), p_lib, p_cons, t_lib, t_cons, d, scores
    )


# Held-out users: W and mu stay fixed at their training values.


@dataclass
class PredictionResult:
    per_bin: list[float]
    pooled: float
    probabilities: np.ndarray  # (T+1, M, N) predicted share probabilities

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_bin))

    @property
    def std(self) -> float:
        return float(np.std(self.per_bin))


def _score(prob: np.ndarray, Y: np.ndarray, threshold: float) -> PredictionResult:
    pred = prob >= threshold
    per_bin = [f1(pred[t], Y[t]) for t in range(len(Y))]
    return PredictionResult(per_bin, f1(pred, Y), prob)


def _check_websites(M, obs_val, website_index):
    if website_index is not None and tuple(website_index) != tuple(obs_val.website_index):
        raise ValueError("validation website index differs from training")
    if obs_val.shape[0] != M:
        raise ValueError("validation website index differs from training")


def _check_threshold(threshold):
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")


def predict_unobserved_users(
    trained: ModelState,
    obs_val: TimeBinnedObservations,
    graph_val: SocialGraph | None,
    hp: Hyperparameters,
    adam: AdamConfig,
    threshold: float = 0.5,
    website_index: Sequence[str] | None = None,
) -> PredictionResult:
    """Predict each bin of ``obs_val`` from the bins before it.

    Bin 0 uses the training means of ``C^0`` and ``nu^0`` for every user.
    For bin ``t > 0`` the users' ``C`` and ``nu`` are fit on bins ``< t``
    (starting from the training means) and the estimates for bin ``t-1``
    are carried forward, combined with the trained ``mu^t``.
    """
    _check_threshold(threshold)
    M, _, K, T = trained.dims
    _check_websites(M, obs_val, website_index)
    if obs_val.T != T:
        raise ValueError("validation bins differ from training")
    N = obs_val.shape[1]
    W, mu = trained.W, trained.mu
    c_mean = trained.C.mean(axis=1)  # (T+1, K)
    nu_mean = trained.nu.mean(axis=1)  # (T+1,)
    Y = obs_val.dense
    L = None if graph_val is None else graph_val.laplacian
    prob = np.empty_like(Y)
    prob[0] = logistic((W @ c_mean[0] + mu[0])[:, None] + nu_mean[0] + np.zeros((1, N)))
    for t_pred in range(1, T + 1):
        init = ModelState(
            W,
            np.repeat(c_mean[:t_pred, None, :], N, axis=1),
            mu[:t_pred],
            np.repeat(nu_mean[:t_pred, None], N, axis=1),
        )
        Ysub = Y[:t_pred]

        def objective(s, Ysub=Ysub):
            ev = evaluate(s, Ysub, L, hp)
            return ev.loss, ev.grads

        fitted = fit(init, objective, adam, frozen=("W", "mu")).final_state
        c, nu = fitted.C[t_pred - 1], fitted.nu[t_pred - 1]
        prob[t_pred] = logistic(W @ c.T + mu[t_pred][:, None] + nu[None, :])
    return _score(prob, Y, threshold)


def predict_unobserved_static(
    trained: StaticMFState,
    obs_val: TimeBinnedObservations,
    hp: Hyperparameters,
    adam: AdamConfig,
    threshold: float = 0.5,
    website_index: Sequence[str] | None = None,
) -> PredictionResult:
    """Same protocol as :func:`predict_unobserved_users` for the static model."""
    _check_threshold(threshold)
    M = trained.W.shape[0]
    _check_websites(M, obs_val, website_index)
    T = trained.mu.shape[0] - 1
    if obs_val.T != T:
        raise ValueError("validation bins differ from training")
    N = obs_val.shape[1]
    W, mu = trained.W, trained.mu
    c_mean = trained.C.mean(axis=0)
    nu_mean = trained.nu.mean(axis=1)
    Y = obs_val.dense
    shp = static_hyperparameters(hp)
    prob = np.empty_like(Y)
    prob[0] = logistic((W @ c_mean + mu[0])[:, None] + nu_mean[0] + np.zeros((1, N)))
    for t_pred in range(1, T + 1):
        init = ModelState(
            W,
            np.repeat(c_mean[None, None, :], N, axis=1),
            mu[:t_pred],
            np.repeat(nu_mean[:t_pred, None], N, axis=1),
        )
        Ysub = Y[:t_pred]

        def objective(s, Ysub=Ysub):
            ev = evaluate(s, Ysub, None, shp)
            return ev.loss, ev.grads

        fitted = fit(init, objective, adam, frozen=("W", "mu")).final_state
        prob[t_pred] = logistic(
            W @ fitted.C[0].T + mu[t_pred][:, None] + fitted.nu[t_pred - 1][None, :]
        )
    return _score(prob, Y, threshold)


def predict_unobserved_rasch(
    trained: RaschState,
    obs_val: TimeBinnedObservations,
    adam: AdamConfig,
    threshold: float = 0.5,
    website_index: Sequence[str] | None = None,
) -> PredictionResult:
    """Held-out protocol for the Rasch model; users' ``nu`` is fit on the pooled earlier bins."""
    _check_threshold(threshold)
    M = len(trained.mu)
    _check_websites(M, obs_val, website_index)
    N = obs_val.shape[1]
    Y = obs_val.dense
    nu_mean = float(trained.nu.mean())
    prob = np.empty_like(Y)
    prob[0] = RaschState(trained.alpha, trained.mu, np.full(N, nu_mean)).probabilities()
    for t_pred in range(1, obs_val.n_bins):
        pooled = Y[:t_pred].max(axis=0)
        init = RaschState(trained.alpha, trained.mu, np.full(N, nu_mean))
        fitted = fit(
            init, rasch_objective(pooled), adam, frozen=("alpha", "mu"), params=("alpha", "mu", "nu")
        ).final_state
        prob[t_pred] = fitted.probabilities()
    return _score(prob, Y, threshold)
