import math

import numpy as np
import pytest

from ideotrace.data import SocialGraph, TimeBinnedObservations
from ideotrace.model import Hyperparameters, ModelState

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_instance(rng, M, N, K, T, scale=1.0, density=0.3):
    Y = (rng.random((T + 1, M, N)) < density).astype(float)
    Y[0, 0, 0] = 1.0
    obs = TimeBinnedObservations.from_dense(Y)
    pairs = [(j, k) for j in range(N) for k in range(j + 1, N) if rng.random() < 0.5]
    graph = SocialGraph.from_pairs(N, pairs)
    state = ModelState(
        scale * rng.normal(size=(M, K)),
        scale * rng.normal(size=(T + 1, N, K)),
        scale * rng.normal(size=(T + 1, M)),
        scale * rng.normal(size=(T + 1, N)),
    )
    hp = Hyperparameters(
        K=K,
        beta=float(rng.uniform(1.5, 4.0)),
        gamma=float(rng.uniform(0.1, 1.0)),
        lam=float(rng.uniform(0.1, 1.0)),
        tau=float(rng.uniform(0.1, 1.0)),
    )
    return state, obs, graph, hp


def scalar_loss(state, Y, edges, hp):
    """Term-by-term loss with plain Python loops; the graph term sums over edges."""
    W, C, mu, nu = state.W, state.C, state.mu, state.nu
    S = Y.shape[0]
    M, K = W.shape
    N = C.shape[1]
    nll = 0.0
    for t in range(S):
        Ct = C[t if C.shape[0] > 1 else 0]
        for i in range(M):
            for j in range(N):
                z = sum(W[i, k] * Ct[j, k] for k in range(K)) + mu[t, i] + nu[t, j]
                if Y[t, i, j] == 1:
                    nll += hp.beta * math.log1p(math.exp(-z))
                else:
                    nll += math.log1p(math.exp(z))
    l2_w = 0.5 * hp.gamma * sum(W[i, k] ** 2 for i in range(M) for k in range(K))
    l2_c = 0.5 * hp.gamma * sum(
        C[s, j, k] ** 2 for s in range(C.shape[0]) for j in range(N) for k in range(K)
    )
    graph = hp.lam * sum(
        (C[s, j, k] - C[s, l, k]) ** 2 for s in range(C.shape[0]) for j, l in edges for k in range(K)
    )
    temporal = hp.tau * sum(
        (C[s, j, k] - C[s - 1, j, k]) ** 2 for s in range(1, C.shape[0]) for j in range(N) for k in range(K)
    )
    return {"nll": nll, "l2_w": l2_w, "l2_c": l2_c, "graph": graph, "temporal": temporal,
            "total": nll + l2_w + l2_c + graph + temporal}


def finite_difference(f, state, name, index, h=1e-5):
    plus = state.copy()
    minus = state.copy()
    getattr(plus, name)[index] += h
    getattr(minus, name)[index] -= h
    return (f(plus) - f(minus)) / (2 * h)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
