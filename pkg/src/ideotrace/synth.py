"""Synthetic share logs with planted ideologies, homophily and polarization drift.

All randomness comes from one ``numpy.random.Generator`` seeded with
``config.seed``, drawn in this order:

1. website sides (a permutation), website offsets, base website biases,
   per-bin website bias jitter;
2. user clusters (a permutation);
3. user rounds: in round 0 every user, in later rounds only the users
   that missed the activity floor (ascending index) draw their offset,
   base bias, per-bin bias jitter and their uniforms for ``Y``;
4. graph uniforms for the upper triangle, row-major;
5. event timestamps (only when files are written).

Websites are finally re-ordered by popularity (ties by name) so the
emitted files ingest back to the same index maps.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._textio import format_blocks
from .data import TWO_WEEKS, LabelSet, SocialGraph, TimeBinnedObservations
from .model import ModelState, logistic

TRUTH_HEADER = "IDEOTRACE-TRUTH v1"
DEFAULT_START = 1472688000  # 2016-09-01T00:00:00Z


@dataclass(frozen=True)
class SynthConfig:
    M: int = 50
    N: int = 200
    K: int = 2
    T: int = 4
    cluster_fraction: float = 0.5
    separation: float = 4.0
    drift_per_bin: float = 0.0
    intra_edge_prob: float = 0.05
    inter_edge_prob: float = 0.005
    bias_spread: float = 0.5
    seed: int = 0
    user_spread: float = 0.5
    website_spread: float = 0.5
    website_bias: float = -2.0
    user_bias: float = -1.0
    bin_jitter: float = 0.1
    min_shares_per_bin: int = 4
    max_attempts: int = 100

    def __post_init__(self):
        if not 0 < self.cluster_fraction < 1:
            raise ValueError("cluster_fraction must lie in (0, 1)")
        if self.intra_edge_prob < self.inter_edge_prob:
            raise ValueError("intra_edge_prob must be >= inter_edge_prob")
        if not 0 <= self.inter_edge_prob <= self.intra_edge_prob <= 1:
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.separation <= 0:
            raise ValueError("separation must be positive")
        if min(self.M, self.N, self.K) < 1 or self.T < 0:
            raise ValueError("invalid dimensions")


@dataclass(eq=False)
class SynthTruth:
    config: SynthConfig
    state: ModelState  # planted W, C^t, mu^t, nu^t
    user_cluster: np.ndarray  # 1 = conservative, 0 = liberal
    website_side: np.ndarray  # +1 conservative, -1 liberal
    obs: TimeBinnedObservations
    graph: SocialGraph
    labels: LabelSet

    def planted_distance_pct(self) -> np.ndarray:
        """Cluster-mean distance growth of the planted ``C^t``, in percent of bin 0."""
        C = self.state.C
        cons = self.user_cluster == 1
        d = np.linalg.norm(C[:, cons].mean(axis=1) - C[:, ~cons].mean(axis=1), axis=1)
        return 100.0 * (d - d[0]) / d[0]

    def to_text(self) -> str:
        s = self.state
        M, N, K, T = s.dims
        blocks = [("W", s.W)]
        blocks += [(f"C{t}", s.C[t]) for t in range(T + 1)]
        blocks += [(f"mu{t}", s.mu[t]) for t in range(T + 1)]
        blocks += [(f"nu{t}", s.nu[t]) for t in range(T + 1)]
        blocks += [
            ("user_cluster", self.user_cluster),
            ("website_side", self.website_side),
            ("distance_pct", self.planted_distance_pct()),
        ]
        return format_blocks(TRUTH_HEADER, {"M": M, "N": N, "K": K, "T": T}, blocks)


def _label_codes(W: np.ndarray, separation: float) -> np.ndarray:
    return np.clip(np.rint(2.0 * W[:, 0] / (separation / 2.0)), -3, 3).astype(int)


def generate(config: SynthConfig) -> SynthTruth:
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    M, N, K, T = cfg.M, cfg.N, cfg.K, cfg.T
    half = cfg.separation / 2.0
    e1 = np.zeros(K)
    e1[0] = 1.0

    side = np.where(rng.permutation(M) < M // 2, -1.0, 1.0)
    W = side[:, None] * half * e1 + cfg.website_spread * rng.normal(size=(M, K))
    mu_base = cfg.website_bias + cfg.bias_spread * rng.normal(size=M)
    mu = mu_base + cfg.bin_jitter * rng.normal(size=(T + 1, M))

    n_cons = int(round(cfg.cluster_fraction * N))
    cluster = (rng.permutation(N) < n_cons).astype(int)
    user_side = np.where(cluster == 1, 1.0, -1.0)
    radius = half + cfg.separation * cfg.drift_per_bin * np.arange(T + 1)  # (T+1,)
    centers = radius[:, None, None] * user_side[None, :, None] * e1  # (T+1, N, K)

    offsets = np.zeros((N, K))
    nu = np.zeros((T + 1, N))
    Y = np.zeros((T + 1, M, N))
    todo = np.arange(N)
    for _ in range(cfg.max_attempts):
        n = len(todo)
        offsets[todo] = cfg.user_spread * rng.normal(size=(n, K))
        nu_base = cfg.user_bias + cfg.bias_spread * rng.normal(size=n)
        nu[:, todo] = nu_base + cfg.bin_jitter * rng.normal(size=(T + 1, n))
        u = rng.random(size=(T + 1, M, n))
        C_todo = centers[:, todo] + offsets[todo]
        logits = W @ np.swapaxes(C_todo, 1, 2) + mu[:, :, None] + nu[:, None, todo]
        Y[:, :, todo] = (u < logistic(logits)).astype(float)
        shares = Y[:, :, todo].sum(axis=1).min(axis=0)
        todo = todo[shares < cfg.min_shares_per_bin]
        if len(todo) == 0:
            break
    else:
        raise ValueError("activity floor infeasible; raise biases")

    C = centers + offsets[None]
    popularity = Y.sum(axis=(0, 2))
    if (popularity == 0).any():
        raise ValueError("website with no shares; raise biases")

    upper = rng.random(size=(N, N))
    same = cluster[:, None] == cluster[None, :]
    p_edge = np.where(same, cfg.intra_edge_prob, cfg.inter_edge_prob)
    jj, kk = np.nonzero(np.triu(upper < p_edge, k=1))
    graph = SocialGraph.from_pairs(N, zip(jj.tolist(), kk.tolist()))

    names = [f"site{i:03d}.example" for i in range(M)]
    order = sorted(range(M), key=lambda i: (-popularity[i], names[i]))
    W, mu, side, Y = W[order], mu[:, order], side[order], Y[:, order]
    websites = [names[i] for i in order]
    users = [f"u{j:05d}" for j in range(N)]

    obs = TimeBinnedObservations.from_dense(Y, users, websites)
    labels = LabelSet(dict(zip(websites, _label_codes(W, cfg.separation).tolist())))
    state = ModelState(W, C, mu, nu)
    return SynthTruth(cfg, state, cluster, side, obs, graph, labels)


def write_files(
    truth: SynthTruth,
    out_dir: str | Path,
    start: int = DEFAULT_START,
    bin_width: int = TWO_WEEKS,
) -> dict[str, Path]:
    """Write ingestion-format events, edges and labels plus the truth sidecar.

    Returns the paths by role.  ``ingest.cfg`` holds a binning config that
    reproduces ``truth.obs`` from ``events.tsv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([truth.config.seed, 1])
    obs = truth.obs
    events = []
    for t, coords in enumerate(obs.bins):
        offsets = rng.integers(0, bin_width, size=len(coords))
        for (i, j), off in zip(coords, offsets):
            events.append((start + t * bin_width + int(off), obs.user_index[j], obs.website_index[i]))
    events.sort()
    paths = {
        "events": out / "events.tsv",
        "edges": out / "edges.tsv",
        "labels": out / "labels.tsv",
        "truth": out / "truth.txt",
        "truth_obs": out / "truth_obs.txt",
        "ingest_config": out / "ingest.cfg",
        "synth_config": out / "synth.cfg",
    }
    paths["events"].write_text("".join(f"{u}\t{d}\t{ts}\n" for ts, u, d in events), encoding="utf-8")
    paths["edges"].write_text(truth.graph.to_text(obs.user_index), encoding="utf-8")
    paths["labels"].write_text(truth.labels.to_text(), encoding="utf-8")
    paths["truth"].write_text(truth.to_text(), encoding="utf-8")
    obs.save(paths["truth_obs"])
    paths["ingest_config"].write_text(
        f"start={start}\nend={start + obs.n_bins * bin_width}\nbin_width={bin_width}\n"
        f"min_shares_per_bin={truth.config.min_shares_per_bin}\nmax_websites={obs.shape[0]}\n",
        encoding="utf-8",
    )
    paths["synth_config"].write_text(
        "".join(f"{k}={v}\n" for k, v in asdict(truth.config).items()), encoding="utf-8"
    )
    return paths
