"""Share-log ingestion, time binning, social graph and ideology labels.

Input files are UTF-8, tab separated, one record per line:

* events: ``user_id  domain  unix_timestamp``
* edges:  ``user_id  user_id``
* labels: ``domain  code`` with code in -3..3

Blank lines are ignored everywhere.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataFormatError

logger = logging.getLogger(__name__)

TWO_WEEKS = 14 * 24 * 3600
OBS_HEADER = "IDEOTRACE-OBS v1"

LABEL_NAMES = {
    -3: "extreme-left",
    -2: "left",
    -1: "left-center",
    0: "center",
    1: "right-center",
    2: "right",
    3: "extreme-right",
}

_SCHEME = re.compile(r"^[a-z][a-z0-9+.-]*://")


def normalize_domain(raw: str) -> str:
    """Lowercase ``raw`` and strip scheme, ``www.`` prefix and any path."""
    d = raw.strip().lower()
    d = _SCHEME.sub("", d)
    d = re.split(r"[/?#]", d, maxsplit=1)[0]
    if d.startswith("www."):
        d = d[4:]
    return d


@dataclass(frozen=True)
class ShareEvent:
    user_id: str
    domain: str
    timestamp: int

    def __post_init__(self):
        if not self.domain or re.search(r"[/\s]", self.domain):
            raise ValueError(f"invalid domain {self.domain!r}")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")


@dataclass(frozen=True)
class BinningConfig:
    start: int
    end: int
    bin_width: int = TWO_WEEKS
    min_shares_per_bin: int = 4
    max_websites: int | None = None

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("binning requires start < end")
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if self.min_shares_per_bin < 1:
            raise ValueError("min_shares_per_bin must be >= 1")
        if self.max_websites is not None and self.max_websites < 1:
            raise ValueError("max_websites must be >= 1")
        if self.n_bins < 2:
            raise ValueError("binning must produce at least two bins")

    @property
    def n_bins(self) -> int:
        return math.ceil((self.end - self.start) / self.bin_width)

    def bin_of(self, timestamp: int) -> int | None:
        """Half-open bin index of ``timestamp``, None outside ``[start, end)``."""
        if timestamp < self.start or timestamp >= self.end:
            return None
        return (timestamp - self.start) // self.bin_width


@dataclass(frozen=True, eq=False)
class TimeBinnedObservations:
    """Binary website-by-user share indicators, one matrix per time bin.

    Each entry of ``bins`` is an ``(nnz, 2)`` integer array of ``(i, j)``
    coordinates of the ones of ``Y^t`` (website ``i``, user ``j``), sorted
    row-major.
    """

    user_index: tuple[str, ...]
    website_index: tuple[str, ...]
    bins: tuple[np.ndarray, ...]

    def __post_init__(self):
        M, N = self.shape
        for coords in self.bins:
            if coords.ndim != 2 or coords.shape[1] != 2:
                raise ValueError("bin coordinates must have shape (nnz, 2)")
            if len(coords) and (
                coords.min() < 0 or coords[:, 0].max() >= M or coords[:, 1].max() >= N
            ):
                raise ValueError("bin coordinate out of range")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.website_index), len(self.user_index)

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    @property
    def T(self) -> int:
        """Index of the last bin; there are ``T + 1`` bins."""
        return len(self.bins) - 1

    @cached_property
    def dense(self) -> np.ndarray:
        """Stacked ``(T+1, M, N)`` float array of the indicators (read-only)."""
        M, N = self.shape
        Y = np.zeros((self.n_bins, M, N))
        for t, coords in enumerate(self.bins):
            Y[t, coords[:, 0], coords[:, 1]] = 1.0
        Y.flags.writeable = False
        return Y

    def pooled(self) -> np.ndarray:
        """``(M, N)`` indicator of sharing in any bin."""
        return self.dense.max(axis=0)

    @classmethod
    def from_dense(
        cls,
        Y: np.ndarray,
        user_index: Sequence[str] | None = None,
        website_index: Sequence[str] | None = None,
    ) -> TimeBinnedObservations:
        Y = np.asarray(Y)
        if Y.ndim == 2:
            Y = Y[None]
        if not np.isin(Y, (0, 1)).all():
            raise ValueError("observations must be binary")
        _, M, N = Y.shape
        if user_index is None:
            user_index = [f"u{j}" for j in range(N)]
        if website_index is None:
            website_index = [f"w{i}" for i in range(M)]
        if len(user_index) != N or len(website_index) != M:
            raise ValueError("index maps do not match matrix shape")
        bins = tuple(np.argwhere(Yt != 0).astype(np.int64) for Yt in Y)
        return cls(tuple(user_index), tuple(website_index), bins)

    def select_users(self, columns: Sequence[int]) -> TimeBinnedObservations:
        """Observations restricted to ``columns``, in the given order."""
        columns = np.asarray(columns, dtype=int)
        Y = self.dense[:, :, columns]
        users = [self.user_index[j] for j in columns]
        return TimeBinnedObservations.from_dense(Y, users, self.website_index)

    def select_bins(self, stop: int) -> TimeBinnedObservations:
        """The first ``stop`` bins."""
        return TimeBinnedObservations(self.user_index, self.website_index, self.bins[:stop])

    def to_text(self) -> str:
        lines = [OBS_HEADER, f"users\t{len(self.user_index)}"]
        lines += self.user_index
        lines.append(f"websites\t{len(self.website_index)}")
        lines += self.website_index
        lines.append(f"T\t{self.T}")
        for t, coords in enumerate(self.bins):
            lines.append(f"bin\t{t}\t{len(coords)}")
            lines += [f"{i}\t{j}" for i, j in coords]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> TimeBinnedObservations:
        path = str(path)
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        reader = _LineReader(lines, path)
        if reader.next() != OBS_HEADER:
            raise DataFormatError(f"expected header {OBS_HEADER!r}", path, 1)
        users = reader.section("users")
        websites = reader.section("websites")
        T = reader.count("T")
        bins = []
        for t in range(T + 1):
            fields = reader.fields(3)
            if fields[0] != "bin" or fields[1] != str(t):
                reader.fail(f"expected 'bin {t}'")
            nnz = reader.to_int(fields[2])
            coords = np.empty((nnz, 2), dtype=np.int64)
            for k in range(nnz):
                i, j = reader.fields(2)
                coords[k] = reader.to_int(i), reader.to_int(j)
            bins.append(coords)
        try:
            return cls(tuple(users), tuple(websites), tuple(bins))
        except ValueError as exc:
            raise DataFormatError(str(exc), path) from None


class _LineReader:
    def __init__(self, lines, path):
        self.lines = lines
        self.path = path
        self.pos = 0

    def fail(self, message):
        raise DataFormatError(message, self.path, self.pos)

    def next(self) -> str:
        if self.pos >= len(self.lines):
            self.pos += 1
            self.fail("unexpected end of file")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def fields(self, n):
        parts = self.next().split("\t")
        if len(parts) != n:
            self.fail(f"expected {n} tab-separated fields")
        return parts

    def to_int(self, s):
        try:
            return int(s)
        except ValueError:
            self.fail(f"not an integer: {s!r}")

    def count(self, key):
        name, value = self.fields(2)
        if name != key:
            self.fail(f"expected {key!r}")
        return self.to_int(value)

    def section(self, key):
        n = self.count(key)
        return [self.next() for _ in range(n)]


def _rows(path: str | Path) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            yield lineno, line.split("\t")


def read_events(path: str | Path) -> list[ShareEvent]:
    events = []
    for lineno, row in _rows(path):
        if len(row) != 3:
            raise DataFormatError("expected user_id, domain, timestamp", str(path), lineno)
        user, domain, ts = row
        try:
            events.append(ShareEvent(user.strip(), normalize_domain(domain), int(ts)))
        except ValueError as exc:
            raise DataFormatError(str(exc), str(path), lineno) from None
        if not events[-1].user_id:
            raise DataFormatError("empty user_id", str(path), lineno)
    return events


def bin_events(events: Iterable[ShareEvent], config: BinningConfig) -> TimeBinnedObservations:
    """Bin ``events``, apply the activity floor and the popularity cutoff."""
    events = list(events)
    n_bins = config.n_bins
    counts: dict[str, list[int]] = defaultdict(lambda: [0] * n_bins)
    shared: dict[tuple[int, str, str], bool] = {}
    for ev in events:
        t = config.bin_of(ev.timestamp)
        if t is None:
            continue
        counts[ev.user_id][t] += 1
        shared[(t, ev.domain, ev.user_id)] = True

    # The floor counts share events, so it is applied before the
    # website cutoff removes any of them.
    users = sorted(u for u, c in counts.items() if min(c) >= config.min_shares_per_bin)
    user_set = set(users)
    popularity: Counter[str] = Counter()
    for ev in events:
        if ev.user_id in user_set and config.bin_of(ev.timestamp) is not None:
            popularity[ev.domain] += 1
    websites = sorted(popularity, key=lambda d: (-popularity[d], d))
    if config.max_websites is not None:
        websites = websites[: config.max_websites]
    if not users or not websites:
        raise DataFormatError("no qualifying users/websites")

    row = {d: i for i, d in enumerate(websites)}
    col = {u: j for j, u in enumerate(users)}
    per_bin: list[list[tuple[int, int]]] = [[] for _ in range(n_bins)]
    for t, d, u in shared:
        if u in col and d in row:
            per_bin[t].append((row[d], col[u]))
    bins = tuple(
        np.array(sorted(c), dtype=np.int64).reshape(-1, 2) for c in per_bin
    )
    return TimeBinnedObservations(tuple(users), tuple(websites), bins)


def ingest_events(event_file: str | Path, config: BinningConfig) -> TimeBinnedObservations:
    return bin_events(read_events(event_file), config)


@dataclass(frozen=True, eq=False)
class SocialGraph:
    """Undirected, unweighted user graph with Laplacian ``D - A``."""

    n_users: int
    edges: tuple[tuple[int, int], ...]
    skipped_self_loops: int = 0

    def __post_init__(self):
        for j, k in self.edges:
            if not 0 <= j < k < self.n_users:
                raise ValueError(f"invalid edge ({j}, {k})")

    @classmethod
    def from_pairs(cls, n_users: int, pairs: Iterable[tuple[int, int]]) -> SocialGraph:
        """Collapse ``pairs`` into a sorted set of undirected edges."""
        edges = set()
        loops = 0
        for j, k in pairs:
            if j == k:
                loops += 1
                continue
            edges.add((min(j, k), max(j, k)))
        return cls(n_users, tuple(sorted(edges)), loops)

    @cached_property
    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n_users, self.n_users))
        if self.edges:
            e = np.array(self.edges)
            A[e[:, 0], e[:, 1]] = 1.0
            A[e[:, 1], e[:, 0]] = 1.0
        A.flags.writeable = False
        return A

    @cached_property
    def laplacian(self) -> np.ndarray:
        A = self.adjacency
        L = np.diag(A.sum(axis=1)) - A
        L.flags.writeable = False
        return L

    def subgraph(self, nodes: Sequence[int]) -> SocialGraph:
        """Induced subgraph, with nodes renumbered in the order given."""
        remap = {int(v): n for n, v in enumerate(nodes)}
        pairs = [
            (remap[j], remap[k]) for j, k in self.edges if j in remap and k in remap
        ]
        return SocialGraph.from_pairs(len(remap), pairs)

    def to_text(self, user_index: Sequence[str]) -> str:
        return "".join(f"{user_index[j]}\t{user_index[k]}\n" for j, k in self.edges)


def build_graph(edge_file: str | Path, user_index: Sequence[str]) -> SocialGraph:
    """Read a retweet edge list restricted to ``user_index``.

    Pairs naming users outside the index are dropped silently; self-loops
    are skipped and counted in ``skipped_self_loops``.
    """
    col = {u: j for j, u in enumerate(user_index)}
    pairs = []
    loops = 0
    for lineno, row in _rows(edge_file):
        if len(row) != 2 or not row[0].strip() or not row[1].strip():
            raise DataFormatError("expected two user ids", str(edge_file), lineno)
        a, b = row[0].strip(), row[1].strip()
        if a == b:
            loops += 1
            continue
        if a in col and b in col:
            pairs.append((col[a], col[b]))
    if loops:
        logger.warning("skipped %d self-loop rows in %s", loops, edge_file)
    graph = SocialGraph.from_pairs(len(user_index), pairs)
    return SocialGraph(graph.n_users, graph.edges, loops)


@dataclass
class LabelSet:
    website_labels: dict[str, int] = field(default_factory=dict)
    user_ground_truth: dict[str, float] = field(default_factory=dict)

    def name(self, domain: str) -> str:
        return LABEL_NAMES[self.website_labels[domain]]

    def unused(self, website_index: Sequence[str]) -> list[str]:
        """Labeled domains absent from ``website_index``."""
        present = set(website_index)
        return sorted(d for d in self.website_labels if d not in present)

    def codes_for(self, website_index: Sequence[str]) -> np.ndarray:
        """Label codes aligned with ``website_index``; NaN where unlabeled."""
        return np.array(
            [self.website_labels.get(d, np.nan) for d in website_index], dtype=float
        )

    def ground_truth_for(self, user_index: Sequence[str]) -> np.ndarray:
        return np.array(
            [self.user_ground_truth.get(u, np.nan) for u in user_index], dtype=float
        )

    def to_text(self) -> str:
        return "".join(f"{d}\t{c}\n" for d, c in sorted(self.website_labels.items()))


def load_labels(label_file: str | Path) -> LabelSet:
    labels: dict[str, int] = {}
    for lineno, row in _rows(label_file):
        if len(row) != 2:
            raise DataFormatError("expected domain, code", str(label_file), lineno)
        domain = normalize_domain(row[0])
        try:
            code = int(row[1])
        except ValueError:
            raise DataFormatError(f"not an integer code: {row[1]!r}", str(label_file), lineno) from None
        if code not in LABEL_NAMES:
            raise DataFormatError(f"label code {code} outside -3..3", str(label_file), lineno)
        if labels.get(domain, code) != code:
            raise DataFormatError(f"conflicting labels for {domain}", str(label_file), lineno)
        labels[domain] = code
    return LabelSet(labels)
