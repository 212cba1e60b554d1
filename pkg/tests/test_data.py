import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ideotrace.data import (
    TWO_WEEKS,
    BinningConfig,
    LabelSet,
    ShareEvent,
    SocialGraph,
    TimeBinnedObservations,
    bin_events,
    build_graph,
    ingest_events,
    load_labels,
    normalize_domain,
)
from ideotrace.errors import DataFormatError

DAY = 24 * 3600


def write_events(path, rows):
    path.write_text("".join(f"{u}\t{d}\t{ts}\n" for u, d, ts in rows), encoding="utf-8")
    return path


class TestDomains:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("https://www.NYTimes.com/2016/10/x.html", "nytimes.com"),
            ("foxnews.com", "foxnews.com"),
            ("http://breitbart.com?q=1", "breitbart.com"),
            ("  WWW.cnn.com/ ", "cnn.com"),
        ],
    )
    def test_normalize(self, raw, expected):
        assert normalize_domain(raw) == expected

    def test_event_validation(self):
        with pytest.raises(ValueError):
            ShareEvent("u", "a/b", 0)
        with pytest.raises(ValueError):
            ShareEvent("u", "a.com", -1)


class TestBinningConfig:
    def test_bins_are_half_open(self):
        cfg = BinningConfig(start=0, end=2 * TWO_WEEKS)
        assert cfg.n_bins == 2
        assert cfg.bin_of(0) == 0
        assert cfg.bin_of(TWO_WEEKS - 1) == 0
        assert cfg.bin_of(TWO_WEEKS) == 1
        assert cfg.bin_of(2 * TWO_WEEKS) is None
        assert cfg.bin_of(-1) is None

    def test_short_last_bin(self):
        assert BinningConfig(start=0, end=TWO_WEEKS + 1).n_bins == 2

    @pytest.mark.parametrize(
        "kw",
        [
            dict(start=5, end=5),
            dict(start=0, end=10, bin_width=0),
            dict(start=0, end=10, bin_width=10),
            dict(start=0, end=100, bin_width=10, min_shares_per_bin=0),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            BinningConfig(**kw)


class TestIngest:
    def test_single_user_single_domain(self, tmp_path):
        rows = [("alice", "a.com", t * TWO_WEEKS + k) for t in range(2) for k in range(4)]
        obs = ingest_events(write_events(tmp_path / "e.tsv", rows),
                            BinningConfig(0, 2 * TWO_WEEKS, min_shares_per_bin=4, max_websites=10))
        assert obs.shape == (1, 1)
        np.testing.assert_array_equal(obs.dense, [[[1.0]], [[1.0]]])

    def test_floor_empties_universe(self, tmp_path):
        rows = [("alice", "a.com", k) for k in range(4)] + [("alice", "a.com", TWO_WEEKS + k) for k in range(3)]
        with pytest.raises(DataFormatError, match="no qualifying users/websites"):
            ingest_events(write_events(tmp_path / "e.tsv", rows), BinningConfig(0, 2 * TWO_WEEKS))

    def test_matches_brute_force_incidence(self, tmp_path):
        rng = np.random.default_rng(7)
        users = ["u1", "u2", "u3"]
        domains = [f"d{k}.org" for k in range(5)]
        rows = []
        for u in users:
            for t in range(3):
                for _ in range(6):
                    rows.append((u, domains[rng.integers(5)], t * TWO_WEEKS + int(rng.integers(TWO_WEEKS))))
        rows.append(("u1", "d0.org", 3 * TWO_WEEKS + 5))  # past the end
        rng.shuffle(rows)
        obs = ingest_events(write_events(tmp_path / "e.tsv", rows), BinningConfig(0, 3 * TWO_WEEKS))
        assert obs.user_index == tuple(users)
        inside = [r for r in rows if r[2] < 3 * TWO_WEEKS]
        pop = {d: sum(r[1] == d for r in inside) for d in domains}
        assert list(obs.website_index) == sorted((d for d in pop if pop[d]), key=lambda d: (-pop[d], d))
        for t, (i, d), (j, u) in itertools.product(
            range(3), enumerate(obs.website_index), enumerate(obs.user_index)
        ):
            hit = any(r[0] == u and r[1] == d and r[2] // TWO_WEEKS == t for r in inside)
            assert obs.dense[t, i, j] == float(hit)

    def test_popularity_cutoff_and_ties(self, tmp_path):
        rows = []
        for t in range(2):
            base = t * TWO_WEEKS
            rows += [("u", "b.com", base + k) for k in range(2)]
            rows += [("u", "a.com", base + 10 + k) for k in range(2)]
            rows += [("u", "c.com", base + 20)]
        obs = ingest_events(write_events(tmp_path / "e.tsv", rows),
                            BinningConfig(0, 2 * TWO_WEEKS, min_shares_per_bin=4, max_websites=2))
        # a and b tie on count, broken by name; c is cut.
        assert obs.website_index == ("a.com", "b.com")
        assert obs.shape == (2, 1)

    def test_malformed_row_reports_line(self, tmp_path):
        rows = [("u", "a.com", k) for k in range(6)]
        text = "".join(f"{u}\t{d}\t{ts}\n" for u, d, ts in rows)
        lines = text.splitlines(keepends=True)
        lines.insert(6, "u\ta.com\tnot-a-number\n")
        path = tmp_path / "e.tsv"
        path.write_text("".join(lines))
        with pytest.raises(DataFormatError) as err:
            ingest_events(path, BinningConfig(0, 2 * TWO_WEEKS))
        assert err.value.lineno == 7
        assert ":7:" in str(err.value)

    def test_deterministic_bytes(self, tmp_path):
        rng = np.random.default_rng(3)
        rows = [(f"u{rng.integers(6)}", f"s{rng.integers(8)}.net", int(rng.integers(3 * TWO_WEEKS)))
                for _ in range(400)]
        path = write_events(tmp_path / "e.tsv", rows)
        cfg = BinningConfig(0, 3 * TWO_WEEKS, max_websites=5)
        assert ingest_events(path, cfg).to_text() == ingest_events(path, cfg).to_text()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.integers(0, 5))
    def test_removing_a_user_keeps_other_columns(self, seed, victim):
        rng = np.random.default_rng(seed)
        events = [
            ShareEvent(f"u{rng.integers(6)}", f"s{rng.integers(5)}.net", int(rng.integers(2 * TWO_WEEKS)))
            for _ in range(150)
        ]
        cfg = BinningConfig(0, 2 * TWO_WEEKS, min_shares_per_bin=3)
        try:
            full = bin_events(events, cfg)
        except DataFormatError:
            return
        reduced_events = [e for e in events if e.user_id != f"u{victim}"]
        try:
            reduced = bin_events(reduced_events, cfg)
        except DataFormatError:
            return
        for j, u in enumerate(reduced.user_index):
            jf = full.user_index.index(u)
            for i, d in enumerate(reduced.website_index):
                if d in full.website_index:
                    i_f = full.website_index.index(d)
                    np.testing.assert_array_equal(reduced.dense[:, i, j], full.dense[:, i_f, jf])
                else:
                    assert not reduced.dense[:, i, j].any()

    def test_every_bin_shares_index_maps(self, tmp_path):
        rows = [("u", f"s{k % 3}.net", t * TWO_WEEKS + k) for t in range(3) for k in range(5)]
        obs = ingest_events(write_events(tmp_path / "e.tsv", rows), BinningConfig(0, 3 * TWO_WEEKS))
        assert all(Y.shape == obs.shape for Y in obs.dense)
        assert set(np.unique(obs.dense)) <= {0.0, 1.0}


class TestObservations:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        obs = TimeBinnedObservations.from_dense((rng.random((3, 4, 5)) < 0.4).astype(float))
        obs.save(tmp_path / "o.txt")
        back = TimeBinnedObservations.load(tmp_path / "o.txt")
        np.testing.assert_array_equal(back.dense, obs.dense)
        assert back.user_index == obs.user_index and back.website_index == obs.website_index
        assert (tmp_path / "o.txt").read_text().startswith("IDEOTRACE-OBS v1\n")

    def test_bad_header(self, tmp_path):
        (tmp_path / "o.txt").write_text("SOMETHING ELSE\n")
        with pytest.raises(DataFormatError):
            TimeBinnedObservations.load(tmp_path / "o.txt")

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            TimeBinnedObservations.from_dense(np.full((1, 2, 2), 2.0))

    def test_selections(self):
        Y = np.arange(2 * 3 * 4).reshape(2, 3, 4) % 2
        obs = TimeBinnedObservations.from_dense(Y.astype(float))
        np.testing.assert_array_equal(obs.select_users([3, 1]).dense, Y[:, :, [3, 1]])
        np.testing.assert_array_equal(obs.select_bins(1).dense, Y[:1])
        np.testing.assert_array_equal(obs.pooled(), Y.max(axis=0))


class TestGraph:
    def test_path_graph(self):
        L = SocialGraph.from_pairs(3, [(0, 1), (1, 2)]).laplacian
        np.testing.assert_array_equal(L, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])

    def test_empty(self, tmp_path):
        (tmp_path / "g.tsv").write_text("")
        g = build_graph(tmp_path / "g.tsv", ["a", "b"])
        np.testing.assert_array_equal(g.laplacian, np.zeros((2, 2)))

    def test_duplicates_and_direction_collapse(self, tmp_path):
        (tmp_path / "g.tsv").write_text("a\tb\na\tb\nb\ta\n")
        g = build_graph(tmp_path / "g.tsv", ["a", "b"])
        assert len(g.edges) == 1
        assert g.laplacian[0, 0] == 1

    def test_self_loops_and_unknown_users(self, tmp_path, caplog):
        (tmp_path / "g.tsv").write_text("a\ta\nb\tzed\na\tb\n")
        with caplog.at_level(logging.WARNING):
            g = build_graph(tmp_path / "g.tsv", ["a", "b"])
        assert g.skipped_self_loops == 1
        assert len(g.edges) == 1
        assert "self-loop" in caplog.text

    def test_malformed_line(self, tmp_path):
        (tmp_path / "g.tsv").write_text("a\tb\nlonely\n")
        with pytest.raises(DataFormatError) as err:
            build_graph(tmp_path / "g.tsv", ["a", "b"])
        assert err.value.lineno == 2

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 9), st.integers(1, 3), st.integers(0, 2**31))
    def test_laplacian_properties(self, n, K, seed):
        rng = np.random.default_rng(seed)
        pairs = [(j, k) for j in range(n) for k in range(j + 1, n) if rng.random() < 0.4]
        g = SocialGraph.from_pairs(n, pairs)
        L = g.laplacian
        np.testing.assert_array_equal(L, L.T)
        np.testing.assert_array_equal(L.sum(axis=1), 0)
        off = L[~np.eye(n, dtype=bool)]
        assert set(np.unique(off)) <= {0.0, -1.0}
        np.testing.assert_array_equal(np.diag(L), g.adjacency.sum(axis=1))
        C = rng.normal(size=(n, K))
        edge_sum = sum(np.sum((C[j] - C[k]) ** 2) for j, k in g.edges)
        assert np.trace(C.T @ L @ C) == pytest.approx(edge_sum, rel=1e-12, abs=1e-12)

    def test_subgraph(self):
        g = SocialGraph.from_pairs(4, [(0, 1), (1, 2), (2, 3)])
        sub = g.subgraph([1, 2, 3])
        assert sorted(sub.edges) == [(0, 1), (1, 2)]


class TestLabels:
    def test_codes(self, tmp_path):
        (tmp_path / "l.tsv").write_text("foxnews.com\t2\nhttps://www.NYTimes.com\t-1\n")
        labels = load_labels(tmp_path / "l.tsv")
        assert labels.name("foxnews.com") == "right"
        assert labels.name("nytimes.com") == "left-center"
        codes = labels.codes_for(["nytimes.com", "other.org"])
        assert codes[0] == -1 and np.isnan(codes[1])
        assert labels.unused(["nytimes.com"]) == ["foxnews.com"]

    def test_empty(self, tmp_path):
        (tmp_path / "l.tsv").write_text("")
        assert load_labels(tmp_path / "l.tsv").website_labels == {}

    @pytest.mark.parametrize("text", ["a.com\t4\n", "a.com\t1\na.com\t2\n", "a.com\tleft\n"])
    def test_errors(self, tmp_path, text):
        (tmp_path / "l.tsv").write_text(text)
        with pytest.raises(DataFormatError):
            load_labels(tmp_path / "l.tsv")

    def test_consistent_duplicates_allowed(self, tmp_path):
        (tmp_path / "l.tsv").write_text("a.com\t1\na.com\t1\n")
        assert load_labels(tmp_path / "l.tsv").website_labels == {"a.com": 1}

    def test_round_trip(self, tmp_path):
        labels = LabelSet({"b.com": -3, "a.com": 0})
        (tmp_path / "l.tsv").write_text(labels.to_text())
        assert load_labels(tmp_path / "l.tsv").website_labels == labels.website_labels
