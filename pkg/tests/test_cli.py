"""Texmex ingestion, the command surface, and bench report arithmetic."""

import json
import struct

import numpy as np
import pytest

from bplusann import Metric, brute_force_knn
from bplusann.cli import main, temporal_sort
from bplusann.errors import FormatError, UsageError
from bplusann.texmex import ingest, read_ivecs, write_fvecs, write_ivecs

from helpers import clustered_data

EUC = Metric.EUCLIDEAN


class TestIngest:
    def test_hand_encoded_fvecs_record(self, tmp_path):
        # [dim=2 le] [1.0f] [2.0f]
        path = tmp_path / "one.fvecs"
        path.write_bytes(bytes.fromhex("02000000" + "0000803f" + "00000040"))
        vset = ingest(path)
        assert (vset.count, vset.dim) == (1, 2)
        np.testing.assert_array_equal(vset.data[0], [1.0, 2.0])

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.fvecs"
        path.write_bytes(b"")
        vset = ingest(path)
        assert vset.count == 0

    def test_bvecs_widening_exact(self, tmp_path):
        path = tmp_path / "bytes.bvecs"
        payload = struct.pack("<i", 4) + bytes([0, 1, 128, 255])
        path.write_bytes(payload * 3)
        vset = ingest(path)
        assert (vset.count, vset.dim) == (3, 4)
        np.testing.assert_array_equal(vset.data[1], [0.0, 1.0, 128.0, 255.0])

    def test_misaligned_size_rejected(self, tmp_path):
        path = tmp_path / "bad.fvecs"
        path.write_bytes(bytes.fromhex("02000000" + "0000803f"))  # truncated
        with pytest.raises(FormatError):
            ingest(path)

    def test_inconsistent_dim_rejected(self, tmp_path):
        path = tmp_path / "mixed.fvecs"
        rec1 = struct.pack("<i", 2) + struct.pack("<2f", 1.0, 2.0)
        rec2 = struct.pack("<i", 1) + struct.pack("<2f", 3.0, 4.0)  # lies about dim
        path.write_bytes(rec1 + rec2)
        with pytest.raises(FormatError):
            ingest(path)

    def test_fvecs_round_trip_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        data = rng.normal(size=(17, 5)).astype(np.float32)
        src = tmp_path / "src.fvecs"
        write_fvecs(src, data)
        blob = src.read_bytes()
        vset = ingest(src)
        dst = tmp_path / "dst.fvecs"
        write_fvecs(dst, vset.data)
        assert dst.read_bytes() == blob

    def test_ivecs_round_trip(self, tmp_path):
        rows = np.arange(24, dtype=np.int32).reshape(4, 6)
        path = tmp_path / "gt.ivecs"
        write_ivecs(path, rows)
        np.testing.assert_array_equal(read_ivecs(path), rows)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """A small dataset + query set on disk, plus a built index."""
    root = tmp_path_factory.mktemp("corpus")
    data = clustered_data(3000, dim=8, centers=8, seed=1)
    rng = np.random.default_rng(2)
    queries = data[rng.choice(3000, size=40, replace=False)] + rng.normal(
        scale=0.05, size=(40, 8)
    ).astype(np.float32)
    write_fvecs(root / "base.fvecs", data)
    write_fvecs(root / "queries.fvecs", queries.astype(np.float32))
    rc = main(
        [
            "build",
            "--dataset", str(root / "base.fvecs"),
            "--out", str(root / "tree.bin"),
            "--tau", "64", "--kappa-leaf", "64", "--kappa-inner", "8",
            "--d-edge", "6", "--s-leaf", "3", "--seed", "7",
        ]
    )
    assert rc == 0
    return root, data, queries.astype(np.float32)


class TestCommands:
    def test_groundtruth_matches_independent_sort(self, corpus, tmp_path):
        root, data, queries = corpus
        out = tmp_path / "gt.ivecs"
        rc = main(
            [
                "groundtruth",
                "--dataset", str(root / "base.fvecs"),
                "--queries", str(root / "queries.fvecs"),
                "--k", "10", "--out", str(out),
            ]
        )
        assert rc == 0
        rows = read_ivecs(out)
        assert rows.shape == (40, 10)
        # second implementation: plain argsort over squared distances
        ref = data.astype(np.float64)
        for i, q in enumerate(queries):
            d = ((ref - q.astype(np.float64)) ** 2).sum(axis=1)
            want = np.lexsort((np.arange(len(ref)), d))[:10]
            np.testing.assert_array_equal(rows[i], want)

    def test_groundtruth_self_query_row(self, corpus, tmp_path):
        root, data, _ = corpus
        qfile = tmp_path / "self.fvecs"
        write_fvecs(qfile, data[:3])
        out = tmp_path / "self_gt.ivecs"
        main(["groundtruth", "--dataset", str(root / "base.fvecs"),
              "--queries", str(qfile), "--k", "5", "--out", str(out)])
        rows = read_ivecs(out)
        assert [rows[i][0] for i in range(3)] == [0, 1, 2]

    def test_verify_passes_on_built_index(self, corpus, capsys):
        root, _, _ = corpus
        rc = main(["verify", "--index", str(root / "tree.bin")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "ok" in out

    def test_build_determinism(self, corpus, tmp_path):
        root, _, _ = corpus
        again = tmp_path / "again.bin"
        rc = main(
            [
                "build",
                "--dataset", str(root / "base.fvecs"),
                "--out", str(again),
                "--tau", "64", "--kappa-leaf", "64", "--kappa-inner", "8",
                "--d-edge", "6", "--s-leaf", "3", "--seed", "7",
            ]
        )
        assert rc == 0
        assert again.read_bytes() == (root / "tree.bin").read_bytes()

    def test_no_edges_build_then_refined_search_fails(self, corpus, tmp_path, capsys):
        root, _, _ = corpus
        plain = tmp_path / "plain.bin"
        main(["build", "--dataset", str(root / "base.fvecs"), "--out", str(plain),
              "--tau", "64", "--kappa-leaf", "64", "--kappa-inner", "8", "--no-edges"])
        rc = main(["query", "--index", str(plain),
                   "--queries", str(root / "queries.fvecs"), "--row", "0",
                   "--k", "5", "--d-edge", "8"])
        assert rc == 2
        assert "skip edges" in capsys.readouterr().err

    def test_query_prints_neighbors(self, corpus, capsys):
        root, data, _ = corpus
        rc = main(["query", "--index", str(root / "tree.bin"),
                   "--queries", str(root / "queries.fvecs"), "--row", "3", "--k", "5"])
        assert rc == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l and not l.startswith("#")]
        assert len(lines) == 5

    def test_bench_table_and_records(self, corpus, tmp_path, capsys):
        root, data, queries = corpus
        gt = tmp_path / "gt.ivecs"
        main(["groundtruth", "--dataset", str(root / "base.fvecs"),
              "--queries", str(root / "queries.fvecs"), "--k", "10", "--out", str(gt)])
        records = tmp_path / "records.jsonl"
        rc = main(["bench", "--index", str(root / "tree.bin"),
                   "--queries", str(root / "queries.fvecs"), "--groundtruth", str(gt),
                   "--k", "10", "--betas", "2,8", "--batches", "1,8",
                   "--threads", "2", "--warmup", "4", "--records", str(records)])
        assert rc == 0
        rows = [json.loads(l) for l in records.read_text().splitlines()]
        assert len(rows) == 4
        for row in rows:
            assert 0.0 <= row["recall_k_at_k"] <= 1.0
            assert row["qps"] > 0
        # recall non-decreasing in beta at fixed batch
        by_batch = {}
        for row in rows:
            by_batch.setdefault(row["batch"], []).append((row["beta"], row["recall_k_at_k"]))
        for pairs in by_batch.values():
            pairs.sort()
            assert pairs[-1][1] >= pairs[0][1] - 0.01

    def test_bench_qps_times_seconds_is_query_count(self, corpus, tmp_path):
        # report arithmetic: qps = n / t by construction; recompute from latencies
        root, data, queries = corpus
        gt = tmp_path / "gt2.ivecs"
        main(["groundtruth", "--dataset", str(root / "base.fvecs"),
              "--queries", str(root / "queries.fvecs"), "--k", "10", "--out", str(gt)])
        records = tmp_path / "r.jsonl"
        main(["bench", "--index", str(root / "tree.bin"),
              "--queries", str(root / "queries.fvecs"), "--groundtruth", str(gt),
              "--betas", "4", "--batches", "1", "--threads", "1",
              "--warmup", "0", "--records", str(records)])
        row = json.loads(records.read_text().splitlines()[0])
        implied_seconds = 40 / row["qps"]
        latency_seconds = 40 * row["mean_latency_ms"] / 1e3
        assert latency_seconds == pytest.approx(implied_seconds, rel=0.01)

    def test_groundtruth_k_too_large(self, corpus, tmp_path):
        root, _, _ = corpus
        rc = main(["groundtruth", "--dataset", str(root / "base.fvecs"),
                   "--queries", str(root / "queries.fvecs"),
                   "--k", "100000", "--out", str(tmp_path / "x.ivecs")])
        assert rc == 2

    def test_build_on_empty_dataset(self, tmp_path):
        empty = tmp_path / "none.fvecs"
        empty.write_bytes(b"")
        rc = main(["build", "--dataset", str(empty), "--out", str(tmp_path / "x.bin")])
        assert rc == 2

    def test_bad_magic_exit_code(self, corpus, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"NOPE" + bytes(100))
        rc = main(["query", "--index", str(bad), "--vector", "0,0,0,0,0,0,0,0", "--k", "1"])
        assert rc == 3

    def test_config_file_defaults_flags_win(self, corpus, tmp_path):
        root, _, _ = corpus
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"tau": 64, "kappa_leaf": 64, "kappa_inner": 8,
                                   "d_edge": 6, "s_leaf": 3, "seed": 7}))
        out = tmp_path / "cfg_build.bin"
        rc = main(["build", "--config", str(cfg),
                   "--dataset", str(root / "base.fvecs"), "--out", str(out)])
        assert rc == 0
        assert out.read_bytes() == (root / "tree.bin").read_bytes()


class TestTemporalSort:
    def test_chain_starts_at_zero_and_is_permutation(self):
        rng = np.random.default_rng(3)
        queries = rng.normal(size=(50, 4)).astype(np.float32)
        order = temporal_sort(queries, EUC)
        assert order[0] == 0
        assert sorted(order.tolist()) == list(range(50))

    def test_consecutive_distances_shrink_on_average(self):
        rng = np.random.default_rng(4)
        queries = rng.normal(size=(100, 4)).astype(np.float32)
        order = temporal_sort(queries, EUC)
        chained = queries[order]
        gaps_sorted = np.linalg.norm(np.diff(chained, axis=0), axis=1).mean()
        gaps_raw = np.linalg.norm(np.diff(queries, axis=0), axis=1).mean()
        assert gaps_sorted < gaps_raw
