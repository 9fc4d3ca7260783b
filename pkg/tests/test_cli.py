"""Command-line pipeline: full gen/train/evaluate round trip, graph builders,
stability and stats commands, byte-identical reruns, and exit codes."""

import numpy as np
import pytest

from geann import identity_graph, knn_stability, load_edge_list, pearson_knn_graph
from geann.cli import main
from geann.graph_build import neighbor_sets_from_graph
from geann.graphs import save_edge_list


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    code = main([
        "gen-data", "--out", str(out), "--n", "24", "--t", "60", "--clusters", "4",
        "--cold-start-fraction", "0.25", "--oos-fraction", "0.125",
        "--noise", "0.3", "--seed", "5", "--context", "8",
        "--horizons", "1,2", "--quantiles", "0.5,0.9",
    ])
    assert code == 0
    return out


class TestGenData:
    def test_writes_declared_outputs(self, data_dir):
        for name in ("dataset.bin", "truth_graph.csv", "memberships.csv", "segments.csv"):
            assert (data_dir / name).exists()

    def test_rerun_is_byte_identical(self, data_dir, tmp_path):
        again = tmp_path / "again"
        main([
            "gen-data", "--out", str(again), "--n", "24", "--t", "60", "--clusters", "4",
            "--cold-start-fraction", "0.25", "--oos-fraction", "0.125",
            "--noise", "0.3", "--seed", "5", "--context", "8",
            "--horizons", "1,2", "--quantiles", "0.5,0.9",
        ])
        for name in ("truth_graph.csv", "memberships.csv", "segments.csv", "dataset.bin"):
            assert read_bytes(data_dir / name) == read_bytes(again / name)


class TestBuildGraph:
    def test_identity_round_trip(self, tmp_path):
        out = tmp_path / "id.csv"
        assert main(["build-graph", "--kind", "identity", "--n", "100", "--out", str(out)]) == 0
        assert load_edge_list(out) == identity_graph(100)

    def test_random_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["build-graph", "--kind", "random", "--n", "30", "--k", "3", "--seed", "2", "--out", str(a)])
        main(["build-graph", "--kind", "random", "--n", "30", "--k", "3", "--seed", "2", "--out", str(b)])
        assert read_bytes(a) == read_bytes(b)

    def test_knn_matches_library_call(self, tmp_path):
        rng = np.random.default_rng(0)
        emb = rng.normal(size=(20, 9))
        emb_path = tmp_path / "emb.npy"
        np.save(emb_path, emb)
        out = tmp_path / "knn.csv"
        assert main(["build-graph", "--kind", "knn", "--embeddings", str(emb_path),
                     "--k", "4", "--out", str(out)]) == 0
        assert load_edge_list(out) == pearson_knn_graph(emb, 4)

    def test_cooc_from_membership_csv(self, tmp_path, data_dir):
        out = tmp_path / "cooc.csv"
        assert main(["build-graph", "--kind", "cooc", "--members", str(data_dir / "memberships.csv"),
                     "--n", "24", "--k", "10", "--out", str(out)]) == 0
        g = load_edge_list(out)
        assert g.num_nodes == 24 and g.num_edges > 0

    def test_missing_required_flag_is_usage_error(self, tmp_path):
        assert main(["build-graph", "--kind", "identity", "--out", str(tmp_path / "x.csv")]) == 2


class TestTrainEvaluate:
    def test_pipeline_produces_training_log_and_report(self, data_dir, tmp_path):
        run = tmp_path / "run"
        code = main([
            "train", "--data", str(data_dir / "dataset.bin"),
            "--graphs", str(data_dir / "truth_graph.csv"),
            "--out", str(run), "--epochs", "2", "--batch", "8", "--lr", "0.003",
            "--seed", "1", "--channels", "6,6", "--dilations", "1,2",
            "--gcn-hidden", "6", "--gcn-width", "6",
        ])
        assert code == 0
        log = (run / "train_log.csv").read_text().splitlines()
        assert log[0] == "epoch,batch,loss"
        assert len(log) == 1 + 2 * 3  # 2 epochs x ceil(24/8) batches
        assert (run / "params.npz").exists()

        report = tmp_path / "report.csv"
        code = main([
            "evaluate", "--data", str(data_dir / "dataset.bin"),
            "--params", str(run), "--graphs", str(data_dir / "truth_graph.csv"),
            "--segments", str(data_dir / "segments.csv"),
            "--split", "48:58", "--out", str(report),
        ])
        assert code == 0
        lines = report.read_text().splitlines()
        assert lines[0] == "segment,quantile,weighted_ql"
        segments = {line.split(",")[0] for line in lines[1:]}
        assert segments == {"all", "cold_start", "oos"}

    def test_rerun_training_is_byte_identical(self, data_dir, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            run = tmp_path / name
            main([
                "train", "--data", str(data_dir / "dataset.bin"),
                "--out", str(run), "--epochs", "2", "--batch", "8",
                "--seed", "3", "--channels", "6,6", "--dilations", "1,2",
            ])
            outs.append(read_bytes(run / "train_log.csv"))
        assert outs[0] == outs[1]

    def test_config_file_with_flag_override(self, data_dir, tmp_path):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("epochs=1\nbatch=8\nchannels=6,6\ndilations=1,2\n# comment\n")
        run = tmp_path / "run"
        code = main([
            "train", "--config", str(cfg), "--data", str(data_dir / "dataset.bin"),
            "--out", str(run), "--epochs", "2", "--seed", "0",
        ])
        assert code == 0
        log = (run / "train_log.csv").read_text().splitlines()
        assert len(log) == 1 + 2 * 3  # the flag override wins

    def test_unknown_config_key_is_usage_error(self, data_dir, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("epochs=1\nturbo=yes\n")
        code = main([
            "train", "--config", str(cfg), "--data", str(data_dir / "dataset.bin"),
            "--out", str(tmp_path / "run"),
        ])
        assert code == 2

    def test_missing_data_file_is_usage_error(self, tmp_path):
        code = main([
            "train", "--data", str(tmp_path / "nope.bin"), "--out", str(tmp_path / "run"),
        ])
        assert code == 2


class TestPretrainStabilityStats:
    def test_pretrain_then_knn_then_stability(self, data_dir, tmp_path):
        emb_paths = []
        for seed in (0, 1):
            out = tmp_path / f"emb{seed}.npy"
            code = main([
                "pretrain", "--data", str(data_dir / "dataset.bin"), "--out", str(out),
                "--epochs", "2", "--seed", str(seed),
                "--channels", "4,4", "--dilations", "1,2",
            ])
            assert code == 0
            emb_paths.append(out)
        graph_paths = []
        for i, emb in enumerate(emb_paths):
            out = tmp_path / f"knn{i}.csv"
            main(["build-graph", "--kind", "knn", "--embeddings", str(emb), "--k", "4",
                  "--out", str(out)])
            graph_paths.append(out)
        stab = tmp_path / "stability.csv"
        code = main(["stability", "--runs", ",".join(str(p) for p in graph_paths),
                     "--k", "4", "--out", str(stab)])
        assert code == 0
        lines = stab.read_text().splitlines()
        assert lines[0] == "node,stability"
        runs = [neighbor_sets_from_graph(load_edge_list(p), 4) for p in graph_paths]
        for line in lines[1:]:
            node, value = line.split(",")
            assert float(value) == pytest.approx(knn_stability(runs, int(node), 4))

    def test_stability_needs_two_runs(self, tmp_path):
        g = tmp_path / "g.csv"
        save_edge_list(identity_graph(4), g)
        assert main(["stability", "--runs", str(g), "--k", "1", "--out", str(tmp_path / "s.csv")]) == 2

    def test_graph_stats_output(self, tmp_path):
        rng = np.random.default_rng(3)
        emb = rng.normal(size=(15, 8))
        g = pearson_knn_graph(emb, 4)
        gpath = tmp_path / "g.csv"
        save_edge_list(g, gpath)
        out = tmp_path / "stats.csv"
        assert main(["graph-stats", "--graph", str(gpath), "--k", "4", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "node,mean,std"
        assert len(lines) == 16
        from geann import neighbor_score_stats

        want = neighbor_score_stats(g, 4)
        node, mean, std = lines[1].split(",")
        assert (int(node), float(mean), float(std)) == pytest.approx(want[0])


class TestArgParsing:
    def test_thread_cap_env_is_accepted(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GEANN_THREADS", "2")
        out = tmp_path / "id.csv"
        assert main(["build-graph", "--kind", "identity", "--n", "5", "--out", str(out)]) == 0

    def test_no_subcommand_is_usage_error(self):
        assert main([]) == 2

    def test_unknown_subcommand_is_usage_error(self):
        assert main(["frobnicate"]) == 2

    def test_bad_flag_is_usage_error(self):
        assert main(["build-graph", "--kind", "identity", "--n", "5", "--out", "x", "--bogus"]) == 2
