import csv
import json
import math

import numpy as np
import pytest

from terminal_embed.cli import main
from terminal_embed.datasets import read_csv, write_csv
from terminal_embed.geometry import PointSet, target_dimension
from terminal_embed.harness import SWEEP_COLUMNS
from terminal_embed.jl import load_jl
from terminal_embed.persist import embedded_header, read_embedded_csv, sha256_file, write_embedded_csv
from terminal_embed.seeding import derive_seed
from terminal_embed.solver import SolverConfig, TerminalModel, embed_batch


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def train_csv(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "train.csv"
    write_csv(PointSet(rng.standard_normal((8, 5))), path)
    return path


@pytest.fixture
def query_csv(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "queries.csv"
    write_csv(PointSet(rng.standard_normal((4, 5))), path)
    return path


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert run(capsys, "advise", "--width", "1", "--eps", "0.1", "--bogus")[0] == 3

    def test_missing_subcommand(self, capsys):
        assert run(capsys)[0] == 3

    def test_bad_value(self, capsys):
        assert run(capsys, "advise", "--width", "1", "--eps", "2")[0] == 3
        assert run(capsys, "--threads", "0", "advise", "--width", "1", "--eps", "0.1")[0] == 3

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "width", "--input", tmp_path / "nope.csv")
        assert code == 2 and "nope.csv" in err

    def test_malformed_file(self, capsys, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1,2\n3\n")
        code, _, err = run(capsys, "width", "--input", p)
        assert code == 2 and "line 2" in err

    def test_infeasible(self, capsys, tmp_path, train_csv, query_csv):
        code, _, err = run(capsys, "--output-dir", tmp_path / "o", "embed", "--train", train_csv,
                           "--queries", query_csv, "--m", 1, "--eps", 1e-6, "--max-relax", 0,
                           "--max-iter", 50)
        assert code == 1 and "infeasible" in err
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert man["failed_queries"]

    def test_version(self, capsys):
        assert run(capsys, "--version")[0] == 0


class TestWidth:
    def test_two_points(self, capsys, tmp_path):
        p = tmp_path / "pair.csv"
        p.write_text("0,0\n1,0\n")
        code, out, _ = run(capsys, "--seed", 2, "width", "--input", p, "--trials", 4000)
        doc = json.loads(out)
        assert code == 0 and doc["secant_count"] == 2
        assert abs(doc["width"] - math.sqrt(2 / math.pi)) <= 4 * doc["std_error"]

    def test_circle(self, capsys, tmp_path):
        t = np.deg2rad(np.arange(0, 360, 6))
        p = tmp_path / "circle.csv"
        write_csv(PointSet(np.column_stack([np.cos(t), np.sin(t)])), p)
        code, out, _ = run(capsys, "--seed", 3, "width", "--input", p, "--trials", 4000,
                           "--dedup-tol", 1e-9)
        doc = json.loads(out)
        assert doc["secant_count"] == 120
        # 3-degree spacing underestimates E||g|| by ~ 1 - cos(1.5 deg) ~ 3e-4
        assert abs(doc["width"] - math.sqrt(math.pi / 2)) <= 4 * doc["std_error"] + 1e-3

    def test_idx_input(self, capsys, tmp_path):
        from terminal_embed.datasets import write_idx
        data = PointSet(np.array([[0, 1, 0, 0], [1, 0, 0, 1], [1, 1, 1, 1]], float), [0, 1, 1])
        write_idx(data, tmp_path / "i", tmp_path / "l")
        code, out, _ = run(capsys, "width", "--input", tmp_path / "i", "--format", "idx",
                           "--labels", tmp_path / "l", "--trials", 50)
        assert code == 0 and json.loads(out)["secant_count"] == 6
        assert run(capsys, "width", "--input", tmp_path / "i", "--format", "idx")[0] == 3


class TestAdvise:
    def test_width(self, capsys):
        code, out, _ = run(capsys, "advise", "--width", 5, "--eps", 0.1, "--p", 0.01)
        assert code == 0 and json.loads(out)["m_recommended"] == 5332

    def test_manifold(self, capsys):
        code, out, _ = run(capsys, "advise", "--manifold", f"1,1,{2 * math.pi}", "--eps", 0.5)
        doc = json.loads(out)
        assert doc["width_source"] == "manifold_bound"
        assert doc["m_recommended"] == target_dimension(doc["width"], 0.5, 0.01)

    def test_exclusive(self, capsys):
        assert run(capsys, "advise", "--width", 1, "--manifold", "1,1,1", "--eps", 0.1)[0] == 3


class TestEmbed:
    def test_queries_equal_train(self, capsys, tmp_path, train_csv):
        out = tmp_path / "o"
        code, _, _ = run(capsys, "--output-dir", out, "embed", "--train", train_csv,
                         "--queries", train_csv, "--m", 3)
        assert code == 0
        anchors, _, _, E = read_embedded_csv(out / "embedded.csv")
        assert np.all(E[:, -1] == 0) and anchors.tolist() == list(range(8))

    def test_matrix_in_reproduces_bytes(self, capsys, tmp_path, train_csv, query_csv):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(capsys, "--output-dir", a, "--seed", 4, "embed", "--train", train_csv,
                   "--queries", query_csv, "--m", 3, "--matrix-out", a / "m.jlm")[0] == 0
        assert run(capsys, "--output-dir", b, "embed", "--train", train_csv,
                   "--queries", query_csv, "--matrix-in", a / "m.jlm")[0] == 0
        assert (a / "embedded.csv").read_bytes() == (b / "embedded.csv").read_bytes()

    def test_matches_library(self, capsys, tmp_path, train_csv, query_csv):
        out = tmp_path / "o"
        assert run(capsys, "--output-dir", out, "--seed", 5, "embed", "--train", train_csv,
                   "--queries", query_csv, "--m", 4, "--eps", 0.3, "--variant", "inner_prod")[0] == 0
        from terminal_embed.jl import sample_jl
        A = sample_jl(4, 5, derive_seed(5, "jl/m=4"))
        model = TerminalModel(read_csv(train_csv, False), A,
                              SolverConfig(eps=0.3, objective="INNER_PROD"))
        lib = write_embedded_csv(embed_batch(model, read_csv(query_csv, False)),
                                 tmp_path / "lib.csv")
        assert lib.read_bytes() == (out / "embedded.csv").read_bytes()

    def test_manifest_and_model(self, capsys, tmp_path, train_csv, query_csv):
        out = tmp_path / "o"
        run(capsys, "--output-dir", out, "--seed", 6, "embed", "--train", train_csv,
            "--queries", query_csv, "--m", 3, "--model-out", out / "model")
        man = json.loads((out / "manifest.json").read_text())
        assert man["seed"] == 6 and man["jl_seed"] == derive_seed(6, "jl/m=3")
        assert man["inputs"][str(train_csv)] == sha256_file(train_csv)
        assert man["outputs"][str(out / "embedded.csv")] == sha256_file(out / "embedded.csv")
        assert man["flags"]["m"] == 3 and man["config"]["eps"] == 0.1
        assert load_jl(out / "model" / "matrix.jlm").seed == derive_seed(6, "jl/m=3")
        header = next(csv.reader(open(out / "embedded.csv")))
        assert header == embedded_header(3)

    def test_threads_do_not_change_output(self, capsys, tmp_path, train_csv, query_csv,
                                          monkeypatch):
        monkeypatch.setenv("TERMINAL_EMBED_THREADS", "3")
        a, b = tmp_path / "a", tmp_path / "b"
        run(capsys, "--output-dir", a, "embed", "--train", train_csv, "--queries", query_csv,
            "--m", 3)
        assert json.loads((a / "manifest.json").read_text())["flags"]["threads"] == 3
        run(capsys, "--output-dir", b, "--threads", 1, "embed", "--train", train_csv,
            "--queries", query_csv, "--m", 3)
        assert (a / "embedded.csv").read_bytes() == (b / "embedded.csv").read_bytes()

    def test_bad_env_threads(self, capsys, monkeypatch):
        monkeypatch.setenv("TERMINAL_EMBED_THREADS", "many")
        assert run(capsys, "advise", "--width", 1, "--eps", 0.1)[0] == 3


BENCH_SMALL = ["--dim", 12, "--n-per-class", 40, "--split", "15,15", "--delta", 0.05]


class TestBench:
    def test_outputs(self, capsys, tmp_path):
        out = tmp_path / "o"
        code, _, _ = run(capsys, "--output-dir", out, "--seed", 1, "bench", *BENCH_SMALL,
                         "--m-sweep", "2,4", "--trials", 2)
        assert code == 0
        rows = list(csv.DictReader(open(out / "sweep.csv")))
        assert list(rows[0].keys()) == SWEEP_COLUMNS
        ident = {r["accuracy_pct"] for r in rows if r["variant"] == "IDENTITY"}
        assert len(ident) == 1
        assert {r["variant"] for r in rows} == {"IDENTITY", "LINEAR_BYPASS", "INNER_PROD",
                                                "QUADRATIC"}
        doc = json.loads((out / "reports.json").read_text())
        assert len(doc["reports"]) == 4 * 2 * 2
        man = json.loads((out / "manifest.json").read_text())
        assert man["split"]["seed"] == derive_seed(1, "split") and len(man["jl_seeds"]) == 4

    def test_reproducible(self, capsys, tmp_path):
        for d in ("a", "b"):
            run(capsys, "--output-dir", tmp_path / d, "--seed", 3, "bench", *BENCH_SMALL,
                "--m-sweep", "3", "--variants", "quadratic,identity")
        # everything but wall-clock timing must match
        a, b = ([{k: v for k, v in r.items() if k != "mean_solve_ms"}
                 for r in csv.DictReader(open(tmp_path / d / "sweep.csv"))] for d in "ab")
        assert a == b

    def test_quadratic_monotone_on_average(self, capsys, tmp_path):
        out = tmp_path / "o"
        run(capsys, "--output-dir", out, "--seed", 7, "bench", "--dim", 20, "--n-per-class", 60,
            "--split", "20,20", "--m-sweep", "2,6,20", "--variants", "QUADRATIC", "--trials", 5)
        acc = [float(r["accuracy_pct"]) for r in csv.DictReader(open(out / "sweep.csv"))]
        assert acc == sorted(acc)

    def test_csv_dataset(self, capsys, tmp_path):
        rng = np.random.default_rng(0)
        pts = np.vstack([rng.standard_normal((10, 3)), rng.standard_normal((10, 3)) + 6])
        write_csv(PointSet(pts, [0] * 10 + [1] * 10), tmp_path / "d.csv")
        code, _, _ = run(capsys, "--output-dir", tmp_path / "o", "bench", "--dataset",
                         f"csv:{tmp_path / 'd.csv'}", "--split", "4,4", "--m-sweep", "2",
                         "--variants", "IDENTITY,LINEAR")
        assert code == 0

    def test_insufficient_and_bad_flags(self, capsys, tmp_path):
        assert run(capsys, "--output-dir", tmp_path, "bench", *BENCH_SMALL[:4],
                   "--split", "30,30", "--m-sweep", "2")[0] == 2
        assert run(capsys, "bench", "--variants", "NOPE")[0] == 3
        assert run(capsys, "bench", "--dataset", "parquet:x")[0] == 3
        assert run(capsys, "bench", "--split", "1,2,3")[0] == 3
