import io
import shutil

import numpy as np
import pytest

from samamba.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, main
from samamba.data import load_split
from samamba.engine import tensor as T


def run(*argv):
    buf = io.StringIO()
    code = main([str(a) for a in argv], out=buf)
    return code, buf.getvalue()


def kv(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line and " " not in line)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    code, _ = run("generate", "--out", root, "--size", 64, "--n", "4,2,2", "--seed", 9)
    assert code == EXIT_OK
    return root


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code, text = run("train", "--data", dataset, "--out", out, "--epochs", 1, "--lr", 1e-3, "--seed", 2)
    assert code == EXIT_OK, text
    return out


class TestExitCodes:
    def test_bad_size_is_usage(self, tmp_path):
        assert run("generate", "--out", tmp_path / "g", "--size", 48)[0] == EXIT_USAGE

    def test_unknown_flag_is_usage(self):
        assert run("generate", "--bogus")[0] == EXIT_USAGE

    def test_missing_subcommand_is_usage(self):
        assert run()[0] == EXIT_USAGE

    def test_seed_out_of_range(self, tmp_path):
        assert run("generate", "--out", tmp_path / "g", "--seed", 2**64)[0] == EXIT_USAGE

    def test_non_empty_output_is_io(self, tmp_path):
        (tmp_path / "keep").write_text("x")
        assert run("generate", "--out", tmp_path, "--size", 64, "--n", "1,0,0")[0] == EXIT_IO

    def test_missing_checkpoint_is_io(self, dataset, tmp_path):
        assert run("eval", "--data", dataset, "--checkpoint", tmp_path / "none.ckpt")[0] == EXIT_IO


def test_generate_counts_and_stable_hash(tmp_path):
    args = ("generate", "--size", 64, "--n", "8,2,2", "--seed", 4)
    code_a, a = run(*args, "--out", tmp_path / "a")
    code_b, b = run(*args, "--out", tmp_path / "b")
    assert code_a == code_b == EXIT_OK
    assert kv(a)["sha256"] == kv(b)["sha256"]
    assert len(list((tmp_path / "a" / "images").iterdir())) == 12


def test_train_writes_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"run.cfg", "train.log", "best.ckpt", "last.ckpt"} <= names


def test_predict_then_eval_predictions_matches_eval(dataset, trained):
    ckpt = trained / "last.ckpt"
    _, entries_text = run("eval", "--data", dataset, "--checkpoint", ckpt)
    images = sorted((dataset / "images").glob("test_*.pgm"))
    code, written = run("predict", "--checkpoint", ckpt, *images)
    assert code == EXIT_OK and len(written.splitlines()) == len(images)
    code, from_files = run("eval", "--data", dataset, "--predictions")
    assert code == EXIT_OK
    assert from_files == entries_text


def test_eval_ground_truth_and_empty_predictions(dataset, tmp_path):
    root = tmp_path / "d"
    shutil.copytree(dataset, root)
    _, _, entries = load_split(root, "test")
    for e in entries:
        shutil.copy(root / e.mask, (root / e.image).with_name((root / e.image).stem + ".pred.pgm"))
    code, text = run("eval", "--data", root, "--predictions", "--out", tmp_path / "rep")
    row = text.splitlines()[1].split("\t")
    assert code == EXIT_OK and row[1:4] == ["1.000000"] * 3
    assert (tmp_path / "rep" / "eval_test.tsv").exists()

    from samamba.data import save_pgm

    for e in entries:
        save_pgm((root / e.image).with_name((root / e.image).stem + ".pred.pgm"), np.zeros((64, 64)), "mask")
    _, text = run("eval", "--data", root, "--predictions")
    assert text.splitlines()[1].split("\t")[1] == "0.000000"


def test_predict_bad_image_is_io(trained, tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n2 2\n")
    assert run("predict", "--checkpoint", trained / "last.ckpt", bad)[0] == EXIT_IO


def test_verify_reports_duality():
    code, text = run("verify", "--suite", "scan_duality", "--suite", "op_gradients")
    assert code == EXIT_OK
    assert float(kv(text)["scan_duality_max_rel_err"]) <= 1e-6
    assert "failed=0" in text


def test_verify_catches_sign_flipped_gradient(monkeypatch):
    def bad_exp(a):
        out = np.exp(a.data)
        return T.Tensor._result(out, (a,), lambda g: (-g * out,), "exp")

    monkeypatch.setattr(T, "exp", bad_exp)
    code, text = run("verify", "--suite", "op_gradients")
    assert code == EXIT_VERIFY
    assert "op exp" in text


def test_bench_output():
    code, text = run("bench", "--size", 64, "--repeats", 1, "--scan-length", 256)
    values = kv(text)
    assert code == EXIT_OK
    assert int(values["params"]) > 0 and int(values["flops"]) == 2 * int(values["macs"])
    assert float(values["scan_ratio"]) > 0
