import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from camboost.boostlu import BoostParams
from camboost.cli import main, resolve, train_config
from camboost.data import load_dataset
from camboost.experiments import Benchmark, evaluate_map, fit, sweep_train_config
from camboost.large_loss import LLConfig, LLPolicy
from camboost.network import NetConfig, forward_logits, read_checkpoint
from camboost.tensor import Tensor

SMALL = ["num_samples=50", "test_samples=40", "height=12", "width=12", "blob_min=3",
         "blob_max=4", "jitter=1", "channels=3", "epochs=2", "batch_size=10"]
SMALL_PAIRS = [tuple(p.split("=", 1)) for p in SMALL]


def run(*args):
    return main([str(a) for a in args])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("gen", f"out={d / 'data'}", "seed=7", *SMALL) == 0
    assert run("train", f"dataset={d / 'data' / 'train.bin'}", f"out={d / 'an'}", *SMALL) == 0
    assert run("train", f"dataset={d / 'data' / 'train.bin'}", f"out={d / 'full'}", "--full-labels",
               *SMALL) == 0
    return d


def test_gen_is_byte_identical(workdir, tmp_path):
    assert run("gen", f"out={tmp_path}", "seed=7", *SMALL) == 0
    for name in ("train.bin", "test.bin", "summary.json"):
        assert (tmp_path / name).read_bytes() == (workdir / "data" / name).read_bytes()


def test_gen_summary_sparsity(workdir):
    s = json.loads((workdir / "data" / "summary.json").read_text())["train"]
    assert s["mean_annotated_per_sample"] == 1.0
    assert s["mean_unannotated_per_sample"] == 5.0
    assert sum(s["observed_positive_frequency"]) == 50


def test_unknown_key(tmp_path, capsys):
    assert run("gen", f"out={tmp_path}", "nosie=0.1") != 0
    err = capsys.readouterr().err.strip().splitlines()
    assert err == ["error: config: unknown key 'nosie'"]


def test_unknown_key_in_file(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("seed=1\nbogus=2\n")
    assert run("gen", "--config", tmp_path / "c.txt", f"out={tmp_path}") != 0
    assert "'bogus'" in capsys.readouterr().err


def test_bad_value_names_key(tmp_path, capsys):
    assert run("gen", f"out={tmp_path}", "epochs=ten") != 0
    assert "'epochs'" in capsys.readouterr().err


def test_later_wins_and_resolved_config(tmp_path):
    (tmp_path / "c.txt").write_text("# comment\nnoise=0.9\nseed=3\n")
    out = tmp_path / "o"
    assert run("gen", "--config", tmp_path / "c.txt", "noise=0.1", "noise=0.2", f"out={out}",
               *SMALL) == 0
    resolved = dict(l.split("=", 1) for l in (out / "config.txt").read_text().splitlines())
    assert resolved["noise"] == "0.2" and resolved["seed"] == "3" and resolved["command"] == "gen"


def test_seed_env_override(monkeypatch):
    monkeypatch.setenv("CAMBOOST_SEED", "11")
    assert resolve([("seed", "2")])["seed"] == 11
    monkeypatch.delenv("CAMBOOST_SEED")
    assert resolve([("seed", "2")])["seed"] == 2


def test_replay_from_resolved_config(workdir, tmp_path):
    cfg = (workdir / "an" / "config.txt").read_text().splitlines()
    pairs = [l for l in cfg if not l.startswith(("command=", "out="))]
    (tmp_path / "replay.txt").write_text("\n".join(pairs) + "\n")
    assert run("train", "--config", tmp_path / "replay.txt", f"out={tmp_path}") == 0
    assert (tmp_path / "model.ckpt").read_bytes() == (workdir / "an" / "model.ckpt").read_bytes()


class TestTrainFlags:
    def test_plain_baseline(self, workdir):
        _, meta = read_checkpoint(workdir / "an" / "model.ckpt")
        assert not meta["boost_train"] and not meta["boost_infer"] and meta["ll"] == "none"
        assert "boost_train_without_infer" not in meta
        rows = read_csv(workdir / "an" / "history.csv")
        assert [r["epoch"] for r in rows] == ["1", "2"]
        assert {"epoch", "train_loss", "val_mAP", "ll_modified", "ll_fn_hits"} <= set(rows[0])

    def test_final_row_configuration(self, workdir, tmp_path):
        assert run("train", f"dataset={workdir / 'data' / 'train.bin'}", f"out={tmp_path}",
                   "--ll", "r", "--boost-train", "--boost-infer", "ll_delta_rel=20", *SMALL) == 0
        _, meta = read_checkpoint(tmp_path / "model.ckpt")
        assert meta["boost_train"] and meta["boost_infer"] and meta["ll"] == "r"
        assert (tmp_path / "ll_log.csv").exists()

    def test_boost_train_without_infer_is_flagged(self, workdir, tmp_path):
        assert run("train", f"dataset={workdir / 'data' / 'train.bin'}", f"out={tmp_path}",
                   "--boost-train", *SMALL) == 0
        _, meta = read_checkpoint(tmp_path / "model.ckpt")
        assert meta["boost_train_without_infer"] is True

    def test_missing_dataset(self, tmp_path, capsys):
        assert run("train", f"dataset={tmp_path / 'nope.bin'}", f"out={tmp_path}") == 2
        err = capsys.readouterr().err
        assert err.startswith("error: io:") and "nope.bin" in err

    def test_unwritable_output(self, tmp_path, capsys):
        (tmp_path / "file").write_text("x")
        assert run("gen", f"out={tmp_path / 'file' / 'sub'}") == 2
        err = capsys.readouterr().err
        assert err.startswith("error: io:") and "file" in err


class TestEval:
    def test_boost_column_only_when_requested(self, workdir, tmp_path):
        ck, ds = workdir / "an" / "model.ckpt", workdir / "data" / "test.bin"
        assert run("eval", f"checkpoint={ck}", f"dataset={ds}", f"out={tmp_path / 'p'}") == 0
        assert list(read_csv(tmp_path / "p" / "metrics.csv")[0]) == ["scope", "mAP"]
        assert run("eval", f"checkpoint={ck}", f"dataset={ds}", f"out={tmp_path / 'b'}",
                   "--boost-infer") == 0
        rows = read_csv(tmp_path / "b" / "metrics.csv")
        assert list(rows[0]) == ["scope", "mAP", "mAP_boost"]
        assert len(rows) == 1 + 6

    def test_alpha_one_reports_equal(self, workdir, tmp_path):
        assert run("eval", f"checkpoint={workdir / 'an' / 'model.ckpt'}", "alpha=1",
                   f"dataset={workdir / 'data' / 'test.bin'}", f"out={tmp_path}", "--boost-infer") == 0
        for r in read_csv(tmp_path / "metrics.csv"):
            assert r["mAP"] == r["mAP_boost"]

    def test_mismatch(self, workdir, tmp_path, capsys):
        assert run("gen", f"out={tmp_path / 'd'}", "height=10", "width=10", "blob_min=3", "blob_max=4",
                   "num_samples=10", "test_samples=10") == 0
        assert run("eval", f"checkpoint={workdir / 'an' / 'model.ckpt'}",
                   f"dataset={tmp_path / 'd' / 'test.bin'}", f"out={tmp_path}") == 2
        assert capsys.readouterr().err.startswith("error: dimension:")

    def test_untrained_net_near_random_baseline(self, tmp_path):
        # an epoch-0 checkpoint ranks test images by a label-blind function of
        # pixel statistics; its mAP should sit near the random-ranking expectation
        big = ["num_samples=40", "test_samples=600", "channels=3", "epochs=0", "noise=0.5"]
        assert run("gen", f"out={tmp_path}", "seed=5", *big) == 0
        assert run("train", f"dataset={tmp_path / 'train.bin'}", f"out={tmp_path}", *big) == 0
        assert run("eval", f"checkpoint={tmp_path / 'model.ckpt'}",
                   f"dataset={tmp_path / 'test.bin'}", f"out={tmp_path}") == 0
        got = float(read_csv(tmp_path / "metrics.csv")[0]["mAP"])
        labels = load_dataset(tmp_path / "test.bin").full_labels
        n = len(labels)
        expected = []
        for r in labels.sum(axis=0):
            expected.append(sum(1 / k + (k - 1) * (r - 1) / ((n - 1) * k) for k in range(1, n + 1)) / n)
        assert abs(got - np.mean(expected)) < 0.1


class TestExplain:
    def test_self_comparison(self, workdir, tmp_path):
        ck = workdir / "an" / "model.ckpt"
        assert run("explain", f"checkpoint={ck}", f"checkpoint_b={ck}",
                   f"dataset={workdir / 'data' / 'test.bin'}", f"out={tmp_path}") == 0
        rows = read_csv(tmp_path / "analysis.csv")
        assert rows and all(float(r["spearman"]) == 1.0 for r in rows)
        assert all(r["spearman_gaussian"] != "" for r in rows)

    @pytest.mark.parametrize("boost", [False, True])
    def test_cam_csv_reproduces_logits(self, workdir, tmp_path, boost):
        a, b = workdir / "full" / "model.ckpt", workdir / "an" / "model.ckpt"
        ds = load_dataset(workdir / "data" / "test.bin")
        flags = ["--boost-infer"] if boost else []
        assert run("explain", f"checkpoint={a}", f"checkpoint_b={b}", "export_samples=3",
                   f"dataset={workdir / 'data' / 'test.bin'}", f"out={tmp_path}", *flags) == 0
        state = "boost-a5-b0" if boost else "plain"
        checked = 0
        for tag, ck in (("a", a), ("b", b)):
            net, _ = read_checkpoint(ck)
            logits = forward_logits(net, Tensor(ds.images[:3]), BoostParams() if boost else None).data
            for i in range(3):
                for c in np.flatnonzero(ds.full_labels[i]):
                    stem = tmp_path / "cams" / f"cam_{tag}_s{i}_c{c}_{state}"
                    m = np.loadtxt(stem.with_suffix(".csv"), delimiter=",")
                    assert m.shape == (12, 12)
                    assert abs(m.mean() - logits[i, c]) <= 1e-6
                    pgm = stem.with_suffix(".pgm").read_bytes()
                    assert pgm.startswith(b"P5\n12 12\n255\n") and len(pgm) == 13 + 144
                    checked += 1
        assert checked >= 6
        assert not list((tmp_path / "cams").glob("*_plain.csv" if boost else "*_boost-*.csv"))

    def test_architecture_mismatch(self, workdir, tmp_path, capsys):
        assert run("train", f"dataset={workdir / 'data' / 'train.bin'}", f"out={tmp_path}",
                   *SMALL, "channels=4", "epochs=0") == 0
        assert run("explain", f"checkpoint={workdir / 'an' / 'model.ckpt'}",
                   f"checkpoint_b={tmp_path / 'model.ckpt'}",
                   f"dataset={workdir / 'data' / 'test.bin'}", f"out={tmp_path}") == 2
        assert capsys.readouterr().err.startswith("error: dimension:")


class TestSweepAblate:
    def data(self, workdir):
        return [f"dataset={workdir / 'data' / 'train.bin'}",
                f"test_dataset={workdir / 'data' / 'test.bin'}"]

    def test_grid_cardinality_and_determinism(self, workdir, tmp_path):
        args = ["sweep", *self.data(workdir), *SMALL, "alphas=1,5", "betas=-0.2,0,0.2",
                "ll_delta_rel=20"]
        assert run(*args, f"out={tmp_path / 'a'}") == 0
        assert run(*args, f"out={tmp_path / 'b'}") == 0
        rows = read_csv(tmp_path / "a" / "sweep.csv")
        assert len(rows) == 6
        assert [(float(r["alpha"]), float(r["beta"])) for r in rows] == [
            (1, -0.2), (1, 0), (1, 0.2), (5, -0.2), (5, 0), (5, 0.2)]
        assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()

    def test_alpha_one_equals_unboosted(self, workdir, tmp_path):
        assert run("sweep", *self.data(workdir), *SMALL, "alphas=1", "betas=0",
                   f"out={tmp_path}") == 0
        (row,) = read_csv(tmp_path / "sweep.csv")
        train_ds = load_dataset(workdir / "data" / "train.bin")
        test_ds = load_dataset(workdir / "data" / "test.bin")
        cfg = sweep_train_config(train_config(resolve(SMALL_PAIRS)), 1.0, 0.0,
                                 LLConfig(LLPolicy.CORRECT_TEMP))
        plain = replace(cfg, boost_train=None, boost_infer=None)
        res = fit(Benchmark(train_ds, test_ds, 0), plain, NetConfig(channels=(3,)))
        assert float(row["test_mAP"]) == evaluate_map(res.best_plain.net, test_ds)

    def test_invalid_grid(self, workdir, tmp_path, capsys):
        assert run("sweep", *self.data(workdir), "alphas=0.5", f"out={tmp_path}") == 2
        assert capsys.readouterr().err.startswith("error: config:")

    def test_ablate_seven_rows(self, workdir, tmp_path):
        assert run("ablate", *self.data(workdir), *SMALL, f"out={tmp_path}") == 0
        rows = read_csv(tmp_path / "ablation.csv")
        assert [int(r["row"]) for r in rows] == list(range(1, 8))
        flags = {(r["boost_infer"], r["boost_train"], r["ll_r"]) for r in rows}
        assert len(flags) == 7

