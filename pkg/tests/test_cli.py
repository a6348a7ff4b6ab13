import json
import os
import stat

import numpy as np
import pytest

from gatednet.cli import EXIT_COLLAPSE, EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from gatednet.config import VARIANTS
from gatednet.core import make_rng
from gatednet.data import write_idx


def write_cfg(path, variant="baseline", epochs=3, **sections):
    doc = {
        "variant": variant,
        "model": {"dims": [8, 16, 3]},
        "train": {"epochs": epochs, "batch_size": 32},
        "data": {"source": "blobs", "n_per_class": 60, "classes": 3, "dim": 8},
        "output": {"out_dir": str(path.parent / f"out_{path.stem}")},
    }
    for name, values in sections.items():
        doc.setdefault(name, {}).update(values)
    path.write_text(json.dumps(doc))
    return path


def out_dir(cfg_path):
    return cfg_path.parent / f"out_{cfg_path.stem}"


class TestTrain:
    def test_artifacts(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "dyn.json", "dynamic")
        assert main(["train", "--config", str(cfg)]) == EXIT_OK
        out = out_dir(cfg)
        lines = (out / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 3
        assert [json.loads(ln)["epoch"] for ln in lines] == [1, 2, 3]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "ok" and summary["variant"] == "dynamic"
        assert summary["gate_params"] == 8 + 16
        assert (out / "model.ckpt").exists()
        assert "relmac_g=" in capsys.readouterr().out

    def test_reruns_byte_identical(self, tmp_path):
        cfg = write_cfg(tmp_path / "a.json", "fused", rigl={"sparsity": 0.5, "update_period": 3})
        main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "r1")])
        main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "r2")])
        for name in ("metrics.jsonl", "model.ckpt"):
            assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()

    def test_seed_flag_changes_run(self, tmp_path):
        cfg = write_cfg(tmp_path / "a.json")
        main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "s0"), "--seed", "0"])
        main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "s1"), "--seed", "1"])
        assert (tmp_path / "s0" / "metrics.jsonl").read_text() != \
            (tmp_path / "s1" / "metrics.jsonl").read_text()

    def test_missing_config(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
        assert "not found" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "a.json", model={"widths": [1]})
        assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG
        assert "widths" in capsys.readouterr().err

    def test_missing_mnist_names_path(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        cfg = write_cfg(tmp_path / "a.json", data={"source": "mnist"}, model={"dims": [784, 8, 10]})
        assert main(["train", "--config", str(cfg), "--data-dir", str(empty)]) == EXIT_CONFIG
        assert str(empty) in capsys.readouterr().err

    def test_dims_mismatch(self, tmp_path):
        cfg = write_cfg(tmp_path / "a.json", model={"dims": [9, 4, 3]})
        assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG

    def test_collapse_exit(self, tmp_path):
        cfg = write_cfg(tmp_path / "c.json", "dynamic", epochs=10,
                        train={"gate_lr": 0.3},
                        schedule={"lambda_max": 200.0, "warmup_epochs": 0})
        assert main(["train", "--config", str(cfg)]) == EXIT_COLLAPSE
        summary = json.loads((out_dir(cfg) / "summary.json").read_text())
        assert summary["status"] == "collapse_abort"
        assert summary["epochs_logged"] == len((out_dir(cfg) / "metrics.jsonl").read_text().splitlines())

    @pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
    def test_unwritable_out_dir(self, tmp_path):
        locked = tmp_path / "locked"
        locked.mkdir()
        locked.chmod(stat.S_IRUSR | stat.S_IXUSR)
        cfg = write_cfg(tmp_path / "a.json")
        try:
            assert main(["train", "--config", str(cfg), "--out-dir", str(locked / "x")]) == EXIT_IO
        finally:
            locked.chmod(stat.S_IRWXU)

    def test_out_dir_is_a_file(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        cfg = write_cfg(tmp_path / "a.json")
        assert main(["train", "--config", str(cfg), "--out-dir", str(blocker / "x")]) == EXIT_IO


class TestEval:
    def test_eval_uses_stored_config(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "d.json", "dynamic")
        main(["train", "--config", str(cfg)])
        capsys.readouterr()
        ckpt = out_dir(cfg) / "model.ckpt"
        assert main(["eval", "--checkpoint", str(ckpt), "--format", "jsonl"]) == EXIT_OK
        row = json.loads(capsys.readouterr().out)
        final = json.loads((out_dir(cfg) / "summary.json").read_text())["final"]
        assert row["accuracy"] == round(final["val_acc"], 6)
        assert row["relmac_g"] == round(final["relmac_g"], 6)

    def test_theta_override(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "d.json", "dynamic")
        main(["train", "--config", str(cfg)])
        capsys.readouterr()
        ckpt = str(out_dir(cfg) / "model.ckpt")
        main(["eval", "--checkpoint", ckpt, "--format", "jsonl", "--theta", "0"])
        assert json.loads(capsys.readouterr().out)["alpha_g"] == [1.0, 1.0]

    def test_bad_checkpoint(self, tmp_path):
        bogus = tmp_path / "x.ckpt"
        bogus.write_bytes(b"not a checkpoint")
        assert main(["eval", "--checkpoint", str(bogus)]) == EXIT_CONFIG

    def test_missing_checkpoint(self, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt")]) in (EXIT_CONFIG, EXIT_IO)


class TestCompare:
    def test_base_config_all_variants(self, tmp_path, capsys):
        cdir = tmp_path / "cfgs"
        cdir.mkdir()
        write_cfg(cdir / "base.json", rigl={"sparsity": 0.4, "update_period": 5},
                  train={"prune_fraction": 0.3, "prune_epoch": 1})
        out = tmp_path / "cmp"
        code = main(["compare", "--config-dir", str(cdir), "--out-dir", str(out),
                     "--seeds", "0,1", "--format", "csv"])
        assert code == EXIT_OK
        text = (out / "comparison.csv").read_text()
        rows = text.splitlines()[1:]
        assert [r.split(",")[0] for r in rows] == list(VARIANTS)
        assert all(r.split(",")[1] == "0;1" for r in rows)
        assert capsys.readouterr().out == text
        assert len((out / "pareto.csv").read_text().splitlines()) == 1 + 12

    def test_continues_past_failure(self, tmp_path):
        cdir = tmp_path / "cfgs"
        cdir.mkdir()
        write_cfg(cdir / "baseline.json")
        write_cfg(cdir / "dynamic.json", "dynamic", epochs=10, train={"gate_lr": 0.3},
                  schedule={"lambda_max": 200.0, "warmup_epochs": 0})
        (cdir / "rigl.json").write_text("{ broken")
        out = tmp_path / "cmp"
        assert main(["compare", "--config-dir", str(cdir), "--variants", "baseline,dynamic,rigl",
                     "--out-dir", str(out)]) == EXIT_OK
        lines = (out / "comparison.csv").read_text().splitlines()
        assert lines[1].endswith(",ok")
        assert lines[2].endswith("collapse abort")
        assert lines[3].endswith("config error")

    def test_unknown_variant(self, tmp_path):
        assert main(["compare", "--config-dir", str(tmp_path), "--variants", "magic"]) == EXIT_CONFIG


class TestReport:
    def test_formats(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "a.json")
        main(["train", "--config", str(cfg)])
        capsys.readouterr()
        metrics = str(out_dir(cfg) / "metrics.jsonl")
        assert main(["report", "--metrics", metrics, "--format", "csv"]) == EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("epoch,phase,") and len(out) == 4
        target = tmp_path / "r.txt"
        assert main(["report", "--metrics", metrics, "--output", str(target)]) == EXIT_OK
        assert capsys.readouterr().out == ""
        assert target.read_text().startswith("epoch")

    def test_missing_and_empty(self, tmp_path):
        assert main(["report", "--metrics", str(tmp_path / "none.jsonl")]) == EXIT_IO
        empty = tmp_path / "e.jsonl"
        empty.write_text("")
        assert main(["report", "--metrics", str(empty)]) == EXIT_CONFIG


@pytest.fixture
def mnist_dir(tmp_path):
    root = tmp_path / "mnist"
    root.mkdir()
    r = make_rng(5)
    for prefix, n in (("train", 40), ("t10k", 20)):
        write_idx(root / f"{prefix}-images-idx3-ubyte", r.integers(0, 256, (n, 28, 28), dtype=np.uint8))
        write_idx(root / f"{prefix}-labels-idx1-ubyte", r.integers(0, 10, n, dtype=np.uint8))
    return root


def test_input_files_untouched(tmp_path, mnist_dir):
    before = {p.name: (p.read_bytes(), p.stat().st_mtime_ns) for p in mnist_dir.iterdir()}
    cfg = write_cfg(tmp_path / "m.json", data={"source": "mnist"},
                    model={"dims": [784, 8, 10]})
    assert main(["train", "--config", str(cfg), "--data-dir", str(mnist_dir)]) == EXIT_OK
    after = {p.name: (p.read_bytes(), p.stat().st_mtime_ns) for p in mnist_dir.iterdir()}
    assert before == after
