import json
import os
import struct

import numpy as np
import pytest

from dynpre import cli
from dynpre.containers import (CHECKPOINT_MAGIC, DATASET_MAGIC, FormatError,
                               RunConfig, import_csv, load_checkpoint,
                               load_checkpoint_into, load_dataset,
                               save_checkpoint, save_dataset)
from dynpre.nn import ParamStore
from dynpre.simgen import SimDataset


def tiny_dataset():
    rng = np.random.default_rng(0)
    return SimDataset(
        data=rng.standard_normal((6, 3, 40)),
        labels=np.array([0, 1, 0, 1, 0, 1]),
        splits=np.array([0, 0, 0, 0, 1, 2]),
    )


class TestDatasetContainer:
    def test_round_trip(self, tmp_path):
        src = tiny_dataset()
        path = tmp_path / "d.tsd"
        save_dataset(path, src)
        out = load_dataset(path)
        np.testing.assert_allclose(out.data, src.data, atol=1e-6)  # float32 payload
        np.testing.assert_array_equal(out.labels, src.labels)
        np.testing.assert_array_equal(out.splits, src.splits)

    def test_save_load_save_is_bit_stable(self, tmp_path):
        src = tiny_dataset()
        a, b = tmp_path / "a.tsd", tmp_path / "b.tsd"
        save_dataset(a, src)
        save_dataset(b, load_dataset(a))
        assert a.read_bytes() == b.read_bytes()

    def test_payload_size(self, tmp_path):
        ds = SimDataset(data=np.zeros((2, 3, 4)), labels=np.zeros(2, dtype=int),
                        splits=np.zeros(2, dtype=int))
        path = tmp_path / "d.tsd"
        save_dataset(path, ds)
        # 4 magic + 17 header + 2 split tags + 2*3*4*4 payload + 2 labels
        assert path.stat().st_size == 4 + 17 + 2 + 96 + 2

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "d.tsd"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(FormatError, match="magic"):
            load_dataset(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "d.tsd"
        path.write_bytes(DATASET_MAGIC + struct.pack("<IIIIB", 99, 1, 1, 1, 0)
                         + b"\x00" * 8)
        with pytest.raises(FormatError, match="version"):
            load_dataset(path)

    def test_truncation(self, tmp_path):
        full = tmp_path / "full.tsd"
        save_dataset(full, tiny_dataset())
        cut = tmp_path / "cut.tsd"
        cut.write_bytes(full.read_bytes()[:-10])
        with pytest.raises(FormatError, match="truncated"):
            load_dataset(cut)

    def test_bad_split_tag(self, tmp_path):
        ds = tiny_dataset()
        ds.splits = np.array([0, 0, 0, 0, 1, 7])
        path = tmp_path / "d.tsd"
        save_dataset(path, ds)
        with pytest.raises(FormatError, match="split"):
            load_dataset(path)


class TestCheckpoint:
    def _values(self):
        rng = np.random.default_rng(1)
        return {"conv1.weight": rng.standard_normal((4, 3, 2)),
                "conv1.bias": rng.standard_normal(4),
                "fc.weight": rng.standard_normal((2, 5))}

    def test_round_trip(self, tmp_path):
        path = tmp_path / "c.ckpt"
        vals = self._values()
        save_checkpoint(path, vals, {"kind": "encoder", "in_channels": 3})
        out, config = load_checkpoint(path)
        assert config == {"kind": "encoder", "in_channels": 3}
        assert set(out) == set(vals)
        for k in vals:
            np.testing.assert_allclose(out[k], vals[k], atol=1e-6)

    def test_float32_quantization_is_idempotent(self, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, self._values())
        vals, cfg = load_checkpoint(a)
        save_checkpoint(b, vals, cfg)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "c.ckpt"
        path.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, self._values())
        cut = tmp_path / "cut.ckpt"
        cut.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(cut)

    def test_load_into_names_offending_tensor(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, self._values())
        store = ParamStore()
        store.add("conv1.weight", np.zeros((4, 3, 2)))
        store.add("conv1.bias", np.zeros(4))
        store.add("fc.weight", np.zeros((5, 2)))  # transposed on purpose
        with pytest.raises(FormatError, match="fc.weight"):
            load_checkpoint_into(path, store)

    def test_load_into_missing_tensor(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, {"a": np.zeros(2)})
        store = ParamStore()
        store.add("b", np.zeros(2))
        with pytest.raises(FormatError, match="missing tensor b"):
            load_checkpoint_into(path, store)


class TestImportCsv:
    def _write_subjects(self, tmp_path, shapes, labels=True):
        names = []
        for i, (c, t) in enumerate(shapes):
            name = f"subj{i:03d}"
            mat = np.random.default_rng(i).standard_normal((c, t))
            np.savetxt(tmp_path / f"{name}.csv", mat, delimiter=",")
            names.append(name)
        if labels:
            (tmp_path / "labels.txt").write_text(
                "".join(f"{n},{i % 2}\n" for i, n in enumerate(names)))
        return names

    def test_real_shape_import(self, tmp_path):
        self._write_subjects(tmp_path, [(53, 140)] * 3)
        ds = import_csv(tmp_path, tmp_path / "labels.txt")
        assert ds.data.shape == (3, 53, 140)
        np.testing.assert_array_equal(ds.labels, [0, 1, 0])

    def test_values_survive(self, tmp_path):
        self._write_subjects(tmp_path, [(2, 5)])
        ds = import_csv(tmp_path, tmp_path / "labels.txt")
        orig = np.loadtxt(tmp_path / "subj000.csv", delimiter=",", ndmin=2)
        np.testing.assert_allclose(ds.data[0], orig)

    def test_ragged_shapes_rejected(self, tmp_path):
        self._write_subjects(tmp_path, [(3, 10), (3, 11)])
        with pytest.raises(FormatError, match="differs"):
            import_csv(tmp_path, tmp_path / "labels.txt")

    def test_empty_directory(self, tmp_path):
        (tmp_path / "labels.txt").write_text("")
        with pytest.raises(FormatError, match="no CSV"):
            import_csv(tmp_path, tmp_path / "labels.txt")

    def test_missing_label(self, tmp_path):
        self._write_subjects(tmp_path, [(2, 4)], labels=False)
        (tmp_path / "labels.txt").write_text("other,1\n")
        with pytest.raises(FormatError, match="subj000"):
            import_csv(tmp_path, tmp_path / "labels.txt")


class TestRunConfig:
    def test_defaults_round_trip(self, tmp_path):
        cfg = RunConfig()
        path = tmp_path / "cfg.json"
        path.write_text(cfg.dump())
        out = RunConfig.load(path)
        assert out == cfg

    def test_partial_override(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"n_graphs": 12, "n_train": [2, 4]}))
        cfg = RunConfig.load(path)
        assert cfg.n_graphs == 12
        assert cfg.n_train == (2, 4)
        assert cfg.lr == 3e-4

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"learning_rate": 0.1}))
        with pytest.raises(FormatError, match="learning_rate"):
            RunConfig.load(path)

    def test_table_defaults(self):
        cfg = RunConfig()
        assert cfg.lr == 3e-4
        assert cfg.train_batch_sim == 16
        assert cfg.max_epochs_sim == 500
        assert cfg.max_epochs_real == 3000
        assert cfg.scheduler_real and not cfg.scheduler_sim


@pytest.fixture
def sim_config(tmp_path):
    cfg = {"n_nodes": 3, "n_pretrain_series": 3, "pretrain_T": 400,
           "n_graphs": 8, "series_per_graph": 5, "downstream_T": 120,
           "master_seed": 7}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


class TestCli:
    def test_no_command_usage(self, capsys):
        assert cli.main([]) == 1

    def test_unknown_command(self, capsys):
        assert cli.main(["frobnicate"]) == 1

    def test_train_fpt_without_ckpt(self, capsys, tmp_path):
        rc = cli.main(["train", "--mode", "fpt", "--data", str(tmp_path),
                       "--n-train", "4", "--out", str(tmp_path / "r.jsonl")])
        assert rc == 1
        assert "ckpt" in capsys.readouterr().err

    def test_missing_data_is_runtime_error(self, capsys, tmp_path):
        rc = cli.main(["train", "--mode", "npt", "--data",
                       str(tmp_path / "nope.tsd"), "--n-train", "4",
                       "--out", str(tmp_path / "r.jsonl")])
        assert rc == 2

    def test_simulate_pretrain_train_report(self, capsys, tmp_path, sim_config):
        data_dir = tmp_path / "data"
        assert cli.main(["simulate", "--config", str(sim_config),
                         "--kind", "downstream", "--out", str(data_dir)]) == 0
        assert (data_dir / "downstream.tsd").exists()

        results = tmp_path / "results.jsonl"
        assert cli.main(["train", "--mode", "npt", "--data", str(data_dir),
                         "--n-train", "4", "--epochs", "2",
                         "--out", str(results)]) == 0
        row = json.loads(results.read_text().splitlines()[0])
        assert row["regime"] == "npt"
        assert 0.0 <= row["test_auc"] <= 1.0

        report = tmp_path / "summary.csv"
        assert cli.main(["report", "--in", str(results),
                         "--out", str(report)]) == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0] == "regime,n_train,median_auc,q25,q75"
        assert len(lines) == 2

    def test_pretrain_writes_checkpoint_and_log(self, capsys, tmp_path, sim_config):
        data_dir = tmp_path / "data"
        assert cli.main(["simulate", "--config", str(sim_config),
                         "--kind", "pretrain", "--out", str(data_dir)]) == 0
        ckpt = tmp_path / "enc.ckpt"
        log = tmp_path / "log.csv"
        assert cli.main(["pretrain", "--method", "ae", "--data", str(data_dir),
                         "--epochs", "1", "--steps", "10", "--out", str(ckpt),
                         "--log", str(log)]) == 0
        values, config = load_checkpoint(ckpt)
        assert config["method"] == "ae"
        assert config["in_channels"] == 3
        assert "conv1.weight" in values
        assert log.read_text().startswith("epoch,loss,metric")

    def test_import_subcommand(self, capsys, tmp_path):
        d = tmp_path / "csvs"
        d.mkdir()
        np.savetxt(d / "s0.csv", np.zeros((2, 30)), delimiter=",")
        (tmp_path / "labels.txt").write_text("s0,1\n")
        out = tmp_path / "imported.tsd"
        assert cli.main(["import", str(d), "--labels",
                         str(tmp_path / "labels.txt"), "--out", str(out)]) == 0
        ds = load_dataset(out)
        assert ds.data.shape == (1, 2, 30)

    def test_seed_env_override(self, capsys, tmp_path, sim_config, monkeypatch):
        outs = []
        for seed in ("123", "124"):
            monkeypatch.setenv("DYNPRE_SEED", seed)
            out = tmp_path / f"d{seed}"
            assert cli.main(["simulate", "--config", str(sim_config),
                             "--kind", "downstream", "--out", str(out)]) == 0
            outs.append((out / "downstream.tsd").read_bytes())
        assert outs[0] != outs[1]

    def test_same_seed_bit_identical_container(self, capsys, tmp_path, sim_config,
                                               monkeypatch):
        monkeypatch.setenv("DYNPRE_SEED", "55")
        blobs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            assert cli.main(["simulate", "--config", str(sim_config),
                             "--kind", "downstream", "--out", str(out)]) == 0
            blobs.append((out / "downstream.tsd").read_bytes())
        assert blobs[0] == blobs[1]
