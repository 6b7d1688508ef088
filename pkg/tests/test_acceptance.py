"""End-to-end acceptance gate.

Each test prints one `ACCEPTANCE <n> <name>: PASS|FAIL` line on the real
terminal (bypassing capture) so the grid outcome is visible in any log.
The heavy fixtures (pretraining runs, downstream grid) are session-scoped
and shared across criteria.
"""
import json
import sys
import time

import numpy as np
import pytest

from dynpre import cli
from dynpre.autodiff import Tensor, infonce
from dynpre.containers import load_checkpoint, save_checkpoint
from dynpre.downstream import (DownstreamHyper, WindowingRule, train_downstream,
                               window_count)
from dynpre.encoder import EncoderConfig, build_decoder, build_encoder, decoder_forward
from dynpre.evaluation import GridSpec, auc, run_grid, summarize
from dynpre.gradcheck import gradcheck_all
from dynpre.pretrain import PretrainHyper, pretrain
from dynpre.simgen import SimDatasetSpec, build_sim_dataset

SEED = 2024


def report(number, name, ok):
    line = f"ACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'}\n"
    sys.__stdout__.write(line)
    sys.__stdout__.flush()
    return ok


# ---------------------------------------------------------------------------
# shared heavy artifacts

@pytest.fixture(scope="session")
def pretrain_set():
    """50 VAR series of 10x4000; 2800/800/400 time split per series."""
    spec = SimDatasetSpec(n_pretrain_series=50, pretrain_T=4000,
                          master_seed=SEED)
    ds = build_sim_dataset(spec, "pretrain")
    ds.pretrain_split = (0.7, 0.2, 0.1)
    return ds


@pytest.fixture(scope="session")
def downstream_set():
    """100 graphs x 5 series of 10x2000; 400/50/50 subject split."""
    spec = SimDatasetSpec(n_graphs=100, series_per_graph=5, downstream_T=2000,
                          n_pretrain_series=1, pretrain_T=400, master_seed=SEED)
    return build_sim_dataset(spec, "downstream")


@pytest.fixture(scope="session")
def stdim_run(pretrain_set):
    """ST-DIM pretraining; returns (encoder values, best accuracy, seconds)."""
    start = time.time()
    enc_values, _, rows = pretrain(
        "stdim", pretrain_set, PretrainHyper(max_epochs=120),
        np.random.default_rng(SEED))
    elapsed = time.time() - start
    best = max(r["metric"] for r in rows)
    return enc_values, best, elapsed


@pytest.fixture(scope="session")
def ae_run(pretrain_set):
    enc_values, _, rows = pretrain(
        "ae", pretrain_set, PretrainHyper(max_epochs=10),
        np.random.default_rng(SEED))
    return enc_values, rows


@pytest.fixture(scope="session")
def grid_rows(downstream_set, stdim_run, ae_run):
    """10 trials per (arm, n_train) cell for FPT/UFPT/NPT/FPT-AE."""
    arms = [
        ("fpt", "fpt", stdim_run[0]),
        ("ufpt", "ufpt", stdim_run[0]),
        ("npt", "npt", None),
        ("fpt-ae", "fpt", ae_run[0]),
    ]
    grid = GridSpec(n_train=(16, 128), trials=10,
                    gains={"fpt": 0.05, "ufpt": 0.05, "npt": 0.05,
                           "fpt-ae": 0.05})
    hyper = DownstreamHyper(patience_stop=5)
    return run_grid(grid, downstream_set, arms, SEED, hyper=hyper)


def median_auc(rows, arm, n_train):
    cells = summarize([r for r in rows if r["arm"] == arm
                       and r["n_train"] == n_train])
    return cells[0]["median_auc"]


# ---------------------------------------------------------------------------
# criteria

def test_criterion_1_gradient_fidelity():
    start = time.time()
    worst = {}
    ok = gradcheck_all(seeds=(0, 1, 2, 3, 4),
                       report=lambda name, err: worst.__setitem__(name, err))
    elapsed = time.time() - start
    ok = ok and elapsed < 120.0 and len(worst) == 10
    assert report(1, "gradient-fidelity", ok), (worst, elapsed)


def test_criterion_2_architecture_fidelity():
    sim = EncoderConfig.sim()
    real = EncoderConfig.real()
    dec = build_decoder(sim, np.random.default_rng(0))
    out = decoder_forward(dec, sim, np.random.default_rng(1).standard_normal((1, 256)))
    counts = (window_count(140, WindowingRule(20, 0.5)),
              window_count(140, WindowingRule(20, 0.0)),
              window_count(120, WindowingRule(20, 0.0)))
    ok = (sim.flatten_dim == 704 and real.flatten_dim == 2400
          and out.shape == (1, 10, 20) and counts == (13, 7, 6))
    assert report(2, "architecture-fidelity", ok), (sim.flatten_dim,
                                                    real.flatten_dim,
                                                    out.shape, counts)


def test_criterion_3_infonce_analytics():
    ok = True
    for B in (2, 5, 64):
        got = infonce(Tensor(np.full((B, B), 1.7))).item()
        ok = ok and abs(got - (-B * np.log(B))) < 1e-9
    two = infonce(Tensor(np.array([[np.log(2), 0.0], [0.0, np.log(2)]]))).item()
    ok = ok and abs(two - 2 * np.log(2.0 / 3.0)) < 1e-9
    assert report(3, "infonce-analytics", ok)


def test_criterion_4_auc_oracle():
    rng = np.random.default_rng(7)
    ok = True
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        scores = np.round(rng.standard_normal(n), 1)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[rng.integers(n)] = 1 - labels[0]
        pos = scores[labels == 1][:, None]
        neg = scores[labels == 0][None, :]
        brute = (np.sum(pos > neg) + 0.5 * np.sum(pos == neg)) / pos.size / neg.shape[1]
        if abs(auc(scores, labels) - brute) > 1e-10:
            ok = False
            break
    assert report(4, "auc-oracle", ok)


def test_criterion_5_pretraining_diagnostic(stdim_run):
    _, best, elapsed = stdim_run
    ok = best >= 0.85 and elapsed < 1800.0
    assert report(5, "pretraining-diagnostic", ok), (best, elapsed)


def test_criterion_6_pretraining_ordering(grid_rows):
    fpt16 = median_auc(grid_rows, "fpt", 16)
    ufpt16 = median_auc(grid_rows, "ufpt", 16)
    npt16 = median_auc(grid_rows, "npt", 16)
    big = [median_auc(grid_rows, arm, 128) for arm in ("fpt", "ufpt", "npt")]
    ok = (fpt16 - npt16 >= 0.05 and ufpt16 - npt16 >= 0.05
          and max(big) - min(big) <= 0.05)
    assert report(6, "pretraining-ordering", ok), (fpt16, ufpt16, npt16, big)


def test_criterion_7_autoencoder_negative(grid_rows):
    ae16 = median_auc(grid_rows, "fpt-ae", 16)
    npt16 = median_auc(grid_rows, "npt", 16)
    ok = ae16 - npt16 <= 0.03
    assert report(7, "autoencoder-negative", ok), (ae16, npt16)


def test_criterion_8_fpt_freeze(downstream_set, stdim_run):
    enc_values = stdim_run[0]
    hyper = DownstreamHyper(max_epochs=3)
    (enc, _), _ = train_downstream(
        "fpt", enc_values, downstream_set, 8, hyper, 0.5,
        np.random.default_rng(0))
    ok = all(np.array_equal(enc[k].data, v) for k, v in enc_values.items())
    assert report(8, "fpt-freeze", ok)


def test_criterion_9_cli_determinism(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "n_nodes": 10, "n_graphs": 10, "series_per_graph": 5,
        "downstream_T": 300, "n_pretrain_series": 2, "pretrain_T": 500}))
    monkeypatch.setenv("DYNPRE_SEED", "77")
    blobs = []
    for tag in ("a", "b"):
        data_dir = tmp_path / tag
        assert cli.main(["simulate", "--config", str(cfg),
                         "--kind", "downstream", "--out", str(data_dir)]) == 0
        results = tmp_path / f"{tag}.jsonl"
        assert cli.main(["train", "--mode", "npt", "--data", str(data_dir),
                         "--n-train", "4", "--epochs", "3",
                         "--out", str(results)]) == 0
        report_csv = tmp_path / f"{tag}.csv"
        assert cli.main(["report", "--in", str(results),
                         "--out", str(report_csv)]) == 0
        blobs.append(((data_dir / "downstream.tsd").read_bytes(),
                      results.read_bytes(), report_csv.read_bytes()))
    ok = blobs[0] == blobs[1]
    assert report(9, "cli-determinism", ok)
