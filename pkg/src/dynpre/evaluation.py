"""Metrics, the finite-difference gradient checker, and the multi-trial
experiment grid (regimes x training-set sizes, plus the Xavier-gain sweep)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


@dataclass
class GridSpec:
    n_train: tuple = (8, 16, 32, 64, 128)
    trials: int = 10
    gains: dict = field(default_factory=dict)  # arm label -> Xavier gain
    default_gain: float = 0.5


def auc(scores, labels):
    """Mann-Whitney AUC: probability a random positive outranks a random
    negative, ties counted one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def accuracy(scores, labels):
    preds = (np.asarray(scores) > 0).astype(int)
    return float(np.mean(preds == np.asarray(labels)))


# ---------------------------------------------------------------------------
# gradient oracle

def finite_diff_check(loss_fn, stores, h=1e-4, tol=1e-4):
    """Central-difference check of reverse-mode gradients.

    loss_fn() must rebuild the scalar loss from the stores' current values.
    Returns a report {param name: max relative error} plus a 'passed' flag.
    """
    if not isinstance(stores, (list, tuple)):
        stores = [stores]
    named = {}
    for i, store in enumerate(stores):
        for name, p in store.items():
            named[f"{i}:{name}" if len(stores) > 1 else name] = p
        store.zero_grad()
    loss = loss_fn()
    loss.backward()
    report = {}
    passed = True
    for name, p in named.items():
        g_an = p.tensor.grad
        if g_an is None:
            g_an = np.zeros_like(p.tensor.data)
        arr = p.tensor.data
        g_fd = np.empty(arr.size)
        for i, idx in enumerate(np.ndindex(arr.shape)):
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss_fn().item()
            arr[idx] = orig - h
            down = loss_fn().item()
            arr[idx] = orig
            g_fd[i] = (up - down) / (2 * h)
        g_fd = g_fd.reshape(arr.shape).ravel()
        denom = np.maximum(np.maximum(np.abs(g_fd), np.abs(g_an.ravel())), 1e-3)
        err = float(np.max(np.abs(g_fd - g_an.ravel()) / denom))
        report[name] = err
        if err >= tol:
            passed = False
    report["passed"] = passed
    return report


# ---------------------------------------------------------------------------
# experiment grid

def trial_rng(master_seed, *key):
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


def run_grid(grid, dataset, arms, master_seed, hyper=None, progress=None):
    """Run every (arm, n_train, trial) cell.

    arms: list of (label, regime, encoder values or None). Each trial draws a
    fresh subject sample and head init from its own RNG stream, so the table
    is reproducible and order-independent.
    """
    from .downstream import DownstreamHyper, train_downstream
    hyper = hyper or DownstreamHyper()
    rows = []
    for a, (label, regime, enc_values) in enumerate(arms):
        gain = grid.gains.get(label, grid.default_gain)
        for n_train in grid.n_train:
            for trial in range(grid.trials):
                rng = trial_rng(master_seed, a, n_train, trial)
                _, res = train_downstream(
                    regime, enc_values, dataset, n_train, hyper, gain, rng,
                    seed=trial)
                row = res.to_dict()
                row["arm"] = label
                rows.append(row)
                if progress is not None:
                    progress(row)
    return rows


def gain_sweep(regime, enc_values, dataset, n_train, master_seed, hyper=None,
               experiments=10, n_gains=20):
    """Try gains {0.05 k : k=1..20}, `experiments` runs each; pick the gain
    with the best median validation AUC, ties toward the smaller gain."""
    from .downstream import DownstreamHyper, train_downstream
    hyper = hyper or DownstreamHyper()
    gains = [round(0.05 * k, 2) for k in range(1, n_gains + 1)]
    best_gain, best_med = None, -np.inf
    table = {}
    for gi, gain in enumerate(gains):
        vals = []
        for trial in range(experiments):
            rng = trial_rng(master_seed, 1000 + gi, n_train, trial)
            _, res = train_downstream(
                regime, enc_values, dataset, n_train, hyper, gain, rng, seed=trial)
            vals.append(res.val_auc)
        med = float(np.median(vals))
        table[gain] = med
        if med > best_med:
            best_med, best_gain = med, gain
    return best_gain, table


def summarize(rows):
    """Per (arm, n_train) median and quartiles of test AUC."""
    cells = {}
    for row in rows:
        cells.setdefault((row.get("arm", row["regime"]), row["n_train"]), []).append(
            row["test_auc"])
    out = []
    for (arm, n_train), vals in sorted(cells.items()):
        q25, med, q75 = np.percentile(vals, [25, 50, 75])
        out.append({"regime": arm, "n_train": n_train, "median_auc": float(med),
                    "q25": float(q25), "q75": float(q75), "trials": len(vals)})
    return out


def summary_csv(rows):
    lines = ["regime,n_train,median_auc,q25,q75"]
    for cell in summarize(rows):
        lines.append("{regime},{n_train},{median_auc:.6f},{q25:.6f},{q75:.6f}"
                     .format(**cell))
    return "\n".join(lines) + "\n"
