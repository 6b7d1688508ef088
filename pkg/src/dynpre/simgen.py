"""VAR/SVAR simulation: stable transition matrices, series generation,
undersampling, and assembly of the pretraining / downstream datasets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LABEL_SVAR = 0
LABEL_VAR = 1
BURN_IN = 200


@dataclass
class TransitionMatrix:
    A: np.ndarray
    n_nodes: int
    spectral_radius: float
    graph_id: int = 0


@dataclass
class TimeSeries:
    data: np.ndarray  # channels x T
    label: int
    graph_id: int = 0
    rate: int = 1

    @property
    def T(self):
        return self.data.shape[1]


@dataclass
class SimDatasetSpec:
    """Sizes for both dataset kinds. Paper scale: 50 pretrain series of
    10 x 20000 split 14000/4000/2000 along time; 400 graphs x 5 series of
    10 x 4000 split 1600/200/200 by subject."""
    n_nodes: int = 10
    n_pretrain_series: int = 50
    pretrain_T: int = 20000
    pretrain_split: tuple = (0.7, 0.2, 0.1)
    n_graphs: int = 400
    series_per_graph: int = 5
    downstream_T: int = 4000
    downstream_split: tuple = (0.8, 0.1, 0.1)
    noise_std: float = 1.0
    spectral_target: float = 0.995
    density: float = 1.0
    master_seed: int = 0


@dataclass
class SimDataset:
    """In-memory dataset container; mirrors the on-disk TSD1 layout."""
    data: np.ndarray      # n_subjects x channels x T
    labels: np.ndarray    # int per subject
    splits: np.ndarray    # 0=train 1=val 2=test per subject
    graph_ids: np.ndarray = None
    rates: np.ndarray = None
    pretrain_split: tuple = None  # time-axis fractions, pretrain kind only

    @property
    def n_subjects(self):
        return self.data.shape[0]

    def subjects(self, split):
        tag = {"train": 0, "val": 1, "test": 2}[split]
        return np.flatnonzero(self.splits == tag)


def _stream(master_seed, *key):
    """Deterministic per-unit RNG stream; order-independent across units."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


def gen_stable_transition(n_nodes, density, spectral_target, rng, graph_id=0):
    """Random transition matrix rescaled to an exact target spectral radius."""
    if not 0 < spectral_target < 1:
        raise ValueError("spectral_target must lie in (0, 1)")
    if not 0 < density <= 1:
        raise ValueError("density must lie in (0, 1]")
    if n_nodes < 1:
        raise ValueError("n_nodes must be positive")
    while True:
        A = rng.uniform(-1.0, 1.0, size=(n_nodes, n_nodes))
        if density < 1:
            A *= rng.random(size=A.shape) < density
        rho = np.max(np.abs(np.linalg.eigvals(A)))
        if rho > 0:
            break
    A *= spectral_target / rho
    return TransitionMatrix(A, n_nodes, spectral_target, graph_id)


def simulate_var(tm, T, noise_std, rng, burn_in=BURN_IN, x0=None):
    """x_t = A x_{t-1} + eps_t with i.i.d. Gaussian innovations; x_0 drawn
    from the noise distribution unless forced. The first `burn_in` steps are
    discarded so recorded series are near-stationary."""
    if T < 1:
        raise ValueError("T must be positive")
    n = tm.n_nodes
    A = tm.A
    eps = noise_std * rng.standard_normal((burn_in + T, n))
    x = eps[0].copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    out = np.empty((T, n))
    if burn_in == 0:
        out[0] = x
    for t in range(1, burn_in + T):
        x = A @ x + eps[t]
        if t >= burn_in:
            out[t - burn_in] = x
    return TimeSeries(out.T.copy(), LABEL_VAR, tm.graph_id, rate=1)


def undersample(ts, rate):
    """Keep every `rate`-th column; rate 2 turns a VAR series into SVAR."""
    if rate < 1:
        raise ValueError("rate must be >= 1")
    if ts.T < rate:
        raise ValueError("series shorter than undersampling rate")
    if rate == 1:
        return TimeSeries(ts.data.copy(), ts.label, ts.graph_id, ts.rate)
    return TimeSeries(
        ts.data[:, ::rate].copy(), LABEL_SVAR, ts.graph_id, rate=rate)


def standardize(data):
    """Z-score each channel of each series over its own time axis; keeps
    encoder inputs at unit scale (class-symmetric: VAR and SVAR share
    marginal statistics)."""
    m = data.mean(axis=-1, keepdims=True)
    s = data.std(axis=-1, keepdims=True)
    return (data - m) / np.where(s > 0, s, 1.0)


def build_sim_dataset(spec, kind):
    """Assemble the pretraining or downstream dataset.

    pretrain: n_pretrain_series VAR series, split along time by fractions.
    downstream: n_graphs graphs x series_per_graph series, half VAR (rate 1)
    and half SVAR (rate 2, simulated at 2*T then undersampled), split by
    subject.
    """
    if kind == "pretrain":
        series = []
        for i in range(spec.n_pretrain_series):
            rng = _stream(spec.master_seed, 0, i)
            tm = gen_stable_transition(
                spec.n_nodes, spec.density, spec.spectral_target, rng, graph_id=i)
            series.append(simulate_var(tm, spec.pretrain_T, spec.noise_std, rng))
        data = standardize(np.stack([s.data for s in series]))
        n = len(series)
        return SimDataset(
            data=data,
            labels=np.full(n, LABEL_VAR, dtype=np.int64),
            splits=np.zeros(n, dtype=np.int64),
            graph_ids=np.arange(n, dtype=np.int64),
            rates=np.ones(n, dtype=np.int64),
            pretrain_split=tuple(spec.pretrain_split),
        )
    if kind != "downstream":
        raise ValueError(f"unknown dataset kind {kind!r}")

    n_sub = spec.n_graphs * spec.series_per_graph
    data = np.empty((n_sub, spec.n_nodes, spec.downstream_T))
    labels = np.empty(n_sub, dtype=np.int64)
    graph_ids = np.empty(n_sub, dtype=np.int64)
    rates = np.empty(n_sub, dtype=np.int64)
    idx = 0
    for g in range(spec.n_graphs):
        gen = _stream(spec.master_seed, 1, g)
        tm = gen_stable_transition(
            spec.n_nodes, spec.density, spec.spectral_target, gen, graph_id=g)
        for s in range(spec.series_per_graph):
            rng = _stream(spec.master_seed, 1, g, s)
            # alternate classes within a graph so every split stays balanced
            if (g * spec.series_per_graph + s) % 2 == 0:
                ts = simulate_var(tm, spec.downstream_T, spec.noise_std, rng)
            else:
                src = simulate_var(tm, 2 * spec.downstream_T, spec.noise_std, rng)
                ts = undersample(src, 2)
            data[idx] = ts.data
            labels[idx] = ts.label
            graph_ids[idx] = g
            rates[idx] = ts.rate
            idx += 1

    f_train, f_val, f_test = spec.downstream_split
    n_train = int(round(n_sub * f_train))
    n_val = int(round(n_sub * f_val))
    splits = np.full(n_sub, 2, dtype=np.int64)
    # splits cut along the graph axis; class alternation keeps each balanced
    splits[:n_train] = 0
    splits[n_train:n_train + n_val] = 1
    return SimDataset(standardize(data), labels, splits, graph_ids, rates)
