"""Whole-sequence classification: windowing, biLSTM head, and the three
training regimes (frozen / unfrozen / not-pretrained encoder)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, loss_softmax_xent
from .encoder import WINDOW_LEN, EncoderConfig, build_encoder, encoder_forward
from .evaluation import auc
from .nn import (ParamStore, adam_step, clip_global_norm, lstm_cell_from_gates,
                 lstm_params, merge_stores, reduce_lr_on_plateau, xavier_init)

HIDDEN = 200
REGIMES = ("fpt", "ufpt", "npt")


@dataclass
class WindowingRule:
    window_length: int = WINDOW_LEN
    overlap: float = 0.0

    @property
    def stride(self):
        return int(round(self.window_length * (1.0 - self.overlap)))


@dataclass
class DownstreamHyper:
    lr: float = 3e-4
    batch_size: int = 16
    max_epochs: int = 500
    patience_stop: int = 50
    clip_norm: float = 5.0
    scheduler: bool = False        # Reduce-LR-on-plateau (real-data setting)
    sched_factor: float = 0.5
    sched_patience: int = 10


@dataclass
class TrialResult:
    regime: str
    n_train: int
    seed: int
    gain: float
    test_auc: float
    test_acc: float
    best_epoch: int
    val_auc: float

    def to_dict(self):
        return dict(regime=self.regime, n_train=self.n_train, seed=self.seed,
                    gain=self.gain, test_auc=self.test_auc, test_acc=self.test_acc,
                    best_epoch=self.best_epoch, val_auc=self.val_auc)


def make_windows(data, rule):
    """Slice (C, T) into ordered (n_windows, C, window) with the rule's
    stride; the trailing remainder is dropped."""
    C, T = data.shape
    w = rule.window_length
    if T < w:
        raise ValueError(f"series length {T} shorter than window {w}")
    stride = rule.stride
    count = (T - w) // stride + 1
    return np.stack([data[:, i * stride:i * stride + w] for i in range(count)])


def window_count(T, rule):
    return (T - rule.window_length) // rule.stride + 1


def build_head(rng, gain, input_dim=256, hidden=HIDDEN):
    """biLSTM (forward + backward cells) and the two dense layers, Xavier."""
    store = ParamStore()
    lstm_params(store, "lstm_f", input_dim, hidden, gain, rng)
    lstm_params(store, "lstm_b", input_dim, hidden, gain, rng)
    store.add("fc1.weight", xavier_init((hidden, 2 * hidden), gain, rng))
    store.add("fc1.bias", np.zeros(hidden))
    store.add("fc2.weight", xavier_init((2, hidden), gain, rng))
    store.add("fc2.bias", np.zeros(2))
    return store


def _run_lstm(head, prefix, zseq, reverse):
    B, n_w, d = zseq.shape
    wx, wh, b = head[f"{prefix}.wx"], head[f"{prefix}.wh"], head[f"{prefix}.b"]
    hidden = wh.shape[1]
    # input-side projection of the whole sequence in one matmul
    gx = ad.reshape(ad.linear(ad.reshape(zseq, (B * n_w, d)), wx, b),
                    (B, n_w, 4 * hidden))
    h = Tensor(np.zeros((B, hidden)))
    c = Tensor(np.zeros((B, hidden)))
    order = range(n_w - 1, -1, -1) if reverse else range(n_w)
    for t in order:
        h, c = lstm_cell_from_gates(gx[:, t, :], h, c, wh)
    return h


def head_forward(head, zseq):
    """zseq: (B, n_windows, 256) -> logits (B, 2). Last forward and last
    backward LSTM states are concatenated before the dense layers."""
    if zseq.shape[1] < 1:
        raise ValueError("empty window sequence")
    h_f = _run_lstm(head, "lstm_f", zseq, reverse=False)
    h_b = _run_lstm(head, "lstm_b", zseq, reverse=True)
    h = ad.concat([h_f, h_b], axis=1)
    h = ad.relu(ad.linear(h, head["fc1.weight"], head["fc1.bias"]))
    return ad.linear(h, head["fc2.weight"], head["fc2.bias"])


def encode_subjects(enc_store, config, windows, frozen):
    """windows: (B, n_w, C, 20) -> z sequence (B, n_w, 256) Tensor.

    With frozen=True the result is detached, so no gradient reaches the
    encoder.
    """
    B, n_w = windows.shape[:2]
    flat = windows.reshape(B * n_w, *windows.shape[2:])
    z = encoder_forward(enc_store, config, Tensor(flat)).z
    if frozen:
        z = z.detach()
    return ad.reshape(z, (B, n_w, config.latent_dim))


def subject_forward(enc_store, config, head, subject_data, rule):
    """Full forward pass for one subject (C, T) -> logits (2,)."""
    windows = make_windows(np.asarray(subject_data, dtype=float), rule)[None]
    zseq = encode_subjects(enc_store, config, windows, frozen=False)
    return ad.reshape(head_forward(head, zseq), (2,))


def predict_scores(logits):
    """Per-subject real score: logit[positive] - logit[negative]."""
    arr = np.atleast_2d(np.asarray(logits, dtype=float))
    return arr[:, 1] - arr[:, 0]


def _forward_batched(enc, config, head, windows, chunk=64):
    """Inference-only logits over (N, n_w, C, 20)."""
    outs = []
    for i in range(0, windows.shape[0], chunk):
        zseq = encode_subjects(enc, config, windows[i:i + chunk], frozen=True)
        outs.append(head_forward(head, zseq).data)
    return np.concatenate(outs, axis=0)


def sample_train_subjects(dataset, n_train, rng):
    """n_train subjects per class, uniform without replacement from the
    training split."""
    train_ids = dataset.subjects("train")
    chosen = []
    for cls in (0, 1):
        pool = train_ids[dataset.labels[train_ids] == cls]
        if len(pool) < n_train:
            raise ValueError(
                f"class {cls} has only {len(pool)} training subjects, need {n_train}")
        chosen.append(rng.choice(pool, size=n_train, replace=False))
    ids = np.concatenate(chosen)
    rng.shuffle(ids)
    return ids


def train_downstream(regime, enc_values, dataset, n_train, hyper, gain, rng,
                     rule=None, config=None, seed=0):
    """Train the downstream classifier under one regime and report test
    metrics at the best-validation-AUC checkpoint."""
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if regime in ("fpt", "ufpt") and enc_values is None:
        raise ValueError(f"{regime} requires a pretrained encoder checkpoint")
    rule = rule or WindowingRule()
    config = config or EncoderConfig(in_channels=dataset.data.shape[1])

    enc = build_encoder(config, rng)
    if regime in ("fpt", "ufpt"):
        enc.load_values(enc_values)
    head = build_head(rng, gain, input_dim=config.latent_dim)
    trainable = head if regime == "fpt" else merge_stores(head, enc)

    train_ids = sample_train_subjects(dataset, n_train, rng)
    if len(np.unique(dataset.labels[train_ids])) < 2:
        raise ValueError("sampled training set is missing a class")
    val_ids = dataset.subjects("val")
    test_ids = dataset.subjects("test")

    def windows_of(ids):
        return np.stack([make_windows(dataset.data[i], rule) for i in ids])

    train_w = windows_of(train_ids)
    val_w = windows_of(val_ids)
    test_w = windows_of(test_ids)
    train_y = dataset.labels[train_ids]
    frozen = regime == "fpt"
    if frozen:
        # encoder fixed: window codes can be computed once
        train_z = encode_subjects(enc, config, train_w, True).data
        val_z = encode_subjects(enc, config, val_w, True).data
        test_z = encode_subjects(enc, config, test_w, True).data
    enc_before = enc.copy_values()

    lr = hyper.lr
    val_history = []
    best_val = -1.0
    best_epoch = -1
    best_vals = None
    stagnant = 0
    n_sub = len(train_ids)
    for epoch in range(hyper.max_epochs):
        order = rng.permutation(n_sub)
        for i in range(0, n_sub, hyper.batch_size):
            idx = order[i:i + hyper.batch_size]
            if frozen:
                zseq = Tensor(train_z[idx])
            else:
                zseq = encode_subjects(enc, config, train_w[idx], False)
            logits = head_forward(head, zseq)
            loss = loss_softmax_xent(logits, train_y[idx])
            trainable.zero_grad()
            loss.backward()
            clip_global_norm(trainable, hyper.clip_norm)
            adam_step(trainable, lr)

        if frozen:
            val_logits = head_forward(head, Tensor(val_z)).data
        else:
            val_logits = _forward_batched(enc, config, head, val_w)
        val_auc = auc(predict_scores(val_logits), dataset.labels[val_ids])
        val_history.append(-val_auc)
        if hyper.scheduler:
            lr = reduce_lr_on_plateau(val_history, lr, hyper.sched_factor,
                                      hyper.sched_patience)
        if val_auc > best_val:
            best_val = val_auc
            best_epoch = epoch
            best_vals = (head.copy_values(), enc.copy_values())
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= hyper.patience_stop:
                break

    head.load_values(best_vals[0])
    enc.load_values(best_vals[1])
    if frozen:
        enc_after = enc.copy_values()
        for k in enc_before:
            assert np.array_equal(enc_before[k], enc_after[k]), \
                f"frozen encoder drifted at {k}"
        test_logits = head_forward(head, Tensor(test_z)).data
    else:
        test_logits = _forward_batched(enc, config, head, test_w)
    scores = predict_scores(test_logits)
    test_y = dataset.labels[test_ids]
    result = TrialResult(
        regime=regime, n_train=n_train, seed=seed, gain=gain,
        test_auc=auc(scores, test_y),
        test_acc=float(np.mean((scores > 0).astype(int) == test_y)),
        best_epoch=best_epoch, val_auc=best_val)
    return (enc, head), result


def train_window_probe(enc_values, dataset, n_train, rng, config=None,
                       rule=None, epochs=30, lr=3e-4):
    """Diagnostic: linear probe 256 -> 2 on frozen window codes, trained on
    individual windows rather than whole subjects."""
    rule = rule or WindowingRule()
    config = config or EncoderConfig(in_channels=dataset.data.shape[1])
    enc = build_encoder(config, rng)
    enc.load_values(enc_values)
    probe = ParamStore()
    probe.add("w", xavier_init((2, config.latent_dim), 1.0, rng))
    probe.add("b", np.zeros(2))

    train_ids = sample_train_subjects(dataset, n_train, rng)
    test_ids = dataset.subjects("test")

    def flat_codes(ids):
        w = np.stack([make_windows(dataset.data[i], rule) for i in ids])
        z = encode_subjects(enc, config, w, True).data
        y = np.repeat(dataset.labels[ids], w.shape[1])
        return z.reshape(-1, config.latent_dim), y

    zs, ys = flat_codes(train_ids)
    for _ in range(epochs):
        order = rng.permutation(len(ys))
        for i in range(0, len(ys), 256):
            idx = order[i:i + 256]
            logits = ad.linear(Tensor(zs[idx]), probe["w"], probe["b"])
            loss = loss_softmax_xent(logits, ys[idx])
            probe.zero_grad()
            loss.backward()
            adam_step(probe, lr)
    zt, yt = flat_codes(test_ids)
    logits = ad.linear(Tensor(zt), probe["w"], probe["b"]).data
    return auc(predict_scores(logits), yt)
