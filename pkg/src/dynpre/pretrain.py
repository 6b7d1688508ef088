"""Contrastive (InfoNCE over global/local separable critics) and autoencoder
pretraining of the window encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, infonce, linear, loss_mse, matmul, transpose
from .encoder import (WINDOW_LEN, EncoderConfig, build_decoder, build_encoder,
                      decoder_forward, encoder_forward)
from .nn import ParamStore, adam_step, merge_stores, xavier_init

EMBED_DIM = 128


@dataclass
class PairBatch:
    """B anchor windows at positions t and B partner windows at t + window;
    positives sit on the diagonal of the score matrix."""
    anchors: np.ndarray   # (B, C, 20)
    partners: np.ndarray  # (B, C, 20)


@dataclass
class PretrainHyper:
    lr: float = 3e-4
    batch_size: int = 64
    max_epochs: int = 15
    steps_per_epoch: int = 200
    eval_batches: int = 20


def build_critics(config, rng, gain=1.0, embed_dim=EMBED_DIM):
    """phi embeds z, psi embeds flattened c3; psi is shared between the
    global and local critics."""
    store = ParamStore()
    c3_flat = int(np.prod(config.c3_shape))
    store.add("phi.weight", xavier_init((embed_dim, config.latent_dim), gain, rng))
    store.add("phi.bias", np.zeros(embed_dim))
    store.add("psi.weight", xavier_init((embed_dim, c3_flat), gain, rng))
    store.add("psi.bias", np.zeros(embed_dim))
    return store


def _flat_c3(c3):
    B = c3.shape[0]
    return ad.reshape(c3, (B, c3.shape[1] * c3.shape[2]))


def critic_global(critics, z, c3):
    """f_global(z, c3) = phi(z)^T psi(flatten(c3)) for single vectors."""
    zt = Tensor(np.atleast_2d(np.asarray(z, dtype=float)))
    ct = Tensor(np.asarray(c3, dtype=float).reshape(1, -1))
    a = linear(zt, critics["phi.weight"], critics["phi.bias"])
    b = linear(ct, critics["psi.weight"], critics["psi.bias"])
    return float((a.data @ b.data.T).item())


def critic_local(critics, c3_t, c3_s):
    """f_local(c3_t, c3_s) = psi(c3_t)^T psi(c3_s); symmetric."""
    at = Tensor(np.asarray(c3_t, dtype=float).reshape(1, -1))
    bt = Tensor(np.asarray(c3_s, dtype=float).reshape(1, -1))
    a = linear(at, critics["psi.weight"], critics["psi.bias"])
    b = linear(bt, critics["psi.weight"], critics["psi.bias"])
    return float((a.data @ b.data.T).item())


def global_score_matrix(critics, anchor_z, partner_c3):
    a = linear(anchor_z, critics["phi.weight"], critics["phi.bias"])
    b = linear(_flat_c3(partner_c3), critics["psi.weight"], critics["psi.bias"])
    return matmul(a, transpose(b))


def local_score_matrix(critics, anchor_c3, partner_c3):
    a = linear(_flat_c3(anchor_c3), critics["psi.weight"], critics["psi.bias"])
    b = linear(_flat_c3(partner_c3), critics["psi.weight"], critics["psi.bias"])
    return matmul(a, transpose(b))


def stdim_loss(enc_store, config, critics, batch):
    """-(InfoNCE global + InfoNCE local) over one pair batch."""
    B = batch.anchors.shape[0]
    if B < 2:
        raise ValueError("stdim_loss needs at least 2 pairs")
    stacked = np.concatenate([batch.anchors, batch.partners], axis=0)
    pair = encoder_forward(enc_store, config, stacked)
    anchor_z = pair.z[:B]
    anchor_c3 = pair.c3[:B]
    partner_c3 = pair.c3[B:]
    s_global = global_score_matrix(critics, anchor_z, partner_c3)
    s_local = local_score_matrix(critics, anchor_c3, partner_c3)
    return -(infonce(s_global) + infonce(s_local))


def ae_loss(enc_store, dec_store, config, windows):
    """Mean-squared reconstruction error of decode(encode(x).z)."""
    x = windows if isinstance(windows, Tensor) else Tensor(windows)
    z = encoder_forward(enc_store, config, x).z
    recon = decoder_forward(dec_store, config, z)
    return loss_mse(recon, x)


# ---------------------------------------------------------------------------
# pair sampling

def _segment_bounds(T, fractions):
    t1 = int(T * fractions[0])
    t2 = t1 + int(T * fractions[1])
    return {"train": (0, t1), "val": (t1, t2), "test": (t2, T)}


def sample_pair_batch(dataset, B, rng, split="train"):
    """Uniformly sample B (anchor, next-window) pairs from the given time
    segment of the pretraining series; negatives are implicit in the batch."""
    lo, hi = _segment_bounds(dataset.data.shape[2], dataset.pretrain_split)[split]
    span = hi - lo - 2 * WINDOW_LEN
    if span < 0:
        raise ValueError(f"{split} segment too short for a window pair")
    series = rng.integers(0, dataset.n_subjects, size=B)
    starts = lo + rng.integers(0, span + 1, size=B)
    anchors = np.stack([dataset.data[s, :, t:t + WINDOW_LEN]
                        for s, t in zip(series, starts)])
    partners = np.stack([dataset.data[s, :, t + WINDOW_LEN:t + 2 * WINDOW_LEN]
                         for s, t in zip(series, starts)])
    return PairBatch(anchors, partners)


def contrastive_accuracy(enc_store, config, critics, batches):
    """Fraction of anchors whose positive partner wins the global-critic
    argmax within its batch."""
    hits = 0
    total = 0
    for batch in batches:
        B = batch.anchors.shape[0]
        if B < 2:
            raise ValueError("contrastive accuracy needs batches of size >= 2")
        stacked = np.concatenate([batch.anchors, batch.partners], axis=0)
        pair = encoder_forward(enc_store, config, Tensor(stacked))
        scores = global_score_matrix(
            critics, pair.z[:B], pair.c3[B:]).data
        hits += int(np.sum(scores.argmax(axis=1) == np.arange(B)))
        total += B
    return hits / total


# ---------------------------------------------------------------------------
# training loops

def pretrain(method, dataset, hyper, rng, config=None, log=None):
    """Pretrain the encoder with ST-DIM or the autoencoder baseline.

    Returns (encoder values, auxiliary values, metric log). Checkpoint
    selection: best validation contrastive accuracy (stdim) or lowest
    validation reconstruction error (ae). A non-finite loss aborts the run
    and returns the last selected checkpoint.
    """
    if config is None:
        config = EncoderConfig(in_channels=dataset.data.shape[1])
    enc = build_encoder(config, rng)
    if method == "stdim":
        aux = build_critics(config, rng)
    elif method == "ae":
        aux = build_decoder(config, rng)
    else:
        raise ValueError(f"unknown pretraining method {method!r}")
    trainable = merge_stores(enc, aux)

    eval_rng = np.random.default_rng(rng.integers(2 ** 63))
    eval_batches = [sample_pair_batch(dataset, hyper.batch_size, eval_rng, "val")
                    for _ in range(hyper.eval_batches)]

    best_metric = None
    best = (enc.copy_values(), aux.copy_values())
    rows = []
    for epoch in range(hyper.max_epochs):
        epoch_loss = 0.0
        for _ in range(hyper.steps_per_epoch):
            batch = sample_pair_batch(dataset, hyper.batch_size, rng, "train")
            if method == "stdim":
                loss = stdim_loss(enc, config, aux, batch)
            else:
                loss = ae_loss(enc, aux, config, batch.anchors)
            if not np.isfinite(loss.data):
                return best[0], best[1], rows
            trainable.zero_grad()
            loss.backward()
            adam_step(trainable, hyper.lr)
            epoch_loss += loss.item()
        epoch_loss /= hyper.steps_per_epoch

        if method == "stdim":
            metric = contrastive_accuracy(enc, config, aux, eval_batches)
            improved = best_metric is None or metric > best_metric
        else:
            metric = float(np.mean(
                [ae_loss(enc, aux, config, b.anchors).item() for b in eval_batches]))
            improved = best_metric is None or metric < best_metric
        if improved:
            best_metric = metric
            best = (enc.copy_values(), aux.copy_values())
        rows.append({"epoch": epoch, "loss": epoch_loss, "metric": metric})
        if log is not None:
            log(rows[-1])
    return best[0], best[1], rows
