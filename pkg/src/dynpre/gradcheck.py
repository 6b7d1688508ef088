"""Finite-difference verification of every differentiable primitive and both
composite losses, on random small shapes.

Central differences are only valid away from ReLU kinks, so the composite
checks randomize bias values (the production zero-bias init parks
pre-activations exactly on the kink) and resample until every pre-activation
clears the stencil width.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import (EncoderConfig, build_decoder, build_encoder,
                      encoder_forward)
from .evaluation import finite_diff_check
from .nn import ParamStore, lstm_cell
from .pretrain import PairBatch, ae_loss, build_critics, stdim_loss

KINK_MARGIN = 5e-4


def _store(**arrays):
    s = ParamStore()
    for name, arr in arrays.items():
        s.add(name, arr)
    return s


def _away_from_zero(rng, shape, margin=0.2):
    return np.sign(rng.standard_normal(shape)) * rng.uniform(margin, 1.0, shape)


def _proj(rng, shape):
    r = Tensor(rng.standard_normal(shape))
    return lambda t: ad.total(ad.mul(t, r))


def check_linear(rng):
    n, m = rng.integers(2, 9, size=2)
    s = _store(x=rng.standard_normal(n), w=rng.standard_normal((m, n)),
               b=rng.standard_normal(m))
    proj = _proj(rng, (m,))
    return finite_diff_check(lambda: proj(ad.linear(s["x"], s["w"], s["b"])), s)


def check_conv1d(rng):
    B, cin, cout = rng.integers(1, 4, size=3)
    k = rng.integers(1, 5)
    L = k + rng.integers(1, 8)
    s = _store(x=rng.standard_normal((B, cin, L)),
               w=rng.standard_normal((cout, cin, k)), b=rng.standard_normal(cout))
    proj = _proj(rng, (B, cout, L - k + 1))
    return finite_diff_check(lambda: proj(ad.conv1d(s["x"], s["w"], s["b"])), s)


def check_tconv1d(rng):
    B, cin, cout = rng.integers(1, 4, size=3)
    k = rng.integers(1, 5)
    L = rng.integers(2, 8)
    s = _store(x=rng.standard_normal((B, cin, L)),
               w=rng.standard_normal((cin, cout, k)), b=rng.standard_normal(cout))
    proj = _proj(rng, (B, cout, L + k - 1))
    return finite_diff_check(lambda: proj(ad.tconv1d(s["x"], s["w"], s["b"])), s)


def check_relu(rng):
    shape = tuple(rng.integers(2, 6, size=2))
    s = _store(x=_away_from_zero(rng, shape))
    proj = _proj(rng, shape)
    return finite_diff_check(lambda: proj(ad.relu(s["x"])), s)


def check_lstm_cell(rng):
    H = int(rng.integers(2, 6))
    n = int(rng.integers(2, 6))
    B = int(rng.integers(1, 4))
    s = _store(x=rng.standard_normal((B, n)), h=rng.standard_normal((B, H)),
               c=rng.standard_normal((B, H)),
               wx=0.5 * rng.standard_normal((4 * H, n)),
               wh=0.5 * rng.standard_normal((4 * H, H)),
               b=0.1 * rng.standard_normal(4 * H))
    proj_h = _proj(rng, (B, H))
    proj_c = _proj(rng, (B, H))

    def loss():
        h, c = lstm_cell(s["x"], s["h"], s["c"], s["wx"], s["wh"], s["b"])
        return proj_h(h) + proj_c(c)

    return finite_diff_check(loss, s)


def check_mse(rng):
    shape = tuple(rng.integers(2, 6, size=2))
    s = _store(a=rng.standard_normal(shape), b=rng.standard_normal(shape))
    return finite_diff_check(lambda: ad.loss_mse(s["a"], s["b"]), s)


def check_softmax_xent(rng):
    B = int(rng.integers(2, 8))
    s = _store(logits=rng.standard_normal((B, 2)))
    labels = rng.integers(0, 2, size=B)
    return finite_diff_check(lambda: ad.loss_softmax_xent(s["logits"], labels), s)


def check_infonce(rng):
    B = int(rng.integers(2, 8))
    s = _store(scores=rng.standard_normal((B, B)))
    return finite_diff_check(lambda: ad.infonce(s["scores"]), s)


# ---------------------------------------------------------------------------
# composite losses

def _toy_config(rng):
    chans = tuple(int(c) for c in rng.integers(2, 5, size=4))
    return EncoderConfig(in_channels=int(rng.integers(2, 5)), conv_channels=chans,
                         kernel_sizes=(4, 4, 3, 2), latent_dim=int(rng.integers(4, 8)))


def _randomize_biases(store, rng, scale=0.2):
    for name, p in store.items():
        if name.endswith(".bias"):
            p.tensor.data = scale * rng.standard_normal(p.tensor.data.shape)


def _encoder_margin(enc, config, x):
    t = Tensor(x)
    margin = np.inf
    for i in range(len(config.conv_channels)):
        pre = ad.conv1d(t, enc[f"conv{i + 1}.weight"], enc[f"conv{i + 1}.bias"])
        margin = min(margin, float(np.min(np.abs(pre.data))))
        t = ad.relu(pre)
    return margin


def _decoder_margin(dec, config, z):
    x = ad.linear(Tensor(z), dec["expand.weight"], dec["expand.bias"])
    x = ad.reshape(x, (z.shape[0], config.conv_channels[-1],
                       config.conv_out_lengths()[-1]))
    margin = np.inf
    n = len(config.kernel_sizes)
    for i in range(n - 1):
        pre = ad.tconv1d(x, dec[f"tconv{i + 1}.weight"], dec[f"tconv{i + 1}.bias"])
        margin = min(margin, float(np.min(np.abs(pre.data))))
        x = ad.relu(pre)
    return margin


def check_stdim_loss(rng):
    config = _toy_config(rng)
    batch = PairBatch(rng.standard_normal((3, config.in_channels, 20)),
                      rng.standard_normal((3, config.in_channels, 20)))
    stacked = np.concatenate([batch.anchors, batch.partners])
    while True:
        enc = build_encoder(config, rng)
        _randomize_biases(enc, rng)
        if _encoder_margin(enc, config, stacked) > KINK_MARGIN:
            break
    critics = build_critics(config, rng, embed_dim=4)
    return finite_diff_check(
        lambda: stdim_loss(enc, config, critics, batch), [enc, critics])


def check_ae_loss(rng):
    config = _toy_config(rng)
    windows = rng.standard_normal((2, config.in_channels, 20))
    while True:
        enc = build_encoder(config, rng)
        dec = build_decoder(config, rng)
        _randomize_biases(enc, rng)
        _randomize_biases(dec, rng)
        if _encoder_margin(enc, config, windows) <= KINK_MARGIN:
            continue
        z = encoder_forward(enc, config, windows).z.data
        if _decoder_margin(dec, config, z) > KINK_MARGIN:
            break
    return finite_diff_check(
        lambda: ae_loss(enc, dec, config, windows), [enc, dec])


ALL_CHECKS = {
    "linear": check_linear,
    "conv1d": check_conv1d,
    "tconv1d": check_tconv1d,
    "relu": check_relu,
    "lstm_cell": check_lstm_cell,
    "loss_mse": check_mse,
    "loss_softmax_xent": check_softmax_xent,
    "infonce": check_infonce,
    "stdim_loss": check_stdim_loss,
    "ae_loss": check_ae_loss,
}


def gradcheck_all(seeds=(0, 1, 2, 3, 4), report=None):
    """Run every check on `len(seeds)` random shapes/values each."""
    ok = True
    for name, check in ALL_CHECKS.items():
        worst = 0.0
        for seed in seeds:
            rep = check(np.random.default_rng(seed))
            errs = [v for k, v in rep.items() if k != "passed"]
            worst = max(worst, max(errs))
            ok = ok and rep["passed"]
        if report is not None:
            report(name, worst)
    return ok
