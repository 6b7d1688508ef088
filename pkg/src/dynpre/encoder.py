"""Window encoder (1-D conv stack + linear head) and the mirror decoder."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import ParamStore, orthogonal_init

WINDOW_LEN = 20
LATENT_DIM = 256


@dataclass
class EncoderConfig:
    variant: str = "sim"
    in_channels: int = 10
    conv_channels: tuple = (32, 64, 128, 64)
    kernel_sizes: tuple = (4, 4, 3, 2)
    latent_dim: int = LATENT_DIM

    @classmethod
    def sim(cls):
        return cls()

    @classmethod
    def real(cls, in_channels=53):
        return cls(variant="real", in_channels=in_channels,
                   conv_channels=(64, 128, 200), kernel_sizes=(4, 4, 3))

    def conv_out_lengths(self):
        lengths = []
        L = WINDOW_LEN
        for k in self.kernel_sizes:
            L = L - k + 1
            if L < 1:
                raise ValueError("kernel stack longer than window")
            lengths.append(L)
        return lengths

    @property
    def flatten_dim(self):
        return self.conv_channels[-1] * self.conv_out_lengths()[-1]

    @property
    def c3_shape(self):
        return (self.conv_channels[2], self.conv_out_lengths()[2])


@dataclass
class LatentPair:
    z: Tensor       # (B, 256)
    c3: Tensor      # (B, C3, L3)


def build_encoder(config, rng, gain=1.0):
    """Orthogonally initialized conv stack + final linear, zero biases."""
    store = ParamStore()
    cin = config.in_channels
    for i, (cout, k) in enumerate(zip(config.conv_channels, config.kernel_sizes)):
        store.add(f"conv{i + 1}.weight", orthogonal_init((cout, cin, k), gain, rng))
        store.add(f"conv{i + 1}.bias", np.zeros(cout))
        cin = cout
    store.add("fc.weight",
              orthogonal_init((config.latent_dim, config.flatten_dim), gain, rng))
    store.add("fc.bias", np.zeros(config.latent_dim))
    return store


def encoder_forward(store, config, windows):
    """Encode a batch of windows (B, C, 20) -> LatentPair.

    ReLU after every conv; c3 is the post-ReLU map of the third conv layer;
    z has no terminal nonlinearity.
    """
    x = windows if isinstance(windows, Tensor) else Tensor(windows)
    if x.ndim == 2:
        x = ad.reshape(x, (1,) + x.shape)
    if x.shape[1] != config.in_channels or x.shape[2] != WINDOW_LEN:
        raise ValueError(f"window shape {x.shape[1:]} does not match config")
    c3 = None
    for i in range(len(config.conv_channels)):
        x = ad.relu(ad.conv1d(x, store[f"conv{i + 1}.weight"], store[f"conv{i + 1}.bias"]))
        if i == 2:
            c3 = x
    B = x.shape[0]
    flat = ad.reshape(x, (B, config.flatten_dim))
    z = ad.linear(flat, store["fc.weight"], store["fc.bias"])
    if not np.all(np.isfinite(z.data)):
        raise FloatingPointError("non-finite encoder output")
    return LatentPair(z=z, c3=c3)


def build_decoder(config, rng, gain=1.0):
    """Mirror of the sim encoder: linear 256 -> flatten_dim, then transposed
    convs back out to the input window shape."""
    if config.variant != "sim":
        raise ValueError("decoder is defined for the sim variant only")
    store = ParamStore()
    store.add("expand.weight",
              orthogonal_init((config.flatten_dim, config.latent_dim), gain, rng))
    store.add("expand.bias", np.zeros(config.flatten_dim))
    chans = list(config.conv_channels[::-1])[1:] + [config.in_channels]  # (128,64,32,10)
    kernels = config.kernel_sizes[::-1]                                  # (2,3,4,4)
    cin = config.conv_channels[-1]
    for i, (cout, k) in enumerate(zip(chans, kernels)):
        store.add(f"tconv{i + 1}.weight", orthogonal_init((cin, cout, k), gain, rng))
        store.add(f"tconv{i + 1}.bias", np.zeros(cout))
        cin = cout
    return store


def decoder_forward(store, config, z):
    """Decode latent vectors (B, 256) back to windows (B, C, 20).

    ReLU between transposed conv layers, linear output after the last.
    """
    z = z if isinstance(z, Tensor) else Tensor(z)
    if z.ndim == 1:
        z = ad.reshape(z, (1,) + z.shape)
    x = ad.linear(z, store["expand.weight"], store["expand.bias"])
    L = config.conv_out_lengths()[-1]
    x = ad.reshape(x, (z.shape[0], config.conv_channels[-1], L))
    n = len(config.kernel_sizes)
    for i in range(n):
        x = ad.tconv1d(x, store[f"tconv{i + 1}.weight"], store[f"tconv{i + 1}.bias"])
        if i < n - 1:
            x = ad.relu(x)
    return x
