"""Proximal operator networks: a residual CNN and a small U-Net, each in a
static and a time-embedded flavor.

Complex images cross into the networks as 2-channel real tensors
(channel 0 real, channel 1 imaginary) and come back the same way.
"""

from __future__ import annotations

import os

import numpy as np

from .. import ktn
from . import engine as en
from .engine import Tensor
from .layers import (
    Conv2d,
    FilmHead,
    ParamStore,
    TimeEmbedder,
    default_groups,
    film_modulate,
    film_residual_modulate,
)


def complex_to_channels(img):
    img = np.asarray(img, dtype=np.complex128)
    return np.stack([img.real, img.imag])


def channels_to_complex(arr):
    return arr[0] + 1j * arr[1]


class ProxNetworkBase:
    """Shared surface of the proximal networks: a flat parameter store plus
    bridges between flat complex vectors, complex images and the 2-channel
    real tensors the forward pass consumes."""

    store: ParamStore

    def parameters(self):
        return self.store.params

    def count_parameters(self):
        return self.store.count()

    def apply_complex(self, img, t=None):
        out = self.forward(Tensor(complex_to_channels(img)), t)
        return channels_to_complex(out.data)

    def apply(self, u, noise_precision=1.0, t=None):
        """Proximal-map duck type; flat complex vectors in and out."""
        u = np.asarray(u)
        if u.ndim == 2:
            return self.apply_complex(u, t)
        side = int(round(np.sqrt(u.size)))
        if u.ndim != 1 or side * side != u.size:
            raise ValueError("flat inputs must come from square images")
        return self.apply_complex(u.reshape(side, side), t).ravel()


class ResNetProx(ProxNetworkBase):
    """Input conv, a stack of conv-ReLU-conv residual blocks with a 0.1
    residual scale, an output conv, and a global input-to-output skip.
    Time-embedded blocks first perturb their input with the scaled FiLM
    modulation before the convolutions."""

    def __init__(self, blocks=3, channels=16, scale=0.1, time_embedded=False,
                 tau=0.1, seed=0, embed_dim=32, period=10000.0, hidden=128):
        self.blocks = blocks
        self.channels = channels
        self.scale = scale
        self.tau = tau
        self.time_embedded = time_embedded
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        self.conv_in = Conv2d(self.store, "conv_in", 2, channels, rng)
        self.block_convs = []
        for i in range(blocks):
            c1 = Conv2d(self.store, f"block{i}.conv1", channels, channels, rng)
            c2 = Conv2d(self.store, f"block{i}.conv2", channels, channels, rng)
            self.block_convs.append((c1, c2))
        self.conv_out = Conv2d(self.store, "conv_out", channels, 2, rng)
        if time_embedded:
            self.time = TimeEmbedder(self.store, rng, embed_dim, period, hidden)
            self.heads = [
                FilmHead(self.store, f"block{i}.film", hidden, channels, rng)
                for i in range(blocks)
            ]
        self.groups = default_groups(channels)

    def forward(self, x, t=None):
        x = en._as_tensor(x)
        if self.time_embedded:
            if t is None:
                raise ValueError("time-embedded network needs the unroll index t")
            feat = self.time.features(t)
        h = self.conv_in(x)
        for i, (c1, c2) in enumerate(self.block_convs):
            f = h
            if self.time_embedded:
                alpha, beta = self.heads[i](feat)
                f = film_residual_modulate(f, alpha, beta, self.tau, self.groups)
            body = c2(en.relu(c1(f)))
            h = en.add(h, en.mul(Tensor(self.scale), body))
        return en.add(x, self.conv_out(h))


class _ResBlock:
    """U-Net residual block: GN, SiLU, conv, (FiLM | GN), SiLU, conv with a
    1x1 skip when the channel count changes."""

    def __init__(self, store, name, cin, cout, rng, time_embedded, hidden):
        self.cin, self.cout = cin, cout
        self.gin = default_groups(cin)
        self.gmid = default_groups(cout)
        self.conv1 = Conv2d(store, f"{name}.conv1", cin, cout, rng)
        self.conv2 = Conv2d(store, f"{name}.conv2", cout, cout, rng)
        self.skip = None
        if cin != cout:
            self.skip = Conv2d(store, f"{name}.skip", cin, cout, rng, kernel=1)
        self.head = None
        if time_embedded:
            self.head = FilmHead(store, f"{name}.film", hidden, cout, rng)

    def __call__(self, x, feat):
        h = self.conv1(en.silu(en.group_norm(x, self.gin)))
        if self.head is not None:
            alpha, beta = self.head(feat)
            h = film_modulate(h, alpha, beta, self.gmid)
        else:
            h = en.group_norm(h, self.gmid)
        h = self.conv2(en.silu(h))
        s = x if self.skip is None else self.skip(x)
        return en.add(s, h)


class UNetProx(ProxNetworkBase):
    """Two downsampling stages, a bottleneck and two upsampling stages with
    skip concatenation; channels double on the way down."""

    def __init__(self, base_channels=16, res_blocks=1, time_embedded=False,
                 seed=0, embed_dim=32, period=10000.0, hidden=128):
        self.base_channels = base_channels
        self.res_blocks = res_blocks
        self.time_embedded = time_embedded
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        c = base_channels
        self.conv_in = Conv2d(self.store, "conv_in", 2, c, rng)
        if time_embedded:
            self.time = TimeEmbedder(self.store, rng, embed_dim, period, hidden)

        def stage(name, cin, cout):
            blocks = []
            for i in range(res_blocks):
                blocks.append(
                    _ResBlock(self.store, f"{name}.rb{i}", cin if i == 0 else cout,
                              cout, rng, time_embedded, hidden)
                )
            return blocks

        self.down0 = stage("down0", c, c)
        self.down1 = stage("down1", c, 2 * c)
        self.mid = stage("mid", 2 * c, 4 * c)
        self.up1 = stage("up1", 4 * c + 2 * c, 2 * c)
        self.up0 = stage("up0", 2 * c + c, c)
        self.conv_out = Conv2d(self.store, "conv_out", c, 2, rng)

    def forward(self, x, t=None):
        x = en._as_tensor(x)
        if x.shape[1] % 4 or x.shape[2] % 4:
            raise ValueError("U-Net input dims must be divisible by 4")
        feat = None
        if self.time_embedded:
            if t is None:
                raise ValueError("time-embedded network needs the unroll index t")
            feat = self.time.features(t)
        h = self.conv_in(x)
        for blk in self.down0:
            h = blk(h, feat)
        skip0 = h
        h = en.avg_pool2(h)
        for blk in self.down1:
            h = blk(h, feat)
        skip1 = h
        h = en.avg_pool2(h)
        for blk in self.mid:
            h = blk(h, feat)
        h = en.upsample_nearest2(h)
        h = en.concat([h, skip1], axis=0)
        for blk in self.up1:
            h = blk(h, feat)
        h = en.upsample_nearest2(h)
        h = en.concat([h, skip0], axis=0)
        for blk in self.up0:
            h = blk(h, feat)
        return self.conv_out(h)


def resnet_full(time_embedded=False, seed=0):
    """Full-size residual network (15 blocks x 64 channels)."""
    return ResNetProx(blocks=15, channels=64, time_embedded=time_embedded, seed=seed)


def unet_full(time_embedded=False, seed=0):
    """Full-size U-Net (base 32, two residual blocks per stage)."""
    return UNetProx(base_channels=32, res_blocks=2, time_embedded=time_embedded, seed=seed)


def forward_prox(net, image_2ch, t=None):
    """Run a proximal network on a 2-channel real image (array or Tensor)."""
    if isinstance(image_2ch, Tensor):
        return net.forward(image_2ch, t)
    return net.forward(Tensor(np.asarray(image_2ch)), t).data


def build_network(arch, time_embedded=False, seed=0, **kwargs):
    if arch == "resnet":
        return ResNetProx(time_embedded=time_embedded, seed=seed, **kwargs)
    if arch == "unet":
        return UNetProx(time_embedded=time_embedded, seed=seed, **kwargs)
    raise ValueError(f"unknown architecture {arch!r}")


def save_checkpoint(directory, named_params):
    """Write each parameter as a KTN1 tensor plus a manifest of
    (name, shape, dtype, file) lines."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for i, (name, tensor) in enumerate(named_params.items()):
        fname = f"p{i:05d}.ktn"
        data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
        ktn.write_ktn(os.path.join(directory, fname), data.astype(np.float64))
        shape = "x".join(str(d) for d in data.shape) if data.ndim else "scalar"
        lines.append(f"{name}\t{shape}\tf64\t{fname}")
    with open(os.path.join(directory, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(directory):
    """Return the name -> ndarray map recorded by save_checkpoint."""
    state = {}
    with open(os.path.join(directory, "manifest.txt")) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, _shape, _dtype, fname = line.split("\t")
            state[name] = ktn.read_ktn(os.path.join(directory, fname))
    return state
