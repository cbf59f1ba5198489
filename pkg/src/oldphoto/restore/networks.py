"""Network definitions for the two VAEs, the latent mapping and the critics."""
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import InvalidInputError
from ..partial_nonlocal import PartialNonlocalBlock, fuse_branches


@dataclass
class RestoreArch:
    ngf: int = 64
    latent_channels: int = 64
    n_res: int = 4
    mapping_width: int = 512
    n_local_res: int = 2
    n_global_res: int = 2
    n_shared_res: int = 6
    norm: str = "instance"
    residual_nonlocal: bool = True
    ndf: int = 64
    d_layers: int = 4
    latent_d_layers: int = 4
    perceptual_layers: int = 5
    perceptual_width: int = 32
    perceptual_seed: int = 1234


def norm_layer(kind, channels):
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "none":
        return nn.Identity()
    raise InvalidInputError(f"unknown norm {kind!r}")


class ResBlock(nn.Module):
    def __init__(self, channels, norm="instance"):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            norm_layer(norm, channels),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, channels, 3, 1, 1),
            norm_layer(norm, channels),
        )

    def forward(self, x):
        return x + self.body(x)


def conv_block(cin, cout, k, s, p, norm):
    return nn.Sequential(nn.Conv2d(cin, cout, k, s, p), norm_layer(norm, cout), nn.LeakyReLU(0.2))


class Encoder(nn.Module):
    """7x7 conv, two stride-2 4x4 convs, ResBlocks, then 1x1 heads for mu and logvar."""

    def __init__(self, arch, in_channels=3):
        super().__init__()
        c = arch.ngf
        self.body = nn.Sequential(
            nn.ReflectionPad2d(3),
            conv_block(in_channels, c, 7, 1, 0, arch.norm),
            conv_block(c, c, 4, 2, 1, arch.norm),
            conv_block(c, c, 4, 2, 1, arch.norm),
            *[ResBlock(c, arch.norm) for _ in range(arch.n_res)],
        )
        self.mu = nn.Conv2d(c, arch.latent_channels, 1)
        self.logvar = nn.Conv2d(c, arch.latent_channels, 1)

    def forward(self, x):
        h = self.body(x)
        return self.mu(h), self.logvar(h)


class Generator(nn.Module):
    """ResBlocks, two stride-2 4x4 deconvs, 7x7 conv, tanh to the signed range."""

    def __init__(self, arch, out_channels=3):
        super().__init__()
        c = arch.ngf
        self.latent_channels = arch.latent_channels
        self.body = nn.Sequential(
            nn.Conv2d(arch.latent_channels, c, 1) if arch.latent_channels != c else nn.Identity(),
            *[ResBlock(c, arch.norm) for _ in range(arch.n_res)],
            nn.ConvTranspose2d(c, c, 4, 2, 1), norm_layer(arch.norm, c), nn.LeakyReLU(0.2),
            nn.ConvTranspose2d(c, c, 4, 2, 1), norm_layer(arch.norm, c), nn.LeakyReLU(0.2),
            nn.ReflectionPad2d(3),
            nn.Conv2d(c, out_channels, 7, 1, 0),
            nn.Tanh(),
        )

    def forward(self, z):
        return self.body(z)


class VAE(nn.Module):
    def __init__(self, arch):
        super().__init__()
        self.encoder = Encoder(arch)
        self.generator = Generator(arch)
        self.latent_channels = arch.latent_channels


class MappingNet(nn.Module):
    """Latent-to-latent translator with a local and a mask-guided global branch."""

    def __init__(self, arch):
        super().__init__()
        w = arch.mapping_width
        lc = arch.latent_channels
        widths = [lc, max(1, w // 4), max(1, w // 2), w]
        self.head = nn.Sequential(*[
            conv_block(widths[i], widths[i + 1], 3, 1, 1, arch.norm) for i in range(3)
        ])
        self.nonlocal_block = PartialNonlocalBlock(w, residual=arch.residual_nonlocal)
        self.global_res = nn.Sequential(*[ResBlock(w, arch.norm) for _ in range(arch.n_global_res)])
        self.local_res = nn.Sequential(*[ResBlock(w, arch.norm) for _ in range(arch.n_local_res)])
        self.shared_res = nn.Sequential(*[ResBlock(w, arch.norm) for _ in range(arch.n_shared_res)])
        tail = [w, max(1, w // 2), max(1, w // 4)]
        self.tail = nn.Sequential(
            conv_block(tail[0], tail[1], 3, 1, 1, arch.norm),
            conv_block(tail[1], tail[2], 3, 1, 1, arch.norm),
            nn.Conv2d(tail[2], lc, 3, 1, 1),
        )

    def branches(self, z, m):
        h = self.head(z)
        local = self.local_res(h)
        glob = self.global_res(self.nonlocal_block(h, m))
        return local, glob

    def forward(self, z, m):
        local, glob = self.branches(z, m)
        return self.tail(self.shared_res(fuse_branches(local, glob, m)))


class Discriminator(nn.Module):
    """Strided 4x4 conv stack ending in a one-channel logit map.

    ``forward`` returns the logit map; ``features`` returns every intermediate
    activation followed by the logits.
    """

    def __init__(self, in_channels, ndf=64, n_layers=4, max_width=512, norm="none"):
        super().__init__()
        layers = []
        cin = in_channels
        for i in range(n_layers):
            cout = min(ndf * 2 ** i, max_width)
            layers.append(nn.Sequential(
                nn.Conv2d(cin, cout, 4, 2, 1),
                norm_layer(norm, cout) if i > 0 else nn.Identity(),
                nn.LeakyReLU(0.2),
            ))
            cin = cout
        self.layers = nn.ModuleList(layers)
        self.head = nn.Conv2d(cin, 1, 3, 1, 1)

    def features(self, x):
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        feats.append(self.head(x))
        return feats

    def forward(self, x):
        return self.features(x)[-1]


class PerceptualExtractor(nn.Module):
    """Fixed multi-layer feature extractor.

    By default a frozen random conv stack built from ``seed``, used as a
    stand-in for pretrained classification features. ``load_weights`` swaps in
    parameters from a ``state_dict`` file with the same layout.
    """

    def __init__(self, in_channels=3, width=32, n_layers=5, seed=1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        cin = in_channels
        for i in range(n_layers):
            cout = width * min(2 ** (i // 2), 8)
            conv = nn.Conv2d(cin, cout, 3, 2 if i % 2 == 1 else 1, 1)
            with torch.no_grad():
                bound = (6.0 / (cin * 9)) ** 0.5
                conv.weight.copy_(torch.empty_like(conv.weight).uniform_(-bound, bound, generator=gen))
                conv.bias.zero_()
            layers.append(nn.Sequential(conv, nn.LeakyReLU(0.2)))
            cin = cout
        self.layers = nn.ModuleList(layers)
        self.requires_grad_(False)

    def load_weights(self, path):
        self.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
        self.requires_grad_(False)

    def features(self, x):
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return feats

    def train(self, mode=True):
        return super().train(False)


def downscale_mask(m, size):
    """Max-pool a ``(B, 1, H, W)`` mask to spatial ``size``; any defect marks the cell."""
    h, w = m.shape[-2:]
    th, tw = size
    if (h, w) == (th, tw):
        return m
    if h % th or w % tw or h // th != w // tw:
        raise InvalidInputError(f"mask {h}x{w} cannot be pooled to {th}x{tw}")
    return F.max_pool2d(m, h // th)


@dataclass
class RestorationNets:
    """Everything needed for ``G_Y(T(E_RX(r)))`` plus the training critics."""

    vae1: VAE
    vae2: VAE
    mapping: MappingNet = None
    d_vae1: Discriminator = None
    d_vae2: Discriminator = None
    d_latent: Discriminator = None
    d_mapping: Discriminator = None
    perceptual: PerceptualExtractor = None


def build_nets(arch, seed=0):
    torch.manual_seed(seed)
    return RestorationNets(
        vae1=VAE(arch),
        vae2=VAE(arch),
        mapping=MappingNet(arch),
        d_vae1=Discriminator(3, arch.ndf, arch.d_layers),
        d_vae2=Discriminator(3, arch.ndf, arch.d_layers),
        d_latent=Discriminator(arch.latent_channels, arch.ndf, arch.latent_d_layers),
        d_mapping=Discriminator(3, arch.ndf, arch.d_layers),
        perceptual=PerceptualExtractor(3, arch.perceptual_width, arch.perceptual_layers,
                                       arch.perceptual_seed),
    )
