"""Hybrid attention-convolution segmentation network.

A patch-token transformer backbone produces a coarse connectivity prior;
a U-Net conditioned on the RGB frame concatenated with that prior predicts a
residual refinement map; the fused output clamps prior + recentered residual
into a probability map. A temporary reconstruction head on the final U-Net
features serves the self-supervised pretraining stage.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, NumericFault
from .raster import BinaryMask, ProbMap, RasterImage


@dataclass(frozen=True)
class HacConfig:
    """Architecture hyperparameters. The default preset is the full-scale
    512-px configuration; ``toy()`` is the desk-scale one."""

    image_size: int = 512
    patch: int = 8
    embed_dim: int = 384
    depth: int = 8
    heads: int = 4
    mlp_ratio: float = 4.0
    dropout: float = 0.1
    droppath_max: float = 0.1
    unet_base: int = 32
    unet_scales: tuple = (1, 2, 4, 8)
    pos_embed: bool = True

    def __post_init__(self):
        if self.image_size <= 0 or self.image_size % self.patch != 0:
            raise ConfigError(f"image size {self.image_size} not divisible by patch {self.patch}")
        if self.embed_dim % self.heads != 0:
            raise ConfigError(f"embed dim {self.embed_dim} not divisible by heads {self.heads}")
        n_up = math.log2(self.patch)
        if self.patch < 2 or n_up != int(n_up):
            raise ConfigError(f"patch size must be a power of two >= 2 to invert with stride-2 blocks, got {self.patch}")
        pool = 2 ** len(self.unet_scales)
        if self.image_size % pool != 0:
            raise ConfigError(f"image size {self.image_size} not divisible by the U-Net pooling factor {pool}")
        if any(s <= 0 for s in self.unet_scales):
            raise ConfigError("unet scales must be positive")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.droppath_max < 1.0):
            raise ConfigError("dropout and droppath rates must lie in [0, 1)")
        object.__setattr__(self, "unet_scales", tuple(int(s) for s in self.unet_scales))

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def num_tokens(self) -> int:
        return self.grid * self.grid

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def decoder_blocks(self) -> int:
        return int(math.log2(self.patch))

    @staticmethod
    def paper() -> "HacConfig":
        return HacConfig()

    @staticmethod
    def toy(image_size: int = 64) -> "HacConfig":
        return HacConfig(image_size=image_size, patch=8, embed_dim=32, depth=2, heads=4, unet_base=8)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unet_scales"] = list(self.unet_scales)
        return d

    @staticmethod
    def from_dict(d: dict) -> "HacConfig":
        d = dict(d)
        d["unet_scales"] = tuple(d["unet_scales"])
        return HacConfig(**d)


def droppath_schedule(cfg: HacConfig) -> list[float]:
    """Per-block drop rates rising linearly to the configured maximum."""
    return [cfg.droppath_max * layer / cfg.depth for layer in range(1, cfg.depth + 1)]


def drop_path(x: torch.Tensor, rate: float, training: bool) -> torch.Tensor:
    """Stochastic depth: drop the whole residual branch per sample during
    training, scaling survivors by 1/(1-rate); identity at evaluation."""
    if rate == 0.0 or not training:
        return x
    keep = 1.0 - rate
    shape = (x.shape[0],) + (1,) * (x.ndim - 1)
    gate = torch.bernoulli(torch.full(shape, keep, dtype=x.dtype, device=x.device))
    return x * gate / keep


def fuse(pa, pu):
    """Combine prior and residual: clamp(pa + (2 pu - 1), 0, 1).

    The residual map is recentered so pu = 0.5 means "no correction" and the
    prior passes through bit-exactly.
    """
    if isinstance(pa, torch.Tensor):
        return torch.clamp(pa + (2.0 * pu - 1.0), 0.0, 1.0)
    pa_arr = pa.data if isinstance(pa, ProbMap) else np.asarray(pa)
    pu_arr = pu.data if isinstance(pu, ProbMap) else np.asarray(pu)
    return ProbMap(np.clip(pa_arr + (2.0 * pu_arr - 1.0), 0.0, 1.0))


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.attn_drop = nn.Dropout(dropout)
        self.proj_drop = nn.Dropout(dropout)
        self.capture_attention = False
        self.last_attention = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        if self.capture_attention:
            self.last_attention = attn.detach()
        out = self.attn_drop(attn) @ v
        out = out.transpose(1, 2).reshape(b, n, d)
        return self.proj_drop(self.proj(out))


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: float, dropout: float):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.drop(self.fc2(self.drop(F.gelu(self.fc1(x)))))


class EncoderBlock(nn.Module):
    """Pre-LN transformer block with per-layer stochastic depth."""

    def __init__(self, dim: int, heads: int, ratio: float, dropout: float, droppath: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, ratio, dropout)
        self.droppath = droppath

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + drop_path(self.attn(self.norm1(x)), self.droppath, self.training)
        x = x + drop_path(self.mlp(self.norm2(x)), self.droppath, self.training)
        return x


class PriorDecoder(nn.Module):
    """Progressive upsampling from the patch grid back to full resolution:
    log2(patch) transposed-conv blocks, each doubling size and halving
    channels, then a 1x1 prediction head."""

    def __init__(self, cfg: HacConfig):
        super().__init__()
        blocks = []
        ch = cfg.embed_dim
        for _ in range(cfg.decoder_blocks):
            nxt = max(ch // 2, 4)
            blocks += [nn.ConvTranspose2d(ch, nxt, kernel_size=2, stride=2), nn.BatchNorm2d(nxt), nn.ReLU(inplace=True)]
            ch = nxt
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Conv2d(ch, 1, kernel_size=1)

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.head(self.blocks(grid)))


class AttentionBackbone(nn.Module):
    """Patch embedding, transformer encoder, and prior decoder."""

    def __init__(self, cfg: HacConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Conv2d(3, cfg.embed_dim, kernel_size=cfg.patch, stride=cfg.patch)
        if cfg.pos_embed:
            self.pos_embed = nn.Parameter(torch.zeros(1, cfg.num_tokens, cfg.embed_dim))
        else:
            self.pos_embed = None
        rates = droppath_schedule(cfg)
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.embed_dim, cfg.heads, cfg.mlp_ratio, cfg.dropout, rates[i]) for i in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.decoder = PriorDecoder(cfg)

    def tokens(self, x: torch.Tensor) -> torch.Tensor:
        """Patchify to a row-major token sequence (B, N, d)."""
        if x.shape[-1] != self.cfg.image_size or x.shape[-2] != self.cfg.image_size:
            raise ConfigError(f"input size {tuple(x.shape[-2:])} does not match configured {self.cfg.image_size}")
        z = self.patch_embed(x).flatten(2).transpose(1, 2)
        if self.pos_embed is not None:
            z = z + self.pos_embed
        return z

    def encode(self, z: torch.Tensor) -> torch.Tensor:
        for i, block in enumerate(self.blocks):
            z = block(z)
            if not torch.isfinite(z).all():
                raise NumericFault(f"non-finite activations in encoder block {i}")
        return self.norm(z)

    def prior(self, z: torch.Tensor) -> torch.Tensor:
        b, n, d = z.shape
        g = self.cfg.grid
        grid = z.transpose(1, 2).reshape(b, d, g, g)
        return self.decoder(grid)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.prior(self.encode(self.tokens(x)))


class DoubleConv(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1), nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.net(x)


class UNetRefiner(nn.Module):
    """Standard U-Net over the 4-channel [RGB; prior] input.

    Produces full-resolution features; the residual head squashes them to
    the refinement map and the reconstruction head maps them back to RGB.
    """

    def __init__(self, cfg: HacConfig):
        super().__init__()
        chans = [cfg.unet_base * s for s in cfg.unet_scales]
        self.encoders = nn.ModuleList()
        prev = 4
        for c in chans:
            self.encoders.append(DoubleConv(prev, c))
            prev = c
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = DoubleConv(chans[-1], chans[-1] * 2)
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        up_in = chans[-1] * 2
        for c in reversed(chans):
            self.ups.append(nn.ConvTranspose2d(up_in, c, kernel_size=2, stride=2))
            self.decoders.append(DoubleConv(2 * c, c))
            up_in = c
        self.residual_head = nn.Conv2d(chans[0], 1, kernel_size=1)
        self.recon_head = nn.Conv2d(chans[0], 3, kernel_size=1)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = dec(torch.cat([up(x), skip], dim=1))
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.residual_head(self.features(x)))


class HacNet(nn.Module):
    """Full pipeline: prior, residual refinement, and fused probability."""

    def __init__(self, cfg: HacConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = AttentionBackbone(cfg)
        self.refiner = UNetRefiner(cfg)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        pa = self.backbone(x)
        pu = self.refiner(torch.cat([x, pa], dim=1))
        return pa, pu, fuse(pa, pu)

    def forward_prior(self, x: torch.Tensor) -> torch.Tensor:
        """Attention path only; the U-Net never enters the graph."""
        return self.backbone(x)

    def forward_recon(self, x: torch.Tensor) -> torch.Tensor:
        """Reconstruction for pretraining: RGB from the U-Net features."""
        pa = self.backbone(x)
        feats = self.refiner.features(torch.cat([x, pa], dim=1))
        return torch.sigmoid(self.refiner.recon_head(feats))

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def set_attention_capture(self, enabled: bool) -> None:
        for block in self.backbone.blocks:
            block.attn.capture_attention = enabled

    def captured_attention(self) -> list[torch.Tensor]:
        return [block.attn.last_attention for block in self.backbone.blocks]


def _init_transformer(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def build_model(cfg: HacConfig, seed: int = 42) -> HacNet:
    """Construct a seeded, reproducibly initialized network."""
    torch.manual_seed(seed)
    model = HacNet(cfg)
    model.backbone.apply(_init_transformer)
    nn.init.trunc_normal_(model.backbone.patch_embed.weight, std=0.02)
    nn.init.zeros_(model.backbone.patch_embed.bias)
    if model.backbone.pos_embed is not None:
        nn.init.trunc_normal_(model.backbone.pos_embed, std=0.02)
    return model


def image_tensor(img: RasterImage) -> torch.Tensor:
    """(1, 3, H, W) float32 tensor from a raster image."""
    return torch.from_numpy(np.ascontiguousarray(img.data.transpose(2, 0, 1)))[None]


def mask_tensor(mask: BinaryMask) -> torch.Tensor:
    """(1, 1, H, W) float32 tensor from a binary mask."""
    return torch.from_numpy(mask.data.astype(np.float32))[None, None]


def prob_map(t: torch.Tensor) -> ProbMap:
    """ProbMap from a (…, H, W) tensor (leading singleton dims squeezed)."""
    arr = t.detach().cpu().numpy()
    while arr.ndim > 2:
        arr = arr[0]
    return ProbMap(arr)


def raster_from_tensor(t: torch.Tensor, like: RasterImage | None = None) -> RasterImage:
    """RasterImage from a (1, 3, H, W) tensor, clamped to [0, 1]."""
    arr = t.detach().cpu().numpy()
    if arr.ndim == 4:
        arr = arr[0]
    arr = np.clip(arr.transpose(1, 2, 0), 0.0, 1.0).astype(np.float32)
    return RasterImage(arr, fov=like.fov if like is not None else None)
