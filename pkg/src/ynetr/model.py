"""Dual-encoder segmentation network with additive skip fusion.

Two independent encoder branches (one per frequency image) each produce
a five-level feature pyramid; the pyramids are merged by elementwise
addition and a single convolutional decoder restores full resolution.

A transformer branch flattens non-overlapping P^3 patches into a token
sequence, runs a 12-layer pre-norm encoder, taps the running sequence at
depth L/4, L/2, 3L/4 and L, and projects each tap to its pyramid scale
with transposed-conv upsampling stacks. A CNN branch (ablation variant)
builds the same pyramid with strided convolutions. Either way the
pyramid carries scales 1/P, 2/P, 4/P, 8/P of the input plus a
full-resolution stem, so fusion and decoding never care which branch
kind produced it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .autograd import Tensor, no_grad

BRANCH_KINDS = ("transformer", "cnn")


@dataclass
class ModelConfig:
    input_dims: tuple[int, int, int] = (128, 128, 128)
    in_channels: int = 1
    num_classes: int = 2
    patch: int = 16
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    mlp_ratio: int = 4
    tap_layers: tuple[int, ...] = ()
    decoder_channels: tuple[int, int, int, int, int] = (512, 512, 256, 128, 64)
    lf_branch: str = "transformer"
    hf_branch: str = "transformer"
    zero_init_head: bool = True
    init_seed: int = 0

    def __post_init__(self):
        self.input_dims = tuple(int(d) for d in self.input_dims)
        self.tap_layers = tuple(int(t) for t in self.tap_layers)
        self.decoder_channels = tuple(int(c) for c in self.decoder_channels)
        if not self.tap_layers:
            q = self.depth // 4
            self.tap_layers = (q, 2 * q, 3 * q, self.depth)

    def validate(self):
        p = self.patch
        if p < 16 or (p & (p - 1)) != 0:
            raise ValueError(f"patch size must be a power of two >= 16, got {p}")
        for d in self.input_dims:
            if d % p != 0:
                raise ValueError(f"input dims {self.input_dims} must be divisible by patch {p}")
        if self.depth % 4 != 0:
            raise ValueError(f"encoder depth must be divisible by 4, got {self.depth}")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed dim {self.embed_dim} not divisible by {self.num_heads} heads"
            )
        if len(self.tap_layers) != 4 or list(self.tap_layers) != sorted(set(self.tap_layers)):
            raise ValueError(f"tap layers must be 4 strictly increasing values, got {self.tap_layers}")
        if self.tap_layers[-1] != self.depth:
            raise ValueError("last tap must be the final encoder layer")
        if len(self.decoder_channels) != 5:
            raise ValueError("decoder_channels must list 4 pyramid scales plus the stem")
        for kind in (self.lf_branch, self.hf_branch):
            if kind not in BRANCH_KINDS:
                raise ValueError(f"unknown branch kind {kind!r}")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        return self

    @property
    def grid(self):
        return tuple(d // self.patch for d in self.input_dims)

    @property
    def num_tokens(self):
        gx, gy, gz = self.grid
        return gx * gy * gz

    @property
    def token_dim(self):
        return self.patch**3 * self.in_channels

    @property
    def pyramid_scales(self):
        return (self.patch, self.patch // 2, self.patch // 4, self.patch // 8, 1)


@dataclass
class PatchSequence:
    """Flattened non-overlapping patches: one token per P^3 block."""

    tokens: Tensor
    grid: tuple[int, int, int]
    patch: int
    channels: int


@dataclass
class SkipPyramid:
    """Per-scale features, deepest first, full-resolution stem last."""

    levels: list
    scales: tuple[int, ...]


def patchify(x: Tensor, patch: int) -> PatchSequence:
    """(C, X, Y, Z) -> (N, P^3*C) tokens; inverse of :func:`unpatchify`."""
    c, X, Y, Z = x.shape
    p = patch
    if X % p or Y % p or Z % p:
        raise ValueError(f"dims {(X, Y, Z)} not divisible by patch {p}")
    gx, gy, gz = X // p, Y // p, Z // p
    tok = (
        x.reshape(c, gx, p, gy, p, gz, p)
        .permute(1, 3, 5, 2, 4, 6, 0)
        .reshape(gx * gy * gz, p**3 * c)
    )
    return PatchSequence(tok, (gx, gy, gz), p, c)


def unpatchify(seq: PatchSequence) -> Tensor:
    gx, gy, gz = seq.grid
    p, c = seq.patch, seq.channels
    return (
        seq.tokens.reshape(gx, gy, gz, p, p, p, c)
        .permute(6, 0, 3, 1, 4, 2, 5)
        .reshape(c, gx * p, gy * p, gz * p)
    )


def tokens_to_grid(tokens: Tensor, grid) -> Tensor:
    """Unfold an (N, E) sequence into an (E, gx, gy, gz) feature map."""
    gx, gy, gz = grid
    e = tokens.shape[-1]
    return tokens.reshape(gx, gy, gz, e).permute(3, 0, 1, 2)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, rng, embed_dim, num_heads):
        self.num_heads = num_heads
        self.head_dim = embed_dim // num_heads
        self.embed_dim = embed_dim
        self.qkv = nn.Linear(rng, embed_dim, 3 * embed_dim)
        self.proj = nn.Linear(rng, embed_dim, embed_dim)

    def forward(self, x, return_weights=False):
        n = x.shape[0]
        h, dh = self.num_heads, self.head_dim
        qkv = self.qkv(x).reshape(n, 3, h, dh).permute(1, 2, 0, 3)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.permute(0, 2, 1)) * float(dh**-0.5)
        attn = scores.softmax(axis=-1)
        out = (attn @ v).permute(1, 0, 2).reshape(n, self.embed_dim)
        out = self.proj(out)
        if return_weights:
            return out, attn.data
        return out


class TransformerBlock(nn.Module):
    """Pre-norm block: x + MHSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, rng, embed_dim, num_heads, mlp_ratio):
        self.ln1 = nn.LayerNorm(embed_dim)
        self.attn = MultiHeadSelfAttention(rng, embed_dim, num_heads)
        self.ln2 = nn.LayerNorm(embed_dim)
        self.fc1 = nn.Linear(rng, embed_dim, mlp_ratio * embed_dim)
        self.fc2 = nn.Linear(rng, mlp_ratio * embed_dim, embed_dim)

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.fc2(self.fc1(self.ln2(x)).gelu())


class TransformerEncoder(nn.Module):
    """Patch embedding plus ``depth`` blocks, tapped at four layers."""

    def __init__(self, rng, cfg: ModelConfig):
        self.cfg = cfg
        self.embed = nn.Linear(rng, cfg.token_dim, cfg.embed_dim)
        self.pos = Tensor.param(nn.trunc_normal(rng, (cfg.num_tokens, cfg.embed_dim)))
        self.blocks = nn.ModuleList(
            TransformerBlock(rng, cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio)
            for _ in range(cfg.depth)
        )

    def forward(self, x):
        seq = patchify(x, self.cfg.patch)
        h = self.embed(seq.tokens) + self.pos
        taps = []
        for layer, block in enumerate(self.blocks, start=1):
            h = block(h)
            if layer in self.cfg.tap_layers:
                taps.append(h)
        return taps


class UpProjection(nn.Module):
    """Chain of stride-2 transposed convs lifting a tap to its scale."""

    def __init__(self, rng, cin, cout, n_up):
        ups = [nn.ConvTranspose3d(rng, cin, cout, 2, stride=2)]
        ups += [nn.ConvTranspose3d(rng, cout, cout, 2, stride=2) for _ in range(n_up - 1)]
        self.ups = nn.ModuleList(ups)

    def forward(self, x):
        for up in self.ups:
            x = up(x)
        return x


class Stem(nn.Module):
    """Two full-resolution convs on the raw branch input."""

    def __init__(self, rng, cin, cout):
        self.conv1 = nn.Conv3d(rng, cin, cout, 3, padding=1)
        self.conv2 = nn.Conv3d(rng, cout, cout, 3, padding=1)

    def forward(self, x):
        return self.conv2(self.conv1(x).relu())


class TransformerBranch(nn.Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.cfg = cfg
        ch = cfg.decoder_channels
        e = cfg.embed_dim
        self.encoder = TransformerEncoder(rng, cfg)
        self.proj_deep = nn.Conv3d(rng, e, ch[0], 3, padding=1)
        self.proj_mid = UpProjection(rng, e, ch[1], 1)
        self.proj_shallow = UpProjection(rng, e, ch[2], 2)
        self.proj_top = UpProjection(rng, e, ch[3], 3)
        self.stem = Stem(rng, cfg.in_channels, ch[4])

    def forward(self, x) -> SkipPyramid:
        z_q, z_half, z_3q, z_full = self.encoder(x)
        grid = self.cfg.grid
        levels = [
            self.proj_deep(tokens_to_grid(z_full, grid)),
            self.proj_mid(tokens_to_grid(z_3q, grid)),
            self.proj_shallow(tokens_to_grid(z_half, grid)),
            self.proj_top(tokens_to_grid(z_q, grid)),
            self.stem(x),
        ]
        return SkipPyramid(levels, self.cfg.pyramid_scales)

    def projection_modules(self):
        return [self.proj_deep, self.proj_mid, self.proj_shallow, self.proj_top, self.stem]


class DownBlock(nn.Module):
    def __init__(self, rng, cin, cout):
        self.down = nn.Conv3d(rng, cin, cout, 3, stride=2, padding=1)
        self.conv = nn.Conv3d(rng, cout, cout, 3, padding=1)

    def forward(self, x):
        return self.conv(self.down(x).relu()).relu()


class CnnBranch(nn.Module):
    """Strided-conv encoder producing the same pyramid shapes."""

    def __init__(self, rng, cfg: ModelConfig):
        self.cfg = cfg
        ch = cfg.decoder_channels
        n_stages = int(np.log2(cfg.patch))
        outs = [ch[3]] * (n_stages - 4) + [ch[3], ch[2], ch[1], ch[0]]
        ins = [ch[4]] + outs[:-1]
        self.stem = Stem(rng, cfg.in_channels, ch[4])
        self.stages = nn.ModuleList(
            DownBlock(rng, ci, co) for ci, co in zip(ins, outs)
        )

    def forward(self, x) -> SkipPyramid:
        f = self.stem(x)
        feats = []
        h = f
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        levels = [feats[-1], feats[-2], feats[-3], feats[-4], f]
        return SkipPyramid(levels, self.cfg.pyramid_scales)

    def projection_modules(self):
        return [self.stem, self.stages]


def fuse_add(a: SkipPyramid, b: SkipPyramid) -> SkipPyramid:
    """Merge two pyramids by elementwise addition, scale by scale."""
    if len(a.levels) != len(b.levels):
        raise ValueError("pyramids have different level counts")
    for la, lb in zip(a.levels, b.levels):
        if la.shape != lb.shape:
            raise ValueError(f"pyramid level shapes differ: {la.shape} vs {lb.shape}")
    return SkipPyramid([la + lb for la, lb in zip(a.levels, b.levels)], a.scales)


class Decoder(nn.Module):
    """Transposed-conv upsampling with an added skip at every scale."""

    def __init__(self, rng, cfg: ModelConfig):
        self.cfg = cfg
        ch = cfg.decoder_channels
        self.ups = nn.ModuleList(
            nn.ConvTranspose3d(rng, ch[i - 1], ch[i], 2, stride=2) for i in range(1, 4)
        )
        self.convs = nn.ModuleList(
            nn.Conv3d(rng, ch[i], ch[i], 3, padding=1) for i in range(1, 4)
        )
        # from scale P/8 down to full resolution; only the last hop has a skip
        n_hops = int(np.log2(cfg.patch // 8))
        prev = ch[3]
        bridges = []
        for _ in range(n_hops - 1):
            bridges.append(
                (nn.ConvTranspose3d(rng, prev, ch[4], 2, stride=2), nn.Conv3d(rng, ch[4], ch[4], 3, padding=1))
            )
            prev = ch[4]
        self.bridge_ups = nn.ModuleList(b[0] for b in bridges)
        self.bridge_convs = nn.ModuleList(b[1] for b in bridges)
        self.final_up = nn.ConvTranspose3d(rng, prev, ch[4], 2, stride=2)
        self.final_conv = nn.Conv3d(rng, ch[4], ch[4], 3, padding=1)
        self.head = nn.Conv3d(rng, ch[4], cfg.num_classes, 1, zero_init=cfg.zero_init_head)

    def forward(self, levels):
        d = levels[0]
        for up, conv, skip in zip(self.ups, self.convs, levels[1:4]):
            d = up(d) + skip
            d = conv(d).relu()
        for up, conv in zip(self.bridge_ups, self.bridge_convs):
            d = conv(up(d)).relu()
        d = self.final_up(d) + levels[4]
        d = self.final_conv(d).relu()
        return self.head(d)


def _make_branch(rng, cfg, kind):
    if kind == "transformer":
        return TransformerBranch(rng, cfg)
    return CnnBranch(rng, cfg)


class YNetr(nn.Module):
    """The full dual-encoder network."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        self.lf_branch = _make_branch(rng, cfg, cfg.lf_branch)
        self.hf_branch = _make_branch(rng, cfg, cfg.hf_branch)
        self.decoder = Decoder(rng, cfg)

    def forward(self, lf: Tensor, hf: Tensor) -> Tensor:
        if lf.shape != hf.shape:
            raise ValueError(f"branch inputs differ in shape: {lf.shape} vs {hf.shape}")
        fused = fuse_add(self.lf_branch(lf), self.hf_branch(hf))
        return self.decoder(fused.levels)

    def predict(self, lf: np.ndarray, hf: np.ndarray) -> np.ndarray:
        """Forward pass without tape recording; numpy in, numpy logits out.

        Accepts bare (X, Y, Z) crops (the sliding-window contract) or
        channel-first (C, X, Y, Z) arrays.
        """
        with no_grad():
            out = self.forward(Tensor(volume_to_input(lf)), Tensor(volume_to_input(hf)))
        return out.data

    def zero_branch_projections(self, which: str):
        """Silence one branch: zero every parameter feeding its pyramid.

        With additive fusion this makes the output exactly independent
        of that branch's input.
        """
        branch = {"lf": self.lf_branch, "hf": self.hf_branch}[which]
        for mod in branch.projection_modules():
            for _, p in mod.named_parameters():
                p.data[...] = 0.0


def volume_to_input(arr: np.ndarray) -> np.ndarray:
    """Add the channel axis to a bare (X, Y, Z) volume."""
    if arr.ndim == 3:
        return arr[None].astype(np.float32, copy=False)
    return arr.astype(np.float32, copy=False)
