"""Cross-modal complementary features: CBAM, multi-scale convolutions, transformer units."""
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError


class ChannelAttention(nn.Module):
    """sigmoid(MLP(avgpool(x)) + MLP(maxpool(x))) with a shared two-layer MLP."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        self.channels = channels
        hidden = max(1, channels // reduction)
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden), nn.ReLU(), nn.Linear(hidden, channels))

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ShapeError(f"channel attention expects {self.channels} channels, got {x.shape[1]}")
        avg = self.mlp(x.mean(dim=(2, 3)))
        mx = self.mlp(x.amax(dim=(2, 3)))
        return torch.sigmoid(avg + mx)[:, :, None, None]


class SpatialAttention(nn.Module):
    """sigmoid(conv7x7([mean_c(x), max_c(x)])), zero padded."""

    def __init__(self, kernel_size=7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))


class CBAM(nn.Module):
    def __init__(self, channels, reduction=4, kernel_size=7):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(kernel_size)

    def forward(self, x):
        x = self.channel(x) * x
        return self.spatial(x) * x


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim, heads=8):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"embedding width {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def attention_weights(self, tokens):
        """Softmax attention of shape (N, heads, L, L)."""
        q, k, _ = self._qkv(tokens)
        return torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1]), dim=-1)

    def _qkv(self, tokens):
        n, length, _ = tokens.shape
        qkv = self.qkv(tokens).reshape(n, length, 3, self.heads, self.dim // self.heads)
        return qkv.permute(2, 0, 3, 1, 4).unbind(0)

    def forward(self, tokens):
        n, length, _ = tokens.shape
        q, k, v = self._qkv(tokens)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1]), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(n, length, self.dim)
        return self.proj(out)


def tokenize(x, patch_size):
    """Reshape (N, C, H, W) into (N, H/p * W/p, C*p*p) non-overlapping patch tokens."""
    n, c, h, w = x.shape
    p = patch_size
    x = x.reshape(n, c, h // p, p, w // p, p).permute(0, 2, 4, 1, 3, 5)
    return x.reshape(n, (h // p) * (w // p), c * p * p)


def detokenize(tokens, channels, height, width, patch_size):
    n = tokens.shape[0]
    p = patch_size
    x = tokens.reshape(n, height // p, width // p, channels, p, p).permute(0, 3, 1, 4, 2, 5)
    return x.reshape(n, channels, height, width)


class TransformerUnit(nn.Module):
    """Pre-norm transformer block on lossless patch tokens.

    ``u = t + MSA(LN(t)); out = u + MLP(LN(u))``. Each token is a flattened
    p x p patch of all channels, so the token width equals ``channels * p**2``.
    Inputs whose sides are not multiples of p are reflect-padded and the
    output is cropped back.
    """

    def __init__(self, channels, patch_size=4, heads=8, mlp_ratio=4):
        super().__init__()
        self.channels = channels
        self.patch_size = patch_size
        dim = channels * patch_size ** 2
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ShapeError(f"transformer unit expects {self.channels} channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        p = self.patch_size
        pad_h, pad_w = (-h) % p, (-w) % p
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
        tokens = tokenize(x, p)
        u = tokens + self.attn(self.norm1(tokens))
        out = u + self.mlp(self.norm2(u))
        out = detokenize(out, self.channels, x.shape[-2], x.shape[-1], p)
        return out[..., :h, :w]


class MCFEM(nn.Module):
    """Complementary feature extractor over the stacked pair of luma planes.

    CBAM -> parallel convs (one per kernel size) -> concat -> 3x3 conv to the
    token channel width -> transformer units -> 3x3 conv to ``out_channels``.
    """

    def __init__(self, branch_kernels=(3, 5, 7), branch_channels=8, use_cbam=True,
                 reduction=4, embed_channels=2, patch_size=4, heads=8, mlp_ratio=4,
                 tmu_count=3, out_channels=16):
        super().__init__()
        self.cbam = CBAM(2, reduction) if use_cbam else None
        self.branches = nn.ModuleList(
            nn.Conv2d(2, branch_channels, k, padding=k // 2) for k in branch_kernels)
        self.pre = nn.Conv2d(branch_channels * len(branch_kernels), embed_channels, 3, padding=1)
        self.tmus = nn.ModuleList(
            TransformerUnit(embed_channels, patch_size, heads, mlp_ratio) for _ in range(tmu_count))
        self.post = nn.Conv2d(embed_channels, out_channels, 3, padding=1)

    def forward(self, mri_y, func_y):
        if mri_y.shape != func_y.shape:
            raise ShapeError(f"input planes differ: {tuple(mri_y.shape)} vs {tuple(func_y.shape)}")
        x = torch.cat([mri_y, func_y], dim=1)
        if self.cbam is not None:
            x = self.cbam(x)
        x = torch.cat([F.leaky_relu(b(x), 0.01) for b in self.branches], dim=1)
        x = self.pre(x)
        for tmu in self.tmus:
            x = tmu(x)
        return self.post(x)
