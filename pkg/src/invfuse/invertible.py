"""Invertible dense blocks: densely connected subnets inside affine couplings."""
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

CLAMP = 2.0
NEGATIVE_SLOPE = 0.01


def scale_factor(r_out, clamp=CLAMP):
    """Bounded multiplicative factor exp(2 * clamp * (sigmoid(r) - 0.5)).

    The result lies in [exp(-clamp), exp(clamp)].
    """
    return torch.exp(clamp * 2.0 * (torch.sigmoid(r_out) - 0.5))


class DenseNet(nn.Module):
    """Four 3x3 LeakyReLU layers with dense concatenation and a linear 1x1 head.

    Layer i sees ``c_in + (i - 1) * growth`` channels; the head sees
    ``c_in + 4 * growth``.
    """

    n_layers = 4

    def __init__(self, c_in, growth, c_out):
        super().__init__()
        self.c_in = c_in
        self.growth = growth
        self.c_out = c_out
        self.convs = nn.ModuleList(
            nn.Conv2d(c_in + i * growth, growth, 3, padding=1) for i in range(self.n_layers))
        self.head = nn.Conv2d(c_in + self.n_layers * growth, c_out, 1)

    def forward(self, x):
        if x.shape[1] != self.c_in:
            raise ShapeError(f"DenseNet expects {self.c_in} channels, got {x.shape[1]}")
        feats = [x]
        for conv in self.convs:
            feats.append(F.leaky_relu(conv(torch.cat(feats, dim=1)), NEGATIVE_SLOPE))
        return self.head(torch.cat(feats, dim=1))


class InvertibleDenseBlock(nn.Module):
    """Two-step affine coupling with dense scale and translation subnets.

    Forward::

        tem = x2 * s(S1(x1)) + T1(x1)
        y1  = x1 * s(S2(tem)) + T2(tem)
        out = [y1, tem]

    where ``s`` is :func:`scale_factor`. :meth:`inverse` undoes it exactly with
    the same parameters.
    """

    def __init__(self, channels, growth, clamp=CLAMP):
        super().__init__()
        if channels % 2:
            raise ShapeError(f"coupling needs an even channel count, got {channels}")
        self.channels = channels
        self.clamp = clamp
        half = channels // 2
        self.s1 = DenseNet(half, growth, half)
        self.t1 = DenseNet(half, growth, half)
        self.s2 = DenseNet(half, growth, half)
        self.t2 = DenseNet(half, growth, half)

    def _split(self, x):
        if x.shape[1] != self.channels:
            raise ShapeError(f"block expects {self.channels} channels, got {x.shape[1]}")
        return x.chunk(2, dim=1)

    def forward(self, x):
        x1, x2 = self._split(x)
        tem = x2 * scale_factor(self.s1(x1), self.clamp) + self.t1(x1)
        y1 = x1 * scale_factor(self.s2(tem), self.clamp) + self.t2(tem)
        return torch.cat([y1, tem], dim=1)

    def inverse(self, y):
        y1, tem = self._split(y)
        x1 = (y1 - self.t2(tem)) / scale_factor(self.s2(tem), self.clamp)
        x2 = (tem - self.t1(x1)) / scale_factor(self.s1(x1), self.clamp)
        return torch.cat([x1, x2], dim=1)


class InvertibleDenseNetwork(nn.Module):
    """Per-modality feature extractor: 3x3 lift from 1 to C channels, then a block stack.

    The lift is outside the invertible chain; :meth:`invert_features` returns
    the post-lift representation.
    """

    def __init__(self, channels=16, growth=2, n_blocks=6):
        super().__init__()
        if channels % 2:
            raise ShapeError(f"channel count must be even, got {channels}")
        self.channels = channels
        self.lift = nn.Conv2d(1, channels, 3, padding=1)
        self.blocks = nn.ModuleList(
            InvertibleDenseBlock(channels, growth) for _ in range(n_blocks))

    def transform(self, h):
        for block in self.blocks:
            h = block(h)
        return h

    def forward(self, y_plane):
        if y_plane.shape[1] != 1:
            raise ShapeError(f"expected a single-channel plane, got {y_plane.shape[1]} channels")
        return self.transform(self.lift(y_plane))

    def invert_features(self, features):
        if features.shape[1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {features.shape[1]}")
        h = features
        for block in reversed(self.blocks):
            h = block.inverse(h)
        return h
