"""Full fusion network: two invertible extractors, MCFEM and the reconstruction head."""
from dataclasses import asdict, dataclass, fields
from typing import Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import ycbcr_to_rgb
from .errors import ConfigError, PairDimensionError
from .invertible import DenseNet, InvertibleDenseNetwork
from .mcfem import MCFEM
from .validation import check_gray_image


@dataclass(frozen=True)
class ModelConfig:
    idb_count: int = 6
    tmu_count: int = 3
    branch_kernels: Tuple[int, ...] = (3, 5, 7)
    use_cbam: bool = True
    channels: int = 16
    growth: int = 2
    embed_dim: int = 32
    patch_size: int = 4
    heads: int = 8
    mlp_ratio: int = 4
    reduction: int = 4
    branch_channels: int = 8
    comp_channels: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "branch_kernels", tuple(int(k) for k in self.branch_kernels))
        self.validate()

    def validate(self):
        if not 0 <= self.idb_count <= 6:
            raise ConfigError(f"idb_count must be in 0..6, got {self.idb_count}")
        if not 0 <= self.tmu_count <= 3:
            raise ConfigError(f"tmu_count must be in 0..3, got {self.tmu_count}")
        if not self.branch_kernels or any(k < 1 or k % 2 == 0 for k in self.branch_kernels):
            raise ConfigError(f"branch kernels must be odd and positive: {self.branch_kernels}")
        if self.channels < 2 or self.channels % 2:
            raise ConfigError(f"channels must be even and >= 2, got {self.channels}")
        if self.embed_dim % (self.patch_size ** 2):
            raise ConfigError("embed_dim must be a multiple of patch_size**2")
        if self.embed_dim % self.heads:
            raise ConfigError("embed_dim must be divisible by heads")
        for name in ("growth", "embed_dim", "patch_size", "heads", "mlp_ratio",
                     "reduction", "branch_channels", "comp_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def embed_channels(self):
        return self.embed_dim // self.patch_size ** 2

    def to_dict(self):
        d = asdict(self)
        d["branch_kernels"] = list(self.branch_kernels)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model option(s): {sorted(unknown)}")
        return cls(**d)


class FusionNet(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        c = config
        self.idn_mri = InvertibleDenseNetwork(c.channels, c.growth, c.idb_count)
        self.idn_func = InvertibleDenseNetwork(c.channels, c.growth, c.idb_count)
        self.mcfem = MCFEM(
            branch_kernels=c.branch_kernels, branch_channels=c.branch_channels,
            use_cbam=c.use_cbam, reduction=c.reduction, embed_channels=c.embed_channels,
            patch_size=c.patch_size, heads=c.heads, mlp_ratio=c.mlp_ratio,
            tmu_count=c.tmu_count, out_channels=c.comp_channels)
        self.recon = nn.Conv2d(2 * c.channels + c.comp_channels, 1, 1)

    def features(self, mri_y, func_y):
        """Concatenated (mri, functional, complementary) feature map."""
        return torch.cat([self.idn_mri(mri_y), self.idn_func(func_y),
                          self.mcfem(mri_y, func_y)], dim=1)

    def forward(self, mri_y, func_y):
        return F.hardsigmoid(self.recon(self.features(mri_y, func_y)))


def _init_weights(module):
    if isinstance(module, nn.Conv2d):
        nn.init.kaiming_uniform_(module.weight, a=0.01, nonlinearity="leaky_relu")
        nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Linear):
        nn.init.xavier_uniform_(module.weight)
        nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


# Output layers of the coupling subnets start small; at full He gain six
# stacked couplings amplify features by ~1e5 and float32 inversion breaks down.
SUBNET_HEAD_GAIN = 0.1


def build_model(config=None, seed=None):
    """Create a :class:`FusionNet` with deterministic initialisation.

    He-uniform for convolutions, Xavier-uniform for linear layers, zero biases.
    ``seed`` defaults to ``config.seed``.
    """
    if config is None:
        config = ModelConfig()
    if not isinstance(config, ModelConfig):
        raise ConfigError(f"expected ModelConfig, got {type(config).__name__}")
    seed = config.seed if seed is None else seed
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = FusionNet(config)
        model.apply(_init_weights)
        with torch.no_grad():
            for module in model.modules():
                if isinstance(module, DenseNet):
                    module.head.weight.mul_(SUBNET_HEAD_GAIN)
    return model


def count_parameters(model):
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def _as_plane(x, model):
    p = next(model.parameters())
    return torch.as_tensor(x, dtype=p.dtype, device=p.device)[None, None]


@torch.no_grad()
def fuse(model, mri_y, func_y):
    """Fuse two [0, 1] luma planes and return the fused plane as a numpy array."""
    mri_y = check_gray_image(mri_y, "mri_y")
    func_y = check_gray_image(func_y, "func_y")
    if mri_y.shape != func_y.shape:
        raise PairDimensionError(f"mri {mri_y.shape} and functional {func_y.shape} differ")
    was_training = model.training
    model.eval()
    try:
        out = model(_as_plane(mri_y, model), _as_plane(func_y, model))
    finally:
        model.train(was_training)
    return out[0, 0].double().cpu().numpy()


def fuse_full(model, pair):
    """Fuse an :class:`~invfuse.data.ImagePair`.

    Returns an (H, W, 3) RGB image when the functional image carried chroma,
    otherwise the (H, W) fused luma plane.
    """
    fused_y = fuse(model, pair.mri, pair.functional_y)
    if pair.functional_chroma is None:
        return fused_y
    cb, cr = pair.functional_chroma
    return ycbcr_to_rgb(fused_y, cb, cr)
