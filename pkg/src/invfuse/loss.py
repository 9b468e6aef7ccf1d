"""Adaptive fusion loss: AG-weighted SSIM terms plus EN-weighted region mutual information."""
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DegenerateSampleWarning, SizeError
from .validation import check_same_shape

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

RMI_RADIUS = 3      # 3x3 neighbourhoods -> 9-dimensional vectors
RMI_STRIDE = 3
RMI_MIN_SIDE = 9
RMI_EPS = 1e-6

GRAY_LEVELS = 256


@dataclass
class AdaptiveWeights:
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float

    def as_tuple(self):
        return (self.alpha1, self.alpha2, self.beta1, self.beta2)


@dataclass
class LossBreakdown:
    """Loss terms as 0-d tensors; ``total`` is the one to backpropagate."""
    ssim_term: torch.Tensor
    rmi_term: torch.Tensor
    total: torch.Tensor
    weights: AdaptiveWeights

    def to_dict(self):
        a1, a2, b1, b2 = self.weights.as_tuple()
        return {"alpha1": a1, "alpha2": a2, "beta1": b1, "beta2": b2,
                "ssim_term": float(self.ssim_term), "rmi_term": float(self.rmi_term),
                "total": float(self.total)}


def _as_tensor(x, like=None):
    if isinstance(x, torch.Tensor):
        t = x
    else:
        t = torch.as_tensor(np.asarray(x, dtype=np.float64))
    if like is not None:
        t = t.to(dtype=like.dtype, device=like.device)
    elif not t.is_floating_point():
        t = t.double()
    return t


def _as_plane4d(t):
    while t.dim() < 4:
        t = t.unsqueeze(0)
    if t.shape[:2] != (1, 1):
        raise ValueError(f"expected a single image plane, got shape {tuple(t.shape)}")
    return t


def _gaussian_window(size, sigma, dtype, device=None):
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-coords ** 2 / (2.0 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)[None, None]


def ssim_tensor(x, y, data_range=1.0):
    """Differentiable mean SSIM over valid 11x11 Gaussian windows."""
    x = _as_plane4d(x)
    y = _as_plane4d(y)
    if x.shape[-1] < SSIM_WINDOW or x.shape[-2] < SSIM_WINDOW:
        raise SizeError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA, x.dtype, x.device)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x = F.conv2d(x, win)
    mu_y = F.conv2d(y, win)
    sxx = F.conv2d(x * x, win) - mu_x ** 2
    syy = F.conv2d(y * y, win) - mu_y ** 2
    sxy = F.conv2d(x * y, win) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return (num / den).mean()


def ssim(x, y):
    """Mean SSIM of two [0, 1] images (float64)."""
    check_same_shape(x, y, names=["x", "y"])
    return float(ssim_tensor(_as_tensor(x).double(), _as_tensor(y).double()))


def average_gradient(x):
    """Mean forward-difference gradient magnitude over the (H-1)x(W-1) interior."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or min(x.shape) < 2:
        raise SizeError(f"average gradient needs a 2-D image of at least 2x2, got {x.shape}")
    dx = x[:-1, 1:] - x[:-1, :-1]
    dy = x[1:, :-1] - x[:-1, :-1]
    return float(np.mean(np.sqrt(dx ** 2 + dy ** 2)))


def quantize(x):
    """Map [0, 1] intensities onto the 256 integer gray levels."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    # the tiny offset keeps exact k/255 inputs from rounding down to k-1
    return np.floor(x * (GRAY_LEVELS - 1) + 1e-9).astype(np.int64)


def entropy(x):
    """Shannon entropy in bits of the 256-level histogram."""
    counts = np.bincount(quantize(x).ravel(), minlength=GRAY_LEVELS)
    p = counts[counts > 0] / counts.sum()
    return float(max(0.0, -np.sum(p * np.log2(p))))


def _region_vectors(t):
    """Columns of 3x3 neighbourhoods sampled at stride 3, shape (9, L).

    Sides that are not multiples of 3 are edge-replicated so every pixel
    falls in some block.
    """
    pad_h, pad_w = (-t.shape[-2]) % RMI_STRIDE, (-t.shape[-1]) % RMI_STRIDE
    if pad_h or pad_w:
        t = F.pad(t, (0, pad_w, 0, pad_h), mode="replicate")
    return F.unfold(t, RMI_RADIUS, stride=RMI_STRIDE)[0]


def _logdet_spd(m):
    chol = torch.linalg.cholesky(m)
    return 2.0 * torch.log(torch.diagonal(chol)).sum()


def rmi_tensor(fused, src, eps=RMI_EPS):
    """Differentiable region mutual information lower bound, per vector dimension."""
    fused = _as_plane4d(fused)
    src = _as_plane4d(src).to(fused.dtype)
    if min(fused.shape[-2:]) < RMI_MIN_SIDE:
        raise SizeError(f"RMI needs images of at least {RMI_MIN_SIDE}x{RMI_MIN_SIDE}")
    vf = _region_vectors(fused)
    vs = _region_vectors(src)
    n = vf.shape[1]
    vf = vf - vf.mean(dim=1, keepdim=True)
    vs = vs - vs.mean(dim=1, keepdim=True)
    dim = vf.shape[0]
    eye = torch.eye(dim, dtype=fused.dtype, device=fused.device)
    cov_s = vs @ vs.T / n + eps * eye
    cov_f = vf @ vf.T / n + eps * eye
    cov_sf = vs @ vf.T / n
    explained = cov_sf @ torch.linalg.solve(cov_f, cov_sf.T)
    cond = cov_s - explained
    cond = 0.5 * (cond + cond.T) + eps * eye
    return 0.5 * (_logdet_spd(cov_s) - _logdet_spd(cond)) / dim


def region_mutual_information(fused, src):
    check_same_shape(fused, src, names=["fused", "src"])
    return float(rmi_tensor(_as_tensor(fused).double(), _as_tensor(src).double()))


def compute_weights(mri_y, func_y, normalize=False):
    """Per-sample loss weights from the source images alone.

    alpha = average gradient of each source, beta = entropy of each source.
    With ``normalize`` each pair is rescaled to sum to one.
    """
    mri_y = np.asarray(mri_y, dtype=np.float64)
    func_y = np.asarray(func_y, dtype=np.float64)
    a1, a2 = average_gradient(mri_y), average_gradient(func_y)
    b1, b2 = entropy(mri_y), entropy(func_y)
    if normalize:
        if a1 + a2 > 0:
            a1, a2 = a1 / (a1 + a2), a2 / (a1 + a2)
        if b1 + b2 > 0:
            b1, b2 = b1 / (b1 + b2), b2 / (b1 + b2)
    return AdaptiveWeights(a1, a2, b1, b2)


def total_loss(fused, mri_y, func_y, weights):
    """Weighted SSIM loss minus weighted RMI.

    The RMI part is negated so that minimising the total maximises the
    region mutual information between the fused image and each source.
    """
    fused = _as_tensor(fused)
    if not fused.is_floating_point():
        fused = fused.double()
    mri = _as_tensor(mri_y, like=fused)
    func = _as_tensor(func_y, like=fused)
    check_same_shape(fused.squeeze(), mri.squeeze(), func.squeeze(),
                     names=["fused", "mri_y", "func_y"])
    a1, a2, b1, b2 = weights.as_tuple()
    if a1 == a2 == b1 == b2 == 0:
        warnings.warn("all adaptive weights are zero; sample contributes no loss",
                      DegenerateSampleWarning, stacklevel=2)
    ssim_term = a1 * (1 - ssim_tensor(fused, mri)) + a2 * (1 - ssim_tensor(fused, func))
    rmi_term = -(b1 * rmi_tensor(fused, mri) + b2 * rmi_tensor(fused, func))
    return LossBreakdown(ssim_term, rmi_term, ssim_term + rmi_term, weights)
