"""Fusion quality metrics for a fused image and its two sources.

All functions take [0, 1] images and rescale to the 0-255 range internally
where the classical definitions need it.
"""
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.signal import convolve2d

from .errors import SizeError
from .loss import GRAY_LEVELS, average_gradient, entropy, quantize
from .phasecong import phase_congruency
from .validation import check_gray_image, check_same_shape

METRIC_NAMES = ("EN", "AG", "MI", "VIFF", "QABF", "NMI", "PSNR", "AFM")
PSNR_SENTINEL = 100.0

# Xydeas-Petrovic edge preservation constants
QABF_GAMMA_G, QABF_KAPPA_G, QABF_SIGMA_G = 0.9994, -15.0, 0.5
QABF_GAMMA_A, QABF_KAPPA_A, QABF_SIGMA_A = 0.9879, -22.0, 0.8

VIFF_NOISE_VAR = 2.0
VIFF_SCALE_WEIGHTS = (0.25, 0.25, 0.25, 0.25)


@dataclass
class MetricReport:
    en: float
    ag: float
    mi: float
    viff: float
    qabf: float
    nmi: float
    psnr: float
    afm: float
    pair_id: str = ""

    def values(self):
        return [getattr(self, n.lower()) for n in METRIC_NAMES]

    def as_dict(self):
        return asdict(self)


def _triple(fused, a, b):
    fused = check_gray_image(fused, "fused", min_side=1)
    a = check_gray_image(a, "a", min_side=1)
    b = check_gray_image(b, "b", min_side=1)
    check_same_shape(fused, a, b, names=["fused", "a", "b"])
    return fused, a, b


def metric_en(fused):
    return entropy(fused)


def metric_ag(fused):
    """Average gradient on the 0-255 scale."""
    return 255.0 * average_gradient(fused)


def _joint_entropy(qx, qy):
    joint = np.bincount((qx * GRAY_LEVELS + qy).ravel(), minlength=GRAY_LEVELS ** 2)
    p = joint[joint > 0] / joint.sum()
    return float(-np.sum(p * np.log2(p)))


def pair_mutual_information(x, y):
    """I(X;Y) in bits from the 256x256 joint histogram."""
    qx, qy = quantize(x), quantize(y)
    return entropy(x) + entropy(y) - _joint_entropy(qx, qy)


def mutual_information(fused, a, b):
    fused, a, b = _triple(fused, a, b)
    return pair_mutual_information(fused, a) + pair_mutual_information(fused, b)


def normalized_mi(fused, a, b):
    """2 * [I(F;A)/(H(F)+H(A)) + I(F;B)/(H(F)+H(B))]; zero-entropy terms count as 0."""
    fused, a, b = _triple(fused, a, b)
    hf = entropy(fused)
    total = 0.0
    for src in (a, b):
        denom = hf + entropy(src)
        if denom > 0:
            total += pair_mutual_information(fused, src) / denom
    return 2.0 * total


def psnr_fusion(fused, a, b):
    fused, a, b = _triple(fused, a, b)
    f, a, b = fused * 255.0, a * 255.0, b * 255.0
    mse = (np.mean((f - a) ** 2) + np.mean((f - b) ** 2)) / 2.0
    if mse == 0:
        return PSNR_SENTINEL
    return float(10.0 * np.log10(255.0 ** 2 / mse))


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = np.array([[1, 2, 1], [0, 0, 0], [-1, -2, -1]], dtype=np.float64)


def _edge_strength_orientation(img):
    # symmetric borders: zero padding would invent edges along the frame
    sx = convolve2d(img, _SOBEL_X, mode="same", boundary="symm")
    sy = convolve2d(img, _SOBEL_Y, mode="same", boundary="symm")
    strength = np.sqrt(sx ** 2 + sy ** 2)
    orientation = np.full_like(img, math.pi / 2)
    nz = sx != 0
    orientation[nz] = np.arctan(sy[nz] / sx[nz])
    return strength, orientation


def _edge_preservation(g_src, a_src, g_f, a_f):
    hi = np.maximum(g_src, g_f)
    rel_strength = np.divide(np.minimum(g_src, g_f), hi, out=np.zeros_like(hi), where=hi > 0)
    rel_orient = 1.0 - np.abs(a_src - a_f) / (math.pi / 2)
    q_g = QABF_GAMMA_G / (1.0 + np.exp(QABF_KAPPA_G * (rel_strength - QABF_SIGMA_G)))
    q_a = QABF_GAMMA_A / (1.0 + np.exp(QABF_KAPPA_A * (rel_orient - QABF_SIGMA_A)))
    return q_g * q_a


def qabf(fused, a, b):
    """Edge-strength-weighted transfer of Sobel edges from both sources."""
    fused, a, b = _triple(fused, a, b)
    if min(fused.shape) < 3:
        raise SizeError("QABF needs images of at least 3x3")
    g_a, o_a = _edge_strength_orientation(a * 255.0)
    g_b, o_b = _edge_strength_orientation(b * 255.0)
    g_f, o_f = _edge_strength_orientation(fused * 255.0)
    q_af = _edge_preservation(g_a, o_a, g_f, o_f)
    q_bf = _edge_preservation(g_b, o_b, g_f, o_f)
    denom = np.sum(g_a + g_b)
    if denom == 0:
        return 0.0
    return float(np.sum(q_af * g_a + q_bf * g_b) / denom)


def _gaussian_kernel(n):
    sd = n / 5.0
    m = (n - 1) / 2.0
    y, x = np.ogrid[-m:m + 1, -m:m + 1]
    h = np.exp(-(x * x + y * y) / (2.0 * sd * sd))
    h[h < np.finfo(h.dtype).eps * h.max()] = 0
    return h / h.sum()


def _vif_single(ref, dist, eps=1e-10):
    """Multi-scale pixel-domain VIF of ``dist`` against ``ref`` (0-255 images)."""
    ratios, weights = [], []
    for scale, w in enumerate(VIFF_SCALE_WEIGHTS, start=1):
        n = 2 ** (len(VIFF_SCALE_WEIGHTS) - scale + 1) + 1
        win = _gaussian_kernel(n)
        if scale > 1:
            if min(ref.shape) < n:
                break
            ref = convolve2d(ref, win, mode="valid")[::2, ::2]
            dist = convolve2d(dist, win, mode="valid")[::2, ::2]
        if min(ref.shape) < n:
            break
        mu1 = convolve2d(ref, win, mode="valid")
        mu2 = convolve2d(dist, win, mode="valid")
        s1 = np.maximum(convolve2d(ref * ref, win, mode="valid") - mu1 * mu1, 0)
        s2 = np.maximum(convolve2d(dist * dist, win, mode="valid") - mu2 * mu2, 0)
        s12 = convolve2d(ref * dist, win, mode="valid") - mu1 * mu2

        gain = s12 / (s1 + eps)
        sv = s2 - gain * s12
        flat_ref = s1 < eps
        gain[flat_ref] = 0
        sv[flat_ref] = s2[flat_ref]
        s1 = np.where(flat_ref, 0, s1)
        flat_dist = s2 < eps
        gain[flat_dist] = 0
        sv[flat_dist] = 0
        neg = gain < 0
        sv[neg] = s2[neg]
        gain[neg] = 0
        sv = np.maximum(sv, eps)

        num = np.sum(np.log10(1 + gain * gain * s1 / (sv + VIFF_NOISE_VAR)))
        den = np.sum(np.log10(1 + s1 / VIFF_NOISE_VAR))
        if den > 0:
            ratios.append(num / den)
            weights.append(w)
    if not weights:
        return 0.0
    return float(np.dot(ratios, weights) / np.sum(weights))


def viff_per_source(fused, a, b):
    fused, a, b = _triple(fused, a, b)
    f = fused * 255.0
    return _vif_single(a * 255.0, f), _vif_single(b * 255.0, f)


def viff(fused, a, b):
    """Mean over the two sources of the 4-scale visual information fidelity."""
    va, vb = viff_per_source(fused, a, b)
    return (va + vb) / 2.0


def _corr(x, y):
    x = x.ravel() - x.mean()
    y = y.ravel() - y.mean()
    denom = math.sqrt(float(np.dot(x, x)) * float(np.dot(y, y)))
    if denom == 0:
        return 0.0
    return float(np.dot(x, y) / denom)


def afm(fused, a, b):
    """Product of correlations between the fused phase-congruency map and the
    maps of each source and of their pixelwise maximum."""
    fused, a, b = _triple(fused, a, b)
    pc_f = phase_congruency(fused)
    pc_a = phase_congruency(a)
    pc_b = phase_congruency(b)
    pc_max = np.maximum(pc_a, pc_b)
    return _corr(pc_f, pc_a) * _corr(pc_f, pc_b) * _corr(pc_f, pc_max)


def evaluate(fused, a, b, pair_id=""):
    fused, a, b = _triple(fused, a, b)
    return MetricReport(
        en=metric_en(fused), ag=metric_ag(fused), mi=mutual_information(fused, a, b),
        viff=viff(fused, a, b), qabf=qabf(fused, a, b), nmi=normalized_mi(fused, a, b),
        psnr=psnr_fusion(fused, a, b), afm=afm(fused, a, b), pair_id=pair_id)


def mean_report(reports, pair_id="mean"):
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")
    names = [f.name for f in fields(MetricReport) if f.name != "pair_id"]
    return MetricReport(**{n: float(np.mean([getattr(r, n) for r in reports])) for n in names},
                        pair_id=pair_id)


def evaluate_batch(triples, n_jobs=1):
    """Evaluate ``(fused, a, b, pair_id)`` tuples; returns (reports, mean report)."""
    from joblib import Parallel, delayed

    triples = list(triples)
    if n_jobs == 1:
        reports = [evaluate(f, a, b, pid) for f, a, b, pid in triples]
    else:
        reports = Parallel(n_jobs=n_jobs)(delayed(evaluate)(f, a, b, pid) for f, a, b, pid in triples)
    return reports, mean_report(reports)


def format_table(reports, mean=None):
    """Tab-separated table, metrics in EN, AG, MI, VIFF, QABF, NMI, PSNR, AFM order."""
    lines = ["\t".join(("pair_id",) + METRIC_NAMES)]
    rows = list(reports) + ([mean] if mean is not None else [])
    for r in rows:
        lines.append("\t".join([r.pair_id] + [f"{v:.6f}" for v in r.values()]))
    return "\n".join(lines) + "\n"


def read_table(path):
    """Parse a table written by :func:`format_table` into MetricReports."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header[1:]) != METRIC_NAMES:
            raise ValueError(f"unexpected metric table header in {path}")
        out = []
        for line in fh:
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            vals = dict(zip((n.lower() for n in METRIC_NAMES), map(float, parts[1:])))
            out.append(MetricReport(**vals, pair_id=parts[0]))
    return out
