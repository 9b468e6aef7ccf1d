"""Property tests for the invariants each module promises."""
import math

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from invfuse import checkpoint as ckpt
from invfuse.config import format_value, parse_value
from invfuse.data import CROP_OFFSETS, CROP_SIZE, ImagePair, crop_augment, rgb_to_ycbcr, ycbcr_to_rgb
from invfuse.invertible import DenseNet, InvertibleDenseBlock, scale_factor
from invfuse.loss import AdaptiveWeights, compute_weights, entropy, ssim, total_loss
from invfuse.mcfem import CBAM, MCFEM, MultiHeadSelfAttention, detokenize, tokenize
from invfuse.metrics import (metric_ag, metric_en, mutual_information, normalized_mi,
                             pair_mutual_information, psnr_fusion, qabf)
from invfuse.model import ModelConfig, build_model

FAST = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
unit = st.floats(0.0, 1.0, allow_nan=False)


def image(h, w):
    return arrays(np.float64, (h, w), elements=unit)


def levels_image(h, w, n_levels):
    return arrays(np.int64, (h, w), elements=st.integers(0, n_levels - 1)).map(
        lambda a: a * (255 // (n_levels - 1)) / 255.0)


# -- data ----------------------------------------------------------------------

@FAST
@given(arrays(np.float64, (4, 4, 3), elements=st.floats(0.0, 1.0)))
def test_colour_round_trip(rgb):
    y, cb, cr = rgb_to_ycbcr(rgb)
    ycc = np.stack([y, cb, cr], -1)
    if np.all((ycc > 0) & (ycc < 1)):
        np.testing.assert_allclose(ycbcr_to_rgb(y, cb, cr), rgb, atol=1e-6)


def test_crop_union_covers_frame():
    covered = np.zeros((256, 256), dtype=bool)
    for r in CROP_OFFSETS:
        for c in CROP_OFFSETS:
            covered[r:r + CROP_SIZE, c:c + CROP_SIZE] = True
    assert covered.all()


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_crop_is_deterministic(seed):
    rng = np.random.default_rng(seed)
    pair = ImagePair(rng.random((256, 256)), rng.random((256, 256)), None, "x")
    a, b = crop_augment(pair), crop_augment(pair)
    for p, q in zip(a, b):
        assert p.identifier == q.identifier
        assert np.array_equal(p.mri, q.mri) and np.array_equal(p.functional_y, q.functional_y)


# -- invertible blocks -----------------------------------------------------------

@FAST
@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_scale_bound_scalar(r):
    s = scale_factor(torch.tensor(r, dtype=torch.float64)).item()
    assert math.exp(-2) <= s <= math.exp(2)


@FAST
@given(st.integers(0, 2 ** 31 - 1), st.integers(4, 12), st.integers(4, 12))
def test_block_inverts_and_preserves_shape(seed, h, w):
    torch.manual_seed(seed)
    block = InvertibleDenseBlock(4, 2).double()
    x = torch.randn(1, 4, h, w, dtype=torch.float64)
    with torch.no_grad():
        y = block(x)
        assert y.shape == x.shape
        assert (block.inverse(y) - x).abs().max().item() < 1e-10


def test_dense_connectivity():
    torch.manual_seed(0)
    net = DenseNet(2, 2, 2).double()
    x = torch.randn(1, 2, 6, 6, dtype=torch.float64, requires_grad=True)
    captured = []
    hooks = [c.register_forward_hook(lambda m, i, o: captured.append(i[0])) for c in net.convs]
    net(x)
    for h in hooks:
        h.remove()
    # every layer's input depends on the block input
    for layer_input in captured:
        (g,) = torch.autograd.grad(layer_input.sum(), x, retain_graph=True)
        assert g.abs().sum() > 0


# -- complementary features ------------------------------------------------------

@FAST
@given(st.integers(0, 2 ** 31 - 1), st.integers(5, 19), st.integers(5, 19))
def test_mcfem_shape_and_attention_ranges(seed, h, w):
    torch.manual_seed(seed)
    x = torch.rand(1, 2, h, w)
    cbam = CBAM(2, 4)
    ca = cbam.channel(x)
    sa = cbam.spatial(ca * x)
    assert ((ca > 0) & (ca < 1)).all() and ((sa > 0) & (sa < 1)).all()
    assert MCFEM(tmu_count=1)(x[:, :1], x[:, 1:]).shape == (1, 16, h, w)


@FAST
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 20))
def test_softmax_rows(seed, length):
    torch.manual_seed(seed)
    w = MultiHeadSelfAttention(32, 8).attention_weights(5 * torch.randn(1, length, 32))
    assert (w.sum(-1) - 1).abs().max().item() < 1e-6


@FAST
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.sampled_from([1, 2, 4]))
def test_tokenize_inverse(c, hp, wp, p):
    x = torch.randn(2, c, hp * p, wp * p)
    assert torch.equal(detokenize(tokenize(x, p), c, hp * p, wp * p, p), x)


# -- model -----------------------------------------------------------------------

@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 50.0))
def test_model_output_range(seed, gain):
    model = build_model(ModelConfig(idb_count=1, tmu_count=1, seed=seed % 1000))
    with torch.no_grad():
        model.recon.weight.mul_(gain)
    rng = np.random.default_rng(seed)
    a = torch.tensor(rng.random((1, 1, 12, 12)), dtype=torch.float32)
    b = torch.tensor(rng.random((1, 1, 12, 12)), dtype=torch.float32)
    out = model(a, b)
    assert out.min() >= 0 and out.max() <= 1


def test_inputs_are_not_symmetric():
    model = build_model()
    rng = np.random.default_rng(0)
    a, b = torch.rand(1, 1, 16, 16), torch.rand(1, 1, 16, 16)
    assert not torch.allclose(model(a, b), model(b, a))


# -- loss ------------------------------------------------------------------------

def test_weights_depend_only_on_sources():
    import inspect
    assert list(inspect.signature(compute_weights).parameters) == ["mri_y", "func_y", "normalize"]


@FAST
@given(image(12, 12))
def test_ssim_term_zero_at_fixed_point(x):
    out = total_loss(x, x, x, AdaptiveWeights(0.7, 0.3, 0.0, 0.0))
    assert abs(float(out.ssim_term)) < 1e-9


@FAST
@given(image(12, 12), image(12, 12))
def test_ssim_symmetric_and_bounded(x, y):
    s = ssim(x, y)
    assert s == pytest.approx(ssim(y, x), abs=1e-12)
    assert s <= 1 + 1e-12


@FAST
@given(image(9, 9))
def test_entropy_bounds(x):
    assert 0.0 <= entropy(x) <= 8.0


# -- metrics ---------------------------------------------------------------------

@FAST
@given(levels_image(6, 6, 4), levels_image(6, 6, 4), levels_image(6, 6, 4), st.integers(0, 2 ** 31 - 1))
def test_histogram_metrics_ignore_pixel_order(f, a, b, seed):
    perm = np.random.default_rng(seed).permutation(36)
    shuffle = lambda img: img.ravel()[perm].reshape(6, 6)
    fs, as_, bs = shuffle(f), shuffle(a), shuffle(b)
    assert metric_en(fs) == metric_en(f)
    assert mutual_information(fs, as_, bs) == pytest.approx(mutual_information(f, a, b), abs=1e-12)
    assert normalized_mi(fs, as_, bs) == pytest.approx(normalized_mi(f, a, b), abs=1e-12)
    assert psnr_fusion(fs, as_, bs) == pytest.approx(psnr_fusion(f, a, b), abs=1e-9)


@FAST
@given(image(8, 8), image(8, 8))
def test_mi_symmetric_and_bounded(x, y):
    mi = pair_mutual_information(x, y)
    assert mi == pytest.approx(pair_mutual_information(y, x), abs=1e-12)
    assert -1e-12 <= mi <= min(entropy(x), entropy(y)) + 1e-12
    assert pair_mutual_information(x, x) == pytest.approx(entropy(x), abs=1e-12)


@FAST
@given(image(10, 10), image(10, 10), image(10, 10))
def test_qabf_in_unit_interval(f, a, b):
    assert 0.0 <= qabf(f, a, b) <= 1.0


@FAST
@given(image(10, 10))
def test_self_fusion_keeps_source_statistics(a):
    assert metric_en(a) == entropy(a)
    assert metric_ag(a) == pytest.approx(metric_ag(a.copy()))
    assert psnr_fusion(a, a, a) == 100.0


# -- checkpoint and config -------------------------------------------------------

names = st.text(st.characters(codec="utf-8", exclude_categories=("Cs",)), min_size=0, max_size=12)


@FAST
@given(st.dictionaries(names, arrays(np.float32, st.tuples(st.integers(0, 3), st.integers(0, 3)),
                                     elements=st.floats(-1e6, 1e6, width=32)), max_size=4),
       st.dictionaries(st.text(max_size=5), st.integers() | st.booleans() | st.none(), max_size=4))
def test_checkpoint_round_trip(tensors, header):
    h, t = ckpt.decode(ckpt.encode(header, tensors))
    assert h == header and list(t) == list(tensors)
    for k in tensors:
        assert np.array_equal(t[k], tensors[k])


@FAST
@given(st.integers(-10 ** 6, 10 ** 6) | st.booleans() | st.none()
       | st.floats(allow_nan=False, allow_infinity=False)
       | st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9)))
def test_config_value_round_trip(value):
    assert parse_value(format_value(value)) == value
