import math

import numpy as np
import pytest
import torch
import torch.nn as nn

from invfuse.errors import ShapeError
from invfuse.invertible import (DenseNet, InvertibleDenseBlock, InvertibleDenseNetwork,
                                scale_factor)


def test_scale_factor_values():
    r = torch.tensor([0.0, math.log(3.0), -1e6, 1e6], dtype=torch.float64)
    s = scale_factor(r)
    # sigmoid(ln 3) = 3/4, so s = exp(4 * 0.25) = e
    np.testing.assert_allclose(s.numpy(), [1.0, math.e, math.exp(-2), math.exp(2)], rtol=1e-15)


def test_dense_net_channel_layout():
    net = DenseNet(3, 2, 5)
    assert [c.in_channels for c in net.convs] == [3, 5, 7, 9]
    assert net.head.in_channels == 11 and net.head.out_channels == 5
    assert net(torch.zeros(1, 3, 6, 6)).shape == (1, 5, 6, 6)
    with pytest.raises(ShapeError):
        net(torch.zeros(1, 4, 6, 6))


def test_dense_net_scalar_oracle():
    # 1x1 input with centre-only kernels: every layer is a scalar affine map
    net = DenseNet(1, 1, 1).double()
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
        for i, conv in enumerate(net.convs):
            conv.weight[0, :, 1, 1] = torch.tensor([1.0] + [-0.5] * i, dtype=torch.float64)
            conv.bias.fill_(0.1)
        net.head.weight[0, :, 0, 0] = torch.tensor([1.0, 2.0, 3.0, 4.0, 5.0], dtype=torch.float64)
    x = 0.7
    lrelu = lambda v: v if v > 0 else 0.01 * v
    feats = [x]
    for i in range(4):
        feats.append(lrelu(feats[0] - 0.5 * sum(feats[1:]) + 0.1))
    expected = sum(w * f for w, f in zip([1, 2, 3, 4, 5], feats))
    out = net(torch.full((1, 1, 1, 1), x, dtype=torch.float64))
    assert out.item() == pytest.approx(expected, abs=1e-14)


def _zero(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


def test_zero_subnets_give_identity():
    block = InvertibleDenseBlock(4, 2).double()
    _zero(block)
    x = torch.randn(2, 4, 5, 5, dtype=torch.float64)
    torch.testing.assert_close(block(x), x, rtol=0, atol=0)


def test_coupling_hand_computed():
    # subnets reduced to constant outputs through their head biases
    block = InvertibleDenseBlock(2, 1).double()
    _zero(block)
    with torch.no_grad():
        block.s1.head.bias.fill_(math.log(3.0))   # s = e
        block.t1.head.bias.fill_(0.5)
        block.s2.head.bias.fill_(0.0)             # s = 1
        block.t2.head.bias.fill_(-0.25)
    x1, x2 = 0.3, -1.2
    x = torch.tensor([x1, x2], dtype=torch.float64).reshape(1, 2, 1, 1)
    tem = x2 * math.e + 0.5
    y1 = x1 * 1.0 - 0.25
    np.testing.assert_allclose(block(x).detach().flatten().numpy(), [y1, tem], rtol=1e-14)
    torch.testing.assert_close(block.inverse(block(x)), x, rtol=0, atol=1e-15)


def test_block_rejects_odd_channels():
    with pytest.raises(ShapeError):
        InvertibleDenseBlock(3, 2)
    with pytest.raises(ShapeError):
        InvertibleDenseBlock(4, 2)(torch.zeros(1, 6, 4, 4))


def test_network_round_trip_float64():
    torch.manual_seed(0)
    net = InvertibleDenseNetwork(16, 2, 6).double()
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, DenseNet):
                m.head.weight.mul_(0.1)
    h = torch.randn(1, 16, 12, 12, dtype=torch.float64)
    err = (net.invert_features(net.transform(h)) - h).abs().max().item()
    assert err < 1e-10


def test_network_shapes():
    net = InvertibleDenseNetwork(8, 2, 2)
    out = net(torch.rand(1, 1, 10, 14))
    assert out.shape == (1, 8, 10, 14)
    with pytest.raises(ShapeError):
        net(torch.rand(1, 2, 10, 14))
    with pytest.raises(ShapeError):
        net.invert_features(torch.rand(1, 4, 10, 14))
    assert isinstance(InvertibleDenseNetwork(8, 2, 0).blocks, nn.ModuleList)
    ident = InvertibleDenseNetwork(8, 2, 0)
    h = torch.rand(1, 8, 4, 4)
    assert torch.equal(ident.transform(h), h)
