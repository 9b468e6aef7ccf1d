import math

import numpy as np
import pytest

from invfuse.metrics import (METRIC_NAMES, PSNR_SENTINEL, MetricReport, afm, evaluate,
                             evaluate_batch, format_table, mean_report, metric_ag, metric_en,
                             mutual_information, normalized_mi, pair_mutual_information,
                             psnr_fusion, qabf, read_table, viff, viff_per_source)
from invfuse.phasecong import phase_congruency


def _scene(size=64, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1.0)
    img = 0.4 + 0.3 * np.sin(8 * xx) * np.cos(5 * yy) + 0.2 * (xx > 0.5)
    return np.clip(img + 0.02 * rng.standard_normal(img.shape), 0, 1)


def test_metric_order():
    assert METRIC_NAMES == ("EN", "AG", "MI", "VIFF", "QABF", "NMI", "PSNR", "AFM")


def test_ag_scale():
    x = np.zeros((6, 9))
    x[:, 4:] = 1.0
    assert metric_ag(x) == pytest.approx(255 / 8)


def test_psnr_one_level_off():
    a = np.full((8, 8), 100 / 255)
    f = np.full((8, 8), 101 / 255)
    assert psnr_fusion(f, a, a) == pytest.approx(10 * math.log10(255 ** 2), abs=1e-9)
    assert psnr_fusion(f, a, a) == pytest.approx(48.13, abs=5e-3)
    assert psnr_fusion(a, a, a) == PSNR_SENTINEL


def test_mi_of_independent_halves():
    x = np.zeros((4, 4))
    x[:2] = 1.0
    y = np.zeros((4, 4))
    y[:, :2] = 1.0
    assert pair_mutual_information(x, y) == 0.0
    assert pair_mutual_information(x, x) == 1.0
    assert mutual_information(x, x, y) == 1.0
    assert normalized_mi(x, x, x) == 2.0
    assert normalized_mi(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4))) == 0.0


def test_self_fusion_maxima():
    a = _scene()
    va, vb = viff_per_source(a, a, a)
    assert va == pytest.approx(1.0, abs=1e-6) and vb == pytest.approx(1.0, abs=1e-6)
    assert afm(a, a, a) == pytest.approx(1.0, abs=1e-6)
    assert psnr_fusion(a, a, a) == PSNR_SENTINEL


def test_qabf_bounds():
    a, b = _scene(seed=0), _scene(seed=1)[::-1]
    assert 0.0 <= qabf((a + b) / 2, a, b) <= 1.0
    assert qabf(np.full_like(a, 0.5), a, b) < 1e-3
    assert qabf(a, a, a) > qabf(np.clip(a + 0.1 * np.random.default_rng(4).standard_normal(a.shape), 0, 1), a, a)
    flat = np.full((8, 8), 0.2)
    assert qabf(flat, flat, flat) == 0.0


def test_viff_flat_fused_is_zero():
    a = _scene()
    assert viff(np.full_like(a, 0.5), a, a) == pytest.approx(0.0, abs=1e-9)
    noisy = np.clip(a + 0.1 * np.random.default_rng(1).standard_normal(a.shape), 0, 1)
    assert 0 < viff(noisy, a, a) < 1


def test_phase_congruency_range():
    pc = phase_congruency(_scene())
    assert pc.shape == (64, 64) and pc.min() >= 0 and pc.max() <= 1
    assert np.all(phase_congruency(np.full((32, 32), 0.3)) == 0)


def test_evaluate_report_and_table(tmp_path):
    a, b = _scene(seed=0), _scene(seed=1)
    r1 = evaluate((a + b) / 2, a, b, "p1")
    r2 = evaluate(np.maximum(a, b), a, b, "p2")
    assert all(math.isfinite(v) for v in r1.values())
    assert r1.en == metric_en((a + b) / 2)
    mean = mean_report([r1, r2])
    assert mean.pair_id == "mean" and mean.qabf == pytest.approx((r1.qabf + r2.qabf) / 2)
    text = format_table([r1, r2], mean)
    lines = text.strip().split("\n")
    assert lines[0] == "pair_id\tEN\tAG\tMI\tVIFF\tQABF\tNMI\tPSNR\tAFM"
    assert len(lines) == 4 and lines[-1].startswith("mean\t")
    (tmp_path / "t.tsv").write_text(text)
    back = read_table(tmp_path / "t.tsv")
    assert [r.pair_id for r in back] == ["p1", "p2", "mean"]
    assert back[0].psnr == pytest.approx(r1.psnr, abs=1e-6)
    reports, m = evaluate_batch([((a + b) / 2, a, b, "p1"), (np.maximum(a, b), a, b, "p2")], n_jobs=1)
    assert reports[0] == r1 and m.en == pytest.approx(mean.en)
    with pytest.raises(ValueError):
        mean_report([])
    assert isinstance(r1, MetricReport)
