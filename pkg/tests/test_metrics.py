import math

import numpy as np
import pytest

from vqvc import bitstream as bs
from vqvc.errors import ConfigError, ShapeError
from vqvc.metrics import (
    MS_SSIM_MIN_EXTENT,
    bd_rate,
    bpp,
    ms_ssim,
    psnr,
)
from vqvc.quantizer import CodebookSpec, IndexGrid


class TestPsnr:
    def test_identical_images_are_inf(self):
        x = np.random.default_rng(0).uniform(size=(3, 16, 16))
        assert psnr(x, x) == math.inf

    def test_known_value(self):
        a = np.zeros((4, 4))
        b = np.full((4, 4), 0.1)
        assert abs(psnr(a, b) - 20.0) < 1e-9    # MSE 0.01 -> 20 dB

    def test_uniform_noise_ballpark(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(size=(3, 64, 64))
        b = np.clip(a + rng.normal(0, 0.01, a.shape), 0, 1)
        assert 38.0 < psnr(a, b) < 42.0

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(size=(8, 8))
        b = rng.uniform(size=(8, 8))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestMsSsim:
    def test_identical_images_score_one(self):
        x = np.random.default_rng(3).uniform(size=(176, 176))
        assert abs(ms_ssim(x, x) - 1.0) < 1e-9

    def test_degradation_is_monotone(self):
        rng = np.random.default_rng(4)
        yy, xx = np.mgrid[0:192, 0:192]
        a = 0.5 + 0.3 * np.sin(0.2 * xx) * np.cos(0.15 * yy)
        scores = []
        for sigma in (0.02, 0.1, 0.3):
            b = np.clip(a + rng.normal(0, sigma, a.shape), 0, 1)
            scores.append(ms_ssim(a, b))
        assert 1.0 > scores[0] > scores[1] > scores[2] > 0.0

    def test_multichannel_is_channel_mean(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(size=(2, 176, 176))
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        per_channel = [ms_ssim(a[c], b[c]) for c in range(2)]
        assert abs(ms_ssim(a, b) - np.mean(per_channel)) < 1e-12

    def test_minimum_extent_enforced(self):
        small = np.zeros((MS_SSIM_MIN_EXTENT - 1, MS_SSIM_MIN_EXTENT))
        with pytest.raises(ConfigError):
            ms_ssim(small, small)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ms_ssim(np.zeros((176, 176)), np.zeros((176, 180)))


def one_frame_stream(spec, w=1920, h=1024, kind=bs.KIND_KEY, n=1):
    rng = np.random.default_rng(0)
    lh, lw = h // 8, w // 8
    grid = lambda: IndexGrid([
        rng.integers(0, k, size=(2, lh >> (s + 1), lw >> (s + 1))).astype(np.int32)
        for s, k in enumerate(spec.sizes)])
    frames = [(kind, grid()) for _ in range(n)]
    return bs.GopBitstream(w, h, max(n, 1), spec, spec, 0, frames)


class TestBpp:
    def test_keyframe_rate_at_1080_class_extents(self):
        stream = one_frame_stream(CodebookSpec((8192, 2048, 512)))
        assert abs(bpp(stream) - 0.12744140625) < 1e-12

    def test_predicted_low_rate(self):
        stream = one_frame_stream(CodebookSpec((8, 2048, 512)),
                                  kind=bs.KIND_PRED)
        assert abs(bpp(stream) - 0.04931640625) < 1e-12

    def test_bpp_averages_over_frames(self):
        spec = CodebookSpec((8, 2048, 512))
        one = one_frame_stream(spec, kind=bs.KIND_PRED, n=1)
        four = one_frame_stream(spec, kind=bs.KIND_PRED, n=4)
        assert abs(bpp(one) - bpp(four)) < 1e-12


class TestBdRate:
    def quality_curve(self, rates, offset=0.0):
        # a plausible concave rate-quality relation
        return [(r, 30.0 + 8.0 * math.log2(r / 0.02) + offset) for r in rates]

    def test_identical_curves_are_zero(self):
        curve = self.quality_curve([0.02, 0.05, 0.1, 0.2])
        assert abs(bd_rate(curve, curve)) < 1e-9

    def test_doubled_rate_costs_100_percent(self):
        rates = [0.02, 0.05, 0.1, 0.2]
        base = self.quality_curve(rates)
        doubled = [(2 * r, q) for r, q in base]
        assert abs(bd_rate(base, doubled) - 100.0) < 0.1

    def test_halved_rate_saves_50_percent(self):
        rates = [0.02, 0.05, 0.1, 0.2]
        base = self.quality_curve(rates)
        halved = [(0.5 * r, q) for r, q in base]
        assert abs(bd_rate(base, halved) + 50.0) < 0.1

    def test_antisymmetry_in_log_domain(self):
        a = self.quality_curve([0.02, 0.05, 0.1, 0.2])
        b = self.quality_curve([0.025, 0.06, 0.12, 0.25], offset=0.7)
        fwd = bd_rate(a, b)
        rev = bd_rate(b, a)
        assert abs((1 + fwd / 100) * (1 + rev / 100) - 1.0) < 1e-6

    def test_too_few_points(self):
        short = self.quality_curve([0.02, 0.05, 0.1])
        with pytest.raises(ConfigError):
            bd_rate(short, short)

    def test_disjoint_quality_ranges(self):
        a = self.quality_curve([0.02, 0.03, 0.04, 0.05])
        b = self.quality_curve([0.02, 0.03, 0.04, 0.05], offset=500.0)
        with pytest.raises(ConfigError):
            bd_rate(a, b)

    def test_degenerate_curve_rejected(self):
        bad = [(0.02, 30.0), (0.05, 30.0), (0.1, 35.0), (0.2, 40.0)]
        good = self.quality_curve([0.02, 0.05, 0.1, 0.2])
        with pytest.raises(ConfigError):
            bd_rate(good, bad)
        negative = [(0.02, 30.0), (-0.05, 32.0), (0.1, 35.0), (0.2, 40.0)]
        with pytest.raises(ConfigError):
            bd_rate(good, negative)
