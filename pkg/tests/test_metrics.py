import math

import numpy as np
import pytest

from mscaec.errors import ParseError
from mscaec.metrics import (
    AVERAGE_WEIGHTS,
    DEFAULT_WEIGHTS,
    ImagePlane,
    MsSsimWeights,
    ms_ssim,
    ms_ssim_db,
    psnr,
    read_image,
    write_image,
)

# ---------------------------------------------------------------------------
# Independent direct-formula oracle: full 2-D 11x11 window accumulated tap by
# tap (no separable filtering), same definitional choices as the library.
# ---------------------------------------------------------------------------

def _oracle_window():
    coords = np.arange(11, dtype=np.float64) - 5
    g = np.exp(-(coords**2) / (2 * 1.5**2))
    g /= g.sum()
    return np.outer(g, g)


def _oracle_filter(img, w2d):
    h, w = img.shape
    out = np.zeros((h - 10, w - 10))
    for di in range(11):
        for dj in range(11):
            out += w2d[di, dj] * img[di : di + h - 10, dj : dj + w - 10]
    return out


def _oracle_pool(img):
    h2, w2 = img.shape[0] // 2, img.shape[1] // 2
    a = img[0 : h2 * 2 : 2, 0 : w2 * 2 : 2]
    b = img[1 : h2 * 2 : 2, 0 : w2 * 2 : 2]
    c = img[0 : h2 * 2 : 2, 1 : w2 * 2 : 2]
    d = img[1 : h2 * 2 : 2, 1 : w2 * 2 : 2]
    return (a + b + c + d) * 0.25


def oracle_ms_ssim(a: ImagePlane, b: ImagePlane, weights) -> float:
    w2d = _oracle_window()
    wn = np.asarray(weights, dtype=np.float64)
    wn = wn / wn.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for ch in range(a.channels):
        x, y = a.data[:, :, ch], b.data[:, :, ch]
        terms = []
        for scale in range(5):
            mu1 = _oracle_filter(x, w2d)
            mu2 = _oracle_filter(y, w2d)
            s1 = _oracle_filter(x * x, w2d) - mu1**2
            s2 = _oracle_filter(y * y, w2d) - mu2**2
            s12 = _oracle_filter(x * y, w2d) - mu1 * mu2
            cs = np.mean((2 * s12 + c2) / (s1 + s2 + c2))
            if scale == 4:
                lum = (2 * mu1 * mu2 + c1) / (mu1**2 + mu2**2 + c1)
                terms.append(np.mean(lum * (2 * s12 + c2) / (s1 + s2 + c2)))
            else:
                terms.append(cs)
                x, y = _oracle_pool(x), _oracle_pool(y)
        vals.append(math.prod(max(t, 0.0) ** wi for t, wi in zip(terms, wn)))
    return float(np.mean(vals))


def _noise_pair(seed, h=180, w=184, channels=1, amplitude=0.06):
    rng = np.random.default_rng(seed)
    base = rng.random((h, w, channels))
    noisy = np.clip(base + rng.normal(0, amplitude, size=base.shape), 0.0, 1.0)
    return ImagePlane(base), ImagePlane(noisy)


class TestMsSsim:
    def test_self_similarity_is_exactly_one(self):
        img, _ = _noise_pair(0)
        assert ms_ssim(img, img) == 1.0

    def test_symmetry(self):
        a, b = _noise_pair(1)
        assert ms_ssim(a, b) == ms_ssim(b, a)

    def test_matches_direct_formula_oracle(self):
        for seed in (2, 3, 4):
            a, b = _noise_pair(seed)
            got = ms_ssim(a, b, MsSsimWeights(DEFAULT_WEIGHTS))
            want = oracle_ms_ssim(a, b, DEFAULT_WEIGHTS)
            assert got == pytest.approx(want, abs=1e-6)

    def test_oracle_agreement_average_weights(self):
        a, b = _noise_pair(5)
        got = ms_ssim(a, b, MsSsimWeights(AVERAGE_WEIGHTS))
        want = oracle_ms_ssim(a, b, AVERAGE_WEIGHTS)
        assert got == pytest.approx(want, abs=1e-6)

    def test_weight_scaling_invariance(self):
        a, b = _noise_pair(6)
        w1 = MsSsimWeights(DEFAULT_WEIGHTS)
        w2 = MsSsimWeights([v * 37.5 for v in DEFAULT_WEIGHTS])
        assert ms_ssim(a, b, w1) == ms_ssim(a, b, w2)

    def test_bounded_by_one_and_below_one_for_distinct(self):
        a, b = _noise_pair(7, amplitude=0.2)
        v = ms_ssim(a, b)
        assert 0.0 <= v < 1.0

    def test_three_channel_images(self):
        a, b = _noise_pair(8, channels=3)
        v = ms_ssim(a, b)
        per = [
            ms_ssim(ImagePlane(a.data[:, :, ch]), ImagePlane(b.data[:, :, ch]))
            for ch in range(3)
        ]
        assert v == pytest.approx(float(np.mean(per)), abs=1e-12)

    def test_small_images_rejected(self):
        small = ImagePlane(np.zeros((100, 200, 1)))
        with pytest.raises(ValueError):
            ms_ssim(small, small)

    def test_dim_mismatch_rejected(self):
        a, _ = _noise_pair(9)
        b = ImagePlane(np.zeros((180, 200, 1)))
        with pytest.raises(ValueError):
            ms_ssim(a, b)

    def test_downsampling_shape_sequence(self):
        from mscaec.metrics import _downsample

        img = np.zeros((177, 189))
        for _ in range(4):
            img = _downsample(img)
        assert img.shape == (177 // 16, 189 // 16)

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            MsSsimWeights([1, 2, 3])
        with pytest.raises(ValueError):
            MsSsimWeights([1, 1, 1, 1, -0.1])
        with pytest.raises(ValueError):
            MsSsimWeights([0, 0, 0, 0, 0])


class TestDbConversion:
    def test_published_table_value(self):
        assert ms_ssim_db(0.9743) == pytest.approx(15.90, abs=0.01)

    def test_point_nine_is_ten_db(self):
        assert ms_ssim_db(0.9) == pytest.approx(10.0, abs=1e-9)

    def test_zero_is_zero_db(self):
        assert ms_ssim_db(0.0) == 0.0

    def test_scores_at_or_above_one_rejected(self):
        with pytest.raises(ValueError):
            ms_ssim_db(1.0)
        with pytest.raises(ValueError):
            ms_ssim_db(1.5)


class TestPsnr:
    def test_identical_images_are_infinite(self):
        img, _ = _noise_pair(10)
        assert psnr(img, img) == math.inf

    def test_constant_offset_closed_form(self):
        a = ImagePlane(np.full((20, 20, 1), 0.4))
        b = ImagePlane(np.full((20, 20, 1), 0.5))
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(11)
        a = ImagePlane(rng.random((9, 7, 1)))
        b = ImagePlane(rng.random((9, 7, 1)))
        acc = 0.0
        for r in range(9):
            for c in range(7):
                d = a.data[r, c, 0] - b.data[r, c, 0]
                acc += d * d
        want = -10.0 * math.log10(acc / 63.0)
        assert psnr(a, b) == pytest.approx(want, rel=1e-9)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            psnr(ImagePlane(np.zeros((4, 4, 1))), ImagePlane(np.zeros((4, 5, 1))))


class TestNetpbm:
    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        img = ImagePlane(rng.integers(0, 256, size=(13, 9, 3)) / 255.0)
        p = tmp_path / "img.ppm"
        write_image(img, str(p))
        back = read_image(str(p))
        assert np.array_equal(back.data, img.data)

    def test_gray_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        img = ImagePlane(rng.integers(0, 256, size=(6, 8, 1)) / 255.0)
        p = tmp_path / "img.pgm"
        write_image(img, str(p))
        assert np.array_equal(read_image(str(p)).data, img.data)

    def test_ascii_variants_and_comments(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_text("P2\n# a comment\n3 2\n255\n0 128 255\n64 32 16\n")
        img = read_image(str(p))
        assert img.data.shape == (2, 3, 1)
        assert img.data[0, 1, 0] == pytest.approx(128 / 255)
        p3 = tmp_path / "a.ppm"
        p3.write_text("P3\n1 1\n255\n1 2 3\n")
        img3 = read_image(str(p3))
        assert img3.data.reshape(-1).tolist() == pytest.approx([1 / 255, 2 / 255, 3 / 255])

    def test_high_maxval_rejected(self, tmp_path):
        p = tmp_path / "wide.pgm"
        p.write_text("P2\n1 1\n65535\n1000\n")
        with pytest.raises(ParseError):
            read_image(str(p))

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.pgm"
        p.write_bytes(b"P9\n1 1\n255\n\x00")
        with pytest.raises(ParseError):
            read_image(str(p))

    def test_truncated_payload_rejected(self, tmp_path):
        p = tmp_path / "short.pgm"
        p.write_bytes(b"P5\n4 4\n255\n\x00\x01")
        with pytest.raises(ParseError):
            read_image(str(p))
