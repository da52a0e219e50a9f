"""Image quality metrics: five-scale MS-SSIM (with configurable per-scale
weights and the dB conversion) and PSNR, plus 8-bit PGM/PPM reading.

MS-SSIM follows the standard construction: contrast-structure terms at five
dyadic scales, luminance only at the coarsest, combined as a product with the
weights normalized to sum 1.  The window is an 11x11 Gaussian (sigma 1.5)
applied without padding, and scales are linked by 2x2 mean pooling, so inputs
need at least 176 samples per side.
"""

from __future__ import annotations

import math
import re

import numpy as np

from .errors import ParseError

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
SCALES = 5
MIN_SIDE = WINDOW_SIZE * 2 ** (SCALES - 1)  # 176

DEFAULT_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
AVERAGE_WEIGHTS = (1.0, 1.0, 1.0, 1.0, 1.0)


class MsSsimWeights:
    """Five per-scale exponents; only their ratios matter (normalized in use)."""

    def __init__(self, values):
        values = tuple(float(v) for v in values)
        if len(values) != SCALES:
            raise ValueError(f"need {SCALES} weights, got {len(values)}")
        if any(v < 0 for v in values):
            raise ValueError("weights must be non-negative")
        if not any(v > 0 for v in values):
            raise ValueError("at least one weight must be positive")
        self.values = values

    def normalized(self) -> np.ndarray:
        w = np.asarray(self.values, dtype=np.float64)
        return w / w.sum()


class ImagePlane:
    """An image as (height, width, channels) float64 samples in [0, 1]."""

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image must be (h, w, 1|3), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite samples")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image samples must lie in [0, 1]")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _gauss_kernel() -> np.ndarray:
    coords = np.arange(WINDOW_SIZE, dtype=np.float64) - WINDOW_SIZE // 2
    g = np.exp(-(coords**2) / (2.0 * WINDOW_SIGMA**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation of a 2-D image with a 1-D window."""
    v = np.lib.stride_tricks.sliding_window_view(img, kernel.size, axis=0)
    img = np.einsum("ijw,w->ij", v, kernel)
    v = np.lib.stride_tricks.sliding_window_view(img, kernel.size, axis=1)
    return np.einsum("ijw,w->ij", v, kernel)


def _ssim_cs(x: np.ndarray, y: np.ndarray, kernel: np.ndarray) -> tuple[float, float]:
    """Mean SSIM and mean contrast-structure over valid window positions."""
    c1 = K1 * K1
    c2 = K2 * K2
    mu1 = _filter_valid(x, kernel)
    mu2 = _filter_valid(y, kernel)
    s1 = _filter_valid(x * x, kernel) - mu1 * mu1
    s2 = _filter_valid(y * y, kernel) - mu2 * mu2
    s12 = _filter_valid(x * y, kernel) - mu1 * mu2
    cs_map = (2.0 * s12 + c2) / (s1 + s2 + c2)
    l_map = (2.0 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1)
    return float(np.mean(l_map * cs_map)), float(np.mean(cs_map))


def _downsample(img: np.ndarray) -> np.ndarray:
    h2, w2 = img.shape[0] // 2, img.shape[1] // 2
    return img[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def ms_ssim(a: ImagePlane, b: ImagePlane, weights: MsSsimWeights | None = None) -> float:
    """Multi-scale structural similarity in [0, 1]; 1 exactly iff a == b.

    Color images are scored per channel and averaged.
    """
    if a.data.shape != b.data.shape:
        raise ValueError(f"image dims differ: {a.data.shape} vs {b.data.shape}")
    if min(a.height, a.width) < MIN_SIDE:
        raise ValueError(
            f"images must be at least {MIN_SIDE} per side for {SCALES} scales, "
            f"got {a.height}x{a.width}"
        )
    if weights is None:
        weights = MsSsimWeights(DEFAULT_WEIGHTS)
    w = weights.normalized()
    kernel = _gauss_kernel()
    per_channel = []
    for ch in range(a.channels):
        x = a.data[:, :, ch]
        y = b.data[:, :, ch]
        terms = []
        for scale in range(SCALES):
            ssim_val, cs_val = _ssim_cs(x, y, kernel)
            terms.append(ssim_val if scale == SCALES - 1 else cs_val)
            if scale < SCALES - 1:
                x = _downsample(x)
                y = _downsample(y)
        val = 1.0
        for t, wi in zip(terms, w):
            val *= max(t, 0.0) ** wi
        per_channel.append(val)
    return float(np.mean(per_channel))


def ms_ssim_db(v: float) -> float:
    """Score in decibels: -10 * log10(1 - v)."""
    if v >= 1.0:
        raise ValueError(f"dB conversion needs a score < 1, got {v}")
    return -10.0 * math.log10(1.0 - v)


def psnr(a: ImagePlane, b: ImagePlane) -> float:
    """Peak signal-to-noise ratio in dB for unit-range samples; inf if identical."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"image dims differ: {a.data.shape} vs {b.data.shape}")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


# ---------------------------------------------------------------------------
# 8-bit PGM/PPM I/O
# ---------------------------------------------------------------------------

_NETPBM_KINDS = {b"P2": (1, False), b"P3": (3, False), b"P5": (1, True), b"P6": (3, True)}


def _tokenize_header(buf: bytes, count: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated integers, skipping # comments."""
    tokens: list[int] = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(buf):
            raise ParseError("image header ended early")
        ch = buf[pos : pos + 1]
        if ch == b"#":
            nl = buf.find(b"\n", pos)
            pos = len(buf) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            m = re.match(rb"\d+", buf[pos:])
            if not m:
                raise ParseError(f"expected an integer in image header at byte {pos}")
            tokens.append(int(m.group(0)))
            pos += m.end()
    return tokens, pos


def read_image(path: str) -> ImagePlane:
    """Read an 8-bit PGM (P2/P5) or PPM (P3/P6) image, scaled to [0, 1]."""
    with open(path, "rb") as f:
        buf = f.read()
    kind = buf[:2]
    if kind not in _NETPBM_KINDS:
        raise ParseError(f"unsupported image magic {kind!r}; expected P2/P3/P5/P6")
    channels, binary = _NETPBM_KINDS[kind]
    (width, height, maxval), pos = _tokenize_header(buf[2:], 3)
    pos += 2
    if width <= 0 or height <= 0:
        raise ParseError(f"image declares empty dims {width}x{height}")
    if not (0 < maxval <= 255):
        raise ParseError(f"only 8-bit images supported, maxval is {maxval}")
    count = width * height * channels
    if binary:
        pos += 1  # single whitespace byte after maxval
        data = buf[pos : pos + count]
        if len(data) != count:
            raise ParseError(f"image payload has {len(data)} bytes, needs {count}")
        samples = np.frombuffer(data, dtype=np.uint8).astype(np.float64)
    else:
        values, _ = _tokenize_header(buf[pos:], count)
        samples = np.asarray(values, dtype=np.float64)
    if samples.max(initial=0.0) > maxval:
        raise ParseError(f"sample exceeds declared maxval {maxval}")
    return ImagePlane((samples / maxval).reshape(height, width, channels))


def write_image(plane: ImagePlane, path: str) -> None:
    """Write a binary PGM/PPM at maxval 255 (round to nearest)."""
    kind = b"P5" if plane.channels == 1 else b"P6"
    samples = np.rint(plane.data * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(kind + b"\n%d %d\n255\n" % (plane.width, plane.height))
        f.write(samples.tobytes())
