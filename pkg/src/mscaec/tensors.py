"""Dense (height, width, channels) tensors and the convolution primitives.

Every operation accumulates in float64 and stores results in float32, with a
fixed summation order, so that repeated evaluation of the same inputs is
bit-identical.  That reproducibility is what makes the autoregressive
encoder/decoder pair lossless: both sides must derive identical distribution
parameters from identical context.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

ACT_NONE = "none"
ACT_LEAKY_RELU = "leaky_relu"
DEFAULT_LEAKY_SLOPE = 0.01

# All masked kernels are evaluated inside a frame of this spatial size, so the
# 3x3, 5x5 and 7x7 branches share one window extraction per position.
MASK_FRAME = 7


def _rows_dot(wmat: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Canonical contraction: (K, L) float64 rows against a length-L vector.

    np.einsum without optimization never dispatches to BLAS, so the per-row
    accumulation order is a fixed function of L alone.  Single-position and
    batched evaluation therefore agree bit-for-bit (see _rows_dot_batch).
    """
    return np.einsum("ki,i->k", wmat, vec)


def _rows_dot_batch(wmat: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Batched form of _rows_dot: (K, L) against (P, L) rows, returns (P, K)."""
    return np.einsum("ki,pi->pk", wmat, mat)


def _apply_activation(acc: np.ndarray, activation: str, slope: float) -> np.ndarray:
    if activation == ACT_NONE:
        return acc
    if activation == ACT_LEAKY_RELU:
        return np.where(acc > 0.0, acc, slope * acc)
    raise ConfigurationError(f"unknown activation {activation!r}")


class Tensor:
    """A dense rank-3 array (height, width, channels) of float32 values."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data)
        if arr.ndim != 3:
            raise ValueError(f"tensor must be rank 3, got shape {arr.shape}")
        if any(d <= 0 for d in arr.shape):
            raise ValueError(f"tensor dims must be positive, got {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        # canonical storage: no negative zeros, so equal tensors are
        # byte-identical when serialized
        if np.any(np.signbit(arr) & (arr == 0.0)):
            arr = arr + np.float32(0.0)
        self.data = arr

    @classmethod
    def zeros(cls, height: int, width: int, channels: int) -> "Tensor":
        return cls(np.zeros((height, width, channels), dtype=np.float32))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def is_integer_valued(self) -> bool:
        return bool(np.all(self.data == np.rint(self.data)))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Tensor) and np.array_equal(self.data, other.data)

    def __repr__(self) -> str:
        return f"Tensor(h={self.height}, w={self.width}, c={self.channels})"


class ConvLayer:
    """A convolution layer: kernel (kh, kw, in_c, out_c), bias, stride, activation."""

    def __init__(
        self,
        weights: np.ndarray,
        bias: np.ndarray,
        stride: int = 1,
        activation: str = ACT_NONE,
        slope: float = DEFAULT_LEAKY_SLOPE,
    ):
        weights = np.ascontiguousarray(weights, dtype=np.float32)
        bias = np.ascontiguousarray(bias, dtype=np.float32)
        if weights.ndim != 4:
            raise ConfigurationError(
                f"kernel must be rank 4 (kh, kw, in_c, out_c), got shape {weights.shape}"
            )
        if bias.shape != (weights.shape[3],):
            raise ConfigurationError(
                f"bias shape {bias.shape} does not match out_channels {weights.shape[3]}"
            )
        if stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {stride}")
        if activation not in (ACT_NONE, ACT_LEAKY_RELU):
            raise ConfigurationError(f"unknown activation {activation!r}")
        self.weights = weights
        self.bias = bias
        self.stride = int(stride)
        self.activation = activation
        self.slope = float(slope)
        self._wmat_cache: np.ndarray | None = None
        self._bias64_cache: np.ndarray | None = None

    @property
    def kernel_h(self) -> int:
        return self.weights.shape[0]

    @property
    def kernel_w(self) -> int:
        return self.weights.shape[1]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[3]

    def _wmat(self) -> np.ndarray:
        # (out_c, kh*kw*in_c) float64, rows contiguous for the canonical dot
        if self._wmat_cache is None:
            k = self.weights.astype(np.float64).reshape(-1, self.out_channels)
            self._wmat_cache = np.ascontiguousarray(k.T)
        return self._wmat_cache

    def _bias64(self) -> np.ndarray:
        if self._bias64_cache is None:
            self._bias64_cache = self.bias.astype(np.float64)
        return self._bias64_cache


def causal_mask(kernel: int) -> np.ndarray:
    """Binary (kernel, kernel) mask: 1 strictly before the center in raster order."""
    center = kernel // 2
    mask = np.zeros((kernel, kernel), dtype=np.float32)
    mask[:center, :] = 1.0
    mask[center, :center] = 1.0
    return mask


class MaskedConvLayer:
    """A stride-1 convolution whose kernel is zeroed at and after the center.

    Output at a position depends only on inputs strictly before it in raster
    order (row-major, left to right then top to bottom), which is what makes
    the layer usable during serial decoding.
    """

    def __init__(self, base: ConvLayer):
        k = base.kernel_h
        if base.kernel_h != base.kernel_w:
            raise ConfigurationError(
                f"masked kernel must be square, got {base.kernel_h}x{base.kernel_w}"
            )
        if k % 2 == 0 or k not in (3, 5, 7):
            raise ConfigurationError(f"masked kernel size must be odd in {{3,5,7}}, got {k}")
        if base.stride != 1:
            raise ConfigurationError(f"masked convolution requires stride 1, got {base.stride}")
        self.base = base
        self.mask = causal_mask(k)
        self._framed_cache: np.ndarray | None = None

    @property
    def kernel(self) -> int:
        return self.base.kernel_h

    @property
    def in_channels(self) -> int:
        return self.base.in_channels

    @property
    def out_channels(self) -> int:
        return self.base.out_channels

    def effective_weights(self) -> np.ndarray:
        """Kernel with the causal mask applied (float32, same shape as weights)."""
        return self.base.weights * self.mask[:, :, None, None]

    def framed_wmat(self) -> np.ndarray:
        """Masked kernel embedded centered in the MASK_FRAME window.

        Returns (out_c, MASK_FRAME*MASK_FRAME*in_c) float64 with zeros at
        masked and out-of-kernel taps.  Every masked convolution is evaluated
        through this fixed-size frame so different kernel sizes share a
        bit-identical accumulation order.
        """
        if self._framed_cache is None:
            k = self.kernel
            ci, co = self.in_channels, self.out_channels
            off = (MASK_FRAME - k) // 2
            framed = np.zeros((MASK_FRAME, MASK_FRAME, ci, co), dtype=np.float64)
            framed[off : off + k, off : off + k] = self.effective_weights().astype(np.float64)
            self._framed_cache = np.ascontiguousarray(
                framed.reshape(-1, co).T
            )
        return self._framed_cache


def _same_pad(in_size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Zero 'same' padding: returns (out_size, pad_before, pad_after)."""
    out = -(-in_size // stride)
    total = max((out - 1) * stride + kernel - in_size, 0)
    before = total // 2
    return out, before, total - before


def _padded_f64(data: np.ndarray, ph0: int, ph1: int, pw0: int, pw1: int) -> np.ndarray:
    h, w, c = data.shape
    out = np.zeros((h + ph0 + ph1, w + pw0 + pw1, c), dtype=np.float64)
    out[ph0 : ph0 + h, pw0 : pw0 + w] = data
    return out


def _im2col(padded: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """All (kh, kw, c) windows as contiguous rows, shape (out_h*out_w, kh*kw*c)."""
    view = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw, padded.shape[2]))
    view = view[::stride, ::stride, 0]
    view = view[:out_h, :out_w]
    return view.reshape(out_h * out_w, kh * kw * padded.shape[2])


def conv2d(input: Tensor, layer: ConvLayer) -> Tensor:
    """Strided 2-D convolution with zero 'same' padding.

    Output spatial dims are ceil(input / stride); the configured activation is
    applied after the bias.
    """
    if input.channels != layer.in_channels:
        raise ConfigurationError(
            f"input has {input.channels} channels, layer expects {layer.in_channels}"
        )
    kh, kw, s = layer.kernel_h, layer.kernel_w, layer.stride
    out_h, ph0, ph1 = _same_pad(input.height, kh, s)
    out_w, pw0, pw1 = _same_pad(input.width, kw, s)
    padded = _padded_f64(input.data, ph0, ph1, pw0, pw1)
    cols = _im2col(padded, kh, kw, s, out_h, out_w)
    acc = _rows_dot_batch(layer._wmat(), cols)
    acc += layer._bias64()
    acc = _apply_activation(acc, layer.activation, layer.slope)
    return Tensor(acc.reshape(out_h, out_w, layer.out_channels).astype(np.float32))


def transposed_conv2d(input: Tensor, layer: ConvLayer) -> Tensor:
    """Adjoint of conv2d with the same kernel, stride and padding convention.

    Output spatial dims are input dims x stride.  The kernel (kh, kw, in_c,
    out_c) maps input channels to output channels; the spatial scatter mirrors
    conv2d's gather exactly, so <conv2d(u), v> == <u, transposed_conv2d(v)>
    for the transposed kernel.
    """
    if input.channels != layer.in_channels:
        raise ConfigurationError(
            f"input has {input.channels} channels, layer expects {layer.in_channels}"
        )
    kh, kw, s = layer.kernel_h, layer.kernel_w, layer.stride
    h_in, w_in = input.height, input.width
    h_out, w_out = h_in * s, w_in * s
    _, ph0, _ = _same_pad(h_out, kh, s)
    _, pw0, _ = _same_pad(w_out, kw, s)

    # Per input position, the (kh, kw, out_c) contribution block, then a
    # fixed-order scatter-add.  tap_w rows are (kh*kw*out_c, in_c).
    ci, co = layer.in_channels, layer.out_channels
    tap_w = np.ascontiguousarray(
        layer.weights.astype(np.float64).reshape(kh * kw, ci, co).transpose(0, 2, 1).reshape(-1, ci)
    )
    acc = np.zeros((h_out, w_out, co), dtype=np.float64)
    data64 = input.data.astype(np.float64)
    for r in range(h_in):
        r0 = r * s - ph0
        rlo, rhi = max(r0, 0), min(r0 + kh, h_out)
        if rlo >= rhi:
            continue
        for c in range(w_in):
            c0 = c * s - pw0
            clo, chi = max(c0, 0), min(c0 + kw, w_out)
            if clo >= chi:
                continue
            block = _rows_dot(tap_w, np.ascontiguousarray(data64[r, c])).reshape(kh, kw, co)
            acc[rlo:rhi, clo:chi] += block[rlo - r0 : rhi - r0, clo - c0 : chi - c0]
    acc += layer._bias64()
    acc = _apply_activation(acc, layer.activation, layer.slope)
    return Tensor(acc.astype(np.float32))


def masked_conv2d(input: Tensor, layer: MaskedConvLayer) -> Tensor:
    """Causal convolution: output at (r, c) sees only raster positions < (r, c)."""
    if input.channels != layer.in_channels:
        raise ConfigurationError(
            f"input has {input.channels} channels, layer expects {layer.in_channels}"
        )
    pad = MASK_FRAME // 2
    padded = _padded_f64(input.data, pad, pad, pad, pad)
    cols = _im2col(padded, MASK_FRAME, MASK_FRAME, 1, input.height, input.width)
    acc = _rows_dot_batch(layer.framed_wmat(), cols)
    acc += layer.base._bias64()
    acc = _apply_activation(acc, layer.base.activation, layer.base.slope)
    return Tensor(acc.reshape(input.height, input.width, layer.out_channels).astype(np.float32))
