"""Multi-scale autoregressive context model.

Three parallel masked convolutions (3x3, 5x5, 7x7) over already-decoded
latents, evaluated either over the full tensor (context_full) or for a single
position through a cropped 7x7xc window (context_at).  The two paths are
bit-identical per position; the cropped path is what keeps serial decoding
O(7*7*c) per symbol instead of O(h*w*c).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .tensors import (
    MASK_FRAME,
    MaskedConvLayer,
    Tensor,
    _im2col,
    _padded_f64,
    _rows_dot,
    _rows_dot_batch,
)

KERNEL_SIZES = (3, 5, 7)


class ContextModel:
    """The three masked branches plus their concatenated evaluation tables."""

    def __init__(self, layer3: MaskedConvLayer, layer5: MaskedConvLayer, layer7: MaskedConvLayer):
        layers = (layer3, layer5, layer7)
        for layer, k in zip(layers, KERNEL_SIZES):
            if layer.kernel != k:
                raise ConfigurationError(f"expected a {k}x{k} branch, got {layer.kernel}x{layer.kernel}")
        cin = {l.in_channels for l in layers}
        if len(cin) != 1:
            raise ConfigurationError(f"branches disagree on input channels: {sorted(cin)}")
        cout = {l.out_channels for l in layers}
        if len(cout) != 1:
            raise ConfigurationError(f"branches disagree on output channels: {sorted(cout)}")
        self.layer3, self.layer5, self.layer7 = layers
        self.in_channels = cin.pop()
        self.out_channels_each = cout.pop()
        # Stacked (3*out_each, frame*frame*in_c) kernel table and bias; row
        # order is all 3x3 outputs, then 5x5, then 7x7.
        self._wmat = np.ascontiguousarray(
            np.concatenate([l.framed_wmat() for l in layers], axis=0)
        )
        self._bias = np.concatenate([l.base._bias64() for l in layers])

    @property
    def feature_channels(self) -> int:
        return 3 * self.out_channels_each


def context_full(latents: Tensor, model: ContextModel) -> Tensor:
    """Context features for every position: (h, w, 3*out_each) float32."""
    if latents.channels != model.in_channels:
        raise ConfigurationError(
            f"latents have {latents.channels} channels, model expects {model.in_channels}"
        )
    pad = MASK_FRAME // 2
    padded = _padded_f64(latents.data, pad, pad, pad, pad)
    cols = _im2col(padded, MASK_FRAME, MASK_FRAME, 1, latents.height, latents.width)
    feats = _rows_dot_batch(model._wmat, cols) + model._bias
    return Tensor(feats.reshape(latents.height, latents.width, model.feature_channels).astype(np.float32))


def context_at(latents: Tensor | np.ndarray, pos: tuple[int, int], model: ContextModel) -> np.ndarray:
    """Context features at one position from its cropped causal window.

    Extracts the 7x7xc window centered on pos (zero-filled at borders),
    keeping only content strictly before pos in raster order, and evaluates
    all three masked kernels at the window center.  Bit-identical to the pos
    row of context_full(latents).

    Accepts a Tensor or a raw (h, w, c) float32 array so the decoder can pass
    its partially filled buffer.  Returns a (3*out_each,) float32 vector.
    """
    data = latents.data if isinstance(latents, Tensor) else latents
    h, w, c = data.shape
    if c != model.in_channels:
        raise ConfigurationError(f"latents have {c} channels, model expects {model.in_channels}")
    r, col = pos
    if not (0 <= r < h and 0 <= col < w):
        raise ValueError(f"position {pos} out of bounds for {h}x{w} latents")

    half = MASK_FRAME // 2
    win = np.zeros((MASK_FRAME, MASK_FRAME, c), dtype=np.float64)
    # Rows strictly above the center row.
    rlo = max(r - half, 0)
    clo = max(col - half, 0)
    chi = min(col + half + 1, w)
    if rlo < r:
        win[rlo - r + half : half, clo - col + half : chi - col + half] = data[rlo:r, clo:chi]
    # The center row, strictly left of the center column.
    if clo < col:
        win[half, clo - col + half : half] = data[r, clo:col]
    feats = _rows_dot(model._wmat, win.reshape(-1)) + model._bias
    return feats.astype(np.float32)
