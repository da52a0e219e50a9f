"""Probability modeling for the coded tensors.

The per-symbol model for the main latents is a Gaussian smoothed by a unit
uniform: the probability of integer s under (mu, sigma) is the normal mass on
[s - 1/2, s + 1/2].  Side-channel symbols use static per-channel tables.  Both
are bridged to the range coder through 16-bit quantized CDFs in which every
alphabet symbol keeps a non-zero width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import CodingError, ConfigurationError
from .tensors import ACT_NONE, ConvLayer, Tensor, _apply_activation, _rows_dot, _rows_dot_batch

SIGMA_MIN = 0.04
SIGMA_MAX = 256.0
CDF_PRECISION = 16
CDF_TOTAL = 1 << CDF_PRECISION

_INV_SQRT2 = np.sqrt(0.5)


def _phi_centered(x):
    """Standard normal CDF minus 1/2, computed as an exactly odd function.

    Built on erf, which is odd to the last bit, so interval masses inherit the
    density's symmetry exactly: mass(k; 0, s) == mass(-k; 0, s) bitwise.
    """
    return 0.5 * erf(np.asarray(x) * _INV_SQRT2)


@dataclass
class GaussianParams:
    """Per-position Gaussian parameters matching a latent tensor's shape."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise ValueError(f"mu shape {self.mu.shape} != sigma shape {self.sigma.shape}")
        if not np.all(self.sigma.data >= np.float32(SIGMA_MIN)):
            raise ValueError("sigma below the clamping floor")
        if not np.all(self.sigma.data <= np.float32(SIGMA_MAX)):
            raise ValueError("sigma above the clamping ceiling")


class EntropyParametersNet:
    """A stack of 1x1 convolutions mapping context + hyper features to (mu, raw sigma)."""

    def __init__(self, layers: list[ConvLayer]):
        if not layers:
            raise ConfigurationError("entropy parameters net needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.kernel_h != 1 or layer.kernel_w != 1:
                raise ConfigurationError(f"layer {i} must be 1x1, got {layer.kernel_h}x{layer.kernel_w}")
            if layer.stride != 1:
                raise ConfigurationError(f"layer {i} must have stride 1, got {layer.stride}")
            if i > 0 and layer.in_channels != layers[i - 1].out_channels:
                raise ConfigurationError(
                    f"layer {i} expects {layer.in_channels} channels, previous produces "
                    f"{layers[i - 1].out_channels}"
                )
        if layers[-1].out_channels % 2 != 0:
            raise ConfigurationError("final layer must output an even channel count (mu, raw sigma)")
        if layers[-1].activation != ACT_NONE:
            raise ConfigurationError("final layer must not apply an activation")
        self.layers = list(layers)

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def latent_channels(self) -> int:
        return self.layers[-1].out_channels // 2


def _softplus_clamp(raw: np.ndarray) -> np.ndarray:
    sig = np.logaddexp(0.0, raw.astype(np.float64))
    return np.clip(sig, SIGMA_MIN, SIGMA_MAX)


def _net_rows(rows: np.ndarray, net: EntropyParametersNet) -> np.ndarray:
    """Evaluate the 1x1 stack on (P, C) rows; float32 storage between layers."""
    x = rows
    for layer in net.layers:
        acc = _rows_dot_batch(layer._wmat(), x.astype(np.float64)) + layer._bias64()
        acc = _apply_activation(acc, layer.activation, layer.slope)
        x = acc.astype(np.float32)
    return x


def predict_params(ctx, hyper, net: EntropyParametersNet):
    """Predict (mu, sigma) from context and hyper features.

    Full-tensor form: ctx and hyper are (h, w, C) tensors; returns
    GaussianParams.  Single-position form: both are 1-D vectors; returns a
    (mu, sigma) pair of float32 vectors.  The two forms are bit-identical per
    position.
    """
    ctx_arr = ctx.data if isinstance(ctx, Tensor) else np.asarray(ctx, dtype=np.float32)
    hyp_arr = hyper.data if isinstance(hyper, Tensor) else np.asarray(hyper, dtype=np.float32)
    if ctx_arr.ndim != hyp_arr.ndim:
        raise ConfigurationError("context and hyper features must both be full-tensor or both single-position")
    single = ctx_arr.ndim == 1
    if not single and ctx_arr.shape[:2] != hyp_arr.shape[:2]:
        raise ConfigurationError(
            f"context dims {ctx_arr.shape[:2]} != hyper dims {hyp_arr.shape[:2]}"
        )
    c_in = ctx_arr.shape[-1] + hyp_arr.shape[-1]
    if c_in != net.in_channels:
        raise ConfigurationError(f"net expects {net.in_channels} input channels, got {c_in}")

    if single:
        rows = np.concatenate([ctx_arr, hyp_arr])[None, :]
    else:
        h, w = ctx_arr.shape[:2]
        rows = np.concatenate([ctx_arr, hyp_arr], axis=2).reshape(h * w, c_in)
    out = _net_rows(np.ascontiguousarray(rows), net)
    c = net.latent_channels
    mu = out[:, :c]
    sigma = _softplus_clamp(out[:, c:]).astype(np.float32)
    if single:
        return mu[0].copy(), sigma[0].copy()
    return GaussianParams(
        Tensor(mu.reshape(h, w, c)), Tensor(sigma.reshape(h, w, c))
    )


def gaussian_pmf(symbol: int, mu: float, sigma: float) -> float:
    """Probability of integer symbol: normal (mu, sigma^2) mass on [s-1/2, s+1/2]."""
    hi = _phi_centered((symbol + 0.5 - mu) / sigma)
    lo = _phi_centered((symbol - 0.5 - mu) / sigma)
    return float(hi - lo)


class QuantizedCdf:
    """Integer cumulative frequencies over [q_min, q_max], totalling 2**16.

    cum has alphabet_size + 1 entries, starts at 0, ends at CDF_TOTAL, and is
    strictly increasing (every symbol keeps a width of at least 1).
    """

    __slots__ = ("q_min", "q_max", "cum")

    def __init__(self, cum: np.ndarray, q_min: int):
        cum = np.asarray(cum, dtype=np.int64)
        if cum.ndim != 1 or cum.size < 2:
            raise ValueError(f"cumulative array must be 1-D with >= 2 entries, got shape {cum.shape}")
        if cum[0] != 0 or cum[-1] != CDF_TOTAL:
            raise ValueError("cumulative array must span [0, 2**16]")
        if np.any(np.diff(cum) < 1):
            raise ValueError("every symbol must have width >= 1")
        self.cum = cum
        self.q_min = int(q_min)
        self.q_max = int(q_min) + cum.size - 2

    @property
    def alphabet_size(self) -> int:
        return self.cum.size - 1

    def contains(self, symbol: int) -> bool:
        return self.q_min <= symbol <= self.q_max

    def width(self, symbol: int) -> int:
        i = symbol - self.q_min
        return int(self.cum[i + 1] - self.cum[i])


class CdfBatch:
    """Quantized CDF rows for several (mu, sigma) pairs over one shared alphabet."""

    __slots__ = ("rows", "q_min", "q_max")

    def __init__(self, rows: np.ndarray, q_min: int, q_max: int):
        self.rows = rows
        self.q_min = int(q_min)
        self.q_max = int(q_max)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def cdf(self, i: int) -> QuantizedCdf:
        return QuantizedCdf(self.rows[i], self.q_min)


def build_cdf_batch(mu: np.ndarray, sigma: np.ndarray, alphabet: tuple[int, int]) -> CdfBatch:
    """Quantized CDFs for each (mu[i], sigma[i]) over the shared integer alphabet.

    Tail mass outside [q_min, q_max] is folded into the edge symbols; masses
    are rounded to a 16-bit total and repaired by stealing from the largest
    mass until every width is >= 1.  Pure integer output: identical inputs
    give identical tables.
    """
    q_min, q_max = int(alphabet[0]), int(alphabet[1])
    if q_min > q_max:
        raise ValueError(f"empty alphabet [{q_min}, {q_max}]")
    m = q_max - q_min + 1
    if m > CDF_TOTAL:
        raise ValueError(f"alphabet of {m} symbols exceeds the 16-bit frequency budget")
    mu64 = np.asarray(mu, dtype=np.float64).reshape(-1)
    sig64 = np.asarray(sigma, dtype=np.float64).reshape(-1)
    bounds = np.arange(q_min, q_max + 2, dtype=np.float64) - 0.5
    edges = _phi_centered((bounds[None, :] - mu64[:, None]) / sig64[:, None])
    pmf = np.diff(edges, axis=1)
    pmf[:, 0] += 0.5 + edges[:, 0]
    pmf[:, -1] += 0.5 - edges[:, -1]

    freq = np.floor(pmf * CDF_TOTAL + 0.5).astype(np.int64)
    np.maximum(freq, 1, out=freq)
    deficit = CDF_TOTAL - freq.sum(axis=1)
    for i in np.nonzero(deficit)[0]:
        d = int(deficit[i])
        row = freq[i]
        if d > 0:
            row[int(np.argmax(row))] += d
        else:
            while d < 0:
                j = int(np.argmax(row))
                take = min(int(row[j]) - 1, -d)
                row[j] -= take
                d += take
    cum = np.zeros((freq.shape[0], m + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cum[:, 1:])
    return CdfBatch(cum, q_min, q_max)


def build_cdf(mu: float, sigma: float, alphabet: tuple[int, int]) -> QuantizedCdf:
    """Quantized CDF for one (mu, sigma); see build_cdf_batch."""
    batch = build_cdf_batch(np.array([mu]), np.array([sigma]), alphabet)
    return batch.cdf(0)


class FactorizedPmf:
    """Static per-channel symbol tables for the side-channel tensor.

    Stored as 16-bit integer frequencies per channel over a shared alphabet
    [z_min, z_max]; each row sums to exactly 2**16 with every entry >= 1, so
    the real-valued masses are strictly positive and sum to 1 exactly.
    """

    def __init__(self, z_min: int, z_max: int, freq: np.ndarray):
        freq = np.ascontiguousarray(freq, dtype=np.int64)
        if freq.ndim != 2:
            raise ConfigurationError(f"frequency table must be 2-D (channels, symbols), got {freq.shape}")
        if freq.shape[1] != z_max - z_min + 1:
            raise ConfigurationError(
                f"table has {freq.shape[1]} symbols but alphabet [{z_min}, {z_max}] "
                f"has {z_max - z_min + 1}"
            )
        if np.any(freq < 1):
            raise ConfigurationError("every table entry must be >= 1")
        if np.any(freq.sum(axis=1) != CDF_TOTAL):
            raise ConfigurationError("every channel's frequencies must sum to 2**16")
        self.z_min = int(z_min)
        self.z_max = int(z_max)
        self.freq = freq
        self._cum: np.ndarray | None = None

    @property
    def channels(self) -> int:
        return self.freq.shape[0]

    def masses(self) -> np.ndarray:
        """Per-channel probability masses (channels, symbols), rows summing to 1."""
        return self.freq / float(CDF_TOTAL)

    def cum_rows(self) -> np.ndarray:
        if self._cum is None:
            cum = np.zeros((self.channels, self.freq.shape[1] + 1), dtype=np.int64)
            np.cumsum(self.freq, axis=1, out=cum[:, 1:])
            self._cum = cum
        return self._cum

    def cdf(self, channel: int) -> QuantizedCdf:
        return QuantizedCdf(self.cum_rows()[channel], self.z_min)


def rate_estimate(latents: Tensor, params: GaussianParams) -> float:
    """Ideal bit count of the latents under the real-valued Gaussian model.

    Sum over symbols of -log2 p(symbol | mu, sigma).  Returns inf when some
    symbol's float64 mass underflows to zero; the quantized tables used for
    actual coding never do.
    """
    if latents.shape != params.mu.shape:
        raise ValueError(f"latents shape {latents.shape} != params shape {params.mu.shape}")
    y = latents.data.astype(np.float64)
    mu = params.mu.data.astype(np.float64)
    sigma = params.sigma.data.astype(np.float64)
    p = _phi_centered((y + 0.5 - mu) / sigma) - _phi_centered((y - 0.5 - mu) / sigma)
    with np.errstate(divide="ignore"):
        bits = -np.log2(p)
    return float(bits.sum())


def rate_estimate_factorized(z: Tensor, pmf: FactorizedPmf) -> float:
    """Ideal bit count of the side-channel tensor under its static tables."""
    if z.channels != pmf.channels:
        raise ValueError(f"tensor has {z.channels} channels, table has {pmf.channels}")
    idx = np.rint(z.data).astype(np.int64) - pmf.z_min
    if idx.min() < 0 or idx.max() > pmf.z_max - pmf.z_min:
        raise CodingError(
            f"symbol outside alphabet [{pmf.z_min}, {pmf.z_max}]; clamp before estimating"
        )
    ch = np.broadcast_to(np.arange(pmf.channels), z.shape)
    f = pmf.freq[ch, idx].astype(np.float64)
    return float((CDF_PRECISION - np.log2(f)).sum())
