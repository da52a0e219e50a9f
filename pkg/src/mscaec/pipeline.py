"""Full encode/decode orchestration and all on-disk formats.

A coded image is a container holding two substreams: the side-channel tensor
coded with static per-channel tables, and the main latents coded serially in
raster order, each symbol conditioned on a Gaussian whose (mu, sigma) come
from the cropped context model plus the hyper-decoder output at that
position.  All multi-byte integers on disk are little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .context import ContextModel, context_at, context_full
from .errors import CodingError, ConfigurationError, ParseError
from .gaussian import (
    CDF_TOTAL,
    CdfBatch,
    EntropyParametersNet,
    FactorizedPmf,
    build_cdf_batch,
    predict_params,
    rate_estimate,
    rate_estimate_factorized,
)
from .rangecoder import (
    ChannelFlags,
    RangeDecoder,
    RangeEncoder,
    compute_flags,
    selective_decode,
    selective_encode,
)
from .tensors import (
    ACT_LEAKY_RELU,
    ACT_NONE,
    ConvLayer,
    MaskedConvLayer,
    Tensor,
    conv2d,
    transposed_conv2d,
)

TENSOR_MAGIC = b"MSCTNSR1"
WEIGHTS_MAGIC = b"MSCWGT01"
CONTAINER_MAGIC = b"MSCAEC01"
FORMAT_VERSION = 1

_DTYPE_F32 = 0
_DTYPE_I32 = 1
_DTYPE_TO_NP = {_DTYPE_F32: np.dtype("<f4"), _DTYPE_I32: np.dtype("<i4")}

HYPER_CONV = "conv"
HYPER_TCONV = "tconv"


# ---------------------------------------------------------------------------
# Array records (tensor files and weight blobs share one encoding)
# ---------------------------------------------------------------------------

def _write_array(arr: np.ndarray) -> bytes:
    if arr.dtype == np.float32:
        tag, dt = _DTYPE_F32, _DTYPE_TO_NP[_DTYPE_F32]
    elif arr.dtype in (np.int32, np.int64):
        tag, dt = _DTYPE_I32, _DTYPE_TO_NP[_DTYPE_I32]
    else:
        raise ValueError(f"unsupported array dtype {arr.dtype}")
    out = bytearray()
    out += TENSOR_MAGIC
    out += struct.pack("<HBB", FORMAT_VERSION, tag, arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    out += np.ascontiguousarray(arr, dtype=dt).tobytes()
    return bytes(out)


def _read_array(buf: bytes) -> np.ndarray:
    if len(buf) < 12:
        raise ParseError(f"array record truncated: {len(buf)} bytes, header needs 12")
    if buf[:8] != TENSOR_MAGIC:
        raise ParseError(f"bad array magic {buf[:8]!r}, expected {TENSOR_MAGIC!r}")
    version, tag, ndim = struct.unpack_from("<HBB", buf, 8)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported array format version {version}")
    if tag not in _DTYPE_TO_NP:
        raise ParseError(f"unknown dtype tag {tag}")
    off = 12
    if len(buf) < off + 4 * ndim:
        raise ParseError("array record truncated in the dims block")
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    need = off + 4 * count
    if len(buf) != need:
        raise ParseError(f"array record is {len(buf)} bytes, dims {dims} require {need}")
    arr = np.frombuffer(buf, dtype=_DTYPE_TO_NP[tag], count=count, offset=off)
    return arr.reshape(dims).copy()


def save_tensor(tensor: Tensor, path: str) -> None:
    """Write a tensor file (float32, rank 3, little-endian)."""
    with open(path, "wb") as f:
        f.write(_write_array(tensor.data))


def load_tensor(path: str) -> Tensor:
    """Read a tensor file; integer-typed files are converted to float32 storage."""
    with open(path, "rb") as f:
        arr = _read_array(f.read())
    if arr.ndim != 3:
        raise ParseError(f"tensor file must be rank 3, got rank {arr.ndim}")
    return Tensor(arr.astype(np.float32))


# ---------------------------------------------------------------------------
# Model weights
# ---------------------------------------------------------------------------

@dataclass
class ModelWeights:
    """Everything learned: context branches, entropy net, hyper chain, z tables."""

    context: ContextModel
    entropy_net: EntropyParametersNet
    hyper_decoder: list[tuple[str, ConvLayer]]
    z_pmf: FactorizedPmf
    c_y: int
    c_z: int
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.validate()

    @property
    def psi_channels(self) -> int:
        if self.hyper_decoder:
            return self.hyper_decoder[-1][1].out_channels
        return self.c_z

    @property
    def hyper_upsample(self) -> int:
        """Spatial ratio between main and side latents for stride-1-conv chains."""
        factor = 1
        for kind, layer in self.hyper_decoder:
            if kind == HYPER_TCONV:
                factor *= layer.stride
            elif layer.stride != 1:
                raise ValueError("upsample factor undefined for strided convs in the hyper chain")
        return factor

    def validate(self) -> None:
        if self.context.in_channels != self.c_y:
            raise ConfigurationError(
                f"context expects {self.context.in_channels} channels, c_y is {self.c_y}"
            )
        if self.z_pmf.channels != self.c_z:
            raise ConfigurationError(
                f"z table has {self.z_pmf.channels} channels, c_z is {self.c_z}"
            )
        ch = self.c_z
        for i, (kind, layer) in enumerate(self.hyper_decoder):
            if kind not in (HYPER_CONV, HYPER_TCONV):
                raise ConfigurationError(f"hyper layer {i} has unknown kind {kind!r}")
            if layer.in_channels != ch:
                raise ConfigurationError(
                    f"hyper layer {i} expects {layer.in_channels} channels, chain carries {ch}"
                )
            ch = layer.out_channels
        expected_in = self.context.feature_channels + self.psi_channels
        if self.entropy_net.in_channels != expected_in:
            raise ConfigurationError(
                f"entropy net expects {self.entropy_net.in_channels} input channels, "
                f"context + hyper provide {expected_in}"
            )
        if self.entropy_net.latent_channels != self.c_y:
            raise ConfigurationError(
                f"entropy net predicts {self.entropy_net.latent_channels} channels, c_y is {self.c_y}"
            )


def _manifest_text(weights: ModelWeights) -> str:
    lines = [
        f"format_version={weights.format_version}",
        f"c_y={weights.c_y}",
        f"c_z={weights.c_z}",
        f"context.out_each={weights.context.out_channels_each}",
        f"entropy.layers={len(weights.entropy_net.layers)}",
    ]
    for i, layer in enumerate(weights.entropy_net.layers):
        lines.append(f"entropy.{i}.activation={layer.activation}")
        lines.append(f"entropy.{i}.slope={layer.slope!r}")
    lines.append(f"hyper.layers={len(weights.hyper_decoder)}")
    for i, (kind, layer) in enumerate(weights.hyper_decoder):
        lines.append(f"hyper.{i}.kind={kind}")
        lines.append(f"hyper.{i}.stride={layer.stride}")
        lines.append(f"hyper.{i}.activation={layer.activation}")
        lines.append(f"hyper.{i}.slope={layer.slope!r}")
    lines.append(f"z_pmf.min={weights.z_pmf.z_min}")
    lines.append(f"z_pmf.max={weights.z_pmf.z_max}")
    return "\n".join(lines) + "\n"


def _parse_manifest(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise ParseError(f"manifest line {n} is not key=value: {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def _manifest_int(entries: dict[str, str], key: str) -> int:
    if key not in entries:
        raise ParseError(f"manifest is missing {key}")
    try:
        return int(entries[key])
    except ValueError:
        raise ParseError(f"manifest field {key} is not an integer: {entries[key]!r}") from None


def save_weights(weights: ModelWeights, path: str) -> None:
    """Write a weights file: manifest plus named array blobs with an index."""
    blobs: list[tuple[str, np.ndarray]] = []
    for k, layer in ((3, weights.context.layer3), (5, weights.context.layer5), (7, weights.context.layer7)):
        blobs.append((f"context.k{k}.weight", layer.base.weights))
        blobs.append((f"context.k{k}.bias", layer.base.bias))
    for i, layer in enumerate(weights.entropy_net.layers):
        blobs.append((f"entropy.{i}.weight", layer.weights))
        blobs.append((f"entropy.{i}.bias", layer.bias))
    for i, (_, layer) in enumerate(weights.hyper_decoder):
        blobs.append((f"hyper.{i}.weight", layer.weights))
        blobs.append((f"hyper.{i}.bias", layer.bias))
    blobs.append(("z_pmf.freq", weights.z_pmf.freq.astype(np.int32)))

    manifest = _manifest_text(weights).encode("utf-8")
    out = bytearray()
    out += WEIGHTS_MAGIC
    out += struct.pack("<H", weights.format_version)
    out += struct.pack("<I", len(manifest))
    out += manifest
    out += struct.pack("<I", len(blobs))
    for name, arr in blobs:
        encoded = _write_array(arr)
        name_b = name.encode("utf-8")
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<Q", len(encoded))
        out += encoded
    with open(path, "wb") as f:
        f.write(bytes(out))


def _blob(blobs: dict[str, np.ndarray], name: str) -> np.ndarray:
    if name not in blobs:
        raise ParseError(f"weights file is missing blob {name!r}")
    return blobs[name]


def load_weights(path: str) -> ModelWeights:
    """Read a weights file written by save_weights."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 14:
        raise ParseError(f"weights file truncated: {len(buf)} bytes")
    if buf[:8] != WEIGHTS_MAGIC:
        raise ParseError(f"bad weights magic {buf[:8]!r}, expected {WEIGHTS_MAGIC!r}")
    (version,) = struct.unpack_from("<H", buf, 8)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported weights format version {version}")
    (manifest_len,) = struct.unpack_from("<I", buf, 10)
    off = 14
    if len(buf) < off + manifest_len + 4:
        raise ParseError("weights file truncated in the manifest")
    entries = _parse_manifest(buf[off : off + manifest_len].decode("utf-8"))
    off += manifest_len
    (blob_count,) = struct.unpack_from("<I", buf, off)
    off += 4
    blobs: dict[str, np.ndarray] = {}
    for _ in range(blob_count):
        if len(buf) < off + 2:
            raise ParseError("weights file truncated in the blob index")
        (name_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + name_len].decode("utf-8")
        off += name_len
        if len(buf) < off + 8:
            raise ParseError(f"weights file truncated before blob {name!r}")
        (data_len,) = struct.unpack_from("<Q", buf, off)
        off += 8
        if len(buf) < off + data_len:
            raise ParseError(f"weights file truncated inside blob {name!r}")
        blobs[name] = _read_array(buf[off : off + data_len])
        off += data_len
    if off != len(buf):
        raise ParseError(f"weights file has {len(buf) - off} trailing bytes")

    c_y = _manifest_int(entries, "c_y")
    c_z = _manifest_int(entries, "c_z")

    def masked(k: int) -> MaskedConvLayer:
        w = _blob(blobs, f"context.k{k}.weight").astype(np.float32)
        b = _blob(blobs, f"context.k{k}.bias").astype(np.float32)
        return MaskedConvLayer(ConvLayer(w, b, stride=1, activation=ACT_NONE))

    try:
        context = ContextModel(masked(3), masked(5), masked(7))

        ent_layers = []
        for i in range(_manifest_int(entries, "entropy.layers")):
            act = entries.get(f"entropy.{i}.activation", ACT_NONE)
            slope = float(entries.get(f"entropy.{i}.slope", "0.01"))
            ent_layers.append(
                ConvLayer(
                    _blob(blobs, f"entropy.{i}.weight").astype(np.float32),
                    _blob(blobs, f"entropy.{i}.bias").astype(np.float32),
                    stride=1,
                    activation=act,
                    slope=slope,
                )
            )
        entropy_net = EntropyParametersNet(ent_layers)

        hyper: list[tuple[str, ConvLayer]] = []
        for i in range(_manifest_int(entries, "hyper.layers")):
            kind = entries.get(f"hyper.{i}.kind", HYPER_CONV)
            if kind not in (HYPER_CONV, HYPER_TCONV):
                raise ParseError(f"hyper.{i}.kind has unknown value {kind!r}")
            act = entries.get(f"hyper.{i}.activation", ACT_NONE)
            slope = float(entries.get(f"hyper.{i}.slope", "0.01"))
            stride = _manifest_int(entries, f"hyper.{i}.stride")
            hyper.append(
                (
                    kind,
                    ConvLayer(
                        _blob(blobs, f"hyper.{i}.weight").astype(np.float32),
                        _blob(blobs, f"hyper.{i}.bias").astype(np.float32),
                        stride=stride,
                        activation=act,
                        slope=slope,
                    ),
                )
            )

        z_pmf = FactorizedPmf(
            _manifest_int(entries, "z_pmf.min"),
            _manifest_int(entries, "z_pmf.max"),
            _blob(blobs, "z_pmf.freq"),
        )
        return ModelWeights(context, entropy_net, hyper, z_pmf, c_y, c_z)
    except ConfigurationError as exc:
        raise ParseError(f"weights file is internally inconsistent: {exc}") from exc


# ---------------------------------------------------------------------------
# Container
# ---------------------------------------------------------------------------

_HEADER_STRUCT = struct.Struct("<6I2i")
HEADER_BYTES = len(CONTAINER_MAGIC) + _HEADER_STRUCT.size + 8  # + two u32 lengths


@dataclass
class BitstreamContainer:
    """On-disk unit: dims, alphabet, channel flags, and the two substreams."""

    h_y: int
    w_y: int
    c_y: int
    h_z: int
    w_z: int
    c_z: int
    q_min: int
    q_max: int
    flags: ChannelFlags
    z_stream: bytes
    y_stream: bytes

    def to_bytes(self) -> bytes:
        out = bytearray()
        out += CONTAINER_MAGIC
        out += _HEADER_STRUCT.pack(
            self.h_y, self.w_y, self.c_y, self.h_z, self.w_z, self.c_z, self.q_min, self.q_max
        )
        out += self.flags.to_bytes()
        out += struct.pack("<I", len(self.z_stream))
        out += self.z_stream
        out += struct.pack("<I", len(self.y_stream))
        out += self.y_stream
        return bytes(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "BitstreamContainer":
        if len(buf) < 8 + _HEADER_STRUCT.size:
            raise ParseError(f"container truncated: {len(buf)} bytes")
        if buf[:8] != CONTAINER_MAGIC:
            raise ParseError(f"bad container magic {buf[:8]!r}, expected {CONTAINER_MAGIC!r}")
        h_y, w_y, c_y, h_z, w_z, c_z, q_min, q_max = _HEADER_STRUCT.unpack_from(buf, 8)
        if min(h_y, w_y, c_y, h_z, w_z, c_z) <= 0:
            raise ParseError("container declares non-positive dims")
        if q_min > q_max:
            raise ParseError(f"container declares empty alphabet [{q_min}, {q_max}]")
        off = 8 + _HEADER_STRUCT.size
        flag_len = -(-c_y // 8)
        if len(buf) < off + flag_len + 4:
            raise ParseError("container truncated in the flags block")
        try:
            flags = ChannelFlags.from_bytes(buf[off : off + flag_len], c_y)
        except CodingError as exc:
            raise ParseError(str(exc)) from exc
        off += flag_len
        (z_len,) = struct.unpack_from("<I", buf, off)
        off += 4
        if len(buf) < off + z_len + 4:
            raise ParseError(f"container z substream declares {z_len} bytes, buffer is short")
        z_stream = buf[off : off + z_len]
        off += z_len
        (y_len,) = struct.unpack_from("<I", buf, off)
        off += 4
        if len(buf) < off + y_len:
            raise ParseError(f"container y substream declares {y_len} bytes, buffer is short")
        y_stream = buf[off : off + y_len]
        off += y_len
        if off != len(buf):
            raise ParseError(f"container has {len(buf) - off} trailing bytes")
        return cls(h_y, w_y, c_y, h_z, w_z, c_z, q_min, q_max, flags, z_stream, y_stream)

    def write(self, path: str) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def read(cls, path: str) -> "BitstreamContainer":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())

    @property
    def total_bytes(self) -> int:
        return HEADER_BYTES + self.flags.byte_length + len(self.z_stream) + len(self.y_stream)


# ---------------------------------------------------------------------------
# Hyper decoder and the coding loops
# ---------------------------------------------------------------------------

def hyper_forward(z: Tensor, weights: ModelWeights, target_hw: tuple[int, int] | None = None) -> Tensor:
    """Run the hyper-decoder chain on the side-channel tensor.

    With target_hw, the output is cropped top-left to the latent dims; the
    chain must reach at least that size.
    """
    if z.channels != weights.c_z:
        raise ConfigurationError(f"z has {z.channels} channels, weights declare {weights.c_z}")
    psi = z
    for kind, layer in weights.hyper_decoder:
        psi = conv2d(psi, layer) if kind == HYPER_CONV else transposed_conv2d(psi, layer)
    if target_hw is not None:
        th, tw = target_hw
        if psi.height < th or psi.width < tw:
            raise ConfigurationError(
                f"hyper chain produced {psi.height}x{psi.width}, latents need {th}x{tw}"
            )
        if (psi.height, psi.width) != (th, tw):
            psi = Tensor(psi.data[:th, :tw])
    return psi


def _check_latents(name: str, t: Tensor) -> None:
    if not t.is_integer_valued():
        raise ValueError(f"{name} must be integer-valued")


def _make_provider(weights: ModelWeights, psi: Tensor, sel: np.ndarray, alphabet: tuple[int, int]):
    """Per-position CDF provider over the selected channels (causal by construction)."""
    psi_data = psi.data
    net = weights.entropy_net
    ctx_model = weights.context

    def provider(data: np.ndarray, r: int, c: int) -> CdfBatch:
        ctx_vec = context_at(data, (r, c), ctx_model)
        mu, sigma = predict_params(ctx_vec, psi_data[r, c], net)
        return build_cdf_batch(mu[sel], sigma[sel], alphabet)

    return provider


def _make_reference_provider(weights: ModelWeights, psi: Tensor, sel: np.ndarray, alphabet: tuple[int, int]):
    """Provider that re-runs the full context model per position (regression path).

    Bit-identical to _make_provider, but costs O(h*w*c) per symbol instead of
    O(7*7*c); kept to demonstrate that receptive-field cropping loses nothing.
    """
    psi_data = psi.data
    net = weights.entropy_net
    ctx_model = weights.context

    def provider(data: np.ndarray, r: int, c: int) -> CdfBatch:
        feats = context_full(Tensor(data), ctx_model).data[r, c]
        mu, sigma = predict_params(feats, psi_data[r, c], net)
        return build_cdf_batch(mu[sel], sigma[sel], alphabet)

    return provider


def _code_z_stream(z: Tensor, pmf: FactorizedPmf) -> bytes:
    """Side-channel substream: channel-major, raster order within each channel."""
    data = z.data
    h, w, _ = data.shape
    cum_rows = pmf.cum_rows()
    m = pmf.z_max - pmf.z_min
    enc = RangeEncoder()
    for ch in range(pmf.channels):
        row = cum_rows[ch]
        plane = data[:, :, ch]
        for r in range(h):
            for c in range(w):
                i = int(plane[r, c]) - pmf.z_min
                if not (0 <= i <= m):
                    raise CodingError(
                        f"z symbol {int(plane[r, c])} outside alphabet "
                        f"[{pmf.z_min}, {pmf.z_max}]"
                    )
                enc.encode_freq(int(row[i]), int(row[i + 1]))
    return enc.finish()


def _decode_z_stream(payload: bytes, pmf: FactorizedPmf, h: int, w: int) -> Tensor:
    out = np.zeros((h, w, pmf.channels), dtype=np.float32)
    cum_rows = pmf.cum_rows()
    dec = RangeDecoder(payload)
    for ch in range(pmf.channels):
        row = cum_rows[ch]
        for r in range(h):
            for c in range(w):
                out[r, c, ch] = pmf.z_min + dec.decode_freq(row)
    if dec.consumed != len(payload):
        raise CodingError(
            f"z substream declared {len(payload)} bytes but decoding consumed {dec.consumed}"
        )
    dec.verify_flush()
    return Tensor(out)


def encode_image_latents(y_hat: Tensor, z_hat: Tensor, weights: ModelWeights) -> BitstreamContainer:
    """Encode the (main, side) latent pair into a container."""
    if y_hat.channels != weights.c_y:
        raise ConfigurationError(f"latents have {y_hat.channels} channels, weights declare {weights.c_y}")
    _check_latents("y latents", y_hat)
    _check_latents("z latents", z_hat)

    q_min = int(y_hat.data.min()) - 1
    q_max = int(y_hat.data.max()) + 1
    flags = compute_flags(y_hat)
    z_stream = _code_z_stream(z_hat, weights.z_pmf)
    psi = hyper_forward(z_hat, weights, target_hw=(y_hat.height, y_hat.width))
    sel = flags.nonzero_channels()
    provider = _make_provider(weights, psi, sel, (q_min, q_max))
    y_stream = selective_encode(y_hat, flags, provider)
    return BitstreamContainer(
        y_hat.height,
        y_hat.width,
        y_hat.channels,
        z_hat.height,
        z_hat.width,
        z_hat.channels,
        q_min,
        q_max,
        flags,
        z_stream,
        y_stream,
    )


def decode_image_latents(
    container: BitstreamContainer,
    weights: ModelWeights,
    reference_context: bool = False,
) -> tuple[Tensor, Tensor]:
    """Exact inverse of encode_image_latents.

    reference_context=True decodes through the uncropped full-context path;
    the result and the consumed stream are bit-identical to the default
    cropped path.
    """
    if container.c_y != weights.c_y or container.c_z != weights.c_z:
        raise ConfigurationError(
            f"container channels ({container.c_y}, {container.c_z}) do not match "
            f"weights ({weights.c_y}, {weights.c_z})"
        )
    z_hat = _decode_z_stream(container.z_stream, weights.z_pmf, container.h_z, container.w_z)
    psi = hyper_forward(z_hat, weights, target_hw=(container.h_y, container.w_y))
    sel = container.flags.nonzero_channels()
    make = _make_reference_provider if reference_context else _make_provider
    provider = make(weights, psi, sel, (container.q_min, container.q_max))
    y_hat = selective_decode(
        container.y_stream,
        container.flags,
        provider,
        container.h_y,
        container.w_y,
        container.c_y,
    )
    return y_hat, z_hat


def coded_rate_bits(y_hat: Tensor, z_hat: Tensor, weights: ModelWeights) -> tuple[float, float]:
    """Bit totals of both substreams under the *quantized* tables actually coded.

    Walks the same per-position tables as the encoder and sums
    -log2(width / 2**16) over the coded symbols (skipped channels excluded).
    Actual substream sizes exceed these totals by at most the coder flush.
    """
    _check_latents("y latents", y_hat)
    _check_latents("z latents", z_hat)
    q_min = int(y_hat.data.min()) - 1
    q_max = int(y_hat.data.max()) + 1
    flags = compute_flags(y_hat)
    sel = flags.nonzero_channels()
    psi = hyper_forward(z_hat, weights, target_hw=(y_hat.height, y_hat.width))
    provider = _make_provider(weights, psi, sel, (q_min, q_max))
    data = y_hat.data
    bits_y = 0.0
    if sel.size:
        for r in range(y_hat.height):
            for c in range(y_hat.width):
                rows = provider(data, r, c).rows
                idx = data[r, c, sel].astype(np.int64) - q_min
                widths = rows[np.arange(sel.size), idx + 1] - rows[np.arange(sel.size), idx]
                bits_y += float(np.sum(16.0 - np.log2(widths.astype(np.float64))))
    bits_z = rate_estimate_factorized(z_hat, weights.z_pmf)
    return bits_y, bits_z


# ---------------------------------------------------------------------------
# Rate reporting
# ---------------------------------------------------------------------------

@dataclass
class RateReport:
    """Estimated and actual rate for one coded image."""

    bits_y_estimate: float
    bits_z_estimate: float
    bytes_actual_total: int
    bytes_header: int
    bytes_flags: int
    bytes_z: int
    bytes_y: int
    bpp: float
    pixel_width: int
    pixel_height: int

    def records(self) -> list[tuple[str, object]]:
        return [
            ("bits_y_estimate", self.bits_y_estimate),
            ("bits_z_estimate", self.bits_z_estimate),
            ("bytes_actual_total", self.bytes_actual_total),
            ("bytes_header", self.bytes_header),
            ("bytes_flags", self.bytes_flags),
            ("bytes_z", self.bytes_z),
            ("bytes_y", self.bytes_y),
            ("bpp", self.bpp),
        ]


def full_tensor_params(y_hat: Tensor, z_hat: Tensor, weights: ModelWeights):
    """(mu, sigma) for every position via the batched full-tensor path."""
    psi = hyper_forward(z_hat, weights, target_hw=(y_hat.height, y_hat.width))
    ctx = context_full(y_hat, weights.context)
    return predict_params(ctx, psi, weights.entropy_net)


def estimate_rates(
    y_hat: Tensor,
    z_hat: Tensor,
    weights: ModelWeights,
    pixel_dims: tuple[int, int],
    container: BitstreamContainer | None = None,
) -> RateReport:
    """Full rate report; encodes the pair if no container is supplied.

    pixel_dims is (width, height) of the source image the latents came from;
    bpp = 8 * total bytes / (width * height).
    """
    if container is None:
        container = encode_image_latents(y_hat, z_hat, weights)
    params = full_tensor_params(y_hat, z_hat, weights)
    bits_y = rate_estimate(y_hat, params)
    bits_z = rate_estimate_factorized(z_hat, weights.z_pmf)
    pw, ph = pixel_dims
    if pw <= 0 or ph <= 0:
        raise ValueError(f"pixel dims must be positive, got {pixel_dims}")
    total = container.total_bytes
    return RateReport(
        bits_y_estimate=bits_y,
        bits_z_estimate=bits_z,
        bytes_actual_total=total,
        bytes_header=HEADER_BYTES,
        bytes_flags=container.flags.byte_length,
        bytes_z=len(container.z_stream),
        bytes_y=len(container.y_stream),
        bpp=8.0 * total / (pw * ph),
        pixel_width=pw,
        pixel_height=ph,
    )


# ---------------------------------------------------------------------------
# Synthetic models for testing and benchmarks
# ---------------------------------------------------------------------------

def gen_synthetic_model(
    seed: int,
    c_y: int = 128,
    c_z: int = 192,
    context_out_each: int | None = None,
    upsample: int = 4,
    z_min: int = -8,
    z_max: int = 8,
) -> ModelWeights:
    """Deterministic pseudo-random weights with tame parameter predictions.

    Weight magnitudes shrink with fan-in so that predicted mu stays small and
    sigma lands well inside its clamp range for integer latents of modest
    amplitude; that keeps synthetic rate tests away from degenerate tables.
    upsample must be 1, 2 or 4 (spatial ratio between main and side latents).
    """
    if upsample not in (1, 2, 4):
        raise ValueError(f"upsample must be 1, 2 or 4, got {upsample}")
    if context_out_each is None:
        context_out_each = 2 * c_y
    rng = np.random.default_rng(seed)

    def masked(k: int) -> MaskedConvLayer:
        scale = 0.2 / np.sqrt(k * k * c_y / 2.0)
        w = rng.normal(0.0, scale, size=(k, k, c_y, context_out_each)).astype(np.float32)
        b = rng.normal(0.0, 0.1, size=(context_out_each,)).astype(np.float32)
        return MaskedConvLayer(ConvLayer(w, b, stride=1, activation=ACT_NONE))

    context = ContextModel(masked(3), masked(5), masked(7))

    psi_c = max(2 * c_y, 2)
    hidden = max(c_y, 8)

    def conv_layer(kind: str, k: int, ci: int, co: int, stride: int, act: str) -> tuple[str, ConvLayer]:
        scale = 0.3 / np.sqrt(k * k * ci)
        w = rng.normal(0.0, scale, size=(k, k, ci, co)).astype(np.float32)
        b = rng.normal(0.0, 0.1, size=(co,)).astype(np.float32)
        return kind, ConvLayer(w, b, stride=stride, activation=act)

    hyper: list[tuple[str, ConvLayer]] = []
    mid = max(c_z // 2, 2)
    if upsample == 1:
        hyper.append(conv_layer(HYPER_CONV, 3, c_z, mid, 1, ACT_LEAKY_RELU))
        hyper.append(conv_layer(HYPER_CONV, 1, mid, psi_c, 1, ACT_NONE))
    elif upsample == 2:
        hyper.append(conv_layer(HYPER_TCONV, 5, c_z, mid, 2, ACT_LEAKY_RELU))
        hyper.append(conv_layer(HYPER_CONV, 3, mid, psi_c, 1, ACT_NONE))
    else:
        hyper.append(conv_layer(HYPER_TCONV, 5, c_z, mid, 2, ACT_LEAKY_RELU))
        hyper.append(conv_layer(HYPER_TCONV, 5, mid, mid, 2, ACT_LEAKY_RELU))
        hyper.append(conv_layer(HYPER_CONV, 3, mid, psi_c, 1, ACT_NONE))

    ent_in = context.feature_channels + psi_c

    def dense(ci: int, co: int, act: str, mu_bias: bool = False) -> ConvLayer:
        scale = 0.5 / np.sqrt(ci)
        w = rng.normal(0.0, scale, size=(1, 1, ci, co)).astype(np.float32)
        b = rng.normal(0.0, 0.2, size=(co,)).astype(np.float32)
        if mu_bias:
            # First half biases the means near zero, second half the raw
            # sigmas toward softplus values around 1..2.
            half = co // 2
            b[:half] = rng.uniform(-0.5, 0.5, size=half).astype(np.float32)
            b[half:] = rng.uniform(0.5, 1.5, size=co - half).astype(np.float32)
        return ConvLayer(w, b, stride=1, activation=act)

    entropy_net = EntropyParametersNet(
        [
            dense(ent_in, hidden, ACT_LEAKY_RELU),
            dense(hidden, hidden, ACT_LEAKY_RELU),
            dense(hidden, 2 * c_y, ACT_NONE, mu_bias=True),
        ]
    )

    centers = rng.uniform(-1.5, 1.5, size=c_z)
    widths = rng.uniform(0.5, 2.5, size=c_z)
    table = build_cdf_batch(centers, widths, (z_min, z_max))
    z_pmf = FactorizedPmf(z_min, z_max, np.diff(table.rows, axis=1))

    return ModelWeights(context, entropy_net, hyper, z_pmf, c_y, c_z)


def gen_synthetic_latents(
    seed: int,
    weights: ModelWeights,
    h_z: int,
    w_z: int,
    amplitude: float = 1.2,
    zero_channel_prob: float = 0.35,
) -> tuple[Tensor, Tensor]:
    """Deterministic integer latents shaped for the given model.

    Side-channel symbols are drawn from the model's own tables; main latents
    are rounded Gaussians of moderate amplitude with a random subset of
    channels forced to all-zero so the selective codec path gets exercised.
    Main dims are (h_z, w_z) times the hyper chain's upsample factor.
    """
    rng = np.random.default_rng(seed)
    pmf = weights.z_pmf
    masses = pmf.masses()
    symbols = np.arange(pmf.z_min, pmf.z_max + 1)
    z = np.empty((h_z, w_z, weights.c_z), dtype=np.float32)
    for ch in range(weights.c_z):
        z[:, :, ch] = rng.choice(symbols, size=(h_z, w_z), p=masses[ch])

    u = weights.hyper_upsample
    h_y, w_y = h_z * u, w_z * u
    y = np.rint(np.clip(rng.normal(0.0, amplitude, size=(h_y, w_y, weights.c_y)), -5.0, 5.0))
    zero_mask = rng.random(weights.c_y) < zero_channel_prob
    y[:, :, zero_mask] = 0.0
    return Tensor(y.astype(np.float32)), Tensor(z)
