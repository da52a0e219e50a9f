"""mscaec: lossless coding of quantized latent tensors.

The package encodes and decodes integer latent tensors with an autoregressive
multi-scale masked-convolution context model, a hyperprior side channel, and
Gaussian conditional range coding, together with rate estimation, MS-SSIM /
PSNR metrics, and a knapsack bitrate allocator.
"""

from .allocate import (
    AllocationProblem,
    AllocationResult,
    Candidate,
    allocate,
    budget_from_bpp,
)
from .context import ContextModel, context_at, context_full
from .errors import (
    CodecError,
    CodingError,
    ConfigurationError,
    InternalError,
    ParseError,
)
from .gaussian import (
    CDF_TOTAL,
    EntropyParametersNet,
    FactorizedPmf,
    GaussianParams,
    QuantizedCdf,
    SIGMA_MAX,
    SIGMA_MIN,
    build_cdf,
    build_cdf_batch,
    gaussian_pmf,
    predict_params,
    rate_estimate,
    rate_estimate_factorized,
)
from .metrics import (
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
from .pipeline import (
    BitstreamContainer,
    ModelWeights,
    RateReport,
    coded_rate_bits,
    decode_image_latents,
    encode_image_latents,
    estimate_rates,
    gen_synthetic_latents,
    gen_synthetic_model,
    hyper_forward,
    load_tensor,
    load_weights,
    save_tensor,
    save_weights,
)
from .rangecoder import (
    ChannelFlags,
    RangeDecoder,
    RangeEncoder,
    compute_flags,
    decode_symbol,
    encode_symbol,
    selective_decode,
    selective_encode,
)
from .tensors import (
    ConvLayer,
    MaskedConvLayer,
    Tensor,
    conv2d,
    masked_conv2d,
    transposed_conv2d,
)

__version__ = "0.1.0"
