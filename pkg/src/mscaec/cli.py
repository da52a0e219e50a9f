"""Command-line interface.

Machine-readable output goes to stdout as line-oriented records of
space-separated key=value fields; human-oriented summaries go to stderr.
Exit codes: 0 success, 1 usage, 2 data/parse error, 3 internal invariant
violation.  MSCAEC_WEIGHTS provides the default --weights path.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import metrics as metrics_mod
from .allocate import AllocationProblem, allocate as solve_allocation, budget_from_bpp, read_menus
from .errors import CodecError, CodingError, ConfigurationError, InternalError, ParseError
from .gaussian import rate_estimate, rate_estimate_factorized
from .pipeline import (
    BitstreamContainer,
    _make_provider,
    coded_rate_bits,
    decode_image_latents,
    encode_image_latents,
    estimate_rates,
    full_tensor_params,
    gen_synthetic_latents,
    gen_synthetic_model,
    hyper_forward,
    load_tensor,
    load_weights,
    save_tensor,
    save_weights,
)
from .rangecoder import compute_flags, selective_encode

WEIGHTS_ENV = "MSCAEC_WEIGHTS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A003 - argparse API
        raise UsageError(message)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _emit(**fields) -> None:
    print(" ".join(f"{k}={_fmt(v)}" for k, v in fields.items()))


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _require_files(*paths: str) -> None:
    for p in paths:
        if not os.path.isfile(p):
            raise UsageError(f"input file not found: {p}")


def _weights_path(args) -> str:
    path = args.weights or os.environ.get(WEIGHTS_ENV)
    if not path:
        raise UsageError(f"--weights is required (or set {WEIGHTS_ENV})")
    return path


def _pixel_dims(args, w_y: int, h_y: int) -> tuple[int, int]:
    # Latents are typically 16x downsampled from the source image; the
    # default assumes that when explicit pixel dims are not given.
    pw = args.pixel_width if args.pixel_width else w_y * 16
    ph = args.pixel_height if args.pixel_height else h_y * 16
    return pw, ph


def _cmd_encode(args) -> int:
    wpath = _weights_path(args)
    _require_files(args.latents, args.hyper_latents, wpath)
    weights = load_weights(wpath)
    y = load_tensor(args.latents)
    z = load_tensor(args.hyper_latents)
    container = encode_image_latents(y, z, weights)
    container.write(args.output)
    pw, ph = _pixel_dims(args, y.width, y.height)
    report = estimate_rates(y, z, weights, (pw, ph), container)
    _emit(output=args.output, **dict(report.records()))
    if args.figure:
        from .report import save_rate_figure

        save_rate_figure(report, args.figure)
        _say(f"figure written to {args.figure}")
    _say(
        f"encoded {y.height}x{y.width}x{y.channels} latents into "
        f"{report.bytes_actual_total} bytes ({report.bpp:.4f} bpp)"
    )
    return 0


def _cmd_decode(args) -> int:
    wpath = _weights_path(args)
    _require_files(args.input, wpath)
    weights = load_weights(wpath)
    container = BitstreamContainer.read(args.input)
    y, z = decode_image_latents(container, weights, reference_context=args.reference_context)
    save_tensor(y, args.output_latents)
    save_tensor(z, args.output_hyper)
    _emit(
        latents=args.output_latents,
        hyper=args.output_hyper,
        h_y=y.height,
        w_y=y.width,
        c_y=y.channels,
        h_z=z.height,
        w_z=z.width,
        c_z=z.channels,
        context_path="reference" if args.reference_context else "cropped",
    )
    _say(f"decoded {args.input} -> {args.output_latents}, {args.output_hyper}")
    return 0


def _cmd_estimate(args) -> int:
    wpath = _weights_path(args)
    _require_files(args.latents, args.hyper_latents, wpath)
    weights = load_weights(wpath)
    y = load_tensor(args.latents)
    z = load_tensor(args.hyper_latents)
    params = full_tensor_params(y, z, weights)
    bits_y = rate_estimate(y, params)
    bits_z = rate_estimate_factorized(z, weights.z_pmf)
    pw, ph = _pixel_dims(args, y.width, y.height)
    _emit(
        bits_y_estimate=bits_y,
        bits_z_estimate=bits_z,
        bits_total_estimate=bits_y + bits_z,
        bpp_estimate=(bits_y + bits_z) / (pw * ph),
    )
    _say(f"entropy estimate: {(bits_y + bits_z) / 8.0:.1f} bytes (no coding performed)")
    return 0


def _cmd_metrics(args) -> int:
    if len(args.images) % 2 != 0:
        raise UsageError("metrics expects an even number of image paths (reference test ...)")
    _require_files(*args.images)
    weights = metrics_mod.MsSsimWeights(
        metrics_mod.AVERAGE_WEIGHTS if args.weights_set == "average" else metrics_mod.DEFAULT_WEIGHTS
    )
    records = []
    for i in range(0, len(args.images), 2):
        ref = metrics_mod.read_image(args.images[i])
        test = metrics_mod.read_image(args.images[i + 1])
        score = metrics_mod.ms_ssim(ref, test, weights)
        db = math.inf if score >= 1.0 else metrics_mod.ms_ssim_db(score)
        rec = {
            "pair": i // 2,
            "ref": args.images[i],
            "test": args.images[i + 1],
            "weights": args.weights_set,
            "ms_ssim": score,
            "ms_ssim_db": db,
            "psnr": metrics_mod.psnr(ref, test),
        }
        records.append(rec)
        _emit(**rec)
    if args.figure:
        from .report import save_metrics_figure

        save_metrics_figure(records, args.figure)
        _say(f"figure written to {args.figure}")
    _say(f"scored {len(records)} image pair(s) with {args.weights_set} weights")
    return 0


def _cmd_allocate(args) -> int:
    _require_files(args.menus)
    ids, cand_ids, menus = read_menus(args.menus)
    if args.budget_bytes is not None:
        budget = args.budget_bytes
    else:
        if args.budget_bpp is None:
            raise UsageError("provide --budget-bytes or --budget-bpp")
        if args.total_pixels is None:
            raise UsageError("--budget-bpp needs --total-pixels")
        budget = budget_from_bpp(args.budget_bpp, [args.total_pixels])
    problem = AllocationProblem(menus, budget)
    result = solve_allocation(problem, granularity=args.granularity)
    for i, j in enumerate(result.chosen):
        cand = menus[i][j]
        _emit(image=ids[i], candidate=cand_ids[i][j], bytes=cand.bytes, quality=cand.quality)
    summary = {
        "total_bytes": result.total_bytes,
        "budget_bytes": budget,
        "mean_quality": result.total_quality / len(menus),
        "feasible": int(result.feasible),
    }
    if args.total_pixels:
        summary["bpp"] = 8.0 * result.total_bytes / args.total_pixels
    _emit(**summary)
    if args.figure:
        from .report import save_allocation_figure

        save_allocation_figure(menus, result, budget, args.figure)
        _say(f"figure written to {args.figure}")
    _say(
        f"allocated {len(menus)} image(s): {result.total_bytes}/{budget} bytes, "
        f"mean quality {result.total_quality / len(menus):.4f}"
        + ("" if result.feasible else " (INFEASIBLE: all-minimum assignment)")
    )
    return 0


def _cmd_gen_model(args) -> int:
    weights = gen_synthetic_model(
        args.seed,
        c_y=args.c_y,
        c_z=args.c_z,
        context_out_each=args.context_out_each,
        upsample=args.upsample,
    )
    save_weights(weights, args.output)
    _emit(
        output=args.output,
        seed=args.seed,
        c_y=args.c_y,
        c_z=args.c_z,
        upsample=args.upsample,
    )
    _say(f"synthetic model written to {args.output}")
    return 0


def _cmd_selftest(args) -> int:
    rng = np.random.default_rng(args.seed)
    checks = {"round_trip": 0, "crop_equivalence": 0, "flag_overhead": 0, "rate_bound": 0}
    failures = 0
    t0 = time.perf_counter()
    for i in range(args.instances):
        c_y = int(rng.integers(2, 9))
        c_z = int(rng.integers(1, 5))
        upsample = int(rng.choice([1, 2, 4]))
        weights = gen_synthetic_model(
            int(rng.integers(0, 2**31)),
            c_y=c_y,
            c_z=c_z,
            context_out_each=int(rng.integers(1, 5)),
            upsample=upsample,
        )
        h_z = int(rng.integers(1, 4))
        w_z = int(rng.integers(1, 4))
        y, z = gen_synthetic_latents(int(rng.integers(0, 2**31)), weights, h_z, w_z)
        container = encode_image_latents(y, z, weights)
        blob = container.to_bytes()

        y2, z2 = decode_image_latents(BitstreamContainer.from_bytes(blob), weights)
        if y2 == y and z2 == z:
            checks["round_trip"] += 1
        else:
            failures += 1

        y3, z3 = decode_image_latents(
            BitstreamContainer.from_bytes(blob), weights, reference_context=True
        )
        if y3 == y and z3 == z:
            checks["crop_equivalence"] += 1
        else:
            failures += 1

        bits_y, bits_z = coded_rate_bits(y, z, weights)
        ok_y = len(container.y_stream) <= math.ceil(bits_y / 8.0) + 8
        ok_z = len(container.z_stream) <= math.ceil(bits_z / 8.0) + 8
        if ok_y and ok_z:
            checks["rate_bound"] += 1
        else:
            failures += 1

        # Re-coding only the non-zero channels without flags must reproduce
        # the selective payload byte for byte; the flags are pure overhead.
        flags = compute_flags(y)
        psi = hyper_forward(z, weights, target_hw=(y.height, y.width))
        provider = _make_provider(
            weights, psi, flags.nonzero_channels(), (container.q_min, container.q_max)
        )
        payload = selective_encode(y, flags, provider)
        if payload == container.y_stream and flags.byte_length == -(-weights.c_y // 8):
            checks["flag_overhead"] += 1
        else:
            failures += 1
    elapsed = time.perf_counter() - t0
    for name, count in checks.items():
        _emit(check=name, passed=count, total=args.instances)
    _emit(failures=failures, seconds=elapsed)
    _say(
        f"selftest: {sum(checks.values())}/{4 * args.instances} properties passed "
        f"in {elapsed:.1f}s"
    )
    if failures:
        raise InternalError(f"selftest found {failures} failing propert(ies)")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="mscaec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_weights(p):
        p.add_argument("--weights", help=f"weights file (default from {WEIGHTS_ENV})")

    p = sub.add_parser("encode", help="encode latent tensors into a container")
    p.add_argument("--latents", required=True, help="main latent tensor file")
    p.add_argument("--hyper-latents", required=True, help="side-channel tensor file")
    add_weights(p)
    p.add_argument("--output", required=True, help="container output path")
    p.add_argument("--pixel-width", type=int, help="source image width for bpp")
    p.add_argument("--pixel-height", type=int, help="source image height for bpp")
    p.add_argument("--figure", help="write a rate-breakdown figure to this path")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decode a container back to latent tensors")
    p.add_argument("--input", required=True, help="container path")
    add_weights(p)
    p.add_argument("--output-latents", required=True)
    p.add_argument("--output-hyper", required=True)
    p.add_argument(
        "--reference-context",
        action="store_true",
        help="decode through the uncropped full-context path (slow; for verification)",
    )
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("estimate", help="entropy-model rate estimate without coding")
    p.add_argument("--latents", required=True)
    p.add_argument("--hyper-latents", required=True)
    add_weights(p)
    p.add_argument("--pixel-width", type=int)
    p.add_argument("--pixel-height", type=int)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("metrics", help="MS-SSIM / PSNR for image pairs")
    p.add_argument("images", nargs="+", help="pairs of paths: reference test ...")
    p.add_argument("--weights-set", choices=["default", "average"], default="default")
    p.add_argument("--figure", help="write a per-pair quality figure to this path")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("allocate", help="pick one candidate stream per image under a budget")
    p.add_argument("--menus", required=True, help="records file: image_id candidate_id bytes quality")
    p.add_argument("--budget-bytes", type=int)
    p.add_argument("--budget-bpp", type=float)
    p.add_argument("--total-pixels", type=int)
    p.add_argument("--granularity", type=int, default=64)
    p.add_argument("--figure", help="write an allocation scatter figure to this path")
    p.set_defaults(func=_cmd_allocate)

    p = sub.add_parser("gen-model", help="write a deterministic synthetic weights file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--c-y", type=int, default=128)
    p.add_argument("--c-z", type=int, default=192)
    p.add_argument("--context-out-each", type=int)
    p.add_argument("--upsample", type=int, default=4, choices=[1, 2, 4])
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_gen_model)

    p = sub.add_parser("selftest", help="round-trip and dual-path property suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=25)
    p.set_defaults(func=_cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error=usage message={json.dumps(str(exc))}")
        _say(f"usage error: {exc}")
        return 1
    except (ParseError, CodingError, ConfigurationError, ValueError, OSError) as exc:
        print(f"error={type(exc).__name__} message={json.dumps(str(exc))}")
        _say(f"error: {exc}")
        return 2
    except (InternalError, CodecError) as exc:
        print(f"error={type(exc).__name__} message={json.dumps(str(exc))}")
        _say(f"internal error: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
