"""Figure rendering for the CLI report paths.

Each helper writes one matplotlib figure to a file next to the delimited
records the subcommand prints; nothing here is needed for coding itself.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .allocate import AllocationResult, Candidate  # noqa: E402
from .pipeline import RateReport  # noqa: E402


def save_metrics_figure(records: list[dict], path: str) -> None:
    """Bar chart of MS-SSIM (dB) and PSNR per image pair."""
    labels = [str(r.get("pair", i)) for i, r in enumerate(records)]
    db_vals = [r["ms_ssim_db"] for r in records]
    psnr_vals = [0.0 if math.isinf(r["psnr"]) else r["psnr"] for r in records]
    x = range(len(records))
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(records) + 2), 3.5))
    ax.bar([i - 0.2 for i in x], db_vals, width=0.4, label="MS-SSIM (dB)")
    ax.bar([i + 0.2 for i in x], psnr_vals, width=0.4, label="PSNR (dB)")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("dB")
    ax.set_title("Quality per image pair")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_allocation_figure(
    menus: list[list[Candidate]],
    result: AllocationResult,
    budget_bytes: int,
    path: str,
) -> None:
    """Scatter of all candidates (bytes vs quality) with the chosen ones marked."""
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    all_b = [c.bytes for menu in menus for c in menu]
    all_q = [c.quality for menu in menus for c in menu]
    ax.scatter(all_b, all_q, s=12, alpha=0.35, label="candidates")
    sel_b = [menus[i][j].bytes for i, j in enumerate(result.chosen)]
    sel_q = [menus[i][j].quality for i, j in enumerate(result.chosen)]
    ax.scatter(sel_b, sel_q, s=26, color="crimson", label="chosen")
    ax.set_xlabel("candidate size (bytes)")
    ax.set_ylabel("quality (MS-SSIM)")
    status = "feasible" if result.feasible else "INFEASIBLE"
    ax.set_title(
        f"Allocation: {result.total_bytes} / {budget_bytes} B, "
        f"mean quality {result.total_quality / len(menus):.4f} ({status})"
    )
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_rate_figure(report: RateReport, path: str) -> None:
    """Actual byte breakdown next to the model's bit estimates."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 3.2))
    parts = [report.bytes_header, report.bytes_flags, report.bytes_z, report.bytes_y]
    names = ["header", "flags", "z", "y"]
    bottom = 0
    for name, val in zip(names, parts):
        ax1.bar([0], [val], bottom=bottom, label=f"{name} ({val} B)")
        bottom += val
    ax1.set_xticks([])
    ax1.set_ylabel("bytes")
    ax1.set_title(f"actual: {report.bytes_actual_total} B, {report.bpp:.4f} bpp")
    ax1.legend(fontsize=7)
    est = [report.bits_y_estimate / 8.0, report.bits_z_estimate / 8.0]
    ax2.bar(["y estimate", "z estimate"], est)
    ax2.set_ylabel("bytes (ideal)")
    ax2.set_title("entropy estimates")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_scaling_figure(positions: list[int], cropped: list[float], reference: list[float], path: str) -> None:
    """Decode wall time against grid size for the cropped and reference paths."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(positions, cropped, "o-", label="cropped context")
    ax.plot(positions, reference, "s--", label="full-context reference")
    ax.set_xlabel("latent positions")
    ax.set_ylabel("decode time (s)")
    ax.set_title("Decode time scaling")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
