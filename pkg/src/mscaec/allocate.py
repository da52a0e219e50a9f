"""Bitrate allocation across a dataset: multiple-choice knapsack.

Each image offers a menu of candidate streams (bytes, quality); exactly one
candidate is chosen per image to maximize summed quality under a global byte
budget.  The solver is an exact dynamic program over a byte granularity g:
candidate costs are rounded up to units of g and the budget down, so the
returned selection can never overshoot the budget, and at g = 1 the program
is exact to the byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Candidate:
    """One candidate stream for an image."""

    bytes: int
    quality: float

    def __post_init__(self):
        if self.bytes < 0:
            raise ValueError(f"candidate bytes must be >= 0, got {self.bytes}")
        if not (0.0 <= self.quality <= 1.0):
            raise ValueError(f"candidate quality must lie in [0, 1], got {self.quality}")


@dataclass
class AllocationProblem:
    """Per-image candidate menus plus the shared byte budget."""

    images: list[list[Candidate]]
    budget_bytes: int

    def __post_init__(self):
        if not self.images:
            raise ValueError("allocation problem has no images")
        for i, menu in enumerate(self.images):
            if not menu:
                raise ValueError(f"image {i} has an empty candidate menu")
        if self.budget_bytes < 0:
            raise ValueError(f"budget must be >= 0, got {self.budget_bytes}")


@dataclass
class AllocationResult:
    """Chosen candidate index per image and the resulting totals."""

    chosen: list[int]
    total_bytes: int
    total_quality: float
    feasible: bool


def _minimum_assignment(images: list[list[Candidate]]) -> list[int]:
    # Cheapest candidate per image; ties go to the lower index.
    return [
        min(range(len(menu)), key=lambda j: (menu[j].bytes, j))
        for menu in images
    ]


def _result_for(images: list[list[Candidate]], chosen: list[int], feasible: bool) -> AllocationResult:
    total_b = sum(images[i][j].bytes for i, j in enumerate(chosen))
    total_q = sum(images[i][j].quality for i, j in enumerate(chosen))
    return AllocationResult(chosen, total_b, total_q, feasible)


def allocate(problem: AllocationProblem, granularity: int = 64) -> AllocationResult:
    """Solve the multiple-choice knapsack exactly at the given granularity.

    Maximizes summed quality; ties prefer lower total bytes, then the
    lexicographically smallest choice vector.  If even the all-minimum
    assignment does not fit (after cost rounding), the all-minimum assignment
    is returned with feasible=False.
    """
    if granularity < 1:
        raise ValueError(f"granularity must be >= 1, got {granularity}")
    images = problem.images
    n = len(images)
    units = problem.budget_bytes // granularity
    costs = [
        np.array([-(-cand.bytes // granularity) for cand in menu], dtype=np.int64)
        for menu in images
    ]
    if sum(int(c.min()) for c in costs) > units:
        return _result_for(images, _minimum_assignment(images), feasible=False)

    # Backward DP over image suffixes: best (quality, -bytes) using at most u
    # units; choice stores the smallest optimal candidate index per state so
    # a forward pass reconstructs the lexicographically smallest optimum.
    n_units = units + 1
    q = np.zeros(n_units, dtype=np.float64)
    b = np.zeros(n_units, dtype=np.int64)
    choice = np.zeros((n, n_units), dtype=np.int32)
    for i in range(n - 1, -1, -1):
        best_q = np.full(n_units, -np.inf)
        best_b = np.zeros(n_units, dtype=np.int64)
        best_j = np.zeros(n_units, dtype=np.int32)
        for j, cand in enumerate(images[i]):
            cu = int(costs[i][j])
            if cu >= n_units:
                continue
            cand_q = np.full(n_units, -np.inf)
            cand_b = np.zeros(n_units, dtype=np.int64)
            cand_q[cu:] = q[: n_units - cu] + cand.quality
            cand_b[cu:] = b[: n_units - cu] + cand.bytes
            better = (cand_q > best_q) | ((cand_q == best_q) & (cand_b < best_b))
            np.copyto(best_q, cand_q, where=better)
            np.copyto(best_b, cand_b, where=better)
            np.copyto(best_j, j, where=better)
        q, b = best_q, best_b
        choice[i] = best_j
    if not np.isfinite(q[units]):
        # Unreachable in theory given the min-cost check above, but kept as a
        # guard for pathological menus.
        return _result_for(images, _minimum_assignment(images), feasible=False)

    chosen: list[int] = []
    u = units
    for i in range(n):
        j = int(choice[i][u])
        chosen.append(j)
        u -= int(costs[i][j])
    return _result_for(images, chosen, feasible=True)


def budget_from_bpp(bpp: float, pixel_counts: list[int]) -> int:
    """Byte budget equivalent to a bits-per-pixel target over the dataset."""
    if bpp <= 0:
        raise ValueError(f"bpp must be positive, got {bpp}")
    return int(math.floor(bpp * sum(pixel_counts) / 8.0))


# ---------------------------------------------------------------------------
# Line-oriented records: one candidate per line
# ---------------------------------------------------------------------------

def read_menus(path: str) -> tuple[list[str], list[list[str]], list[list[Candidate]]]:
    """Read candidate records: `image_id candidate_id bytes quality` per line.

    Blank lines and # comments are skipped.  Images and their candidates keep
    file order.  Returns (image ids, candidate ids per image, menus).
    """
    ids: list[str] = []
    cand_ids: dict[str, list[str]] = {}
    menus: dict[str, list[Candidate]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(
                    f"{path}:{n}: expected `image_id candidate_id bytes quality`, got {line!r}"
                )
            img, cand, size_s, quality_s = parts
            try:
                size = int(size_s)
                quality = float(quality_s)
            except ValueError:
                raise ValueError(f"{path}:{n}: bad numeric fields in {line!r}") from None
            if img not in menus:
                ids.append(img)
                menus[img] = []
                cand_ids[img] = []
            menus[img].append(Candidate(size, quality))
            cand_ids[img].append(cand)
    if not ids:
        raise ValueError(f"{path}: no candidate records found")
    return ids, [cand_ids[i] for i in ids], [menus[i] for i in ids]
