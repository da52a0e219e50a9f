import itertools
import math

import numpy as np
import pytest

from mscaec.allocate import (
    AllocationProblem,
    Candidate,
    allocate,
    budget_from_bpp,
    read_menus,
)


def brute_force(images, budget, granularity=1):
    """Exhaustive reference: same objective and tie-break as the solver."""
    best = None
    for combo in itertools.product(*(range(len(menu)) for menu in images)):
        units = sum(-(-images[i][j].bytes // granularity) for i, j in enumerate(combo))
        if units > budget // granularity:
            continue
        q = sum(images[i][j].quality for i, j in enumerate(combo))
        b = sum(images[i][j].bytes for i, j in enumerate(combo))
        key = (-q, b, combo)
        if best is None or key < best:
            best = key
    return best


def _dyadic_menus(rng, n_images, max_candidates, max_bytes=400):
    # qualities on a 1/1024 grid keep float sums exact, so tie-breaks are
    # well-defined in both the solver and the oracle
    menus = []
    for _ in range(n_images):
        k = int(rng.integers(1, max_candidates + 1))
        menus.append(
            [
                Candidate(int(rng.integers(0, max_bytes)), int(rng.integers(0, 1025)) / 1024.0)
                for _ in range(k)
            ]
        )
    return menus


class TestExamples:
    def test_only_cheap_candidate_fits(self):
        problem = AllocationProblem([[Candidate(100, 0.90), Candidate(200, 0.95)]], 150)
        result = allocate(problem, granularity=1)
        assert result.chosen == [0]
        assert result.total_bytes == 100
        assert result.feasible

    def test_better_candidate_fits_with_larger_budget(self):
        problem = AllocationProblem([[Candidate(100, 0.90), Candidate(200, 0.95)]], 200)
        result = allocate(problem, granularity=1)
        assert result.chosen == [1]
        assert result.total_quality == pytest.approx(0.95)

    def test_matches_brute_force_on_seeded_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            menus = _dyadic_menus(rng, int(rng.integers(1, 7)), 3)
            budget = int(rng.integers(0, 900))
            want = brute_force(menus, budget)
            got = allocate(AllocationProblem(menus, budget), granularity=1)
            if want is None:
                assert not got.feasible
            else:
                assert got.feasible
                assert (-got.total_quality, got.total_bytes, tuple(got.chosen)) == want


class TestFeasibility:
    def test_budget_never_exceeded_at_coarse_granularity(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            menus = _dyadic_menus(rng, 40, 5, max_bytes=5000)
            budget = int(rng.integers(40 * 600, 40 * 2500))
            result = allocate(AllocationProblem(menus, budget), granularity=64)
            if result.feasible:
                assert result.total_bytes <= budget

    def test_infeasible_reports_all_minimum(self):
        menus = [
            [Candidate(300, 0.9), Candidate(100, 0.2)],
            [Candidate(50, 0.5)],
        ]
        result = allocate(AllocationProblem(menus, 120), granularity=1)
        assert not result.feasible
        assert result.chosen == [1, 0]
        assert result.total_bytes == 150

    def test_zero_budget_with_zero_cost_candidates(self):
        menus = [[Candidate(0, 0.25), Candidate(10, 0.5)]]
        result = allocate(AllocationProblem(menus, 0), granularity=1)
        assert result.feasible
        assert result.chosen == [0]


class TestProperties:
    def test_monotone_in_budget(self):
        rng = np.random.default_rng(2)
        menus = _dyadic_menus(rng, 12, 4, max_bytes=1000)
        prev = -1.0
        for budget in range(0, 14000, 700):
            result = allocate(AllocationProblem(menus, budget), granularity=64)
            if result.feasible:
                assert result.total_quality >= prev
                prev = result.total_quality

    def test_dominated_candidates_never_change_the_outcome(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            menus = _dyadic_menus(rng, 5, 4)
            budget = int(rng.integers(100, 1200))
            full = allocate(AllocationProblem(menus, budget), granularity=1)
            pruned_menus = []
            for menu in menus:
                pruned = [
                    c
                    for c in menu
                    if not any(
                        o.bytes < c.bytes and o.quality >= c.quality for o in menu
                    )
                ]
                pruned_menus.append(pruned)
            pruned_res = allocate(AllocationProblem(pruned_menus, budget), granularity=1)
            assert pruned_res.feasible == full.feasible
            if full.feasible:
                assert pruned_res.total_quality == full.total_quality
                assert pruned_res.total_bytes == full.total_bytes

    def test_tie_break_prefers_fewer_bytes_then_lex_smallest(self):
        menus = [
            [Candidate(100, 0.5), Candidate(50, 0.5)],
            [Candidate(10, 0.25), Candidate(10, 0.25)],
        ]
        result = allocate(AllocationProblem(menus, 1000), granularity=1)
        assert result.chosen == [1, 0]


class TestBudgetFromBpp:
    def test_low_rate_task_budget(self):
        assert budget_from_bpp(0.15, [768 * 512]) == 7372

    def test_eight_bpp_small_image(self):
        assert budget_from_bpp(8.0, [100]) == 100

    def test_empty_dataset(self):
        assert budget_from_bpp(0.5, []) == 0

    def test_published_point_consistency(self):
        budget = budget_from_bpp(0.148, [768 * 512])
        assert budget == math.floor(0.148 * 768 * 512 / 8.0)
        assert 8.0 * budget / (768 * 512) == pytest.approx(0.148, abs=1e-4)

    def test_nonpositive_bpp_rejected(self):
        with pytest.raises(ValueError):
            budget_from_bpp(0.0, [100])


class TestValidation:
    def test_empty_problem(self):
        with pytest.raises(ValueError):
            AllocationProblem([], 100)

    def test_empty_menu(self):
        with pytest.raises(ValueError):
            AllocationProblem([[]], 100)

    def test_bad_candidate(self):
        with pytest.raises(ValueError):
            Candidate(-1, 0.5)
        with pytest.raises(ValueError):
            Candidate(10, 1.5)

    def test_bad_granularity(self):
        problem = AllocationProblem([[Candidate(1, 0.1)]], 10)
        with pytest.raises(ValueError):
            allocate(problem, granularity=0)


class TestRecords:
    def test_read_menus(self, tmp_path):
        p = tmp_path / "menus.txt"
        p.write_text(
            "# image candidate bytes quality\n"
            "img1 m0 120 0.91\n"
            "img1 m1 240 0.95\n"
            "\n"
            "img2 m0 80 0.88\n"
        )
        ids, cand_ids, menus = read_menus(str(p))
        assert ids == ["img1", "img2"]
        assert cand_ids[0] == ["m0", "m1"]
        assert menus[0][1] == Candidate(240, 0.95)

    def test_bad_line_rejected(self, tmp_path):
        p = tmp_path / "menus.txt"
        p.write_text("img1 m0 120\n")
        with pytest.raises(ValueError):
            read_menus(str(p))

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "menus.txt"
        p.write_text("# nothing\n")
        with pytest.raises(ValueError):
            read_menus(str(p))
