import math

import numpy as np
import pytest

from polopt import experiments, lqr
from polopt.mdp import Setup

SMALL_GRID = (-1.0, 1.5, -0.5, 2.5, 6)


@pytest.fixture(scope="module")
def system():
    return lqr.default_problem()


@pytest.fixture(scope="module")
def field(system):
    return experiments.vector_field(system)


@pytest.fixture(scope="module")
def gap_runs(system):
    return experiments.gap_experiment(system)


@pytest.fixture(scope="module")
def summary():
    return experiments.sweep((0.3, 1.0), (0.7, 0.99))[1]


class TestVectorField:
    def test_shape(self, field):
        n = experiments.DEFAULT_GRID[4]
        assert len(field) == n * n * len(experiments.FIELD_METHODS)
        assert all(len(r) == len(experiments.FIELD_HEADER) for r in field)

    def test_unstable_rows_are_nan(self, field):
        bad = [r for r in field if not r[10]]
        assert bad and all(math.isnan(v) for r in bad for v in r[5:10])
        good = [r for r in field if r[10]]
        assert all(abs(math.hypot(r[5], r[6]) - 1) < 1e-12 for r in good if r[9] > 0)

    def test_row_order(self, field):
        methods = [r[0] for r in field]
        n = experiments.DEFAULT_GRID[4] ** 2
        assert methods == [m for m in experiments.FIELD_METHODS for _ in range(n)]

    @pytest.mark.parametrize("setup, methods", [
        (Setup.average(), experiments.CORRECT_MU),
        (Setup.discounted(0.7), experiments.CORRECT_GAMMA),
    ], ids=["average", "discounted"])
    def test_vanishes_at_optimum(self, system, setup, methods):
        k_star = lqr.riccati_fixed_point(system, setup, np.array([[0.1, 0.8]])).ravel()
        # a one-step grid sits exactly on its lower corner
        grid = (k_star[0], k_star[0] + 1, k_star[1], k_star[1] + 1, 1)
        rows = experiments.vector_field(system, 0.7, grid, methods)
        assert len(rows) == len(methods)
        assert all(r[10] == 1 and r[9] < 1e-6 for r in rows)

    def test_hybrid_deviation(self, field):
        for hybrid in experiments.HYBRID:
            frac, n = experiments.deviation_fraction(field, "grad_J_gamma", hybrid)
            assert n > 0 and frac >= 0.2, (hybrid, frac)

    def test_unknown_method(self, system):
        with pytest.raises(ValueError, match="unknown method"):
            experiments.direction(system, np.array([[0.1, 0.8]]), "newton", 0.7)

    def test_needs_two_states(self):
        p = lqr.LqrProblem([[0.5]], [[1.0]], [[1.0]], [[1.0]], [[1.0]])
        with pytest.raises(ValueError):
            experiments.vector_field(p, grid=SMALL_GRID)


class TestGap:
    def test_correct_methods_converge(self, gap_runs):
        for run in gap_runs:
            if run.method in ("gradient", "npg"):
                assert run.status == "converged" and run.gaps[-1] < 1e-8, (run.setup, run.method)

    def test_average_hybrids_plateau(self, gap_runs):
        hybrids = [r for r in gap_runs if r.setup == "average" and r.method.startswith("hybrid")]
        assert len(hybrids) == 3
        for run in hybrids:
            assert run.gaps[-1] > 1e-3 * run.j_star, (run.method, run.gaps[-1])

    def test_rows(self, gap_runs):
        rows = experiments.gap_rows(gap_runs)
        assert all(len(r) == len(experiments.GAP_HEADER) for r in rows)
        assert sum(len(r.gaps) for r in gap_runs) + sum(r.status == "diverged" for r in gap_runs) == len(rows)
        statuses = {r[-1] for r in rows}
        assert statuses <= {"running", "converged", "stalled", "max_iters", "diverged"}

    def test_zero_iterations(self, system):
        runs = experiments.gap_experiment(system, max_iters=0, step_sizes=(1e-3,))
        for run in runs:
            j0 = lqr.objective(system, np.array([[0.1, 0.8]]), Setup.parse(run.setup))
            assert run.gaps == [pytest.approx(j0 - run.j_star)]

    def test_divergence_is_labelled(self, system):
        setup = Setup.average()
        k_star = lqr.riccati_fixed_point(system, setup, np.array([[0.1, 0.8]]))
        run = experiments.run_gap(system, "gradient", setup, 10.0, (0.1, 0.8), lqr.objective(system, k_star, setup))
        assert run.status == "diverged"
        run.j_star = 0.0
        assert experiments.gap_rows([run])[-1][-1] == "diverged"

    def test_ranking_prefers_fast_convergence(self):
        fast = experiments.GapRun("average", "gradient", 0.1, [1.0, 1e-13], [], "converged")
        slow = experiments.GapRun("average", "gradient", 0.01, [1.0, 0.5, 1e-13], [], "converged")
        stuck = experiments.GapRun("average", "gradient", 0.01, [1.0], [], "stalled")
        bad = experiments.GapRun("average", "gradient", 1.0, [1.0], [], "diverged")
        assert sorted([bad, stuck, slow, fast], key=experiments._rank) == [fast, slow, stuck, bad]


class TestSweep:
    def test_small_alpha_aligned(self, summary):
        for alpha, gamma, cos, n in summary:
            if alpha == 0.3:
                assert cos > 0.99 and n > 0

    def test_large_alpha_lower(self, summary):
        cos = {(a, g): c for a, g, c, _ in summary}
        assert cos[(1.0, 0.7)] < cos[(0.3, 0.7)]
        assert cos[(1.0, 0.7)] < cos[(0.3, 0.99)]

    def test_single_cell_matches_field(self, system):
        fields, _ = experiments.sweep((1.0,), (0.7,), SMALL_GRID)
        direct = experiments.vector_field(system, 0.7, SMALL_GRID)
        np.testing.assert_equal(fields[0][2], direct)
