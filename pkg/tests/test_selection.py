import itertools

import numpy as np
import pytest

from fedgs.core import ClassCounts, ClassDistribution, divergence, normalize
from fedgs.errors import (
    DegenerateProblemError,
    LengthMismatchError,
    MalformedInstanceError,
    NoFeasiblePairError,
    ShapeMismatchError,
    UnequalBatchSizesError,
)
from fedgs.rng import substream
from fedgs.samplers import random_problem, sample_brute
from fedgs.selection import (
    SelectionProblem,
    build_problem,
    gbp_cs,
    gradient,
    init_mpinv,
    init_random,
    init_zero,
    load_problem,
    objective,
    problem_from_json,
    problem_to_json,
    save_problem,
    select_permutation_pair,
    selection_divergence,
)


def small_problem(seed=0, F=6, alpha=10, L_sel=3):
    rng = substream(seed, "tsel")
    A = rng.integers(0, 12, size=(F, alpha))
    y = rng.uniform(0, 30, size=F)
    return SelectionProblem(A=A, y=y, L_sel=L_sel)


# ---------------------------------------------------------------------------
# problem construction


def test_problem_validation():
    A = np.array([[1, 2], [3, 4]])
    SelectionProblem(A=A, y=np.array([1.0, 2.0]), L_sel=1)
    with pytest.raises(LengthMismatchError):
        SelectionProblem(A=A, y=np.array([1.0, 2.0, 3.0]), L_sel=1)
    with pytest.raises(ShapeMismatchError):
        SelectionProblem(A=np.array([1, 2]), y=np.array([1.0]), L_sel=1)
    with pytest.raises(ShapeMismatchError):
        SelectionProblem(A=np.array([[1.5, 2.0]]), y=np.array([1.0]), L_sel=1)
    with pytest.raises(ShapeMismatchError):
        SelectionProblem(A=np.array([[-1, 2]]), y=np.array([1.0]), L_sel=1)
    with pytest.raises(ShapeMismatchError):
        SelectionProblem(A=A, y=np.array([np.nan, 1.0]), L_sel=1)


def test_problem_cardinality_bounds():
    A = np.array([[1, 2, 3], [4, 5, 6]])
    y = np.array([1.0, 2.0])
    # the whole feasible range, both ends included
    for L_sel in range(0, 4):
        p = SelectionProblem(A=A, y=y, L_sel=L_sel)
        assert p.alpha == 3 and p.classes == 2
    with pytest.raises(DegenerateProblemError):
        SelectionProblem(A=A, y=y, L_sel=4)
    with pytest.raises(DegenerateProblemError):
        SelectionProblem(A=A, y=y, L_sel=-1)
    with pytest.raises(DegenerateProblemError):
        SelectionProblem(A=np.zeros((2, 0), dtype=int), y=y, L_sel=0)


# ---------------------------------------------------------------------------
# objective and gradient


def test_objective_matches_norm():
    p = small_problem()
    x = np.array([1, 0, 1, 0, 1, 0, 0, 0, 0, 0])
    expected = np.sqrt(((p.A @ x - p.y) ** 2).sum())
    assert objective(p.A, x, p.y) == pytest.approx(expected, rel=1e-14)


def test_gradient_matches_finite_differences():
    # d/dx 0.5*||Ax - y||^2 via central differences on a relaxed x
    h = 1e-6
    for seed in range(10):
        p = small_problem(seed)
        rng = substream(seed, "fd")
        x = rng.uniform(0, 1, size=p.alpha)
        g = gradient(p, x)
        A = p.A.astype(float)
        f = lambda v: 0.5 * float(((A @ v - p.y) ** 2).sum())
        for i in range(p.alpha):
            e = np.zeros(p.alpha)
            e[i] = h
            fd = (f(x + e) - f(x - e)) / (2 * h)
            assert abs(fd - g[i]) <= 1e-5 * max(1.0, abs(g[i]))


def test_gradient_shape_check():
    p = small_problem()
    with pytest.raises(ShapeMismatchError):
        gradient(p, np.zeros(p.alpha + 1))


# ---------------------------------------------------------------------------
# permutation pair


def test_pair_matches_exhaustive_scan():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(2, 20))
        g = rng.normal(size=n)
        k = int(rng.integers(1, n))
        x = np.zeros(n, dtype=np.int64)
        x[rng.choice(n, size=k, replace=False)] = 1
        i_up, i_down = select_permutation_pair(g, x)
        zeros = [i for i in range(n) if x[i] == 0]
        ones = [i for i in range(n) if x[i] == 1]
        assert i_up == min(zeros, key=lambda i: (g[i], i))
        assert i_down == min(ones, key=lambda i: (-g[i], i))


def test_pair_ties_break_low():
    g = np.zeros(6)
    x = np.array([0, 1, 0, 1, 0, 1])
    assert select_permutation_pair(g, x) == (0, 1)


def test_pair_infeasible():
    with pytest.raises(NoFeasiblePairError):
        select_permutation_pair(np.zeros(3), np.ones(3, dtype=int))
    with pytest.raises(NoFeasiblePairError):
        select_permutation_pair(np.zeros(3), np.zeros(3, dtype=int))
    with pytest.raises(LengthMismatchError):
        select_permutation_pair(np.zeros(3), np.zeros(4, dtype=int))


# ---------------------------------------------------------------------------
# initializers


def test_init_random_cardinality_and_determinism():
    p = small_problem()
    x1 = init_random(p, substream(9, "a"))
    x2 = init_random(p, substream(9, "a"))
    assert x1.sum() == p.L_sel
    assert np.array_equal(x1, x2)


def test_init_zero_matches_greedy_resimulation():
    for seed in range(10):
        p = small_problem(seed, F=5, alpha=8, L_sel=4)
        x = init_zero(p)
        # replay: raise the zero with the smallest gradient, L_sel times
        A = p.A.astype(float)
        mine = np.zeros(p.alpha, dtype=np.int64)
        for _ in range(p.L_sel):
            g = A.T @ (A @ mine - p.y)
            cands = [(g[i], i) for i in range(p.alpha) if mine[i] == 0]
            mine[min(cands)[1]] = 1
        assert np.array_equal(x, mine)


def test_init_mpinv_matches_svd_oracle():
    for seed in range(10):
        p = small_problem(seed, F=7, alpha=12, L_sel=4)
        x = init_mpinv(p)
        # pseudoinverse rebuilt from the SVD with the same cutoff rule
        A = p.A.astype(float)
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        keep = s > 1e-10 * s.max()
        pinv = (Vt.T[:, keep] / s[keep]) @ U.T[keep]
        relaxed = pinv @ p.y
        order = np.argsort(-relaxed, kind="stable")
        expect = np.zeros(p.alpha, dtype=np.int64)
        expect[order[: p.L_sel]] = 1
        assert np.array_equal(x, expect)


def test_init_mpinv_recovers_plant_when_overdetermined():
    # tall A with full column rank: pinv(A) @ (A x*) == x* exactly
    rng = substream(4, "plant")
    A = rng.integers(0, 9, size=(30, 12))
    x_star = np.zeros(12, dtype=np.int64)
    x_star[rng.choice(12, size=4, replace=False)] = 1
    p = SelectionProblem(A=A, y=(A @ x_star).astype(float), L_sel=4)
    assert np.array_equal(init_mpinv(p), x_star)


# ---------------------------------------------------------------------------
# the solver


def test_gbp_returns_solution_and_trace():
    p = small_problem()
    sol, trace = gbp_cs(p)
    assert sol.x.sum() == p.L_sel
    assert trace.init_name == "mpinv"
    assert len(trace.objectives) == sol.iterations + 1
    assert len(trace.flips) == sol.iterations
    assert sol.objective == pytest.approx(trace.objectives[-1])


def test_gbp_strict_descent_and_exact_final():
    for seed in range(30):
        p = random_problem(substream(seed, "fz"))
        for init in ("mpinv", "zero", "random"):
            sol, trace = gbp_cs(p, init=init, rng=substream(seed, "fz", init))
            assert sol.x.sum() == p.L_sel
            diffs = np.diff(trace.objectives)
            assert np.all(diffs < 0)
            assert abs(objective(p.A, sol.x, p.y) - sol.objective) < 1e-9


def test_gbp_never_beats_exhaustive():
    for seed in range(20):
        rng = substream(seed, "small")
        p = random_problem(rng, F=5, alpha=10, L_sel=3, L_rnd=2)
        best = sample_brute(p).objective
        for init in ("mpinv", "zero"):
            sol, _ = gbp_cs(p, init=init)
            assert sol.objective >= best - 1e-12


def test_gbp_boundary_cardinalities_short_circuit():
    base = small_problem()
    for L_sel, fill in ((0, 0), (base.alpha, 1)):
        p = SelectionProblem(A=base.A, y=base.y, L_sel=L_sel)
        sol, trace = gbp_cs(p)
        assert sol.iterations == 0
        assert np.array_equal(sol.x, np.full(base.alpha, fill))
        assert len(trace.objectives) == 1


def test_gbp_max_steps_caps_iterations():
    p = random_problem(substream(1, "cap"))
    sol, _ = gbp_cs(p, init="random", rng=substream(1, "cap", "r"), max_steps=1)
    assert sol.iterations <= 1


def test_gbp_stops_at_zero_residual():
    A = np.array([[4, 1, 1], [0, 3, 1]])
    x_star = np.array([1, 0, 0])
    p = SelectionProblem(A=A, y=(A @ x_star).astype(float), L_sel=1)
    sol, _ = gbp_cs(p, init="mpinv")
    assert sol.objective == 0.0
    assert np.array_equal(sol.x, x_star)


def test_gbp_bad_args():
    p = small_problem()
    with pytest.raises(ValueError):
        gbp_cs(p, init="warm")
    with pytest.raises(ValueError):
        gbp_cs(p, init="random")  # rng required


# ---------------------------------------------------------------------------
# build_problem


def test_build_problem_target_formula():
    cands = [ClassCounts(np.array([20, 12])), ClassCounts(np.array([4, 28])), ClassCounts(np.array([16, 16]))]
    pre = ClassCounts(np.array([22, 10]))
    p_real = ClassDistribution(np.array([0.4, 0.6]))
    prob = build_problem(cands, pre, p_real, n=32, L=3, L_sel=2)
    # y = n * L * p_real - b
    assert np.allclose(prob.y, 96 * np.array([0.4, 0.6]) - np.array([22, 10]))
    assert prob.selected_total == 96.0
    assert prob.A.shape == (2, 3)
    assert prob.A[:, 1].tolist() == [4, 28]


def test_build_problem_no_presample():
    cands = [ClassCounts(np.array([8, 8])), ClassCounts(np.array([16, 0]))]
    p_real = ClassDistribution(np.array([0.5, 0.5]))
    prob = build_problem(cands, None, p_real, n=16, L=1, L_sel=1)
    assert np.allclose(prob.y, [8.0, 8.0])


def test_build_problem_rejects_unequal_batches():
    p_real = ClassDistribution(np.array([0.5, 0.5]))
    with pytest.raises(UnequalBatchSizesError):
        build_problem([ClassCounts(np.array([8, 7]))], None, p_real, n=16, L=1, L_sel=1)
    with pytest.raises(UnequalBatchSizesError):
        # presampled mass must equal n * L_rnd
        build_problem(
            [ClassCounts(np.array([8, 8]))],
            ClassCounts(np.array([3, 3])),
            p_real, n=16, L=2, L_sel=1,
        )


def test_build_problem_unequal_relaxation():
    p_real = ClassDistribution(np.array([0.5, 0.5]))
    prob = build_problem(
        [ClassCounts(np.array([8, 7])), ClassCounts(np.array([10, 11]))],
        ClassCounts(np.array([3, 3])),
        p_real, n=16, L=3, L_sel=1, allow_unequal=True,
    )
    # expected total: 6 presampled + 1 * mean(15, 21) = 24
    assert prob.selected_total == pytest.approx(24.0)
    assert np.allclose(prob.y, 24 * 0.5 - np.array([3.0, 3.0]))


def test_build_problem_errors():
    p_real = ClassDistribution(np.array([0.5, 0.5]))
    with pytest.raises(DegenerateProblemError):
        build_problem([], None, p_real, n=16, L=1, L_sel=1)
    with pytest.raises(DegenerateProblemError):
        build_problem([ClassCounts(np.array([8, 8]))], None, p_real, n=16, L=1, L_sel=2)
    with pytest.raises(LengthMismatchError):
        build_problem([ClassCounts(np.array([8, 4, 4]))], None, p_real, n=16, L=1, L_sel=1)


def test_selection_divergence_equals_distribution_distance():
    # with equal batches, objective / total is exactly the L2 divergence
    # between the cohort's label distribution and the target
    for seed in range(10):
        p = random_problem(substream(seed, "dv"), L_rnd=3)
        sol, _ = gbp_cs(p)
        b = 32 * 8 / 10 - p.y  # reconstruct the presampled histogram
        cohort = normalize(b + p.A @ sol.x)
        want = divergence(cohort, np.full(10, 0.1))
        assert selection_divergence(p, sol.x) == pytest.approx(want, abs=1e-12)


def test_selection_divergence_needs_positive_total():
    p = SelectionProblem(A=np.array([[1], [1]]), y=np.array([-1.0, -1.0]), L_sel=1)
    with pytest.raises(DegenerateProblemError):
        selection_divergence(p, np.array([1]))


# ---------------------------------------------------------------------------
# serialization


def test_json_round_trip():
    p = random_problem(substream(2, "io"))
    q = problem_from_json(problem_to_json(p))
    assert np.array_equal(p.A, q.A)
    assert np.allclose(p.y, q.y)
    assert p.L_sel == q.L_sel
    assert p.selected_total == q.selected_total


def test_file_round_trip(tmp_path):
    p = random_problem(substream(3, "io"))
    path = tmp_path / "inst.json"
    save_problem(p, path)
    q = load_problem(path)
    assert np.array_equal(p.A, q.A)
    assert np.allclose(p.y, q.y)


@pytest.mark.parametrize(
    "text",
    [
        "not json",
        "[1, 2]",
        '{"F": 2, "alpha": 1, "L_sel": 1, "A": [[1], [2]]}',  # missing y
        '{"F": 2, "alpha": 2, "L_sel": 1, "A": [[1], [2]], "y": [0.0, 0.0]}',  # shape lies
        '{"F": 2, "alpha": 1, "L_sel": 1, "A": [[1.5], [2.0]], "y": [0.0, 0.0]}',
        '{"F": 2, "alpha": 1, "L_sel": 1, "A": [[1], [2]], "y": [0.0]}',
        '{"F": 2, "alpha": 1, "L_sel": 2, "A": [[1], [2]], "y": [0.0, 0.0]}',  # L_sel > alpha
        '{"F": "2", "alpha": 1, "L_sel": 1, "A": [[1], [2]], "y": [0.0, 0.0]}',
    ],
)
def test_malformed_instances_rejected(text):
    with pytest.raises(MalformedInstanceError):
        problem_from_json(text)
