"""Cardinality-constrained binary least squares for device selection.

Each candidate device contributes one column of A: the label histogram of the
batch it would train on next.  Picking L_sel devices means picking a binary
x with exactly L_sel ones, and a good pick makes the aggregate histogram Ax
land close to the target y (the estimated global distribution scaled to the
selection's sample count, minus whatever the pre-sampled devices already
contribute).  The solver is a greedy binary permutation method: start from a
feasible x, repeatedly swap the most promising 0 with the least promising 1
(judged by the least-squares gradient), keep the swap only if the residual
norm strictly drops, and stop at the first non-improving swap.

The gradient used for ranking is g = A^T (A x - y).  The exact gradient of
||Ax - y|| carries an extra 1/||Ax - y|| factor, which is positive and so
cannot change which coordinate is smallest or largest; dropping it removes
the r = 0 singularity with no behavioral change.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import ClassCounts, ClassDistribution
from .errors import (
    DegenerateProblemError,
    LengthMismatchError,
    MalformedInstanceError,
    NoFeasiblePairError,
    ShapeMismatchError,
    UnequalBatchSizesError,
)

_PINV_RCOND = 1e-10
_INITS = ("mpinv", "zero", "random")


@dataclass(eq=False)
class SelectionProblem:
    """One selection instance: histogram matrix A (F x alpha), target y, L_sel."""

    A: np.ndarray
    y: np.ndarray
    L_sel: int
    selected_total: Optional[float] = None  # sample count behind y, for divergence reporting

    def __post_init__(self):
        A = np.asarray(self.A)
        if A.ndim != 2 or A.shape[0] < 1:
            raise ShapeMismatchError(f"A must be a 2-D F x alpha matrix, got shape {A.shape}")
        if A.shape[1] < 1:
            raise DegenerateProblemError("no candidate columns")
        if not np.issubdtype(A.dtype, np.integer):
            as_float = np.asarray(A, dtype=np.float64)
            if not np.array_equal(np.rint(as_float), as_float):
                raise ShapeMismatchError("A must hold integer label counts")
            A = as_float.astype(np.int64)
        if np.any(A < 0):
            raise ShapeMismatchError("A must be non-negative")
        y = np.asarray(self.y, dtype=np.float64)
        if y.shape != (A.shape[0],):
            raise LengthMismatchError(f"y must have length F={A.shape[0]}, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ShapeMismatchError("y must be finite")
        self.L_sel = int(self.L_sel)
        if not 0 <= self.L_sel <= A.shape[1]:
            raise DegenerateProblemError(
                f"need 0 <= L_sel <= alpha, got L_sel={self.L_sel}, alpha={A.shape[1]}"
            )
        self.A = A.astype(np.int64)
        self.y = y

    @property
    def classes(self) -> int:
        return int(self.A.shape[0])

    @property
    def alpha(self) -> int:
        return int(self.A.shape[1])


@dataclass(eq=False)
class SolverTrace:
    """Objective after the initializer and after every accepted swap."""

    init_name: str
    objectives: list = field(default_factory=list)
    flips: list = field(default_factory=list)  # (index flipped 0->1, index flipped 1->0)


@dataclass(eq=False)
class SelectionSolution:
    x: np.ndarray
    objective: float
    iterations: int  # accepted swaps
    elapsed: float  # seconds


def objective(A, x, y) -> float:
    """Residual norm ||Ax - y||."""
    return float(np.linalg.norm(np.asarray(A, dtype=np.float64) @ np.asarray(x, dtype=np.float64) - y))


def gradient(problem: SelectionProblem, x) -> np.ndarray:
    """Ranking gradient A^T (Ax - y); same argmin/argmax as the exact gradient."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (problem.alpha,):
        raise ShapeMismatchError(f"x has shape {x.shape}, expected ({problem.alpha},)")
    A = problem.A.astype(np.float64)
    return A.T @ (A @ x - problem.y)


def select_permutation_pair(g, x) -> Tuple[int, int]:
    """Pick the swap (zero with smallest gradient, one with largest gradient).

    Ties break to the lowest index.  Raises NoFeasiblePairError when x has no
    zero or no one to swap.
    """
    g = np.asarray(g, dtype=np.float64)
    x = np.asarray(x)
    if g.shape != x.shape:
        raise LengthMismatchError(f"gradient and x differ in shape: {g.shape} vs {x.shape}")
    zeros = np.flatnonzero(x == 0)
    ones = np.flatnonzero(x == 1)
    if zeros.size == 0 or ones.size == 0:
        raise NoFeasiblePairError("need at least one zero and one one to permute")
    # np.argmin/argmax already return the first (lowest-index) extremum.
    i_up = int(zeros[np.argmin(g[zeros])])
    i_down = int(ones[np.argmax(g[ones])])
    return i_up, i_down


def init_random(problem: SelectionProblem, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random feasible start: L_sel ones."""
    x = np.zeros(problem.alpha, dtype=np.int64)
    chosen = rng.choice(problem.alpha, size=problem.L_sel, replace=False)
    x[chosen] = 1
    return x


def init_zero(problem: SelectionProblem) -> np.ndarray:
    """Greedy warm start: from all zeros, raise the best coordinate L_sel times.

    Each step recomputes the gradient at the current x and flips the zero with
    the smallest gradient entry (ties to the lowest index).
    """
    A = problem.A.astype(np.float64)
    x = np.zeros(problem.alpha, dtype=np.int64)
    r = -problem.y.copy()  # residual Ax - y with x = 0
    for _ in range(problem.L_sel):
        g = A.T @ r
        zeros = np.flatnonzero(x == 0)
        i = int(zeros[np.argmin(g[zeros])])
        x[i] = 1
        r += A[:, i]
    return x


def init_mpinv(problem: SelectionProblem) -> np.ndarray:
    """Least-squares start: threshold the pseudoinverse solution.

    Solves the unconstrained relaxation x~ = pinv(A) y, then sets the L_sel
    largest entries to one.  Equal values resolve to the lowest index.
    """
    x_relaxed = np.linalg.pinv(problem.A.astype(np.float64), rcond=_PINV_RCOND) @ problem.y
    order = np.argsort(-x_relaxed, kind="stable")
    x = np.zeros(problem.alpha, dtype=np.int64)
    x[order[: problem.L_sel]] = 1
    return x


def gbp_cs(
    problem: SelectionProblem,
    init: str = "mpinv",
    rng: Optional[np.random.Generator] = None,
    max_steps: Optional[int] = None,
) -> Tuple[SelectionSolution, SolverTrace]:
    """Greedy binary permutation under a fixed cardinality.

    Runs the chosen initializer, then swap steps.  A swap is kept only if the
    residual norm strictly decreases; the first rejected swap ends the run.
    Also stops on an exact zero residual or after ``max_steps`` accepted swaps
    (default 10 * alpha).  Returns the last accepted x and the step trace.
    Boundary cardinalities (L_sel of 0 or alpha) admit a single feasible x,
    returned with zero swaps.
    """
    if init not in _INITS:
        raise ValueError(f"unknown init {init!r}, expected one of {_INITS}")
    if max_steps is None:
        max_steps = 10 * problem.alpha
    start = time.perf_counter()

    if problem.L_sel in (0, problem.alpha):
        x = np.full(problem.alpha, 1 if problem.L_sel else 0, dtype=np.int64)
        d = objective(problem.A, x, problem.y)
        trace = SolverTrace(init_name=init, objectives=[d])
        return (
            SelectionSolution(x=x, objective=d, iterations=0, elapsed=time.perf_counter() - start),
            trace,
        )

    if init == "mpinv":
        x = init_mpinv(problem)
    elif init == "zero":
        x = init_zero(problem)
    else:
        if rng is None:
            raise ValueError("init='random' requires an rng")
        x = init_random(problem, rng)

    A = problem.A.astype(np.float64)
    r = A @ x - problem.y
    d = float(np.linalg.norm(r))
    trace = SolverTrace(init_name=init, objectives=[d])

    steps = 0
    while steps < max_steps and d > 0.0:
        g = A.T @ r
        i_up, i_down = select_permutation_pair(g, x)
        r_next = r + A[:, i_up] - A[:, i_down]
        d_next = float(np.linalg.norm(r_next))
        if not d_next < d:
            break
        x[i_up], x[i_down] = 1, 0
        r, d = r_next, d_next
        steps += 1
        trace.objectives.append(d)
        trace.flips.append((i_up, i_down))

    solution = SelectionSolution(
        x=x, objective=d, iterations=steps, elapsed=time.perf_counter() - start
    )
    return solution, trace


def build_problem(
    candidates: Sequence,
    presampled_total,
    p_real: ClassDistribution,
    n: int,
    L: int,
    L_sel: int,
    allow_unequal: bool = False,
) -> SelectionProblem:
    """Assemble a selection instance from next-batch histograms.

    ``candidates`` are the histograms of the alpha selectable devices (one per
    column of A); ``presampled_total`` is the summed histogram b of the
    devices already chosen uniformly.  The target is y = n*L*p_real - b.

    The model assumes every batch holds n samples; histograms that break that
    raise UnequalBatchSizesError.  With ``allow_unequal`` the target instead
    scales p_real by the expected selection total (b plus L_sel times the
    mean candidate batch size), which keeps the normalized objective
    meaningful when batch sizes drift.
    """
    cols = [np.asarray(c.counts if hasattr(c, "counts") else c, dtype=np.int64) for c in candidates]
    if not cols:
        raise DegenerateProblemError("no candidate columns")
    F = p_real.classes
    for c in cols:
        if c.shape != (F,):
            raise LengthMismatchError(f"candidate histogram shape {c.shape} does not match F={F}")
    A = np.stack(cols, axis=1)
    if presampled_total is None:
        b = np.zeros(F, dtype=np.float64)
    else:
        b = np.asarray(
            presampled_total.counts if hasattr(presampled_total, "counts") else presampled_total,
            dtype=np.float64,
        )
        if b.shape != (F,):
            raise LengthMismatchError(f"presampled total shape {b.shape} does not match F={F}")
    if L_sel > L:
        raise DegenerateProblemError(f"L_sel={L_sel} exceeds L={L}")

    col_totals = A.sum(axis=0)
    b_total = float(b.sum())
    if not allow_unequal:
        if np.any(col_totals != n):
            raise UnequalBatchSizesError(
                f"candidate batch sizes {sorted(set(col_totals.tolist()))} != n={n}"
            )
        if b_total != n * (L - L_sel):
            raise UnequalBatchSizesError(
                f"presampled total {b_total} != n*(L - L_sel) = {n * (L - L_sel)}"
            )
        selected_total = float(n * L)
    else:
        selected_total = b_total + L_sel * float(col_totals.mean())
    y = selected_total * p_real.probs - b
    return SelectionProblem(A=A, y=y, L_sel=L_sel, selected_total=selected_total)


def selection_divergence(problem: SelectionProblem, x) -> float:
    """Distance between the selection's label distribution and the target's.

    Equals ||Ax - y|| / s with s the sample total behind y, which for equal
    batch sizes is exactly the L2 divergence between normalized histograms.
    Instances that do not carry a sample total fall back to s = sum(y), exact
    whenever no pre-sampled contribution was subtracted from the target.
    """
    total = problem.selected_total
    if total is None:
        total = float(problem.y.sum())
    if total <= 0:
        raise DegenerateProblemError("no positive sample total to normalize by")
    return objective(problem.A, x, problem.y) / float(total)


# ---------------------------------------------------------------------------
# Serialization.  Instances travel as JSON with row-major A.


def problem_to_json(problem: SelectionProblem) -> str:
    payload = {
        "F": problem.classes,
        "alpha": problem.alpha,
        "L_sel": problem.L_sel,
        "A": problem.A.tolist(),
        "y": problem.y.tolist(),
    }
    if problem.selected_total is not None:
        payload["selected_total"] = float(problem.selected_total)
    return json.dumps(payload)


def problem_from_json(text: str) -> SelectionProblem:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedInstanceError(f"instance is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise MalformedInstanceError("instance must be a JSON object")
    for key in ("F", "alpha", "L_sel", "A", "y"):
        if key not in payload:
            raise MalformedInstanceError(f"instance is missing key {key!r}")
    F, alpha = payload["F"], payload["alpha"]
    if not (isinstance(F, int) and isinstance(alpha, int) and isinstance(payload["L_sel"], int)):
        raise MalformedInstanceError("F, alpha and L_sel must be integers")
    A = np.asarray(payload["A"])
    if A.shape != (F, alpha):
        raise MalformedInstanceError(f"A has shape {A.shape}, header says ({F}, {alpha})")
    if not np.issubdtype(A.dtype, np.integer):
        raise MalformedInstanceError("A must hold integers")
    y = np.asarray(payload["y"], dtype=np.float64)
    if y.shape != (F,):
        raise MalformedInstanceError(f"y has length {y.size}, header says {F}")
    total = payload.get("selected_total")
    try:
        return SelectionProblem(A=A, y=y, L_sel=payload["L_sel"], selected_total=total)
    except (ShapeMismatchError, LengthMismatchError, DegenerateProblemError) as exc:
        raise MalformedInstanceError(str(exc)) from exc


def save_problem(problem: SelectionProblem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(problem_to_json(problem))
        fh.write("\n")


def load_problem(path) -> SelectionProblem:
    with open(path, "r", encoding="utf-8") as fh:
        return problem_from_json(fh.read())
