"""Baseline selection strategies and the benchmark harness.

Four reference ways to pick L_sel columns: a single uniform draw, a best-of-N
uniform search, exhaustive enumeration, and a genetic algorithm.  All share
the objective ||Ax - y|| from the selection module, so their results are
directly comparable with the permutation solver's.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ClassDistribution
from .errors import FedgsError, InstanceTooLargeError
from .rng import substream
from .selection import (
    SelectionProblem,
    build_problem,
    gbp_cs,
    objective,
    selection_divergence,
)

BRUTE_DEFAULT_CAP = 5_000_000
_CHUNK = 500_000


@dataclass(eq=False)
class SamplerResult:
    sampler: str
    x: np.ndarray
    objective: float
    evaluations: int
    wall_ms: float


def _draw(problem: SelectionProblem, rng: np.random.Generator) -> np.ndarray:
    x = np.zeros(problem.alpha, dtype=np.int64)
    x[rng.choice(problem.alpha, size=problem.L_sel, replace=False)] = 1
    return x


def sample_random(problem: SelectionProblem, rng: np.random.Generator) -> SamplerResult:
    """One uniform feasible draw."""
    start = time.perf_counter()
    x = _draw(problem, rng)
    obj = objective(problem.A, x, problem.y)
    return SamplerResult("random", x, obj, 1, (time.perf_counter() - start) * 1e3)


def sample_monte_carlo(
    problem: SelectionProblem, rng: np.random.Generator, trials: int = 1000
) -> SamplerResult:
    """Best of ``trials`` uniform draws.

    Uses the same draw helper as sample_random, so trials=1 with the same
    stream reproduces the single-draw sampler exactly.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    start = time.perf_counter()
    best_x, best_obj = None, np.inf
    for _ in range(trials):
        x = _draw(problem, rng)
        obj = objective(problem.A, x, problem.y)
        if obj < best_obj:
            best_x, best_obj = x, obj
    return SamplerResult(
        "monte_carlo", best_x, best_obj, trials, (time.perf_counter() - start) * 1e3
    )


def _combinations(m: int, k: int) -> np.ndarray:
    """All k-subsets of range(m) in lexicographic order, one row each."""
    if k == 0:
        return np.zeros((1, 0), dtype=np.int32)
    if k > m:
        return np.zeros((0, k), dtype=np.int32)
    rows = np.arange(m - k + 1, dtype=np.int32).reshape(-1, 1)
    for col in range(1, k):
        last = rows[:, -1].astype(np.int64)
        counts = (m - k + col) - last  # extensions available per row
        idx = np.repeat(np.arange(rows.shape[0]), counts)
        group_starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        within = np.arange(counts.sum(), dtype=np.int64) - np.repeat(group_starts, counts)
        ext = (np.repeat(last + 1, counts) + within).astype(np.int32)
        rows = np.concatenate([rows[idx], ext.reshape(-1, 1)], axis=1)
    return rows


def sample_brute(problem: SelectionProblem, cap: Optional[int] = BRUTE_DEFAULT_CAP) -> SamplerResult:
    """Exhaustive minimum over every feasible subset.

    Refuses instances whose subset count exceeds ``cap`` (pass None to lift
    the limit).  The scan evaluates squared objectives through the Gram
    matrix G = A^T A, then recomputes the winner's objective directly.
    """
    alpha, k = problem.alpha, problem.L_sel
    n_subsets = math.comb(alpha, k)
    if cap is not None and n_subsets > cap:
        raise InstanceTooLargeError(
            f"C({alpha},{k}) = {n_subsets} subsets exceeds cap {cap}"
        )
    start = time.perf_counter()
    A = problem.A.astype(np.float64)
    y = problem.y
    G = A.T @ A
    c = A.T @ y
    yy = float(y @ y)

    best_obj2, best_idx = np.inf, None
    if k == 1:
        objs2 = np.diagonal(G) - 2.0 * c + yy
        i = int(np.argmin(objs2))
        best_obj2, best_idx = float(objs2[i]), np.array([i])
    else:
        # Subsets grouped by smallest element i1; the remaining k-1 indices are
        # combinations of the tail, read off one master table by prefix length.
        master = _combinations(alpha - 1, k - 1)
        master_last = master[:, -1]
        for i1 in range(alpha - k + 1):
            tail = master[master_last < (alpha - 1 - i1)] + np.int32(i1 + 1)
            for lo in range(0, tail.shape[0], _CHUNK):
                I = tail[lo : lo + _CHUNK]
                pair = G[I[:, :, None], I[:, None, :]].sum(axis=(1, 2))
                cross = 2.0 * G[i1][I].sum(axis=1)
                csum = c[I].sum(axis=1)
                objs2 = pair + cross + G[i1, i1] - 2.0 * (csum + c[i1]) + yy
                j = int(np.argmin(objs2))
                if objs2[j] < best_obj2:
                    best_obj2 = float(objs2[j])
                    best_idx = np.concatenate(([i1], I[j]))

    x = np.zeros(alpha, dtype=np.int64)
    x[best_idx] = 1
    obj = objective(problem.A, x, problem.y)  # exact recompute, no Gram roundoff
    return SamplerResult("brute", x, obj, n_subsets, (time.perf_counter() - start) * 1e3)


def _repair(x: np.ndarray, L_sel: int, rng: np.random.Generator) -> np.ndarray:
    ones = np.flatnonzero(x == 1)
    if ones.size > L_sel:
        drop = rng.choice(ones, size=ones.size - L_sel, replace=False)
        x[drop] = 0
    elif ones.size < L_sel:
        zeros = np.flatnonzero(x == 0)
        raise_ = rng.choice(zeros, size=L_sel - ones.size, replace=False)
        x[raise_] = 1
    return x


def sample_genetic(
    problem: SelectionProblem,
    rng: np.random.Generator,
    pop_size: int = 100,
    generations: int = 100,
    mutation_rate: float = 0.001,
) -> SamplerResult:
    """Genetic search over feasible subsets.

    Tournament-of-two parents, one-point crossover with cardinality repair,
    per-individual mutation as a random (1,0) pair swap, one elite carried
    unchanged per generation.
    """
    start = time.perf_counter()
    A = problem.A.astype(np.float64)
    alpha, k = problem.alpha, problem.L_sel

    pop = np.stack([_draw(problem, rng) for _ in range(pop_size)])
    objs = np.linalg.norm(pop @ A.T - problem.y, axis=1)
    evals = pop_size
    best_i = int(np.argmin(objs))
    best_x, best_obj = pop[best_i].copy(), float(objs[best_i])

    for _ in range(generations):
        children = np.empty_like(pop)
        children[0] = best_x  # elite
        for slot in range(1, pop_size):
            a, b = rng.integers(0, pop_size, size=2)
            p1 = pop[a] if objs[a] <= objs[b] else pop[b]
            a, b = rng.integers(0, pop_size, size=2)
            p2 = pop[a] if objs[a] <= objs[b] else pop[b]
            point = int(rng.integers(1, alpha))
            child = np.concatenate([p1[:point], p2[point:]])
            children[slot] = _repair(child, k, rng)
        # mutate (elite included is skipped: slot 0 stays intact)
        for slot in range(1, pop_size):
            if rng.random() < mutation_rate:
                ones = np.flatnonzero(children[slot] == 1)
                zeros = np.flatnonzero(children[slot] == 0)
                children[slot][rng.choice(ones)] = 0
                children[slot][rng.choice(zeros)] = 1
        pop = children
        objs = np.linalg.norm(pop @ A.T - problem.y, axis=1)
        evals += pop_size
        gen_i = int(np.argmin(objs))
        if objs[gen_i] < best_obj:
            best_x, best_obj = pop[gen_i].copy(), float(objs[gen_i])

    return SamplerResult("genetic", best_x, best_obj, evals, (time.perf_counter() - start) * 1e3)


def random_problem(
    rng: np.random.Generator,
    F: int = 10,
    alpha: int = 20,
    L_sel: int = 5,
    n: int = 32,
    L_rnd: int = 8,
    concentration: float = 0.5,
) -> SelectionProblem:
    """Draw a synthetic instance shaped like one simulator iteration.

    Every device gets a Dirichlet(concentration) label distribution and a
    multinomial next batch of n samples.  L_rnd of the drawn histograms play
    the pre-sampled cohort; the target distribution is the Dirichlet
    population mean (uniform), matching a global estimate pooled over many
    more devices than the alpha candidates at hand.
    """
    dists = rng.dirichlet(np.full(F, concentration), size=alpha + L_rnd)
    hists = rng.multinomial(n, dists)
    p_real = ClassDistribution(np.full(F, 1.0 / F))
    return build_problem(
        hists[:alpha],
        hists[alpha:].sum(axis=0),
        p_real,
        n=n,
        L=L_rnd + L_sel,
        L_sel=L_sel,
    )


def planted_problem(
    rng: np.random.Generator,
    F: int = 62,
    alpha: int = 33,
    L_sel: int = 8,
    n: int = 32,
    concentration: float = 0.5,
    noise: float = 0.5,
) -> SelectionProblem:
    """Draw an instance whose target sits near a known L_sel-subset.

    Columns are multinomial histograms as in random_problem; the target is
    the aggregate of a hidden random subset plus Gaussian noise, y = Ax* +
    noise * g.  Small noise keeps the planted subset optimal, so solver
    output can be compared against a near-ground-truth; larger noise blurs
    the planted optimum into a generic dense target.
    """
    dists = rng.dirichlet(np.full(F, concentration), size=alpha)
    A = rng.multinomial(n, dists).T
    planted = np.zeros(alpha, dtype=np.int64)
    planted[rng.choice(alpha, size=L_sel, replace=False)] = 1
    y = A @ planted + noise * rng.standard_normal(F)
    return SelectionProblem(A=A, y=y, L_sel=L_sel, selected_total=float(n * L_sel))


# ---------------------------------------------------------------------------
# Benchmark harness.

BENCH_COLUMNS = ("instance_id", "sampler", "objective", "divergence", "wall_ms", "evaluations", "status")
DEFAULT_BENCH_SAMPLERS = ("random", "monte_carlo", "genetic", "brute", "gbp_mpinv", "gbp_zero", "gbp_random")


def _run_one(name: str, problem: SelectionProblem, rng, brute_cap, mc_trials) -> SamplerResult:
    if name == "random":
        return sample_random(problem, rng)
    if name == "monte_carlo":
        return sample_monte_carlo(problem, rng, trials=mc_trials)
    if name == "brute":
        return sample_brute(problem, cap=brute_cap)
    if name == "genetic":
        return sample_genetic(problem, rng)
    if name.startswith("gbp_"):
        sol, _ = gbp_cs(problem, init=name[4:], rng=rng)
        return SamplerResult(name, sol.x, sol.objective, sol.iterations + 1, sol.elapsed * 1e3)
    raise ValueError(f"unknown sampler {name!r}")


def bench_samplers(
    problems: Sequence[SelectionProblem],
    seed: int,
    samplers: Sequence[str] = DEFAULT_BENCH_SAMPLERS,
    brute_cap: Optional[int] = BRUTE_DEFAULT_CAP,
    mc_trials: int = 1000,
) -> list:
    """Run every sampler on every instance; one row per (instance, sampler).

    A failing cell (for example brute over its cap) records an error status
    and the sweep continues.  Randomness is keyed per cell, so adding or
    removing samplers never shifts another cell's draw.
    """
    rows = []
    for idx, problem in enumerate(problems):
        for name in samplers:
            rng = substream(seed, "bench", idx, name)
            try:
                res = _run_one(name, problem, rng, brute_cap, mc_trials)
                rows.append(
                    {
                        "instance_id": idx,
                        "sampler": name,
                        "objective": res.objective,
                        "divergence": selection_divergence(problem, res.x),
                        "wall_ms": res.wall_ms,
                        "evaluations": res.evaluations,
                        "status": "ok",
                    }
                )
            except FedgsError as exc:
                rows.append(
                    {
                        "instance_id": idx,
                        "sampler": name,
                        "objective": "",
                        "divergence": "",
                        "wall_ms": "",
                        "evaluations": 0,
                        "status": f"error:{type(exc).__name__}",
                    }
                )
    return rows


def write_bench_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("objective", "divergence", "wall_ms"):
                if isinstance(out[key], float):
                    out[key] = repr(out[key])
            writer.writerow(out)
