"""Round-by-round simulation of the two training protocols.

The group-synchronized protocol: every iteration, each group pre-samples
L_rnd members uniformly, picks L_sel more with the configured selector so the
cohort's label mix tracks the population estimate, lets each pick take one
local step, and averages the group (weighted by data size).  Every T
iterations the groups' models merge in a plain mean.  The flat baseline skips
groups and selection: each round, M*L devices are drawn uniformly, walk T
steps locally, and merge once.

Determinism contract: every random draw comes from a substream keyed by the
master seed and the (iteration, group) or (round,) coordinates, so metrics
are a pure function of (data seed, sim config) regardless of worker count or
evaluation order.  Wall-clock measurements live only in the run summary,
never in the per-round metrics.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import divergence, estimate_global_distribution, normalize
from .datagen import SynthFederation, fetch_batch, peek_next_histogram, remaining_batches
from .errors import InsufficientEligibleDevicesError, InvalidConfigError
from .learn import (
    ModelParams,
    ModelSpec,
    evaluate,
    external_sync,
    init_params,
    internal_sync,
    local_step,
)
from .rng import substream
from .samplers import (
    BRUTE_DEFAULT_CAP,
    sample_brute,
    sample_genetic,
    sample_monte_carlo,
    sample_random,
)
from .selection import build_problem, gbp_cs
from .timecost import CostParams, fedavg_round_time, fedgs_round_time

SELECTORS = (
    "gbp_mpinv", "gbp_zero", "gbp_random",
    "random", "monte_carlo", "brute", "genetic",
)


@dataclass(eq=False)
class SimConfig:
    topology: object  # FederationTopology
    model: ModelSpec
    seed: int = 0
    selector: str = "gbp_mpinv"
    cost: Optional[CostParams] = None
    mc_trials: int = 1000
    brute_cap: Optional[int] = BRUTE_DEFAULT_CAP
    workers: int = 1

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise InvalidConfigError(f"selector must be one of {SELECTORS}, got {self.selector!r}")
        if self.workers < 1:
            raise InvalidConfigError("workers must be >= 1")
        if self.model.classes != self.topology.classes:
            raise InvalidConfigError(
                f"model has {self.model.classes} classes, topology has {self.topology.classes}"
            )


@dataclass(eq=False)
class RoundMetrics:
    """One aggregation round.  Every field is a pure function of the config."""

    round: int
    accuracy: float
    loss: float
    divergence_mean: float
    divergence_max: float
    sim_time: Optional[float]  # cumulative modelled seconds, None without a cost model


@dataclass(eq=False)
class RunResult:
    algo: str
    params: ModelParams
    metrics: list
    summary: dict


def divergence_probe(histograms, target) -> float:
    """Divergence between a cohort's pooled label mix and the target."""
    total = np.sum([np.asarray(h, dtype=np.float64) for h in histograms], axis=0)
    probs = target.probs if hasattr(target, "probs") else np.asarray(target, dtype=np.float64)
    return divergence(normalize(total), probs)


def _solve_selection(problem, selector: str, rng, mc_trials, brute_cap):
    if selector.startswith("gbp_"):
        solution, _ = gbp_cs(problem, init=selector[4:], rng=rng)
        return solution.x
    if selector == "random":
        return sample_random(problem, rng).x
    if selector == "monte_carlo":
        return sample_monte_carlo(problem, rng, trials=mc_trials).x
    if selector == "brute":
        return sample_brute(problem, cap=brute_cap).x
    return sample_genetic(problem, rng).x


def _eligible(streams, need: int, where: str):
    ok = [s for s in streams if remaining_batches(s) >= 1]
    if len(ok) < need:
        raise InsufficientEligibleDevicesError(
            f"{where}: {len(ok)} devices have data, need {need}"
        )
    return ok


def _group_cohort(group_streams, topo, p_real, t: int, m: int, seed: int, config):
    """Choose this group's cohort for iteration t.  Returns (streams, divergence)."""
    L, L_rnd, L_sel = (
        topo.selected_per_group,
        topo.presampled_per_group,
        topo.optimized_per_group,
    )
    eligible = _eligible(group_streams, L, f"group {m}, iteration {t}")
    pre_rng = substream(seed, "presample", t, m)
    pre_idx = pre_rng.choice(len(eligible), size=L_rnd, replace=False) if L_rnd else np.array([], dtype=np.int64)
    pre = [eligible[i] for i in pre_idx]
    pool = [s for i, s in enumerate(eligible) if i not in set(int(j) for j in pre_idx)]

    pre_hists = [peek_next_histogram(s) for s in pre]
    if L_sel == 0:
        chosen = pre
        cohort_hists = pre_hists
    elif len(pool) == L_sel:
        chosen = pre + pool  # no freedom left, selection is forced
        cohort_hists = pre_hists + [peek_next_histogram(s) for s in pool]
    else:
        cand_hists = [peek_next_histogram(s) for s in pool]
        problem = build_problem(
            cand_hists,
            np.sum(pre_hists, axis=0) if pre_hists else None,
            p_real,
            n=topo.batch_size,
            L=L,
            L_sel=L_sel,
        )
        sel_rng = substream(seed, "select", t, m)
        x = _solve_selection(problem, config.selector, sel_rng, config.mc_trials, config.brute_cap)
        picked = np.flatnonzero(x == 1)
        chosen = pre + [pool[i] for i in picked]
        cohort_hists = pre_hists + [cand_hists[i] for i in picked]
    return chosen, divergence_probe(cohort_hists, p_real)


def run_fedgs(fed: SynthFederation, config: SimConfig) -> RunResult:
    """Simulate the group-synchronized protocol; consumes the federation's streams."""
    topo = config.topology
    _check_federation(fed, topo)
    params = init_params(config.model, substream(config.seed, "model_init"))
    p_real = estimate_global_distribution(fed.initial_device_counts())
    by_group = [[s for s in fed.streams if s.group == m] for m in range(topo.groups)]

    group_models = [params.copy() for _ in range(topo.groups)]
    metrics = []
    divs: list = []
    select_wall = 0.0
    sim_time = 0.0 if config.cost is not None else None
    wall_start = time.perf_counter()
    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for r in range(topo.rounds):
            round_divs = []
            for t_in in range(topo.iterations_per_round):
                t = r * topo.iterations_per_round + t_in
                sel_start = time.perf_counter()
                job = lambda m: _group_cohort(
                    by_group[m], topo, p_real, t, m, config.seed, config
                )
                if pool is not None:
                    cohorts = list(pool.map(job, range(topo.groups)))
                else:
                    cohorts = [job(m) for m in range(topo.groups)]
                select_wall += time.perf_counter() - sel_start
                for m, (chosen, div) in enumerate(cohorts):
                    round_divs.append(div)
                    locals_, sizes = [], []
                    for s in chosen:
                        batch = fetch_batch(s)
                        locals_.append(local_step(group_models[m], batch, topo.learning_rate))
                        sizes.append(len(batch))
                    group_models[m] = internal_sync(locals_, sizes)
            merged = external_sync(group_models)
            group_models = [merged.copy() for _ in range(topo.groups)]
            acc, loss = evaluate(merged, fed.test.x, fed.test.y)
            if sim_time is not None:
                sim_time += fedgs_round_time(config.cost)
            metrics.append(
                RoundMetrics(
                    round=r + 1, accuracy=acc, loss=loss,
                    divergence_mean=float(np.mean(round_divs)),
                    divergence_max=float(np.max(round_divs)),
                    sim_time=sim_time,
                )
            )
            divs.extend(round_divs)
            params = merged
    finally:
        if pool is not None:
            pool.shutdown()
    summary = _summarize("fedgs", config, metrics, divs, select_wall, time.perf_counter() - wall_start)
    return RunResult("fedgs", params, metrics, summary)


def run_fedavg(fed: SynthFederation, config: SimConfig) -> RunResult:
    """Simulate the flat baseline: uniform cohorts, T local steps, one merge."""
    topo = config.topology
    _check_federation(fed, topo)
    params = init_params(config.model, substream(config.seed, "model_init"))
    p_real = estimate_global_distribution(fed.initial_device_counts())
    cohort_size = topo.groups * topo.selected_per_group
    T = topo.iterations_per_round

    metrics = []
    divs: list = []
    sim_time = 0.0 if config.cost is not None else None
    wall_start = time.perf_counter()
    for r in range(topo.rounds):
        ready = [s for s in fed.streams if remaining_batches(s) >= T]
        if len(ready) < cohort_size:
            raise InsufficientEligibleDevicesError(
                f"round {r}: {len(ready)} devices can run {T} steps, need {cohort_size}"
            )
        rng = substream(config.seed, "fedavg_select", r)
        chosen = [ready[i] for i in rng.choice(len(ready), size=cohort_size, replace=False)]
        locals_, sizes, hists = [], [], []
        for s in chosen:
            local = params
            seen = 0
            for _ in range(T):
                batch = fetch_batch(s)
                hists.append(batch.label_histogram(topo.classes))
                local = local_step(local, batch, topo.learning_rate)
                seen += len(batch)
            locals_.append(local)
            sizes.append(seen)
        params = internal_sync(locals_, sizes)
        div = divergence_probe(hists, p_real)
        divs.append(div)
        acc, loss = evaluate(params, fed.test.x, fed.test.y)
        if sim_time is not None:
            sim_time += fedavg_round_time(config.cost)
        metrics.append(
            RoundMetrics(
                round=r + 1, accuracy=acc, loss=loss,
                divergence_mean=div, divergence_max=div, sim_time=sim_time,
            )
        )
    summary = _summarize("fedavg", config, metrics, divs, 0.0, time.perf_counter() - wall_start)
    return RunResult("fedavg", params, metrics, summary)


def _check_federation(fed: SynthFederation, topo) -> None:
    if fed.classes != topo.classes:
        raise InvalidConfigError(f"data has {fed.classes} classes, topology says {topo.classes}")
    counts = np.zeros(topo.groups, dtype=np.int64)
    for s in fed.streams:
        if not 0 <= s.group < topo.groups:
            raise InvalidConfigError(f"stream group {s.group} outside 0..{topo.groups - 1}")
        counts[s.group] += 1
    for m, (have, want) in enumerate(zip(counts, topo.group_sizes)):
        if have != want:
            raise InvalidConfigError(f"group {m} has {have} devices, topology says {want}")


def _summarize(algo, config, metrics, divs, select_wall, wall) -> dict:
    return {
        "algo": algo,
        "selector": config.selector if algo == "fedgs" else "uniform",
        "seed": config.seed,
        "rounds": len(metrics),
        "final_accuracy": metrics[-1].accuracy if metrics else None,
        "final_loss": metrics[-1].loss if metrics else None,
        "best_accuracy": max((m.accuracy for m in metrics), default=None),
        "mean_divergence": float(np.mean(divs)) if divs else None,
        "total_sim_time": metrics[-1].sim_time if metrics else None,
        "select_wall_s": select_wall,
        "wall_s": wall,
    }


# ---------------------------------------------------------------------------
# Metrics IO: JSON lines per round (deterministic), one-row-per-run CSV.

SUMMARY_COLUMNS = (
    "algo", "selector", "seed", "rounds", "final_accuracy", "final_loss",
    "best_accuracy", "mean_divergence", "total_sim_time", "select_wall_s", "wall_s",
)


def metrics_to_jsonl(metrics) -> str:
    lines = []
    for m in metrics:
        lines.append(
            json.dumps(
                {
                    "round": m.round,
                    "accuracy": m.accuracy,
                    "loss": m.loss,
                    "divergence_mean": m.divergence_mean,
                    "divergence_max": m.divergence_max,
                    "sim_time": m.sim_time,
                },
                sort_keys=True,
            )
        )
    return "".join(line + "\n" for line in lines)


def write_metrics_jsonl(metrics, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(metrics_to_jsonl(metrics))


def write_summary_csv(summaries, path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        for s in summaries:
            writer.writerow({k: s.get(k) for k in SUMMARY_COLUMNS})
