"""Analytic wall-time model for one training epoch of either protocol.

Links carry a model of S bits at rate B * log2(1 + gamma) (bandwidth times
spectral efficiency).  Per round, the grouped protocol pays one external
exchange for M group models plus T iterations of (selection, internal
exchange for L device models, computation); the flat baseline pays one
external exchange for M*L device models plus T computations.

With symmetric up/down bandwidths, one SNR everywhere, and free selection,
the grouped protocol wins exactly when T*L / (M*(L-1)) < B_int / B_ext; that
reduced test is what ``efficiency_condition`` reports.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import InvalidConfigError

_SYM_RTOL = 1e-12


@dataclass(eq=False)
class CostParams:
    """Inputs to the time model.  Bits, bits/second, seconds, linear SNR."""

    model_bits: float = 1e6
    groups: int = 10
    selected_per_group: int = 10
    iterations_per_round: int = 50
    bw_up_ext: float = 1e6
    bw_down_ext: float = 1e6
    bw_up_int: float = 1e7
    bw_down_int: float = 1e7
    snr_top: float = 10.0
    snr_bs: float = 10.0
    snr_device: float = 10.0
    t_compute: float = 0.01
    t_select: float = 0.0

    def __post_init__(self):
        if self.model_bits <= 0:
            raise InvalidConfigError("model_bits must be positive")
        if self.groups < 1 or self.selected_per_group < 1 or self.iterations_per_round < 1:
            raise InvalidConfigError("groups, selected_per_group, iterations_per_round must be >= 1")
        for name in ("bw_up_ext", "bw_down_ext", "bw_up_int", "bw_down_int"):
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be positive")
        for name in ("snr_top", "snr_bs", "snr_device"):
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be positive")
        if self.t_compute < 0 or self.t_select < 0:
            raise InvalidConfigError("t_compute and t_select must be non-negative")


def _rate(bw: float, snr: float) -> float:
    return bw * math.log2(1.0 + snr)


def comm_ext(p: CostParams) -> float:
    """External exchange: M group models up to the top, M back down."""
    S, M = p.model_bits, p.groups
    return S * M / _rate(p.bw_up_ext, p.snr_top) + S * M / _rate(p.bw_down_ext, p.snr_bs)


def comm_int(p: CostParams) -> float:
    """Internal exchange: L device models up to the group head, L back down."""
    S, L = p.model_bits, p.selected_per_group
    return S * L / _rate(p.bw_up_int, p.snr_bs) + S * L / _rate(p.bw_down_int, p.snr_device)


def fedgs_round_time(p: CostParams) -> float:
    return comm_ext(p) + p.iterations_per_round * (p.t_select + comm_int(p) + p.t_compute)


def fedavg_round_time(p: CostParams) -> float:
    """Flat baseline: M*L device models cross the external link, then T steps."""
    S, ML = p.model_bits, p.groups * p.selected_per_group
    ext = S * ML / _rate(p.bw_up_ext, p.snr_top) + S * ML / _rate(p.bw_down_ext, p.snr_device)
    return ext + p.iterations_per_round * p.t_compute


def total_fedgs(p: CostParams, rounds: int) -> float:
    if rounds < 0:
        raise InvalidConfigError("rounds must be >= 0")
    return rounds * fedgs_round_time(p)


def total_fedavg(p: CostParams, rounds: int) -> float:
    if rounds < 0:
        raise InvalidConfigError("rounds must be >= 0")
    return rounds * fedavg_round_time(p)


@dataclass(eq=False)
class EfficiencyReport:
    lhs: float  # T*L / (M*(L-1))
    rhs: float  # B_int / B_ext
    fedgs_faster: bool


def efficiency_condition(p: CostParams) -> EfficiencyReport:
    """Reduced comparison test; valid under the symmetric assumptions above.

    Requires symmetric up/down bandwidths and L >= 2 (with L = 1 the flat
    baseline moves the same number of models and can never lose).
    """
    if not math.isclose(p.bw_up_ext, p.bw_down_ext, rel_tol=_SYM_RTOL):
        raise InvalidConfigError("reduced condition needs bw_up_ext == bw_down_ext")
    if not math.isclose(p.bw_up_int, p.bw_down_int, rel_tol=_SYM_RTOL):
        raise InvalidConfigError("reduced condition needs bw_up_int == bw_down_int")
    if p.selected_per_group < 2:
        raise InvalidConfigError("reduced condition needs at least two devices per group")
    lhs = p.iterations_per_round * p.selected_per_group / (
        p.groups * (p.selected_per_group - 1)
    )
    rhs = p.bw_up_int / p.bw_up_ext
    return EfficiencyReport(lhs=lhs, rhs=rhs, fedgs_faster=lhs < rhs)


@dataclass(eq=False)
class CostReport:
    params: CostParams
    rounds: int
    comm_ext: float
    comm_int: float
    fedgs_round: float
    fedavg_round: float
    fedgs_total: float
    fedavg_total: float
    efficiency: Optional[EfficiencyReport] = None

    def to_dict(self) -> dict:
        out = {
            "rounds": self.rounds,
            "comm_ext_s": self.comm_ext,
            "comm_int_s": self.comm_int,
            "fedgs_round_s": self.fedgs_round,
            "fedavg_round_s": self.fedavg_round,
            "fedgs_total_s": self.fedgs_total,
            "fedavg_total_s": self.fedavg_total,
        }
        if self.efficiency is not None:
            out["condition_lhs"] = self.efficiency.lhs
            out["condition_rhs"] = self.efficiency.rhs
            out["fedgs_faster"] = self.efficiency.fedgs_faster
        return out


def cost_report(p: CostParams, rounds: int = 1) -> CostReport:
    """Evaluate the full model; attach the reduced test when it applies."""
    try:
        eff = efficiency_condition(p)
    except InvalidConfigError:
        eff = None
    return CostReport(
        params=p,
        rounds=rounds,
        comm_ext=comm_ext(p),
        comm_int=comm_int(p),
        fedgs_round=fedgs_round_time(p),
        fedavg_round=fedavg_round_time(p),
        fedgs_total=total_fedgs(p, rounds),
        fedavg_total=total_fedavg(p, rounds),
        efficiency=eff,
    )
