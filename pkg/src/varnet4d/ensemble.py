"""Ensemble uncertainty quantification via multi-seed retraining.

Members share every training parameter and differ only in the seed, so
the spread comes from random initialization plus the stochastic batch
order. The per-cell member standard deviation is compared against the
absolute reconstruction error of the median field through a coefficient
of determination (pointwise over all days/cells, and on day-averaged
fields).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .metrics import metrics_record, MetricsRecord
from .prior import PriorParams
from .solver import SolverParams
from .state import FieldSeq, SeqData
from .training import TrainConfig, fit, sliding_reconstruct
from .autodiff import ShapeError


class EnsembleError(RuntimeError):
    """One or more member trainings failed; carries the failed seeds."""

    def __init__(self, failed: list[int], causes: list[str]):
        self.failed = failed
        self.causes = causes
        super().__init__(f"ensemble member trainings failed for seeds {failed}: {causes}")


@dataclass
class EnsembleRun:
    seeds: list[int]
    members: list[tuple[PriorParams, SolverParams]]
    reconstructions: list[FieldSeq]
    member_metrics: list[MetricsRecord]
    median: FieldSeq
    std: FieldSeq
    median_metrics: MetricsRecord


def ensemble_stats(members: list[FieldSeq]) -> tuple[FieldSeq, FieldSeq]:
    """Per-cell median and sample standard deviation across members."""
    if len(members) < 2:
        raise ValueError("ensemble statistics need at least 2 members")
    shapes = {m.shape for m in members}
    if len(shapes) > 1:
        raise ShapeError(f"ensemble members disagree on shape: {shapes}")
    stack = np.stack([m.values for m in members])
    g = dict(cell_deg=members[0].cell_deg, dt_days=members[0].dt_days)
    return (
        FieldSeq(np.median(stack, axis=0), **g),
        FieldSeq(stack.std(axis=0, ddof=1), **g),
    )


def uq_correlation(std: FieldSeq, abs_error: FieldSeq) -> float:
    """R^2 of the least-squares linear fit of |error| against the spread."""
    s = std.values if isinstance(std, FieldSeq) else np.asarray(std)
    e = abs_error.values if isinstance(abs_error, FieldSeq) else np.asarray(abs_error)
    if s.shape != e.shape:
        raise ShapeError(f"uq_correlation: shapes differ, {s.shape} vs {e.shape}")
    x = s.reshape(-1)
    y = e.reshape(-1)
    vx = x.var()
    if vx == 0:
        raise ValueError("uq_correlation: zero-variance spread")
    r = np.corrcoef(x, y)[0, 1]
    return float(r * r)


def uq_correlation_daily(std: FieldSeq, abs_error: FieldSeq) -> float:
    """Same R^2 on day-averaged spread and error maps (per-cell)."""
    g = dict(cell_deg=std.cell_deg, dt_days=std.dt_days)
    s = FieldSeq(std.values.mean(axis=0, keepdims=True), **g)
    e = FieldSeq(abs_error.values.mean(axis=0, keepdims=True), **g)
    return uq_correlation(s, e)


def train_ensemble(
    train_data: SeqData,
    val_data: SeqData,
    test_data: SeqData,
    base_cfg: TrainConfig,
    seeds: list[int],
) -> EnsembleRun:
    """One fit per seed with identical configuration; aggregates test
    reconstructions into median/std fields and per-member metrics."""
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"ensemble seeds must be distinct, got {seeds}")
    if len(seeds) < 2:
        raise ValueError("an ensemble needs at least 2 members")

    members, recons, failed, causes = [], [], [], []
    for seed in seeds:
        cfg = replace(base_cfg, seed=seed)
        try:
            pp, sp, _ = fit(train_data, val_data, cfg)
            recon = sliding_reconstruct(test_data, pp, sp, cfg)
        except Exception as exc:  # collected so the caller sees all failures
            failed.append(seed)
            causes.append(f"{type(exc).__name__}: {exc}")
            continue
        members.append((pp, sp))
        recons.append(recon)
    if failed:
        raise EnsembleError(failed, causes)

    median, std = ensemble_stats(recons)
    member_metrics = [metrics_record(r, test_data.truth) for r in recons]
    return EnsembleRun(
        seeds=list(seeds),
        members=members,
        reconstructions=recons,
        member_metrics=member_metrics,
        median=median,
        std=std,
        median_metrics=metrics_record(median, test_data.truth),
    )
