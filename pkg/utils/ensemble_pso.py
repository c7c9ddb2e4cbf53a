"""Weighted hard voting over the committee and the particle swarm that tunes its weights.

A weight vector holds one entry in [0, 1] per committee member (canonical
combination order). The ensemble predicts positive when the weighted vote sum
strictly exceeds half of the total weight. The swarm maximises

    fitness = HM(f1_train, f1_val) - (lambda * |f1_train - f1_val|) ** 2

where HM is the harmonic mean of the train and validation macro F1.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.errors import (DegenerateLabelsError, ParameterError, RangeError, ShapeError,
                          UnusableEnsembleError)
from utils.logger import get_logger
from utils.metrics import MetricReport, batch_f1_macro, metric_report

logger = get_logger(__name__)

DEFAULT_LAMBDAS = (0.0, 0.2, 0.4, 0.6, 0.8)


@dataclass(frozen=True)
class PsoConfig:
    particles: int = 50
    epochs: int = 100
    inertia: float = 0.9
    c1: float = 1.5
    c2: float = 2.1
    lam: float = 0.0
    seed: int = 0
    velocity_clamp: float = 0.2
    threads: int = 1
    # Member indices allowed to carry weight; None means all
    active_members: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.particles < 1 or self.epochs < 1:
            raise ParameterError("particles and epochs must be >= 1")
        if self.lam < 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")
        if self.velocity_clamp <= 0:
            raise ParameterError("velocity_clamp must be positive")
        if self.threads < 1:
            raise ParameterError("threads must be >= 1")
        if self.active_members is not None:
            active = tuple(sorted({int(i) for i in self.active_members}))
            if not active:
                raise ParameterError("active_members must name at least one member")
            object.__setattr__(self, "active_members", active)


def pso_config_from_dict(values: Mapping, **overrides) -> PsoConfig:
    """Build a PsoConfig from the ``pso`` settings block, ignoring unknown keys"""
    known = {f.name for f in fields(PsoConfig)}
    merged = {k: v for k, v in dict(values).items() if k in known}
    merged.update(overrides)
    return PsoConfig(**merged)


@dataclass(frozen=True)
class FitnessReport:
    f1_train: float
    f1_val: float
    harmonic_mean: float
    penalty: float
    fitness: float

    def as_dict(self) -> Dict[str, float]:
        return {'f1_train': self.f1_train, 'f1_val': self.f1_val,
                'harmonic_mean': self.harmonic_mean, 'penalty': self.penalty,
                'fitness': self.fitness}


@dataclass
class PsoResult:
    best_weights: np.ndarray
    best_fitness: float
    best_epoch: int
    fitness_trace: List[float]
    best_report: FitnessReport
    lam: float
    seed: int
    reports: Dict[str, MetricReport] = field(default_factory=dict)
    ensemble_bce: Dict[str, float] = field(default_factory=dict)

    @property
    def zero_weight_count(self) -> int:
        return zero_weight_count(self.best_weights)


def _weights(w: np.ndarray, n_members: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (n_members,):
        raise ShapeError(f"Weight vector has shape {w.shape}, expected ({n_members},)")
    total = float(w.sum())
    if not total > 0:
        raise UnusableEnsembleError("Ensemble weights sum to zero")
    return w


def hard_vote(votes: np.ndarray, w: np.ndarray) -> np.ndarray:
    """
    Weighted hard vote

    Args:
        votes: (members,) binary votes of one sample, or (members x n) for n samples
        w: (members,) non-negative weights with a positive sum

    Returns:
        Binary prediction(s); a weighted sum equal to half the pool predicts 0
    """
    votes = np.asarray(votes)
    w = _weights(w, votes.shape[0])
    weighted = w @ votes.astype(float)
    return (weighted > 0.5 * w.sum()).astype(np.int8)


def vote_fraction(votes: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Share of the weight pool voting positive; used as the ensemble probability"""
    votes = np.asarray(votes)
    w = _weights(w, votes.shape[0])
    return (w @ votes.astype(float)) / w.sum()


def fitness(f1_train: float, f1_val: float, lam: float) -> FitnessReport:
    """Harmonic mean of the two F1 values minus the squared, lambda-scaled gap"""
    for name, value in (("f1_train", f1_train), ("f1_val", f1_val)):
        if not 0.0 <= value <= 1.0:
            raise RangeError(f"{name} must be in [0, 1], got {value}")
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")

    total = f1_train + f1_val
    harmonic = 2.0 * f1_train * f1_val / total if total > 0 else 0.0
    penalty = (lam * abs(f1_train - f1_val)) ** 2
    return FitnessReport(f1_train=float(f1_train), f1_val=float(f1_val),
                         harmonic_mean=float(harmonic), penalty=float(penalty),
                         fitness=float(harmonic - penalty))


def evaluate_weights(w: np.ndarray, votes_train: np.ndarray, votes_val: np.ndarray,
                     labels_train: np.ndarray, labels_val: np.ndarray,
                     lam: float = 0.0) -> FitnessReport:
    """
    Fitness of one weight vector

    Args:
        w: Member weights
        votes_train, votes_val: (members x n) binary vote matrices
        labels_train, labels_val: Split labels
        lam: Gap penalty coefficient

    Returns:
        FitnessReport
    """
    if np.shape(votes_train)[0] != np.shape(votes_val)[0]:
        raise ShapeError("Train and validation vote matrices have different member counts")
    f1_train = float(batch_f1_macro(hard_vote(votes_train, w), labels_train)[0])
    f1_val = float(batch_f1_macro(hard_vote(votes_val, w), labels_val)[0])
    return fitness(f1_train, f1_val, lam)


def zero_weight_count(w: np.ndarray, tolerance: float = 0.0) -> int:
    """Members whose weight is at most ``tolerance``"""
    return int(np.count_nonzero(np.asarray(w, dtype=float) <= tolerance))


class _SwarmProblem:
    """Fixed vote data shared read-only by every particle"""

    def __init__(self, votes_train, votes_val, labels_train, labels_val, lam):
        self.votes_train = np.asarray(votes_train, dtype=float)
        self.votes_val = np.asarray(votes_val, dtype=float)
        self.labels_train = np.asarray(labels_train)
        self.labels_val = np.asarray(labels_val)
        self.lam = lam

    def score(self, w: np.ndarray) -> Tuple[float, Optional[FitnessReport]]:
        if not w.sum() > 0:
            return -np.inf, None
        report = evaluate_weights(w, self.votes_train, self.votes_val, self.labels_train,
                                  self.labels_val, self.lam)
        return report.fitness, report


def _check_votes(votes_train, votes_val, labels_train, labels_val) -> int:
    votes_train = np.asarray(votes_train)
    votes_val = np.asarray(votes_val)
    if votes_train.ndim != 2 or votes_val.ndim != 2:
        raise ShapeError("Vote matrices must be 2-D (members x samples)")
    if votes_train.shape[0] != votes_val.shape[0]:
        raise ShapeError("Train and validation vote matrices have different member counts")
    if votes_train.shape[1] != len(labels_train) or votes_val.shape[1] != len(labels_val):
        raise ShapeError("Vote matrix columns do not match the label counts")
    for split, labels in (("train", labels_train), ("val", labels_val)):
        if np.unique(np.asarray(labels)).size < 2:
            raise DegenerateLabelsError(f"The {split} labels contain a single class")
    return votes_train.shape[0]


def pso_optimize(votes_train: np.ndarray, votes_val: np.ndarray, labels_train: np.ndarray,
                 labels_val: np.ndarray, cfg: PsoConfig = PsoConfig()) -> PsoResult:
    """
    Search the weight box [0, 1]^members with a particle swarm

    Every particle draws from its own random stream spawned from ``cfg.seed`` and
    the global best is only updated after all particles of an epoch are scored,
    so the result does not depend on ``cfg.threads``.

    Args:
        votes_train, votes_val: (members x n) binary vote matrices
        labels_train, labels_val: Split labels, both classes present
        cfg: Swarm settings

    Returns:
        PsoResult whose fitness_trace[0] is the best initial fitness and
        fitness_trace[e] the global best after epoch e
    """
    dim = _check_votes(votes_train, votes_val, labels_train, labels_val)
    active = np.ones(dim, dtype=bool)
    if cfg.active_members is not None:
        if max(cfg.active_members) >= dim or min(cfg.active_members) < 0:
            raise ParameterError(f"active_members out of range for {dim} members")
        active[:] = False
        active[list(cfg.active_members)] = True

    problem = _SwarmProblem(votes_train, votes_val, labels_train, labels_val, cfg.lam)
    streams = [np.random.default_rng(s)
               for s in np.random.SeedSequence(cfg.seed).spawn(cfg.particles)]

    positions = np.vstack([rng.uniform(0.0, 1.0, dim) for rng in streams]) * active
    velocities = np.zeros_like(positions)

    def step(index: int, g_best: np.ndarray):
        rng = streams[index]
        r1 = rng.random(dim)
        r2 = rng.random(dim)
        velocity = (cfg.inertia * velocities[index]
                    + cfg.c1 * r1 * (p_best[index] - positions[index])
                    + cfg.c2 * r2 * (g_best - positions[index]))
        velocity = np.clip(velocity, -cfg.velocity_clamp, cfg.velocity_clamp) * active
        position = np.clip(positions[index] + velocity, 0.0, 1.0) * active
        return velocity, position, problem.score(position)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        scored = list(pool.map(lambda i: problem.score(positions[i]), range(cfg.particles)))
        p_best = positions.copy()
        p_best_fit = np.array([fit for fit, _ in scored])
        p_best_report = [report for _, report in scored]

        leader = int(np.argmax(p_best_fit))
        g_best = p_best[leader].copy()
        g_best_fit = float(p_best_fit[leader])
        g_best_report = p_best_report[leader]
        best_epoch = 0
        trace = [g_best_fit]

        for epoch in range(1, cfg.epochs + 1):
            frozen_leader = g_best.copy()
            outcomes = list(pool.map(lambda i: step(i, frozen_leader), range(cfg.particles)))

            # Epoch barrier: bests are updated in particle order
            for index, (velocity, position, (fit, report)) in enumerate(outcomes):
                velocities[index] = velocity
                positions[index] = position
                if fit > p_best_fit[index]:
                    p_best_fit[index] = fit
                    p_best[index] = position
                    p_best_report[index] = report

            leader = int(np.argmax(p_best_fit))
            if p_best_fit[leader] > g_best_fit:
                g_best = p_best[leader].copy()
                g_best_fit = float(p_best_fit[leader])
                g_best_report = p_best_report[leader]
                best_epoch = epoch
            trace.append(g_best_fit)

    if g_best_report is None:
        raise UnusableEnsembleError("No particle found a usable weight vector")

    logger.debug(f"PSO lambda={cfg.lam} seed={cfg.seed}: fitness={g_best_fit:.6f} "
                 f"at epoch {best_epoch}")
    return PsoResult(best_weights=g_best, best_fitness=g_best_fit, best_epoch=best_epoch,
                     fitness_trace=trace, best_report=g_best_report, lam=cfg.lam,
                     seed=cfg.seed)


def ensemble_reports(result: PsoResult, votes: Mapping[str, np.ndarray],
                     labels: Mapping[str, np.ndarray]) -> PsoResult:
    """Fill per-split MetricReports and vote-fraction BCE for a finished run"""
    for split, split_votes in votes.items():
        split_labels = np.asarray(labels[split])
        if split_labels.size == 0:
            continue
        predictions = hard_vote(split_votes, result.best_weights)
        probability = vote_fraction(split_votes, result.best_weights)
        report = metric_report(split_labels, predictions, probability)
        result.reports[split] = report
        result.ensemble_bce[split] = report.bce
    return result


def lambda_sweep(votes: Mapping[str, np.ndarray], labels: Mapping[str, np.ndarray],
                 base_cfg: PsoConfig = PsoConfig(),
                 lambdas: Sequence[float] = DEFAULT_LAMBDAS) -> List[PsoResult]:
    """
    Independent swarm runs, one per lambda, seeded with base seed + index

    Args:
        votes: Vote matrices keyed by split (train and val required, test optional)
        labels: Labels keyed by split
        base_cfg: Swarm settings shared by every run
        lambdas: Penalty coefficients

    Returns:
        One PsoResult per lambda with train / val / test reports
    """
    if not lambdas:
        raise ParameterError("lambda_sweep needs at least one lambda value")
    for split in ("train", "val"):
        if split not in votes or split not in labels:
            raise ShapeError(f"lambda_sweep needs {split} votes and labels")

    results = []
    for index, lam in enumerate(lambdas):
        cfg = replace(base_cfg, lam=float(lam), seed=base_cfg.seed + index)
        result = pso_optimize(votes["train"], votes["val"], labels["train"], labels["val"], cfg)
        results.append(ensemble_reports(result, votes, labels))
        logger.info(f"Lambda {lam}: fitness={result.best_fitness:.4f} "
                    f"zero weights={result.zero_weight_count}")
    return results


def pso_result_to_dict(result: PsoResult, member_names: Optional[Sequence[str]] = None,
                       thresholds: Optional[Sequence[float]] = None) -> dict:
    """JSON-ready view of a run (no paths or timings)"""
    weights = [float(v) for v in result.best_weights]
    payload = {
        'lambda': result.lam,
        'seed': result.seed,
        'weights': weights,
        'best_fitness': result.best_fitness,
        'best_epoch': result.best_epoch,
        'fitness': result.best_report.as_dict(),
        'fitness_trace': [float(v) for v in result.fitness_trace],
        'zero_weight_count': result.zero_weight_count,
        'splits': {split: report.as_dict() for split, report in result.reports.items()},
    }
    if member_names is not None:
        payload['members'] = [
            {'model': name, 'weight': weight,
             'threshold': float(thresholds[i]) if thresholds is not None else None}
            for i, (name, weight) in enumerate(zip(member_names, weights))
        ]
    return payload


def sweep_summary(results: Sequence[PsoResult]) -> pd.DataFrame:
    """One row per lambda with per-split macro and weighted F1"""
    rows = []
    for result in results:
        row = {'lambda': result.lam, 'seed': result.seed, 'fitness': result.best_fitness,
               'best_epoch': result.best_epoch, 'zero_weights': result.zero_weight_count}
        for split in ("train", "val", "test"):
            report = result.reports.get(split)
            row[f"{split}_f1_macro"] = report.f1_macro if report else np.nan
            row[f"{split}_f1_weighted"] = report.f1_weighted if report else np.nan
        rows.append(row)
    return pd.DataFrame(rows)
