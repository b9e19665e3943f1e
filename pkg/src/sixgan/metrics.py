"""Candidate-set quality metrics and budget allocation.

Similarity metrics compare candidates against seeds (imitation, novelty)
and against each other (diversity); the evaluation report adds activity
accounting against a probe oracle: hit rate, generation rate, the valid
target set and the loss count.  Budget allocation splits a candidate
budget across patterns proportionally to measured generation rates with
exact largest-remainder rounding.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict
from fractions import Fraction

import numpy as np

from .addr import NybbleSeq
from .oracle import ProbeStatus, UniverseOracle


@dataclass
class CandidateSet:
    addresses: list[NybbleSeq]
    pattern_id: int | None = None

    def __post_init__(self) -> None:
        if len({a.nybbles for a in self.addresses}) != len(self.addresses):
            raise ValueError("candidate set contains duplicates")

    @classmethod
    def dedup(cls, addresses: list[NybbleSeq], pattern_id: int | None = None) -> "CandidateSet":
        seen: set[tuple[int, ...]] = set()
        unique = []
        for a in addresses:
            if a.nybbles not in seen:
                seen.add(a.nybbles)
                unique.append(a)
        return cls(unique, pattern_id)

    def __len__(self) -> int:
        return len(self.addresses)


@dataclass
class EvaluationReport:
    n_candidates: int
    n_active: int  # |C intersect T|
    n_aliased: int  # |C intersect T_a|
    n_in_seeds: int  # |C intersect S|
    n_valid: int  # |C-hat|
    loss: int  # L_tau = |C| - |C-hat|
    hit_rate: float
    generation_rate: float
    aliased_pct: float
    pattern_quality: float | None
    pattern_quality_max: float | None
    novelty: float | None
    diversity: float | None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    CSV_FIELDS = (
        "n_candidates", "n_active", "n_aliased", "n_in_seeds", "n_valid",
        "loss", "hit_rate", "generation_rate", "aliased_pct",
        "pattern_quality", "pattern_quality_max", "novelty", "diversity",
    )

    def csv_row(self) -> list:
        d = asdict(self)
        return [d[f] if d[f] is not None else "" for f in self.CSV_FIELDS]


# ---------------------------------------------------------------------------
# Similarity metrics
# ---------------------------------------------------------------------------


def cosine_sim(a: NybbleSeq, b: NybbleSeq) -> float:
    """Cosine of the raw 32-dim nybble vectors.

    All-zero vectors have no direction: one zero vector scores 0, two
    score 1 (identical addresses).
    """
    na = math.sqrt(sum(v * v for v in a.nybbles))
    nb = math.sqrt(sum(v * v for v in b.nybbles))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    dot = sum(x * y for x, y in zip(a.nybbles, b.nybbles))
    return dot / (na * nb)


def jaccard_sim(a: NybbleSeq, b: NybbleSeq) -> float:
    """Jaccard over (position, value) pairs: m agreeing positions -> m/(64-m)."""
    m = sum(1 for x, y in zip(a.nybbles, b.nybbles) if x == y)
    return m / (64 - m)


def _matrix(seqs: list[NybbleSeq]) -> np.ndarray:
    return np.array([s.nybbles for s in seqs], dtype=np.float64)


def _cosine_matrix(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    na = np.sqrt((ca * ca).sum(axis=1))
    nb = np.sqrt((cb * cb).sum(axis=1))
    dots = ca @ cb.T
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = dots / np.outer(na, nb)
    a_zero = na == 0.0
    b_zero = nb == 0.0
    if a_zero.any() or b_zero.any():
        sims[a_zero, :] = 0.0
        sims[:, b_zero] = 0.0
        sims[np.ix_(a_zero, b_zero)] = 1.0
    return sims


def _jaccard_matrix(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    m = (ca[:, None, :] == cb[None, :, :]).sum(axis=2).astype(np.float64)
    return m / (64.0 - m)


def pattern_quality(candidates: list[NybbleSeq], seeds: list[NybbleSeq]) -> float:
    """Mean over candidates of the minimum cosine similarity to any seed."""
    if not candidates or not seeds:
        raise ValueError("pattern_quality requires non-empty candidates and seeds")
    sims = _cosine_matrix(_matrix(candidates), _matrix(seeds))
    return float(sims.min(axis=1).mean())


def pattern_quality_max(candidates: list[NybbleSeq], seeds: list[NybbleSeq]) -> float:
    """Nearest-seed variant: mean of the maximum similarity per candidate."""
    if not candidates or not seeds:
        raise ValueError("pattern_quality requires non-empty candidates and seeds")
    sims = _cosine_matrix(_matrix(candidates), _matrix(seeds))
    return float(sims.max(axis=1).mean())


def novelty(candidates: list[NybbleSeq], seeds: list[NybbleSeq]) -> float:
    """100 x mean distance-from-closest-seed under the nybble-set Jaccard."""
    if not candidates or not seeds:
        raise ValueError("novelty requires non-empty candidates and seeds")
    sims = _jaccard_matrix(_matrix(candidates), _matrix(seeds))
    return float(100.0 / len(candidates) * (1.0 - sims.max(axis=1)).sum())


def diversity(candidates: list[NybbleSeq]) -> float:
    """100 x mean distance from each candidate to its nearest other candidate."""
    if len(candidates) < 2:
        raise ValueError("diversity requires at least 2 candidates")
    sims = _jaccard_matrix(_matrix(candidates), _matrix(candidates))
    np.fill_diagonal(sims, -np.inf)
    return float(100.0 / len(candidates) * (1.0 - sims.max(axis=1)).sum())


# ---------------------------------------------------------------------------
# Oracle-based evaluation
# ---------------------------------------------------------------------------


def evaluate(
    candidates: CandidateSet,
    seeds: list[NybbleSeq],
    oracle: UniverseOracle,
) -> EvaluationReport:
    """Probe every candidate and assemble the full report.

    hit        = |C∩T − C∩T_a| / |C|
    generation = |C∩T − C∩T_a − C∩S| / |C|
    valid set  = C∩T minus aliased targets and seeds; loss = |C| − |valid|
    """
    seed_keys = {s.nybbles for s in seeds}
    n = len(candidates)
    n_active = n_aliased = n_in_seeds = n_hit = n_valid = 0
    for seq in candidates.addresses:
        status = oracle.probe(seq)
        active = status is not ProbeStatus.INACTIVE
        aliased = status is ProbeStatus.ALIASED
        in_seeds = seq.nybbles in seed_keys
        n_active += active
        n_aliased += aliased
        n_in_seeds += in_seeds
        if active and not aliased:
            n_hit += 1
            if not in_seeds:
                n_valid += 1
    hit_rate = n_hit / n if n else 0.0
    generation_rate = n_valid / n if n else 0.0
    aliased_pct = n_aliased / n if n else 0.0
    pq = pqx = nov = div = None
    if n and seeds:
        pq = pattern_quality(candidates.addresses, seeds)
        pqx = pattern_quality_max(candidates.addresses, seeds)
        nov = novelty(candidates.addresses, seeds)
    if n >= 2:
        div = diversity(candidates.addresses)
    return EvaluationReport(
        n_candidates=n,
        n_active=n_active,
        n_aliased=n_aliased,
        n_in_seeds=n_in_seeds,
        n_valid=n_valid,
        loss=n - n_valid,
        hit_rate=hit_rate,
        generation_rate=generation_rate,
        aliased_pct=aliased_pct,
        pattern_quality=pq,
        pattern_quality_max=pqx,
        novelty=nov,
        diversity=div,
    )


def write_report_files(report: EvaluationReport, json_path: str, csv_path: str) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EvaluationReport.CSV_FIELDS)
        writer.writerow(report.csv_row())


# ---------------------------------------------------------------------------
# Budget allocation
# ---------------------------------------------------------------------------


def allocate_budget(rates: list[float], total: int) -> list[int]:
    """Split total proportionally to rates, conserving the sum exactly.

    Largest-remainder rounding over exact rational shares; remainder ties
    break toward the lowest index.  All-zero or negative rates are errors.
    """
    if total < 0:
        raise ValueError("total budget must be non-negative")
    if any(r < 0 for r in rates):
        raise ValueError("rates must be non-negative")
    if not rates or all(r == 0 for r in rates):
        raise ValueError("at least one rate must be positive")
    exact = [Fraction(r) for r in rates]
    denom = sum(exact)
    shares = [r * total / denom for r in exact]
    floors = [int(s) for s in shares]  # Fraction truncates toward zero
    leftover = total - sum(floors)
    order = sorted(range(len(rates)), key=lambda i: (-(shares[i] - floors[i]), i))
    budgets = list(floors)
    for i in order[:leftover]:
        budgets[i] += 1
    return budgets
