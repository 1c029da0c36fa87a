"""Post-run analytics on final Pareto fronts.

Covers permutation feature importance, SNP consistency scores, hypervolume,
bin diversity, data coverage, QTL hit/precision metrics, inheritance-model
validation and cross-replicate peak calling.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .encodings import STRICT_CODES, STRICT_MODELS, InheritanceModel, mirror
from .estimators import FittedModel, r2
from .genome import SnpLabel
from .pipeline import EvalData, encoded
from .snpdb import SnpDb


@dataclass(frozen=True)
class ConsistencyEntry:
    snp: SnpLabel
    mean_rank: float
    appearance_proportion: float
    score: float
    modal_encoding: str | None = None


@dataclass(frozen=True)
class QtlTarget:
    snp: SnpLabel
    window_bp: int = 1_000_000
    model: str | None = None

    def __post_init__(self):
        if self.window_bp <= 0:
            raise ValueError("QTL window must be positive")


@dataclass(frozen=True)
class InheritanceFit:
    model: InheritanceModel
    mirrored: bool
    correlation: float


@dataclass(frozen=True)
class Peak:
    snp: SnpLabel
    n_replicates: int
    mean_score: float
    modal_encoding: str | None
    region_size: int


# --- permutation importance -------------------------------------------------------

def permutation_importance(model, X: np.ndarray, y: np.ndarray, n_permutations: int = 100,
                           rng: np.random.Generator | None = None,
                           max_cells: int = 2_000_000) -> np.ndarray:
    """Baseline r^2 minus mean r^2 after shuffling each column, per column.

    Permuted copies are stacked and predicted in batches of at most
    ``max_cells`` matrix entries.
    """
    rng = rng or np.random.default_rng()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    baseline = r2(y, model.predict(X))
    ss_tot = float(((y - y.mean()) ** 2).sum())
    batch = max(1, min(n_permutations, max_cells // max(1, n * k)))
    out = np.zeros(k)
    for j in range(k):
        scores = []
        done = 0
        while done < n_permutations:
            b = min(batch, n_permutations - done)
            stacked = np.tile(X, (b, 1))
            stacked[:, j] = rng.permuted(np.tile(X[:, j], (b, 1)), axis=1).ravel()
            pred = model.predict(stacked).reshape(b, n)
            scores.append(1.0 - ((y[None, :] - pred) ** 2).sum(axis=1) / ss_tot)
            done += b
        out[j] = baseline - np.concatenate(scores).mean()
    return out


def front_importances(front, data: EvalData, db: SnpDb, n_permutations: int = 100,
                      seed: int = 0) -> list[dict[int, float]]:
    """PFI per front pipeline, restricted to regressor inputs still considered."""
    out = []
    for i, member in enumerate(front):
        model: FittedModel = member.eval.model
        feats = list(model.features)
        X = encoded(data.G_val, db.codes, feats)
        rng = np.random.default_rng([seed, i])
        imp = permutation_importance(model, X, data.y_val, n_permutations, rng)
        out.append({s: float(v) for s, v in zip(feats, imp) if db.considered[s]})
    return out


# --- consistency ------------------------------------------------------------------

def pipeline_ranks(importances: Mapping[Hashable, float]) -> dict[Hashable, int]:
    """Rank 1 = highest importance; equal importances ordered by key."""
    order = sorted(importances, key=lambda s: (-importances[s], s))
    return {s: r for r, s in enumerate(order, start=1)}


def consistency_scores(front: Sequence[Mapping[Hashable, float]],
                       encodings: Mapping[Hashable, str] | None = None) -> list[ConsistencyEntry]:
    """Score = appearance proportion / mean rank for every SNP in the front.

    ``front`` holds one {snp: importance} mapping per Pareto pipeline.
    """
    if not front:
        return []
    ranks: dict[Hashable, list[int]] = defaultdict(list)
    for imp in front:
        for s, r in pipeline_ranks(imp).items():
            ranks[s].append(r)
    entries = []
    for s in sorted(ranks):
        mean_rank = float(np.mean(ranks[s]))
        appear = len(ranks[s]) / len(front)
        enc = None if encodings is None else encodings.get(s)
        entries.append(ConsistencyEntry(s, mean_rank, appear, appear / mean_rank, enc))
    return entries


# --- front quality ----------------------------------------------------------------

def complexity_to_objective(k, min_complexity: int = 1, max_complexity: int = 150) -> float:
    """1 at the minimum complexity, 0 at the maximum, linear in between."""
    return 1.0 - (k - min_complexity) / (max_complexity - min_complexity)


def hypervolume(points: Iterable[tuple[float, int]], min_complexity: int = 1,
                max_complexity: int = 150) -> float:
    """Area dominated by (r^2, transformed complexity) points above the origin."""
    pts = []
    for r, k in points:
        if r < 0:
            raise ValueError("hypervolume needs non-negative r^2 values")
        pts.append((r, max(0.0, complexity_to_objective(k, min_complexity, max_complexity))))
    area = 0.0
    covered = 0.0
    for x, y in sorted(pts, key=lambda p: (-p[0], -p[1])):
        if y > covered:
            area += x * (y - covered)
            covered = y
    return area


def snp_diversity(front_snps: Iterable[Iterable[int]], bin_of: Mapping[int, int] | np.ndarray) -> int:
    return len({int(bin_of[s]) for snps in front_snps for s in snps})


def data_coverage(db: SnpDb) -> float:
    return sum(e is not None for e in db.encoding) / len(db)


# --- QTL metrics ------------------------------------------------------------------

def qtl_hits(front_snps: Iterable[SnpLabel], targets: Sequence[QtlTarget]) -> list[bool]:
    snps = list(front_snps)
    return [any(s.chromosome == t.snp.chromosome and abs(s.position - t.snp.position) <= t.window_bp
                for s in snps) for t in targets]


def qtl_accuracy(front_snps: Iterable[SnpLabel], targets: Sequence[QtlTarget]) -> tuple[int, float]:
    hits = qtl_hits(front_snps, targets)
    return sum(hits), (sum(hits) / len(targets) if targets else float("nan"))


def overall_accuracy(hit_counts: Sequence[int], n_targets: int) -> float:
    """Total hits over the maximum possible (targets x replicates)."""
    return sum(hit_counts) / (n_targets * len(hit_counts))


def qtl_precision(front_snps: Iterable[SnpLabel], target: QtlTarget) -> int | None:
    """Smallest bp distance from an in-window front SNP to the target, else None."""
    d = [abs(s.position - target.snp.position) for s in front_snps
         if s.chromosome == target.snp.chromosome
         and abs(s.position - target.snp.position) <= target.window_bp]
    return min(d) if d else None


# --- inheritance validation -----------------------------------------------------------

def validate_inheritance(genotypes: np.ndarray, phenotype: np.ndarray) -> InheritanceFit:
    """Best-correlated strict model (or its mirror) for one SNP on full data.

    Each code triple is scaled to the phenotype range and compared with the
    observed phenotype by Pearson correlation.
    """
    g = np.asarray(genotypes, dtype=int)
    y = np.asarray(phenotype, dtype=float)
    if np.ptp(y) == 0:
        raise ValueError("phenotype is constant")
    if not np.isin([0, 1, 2], g).all():
        raise ValueError("all three genotype classes must be present")
    lo, span = y.min(), np.ptp(y)
    best: InheritanceFit | None = None
    for model in STRICT_MODELS:
        for mirrored in (False, True):
            codes = STRICT_CODES[model]
            codes = mirror(codes) if mirrored else codes
            expected = lo + np.asarray(codes)[g] * span
            if np.ptp(expected) == 0:
                continue
            c = float(np.corrcoef(expected, y)[0, 1])
            if best is None or c > best.correlation + 1e-12:
                best = InheritanceFit(model, mirrored, c)
    return best


# --- cross-replicate peaks ------------------------------------------------------------

def aggregate_consistency(replicates: Sequence[Sequence[ConsistencyEntry]], min_replicates: int = 2):
    """Per SNP: (replicate count, mean score over appearances, modal encoder)."""
    scores: dict[SnpLabel, list[float]] = defaultdict(list)
    encs: dict[SnpLabel, Counter] = defaultdict(Counter)
    for entries in replicates:
        for e in entries:
            scores[e.snp].append(e.score)
            if e.modal_encoding:
                encs[e.snp][e.modal_encoding] += 1
    out = {}
    for s, vals in scores.items():
        if len(vals) >= min_replicates:
            modal = min(encs[s].items(), key=lambda kv: (-kv[1], kv[0]))[0] if encs[s] else None
            out[s] = (len(vals), float(np.mean(vals)), modal)
    return out


def top_peaks(replicates: Sequence[Sequence[ConsistencyEntry]], k: int = 50,
              window: int = 1_000_000, min_replicates: int = 2) -> list[Peak]:
    """Representative SNP per +/- window region among the top-k mean scores.

    Regions are seeded greedily from the best remaining SNP. The representative
    is the most replicated member, ties broken by mean score then position.
    """
    agg = aggregate_consistency(replicates, min_replicates)
    top = sorted(agg, key=lambda s: (-agg[s][1], s))[:k]
    unassigned = list(top)
    peaks = []
    while unassigned:
        seed = unassigned[0]
        region = [s for s in unassigned if s.chromosome == seed.chromosome
                  and abs(s.position - seed.position) <= window]
        unassigned = [s for s in unassigned if s not in region]
        rep = min(region, key=lambda s: (-agg[s][0], -agg[s][1], s))
        n, mean, modal = agg[rep]
        peaks.append(Peak(rep, n, mean, modal, len(region)))
    return peaks
