"""Offspring-only NSGA-II over SNP pipelines.

One generation: rank the population, pick 2 * size parents by binary
tournament, build 2 * size offspring by crossover or mutation with SNP DB
recommendations, encode new SNPs, evaluate, record LD-pruned SNPs, drop
duplicates and failures, and truncate the offspring back to ``size``.
"""

from __future__ import annotations

import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .encodings import select_optimal_encoding
from .estimators import random_regressor, random_selector
from .pipeline import (D_MAX_GRID, R2_THRESHOLD_GRID, EvalData, EvalResult, LdParams, Pipeline,
                       evaluate)
from .snpdb import LOCALITIES, DbSnapshot, SnpDb, Strategy


class RunAborted(RuntimeError):
    pass


@dataclass
class EvolutionConfig:
    population_size: int = 150
    generations: int = 100
    min_snps: int = 50
    max_snps: int = 150
    bin_size: int = 500
    p_crossover: float = 0.50
    p_mutation: float = 0.50
    p_locality: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    p_smart: float = 0.25
    p_random: float = 0.75
    p_node_tuning: float = 0.50
    ld_node: bool = True
    ld_r2_grid: tuple[float, ...] = R2_THRESHOLD_GRID
    d_max_grid: tuple[int, ...] = D_MAX_GRID
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not np.isclose(self.p_crossover + self.p_mutation, 1.0):
            raise ValueError("crossover and mutation probabilities must sum to 1")
        if not np.isclose(sum(self.p_locality), 1.0) or len(self.p_locality) != 3:
            raise ValueError("three locality probabilities summing to 1 required")
        if not np.isclose(self.p_smart + self.p_random, 1.0):
            raise ValueError("smart and random strategy probabilities must sum to 1")
        if not 1 <= self.min_snps <= self.max_snps:
            raise ValueError("need 1 <= min_snps <= max_snps")
        if self.population_size < 1 or self.generations < 0:
            raise ValueError("population_size >= 1 and generations >= 0 required")

    @property
    def budget(self) -> int:
        return self.population_size + self.generations * 2 * self.population_size


@dataclass
class RankedPipeline:
    pipeline: Pipeline
    eval: EvalResult
    front_rank: int = 0
    crowding: float = 0.0


@dataclass
class HistoryRow:
    generation: int
    evaluations: int
    front0_size: int
    best_r2: float
    min_complexity_at_best: int


@dataclass
class EvolutionResult:
    population: list[RankedPipeline]
    history: list[HistoryRow]
    ledger: Counter = field(default_factory=Counter)

    def pareto_front(self) -> list[RankedPipeline]:
        return pareto_members(self.population)


# --- dominance, sorting, crowding ------------------------------------------------

def dominates(a, b) -> bool:
    """True if a dominates b on (maximise r^2, minimise complexity).

    Accepts EvalResults or (r2, complexity) pairs.
    """
    ar, ac = a.objectives if isinstance(a, EvalResult) else a
    br, bc = b.objectives if isinstance(b, EvalResult) else b
    return (ar >= br and ac <= bc) and (ar > br or ac < bc)


def nondominated_sort(objs: Sequence[tuple[float, int]]) -> list[list[int]]:
    """Nondominated fronts as sorted index lists, best first.

    Two objectives allow an O(n log n) sweep: visiting points by ascending
    complexity then descending r^2, every dominator of a point is seen before
    it, and "is dominated by some member of front k" is monotone in k, so each
    point's front is found by binary search. Each front keeps its best r^2 and
    the smallest complexity reaching it, which decides dominance exactly
    (identical points never dominate each other).
    """
    n = len(objs)
    if n == 0:
        return []
    order = sorted(range(n), key=lambda i: (objs[i][1], -objs[i][0], i))
    best_r2: list[float] = []
    best_c: list[int] = []
    fronts: list[list[int]] = []
    for i in order:
        r, c = objs[i]
        lo, hi = 0, len(fronts)
        while lo < hi:
            mid = (lo + hi) // 2
            if best_r2[mid] > r or (best_r2[mid] == r and best_c[mid] < c):
                lo = mid + 1
            else:
                hi = mid
        if lo == len(fronts):
            fronts.append([])
            best_r2.append(r)
            best_c.append(c)
        elif r > best_r2[lo]:
            best_r2[lo], best_c[lo] = r, c
        fronts[lo].append(i)
    return [sorted(f) for f in fronts]


def crowding_distance(objs: Sequence[tuple[float, int]], front: Sequence[int]) -> np.ndarray:
    """Crowding distance of each front member; boundary members get +inf."""
    k = len(front)
    dist = np.zeros(k)
    if k <= 2:
        dist[:] = np.inf
        return dist
    for m in range(2):
        vals = np.array([objs[i][m] for i in front], dtype=float)
        order = np.lexsort((np.asarray(front), vals))
        dist[order[0]] = dist[order[-1]] = np.inf
        span = vals[order[-1]] - vals[order[0]]
        if span <= 0:
            continue
        for pos in range(1, k - 1):
            dist[order[pos]] += (vals[order[pos + 1]] - vals[order[pos - 1]]) / span
    return dist


def rank_and_crowd(objs) -> tuple[np.ndarray, np.ndarray]:
    ranks = np.zeros(len(objs), dtype=int)
    crowd = np.zeros(len(objs))
    for r, front in enumerate(nondominated_sort(objs)):
        ranks[front] = r
        crowd[front] = crowding_distance(objs, front)
    return ranks, crowd


def assign_ranks(pop: list[RankedPipeline]) -> list[RankedPipeline]:
    ranks, crowd = rank_and_crowd([m.eval.objectives for m in pop])
    for m, r, c in zip(pop, ranks, crowd):
        m.front_rank, m.crowding = int(r), float(c)
    return pop


def pareto_members(pop: list[RankedPipeline]) -> list[RankedPipeline]:
    if not pop:
        return []
    front = nondominated_sort([m.eval.objectives for m in pop])[0]
    return [pop[i] for i in front]


def tournament_select(pop: list[RankedPipeline], rng: np.random.Generator) -> RankedPipeline:
    """Binary tournament: lower front rank, then larger crowding, then a coin flip."""
    if len(pop) == 1:
        return pop[0]
    i, j = rng.choice(len(pop), size=2, replace=False)
    a, b = pop[i], pop[j]
    if a.front_rank != b.front_rank:
        return a if a.front_rank < b.front_rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if rng.random() < 0.5 else b


def survival_select(objs: Sequence[tuple[float, int]], size: int) -> list[int]:
    """Indices of the ``size`` survivors, filled front by front.

    The last partially admitted front is cut by descending crowding distance
    (ties by index). Everything survives when there are at most ``size``.
    """
    if len(objs) <= size:
        return list(range(len(objs)))
    chosen: list[int] = []
    for front in nondominated_sort(objs):
        if len(chosen) + len(front) <= size:
            chosen.extend(front)
            if len(chosen) == size:
                break
            continue
        cd = crowding_distance(objs, front)
        order = sorted(range(len(front)), key=lambda t: (-cd[t], front[t]))
        chosen.extend(front[t] for t in order[:size - len(chosen)])
        break
    return sorted(chosen)


def dedup(results: Sequence[EvalResult], rng: np.random.Generator) -> list[int]:
    """Keep one random pipeline per identical regressor-input SNP set; drops failures."""
    groups: dict[frozenset[int], list[int]] = {}
    for i, r in enumerate(results):
        if not r.failed:
            groups.setdefault(r.survivors, []).append(i)
    kept = [g[rng.integers(len(g))] if len(g) > 1 else g[0] for g in groups.values()]
    return sorted(kept)


# --- construction ----------------------------------------------------------------

def pipeline_seed(run_seed: int, generation: int, index: int) -> int:
    return int(np.random.SeedSequence([run_seed, generation, index]).generate_state(1)[0])


def random_pipeline(n_snps: int, cfg: EvolutionConfig, rng: np.random.Generator,
                    seed: int = 0) -> Pipeline:
    k = min(cfg.max_snps, n_snps)
    snps = tuple(int(s) for s in rng.choice(n_snps, size=k, replace=False))
    ld = LdParams.random(rng, cfg.ld_r2_grid, cfg.d_max_grid, cfg.alpha) if cfg.ld_node else None
    return Pipeline(snps, ld, random_selector(rng), random_regressor(rng), seed)


def _tune_nodes(ld, sel, reg, cfg, rng, ledger):
    if rng.random() >= cfg.p_node_tuning:
        return ld, sel, reg
    nodes = ("ld", "selector", "regressor") if ld is not None else ("selector", "regressor")
    which = nodes[rng.integers(len(nodes))]
    ledger[f"tuning_{which}"] += 1
    if which == "ld":
        return ld.shifted(rng), sel, reg
    if which == "selector":
        return ld, sel.shifted(rng), reg
    return ld, sel, reg.shifted(rng)


def _extend_snps(snps: list[int], anchors_from: Sequence[int], db: SnpDb, cfg, rng, ledger):
    """Append one recommendation per sampled anchor until max_snps is reached."""
    if not anchors_from:
        return snps
    c = int(rng.integers(cfg.min_snps, cfg.max_snps + 1))
    anchors = rng.choice(np.asarray(anchors_from), size=c, replace=True)
    present = set(snps)
    # same draws as rng.choice(3, p=cfg.p_locality), without rebuilding the cdf
    loc_cdf = np.cumsum(cfg.p_locality)
    loc_cdf /= loc_cdf[-1]
    for a in anchors:
        if len(snps) >= cfg.max_snps:
            break
        loc = LOCALITIES[loc_cdf.searchsorted(rng.random(), side="right")]
        strat = Strategy.SMART if rng.random() < cfg.p_smart else Strategy.RANDOM
        ledger[f"locality_{loc.value}"] += 1
        rec = db.recommend(int(a), loc, strat, present, rng)
        if rec is not None:
            snps.append(rec)
            present.add(rec)
    return snps


def offspring_mutation(parent: RankedPipeline, db: SnpDb, cfg: EvolutionConfig,
                       rng: np.random.Generator, ledger: Counter | None = None) -> Pipeline:
    """Child of one parent: its surviving SNPs, nodes, and recommended additions.

    Survivors flagged since the parent's evaluation are not inherited but
    still serve as locality anchors.
    """
    ledger = Counter() if ledger is None else ledger
    ledger["mutations"] += 1
    p = parent.pipeline
    ld, sel, reg = _tune_nodes(p.ld, p.selector, p.regressor, cfg, rng, ledger)
    anchors = sorted(parent.eval.survivors)
    inherited = [s for s in anchors if db.considered[s]]
    snps = _extend_snps(list(inherited), anchors, db, cfg, rng, ledger)
    return Pipeline(tuple(snps[:cfg.max_snps]), ld, sel, reg)


def _weighted_sample(items: list[int], weights: np.ndarray, c: int, rng) -> list[int]:
    w = np.nan_to_num(np.asarray(weights, dtype=float), nan=0.0, neginf=0.0)
    w = np.maximum(w, 0.0)
    pos = np.flatnonzero(w > 0)
    if pos.size >= c:
        idx = rng.choice(len(items), size=c, replace=False, p=w / w.sum())
        return [items[i] for i in idx]
    rest = np.flatnonzero(w <= 0)
    fill = rng.choice(rest, size=c - pos.size, replace=False)
    return [items[i] for i in pos] + [items[i] for i in fill]


def offspring_crossover(pa: RankedPipeline, pb: RankedPipeline, db: SnpDb, cfg: EvolutionConfig,
                        rng: np.random.Generator, ledger: Counter | None = None) -> Pipeline | None:
    """Child of two parents; None if neither parent has surviving SNPs."""
    ledger = Counter() if ledger is None else ledger
    ledger["crossovers"] += 1
    a, b = pa.pipeline, pb.pipeline
    ld = a.ld if rng.random() < 0.5 else b.ld
    sel = a.selector if rng.random() < 0.5 else b.selector
    reg = a.regressor if rng.random() < 0.5 else b.regressor
    union = sorted(pa.eval.survivors | pb.eval.survivors)
    if not union:
        return None
    inheritable = [s for s in union if db.considered[s]]
    c = int(rng.integers(cfg.min_snps, cfg.max_snps + 1))
    if len(inheritable) <= c:
        snps = list(inheritable)
    elif rng.random() < cfg.p_smart:
        ledger["crossover_smart_samples"] += 1
        snps = _weighted_sample(inheritable, db.marginal_r2[inheritable], c, rng)
    else:
        snps = [inheritable[i] for i in rng.choice(len(inheritable), size=c, replace=False)]
    if rng.random() < cfg.p_mutation:
        ledger["crossover_mutations"] += 1
        ld, sel, reg = _tune_nodes(ld, sel, reg, cfg, rng, ledger)
        snps = _extend_snps(snps, list(snps) or union, db, cfg, rng, ledger)
    return Pipeline(tuple(snps[:cfg.max_snps]), ld, sel, reg)


# --- evaluation plumbing ------------------------------------------------------------

_WORKER_DATA: EvalData | None = None


def _init_worker(data: EvalData) -> None:
    global _WORKER_DATA
    _WORKER_DATA = data


def _eval_chunk(pipelines: list[Pipeline], snap: DbSnapshot) -> list[EvalResult]:
    return [evaluate(p, _WORKER_DATA, snap) for p in pipelines]


class BatchEvaluator:
    """Evaluates pipelines against a frozen DB snapshot, optionally in worker processes.

    Results do not depend on ``workers``: each pipeline carries its own seed.
    """

    def __init__(self, data: EvalData, workers: int | None = 1):
        self.data = data
        self.workers = max(1, workers or os.cpu_count() or 1)
        self._pool = None
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(self.workers, initializer=_init_worker,
                                             initargs=(data,))

    def __call__(self, pipelines: Sequence[Pipeline], snap: DbSnapshot) -> list[EvalResult]:
        if self._pool is None:
            return [evaluate(p, self.data, snap) for p in pipelines]
        n_chunks = min(len(pipelines), self.workers * 4) or 1
        chunks = [list(c) for c in np.array_split(np.arange(len(pipelines)), n_chunks)]
        futures = [self._pool.submit(_eval_chunk, [pipelines[i] for i in c], snap)
                   for c in chunks if c]
        out: list[EvalResult] = []
        for f in futures:
            out.extend(f.result())
        return out

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def process_snps(pipelines: Sequence[Pipeline], db: SnpDb, data: EvalData) -> int:
    """Store optimal encodings for SNPs seen for the first time. Returns how many."""
    new = 0
    for p in pipelines:
        for s in p.snps:
            if not db.has_encoding(s):
                res = select_optimal_encoding(data.G_train[:, s], data.y_train,
                                              data.G_val[:, s], data.y_val)
                db.upsert_evaluation(s, res)
                new += 1
    return new


def record_pruned(results: Sequence[EvalResult], db: SnpDb) -> None:
    for r in results:
        if r.pruned:
            db.mark_pruned(sorted(r.pruned))


def _history_row(gen: int, evaluations: int, pop: list[RankedPipeline]) -> HistoryRow:
    front = pareto_members(pop)
    if not front:
        return HistoryRow(gen, evaluations, 0, float("nan"), 0)
    best = max(m.eval.r2 for m in front)
    kmin = min(m.eval.complexity for m in front if m.eval.r2 == best)
    return HistoryRow(gen, evaluations, len(front), best, kmin)


Evaluator = Callable[[Sequence[Pipeline], DbSnapshot], list[EvalResult]]


def _evaluate_generation(pipelines, db, data, evaluator, ledger) -> list[EvalResult]:
    process_snps(pipelines, db, data)
    results = evaluator(pipelines, db.snapshot())
    ledger["evaluations"] += len(results)
    ledger["ld_node_runs"] += sum(p.ld is not None and bool(p.snps) for p in pipelines)
    ledger["failed_evaluations"] += sum(r.failed for r in results)
    record_pruned(results, db)
    return results


def evolve(cfg: EvolutionConfig, data: EvalData, db: SnpDb, evaluator: Evaluator | None = None,
           progress: Callable[[HistoryRow], None] | None = None) -> EvolutionResult:
    """Run the full generational loop and return the final population."""
    evaluator = evaluator or BatchEvaluator(data)
    ledger: Counter = Counter()
    size = cfg.population_size
    rng = np.random.default_rng([cfg.seed, 0])
    init = [random_pipeline(data.n_snps, cfg, rng, pipeline_seed(cfg.seed, 0, i))
            for i in range(size)]
    results = _evaluate_generation(init, db, data, evaluator, ledger)
    pop = [RankedPipeline(p, r) for p, r in zip(init, results) if not r.failed]
    if not pop:
        raise RunAborted("every initial pipeline failed evaluation")
    assign_ranks(pop)
    history = [_history_row(0, ledger["evaluations"], pop)]
    if progress:
        progress(history[-1])

    for gen in range(1, cfg.generations + 1):
        rng = np.random.default_rng([cfg.seed, gen])
        assign_ranks(pop)
        children: list[Pipeline] = []
        for i in range(2 * size):
            if rng.random() < cfg.p_crossover:
                child = offspring_crossover(tournament_select(pop, rng),
                                            tournament_select(pop, rng), db, cfg, rng, ledger)
            else:
                child = offspring_mutation(tournament_select(pop, rng), db, cfg, rng, ledger)
            if child is None:
                ledger["discarded_children"] += 1
                continue
            children.append(replace(child, seed=pipeline_seed(cfg.seed, gen, i)))
        results = _evaluate_generation(children, db, data, evaluator, ledger)
        keep = dedup(results, rng)
        ledger["duplicates_removed"] += sum(not r.failed for r in results) - len(keep)
        objs = [results[i].objectives for i in keep]
        chosen = [keep[i] for i in survival_select(objs, size)]
        if not chosen:
            raise RunAborted(f"no offspring survived generation {gen}")
        pop = assign_ranks([RankedPipeline(children[i], results[i]) for i in chosen])
        history.append(_history_row(gen, ledger["evaluations"], pop))
        if progress:
            progress(history[-1])
    ledger.update(db.counters)
    return EvolutionResult(pop, history, ledger)


def random_control(cfg: EvolutionConfig, data: EvalData, db: SnpDb, budget: int | None = None,
                   evaluator: Evaluator | None = None, chunk: int = 500) -> EvolutionResult:
    """Evaluate ``budget`` random pipelines once, without any variation.

    Only nondominated results keep their fitted models, so memory stays flat.
    """
    evaluator = evaluator or BatchEvaluator(data)
    budget = cfg.budget if budget is None else budget
    ledger: Counter = Counter()
    rng = np.random.default_rng([cfg.seed, 0])
    pipelines = [random_pipeline(data.n_snps, cfg, rng, pipeline_seed(cfg.seed, 0, i))
                 for i in range(budget)]
    process_snps(pipelines, db, data)
    snap = db.snapshot()
    kept: list[RankedPipeline] = []
    all_results: list[EvalResult] = []
    for start in range(0, budget, chunk):
        batch = pipelines[start:start + chunk]
        res = evaluator(batch, snap)
        all_results.extend(res)
        kept.extend(RankedPipeline(p, r) for p, r in zip(batch, res) if not r.failed)
        front_ids = {id(m) for m in pareto_members(kept)}
        for m in kept:
            if id(m) not in front_ids:
                m.eval.model = None
    ledger["evaluations"] += len(all_results)
    ledger["ld_node_runs"] += sum(p.ld is not None for p in pipelines)
    ledger["failed_evaluations"] += sum(r.failed for r in all_results)
    record_pruned(all_results, db)
    if not kept:
        raise RunAborted("every random pipeline failed evaluation")
    assign_ranks(kept)
    ledger.update(db.counters)
    return EvolutionResult(kept, [_history_row(0, ledger["evaluations"], kept)], ledger)
