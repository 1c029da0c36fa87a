"""Replicate orchestration for the three experimental modes and summary files.

A replicate prepares the data (QC, split, per-half imputation, bins), runs
one mode, analyses the final Pareto front and writes its summary files. A
sweep runs replicates under derived seeds and aggregates them from disk.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
import traceback
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis
from .config import RunConfig
from .evolution import BatchEvaluator, EvolutionResult, RankedPipeline, evolve, random_control
from .genome import (SnpDataset, SnpLabel, impute_split, parse_label, qc_filter, read_dataset,
                     split, write_qc_report, assign_bins)
from .pipeline import EvalData
from .snpdb import SnpDb

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
SUMMARY_FILES = ("pareto_front.tsv", "consistency.tsv", "qtl_report.tsv", "metrics.tsv",
                 "history.tsv", "snp_db.tsv", "qc_report.tsv", "ledger.tsv")
METRIC_COLUMNS = ("mode", "seed", "evaluations", "front_size", "hypervolume", "diversity",
                  "coverage", "qtl_hits", "qtl_targets", "qtl_accuracy", "mean_precision_bp")
LEDGER_KEYS = ("evaluations", "failed_evaluations", "ld_node_runs", "crossovers", "mutations",
               "crossover_mutations", "smart_draws", "random_draws", "flag_writes_pruned",
               "flag_writes_negative_r2", "encodings_stored")
AGGREGATED = ("evaluations", "front_size", "hypervolume", "diversity", "coverage", "qtl_hits",
              "qtl_accuracy", "mean_precision_bp", "runtime_seconds")


@dataclass
class Prepared:
    dataset: SnpDataset
    removed: list[tuple[SnpLabel, str]]
    data: EvalData
    db: SnpDb


@dataclass
class ReplicateResult:
    out_dir: Path
    metrics: dict
    consistency: list[analysis.ConsistencyEntry]
    hits: list[bool]
    precisions: list[int | None]
    ledger: dict
    runtime_seconds: float
    front: list[RankedPipeline] = field(default_factory=list, repr=False)


# --- formatting helpers ---------------------------------------------------------------

def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_tsv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_tsv(path: Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def read_targets(path: str | Path) -> list[analysis.QtlTarget]:
    """Targets file: header with ``snp`` and optional ``window_bp`` / ``model``."""
    rows = read_tsv(Path(path))
    if rows and "snp" not in rows[0]:
        raise ValueError(f"{path}: targets file needs a 'snp' column")
    return [analysis.QtlTarget(parse_label(r["snp"]), int(r.get("window_bp") or 1_000_000),
                               r.get("model") or None) for r in rows]


def replicate_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


# --- one replicate ----------------------------------------------------------------------

def prepare(cfg: RunConfig, dataset: SnpDataset | None = None) -> Prepared:
    """QC, split with the replicate seed, impute each half, bin and build the DB."""
    ds = dataset if dataset is not None else read_dataset(cfg.dataset)
    ds, removed = qc_filter(ds, cfg.max_missing, cfg.min_maf)
    if ds.n_snps == 0:
        raise ValueError("no SNPs left after quality control")
    sp = impute_split(split(ds, cfg.split_fraction, cfg.seed))
    data = EvalData.from_split(sp)
    db = SnpDb(ds.labels, assign_bins(ds, cfg.bin_size), flagging=cfg.flagging)
    return Prepared(ds, removed, data, db)


def search(cfg: RunConfig, prep: Prepared) -> EvolutionResult:
    ecfg = cfg.evolution_config()
    with BatchEvaluator(prep.data, cfg.workers) as ev:
        if cfg.mode == "random":
            return random_control(ecfg, prep.data, prep.db, cfg.evaluation_budget, ev)

        def progress(h):
            log.info("gen %d: evaluations=%d front=%d best_r2=%.4f", h.generation,
                     h.evaluations, h.front0_size, h.best_r2)
        return evolve(ecfg, prep.data, prep.db, ev, progress)


def _front_labels(front: Sequence[RankedPipeline], labels) -> list[SnpLabel]:
    return sorted({labels[s] for m in front for s in m.eval.survivors})


def analyse(cfg: RunConfig, prep: Prepared, result: EvolutionResult,
            targets: Sequence[analysis.QtlTarget]):
    front = sorted(result.pareto_front(), key=lambda m: (m.eval.complexity, -m.eval.r2))
    labels = prep.data.labels
    imps = analysis.front_importances(front, prep.data, prep.db, cfg.n_permutations, cfg.seed)
    imps_by_label = [{labels[s]: v for s, v in imp.items()} for imp in imps]
    encs = {labels[i]: e.value for i, e in enumerate(prep.db.encoding) if e is not None}
    consistency = analysis.consistency_scores(imps_by_label, encs)
    front_snps = _front_labels(front, labels)
    hits = analysis.qtl_hits(front_snps, targets)
    precisions = [analysis.qtl_precision(front_snps, t) for t in targets]
    defined = [p for p in precisions if p is not None]
    metrics = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "evaluations": result.ledger["evaluations"],
        "front_size": len(front),
        "hypervolume": analysis.hypervolume([m.eval.objectives for m in front]),
        "diversity": analysis.snp_diversity([m.eval.survivors for m in front], prep.db.bin),
        "coverage": analysis.data_coverage(prep.db),
        "qtl_hits": sum(hits),
        "qtl_targets": len(targets),
        "qtl_accuracy": sum(hits) / len(targets) if targets else float("nan"),
        "mean_precision_bp": float(np.mean(defined)) if defined else float("nan"),
    }
    return front, consistency, hits, precisions, metrics


def write_replicate(out: Path, cfg: RunConfig, prep: Prepared, result: EvolutionResult, front,
                    consistency, targets, hits, precisions, metrics) -> None:
    out.mkdir(parents=True, exist_ok=True)
    labels = prep.data.labels
    write_tsv(out / "pareto_front.tsv",
              ("pipeline", "r2", "complexity", "ld", "selector", "regressor", "snps"),
              ((i, m.eval.r2, m.eval.complexity,
                m.pipeline.ld.describe() if m.pipeline.ld else "none",
                m.pipeline.selector.describe(), m.pipeline.regressor.describe(),
                ",".join(str(s) for s in sorted(labels[j] for j in m.eval.survivors)))
               for i, m in enumerate(front)))
    write_tsv(out / "consistency.tsv",
              ("snp", "chr", "pos", "mean_rank", "appearance", "score", "modal_encoder"),
              ((e.snp, e.snp.chromosome, e.snp.position, e.mean_rank, e.appearance_proportion,
                e.score, e.modal_encoding) for e in consistency))
    write_tsv(out / "qtl_report.tsv", ("target", "hit", "precision_bp"),
              ((t.snp, h, p) for t, h, p in zip(targets, hits, precisions)))
    write_tsv(out / "metrics.tsv", METRIC_COLUMNS, [[metrics[c] for c in METRIC_COLUMNS]])
    write_tsv(out / "history.tsv",
              ("generation", "evaluations", "front0_size", "best_r2", "min_complexity_at_best"),
              ((h.generation, h.evaluations, h.front0_size, h.best_r2, h.min_complexity_at_best)
               for h in result.history))
    prep.db.write(out / "snp_db.tsv")
    write_qc_report(prep.removed, out / "qc_report.tsv")
    ledger = {k: 0 for k in LEDGER_KEYS}
    ledger.update(result.ledger)
    write_tsv(out / "ledger.tsv", ("operation", "count"), sorted(ledger.items()))


def _write_manifest(out: Path, cfg: RunConfig, extra: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": FORMAT_VERSION, "config": cfg.echo(), "seed": cfg.seed,
                "python": platform.python_version(), **extra}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_replicate(cfg: RunConfig, out_dir: str | Path | None = None,
                  dataset: SnpDataset | None = None,
                  targets: Sequence[analysis.QtlTarget] | None = None) -> ReplicateResult:
    """Run one replicate of ``cfg.mode`` and write its summary files.

    Raises:
        RunAborted: the search could not continue (e.g. every pipeline failed).
    """
    out = Path(out_dir if out_dir is not None else cfg.out)
    if targets is None:
        targets = read_targets(cfg.targets) if cfg.targets else []
    started = time.time()
    t0 = time.perf_counter()
    prep = prepare(cfg, dataset)
    log.info("replicate seed=%d mode=%s: %d samples, %d SNPs after QC", cfg.seed, cfg.mode,
             prep.dataset.n_samples, prep.dataset.n_snps)
    result = search(cfg, prep)
    front, consistency, hits, precisions, metrics = analyse(cfg, prep, result, targets)
    runtime = time.perf_counter() - t0
    write_replicate(out, cfg, prep, result, front, consistency, targets, hits, precisions,
                    metrics)
    write_tsv(out / "runtime.tsv", ("runtime_seconds",), [[runtime]])
    _write_manifest(out, cfg, {"started_unix": started, "runtime_seconds": runtime,
                               "n_samples": prep.dataset.n_samples,
                               "n_snps": prep.dataset.n_snps,
                               "summary_files": list(SUMMARY_FILES)})
    return ReplicateResult(out, metrics, consistency, hits, precisions, dict(result.ledger),
                           runtime, front)


# --- sweeps and aggregation -----------------------------------------------------------------

def mean_se(values: Sequence[float]) -> tuple[float, float, int]:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan"), 0
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se, int(v.size)


def _read_consistency(path: Path) -> list[analysis.ConsistencyEntry]:
    return [analysis.ConsistencyEntry(parse_label(r["snp"]), float(r["mean_rank"]),
                                      float(r["appearance"]), float(r["score"]),
                                      r["modal_encoder"] or None)
            for r in read_tsv(path)]


def report(replicate_dirs: Sequence[str | Path], out_dir: str | Path, k: int = 50,
           window: int = 1_000_000) -> dict:
    """Aggregate finished replicate directories into sweep-level tables.

    Writes aggregate.tsv (metric, mean, se, n), qtl_aggregate.tsv,
    cross_consistency.tsv and peaks.tsv; runtime goes to runtime.tsv only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dirs = [Path(d) for d in replicate_dirs]
    metrics = [read_tsv(d / "metrics.tsv")[0] for d in dirs]
    runtimes = [float(read_tsv(d / "runtime.tsv")[0]["runtime_seconds"])
                if (d / "runtime.tsv").exists() else float("nan") for d in dirs]
    agg = {}
    for name in AGGREGATED:
        if name == "runtime_seconds":
            continue
        agg[name] = mean_se([float(m[name]) for m in metrics])
    write_tsv(out / "aggregate.tsv", ("metric", "mean", "se", "n"),
              ((name, *agg[name]) for name in agg))
    write_tsv(out / "runtime.tsv", ("metric", "mean", "se", "n"),
              [("runtime_seconds", *mean_se(runtimes))])

    per_target: dict[str, list] = defaultdict(list)
    for d in dirs:
        for r in read_tsv(d / "qtl_report.tsv"):
            per_target[r["target"]].append(r)
    rows = []
    for t in sorted(per_target, key=parse_label):
        rs = per_target[t]
        hit_rate = sum(r["hit"] == "true" for r in rs) / len(rs)
        prec = mean_se([float(r["precision_bp"]) for r in rs if r["precision_bp"]])
        rows.append((t, hit_rate, *prec))
    write_tsv(out / "qtl_aggregate.tsv",
              ("target", "hit_rate", "precision_mean_bp", "precision_se_bp", "n_defined"), rows)
    hit_counts = [int(m["qtl_hits"]) for m in metrics]
    n_targets = int(metrics[0]["qtl_targets"]) if metrics else 0
    overall = analysis.overall_accuracy(hit_counts, n_targets) if n_targets else float("nan")

    entries = [_read_consistency(d / "consistency.tsv") for d in dirs]
    min_reps = 2 if len(dirs) >= 2 else 1
    cross = analysis.aggregate_consistency(entries, min_reps)
    write_tsv(out / "cross_consistency.tsv",
              ("snp", "chr", "pos", "n_replicates", "mean_score", "modal_encoder"),
              ((s, s.chromosome, s.position, *cross[s]) for s in sorted(cross)))
    peaks = analysis.top_peaks(entries, k, window, min_reps)
    write_tsv(out / "peaks.tsv",
              ("snp", "chr", "pos", "n_replicates", "mean_score", "modal_encoder", "region_size"),
              ((p.snp, p.snp.chromosome, p.snp.position, p.n_replicates, p.mean_score,
                p.modal_encoding, p.region_size) for p in peaks))
    return {"aggregate": agg, "overall_accuracy": overall, "peaks": peaks,
            "runtime": mean_se(runtimes)}


def sweep(cfg: RunConfig, n_replicates: int | None = None, out_dir: str | Path | None = None,
          seeds: Sequence[int] | None = None, dataset: SnpDataset | None = None,
          targets: Sequence[analysis.QtlTarget] | None = None) -> dict:
    """Run replicates under derived seeds; a failing replicate does not stop the others."""
    n = n_replicates or cfg.replicates
    if n < 1:
        raise ValueError("need at least one replicate")
    seeds = list(seeds) if seeds is not None else [replicate_seed(cfg.seed, i) for i in range(n)]
    if len(seeds) != n:
        raise ValueError("one seed per replicate required")
    out = Path(out_dir if out_dir is not None else cfg.out)
    if dataset is None and cfg.dataset:
        dataset = read_dataset(cfg.dataset)
    if targets is None:
        targets = read_targets(cfg.targets) if cfg.targets else []
    done, failures = [], []
    for i, seed in enumerate(seeds):
        rep_dir = out / f"rep_{i:03d}"
        try:
            run_replicate(replace(cfg, seed=seed), rep_dir, dataset, targets)
            done.append(rep_dir)
        except Exception as exc:
            log.error("replicate %d (seed %d) failed: %s", i, seed, exc)
            failures.append((i, seed, f"{type(exc).__name__}: {exc}"))
            (rep_dir).mkdir(parents=True, exist_ok=True)
            (rep_dir / "error.txt").write_text(traceback.format_exc())
    write_tsv(out / "failures.tsv", ("replicate", "seed", "error"), failures)
    summary = report(done, out) if done else {}
    summary.update(completed=len(done), failed=len(failures), seeds=seeds)
    _write_manifest(out, cfg, {"replicates": n, "seeds": seeds, "completed": len(done),
                               "failed": len(failures)})
    return summary
