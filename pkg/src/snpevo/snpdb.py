"""Per-SNP knowledge base and offspring SNP recommendations.

SNPs are addressed by their integer column id in the prepared dataset. State
lives in flat numpy arrays so that locality/eligibility masks are cheap.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encodings import EncodingResult, InheritanceModel
from .genome import BinIndex, SnpLabel

MAX_ATTEMPTS = 20


class Locality(Enum):
    WITHIN_BIN = "within_bin"
    WITHIN_CHROMOSOME = "within_chromosome"
    OUTSIDE_CHROMOSOME = "outside_chromosome"


class Strategy(Enum):
    SMART = "smart"
    RANDOM = "random"


LOCALITIES = tuple(Locality)


class SnpExhaustedError(RuntimeError):
    """No SNP with a true consideration flag remains."""


@dataclass
class SnpRecord:
    snp: SnpLabel
    bin_id: int
    marginal_r2: float | None = None
    encoding: InheritanceModel | None = None
    considered: bool = True


@dataclass(frozen=True, eq=False)
class DbSnapshot:
    """Read-only view used by pipeline evaluation."""

    considered: np.ndarray
    marginal_r2: np.ndarray
    codes: np.ndarray


class SnpDb:
    """Per-SNP marginal r^2, encoding, bin and consideration flag.

    Args:
        labels: SNP labels in dataset column order.
        bin_index: bin assignment covering every label.
        flagging: when False, neither negative r^2 nor LD pruning ever clears
            a consideration flag (the biologically naive configuration).
    """

    def __init__(self, labels: Sequence[SnpLabel], bin_index: BinIndex, flagging: bool = True):
        self.labels = tuple(labels)
        self.bin_index = bin_index
        self.flagging = flagging
        n = len(self.labels)
        self.chrom = np.array([lab.chromosome for lab in self.labels], dtype=np.int64)
        self.bin = np.array([bin_index.bin_of[lab] for lab in self.labels], dtype=np.int64)
        self.considered = np.ones(n, dtype=bool)
        self.marginal_r2 = np.full(n, np.nan)
        self.codes = np.full((n, 3), np.nan)
        self.encoding: list[InheritanceModel | None] = [None] * n
        self.counters: Counter = Counter()

    def __len__(self) -> int:
        return len(self.labels)

    def record(self, snp: int) -> SnpRecord:
        r2 = self.marginal_r2[snp]
        return SnpRecord(self.labels[snp], int(self.bin[snp]),
                         None if np.isnan(r2) else float(r2),
                         self.encoding[snp], bool(self.considered[snp]))

    def has_encoding(self, snp: int) -> bool:
        return self.encoding[snp] is not None

    def snapshot(self) -> DbSnapshot:
        return DbSnapshot(self.considered.copy(), self.marginal_r2.copy(), self.codes.copy())

    # --- writes -------------------------------------------------------------

    def upsert_evaluation(self, snp: int, result: EncodingResult) -> None:
        """Store a SNP's optimal encoding once; later calls are no-ops."""
        if self.encoding[snp] is not None:
            return
        self.encoding[snp] = result.model
        self.marginal_r2[snp] = result.marginal_validation_r2
        self.codes[snp] = result.codes
        self.counters["encodings_stored"] += 1
        if result.marginal_validation_r2 < 0 and self.flagging:
            if self.considered[snp]:
                self.counters["flag_writes_negative_r2"] += 1
            self.considered[snp] = False

    def mark_pruned(self, snps: Iterable[int]) -> None:
        if not self.flagging:
            return
        for s in snps:
            if self.considered[s]:
                self.counters["flag_writes_pruned"] += 1
            self.considered[s] = False

    # --- recommendations ----------------------------------------------------

    def _locality_mask(self, anchor: int, locality: Locality) -> np.ndarray:
        if locality is Locality.WITHIN_BIN:
            return self.bin == self.bin[anchor]
        same_chrom = self.chrom == self.chrom[anchor]
        if locality is Locality.WITHIN_CHROMOSOME:
            return same_chrom & (self.bin != self.bin[anchor])
        return ~same_chrom

    def _draw(self, pool: np.ndarray, weights: np.ndarray | None, exclude,
              rng: np.random.Generator) -> int | None:
        """Up to MAX_ATTEMPTS draws from ``pool``, skipping excluded SNPs.

        Consumes the generator exactly like ``rng.choice(pool.size, p=...)``
        per attempt, with the cumulative weights built once.
        """
        if pool.size == 0:
            return None
        cdf = None
        if weights is not None:
            total = weights.sum()
            if not total > 0:
                return None
            cdf = (weights / total).cumsum()
            cdf /= cdf[-1]
        for _ in range(MAX_ATTEMPTS):
            if cdf is None:
                i = rng.integers(0, pool.size)
            else:
                i = cdf.searchsorted(rng.random(), side="right")
            pick = int(pool[i])
            if pick not in exclude:
                return pick
            self.counters["failed_attempts"] += 1
        return None

    def recommend(self, anchor: int, locality: Locality, strategy: Strategy,
                  exclude: set[int] | frozenset[int], rng: np.random.Generator) -> int | None:
        """Recommend one SNP relative to ``anchor``.

        Smart draws are weighted by stored marginal r^2 among SNPs that have
        one; random draws are uniform over considered SNPs in the locality.
        Each strategy gets up to 20 draws; smart falls back to random, and
        random falls back to a uniform pick over every considered SNP outside
        ``exclude``. Returns None when all considered SNPs are excluded.

        Raises:
            SnpExhaustedError: if no SNP is considered anywhere.
        """
        if not self.considered.any():
            raise SnpExhaustedError("no SNP with a true consideration flag remains")
        eligible = self.considered & self._locality_mask(anchor, locality)
        if strategy is Strategy.SMART:
            self.counters["smart_draws"] += 1
            smart = eligible & ~np.isnan(self.marginal_r2) & (self.marginal_r2 > 0)
            pool = np.flatnonzero(smart)
            pick = self._draw(pool, self.marginal_r2[pool], exclude, rng)
            if pick is not None:
                return pick
            self.counters["smart_fallbacks"] += 1
        self.counters["random_draws"] += 1
        pick = self._draw(np.flatnonzero(eligible), None, exclude, rng)
        if pick is not None:
            return pick
        self.counters["global_fallbacks"] += 1
        mask = self.considered.copy()
        if exclude:
            mask[np.fromiter(exclude, dtype=np.int64, count=len(exclude))] = False
        pool = np.flatnonzero(mask)
        if pool.size == 0:
            self.counters["no_candidate"] += 1
            return None
        return int(pool[rng.integers(pool.size)])

    # --- export -------------------------------------------------------------

    def write(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["snp", "chromosome", "position", "bin_id", "marginal_r2",
                        "encoding", "considered"])
            for i in sorted(range(len(self)), key=lambda i: self.labels[i]):
                lab = self.labels[i]
                r2 = self.marginal_r2[i]
                w.writerow([str(lab), lab.chromosome, lab.position, int(self.bin[i]),
                            "" if np.isnan(r2) else repr(float(r2)),
                            "" if self.encoding[i] is None else self.encoding[i].value,
                            str(bool(self.considered[i])).lower()])

