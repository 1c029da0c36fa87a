"""Genotype matrix loading, quality control, imputation, splitting and binning.

Genotypes are stored as int8 in additive form (0, 1, 2 minor-allele counts)
with ``MISSING`` (-1) marking absent calls. Datasets are immutable once built.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MISSING = -1
MISSING_TOKENS = frozenset({"", "NA", "na", "NaN", "nan"})

_LABEL_RE = re.compile(r"^\s*(\d+)\.(\d+)\s*$")


class LabelParseError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class SnpLabel:
    """Genomic coordinate of a SNP, written ``chr.position``."""

    chromosome: int
    position: int

    def __post_init__(self):
        if self.chromosome < 1 or self.position < 1:
            raise ValueError(f"chromosome and position must be positive: {self}")

    def __str__(self) -> str:
        return f"{self.chromosome}.{self.position}"


def parse_label(text: str) -> SnpLabel:
    m = _LABEL_RE.match(text)
    if m is None:
        raise LabelParseError(f"column {text!r} is not of the form chr.position")
    try:
        return SnpLabel(int(m.group(1)), int(m.group(2)))
    except ValueError as exc:
        raise LabelParseError(f"column {text!r}: {exc}") from exc


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SnpDataset:
    """Samples x SNPs genotype matrix with a quantitative phenotype.

    Attributes:
        genotypes: int8 array (n_samples, n_snps) with values in {0, 1, 2, MISSING}.
        phenotype: float array (n_samples,), no missing values.
        labels: one SnpLabel per column, unique.
    """

    genotypes: np.ndarray
    phenotype: np.ndarray
    labels: tuple[SnpLabel, ...]

    def __post_init__(self):
        g = np.asarray(self.genotypes)
        if g.ndim != 2:
            raise ValueError("genotypes must be 2-D")
        if not np.isin(g, (MISSING, 0, 1, 2)).all():
            raise ValueError("genotype values must be 0, 1, 2 or missing")
        y = np.asarray(self.phenotype, dtype=float)
        if y.shape != (g.shape[0],):
            raise ValueError("phenotype length does not match genotype rows")
        if not np.isfinite(y).all():
            raise ValueError("phenotype contains missing or non-finite values")
        if g.shape[0] < 2:
            raise ValueError("need at least two samples")
        labels = tuple(self.labels)
        if len(labels) != g.shape[1]:
            raise ValueError("one label per genotype column required")
        if len(set(labels)) != len(labels):
            raise ValueError("SNP labels must be unique")
        object.__setattr__(self, "genotypes", _readonly(g.astype(np.int8)))
        object.__setattr__(self, "phenotype", _readonly(y))
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.genotypes.shape[0]

    @property
    def n_snps(self) -> int:
        return self.genotypes.shape[1]

    @cached_property
    def column_of(self) -> dict[SnpLabel, int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    def column(self, label: SnpLabel) -> np.ndarray:
        return self.genotypes[:, self.column_of[label]]

    def take_samples(self, idx: Sequence[int]) -> SnpDataset:
        idx = np.asarray(idx, dtype=int)
        return SnpDataset(self.genotypes[idx], self.phenotype[idx], self.labels)

    def take_snps(self, idx: Sequence[int]) -> SnpDataset:
        idx = np.asarray(idx, dtype=int)
        return SnpDataset(self.genotypes[:, idx], self.phenotype,
                          tuple(self.labels[i] for i in idx))


@dataclass(frozen=True, eq=False)
class DataSplit:
    train: SnpDataset
    validate: SnpDataset
    split_fraction: float
    train_idx: np.ndarray = field(repr=False)
    validate_idx: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class BinIndex:
    """Assignment of SNPs to fixed-size, single-chromosome bins.

    Bin ids are consecutive integers ordered by (chromosome, position).
    """

    bin_of: dict[SnpLabel, int]
    bins: dict[int, tuple[SnpLabel, ...]]
    bin_size: int

    def chromosome_of_bin(self, bin_id: int) -> int:
        return self.bins[bin_id][0].chromosome


# --- I/O -------------------------------------------------------------------

def _delimiter_for(path: Path) -> str:
    return "," if path.suffix.lower() == ".csv" else "\t"


def read_dataset(path: str | Path, delimiter: str | None = None) -> SnpDataset:
    """Read a delimiter-separated genotype matrix.

    The header is ``phenotype`` followed by ``chr.position`` labels; each row is
    one sample. Empty fields and ``NA`` are missing genotypes.
    """
    path = Path(path)
    delimiter = delimiter or _delimiter_for(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path} is empty") from None
        if not header or header[0].strip().lower() != "phenotype":
            raise ValueError(f"{path}: first column must be 'phenotype'")
        labels = tuple(parse_label(h) for h in header[1:])
        pheno: list[float] = []
        rows: list[list[int]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            pheno.append(float(row[0]))
            rows.append([MISSING if v.strip() in MISSING_TOKENS else int(v) for v in row[1:]])
    if not rows:
        raise EmptyDatasetError(f"{path} has no samples")
    return SnpDataset(np.array(rows, dtype=np.int8), np.array(pheno), labels)


def write_dataset(ds: SnpDataset, path: str | Path, delimiter: str | None = None) -> None:
    path = Path(path)
    delimiter = delimiter or _delimiter_for(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["phenotype", *map(str, ds.labels)])
        for y, row in zip(ds.phenotype, ds.genotypes):
            w.writerow([repr(float(y)), *("NA" if v == MISSING else str(v) for v in row)])


def write_qc_report(removed: Iterable[tuple[SnpLabel, str]], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["snp", "reason"])
        for lab, reason in removed:
            w.writerow([str(lab), reason])


# --- QC and preprocessing ----------------------------------------------------

def maf(column: np.ndarray) -> float:
    """Minor allele frequency over non-missing calls."""
    col = np.asarray(column)
    called = col[col != MISSING]
    if called.size == 0:
        raise ValueError("MAF undefined: all genotypes missing")
    p = (2 * np.count_nonzero(called == 2) + np.count_nonzero(called == 1)) / (2 * called.size)
    return float(min(p, 1.0 - p))


def qc_filter(ds: SnpDataset, max_missing: float = 0.05,
              min_maf: float = 0.01) -> tuple[SnpDataset, list[tuple[SnpLabel, str]]]:
    """Drop SNPs with missingness >= max_missing, zero variance, or MAF <= min_maf.

    Returns the filtered dataset and a list of (label, reason) for removed SNPs.
    """
    if not 0 <= max_missing < 1:
        raise ValueError("max_missing must be in [0, 1)")
    if not 0 <= min_maf < 0.5:
        raise ValueError("min_maf must be in [0, 0.5)")
    keep: list[int] = []
    removed: list[tuple[SnpLabel, str]] = []
    for j, lab in enumerate(ds.labels):
        col = ds.genotypes[:, j]
        called = col[col != MISSING]
        if called.size == 0 or (col.size - called.size) / col.size >= max_missing:
            removed.append((lab, "missingness"))
        elif np.all(called == called[0]):
            removed.append((lab, "zero_variance"))
        elif maf(col) <= min_maf:
            removed.append((lab, "maf"))
        else:
            keep.append(j)
    if not keep:
        raise EmptyDatasetError("quality control removed every SNP")
    return ds.take_snps(keep), removed


def column_modes(genotypes: np.ndarray) -> np.ndarray:
    """Modal genotype per column; ties go to the smaller code."""
    g = np.asarray(genotypes)
    counts = np.stack([(g == k).sum(axis=0) for k in (0, 1, 2)])
    if (counts.sum(axis=0) == 0).any():
        bad = np.flatnonzero(counts.sum(axis=0) == 0)
        raise ValueError(f"columns {bad.tolist()} have no called genotypes")
    return counts.argmax(axis=0).astype(np.int8)


def impute_mode(ds: SnpDataset) -> SnpDataset:
    g = ds.genotypes
    if not (g == MISSING).any():
        return ds
    modes = column_modes(g)
    filled = np.where(g == MISSING, modes[None, :], g)
    return SnpDataset(filled, ds.phenotype, ds.labels)


def split(ds: SnpDataset, fraction: float = 0.5, seed: int = 0) -> DataSplit:
    """Random train/validate partition; train receives floor(fraction * n) samples."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    n = ds.n_samples
    n_train = int(np.floor(fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"fraction {fraction} leaves an empty half for {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    tr = np.sort(perm[:n_train])
    va = np.sort(perm[n_train:])
    return DataSplit(ds.take_samples(tr), ds.take_samples(va), fraction, tr, va)


def impute_split(sp: DataSplit) -> DataSplit:
    """Mode-impute each half with its own column modes."""
    return DataSplit(impute_mode(sp.train), impute_mode(sp.validate), sp.split_fraction,
                     sp.train_idx, sp.validate_idx)


def assign_bins(snps: SnpDataset | Iterable[SnpLabel], bin_size: int = 500) -> BinIndex:
    if bin_size < 1:
        raise ValueError("bin_size must be >= 1")
    labels = snps.labels if isinstance(snps, SnpDataset) else tuple(snps)
    bin_of: dict[SnpLabel, int] = {}
    bins: dict[int, tuple[SnpLabel, ...]] = {}
    by_chrom: dict[int, list[SnpLabel]] = {}
    for lab in labels:
        by_chrom.setdefault(lab.chromosome, []).append(lab)
    next_id = 0
    for chrom in sorted(by_chrom):
        ordered = sorted(by_chrom[chrom])
        for start in range(0, len(ordered), bin_size):
            chunk = tuple(ordered[start:start + bin_size])
            bins[next_id] = chunk
            for lab in chunk:
                bin_of[lab] = next_id
            next_id += 1
    return BinIndex(bin_of, bins, bin_size)
