"""Synthetic cohorts with LD blocks and planted QTLs for desk-scale checks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encodings import STRICT_CODES, InheritanceModel, encode
from .genome import SnpDataset, SnpLabel, write_dataset


@dataclass
class PlantedQtl:
    """A causal SNP. Give either ``effect`` or ``target_r2``.

    With ``target_r2`` the effect is calibrated on the realised genotypes so
    that the SNP alone explains that share of phenotypic variance.
    """

    chromosome: int
    position: int
    model: str = "Additive"
    effect: float | None = None
    target_r2: float | None = None


@dataclass
class SynthSpec:
    n_samples: int = 1000
    n_snps: int = 2000
    chromosomes: int = 10
    spacing_bp: int = 250_000
    maf_range: tuple[float, float] = (0.1, 0.5)
    ld_block_size: int = 4
    flip_prob: float = 0.05
    qtls: list[PlantedQtl] = field(default_factory=list)
    noise_variance: float | None = None
    seed: int = 0


@dataclass
class SynthResult:
    dataset: SnpDataset
    manifest: dict


def snp_map(spec: SynthSpec) -> list[SnpLabel]:
    """Evenly spaced SNPs; chromosome c holds n_snps // chromosomes (+1 for the first few)."""
    base, extra = divmod(spec.n_snps, spec.chromosomes)
    labels = []
    for c in range(spec.chromosomes):
        for i in range(base + (c < extra)):
            labels.append(SnpLabel(c + 1, spec.spacing_bp * (i + 1)))
    return labels


def _check(spec: SynthSpec, labels: list[SnpLabel]) -> None:
    if spec.n_samples < 2 or spec.n_snps < 1 or spec.chromosomes < 1:
        raise ValueError("need >= 2 samples, >= 1 SNP and >= 1 chromosome")
    if spec.chromosomes > spec.n_snps:
        raise ValueError("more chromosomes than SNPs")
    lo, hi = spec.maf_range
    if not 0 < lo <= hi <= 0.5:
        raise ValueError("maf_range must satisfy 0 < lo <= hi <= 0.5")
    if not 0 <= spec.flip_prob <= 0.5 or spec.ld_block_size < 1:
        raise ValueError("flip_prob in [0, 0.5] and ld_block_size >= 1 required")
    known = set(labels)
    for q in spec.qtls:
        if SnpLabel(q.chromosome, q.position) not in known:
            raise ValueError(f"planted QTL {q.chromosome}.{q.position} is not on the SNP map")
        if InheritanceModel(q.model) not in STRICT_CODES:
            raise ValueError("planted QTLs must use a strict inheritance model")
        if (q.effect is None) == (q.target_r2 is None):
            raise ValueError("give exactly one of effect or target_r2 per QTL")
        if q.effect is not None and q.effect <= 0:
            raise ValueError("effect sizes must be positive")
    total = sum(q.target_r2 or 0.0 for q in spec.qtls)
    if total >= 1:
        raise ValueError("target r^2 values must sum to less than 1")


def _genotypes(spec: SynthSpec, labels: list[SnpLabel], rng) -> np.ndarray:
    n = spec.n_samples
    G = np.empty((n, len(labels)), dtype=np.int8)
    by_chrom: dict[int, list[int]] = {}
    for j, lab in enumerate(labels):
        by_chrom.setdefault(lab.chromosome, []).append(j)
    for cols in by_chrom.values():
        for start in range(0, len(cols), spec.ld_block_size):
            block = cols[start:start + spec.ld_block_size]
            p = rng.uniform(*spec.maf_range)
            hap = rng.random((2, n)) < p
            for j in block:
                flips = rng.random((2, n)) < spec.flip_prob
                G[:, j] = (hap ^ flips).sum(axis=0)
    return G


def _r2_univariate(x: np.ndarray, y: np.ndarray) -> float:
    if np.ptp(x) == 0:
        return 0.0
    return float(np.corrcoef(x, y)[0, 1] ** 2)


def generate_synthetic(spec: SynthSpec) -> SynthResult:
    """Draw genotypes block by block and build the phenotype from planted QTLs.

    Within an LD block every SNP copies the block's two seed haplotypes with
    independent per-site flips; ``flip_prob = 0`` yields identical columns.
    """
    labels = snp_map(spec)
    _check(spec, labels)
    rng = np.random.default_rng(spec.seed)
    G = _genotypes(spec, labels, rng)
    col = {lab: j for j, lab in enumerate(labels)}
    n = spec.n_samples
    signal = np.zeros(n)
    effects = []
    for q in spec.qtls:
        x = encode(G[:, col[SnpLabel(q.chromosome, q.position)]], STRICT_CODES[InheritanceModel(q.model)])
        if q.effect is not None:
            eff = q.effect
        else:
            var = x.var()
            if var == 0:
                raise ValueError(f"planted QTL {q.chromosome}.{q.position} is monomorphic")
            eff = float(np.sqrt(q.target_r2 / var))
        effects.append(eff)
        signal += eff * x
    noise_var = spec.noise_variance
    if noise_var is None:
        noise_var = 1.0 - sum(q.target_r2 or 0.0 for q in spec.qtls) if spec.qtls else 1.0
    y = signal + rng.normal(0.0, np.sqrt(noise_var), n) if noise_var > 0 else signal
    ds = SnpDataset(G, y, tuple(labels))
    planted = []
    for q, eff in zip(spec.qtls, effects):
        x = encode(G[:, col[SnpLabel(q.chromosome, q.position)]], STRICT_CODES[InheritanceModel(q.model)])
        planted.append({"snp": f"{q.chromosome}.{q.position}", "model": q.model, "effect": eff,
                        "target_r2": q.target_r2, "realized_r2": _r2_univariate(x, y)})
    manifest = {"format_version": 1, "spec": asdict(spec), "noise_variance": noise_var,
                "planted": planted}
    return SynthResult(ds, manifest)


def desk_spec(seed: int = 0, **overrides) -> SynthSpec:
    """1,000 samples x 2,000 SNPs with four QTLs under four strict models."""
    qtls = [
        PlantedQtl(1, 25_000_000, "Additive", target_r2=0.06),
        PlantedQtl(3, 12_500_000, "Dominant", target_r2=0.06),
        PlantedQtl(5, 37_500_000, "Recessive", target_r2=0.05),
        PlantedQtl(8, 20_000_000, "Heterosis", target_r2=0.05),
    ]
    kw = dict(qtls=qtls, seed=seed)
    kw.update(overrides)
    return SynthSpec(**kw)


def write_synthetic(result: SynthResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"dataset": out / "dataset.tsv", "manifest": out / "truth.json",
             "targets": out / "targets.tsv"}
    write_dataset(result.dataset, paths["dataset"])
    paths["manifest"].write_text(json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
    with paths["targets"].open("w") as fh:
        fh.write("snp\tmodel\twindow_bp\n")
        for q in result.manifest["planted"]:
            fh.write(f"{q['snp']}\t{q['model']}\t1000000\n")
    return paths
