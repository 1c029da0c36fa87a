import numpy as np
import pytest
from hypothesis import settings

from snpevo.genome import SnpDataset, SnpLabel, assign_bins, impute_split, split
from snpevo.pipeline import EvalData
from snpevo.snpdb import SnpDb
from snpevo.synth import PlantedQtl, SynthSpec, generate_synthetic

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_dataset(G, y=None, chrom=1, spacing=1000):
    G = np.asarray(G, dtype=np.int8)
    n, m = G.shape
    y = np.arange(n, dtype=float) if y is None else np.asarray(y, dtype=float)
    labels = tuple(SnpLabel(chrom, spacing * (j + 1)) for j in range(m))
    return SnpDataset(G, y, labels)


@pytest.fixture(scope="session")
def small_cohort():
    """400 samples, 120 SNPs on 3 chromosomes, two planted QTLs."""
    spec = SynthSpec(n_samples=400, n_snps=120, chromosomes=3, spacing_bp=250_000,
                     qtls=[PlantedQtl(1, 2_500_000, "Additive", target_r2=0.15),
                           PlantedQtl(2, 5_000_000, "Dominant", target_r2=0.10)],
                     seed=11)
    return generate_synthetic(spec)


@pytest.fixture()
def prepared(small_cohort):
    ds = small_cohort.dataset
    sp = impute_split(split(ds, 0.5, 3))
    data = EvalData.from_split(sp)
    db = SnpDb(ds.labels, assign_bins(ds, 10))
    return data, db


_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        num = int(name.split("_")[2])
        label = name.split("_", 3)[3].replace("_", " ")
        terminalreporter.write_line(f"criterion {num:2d} ({label}): {_criteria[name]}")
