import json

import numpy as np
import pytest

from snpevo.genome import read_dataset
from snpevo.synth import PlantedQtl, SynthSpec, desk_spec, generate_synthetic, snp_map, \
    write_synthetic


def r2(x, y):
    return np.corrcoef(x, y)[0, 1] ** 2


def test_snp_map_even_split():
    labels = snp_map(SynthSpec(n_snps=7, chromosomes=3, spacing_bp=100))
    assert [str(s) for s in labels] == ["1.100", "1.200", "1.300", "2.100", "2.200", "3.100",
                                        "3.200"]


def test_noiseless_additive_exact():
    spec = SynthSpec(n_samples=300, n_snps=20, chromosomes=2, noise_variance=0.0,
                     qtls=[PlantedQtl(1, 500_000, "Additive", effect=1.5)], seed=1)
    res = generate_synthetic(spec)
    ds = res.dataset
    g = ds.genotypes[:, ds.labels.index(snp_map(spec)[1])]
    assert r2(g, ds.phenotype) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(ds.phenotype, 1.5 * g / 2)


def test_no_flips_gives_duplicate_columns():
    res = generate_synthetic(SynthSpec(n_samples=100, n_snps=8, chromosomes=1, ld_block_size=4,
                                       flip_prob=0.0, seed=2))
    G = res.dataset.genotypes
    np.testing.assert_array_equal(G[:, 0], G[:, 3])
    np.testing.assert_array_equal(G[:, 4], G[:, 7])


def test_flips_create_partial_ld():
    res = generate_synthetic(SynthSpec(n_samples=2000, n_snps=4, chromosomes=1, ld_block_size=4,
                                       flip_prob=0.05, maf_range=(0.4, 0.5), seed=2))
    G = res.dataset.genotypes
    assert 0.5 < r2(G[:, 0], G[:, 1]) < 1.0


def test_dominant_target_calibrated():
    spec = SynthSpec(n_samples=1000, n_snps=40, chromosomes=2,
                     qtls=[PlantedQtl(2, 2_500_000, "Dominant", target_r2=0.05)], seed=5)
    planted = generate_synthetic(spec).manifest["planted"][0]
    assert planted["realized_r2"] == pytest.approx(0.05, abs=0.02)


def test_desk_cohort_targets_detectable():
    res = generate_synthetic(desk_spec(0))
    assert res.dataset.genotypes.shape == (1000, 2000)
    realized = [q["realized_r2"] for q in res.manifest["planted"]]
    assert all(0.03 <= v <= 0.10 for v in realized)
    assert {q["model"] for q in res.manifest["planted"]} == {"Additive", "Dominant", "Recessive",
                                                            "Heterosis"}


def test_deterministic():
    a = generate_synthetic(desk_spec(3, n_samples=50))
    b = generate_synthetic(desk_spec(3, n_samples=50))
    np.testing.assert_array_equal(a.dataset.genotypes, b.dataset.genotypes)
    np.testing.assert_array_equal(a.dataset.phenotype, b.dataset.phenotype)


@pytest.mark.parametrize("kw", [
    dict(qtls=[PlantedQtl(1, 123, "Additive", effect=1.0)]),
    dict(qtls=[PlantedQtl(1, 250_000, "PAGER", effect=1.0)]),
    dict(qtls=[PlantedQtl(1, 250_000, "Additive")]),
    dict(qtls=[PlantedQtl(1, 250_000, "Additive", target_r2=0.6),
               PlantedQtl(1, 500_000, "Additive", target_r2=0.5)]),
    dict(maf_range=(0.0, 0.5)),
    dict(chromosomes=50),
    dict(flip_prob=0.7),
])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        generate_synthetic(SynthSpec(**{"n_samples": 20, "n_snps": 20, "chromosomes": 2, **kw}))


def test_write_roundtrip(tmp_path):
    res = generate_synthetic(desk_spec(0, n_samples=40))
    paths = write_synthetic(res, tmp_path)
    ds = read_dataset(paths["dataset"])
    np.testing.assert_array_equal(ds.genotypes, res.dataset.genotypes)
    truth = json.loads(paths["manifest"].read_text())
    assert len(truth["planted"]) == 4
    assert paths["targets"].read_text().splitlines()[0] == "snp\tmodel\twindow_bp"
