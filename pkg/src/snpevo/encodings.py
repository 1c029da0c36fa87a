"""Per-SNP inheritance encodings and optimal-encoding selection.

Each encoding maps genotype classes (0, 1, 2) to a code in [0, 1]. The eight
strict models have fixed code triples; PAGER derives its triple from the
normalised per-class phenotype means on the training rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class DegenerateEncodingError(ValueError):
    pass


class InheritanceModel(str, Enum):
    ADDITIVE = "Additive"
    SUPERADDITIVE = "Superadditive"
    SUBADDITIVE = "Subadditive"
    DOMINANT = "Dominant"
    RECESSIVE = "Recessive"
    HETEROSIS = "Heterosis"
    OVERDOMINANT = "Overdominant"
    UNDERDOMINANT = "Underdominant"
    PAGER = "PAGER"

    def __str__(self) -> str:
        return self.value


# Codes for genotypes (0, 1, 2). Single source of truth for the strict models.
STRICT_CODES: dict[InheritanceModel, tuple[float, float, float]] = {
    InheritanceModel.ADDITIVE: (0.0, 0.5, 1.0),
    InheritanceModel.SUPERADDITIVE: (0.0, 0.75, 1.0),
    InheritanceModel.SUBADDITIVE: (0.0, 0.25, 1.0),
    InheritanceModel.DOMINANT: (0.0, 1.0, 1.0),
    InheritanceModel.RECESSIVE: (0.0, 0.0, 1.0),
    InheritanceModel.HETEROSIS: (0.0, 1.0, 0.0),
    InheritanceModel.OVERDOMINANT: (0.0, 1.0, 0.5),
    InheritanceModel.UNDERDOMINANT: (0.5, 0.0, 1.0),
}

STRICT_MODELS = tuple(STRICT_CODES)
# Evaluation order doubles as the tie-break order: earlier wins on equal r^2.
ALL_MODELS = STRICT_MODELS + (InheritanceModel.PAGER,)

_TIE_EPS = 1e-12


@dataclass(frozen=True)
class EncodingResult:
    model: InheritanceModel
    marginal_validation_r2: float
    pager_codes: tuple[float, float, float] | None = None

    def __post_init__(self):
        if (self.model is InheritanceModel.PAGER) != (self.pager_codes is not None):
            raise ValueError("pager_codes must be present exactly when model is PAGER")
        if self.marginal_validation_r2 > 1 + 1e-9:
            raise ValueError("r^2 cannot exceed 1")

    @property
    def codes(self) -> tuple[float, float, float]:
        if self.pager_codes is not None:
            return self.pager_codes
        return STRICT_CODES[self.model]

    @property
    def informative(self) -> bool:
        return self.marginal_validation_r2 >= 0


def strict_codes(model: InheritanceModel | str) -> tuple[float, float, float]:
    model = InheritanceModel(model)
    if model is InheritanceModel.PAGER:
        raise ValueError("PAGER codes are data-derived; use pager_codes()")
    return STRICT_CODES[model]


def encode(genotypes: np.ndarray, codes) -> np.ndarray:
    """Map additive genotype codes through a code triple."""
    return np.asarray(codes, dtype=float)[np.asarray(genotypes)]


def mirror(codes) -> tuple[float, float, float]:
    return tuple(1.0 - c for c in codes)


def _class_stats(g: np.ndarray, y: np.ndarray):
    g = np.asarray(g, dtype=np.intp)
    y = np.asarray(y, dtype=float)
    n = np.bincount(g, minlength=3).astype(float)
    s = np.bincount(g, weights=y, minlength=3)
    q = np.bincount(g, weights=y * y, minlength=3)
    return n, s, q


def pager_codes(genotypes: np.ndarray, phenotype: np.ndarray) -> tuple[float, float, float]:
    """Normalised per-genotype-class phenotype means.

    A class absent from the data keeps its additive code.
    """
    n, s, _ = _class_stats(genotypes, phenotype)
    present = n > 0
    if present.sum() < 2:
        raise DegenerateEncodingError("PAGER needs at least two genotype classes")
    means = np.divide(s, n, out=np.zeros(3), where=present)
    lo, hi = means[present].min(), means[present].max()
    if hi - lo <= 0:
        raise DegenerateEncodingError("all genotype-class means are equal")
    codes = np.array(STRICT_CODES[InheritanceModel.ADDITIVE])
    codes[present] = (means[present] - lo) / (hi - lo)
    return tuple(float(c) for c in codes)


def _r2_from_stats(codes: np.ndarray, train, val) -> np.ndarray:
    """Validation r^2 of a train-fitted univariate OLS for each row of ``codes``.

    ``codes`` has shape (m, 3); ``train`` and ``val`` are per-class
    (count, sum, sum of squares) triples. Rows with zero encoded variance on
    train get -inf.
    """
    n_t, s_t, _ = train
    n_v, s_v, q_v = val
    N = n_t.sum()
    xbar = codes @ n_t / N
    ybar = s_t.sum() / N
    sxx = (codes ** 2) @ n_t - N * xbar ** 2
    sxy = codes @ s_t - N * xbar * ybar
    ok = sxx > 1e-12 * np.maximum(1.0, (codes ** 2) @ n_t)
    slope = np.where(ok, sxy / np.where(ok, sxx, 1.0), 0.0)
    icpt = ybar - slope * xbar
    pred = icpt[:, None] + slope[:, None] * codes  # prediction per class
    ss_res = (q_v[None, :] - 2 * pred * s_v[None, :] + n_v[None, :] * pred ** 2).sum(axis=1)
    Nv = n_v.sum()
    ss_tot = q_v.sum() - s_v.sum() ** 2 / Nv
    if ss_tot <= 0:
        raise ValueError("validation phenotype has zero variance")
    r2 = 1.0 - ss_res / ss_tot
    return np.where(ok, np.minimum(r2, 1.0), -np.inf)


def marginal_validation_r2(g_train, y_train, g_val, y_val, codes) -> float:
    """Fit phenotype ~ encoded genotype on train rows, score r^2 on validate rows."""
    r2 = _r2_from_stats(np.atleast_2d(np.asarray(codes, dtype=float)),
                        _class_stats(g_train, y_train), _class_stats(g_val, y_val))
    return float(r2[0])


def encoding_scores(g_train, y_train, g_val, y_val) -> dict[InheritanceModel, float]:
    """Marginal validation r^2 of every encoding; degenerate ones get -inf."""
    train = _class_stats(g_train, y_train)
    val = _class_stats(g_val, y_val)
    table = [STRICT_CODES[m] for m in STRICT_MODELS]
    try:
        pc = pager_codes(g_train, y_train)
        table.append(pc)
    except DegenerateEncodingError:
        pc = None
    r2 = _r2_from_stats(np.array(table), train, val)
    scores = dict(zip(STRICT_MODELS, r2.tolist()))
    scores[InheritanceModel.PAGER] = r2[-1].item() if pc is not None else -np.inf
    return scores


def select_optimal_encoding(g_train, y_train, g_val, y_val) -> EncodingResult:
    """Pick the encoding with the greatest marginal validation r^2.

    Ties within 1e-12 go to the earlier model in ``ALL_MODELS`` (Additive first).
    If every encoding is degenerate, Additive is returned with r^2 = -inf.
    """
    scores = encoding_scores(g_train, y_train, g_val, y_val)
    best = InheritanceModel.ADDITIVE
    for m in ALL_MODELS[1:]:
        if scores[m] > scores[best] + _TIE_EPS:
            best = m
    pc = pager_codes(g_train, y_train) if best is InheritanceModel.PAGER else None
    return EncodingResult(best, scores[best], pc)
