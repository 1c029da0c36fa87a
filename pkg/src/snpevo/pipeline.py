"""Pipeline representation and evaluation.

A pipeline is a SNP subset followed by three nodes: LD pruning, feature
selection and regression. Evaluation fits on the training rows and scores r^2
on the validation rows; its complexity is the number of SNPs that reach the
regressor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .estimators import FittedModel, RegressorSpec, SelectorSpec, fit, r2_score, select_features
from .genome import DataSplit, SnpLabel
from .snpdb import DbSnapshot

R2_THRESHOLD_GRID = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
D_MAX_GRID = tuple(range(500_000, 1_000_001, 100_000))


@dataclass(frozen=True)
class LdParams:
    r2_threshold: float = 0.8
    d_max: int = 500_000
    alpha: float = 0.05
    r2_grid: tuple[float, ...] = field(default=R2_THRESHOLD_GRID, repr=False)
    d_max_grid: tuple[int, ...] = field(default=D_MAX_GRID, repr=False)

    def __post_init__(self):
        if self.r2_threshold not in self.r2_grid or self.d_max not in self.d_max_grid:
            raise ValueError(f"LD parameters off grid: {self}")

    @classmethod
    def random(cls, rng, r2_grid=R2_THRESHOLD_GRID, d_max_grid=D_MAX_GRID, alpha=0.05):
        return cls(r2_grid[rng.integers(len(r2_grid))], d_max_grid[rng.integers(len(d_max_grid))],
                   alpha, tuple(r2_grid), tuple(d_max_grid))

    def shifted(self, rng) -> LdParams:
        """Move the r^2 threshold or d_max one grid step, wrapping at the ends."""
        step = 1 if rng.random() < 0.5 else -1
        if rng.random() < 0.5:
            i = self.r2_grid.index(self.r2_threshold)
            return LdParams(self.r2_grid[(i + step) % len(self.r2_grid)], self.d_max,
                            self.alpha, self.r2_grid, self.d_max_grid)
        i = self.d_max_grid.index(self.d_max)
        return LdParams(self.r2_threshold, self.d_max_grid[(i + step) % len(self.d_max_grid)],
                        self.alpha, self.r2_grid, self.d_max_grid)

    def describe(self) -> str:
        return f"LD(r2={self.r2_threshold},d_max={self.d_max},alpha={self.alpha})"


@dataclass(frozen=True)
class Pipeline:
    snps: tuple[int, ...]
    ld: LdParams | None
    selector: SelectorSpec
    regressor: RegressorSpec
    seed: int = 0

    def __post_init__(self):
        if len(set(self.snps)) != len(self.snps):
            raise ValueError("pipeline SNP set contains duplicates")


@dataclass
class EvalResult:
    r2: float
    complexity: int
    survivors: frozenset[int]
    pruned: frozenset[int] = frozenset()
    selector_removed: frozenset[int] = frozenset()
    dropped: frozenset[int] = frozenset()
    failed: bool = False
    reason: str = ""
    model: FittedModel | None = field(default=None, repr=False, compare=False)

    @property
    def objectives(self) -> tuple[float, int]:
        return (self.r2, self.complexity)


@dataclass(frozen=True)
class LdGroup:
    chromosome: int
    members: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class EvalData:
    """Train/validate matrices in additive codes plus SNP coordinates."""

    G_train: np.ndarray
    y_train: np.ndarray
    G_val: np.ndarray
    y_val: np.ndarray
    labels: tuple[SnpLabel, ...]
    chrom: np.ndarray
    pos: np.ndarray

    @classmethod
    def from_split(cls, sp: DataSplit) -> EvalData:
        labels = sp.train.labels
        return cls(np.asfortranarray(sp.train.genotypes), sp.train.phenotype,
                   np.asfortranarray(sp.validate.genotypes), sp.validate.phenotype, labels,
                   np.array([lab.chromosome for lab in labels]),
                   np.array([lab.position for lab in labels]))

    @property
    def n_snps(self) -> int:
        return len(self.labels)


def encoded(G: np.ndarray, codes: np.ndarray, cols) -> np.ndarray:
    """Columns ``cols`` of additive matrix G mapped through per-SNP code rows."""
    cols = np.asarray(cols, dtype=int)
    sub = G[:, cols]
    return codes[cols][np.arange(cols.size)[None, :], sub]


# --- LD node -----------------------------------------------------------------

def build_ld_groups(snps, chrom: np.ndarray, pos: np.ndarray, d_max: int) -> list[LdGroup]:
    """Chain same-chromosome SNPs whose gap to the previous SNP is <= d_max."""
    groups: list[LdGroup] = []
    ordered = sorted(snps, key=lambda s: (chrom[s], pos[s], s))
    current: list[int] = []
    for s in ordered:
        if current and (chrom[s] != chrom[current[-1]] or abs(pos[s] - pos[current[-1]]) > d_max):
            groups.append(LdGroup(int(chrom[current[0]]), tuple(current)))
            current = []
        current.append(s)
    if current:
        groups.append(LdGroup(int(chrom[current[0]]), tuple(current)))
    return groups


def squared_correlations(G: np.ndarray) -> np.ndarray:
    X = np.asarray(G, dtype=float)
    xc = X - X.mean(axis=0)
    ss = (xc ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (xc.T @ xc) / np.sqrt(np.outer(ss, ss))
    return np.nan_to_num(c ** 2, nan=0.0)


def prune_pairwise(members, G_additive: np.ndarray, marginal_r2, threshold: float) -> list[int]:
    """Drop the weaker SNP of every pair whose squared correlation exceeds threshold.

    ``members`` are in position order and ``G_additive`` holds their training
    columns. Pairs are visited (i, j), i < j; a dropped SNP takes no further
    part. Equal marginal r^2 keeps the upstream SNP.
    """
    members = list(members)
    k = len(members)
    if k < 2:
        return members
    r2 = squared_correlations(G_additive)
    alive = np.ones(k, dtype=bool)
    for i in range(k):
        if not alive[i]:
            continue
        for j in range(i + 1, k):
            if not alive[j] or r2[i, j] <= threshold:
                continue
            if marginal_r2[j] > marginal_r2[i]:
                alive[i] = False
                break
            alive[j] = False
    return [m for m, a in zip(members, alive) if a]


def bh_adjust(pvalues) -> np.ndarray:
    """Benjamini-Hochberg adjusted p-values (step-up, monotone, capped at 1)."""
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    if m == 0:
        return p
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adj, 1.0)
    return out


def wald_pvalue(x: np.ndarray, anchor: np.ndarray, y: np.ndarray) -> float | None:
    """Two-sided p-value for x's coefficient in y ~ 1 + x + anchor.

    Uses the t distribution with n - 3 degrees of freedom. Returns None when
    the design is rank deficient (x carries no signal independent of anchor).
    """
    n = y.size
    if n <= 3:
        return None
    X = np.column_stack([np.ones(n), x, anchor])
    XtX = X.T @ X
    s = np.sqrt(np.diag(XtX))
    if not np.all(s > 0):
        return None
    # rank check on the scale-free Gram matrix
    if np.linalg.cond(XtX / np.outer(s, s)) > 1e12:
        return None
    XtX_inv = np.linalg.inv(XtX)
    beta = XtX_inv @ (X.T @ y)
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / (n - 3)
    se = np.sqrt(sigma2 * XtX_inv[1, 1])
    if se == 0:
        return 0.0 if beta[1] != 0 else 1.0
    t = beta[1] / se
    return float(2 * special.stdtr(n - 3, -abs(t)))


def conditional_analysis(members, X_encoded: np.ndarray, y: np.ndarray, marginal_r2,
                         alpha: float = 0.05) -> list[int]:
    """Keep the anchor plus non-anchors significant after BH correction.

    ``X_encoded`` holds the training columns of ``members`` under their optimal
    encodings. The anchor is the member with the highest marginal r^2.
    """
    members = list(members)
    if len(members) <= 1:
        return members
    mr2 = np.asarray(marginal_r2, dtype=float)
    a = int(np.argmax(mr2))
    tested, pvals = [], []
    for i in range(len(members)):
        if i == a:
            continue
        p = wald_pvalue(X_encoded[:, i], X_encoded[:, a], y)
        if p is not None:
            tested.append(i)
            pvals.append(p)
    keep = {a}
    if tested:
        adj = bh_adjust(pvals)
        keep.update(i for i, q in zip(tested, adj) if q < alpha)
    return [m for i, m in enumerate(members) if i in keep]


def ld_node(snps, data: EvalData, snap: DbSnapshot, params: LdParams) -> list[int]:
    """Group, prune pairwise and run conditional analysis; returns survivors."""
    survivors: list[int] = []
    for group in build_ld_groups(snps, data.chrom, data.pos, params.d_max):
        members = list(group.members)
        if len(members) > 1:
            mr2 = snap.marginal_r2[members]
            members = prune_pairwise(members, data.G_train[:, members], mr2, params.r2_threshold)
        if len(members) > 1:
            X = encoded(data.G_train, snap.codes, members)
            members = conditional_analysis(members, X, data.y_train, snap.marginal_r2[members],
                                           params.alpha)
        survivors.extend(members)
    return survivors


# --- evaluation ----------------------------------------------------------------

def evaluate(p: Pipeline, data: EvalData, snap: DbSnapshot) -> EvalResult:
    """Run a pipeline end to end. Failures are reported, never raised."""
    rng = np.random.default_rng(p.seed)
    dropped = frozenset(s for s in p.snps if not snap.considered[s])
    considered = [s for s in p.snps if snap.considered[s]]

    def failed(reason, survivors=frozenset(), pruned=frozenset(), removed=frozenset()):
        return EvalResult(-np.inf, len(survivors), frozenset(survivors), frozenset(pruned),
                          frozenset(removed), dropped, True, reason)

    if not considered:
        return failed("no considered SNPs")
    if p.ld is not None:
        after_ld = ld_node(considered, data, snap, p.ld)
    else:
        after_ld = list(considered)
    pruned = frozenset(considered) - frozenset(after_ld)

    X_tr = encoded(data.G_train, snap.codes, after_ld)
    keep = select_features(p.selector, X_tr, data.y_train, rng, G=data.G_train[:, after_ld])
    selected = [after_ld[i] for i in keep]
    removed = frozenset(after_ld) - frozenset(selected)
    if not selected:
        return failed("no SNPs after feature selection", pruned=pruned, removed=removed)

    try:
        with np.errstate(all="ignore"):
            model = fit(p.regressor, X_tr[:, keep], data.y_train, rng, features=tuple(selected))
            score = r2_score(model, encoded(data.G_val, snap.codes, selected), data.y_val)
    except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        return failed(f"regressor error: {exc}", selected, pruned, removed)
    if not np.isfinite(score):
        return failed("non-finite r2", selected, pruned, removed)
    res = EvalResult(score, len(selected), frozenset(selected), pruned, removed, dropped,
                     model=model)
    if score < 0:
        res.failed, res.reason = True, "negative r2"
    return res
