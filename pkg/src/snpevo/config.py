"""Run configuration: a plain key=value file whose keys mirror the GP table.

Lines look like ``population_size = 150``; ``#`` starts a comment. Grid
values are comma separated. Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .evolution import EvolutionConfig
from .pipeline import D_MAX_GRID, R2_THRESHOLD_GRID

MODES = ("starbase", "basic-gp", "random")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (exit status 2)."""


@dataclass
class RunConfig:
    """Everything one replicate needs.

    ``budget`` only applies to random mode; when unset it equals the
    evolutionary budget size + generations * 2 * size, so all modes spend
    the same number of evaluations.
    """

    mode: str = "starbase"
    dataset: str | None = None
    targets: str | None = None
    out: str = "out"
    seed: int = 0
    workers: int | None = None
    population_size: int = 150
    generations: int = 100
    min_snps: int = 50
    max_snps: int = 150
    bin_size: int = 500
    crossover: float = 0.50
    mutation: float = 0.50
    locality: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    smart: float = 0.25
    random: float = 0.75
    tuning: float = 0.50
    ld_r2_grid: tuple[float, ...] = R2_THRESHOLD_GRID
    d_max_grid: tuple[int, ...] = D_MAX_GRID
    alpha: float = 0.05
    max_missing: float = 0.05
    min_maf: float = 0.01
    split_fraction: float = 0.5
    budget: int | None = None
    n_permutations: int = 100
    replicates: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}; got {self.mode!r}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.budget is not None and self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.n_permutations < 1 or self.replicates < 1:
            raise ConfigError("n_permutations and replicates must be >= 1")
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.bin_size < 1:
            raise ConfigError("bin_size must be >= 1")
        if not self.ld_r2_grid or not self.d_max_grid:
            raise ConfigError("LD grids must be non-empty")
        self.evolution_config()

    def evolution_config(self, seed: int | None = None) -> EvolutionConfig:
        """EvolutionConfig for this mode; basic-gp drops the LD node and smart draws."""
        basic = self.mode == "basic-gp"
        try:
            return EvolutionConfig(
                population_size=self.population_size, generations=self.generations,
                min_snps=self.min_snps, max_snps=self.max_snps, bin_size=self.bin_size,
                p_crossover=self.crossover, p_mutation=self.mutation,
                p_locality=tuple(self.locality),
                p_smart=0.0 if basic else self.smart, p_random=1.0 if basic else self.random,
                p_node_tuning=self.tuning, ld_node=not basic,
                ld_r2_grid=tuple(self.ld_r2_grid), d_max_grid=tuple(self.d_max_grid),
                alpha=self.alpha, seed=self.seed if seed is None else seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def flagging(self) -> bool:
        return self.mode != "basic-gp"

    @property
    def evaluation_budget(self) -> int:
        if self.mode == "random" and self.budget is not None:
            return self.budget
        return self.evolution_config().budget

    def echo(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_INT_KEYS = {"seed", "workers", "population_size", "generations", "min_snps", "max_snps",
             "bin_size", "budget", "n_permutations", "replicates"}
_FLOAT_KEYS = {"crossover", "mutation", "smart", "random", "tuning", "alpha", "max_missing",
               "min_maf", "split_fraction"}
_STR_KEYS = {"mode", "dataset", "targets", "out"}
_GRID_KEYS = {"ld_r2_grid": float, "d_max_grid": int, "locality": float}
KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | set(_GRID_KEYS)


def _convert(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _INT_KEYS:
            return None if key in ("workers", "budget") and raw.lower() in ("", "auto", "none") \
                else int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _GRID_KEYS:
            parts = [p for p in raw.replace(" ", "").split(",") if p]
            if not parts:
                raise ValueError("empty list")
            return tuple(_GRID_KEYS[key](float(p)) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    return raw


def parse_config_text(text: str) -> dict:
    """key=value lines to typed values; unknown keys are an error."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Read a config file (optional) and apply non-None overrides on top."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values = parse_config_text(text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, seed=seed)
