"""Multi-objective evolutionary search over SNP regression pipelines."""

from .config import RunConfig, load_config
from .encodings import InheritanceModel, select_optimal_encoding
from .evolution import EvolutionConfig, evolve, random_control
from .genome import SnpDataset, SnpLabel, read_dataset
from .runner import run_replicate, sweep
from .synth import SynthSpec, generate_synthetic

__version__ = "0.1.0"
