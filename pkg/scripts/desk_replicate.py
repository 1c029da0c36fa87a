"""Time one desk-scale replicate (1,000 samples x 2,000 SNPs, size 50, 20 generations).

Usage: python scripts/desk_replicate.py --out runs/desk_one [--mode starbase] [--seed 0]
"""

import argparse
import json

from snpevo.analysis import QtlTarget
from snpevo.config import MODES, RunConfig
from snpevo.genome import parse_label
from snpevo.runner import run_replicate
from snpevo.synth import desk_spec, generate_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk_one")
    ap.add_argument("--mode", choices=MODES, default="starbase")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--cohort-seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    synth = generate_synthetic(desk_spec(args.cohort_seed))
    targets = [QtlTarget(parse_label(q["snp"])) for q in synth.manifest["planted"]]
    cfg = RunConfig(mode=args.mode, seed=args.seed, workers=args.workers, population_size=50,
                    generations=20)
    res = run_replicate(cfg, args.out, synth.dataset, targets)
    print(json.dumps({**res.metrics, "runtime_seconds": round(res.runtime_seconds, 1)},
                     indent=2))


if __name__ == "__main__":
    main()
