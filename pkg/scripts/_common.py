"""Shared argument handling for the experiment scripts."""

import argparse
import logging
from pathlib import Path

from runoff.inference import SamplerConfig


def parser(description: str, replicates: int, iterations: int, burn: int, thin: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--replicates", type=int, default=replicates)
    p.add_argument("--chains", type=int, default=3)
    p.add_argument("--iters", type=int, default=iterations)
    p.add_argument("--burn", type=int, default=burn)
    p.add_argument("--thin", type=int, default=thin)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="CSV file for the per-replicate table")
    return p


def config(args) -> SamplerConfig:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    return SamplerConfig(chains=args.chains, iterations=args.iters, burn_in=args.burn, thin=args.thin,
                         seed=args.seed)
