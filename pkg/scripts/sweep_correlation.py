#!/usr/bin/env python3
# scripts/sweep_correlation.py

"""
Sweep the world's correlation knob and print the measured evidence correlation,
used to pick the default mixing coefficient
"""
import argparse
import os
import sys

# Add the project root to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from lpf.core.config import configure_logging
from lpf.services.world import WorldConfig, build_world, measure_correlation

DEFAULT_VALUES = [0.0, 0.05, 0.1, 0.12, 0.15, 0.2, 0.25, 0.3, 0.35, 0.5, 0.75, 1.0]


def sweep(values, n_entities: int, seed: int, target: float, tolerance: float):
    """
    Measure rho for each correlation value; returns (value, rho) pairs
    """
    print(f"🔍 Sweeping correlation over {len(values)} values ({n_entities} entities each)...")
    results = []
    for c in values:
        world = build_world(WorldConfig(correlation=c, seed=seed))
        rho = measure_correlation(world, n_entities, stream_id=("sweep", c))
        hit = abs(rho - target) <= tolerance
        print(f"  {'✅' if hit else '  '} correlation={c:<5} rho={rho:+.4f}")
        results.append((c, rho))
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--values", type=float, nargs="+", default=DEFAULT_VALUES)
    parser.add_argument("--entities", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--target", type=float, default=0.12)
    parser.add_argument("--tolerance", type=float, default=0.05)
    args = parser.parse_args()

    configure_logging("WARNING")
    results = sweep(args.values, args.entities, args.seed, args.target, args.tolerance)

    best = min(results, key=lambda r: abs(r[1] - args.target))
    print(f"\n🎯 Closest to rho={args.target}: correlation={best[0]} (rho={best[1]:+.4f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
