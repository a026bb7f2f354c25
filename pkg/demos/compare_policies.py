"""Replay seeded synthetic traces under every policy and print Tier 0+1 hit rates.

    python3 demos/compare_policies.py --sessions 300 --seeds 3
"""

import argparse

from kvtier.replay import ReplayConfig, compare_policies, format_summary
from kvtier.traces import FAMILIES, WorkloadSpec, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sessions", type=int, default=300, help="sessions per trace (default: 300)")
    ap.add_argument("--seeds", type=int, default=3, help="traces per family (default: 3)")
    ap.add_argument("--families", nargs="+", default=list(FAMILIES), choices=FAMILIES,
                    help="workload families (default: all)")
    args = ap.parse_args()
    seeds = list(range(args.seeds))
    for family in args.families:
        traces = [generate(WorkloadSpec(family, args.sessions, s)).events for s in seeds]
        summary = compare_policies(traces, ReplayConfig(), seeds)
        print(f"== {family} ({args.sessions} sessions x {len(seeds)} seeds)")
        print(format_summary(summary))


if __name__ == "__main__":
    main()
