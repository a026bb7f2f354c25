"""Project throughput and cost for measured hit rates instead of the calibrated ones.

Replays one synthetic trace under LRU and the Bayesian policy, then feeds the
two Tier 0+1 hit rates into the projection model.

    python3 demos/what_if.py --family agentic --sessions 200
"""

import argparse

from kvtier.projection import Calibration, Component, ablation, inputs_from_rates, project_cost, project_throughput
from kvtier.replay import PolicyKind, ReplayConfig, replay
from kvtier.traces import FAMILIES, WorkloadSpec, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", default="lmsys_like", choices=FAMILIES, help="workload family (default: lmsys_like)")
    ap.add_argument("--sessions", type=int, default=200, help="sessions in the trace (default: 200)")
    ap.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    args = ap.parse_args()

    events = generate(WorkloadSpec(args.family, args.sessions, args.seed)).events
    lru = replay(events, PolicyKind.LRU, ReplayConfig()).hit_rate_t01
    bayes = replay(events, PolicyKind.BAYESIAN, ReplayConfig()).hit_rate_t01
    print(f"{args.family}: LRU {100 * lru:.1f}%  Bayesian {100 * bayes:.1f}% Tier 0+1 hits")

    inputs = inputs_from_rates(Calibration.load(), lru, bayes)
    tput = project_throughput(inputs)
    print(f"projected throughput {tput:,.0f} tok/s/GPU at ${project_cost(inputs, tput):.2f}/Mtok")
    print(f"removing the predictor: {ablation(inputs, Component.BAYESIAN):+.1f}% throughput")


if __name__ == "__main__":
    main()
