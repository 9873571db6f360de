"""Spike network metrics and exactness for m = 1..16."""

import argparse

import numpy as np

from rectiflow.relu_net import metrics
from rectiflow.spike import SpikeBounds, spike, spike_network


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--max-m", type=int, default=16)
    p.add_argument("--probes", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    rng = np.random.default_rng(args.seed)
    print("m  depth(bound)  M(bound)  W(bound)  max_dev")
    for m in range(1, args.max_m + 1):
        net = spike_network(m)
        met, b = metrics(net), SpikeBounds.for_dim(m)
        x = rng.uniform(-2, 2, (args.probes, m))
        dev = np.abs(net(x)[:, 0] - spike(x)).max()
        print(f"{m:<2} {met.depth:>3} ({b.depth:>2})  {met.connectivity:>4} ({b.connectivity:>4})"
              f"  {met.width:>3} ({b.width:>3})  {dev:.1e}")


if __name__ == "__main__":
    main()
