"""Fit the built-in pendulum swing-up policy and store it as a checkpoint."""

import argparse
from pathlib import Path

from rascert import mlp
from rascert.dynamics import PENDULUM_POLICY_PATH
from rascert.policy_training import PolicyTrainConfig, train_pendulum_policy


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--iterations", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=PENDULUM_POLICY_PATH)
    args = p.parse_args()
    cfg = PolicyTrainConfig(iterations=args.iterations, seed=args.seed)
    net = train_pendulum_policy(cfg, log=lambda it, c: print(f"iter {it:4d} cost {c:.4f}", flush=True))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    mlp.save(net, args.out)
    print(f"saved {args.out}")


if __name__ == "__main__":
    main()
