"""Certify one configuration on several seeds, then summarise the runs.

    python scripts/run_seeds.py configs/bivariate_gbm.yaml --seeds 0 1 2 3 4
"""

import argparse
from pathlib import Path

from rascert import cli


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config", type=Path)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--out", type=Path, default=None, help="defaults to runs/<config stem>")
    args = p.parse_args()
    cfg = cli.load_config(args.config)
    out = args.out or Path(cfg.out) / args.config.stem
    verdicts = {}
    for seed in args.seeds:
        print(f"== seed {seed}", flush=True)
        verdicts[seed] = cli.cmd_certify(cfg, seed=seed, out=out)
    print("verdicts:", {s: "yes" if c == cli.EXIT_OK else "no" for s, c in verdicts.items()})
    cli.cmd_report(out)


if __name__ == "__main__":
    main()
