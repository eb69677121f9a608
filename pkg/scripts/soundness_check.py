"""Monte Carlo cross-check of a certified run against its verified probabilities.

Samples start states from the initial set, estimates the reach-avoid and
stay frequencies and compares them with the run's ε̂ and δ̂ minus three
standard errors.

    python scripts/soundness_check.py runs/bivariate_gbm/<run-dir>
"""

import argparse
import json
from pathlib import Path

import numpy as np

from rascert import cli
from rascert.simulator import SimConfig, estimate_ras


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("run_dir", type=Path)
    p.add_argument("--starts", type=int, default=20)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--dt", type=float, default=5e-3)
    p.add_argument("--horizon", type=float, default=3.0)
    p.add_argument("--settle", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    cfg = cli.load_config(args.run_dir / "config.yaml")
    report = json.loads((args.run_dir / "report.json").read_text())
    if report["verdict"] != "yes":
        raise SystemExit(f"{args.run_dir} is not a certified run ({report['verdict']})")
    model, spec = cli.build_problem(cfg)
    eps, delta = report["eps_hat"], report["delta_hat"]
    starts = spec.init.sample(args.starts, np.random.default_rng(args.seed))
    violations = 0
    rows = []
    for i, x0 in enumerate(starts):
        sc = SimConfig(dt=args.dt, horizon=args.horizon, n_paths=args.paths, seed=args.seed * 1000 + i)
        est = estimate_ras(model, spec, x0, sc, settle_window=args.settle)
        bad = est.p_ra < eps - 3 * est.se_ra or (delta is not None and est.p_stay < delta - 3 * est.se_stay)
        violations += bad
        rows.append({"x0": x0.tolist(), **est.to_dict(), "violation": bool(bad)})
        print(f"x0={np.round(x0, 3).tolist()} p_ra={est.p_ra:.4f} (eps_hat {eps:.4f}) "
              f"p_stay={est.p_stay:.4f} (delta_hat {delta}){'  VIOLATION' if bad else ''}", flush=True)
    (args.run_dir / "soundness.json").write_text(json.dumps({"violations": violations, "rows": rows}, indent=2))
    print(f"violations: {violations} of {len(starts)}")


if __name__ == "__main__":
    main()
