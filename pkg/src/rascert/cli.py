"""Command-line entry point: certify, verify, simulate, heatmap, report.

Exit codes: 0 success (certified / verified yes / artifact written),
1 a completed run whose verdict is no, 2 configuration or runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import mlp
from .dynamics import BoxUnion, ExpressionPolicy, LinearPolicy, NeuralPolicy, RasSpec, builtin, expression_model
from .errors import ConfigError, RasError
from .expressions import parse
from .interval import Interval
from .simulator import SimConfig, estimate_ras, export_paths, simulate_paths, stopped_certificate_means
from .trainer import Telemetry, TrainConfig, certify_loop
from .verifier import bound_cells, build_grid, export_cells_csv, reach_avoid_probability, verify

EXIT_OK, EXIT_NO, EXIT_ERROR = 0, 1, 2

# config keys that follow the algorithm's symbols, mapped to TrainConfig fields
_TRAIN_KEYS = {"n": "n", "lambda": "lam", "zeta": "zeta", "kappa": "kappa", "q": "q", "epochs": "epochs",
               "lr": "learning_rate", "seed": "seed", "hidden": "hidden", "focus": "focus",
               "stay_scale": "stay_scale"}


@dataclass
class SimSection:
    dt: float = 1e-3
    horizon: float = 3.0
    n_paths: int = 1000
    seed: int = 0
    settle_window: float = 0.5
    starts: int = 1  # start states sampled from the initial set
    export: int = 20  # number of stored paths written to CSV


@dataclass
class RunConfig:
    model: dict = field(default_factory=lambda: {"builtin": "bivariate-gbm"})
    spec: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    verify: dict = field(default_factory=lambda: {"m": 200, "k": 2})
    simulate: dict = field(default_factory=dict)
    out: str = "runs"

    @classmethod
    def from_dict(cls, doc: dict | None) -> RunConfig:
        doc = dict(doc or {})
        unknown = set(doc) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if ("builtin" in self.model) == ("custom" in self.model):
            raise ConfigError("model needs exactly one of 'builtin' or 'custom'")
        bad = set(self.train) - set(_TRAIN_KEYS)
        if bad:
            raise ConfigError(f"unknown train keys: {sorted(bad)}")
        bad = set(self.verify) - {"m", "k"}
        if bad:
            raise ConfigError(f"unknown verify keys: {sorted(bad)}")
        bad = set(self.simulate) - {f.name for f in dataclasses.fields(SimSection)}
        if bad:
            raise ConfigError(f"unknown simulate keys: {sorted(bad)}")
        self.train_config()
        self.sim_section()

    def train_config(self, seed: int | None = None) -> TrainConfig:
        kw = {_TRAIN_KEYS[k]: v for k, v in self.train.items()}
        kw.update(self.verify)
        if seed is not None:
            kw["seed"] = seed
        return TrainConfig(**kw)

    def sim_section(self) -> SimSection:
        return SimSection(**self.simulate)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return RunConfig.from_dict(yaml.safe_load(path.read_text()))


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


# model and spec construction ---------------------------------------------------


def _boxes(doc) -> BoxUnion:
    return BoxUnion.of(doc)


def _custom_model(doc: dict):
    state = list(doc["state"])
    control = list(doc.get("control", []))
    pol = doc.get("policy", {"type": "linear", "gain": []})
    if pol["type"] == "linear":
        policy = LinearPolicy(np.asarray(pol["gain"], dtype=float).reshape(len(control), len(state)))
    elif pol["type"] == "expression":
        policy = ExpressionPolicy([parse(e, state) for e in pol["u"]], state)
    elif pol["type"] == "neural":
        policy = NeuralPolicy(mlp.load(pol["checkpoint"]), squash=pol.get("squash", "tanh"))
    else:
        raise ConfigError(f"unknown policy type {pol['type']!r}")
    dom = np.asarray(doc["domain"], dtype=float)
    domain = Interval(dom[:, 0], dom[:, 1])
    model = expression_model(state, doc["drift"], doc["diffusion"], policy, control,
                             name=doc.get("name", "custom"), domain=domain)
    return model, domain


def build_problem(cfg: RunConfig, mode: str | None = None):
    """``(model, spec)`` from the model section and the spec overrides."""
    if "builtin" in cfg.model:
        model, spec = builtin(cfg.model["builtin"], **cfg.model.get("options", {}))
        base = {"domain": spec.domain, "init": spec.init, "target": spec.target, "unsafe": spec.unsafe,
                "eps": spec.eps, "delta": spec.delta, "mode": spec.mode,
                "unsafe_schedule": spec.unsafe_schedule}
    else:
        model, domain = _custom_model(cfg.model["custom"])
        l = model.state_dim
        base = {"domain": domain, "init": BoxUnion.empty(l), "target": BoxUnion.empty(l),
                "unsafe": BoxUnion.empty(l), "eps": 0.9, "delta": 0.9, "mode": "reach-avoid-stay"}
    over = dict(cfg.spec)
    for key in ("init", "target", "unsafe"):
        if key in over:
            base[key] = _boxes(over.pop(key)) if over[key] else BoxUnion.empty(model.state_dim)
    for key in ("eps", "delta", "mode"):
        if key in over:
            base[key] = over.pop(key)
    if over:
        raise ConfigError(f"unknown spec keys: {sorted(over)}")
    if mode is not None:
        base["mode"] = mode
    return model, RasSpec(**base)


# run directories ---------------------------------------------------------------


def make_run_dir(out, command: str, tag: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(out) / f"{stamp}-{command}-{tag}"
    path, i = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}.{i}")
        i += 1
    path.mkdir(parents=True)
    return path


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _model_tag(cfg: RunConfig) -> str:
    return cfg.model.get("builtin") or cfg.model["custom"].get("name", "custom")


# commands ----------------------------------------------------------------------


def cmd_certify(cfg: RunConfig, seed: int | None = None, mode: str | None = None, out=None) -> int:
    model, spec = build_problem(cfg, mode)
    tc = cfg.train_config(seed)
    run = make_run_dir(out or cfg.out, "certify", f"{_model_tag(cfg)}-s{tc.seed}")
    (run / "config.yaml").write_text(dump_config(cfg))
    telemetry = Telemetry(run / "telemetry.jsonl")
    reports = run / "reports.jsonl"

    def log(epoch, report):
        with open(reports, "a") as fh:
            fh.write(json.dumps({"epoch": epoch, **report.to_dict()}, default=_json_default) + "\n")
        print(f"epoch {epoch}: {report.verdict} eps_hat={report.eps_hat:.4f} "
              f"delta_hat={_fmt(report.delta_hat)} unverified={report.unverified_count} "
              f"({report.duration:.1f}s)", flush=True)

    outcome = certify_loop(model, spec, tc, telemetry=telemetry, on_verify=log)
    mlp.save(outcome.cert, run / "checkpoint.json")
    if outcome.report is not None:
        _write_json(run / "report.json", outcome.report.to_dict())
    print(f"{outcome.verdict} after {len(outcome.reports)} verifications; run directory {run}")
    return EXIT_OK if outcome.yes else EXIT_NO


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.4f}"


def _need_checkpoint(checkpoint) -> mlp.Mlp:
    if checkpoint is None:
        raise ConfigError("this command needs --checkpoint")
    if not Path(checkpoint).exists():
        raise ConfigError(f"checkpoint {checkpoint} not found")
    return mlp.load(checkpoint)


def cmd_verify(cfg: RunConfig, checkpoint, mode: str | None = None, out=None) -> int:
    model, spec = build_problem(cfg, mode)
    cert = _need_checkpoint(checkpoint)
    tc = cfg.train_config()
    report = verify(model, cert, spec, tc.m, tc.k)
    run = make_run_dir(out or cfg.out, "verify", _model_tag(cfg))
    (run / "config.yaml").write_text(dump_config(cfg))
    _write_json(run / "report.json", report.to_dict())
    print(f"verdict {report.verdict}")
    print(f"eps_hat {report.eps_hat:.6f}")
    print(f"delta_hat {_fmt(report.delta_hat)}")
    print(f"unverified {report.unverified_count}")
    return EXIT_OK if report.yes else EXIT_NO


def cmd_simulate(cfg: RunConfig, checkpoint=None, seed: int | None = None, mode: str | None = None,
                 out=None) -> int:
    model, spec = build_problem(cfg, mode)
    sim = cfg.sim_section()
    seed = sim.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    source = spec.init if not spec.init.is_empty else spec.target
    starts = source.sample(sim.starts, rng)
    run = make_run_dir(out or cfg.out, "simulate", _model_tag(cfg))
    (run / "config.yaml").write_text(dump_config(cfg))
    sc = SimConfig(dt=sim.dt, horizon=sim.horizon, n_paths=sim.n_paths, seed=seed)
    cert = _need_checkpoint(checkpoint) if checkpoint is not None else None
    results = []
    for i, x0 in enumerate(starts):
        est = estimate_ras(model, spec, x0, dataclasses.replace(sc, seed=seed + i), sim.settle_window)
        row = {"x0": x0.tolist(), **est.to_dict()}
        if cert is not None:
            t, mean, se = stopped_certificate_means(model, cert, x0, sc, -math.inf, math.inf)
            row["certificate_mean"] = {"t": t.tolist(), "mean": mean.tolist(), "se": se.tolist()}
        results.append(row)
        print(f"x0={np.round(x0, 4).tolist()} p_ra={est.p_ra:.4f}±{est.se_ra:.4f} "
              f"p_stay={est.p_stay:.4f}±{est.se_stay:.4f}")
    _write_json(run / "estimates.json", results)
    if sim.export:
        paths = simulate_paths(model, starts[0], dataclasses.replace(sc, n_paths=sim.export))
        export_paths(paths, run / "paths.csv")
    print(f"run directory {run}")
    return EXIT_OK


def cmd_heatmap(cfg: RunConfig, checkpoint, mode: str | None = None, out=None) -> int:
    model, spec = build_problem(cfg, mode)
    cert = _need_checkpoint(checkpoint)
    tc = cfg.train_config()
    cells = bound_cells(cert, build_grid(spec.domain, tc.m))
    _, _, beta_ra = reach_avoid_probability(cells, spec)
    if math.isinf(beta_ra):
        prob = np.ones(len(cells))
    else:
        prob = np.clip(1.0 - cells.v_up / beta_ra, 0.0, None) if beta_ra > 0 else np.zeros(len(cells))
    run = make_run_dir(out or cfg.out, "heatmap", _model_tag(cfg))
    export_cells_csv(cells, run / "heatmap.csv", {"probability": prob})
    print(f"{len(cells)} cells, beta_ra_hat={beta_ra:.6g}; wrote {run / 'heatmap.csv'}")
    return EXIT_OK


def summarise_runs(run_dir) -> dict:
    """Per-run verification statistics and their aggregate over all runs found."""
    files = sorted(Path(run_dir).rglob("telemetry.jsonl"))
    runs = []
    for f in files:
        records = [json.loads(line) for line in f.read_text().splitlines() if line.strip()]
        verifies = [r for r in records if r.get("event") == "verify"]
        done = [r for r in records if r.get("event") == "done"]
        if not verifies:
            continue
        durations = [r["duration"] for r in verifies]
        runs.append({
            "run": str(f.parent),
            "verdict": done[-1]["verdict"] if done else "incomplete",
            "verifications": len(verifies),
            "mean_verification_time": statistics.fmean(durations),
            "mean_cycle_time": statistics.fmean(r["duration"] + r.get("train_duration", 0.0) for r in verifies),
        })
    if not runs:
        raise ConfigError(f"no telemetry with verification records under {run_dir}")
    times = [r["mean_verification_time"] for r in runs]
    counts = [r["verifications"] for r in runs]
    return {
        "runs": runs,
        "n_runs": len(runs),
        "n_yes": sum(r["verdict"] == "yes" for r in runs),
        # population standard deviation over runs
        "time_mean": statistics.fmean(times),
        "time_std": statistics.pstdev(times),
        "count_mean": statistics.fmean(counts),
        "count_std": statistics.pstdev(counts),
    }


def cmd_report(run_dir) -> int:
    if run_dir is None or not Path(run_dir).is_dir():
        raise ConfigError(f"run directory {run_dir} does not exist")
    summary = summarise_runs(run_dir)
    _write_json(Path(run_dir) / "summary.json", summary)
    print(f"runs {summary['n_runs']} (yes {summary['n_yes']})")
    print(f"time per verification {summary['time_mean']:.2f} s ± {summary['time_std']:.2f}")
    print(f"verifications {summary['count_mean']:.2f} ± {summary['count_std']:.2f}")
    return EXIT_OK


# argument parsing ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rascert", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("certify", "verify", "simulate", "heatmap"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--checkpoint")
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--mode", choices=["ras", "reach-avoid", "stay"])
    r = sub.add_parser("report")
    r.add_argument("run_dir")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.run_dir)
        cfg = load_config(args.config)
        if args.command == "certify":
            return cmd_certify(cfg, args.seed, args.mode, args.out)
        if args.command == "verify":
            return cmd_verify(cfg, args.checkpoint, args.mode, args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.checkpoint, args.seed, args.mode, args.out)
        return cmd_heatmap(cfg, args.checkpoint, args.mode, args.out)
    except (RasError, OSError, yaml.YAMLError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
