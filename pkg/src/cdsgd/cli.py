"""Command-line entry point: ``cdsgd run|sweep|plot|validate-topology|bounds``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields

from . import analysis, objectives, topology
from .errors import ConfigError, DivergenceError, VerificationError
from .optimizers import max_stable_step_size
from .runner import SWEEP_AXES, ExperimentConfig, MetricsLog, prepare, run_experiment, run_sweep

EXIT_OK, EXIT_VERIFY, EXIT_DIVERGED, EXIT_CONFIG = 0, 1, 2, 3

# CLI flag -> ExperimentConfig field
_FLAGS = {
    "topology": str, "agents": int, "objective": str, "data": str, "partition": str, "algo": str, "lr": str,
    "batch": int, "epochs": int, "steps": int, "seed": int, "log_every": int, "output_dir": str,
    "init_scale": float, "workers": int, "burn_in": int,
}
_SWITCHES = ("standardize", "shared_init", "verify", "estimate_noise")


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat JSON file with config values; flags override it")
    for name, typ in _FLAGS.items():
        flag = "--out" if name == "output_dir" else "--" + name.replace("_", "-")
        p.add_argument(flag, dest=name, type=typ, default=None)
    for name in _SWITCHES:
        p.add_argument("--" + name.replace("_", "-"), dest=name, action="store_true", default=None)


def _config(ns) -> ExperimentConfig:
    base = ExperimentConfig.from_json(ns.config) if ns.config else ExperimentConfig()
    overrides = {f.name: getattr(ns, f.name) for f in fields(ExperimentConfig)
                 if getattr(ns, f.name, None) is not None}
    return ExperimentConfig.from_dict({**asdict(base), **overrides})


def _cmd_run(ns) -> int:
    cfg = _config(ns)
    log = run_experiment(cfg)
    if ns.plot and cfg.output_dir:
        from .plots import emit_plots

        emit_plots(log, cfg.output_dir)
    last = log.steps[-1] if log.steps else {}
    print(json.dumps({"steps": len(log.steps), "final": last,
                      "checks": log.bounds.get("checks", [])}, default=float, indent=2))
    return EXIT_OK


def _cmd_sweep(ns) -> int:
    cfg = _config(ns)
    values = ns.values
    if ns.axis == "network_size":
        values = [int(v) for v in values]
    runs = run_sweep(cfg, ns.axis, values)
    if ns.plot and cfg.output_dir and any(r.log for r in runs):
        from .plots import emit_plots

        emit_plots(runs, cfg.output_dir)
    for r in runs:
        print(f"{ns.axis}={r.value}: " + ("ok" if r.log else f"failed ({r.error})"))
    return EXIT_OK


def _cmd_plot(ns) -> int:
    from .plots import emit_plots

    log = MetricsLog.load(ns.run_dir)
    for p in emit_plots(log, ns.out or ns.run_dir):
        print(p)
    return EXIT_OK


def _cmd_validate(ns) -> int:
    cfg = _config(ns)
    exp = prepare(cfg)
    report = topology.validate(exp.pi)
    summ = topology.spectral_summary(exp.pi)
    print(json.dumps({"report": asdict(report), "ok": report.ok, "spectrum": summ._asdict(),
                      "eigenvalues": exp.pi.eigenvalues.tolist()}, indent=2))
    return EXIT_OK if report.ok else EXIT_VERIFY


def _cmd_bounds(ns) -> int:
    cfg = _config(ns)
    exp = prepare(cfg)
    summ = topology.spectral_summary(exp.pi)
    const = objectives.swarm_constants(exp.spec, exp.shards)
    out = {"spectrum": summ._asdict(),
           "objective_constants": {"gamma_m": const.gamma_m, "h_m": const.h_m, "lip": const.lip}}
    if const.gamma_m is not None and not summ.degenerate:
        a_max, ok = max_stable_step_size(1.0, 1.0, const.gamma_m, summ.lambda_n)
        out["max_stable_step_full_batch"] = {"alpha": a_max, "admissible": ok}
        if exp.schedule.kind == "fixed" and const.h_m is not None:
            h_hat, g_hat = analysis.effective_constants(const.h_m, const.gamma_m, summ.lambda2, summ.lambda_n,
                                                        exp.schedule.alpha)
            out["effective_constants"] = {"H_hat": h_hat, "gamma_hat": g_hat}
    print(json.dumps(out, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdsgd", description="Consensus distributed SGD simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    _add_config_flags(p)
    p.add_argument("--plot", action="store_true", help="also write SVG figures to --out")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="one run per value along an axis")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, nargs="+")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plot", help="render figures from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("validate-topology", help="check the interaction matrix assumptions")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("bounds", help="print spectral and step-size constants for a config")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_bounds)
    return parser


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return ns.func(ns)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
