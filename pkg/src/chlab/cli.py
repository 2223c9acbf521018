"""Command-line entry points for the experiment suite.

Every command reads one JSON config, writes its artifacts plus a manifest
into the output directory, and exits nonzero with the violated invariant
named when the config fails validation or the solver aborts.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config_file
from .dynamics import BlowUpError, ModelSpec, moment_diagnostic, solve_skeleton, \
    solve_stochastic
from .fields import ControlPath, Grid, zero_control
from .ldp import (EventSpec, controlled_limit_study, importance_sample,
                  ldp_scaling_study, mc_event_probability, weak_continuity_study)
from .noise import SeedSpec, sample_sheet
from .rate import (MinimizeOptions, RateCertificate, TerminalBall,
                   least_squares_certificate, minimize_rate)
from .spectral import check_green_increments
from . import io as chio
from .dynamics import cosine_profile

COMMANDS = ("simulate", "skeleton", "rate-min", "mc", "is", "verify-a1",
            "verify-a2", "green-check", "scaling-study")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chlab",
        description="Spectral laboratory for the stochastic fourth-order "
                    "phase-field equation")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the master seed")
    parser.add_argument("--replicas", type=int, default=None,
                        help="override the replica count")
    parser.add_argument("--epsilon", type=float, nargs="+", default=None,
                        help="override the epsilon schedule")
    return parser


def _resolve_control(cfg: RunConfig) -> ControlPath | None:
    src = cfg.control_source.get("source", "zero")
    if src == "zero":
        return zero_control(cfg.grid)
    if src == "file":
        cert = RateCertificate.from_json(
            Path(cfg.control_source["path"]).read_text(encoding="utf-8"))
        return cert.control
    if src == "optimize":
        cert = _run_minimizer(cfg)
        return cert.control
    raise ConfigError(f"unknown control source {src!r}")


def _resolve_target(cfg: RunConfig) -> TerminalBall:
    tgt = cfg.target or {}
    center_spec = tgt.get("center", "skeleton")
    if center_spec == "skeleton":
        base = solve_skeleton(cfg.model.u0_field(cfg.grid), None, cfg.model,
                              cfg.grid, cfg.solver, check_residual=False)
        center = base.values[-1]
    else:
        center = cosine_profile(center_spec, cfg.grid)
    return TerminalBall(center=center, delta=float(tgt.get("delta", 0.1)),
                        sense=tgt.get("sense", "inside"))


def _resolve_event(cfg: RunConfig) -> EventSpec:
    ev = cfg.event or {}
    kind = ev.get("kind", "terminal_ball")
    delta = float(ev.get("delta", 0.1))
    if kind == "terminal_ball":
        center_spec = ev.get("center", "skeleton")
        if center_spec == "skeleton":
            base = solve_skeleton(cfg.model.u0_field(cfg.grid), None, cfg.model,
                                  cfg.grid, cfg.solver, check_residual=False)
            center = base.values[-1]
        else:
            center = cosine_profile(center_spec, cfg.grid)
        return EventSpec(kind=kind, delta=delta, center=center)
    base = solve_skeleton(cfg.model.u0_field(cfg.grid), None, cfg.model,
                          cfg.grid, cfg.solver, check_residual=False)
    return EventSpec(kind=kind, delta=delta, reference=base.flat_values(),
                     alpha=cfg.alpha, p=cfg.p)


def _run_minimizer(cfg: RunConfig) -> RateCertificate:
    target = _resolve_target(cfg)
    opts_d = (cfg.target or {}).get("optimizer", {})
    opts = MinimizeOptions(
        gtol=float(opts_d.get("gtol", 1e-6)),
        max_iters=int(opts_d.get("max_iters", 400)),
        restarts=int(opts_d.get("restarts", 1)),
        seed=cfg.master_seed)
    if opts_d.get("method") == "dense" or (cfg.model.linear_test
                                           and opts_d.get("method") != "descent"):
        return least_squares_certificate(cfg.model.u0_field(cfg.grid), target,
                                         cfg.model, cfg.grid)
    return minimize_rate(cfg.model.u0_field(cfg.grid), target, cfg.model,
                         cfg.grid, opts)


def run(command: str, cfg: RunConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: list = []
    extra: dict = {}
    seed = SeedSpec(cfg.master_seed)
    grid, model = cfg.grid, cfg.model

    if command == "simulate":
        eps = cfg.epsilon[0]
        w = sample_sheet(grid.steps, grid.n, grid.dt, seed.child(0), dim=grid.dim)
        v = _resolve_control(cfg)
        traj = solve_stochastic(model.u0_field(grid), w, v, eps, model, grid,
                                cfg.solver)
        artifacts += chio.write_trajectory(out_dir, "trajectory", traj)
        flat = traj.flat_values()[None]
        extra["moment_sup"] = moment_diagnostic(flat, cfg.p, cfg.q, grid.h)
        if cfg.raw.get("dump_noise"):
            (out_dir / "noise.bin").write_bytes(w.dump_bytes())
            artifacts.append("noise.bin")

    elif command == "skeleton":
        v = _resolve_control(cfg)
        traj = solve_skeleton(model.u0_field(grid), v, model, grid, cfg.solver)
        artifacts += chio.write_trajectory(out_dir, "trajectory", traj)
        if "mild_residual" in traj.meta:
            extra["mild_residual"] = traj.meta["mild_residual"]

    elif command == "rate-min":
        cert = _run_minimizer(cfg)
        (out_dir / "certificate.json").write_text(cert.to_json() + "\n",
                                                  encoding="utf-8")
        artifacts.append("certificate.json")
        extra["cost"] = cert.cost
        extra["residual"] = cert.residual

    elif command == "mc":
        event = _resolve_event(cfg)
        result = mc_event_probability(event, cfg.epsilon[0], cfg.replicas, seed,
                                      model, grid, cfg.solver)
        chio.write_json(out_dir / "estimate.json", result.row())
        artifacts.append("estimate.json")

    elif command == "is":
        event = _resolve_event(cfg)
        v_star = _resolve_control(cfg)
        result = importance_sample(event, cfg.epsilon[0], v_star, cfg.replicas,
                                   seed, model, grid, cfg.solver)
        payload = result.row()
        payload["mean_weight"] = result.mean_weight
        chio.write_json(out_dir / "estimate.json", payload)
        artifacts.append("estimate.json")

    elif command == "verify-a1":
        study_d = cfg.raw.get("study", {})
        freqs = study_d.get("frequencies", [1, 4, 16, 64])
        bound = float(study_d.get("energy_bound", 10.0))
        g = cosine_profile(study_d.get("profile", [0.0, 1.0]), grid)
        v = _resolve_control(cfg)
        res = weak_continuity_study(v, freqs, g, model, grid, bound,
                                    alpha=cfg.alpha, p=cfg.p,
                                    save_every=int(study_d.get("save_every", 10)),
                                    config=cfg.solver)
        chio.write_json(out_dir / "distances.json", res.to_dict())
        chio.write_csv(out_dir / "distances.csv",
                       [["frequency", "distance"]]
                       + [[f, d] for f, d in zip(res.parameters, res.distances)])
        artifacts += ["distances.json", "distances.csv"]

    elif command == "verify-a2":
        study_d = cfg.raw.get("study", {})
        v = _resolve_control(cfg)
        res = controlled_limit_study(
            v, cfg.epsilon, cfg.replicas, seed, model, grid,
            alpha=cfg.alpha, p=cfg.p,
            save_every=int(study_d.get("save_every", 10)),
            perturbation=study_d.get("perturbation", "none"),
            config=cfg.solver)
        chio.write_json(out_dir / "distances.json", res.to_dict())
        chio.write_csv(out_dir / "distances.csv",
                       [["epsilon", "mean_distance"]]
                       + [[e, d] for e, d in zip(res.parameters, res.distances)])
        artifacts += ["distances.json", "distances.csv"]
        extra["slope"] = res.slope

    elif command == "green-check":
        gc = cfg.raw.get("green_check", {})
        report = check_green_increments(
            n_modes=int(gc.get("n_modes", 128)),
            r_steps=int(gc.get("r_steps", 2048)))
        chio.write_json(out_dir / "green_increments.json", report.to_dict())
        artifacts.append("green_increments.json")
        extra["gamma_hat"] = report.gamma_hat
        extra["gamma_prime_hat"] = report.gamma_prime_hat

    elif command == "scaling-study":
        event = _resolve_event(cfg)
        cert = None
        if cfg.target is not None or cfg.control_source.get("source") != "zero":
            if cfg.control_source.get("source") == "file":
                cert_path = Path(cfg.control_source["path"])
                cert = RateCertificate.from_json(cert_path.read_text(encoding="utf-8"))
            else:
                cert = _run_minimizer(cfg)
        reps = cfg.raw.get("replica_schedule",
                           [cfg.replicas] * len(cfg.epsilon))
        report = ldp_scaling_study(event, cfg.epsilon, reps, cert, seed, model,
                                   grid, cfg.solver)
        chio.write_json(out_dir / "scaling.json", report.to_dict())
        chio.write_csv(out_dir / "scaling.csv", report.csv_rows())
        artifacts += ["scaling.json", "scaling.csv"]

    chio.write_manifest(out_dir, command, cfg, artifacts, extra)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config_file(args.config)
        if args.seed is not None:
            cfg.raw["seed"] = args.seed
            cfg.master_seed = args.seed
        if args.replicas is not None:
            cfg.raw["replicas"] = args.replicas
            cfg.replicas = args.replicas
        if args.epsilon is not None:
            cfg.raw["epsilon"] = list(args.epsilon)
            cfg.epsilon = tuple(args.epsilon)
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return run(args.command, cfg, Path(args.out))
    except BlowUpError as exc:
        print(f"solver abort: {exc} (step {exc.step})", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
