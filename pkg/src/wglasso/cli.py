"""Command-line front end.

Subcommands: ``generate`` (geometry, grids and lead fields), ``solve`` (one
inverse solve on generated data), ``verify`` (the theorem suite), and
``experiment`` (the batched randomized harness).  All runs are driven by a
JSON config file; command-line flags override config fields and ``--seed`` is
always available.  Unknown config keys are rejected.

Exit codes: 0 success, 2 usage or validation error, 3 I/O error,
4 verification failure.
"""

from __future__ import annotations

import argparse
import copy
import sys
from pathlib import Path

import numpy as np

from .core import DipoleSource, make_dipole_groups
from .errors import CapacityError, ConfigError
from .forward import HeadGeometry, build_lead_field, place_electrodes, sample_source_grid, simulate_measurement
from .metrics import ExperimentConfig, noise_delta, run_experiment
from .serialize import (
    geometry_document,
    read_json,
    read_lead_field,
    solve_result_document,
    write_experiment_csv,
    write_json,
    write_lead_field,
)
from .solver import SolverConfig, bcd_solve, morozov_select_alpha
from .theory import default_verification_suite, suite_passed
from .weighting import (
    IDENTITY,
    TRUNCATED,
    compose_problem,
    default_truncation_rank,
    identity_weighting,
    truncated_pseudoinverse,
)

DEFAULTS = {
    "seed": 0,
    "geometry": {
        "electrode_count": 64,
        "scalp_radius": 90.0,
        "conductivity": 3.3e-4,
        "source_shell_fraction": 0.85,
        "true_grid_size": 600,
        "inverse_grid_size": 600,
        "min_separation": 2.0,
        "min_electrode_distance": 15.0,
    },
    "weighting": {"kind": TRUNCATED, "k": None},
    "solver": {
        "tol_objective": 1e-10,
        "tol_x": 1e-8,
        "max_sweeps": 10000,
        "kkt_tol": 1e-6,
        "use_active_set": True,
        "resync_every": 100,
    },
    "morozov": {
        "tau": 1.05,
        "delta_mode": "known_noise",
        "space": "transformed",
        "max_bisections": 40,
        "delta_floor_rel": 1e-8,
    },
    "solve": {
        "alpha": "morozov",
        "noise_level": 0.01,
        "num_sources": 1,
        "measurement_file": None,
    },
    "experiment": {
        "trials": 50,
        "sources_per_trial": 1,
        "noise_level": 0.01,
        "comparison_mode": True,
        "sources_on_inverse_grid": False,
        "truncation_k": None,
        "moment_scale": 1.0,
    },
    "verify": {
        "pursuit_instances": 100,
        "gamma_instances": 20,
        "disjoint_instances": 20,
    },
}


def merge_config(user: dict, defaults: dict = DEFAULTS, path: str = "") -> dict:
    """Deep-merge a user config over the defaults, rejecting unknown keys."""
    merged = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {where!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            merged[key] = merge_config(value, defaults[key], where)
        else:
            merged[key] = value
    return merged


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return merge_config(raw)


def _solver_config(cfg: dict) -> SolverConfig:
    return SolverConfig(**cfg["solver"])


def _build_geometry(cfg: dict, seed: int):
    g = cfg["geometry"]
    ss = np.random.SeedSequence(seed)
    true_ss, inv_ss = ss.spawn(2)
    electrodes = place_electrodes(g["electrode_count"], g["scalp_radius"])
    true_grid = sample_source_grid(
        g["true_grid_size"],
        g["scalp_radius"],
        g["source_shell_fraction"],
        g["min_separation"],
        g["min_electrode_distance"],
        electrodes,
        seed=true_ss,
    )
    inverse_grid = sample_source_grid(
        g["inverse_grid_size"],
        g["scalp_radius"],
        g["source_shell_fraction"],
        g["min_separation"],
        0.0,
        None,
        seed=inv_ss,
    )
    geo_true = HeadGeometry(
        g["scalp_radius"], g["conductivity"], electrodes, true_grid, g["min_separation"]
    )
    geo_inv = HeadGeometry(
        g["scalp_radius"], g["conductivity"], electrodes, inverse_grid, g["min_separation"]
    )
    return geo_true, geo_inv


def cmd_generate(cfg: dict, out_dir: str) -> int:
    seed = cfg["seed"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    geo_true, geo_inv = _build_geometry(cfg, seed)
    field_true = build_lead_field(geo_true)
    field_inv = build_lead_field(geo_inv)
    doc = geometry_document(
        geo_true, geo_inv, cfg, seed, {"true": "seed.spawn[0]", "inverse": "seed.spawn[1]"}
    )
    write_json(out / "geometry.json", doc)
    write_lead_field(out / "leadfield_true", field_true, config=cfg)
    write_lead_field(out / "leadfield_inverse", field_inv, config=cfg)
    print(f"wrote geometry.json, leadfield_true.[bin|json], leadfield_inverse.[bin|json] to {out}")
    return 0


def _load_generated(data_dir: str):
    data = Path(data_dir)
    geometry_path = data / "geometry.json"
    if not geometry_path.exists():
        raise FileNotFoundError(f"missing {geometry_path}")
    for stem in ("leadfield_true", "leadfield_inverse"):
        for suffix in (".bin", ".json"):
            p = data / (stem + suffix)
            if not p.exists():
                raise FileNotFoundError(f"missing {p}")
    doc = read_json(geometry_path)
    field_true = read_lead_field(data / "leadfield_true")
    field_inv = read_lead_field(data / "leadfield_inverse")
    return doc, field_true, field_inv


def _weighting_operator(cfg: dict, lead_field):
    kind = cfg["weighting"]["kind"]
    m, n = lead_field.entries.shape
    if kind == IDENTITY:
        return identity_weighting(m)
    if kind == TRUNCATED:
        k = cfg["weighting"]["k"] or default_truncation_rank(m, n)
        return truncated_pseudoinverse(lead_field, k)
    raise ConfigError(f"unknown weighting kind {kind!r}")


def cmd_solve(cfg: dict, data_dir: str, out_path: str) -> int:
    seed = cfg["seed"]
    doc, field_true, field_inv = _load_generated(data_dir)
    solve_cfg = cfg["solve"]
    true_grid = np.asarray(doc["true_grid_mm"])

    ss = np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    measurement_info: dict
    clean = None
    if solve_cfg["measurement_file"]:
        noisy = np.asarray(read_json(solve_cfg["measurement_file"])["values"], dtype=float)
        measurement_info = {"source": solve_cfg["measurement_file"]}
    else:
        count = int(solve_cfg["num_sources"])
        idx = rng.choice(true_grid.shape[0], size=count, replace=False)
        moments = rng.standard_normal((count, 3))
        moments /= np.linalg.norm(moments, axis=1)[:, None]
        sources = [
            DipoleSource(position=true_grid[j], moment=moments[i], group_id=int(j))
            for i, j in enumerate(idx)
        ]
        meas = simulate_measurement(field_true, sources, solve_cfg["noise_level"], seed=rng)
        noisy, clean = meas.noisy, meas.clean
        measurement_info = {
            "source": "simulated",
            "true_position_indices": [int(j) for j in idx],
            "noise_level": solve_cfg["noise_level"],
            "noise_norm": meas.noise_norm,
        }

    groups = make_dipole_groups(field_inv.num_positions)
    B = _weighting_operator(cfg, field_inv)
    problem = compose_problem(field_inv, B, noisy, groups)
    solver_config = _solver_config(cfg)
    # without the clean signal (external measurement) the noise norm can only
    # be estimated from the configured level
    delta = noise_delta(
        cfg["morozov"]["space"],
        cfg["morozov"]["delta_mode"] if clean is not None else "estimated",
        solve_cfg["noise_level"],
        B.matrix,
        noisy,
        clean,
        cfg["morozov"]["delta_floor_rel"],
    )

    selection_doc = None
    if solve_cfg["alpha"] == "morozov":
        selection = morozov_select_alpha(
            problem,
            delta=delta,
            tau=cfg["morozov"]["tau"],
            config=solver_config,
            space=cfg["morozov"]["space"],
            max_bisections=cfg["morozov"]["max_bisections"],
        )
        result = selection.result
        selection_doc = {
            "alpha": selection.alpha,
            "bracketed": selection.bracketed,
            "n_solves": selection.n_solves,
            "alpha_max": selection.alpha_max,
            "delta": selection.delta,
            "tau": selection.tau,
            "space": selection.space,
        }
    else:
        result = bcd_solve(problem, float(solve_cfg["alpha"]), None, solver_config)

    payload = solve_result_document(
        result,
        cfg,
        seed,
        {"kind": B.kind, "k": B.k},
        selection_doc,
    )
    payload["measurement"] = measurement_info
    write_json(out_path, payload)
    print(
        f"alpha={result.alpha:.6e} converged={result.converged} "
        f"active_groups={len(result.active_groups)} -> {out_path}"
    )
    return 0


def cmd_verify(cfg: dict, out_path: str | None) -> int:
    v = cfg["verify"]
    reports = default_verification_suite(
        pursuit_instances=v["pursuit_instances"],
        gamma_instances=v["gamma_instances"],
        disjoint_instances=v["disjoint_instances"],
        config=_solver_config(cfg),
        base_seed=cfg["seed"],
    )
    counts = {"pass": 0, "fail": 0, "not_applicable": 0}
    for r in reports:
        counts[r.verdict] += 1
    width = max(len(r.theorem_id) for r in reports)
    by_theorem = {}
    for r in reports:
        by_theorem.setdefault(r.theorem_id, []).append(r)
    for tid, rs in by_theorem.items():
        ok = sum(1 for r in rs if r.verdict == "pass")
        print(f"{tid:<{width}}  {ok}/{len(rs)} pass")
    if out_path:
        write_json(
            out_path,
            {
                "config": cfg,
                "seed": cfg["seed"],
                "counts": counts,
                "reports": [r.to_dict() for r in reports],
            },
        )
    passed = suite_passed(reports)
    print(f"verdicts: {counts}")
    return 0 if passed else 4


def cmd_experiment(cfg: dict, out_dir: str) -> int:
    e = cfg["experiment"]
    g = cfg["geometry"]
    if e["comparison_mode"]:
        weightings = ((IDENTITY, None), (TRUNCATED, e["truncation_k"]))
    else:
        weightings = ((cfg["weighting"]["kind"], cfg["weighting"]["k"]),)
    config = ExperimentConfig(
        trials=e["trials"],
        sources_per_trial=e["sources_per_trial"],
        electrode_count=g["electrode_count"],
        scalp_radius=g["scalp_radius"],
        conductivity=g["conductivity"],
        source_shell_fraction=g["source_shell_fraction"],
        true_grid_size=g["true_grid_size"],
        inverse_grid_size=g["inverse_grid_size"],
        min_separation=g["min_separation"],
        min_electrode_distance=g["min_electrode_distance"],
        noise_level=e["noise_level"],
        weightings=weightings,
        tau=cfg["morozov"]["tau"],
        delta_mode=cfg["morozov"]["delta_mode"],
        delta_floor_rel=cfg["morozov"]["delta_floor_rel"],
        discrepancy_space=cfg["morozov"]["space"],
        max_bisections=cfg["morozov"]["max_bisections"],
        solver=_solver_config(cfg),
        moment_scale=e["moment_scale"],
        sources_on_inverse_grid=e["sources_on_inverse_grid"],
    )
    report = run_experiment(config, master_seed=cfg["seed"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload["cli_config"] = cfg
    write_json(out / "experiment_report.json", payload)
    write_experiment_csv(report, out / "experiment_rows.csv")
    for kind, stats in report.summary.items():
        print(
            f"{kind}: mean DLE {stats['mean_dle_mm']:.4f} mm, "
            f"mean DOE {stats['mean_doe_rad']:.4f} rad "
            f"({stats['scored']}/{stats['rows']} rows scored)"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wglasso",
        description="Group-sparse source recovery with weighted group lasso.",
    )
    parser.add_argument("--config", help="JSON config file (defaults documented in README)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write geometry, grids and lead fields")
    p_gen.add_argument("--out-dir", required=True)
    p_gen.add_argument("--electrodes", type=int, help="electrode count override")
    p_gen.add_argument("--true-grid", type=int, help="true grid size override")
    p_gen.add_argument("--inverse-grid", type=int, help="inverse grid size override")

    p_solve = sub.add_parser("solve", help="solve one inverse problem on generated data")
    p_solve.add_argument("--data-dir", required=True)
    p_solve.add_argument("--out", required=True)
    p_solve.add_argument("--alpha", help='"morozov" or a fixed positive value')
    p_solve.add_argument("--kind", choices=[IDENTITY, TRUNCATED])
    p_solve.add_argument("--k", type=int, help="truncation rank override")
    p_solve.add_argument("--noise", type=float, help="simulated noise level override")

    p_verify = sub.add_parser("verify", help="run the theorem verification suite")
    p_verify.add_argument("--out", help="write the aggregated report JSON here")
    p_verify.add_argument(
        "--instances", type=int, help="set all three instance counts at once (quick mode)"
    )

    p_exp = sub.add_parser("experiment", help="run the batched experiment harness")
    p_exp.add_argument("--out-dir", required=True)
    p_exp.add_argument("--trials", type=int)
    p_exp.add_argument("--noise", type=float)
    p_exp.add_argument(
        "--no-comparison",
        action="store_true",
        help="run only the weighting configured under 'weighting'",
    )
    return parser


def _apply_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        cfg["seed"] = args.seed
    cmd = args.command
    if cmd == "generate":
        if args.electrodes is not None:
            cfg["geometry"]["electrode_count"] = args.electrodes
        if args.true_grid is not None:
            cfg["geometry"]["true_grid_size"] = args.true_grid
        if args.inverse_grid is not None:
            cfg["geometry"]["inverse_grid_size"] = args.inverse_grid
    elif cmd == "solve":
        if args.alpha is not None:
            cfg["solve"]["alpha"] = args.alpha if args.alpha == "morozov" else float(args.alpha)
        if args.kind is not None:
            cfg["weighting"]["kind"] = args.kind
        if args.k is not None:
            cfg["weighting"]["k"] = args.k
        if args.noise is not None:
            cfg["solve"]["noise_level"] = args.noise
    elif cmd == "verify":
        if args.instances is not None:
            cfg["verify"] = {
                "pursuit_instances": args.instances,
                "gamma_instances": args.instances,
                "disjoint_instances": args.instances,
            }
    elif cmd == "experiment":
        if args.trials is not None:
            cfg["experiment"]["trials"] = args.trials
        if args.noise is not None:
            cfg["experiment"]["noise_level"] = args.noise
        if args.no_comparison:
            cfg["experiment"]["comparison_mode"] = False
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        if args.command == "generate":
            return cmd_generate(cfg, args.out_dir)
        if args.command == "solve":
            return cmd_solve(cfg, args.data_dir, args.out)
        if args.command == "verify":
            return cmd_verify(cfg, args.out)
        if args.command == "experiment":
            return cmd_experiment(cfg, args.out_dir)
        parser.error(f"unknown command {args.command!r}")
    except (ConfigError, CapacityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
