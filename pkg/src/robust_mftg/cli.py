"""Command-line front end: ``robust-mftg {solve,check-gamma,learn,compare}``.

Exit codes: 0 on success (including a negative viability verdict), 2 for bad
input, 3 when a computation produced non-finite numbers.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .grad import SmoothingParams
from .learn import (LearningTrace, NumericalError, RgdaConfig, baseline_gda, default_proj_radius_sq,
                    evaluations_used, nash_gap, policy_at_budget, rgda)
from .model import ConfigError, dump_gains, load_model
from .riccati import (check_viability_finite, check_viability_mf, find_min_viable_gamma,
                      finite_population_gap, solve_riccati)
from .sim import METHODS, SimConfig

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
SCHEMA_VERSION = "1"
TRACE_COLUMNS = ("schema", "algo", "t", "k", "cost_estimate", "err_K", "err_L", "grad_norm",
                 "proj_active", "wall_ms", "seed")
SUMMARY_COLUMNS = ("algo", "T", "final_gap", "budget_matched_gap", "total_evals", "wall_ms")
TOOL = f"robust-mftg {__version__}"

# flat keys accepted in a learner --config file
CONFIG_KEYS = ("inner_iters", "lr", "lr_schedule", "radius", "batch", "baseline",
               "antithetic_directions", "proj_radius_sq", "n_agents", "n_rollouts",
               "antithetic_noise", "sim_method", "eval_cov_y", "eval_cov_z", "seed",
               "early_stop_tol")
LEARN_DEFAULTS = dict(inner_iters=1000, lr=0.001, lr_schedule="constant", radius=1.0,
                      batch=1000, baseline=False, antithetic_directions=False,
                      proj_radius_sq=None, n_agents=100, n_rollouts=1, antithetic_noise=False,
                      sim_method="agents", eval_cov_y=None, eval_cov_z=None, seed=0,
                      early_stop_tol=None)


class InputError(Exception):
    pass


def fmt(x) -> str:
    """CSV/console number format: 17 significant digits, empty for missing."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if np.isnan(x) else format(x, ".17g")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(path: str | None) -> Path | None:
    if path is None:
        return None
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, args, config: dict, model_path: str) -> None:
    raw = Path(model_path).read_bytes()
    _write_json(out / "manifest.json", {
        "tool": TOOL,
        "command": args.command,
        "argv": args.argv,
        "model_path": str(Path(model_path).resolve()),
        "model_sha256": hashlib.sha256(raw).hexdigest(),
        "config": config,
        "seed": config.get("seed"),
        "output_dir": str(out.resolve()),
        "python": platform.python_version(),
        "numpy": np.__version__,
    })


# ---------------------------------------------------------------------------
# solve


def cmd_solve(args) -> int:
    model = load_model(args.model)
    sol = solve_riccati(model)
    print(f"nash_value={fmt(sol.nash_value)}")
    print(f"cond1={'holds' if sol.cond1_holds else 'violated'}")
    if not sol.ok:
        print(f"singular stage matrix at t={sol.failed_step}", file=sys.stderr)
        return EXIT_NUMERIC
    out = _out_dir(args.out)
    if out is not None:
        dump_gains(sol.nash_gains, out / "gains.json")
        _write_json(out / "value.json", {
            "nash_value": sol.nash_value,
            "cond1_holds": sol.cond1_holds,
            "m": [x.tolist() for x in sol.m_seq],
            "m_bar": [x.tolist() for x in sol.m_bar_seq],
            "n": sol.n_seq.tolist(),
            "n_bar": sol.n_bar_seq.tolist(),
        })
        _manifest(out, args, {"gamma": model.gamma}, args.model)
    return EXIT_OK


# ---------------------------------------------------------------------------
# check-gamma


def cmd_check_gamma(args) -> int:
    model = load_model(args.model)
    if args.mode == "finite" and args.agents is None:
        raise InputError("--agents is required with --mode finite")
    if args.agents is not None and args.agents < 1:
        raise InputError("--agents must be >= 1")
    n_agents = args.agents if args.mode == "finite" else None
    report: dict = {"mode": args.mode, "agents": n_agents, "c1_override": args.c1}
    if args.bisect is not None or args.min_gamma:
        lo, hi, tol = args.bisect if args.bisect is not None else (1e-3, 1e3, 1e-6)
        if not (0 < lo < hi) or tol <= 0:
            raise InputError(f"invalid bisection bracket lo={lo} hi={hi} tol={tol}")
        g = find_min_viable_gamma(model, lo, hi, tol, n_agents, args.c1)
        line = "NONE-IN-RANGE" if g is None else f"MIN-GAMMA {fmt(g)}"
        report.update(bracket=[lo, hi, tol], min_gamma=g)
    else:
        sol = solve_riccati(model)
        if n_agents is None:
            verdict = check_viability_mf(model, sol)
        else:
            gap = finite_population_gap(model, sol, args.c1)
            verdict = check_viability_finite(model, sol, gap, n_agents)
        line = f"{'VIABLE' if verdict.viable else 'NOT-VIABLE'} margin={fmt(verdict.margin)}"
        report.update(gamma=model.gamma, viable=verdict.viable, margin=verdict.margin,
                      cond1_holds=sol.cond1_holds)
    print(line)
    out = _out_dir(args.out)
    if out is not None:
        report["verdict"] = line
        _write_json(out / "report.json", report)
        _manifest(out, args, report, args.model)
    return EXIT_OK


# ---------------------------------------------------------------------------
# learn


def _learner_settings(args, defaults: dict | None = None) -> dict:
    settings = dict(LEARN_DEFAULTS, **(defaults or {}))
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(args.config, f"cannot read file ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"malformed JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("<root>", "expected a JSON object")
        for key in cfg:
            if key not in CONFIG_KEYS:
                raise ConfigError(key, "unknown key")
        settings.update(cfg)
    flags = {"inner_iters": args.iters, "lr": args.lr, "lr_schedule": args.lr_schedule,
             "radius": args.radius, "batch": args.batch, "n_agents": args.agents,
             "n_rollouts": args.rollouts, "sim_method": args.sim_method,
             "proj_radius_sq": args.proj_radius_sq, "seed": args.seed}
    settings.update({k: v for k, v in flags.items() if v is not None})
    if args.antithetic_directions:
        settings["antithetic_directions"] = True
    if args.antithetic_noise:
        settings["antithetic_noise"] = True
    return settings


def _build_config(settings: dict, gradient_mode: str, threads: int | None,
                  m: int) -> RgdaConfig:
    try:
        cov_y = None if settings["eval_cov_y"] is None else np.asarray(settings["eval_cov_y"], float)
        cov_z = None if settings["eval_cov_z"] is None else np.asarray(settings["eval_cov_z"], float)
        for name, cov in (("eval_cov_y", cov_y), ("eval_cov_z", cov_z)):
            if cov is not None and cov.shape != (m, m):
                raise ConfigError(name, f"expected shape {(m, m)}, got {cov.shape}")
        sim = SimConfig(n_agents=int(settings["n_agents"]), n_rollouts=int(settings["n_rollouts"]),
                        seed=int(settings["seed"]), antithetic=bool(settings["antithetic_noise"]),
                        threads=threads, method=settings["sim_method"])
        smoothing = SmoothingParams(float(settings["radius"]), int(settings["batch"]),
                                    baseline=bool(settings["baseline"]),
                                    antithetic=bool(settings["antithetic_directions"]))
        return RgdaConfig(
            inner_iters=int(settings["inner_iters"]), lr=settings["lr"],
            lr_schedule=settings["lr_schedule"], smoothing=smoothing,
            proj_radius_sq=settings["proj_radius_sq"], sim=sim, eval_cov_y=cov_y,
            eval_cov_z=cov_z, seed=int(settings["seed"]), gradient_mode=gradient_mode,
            early_stop_tol=settings["early_stop_tol"])
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _resolved(cfg: RgdaConfig, oracle, m: int) -> dict:
    cov_y, cov_z = cfg.covariances(m)
    lr = cfg.lr if np.ndim(cfg.lr) == 0 else list(np.asarray(cfg.lr, float))
    return {
        "inner_iters": cfg.inner_iters, "lr": lr, "lr_schedule": cfg.lr_schedule,
        "radius": cfg.smoothing.radius, "batch": cfg.smoothing.batch,
        "baseline": cfg.smoothing.baseline, "antithetic_directions": cfg.smoothing.antithetic,
        "proj_radius_sq": (cfg.proj_radius_sq if cfg.proj_radius_sq is not None
                           else default_proj_radius_sq(oracle)),
        "n_agents": cfg.sim.n_agents, "n_rollouts": cfg.sim.n_rollouts,
        "antithetic_noise": cfg.sim.antithetic, "sim_method": cfg.sim.method,
        "eval_cov_y": cov_y.tolist(), "eval_cov_z": cov_z.tolist(), "seed": cfg.seed,
        "gradient_mode": cfg.gradient_mode, "early_stop_tol": cfg.early_stop_tol,
    }


def write_trace(path: Path, trace: LearningTrace, timing: bool) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in trace:
            writer.writerow([SCHEMA_VERSION, r.algo, r.t, r.k, fmt(r.cost_estimate),
                             fmt(r.err_k), fmt(r.err_l), fmt(r.grad_norm), fmt(r.proj_active),
                             fmt(r.wall_ms) if timing else "", r.seed])


PLOT_SCRIPT = '''"""Plot learner traces written by robust-mftg (needs matplotlib)."""

import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
files = sorted(here.glob("trace*.csv"))
fig, axes = plt.subplots(1, len(files), figsize=(5 * len(files), 4), squeeze=False)
for ax, path in zip(axes[0], files):
    curves = defaultdict(list)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["err_K"]:
                curves[(row["algo"], int(row["t"]))].append(float(row["err_K"]))
    for (algo, t), errs in sorted(curves.items()):
        label = algo if t < 0 else f"{algo} t={t}"
        ax.semilogy(errs, label=label)
    ax.set_title(path.stem)
    ax.set_xlabel("iteration")
    ax.set_ylabel("max_j ||K_j - K_j*||")
    ax.legend()
fig.tight_layout()
fig.savefig(here / "traces.png", dpi=120)
print(f"wrote {here / 'traces.png'}")
'''


def cmd_learn(args) -> int:
    model = load_model(args.model)
    settings = _learner_settings(args)
    mode = "zero_order" if args.algo == "rgda" else "exact"
    cfg = _build_config(settings, mode, args.threads, model.state_dim)
    sol = solve_riccati(model)
    oracle = sol if sol.ok else None
    if oracle is None:
        print("riccati oracle unavailable: gap columns left empty", file=sys.stderr)
    out = _out_dir(args.out)
    learner = baseline_gda if args.algo == "baseline" else rgda
    start = time.perf_counter()
    policy, trace = learner(model, cfg, oracle if oracle is not None else False,
                            record_gains=False)
    elapsed = (time.perf_counter() - start) * 1e3
    write_trace(out / "trace.csv", trace, args.timing)
    dump_gains(policy, out / "gains.json")
    (out / "plot_trace.py").write_text(PLOT_SCRIPT, encoding="utf-8")
    config = _resolved(cfg, oracle, model.state_dim)
    config["algo"] = args.algo
    _manifest(out, args, config, args.model)
    line = f"algo={args.algo} rows={len(trace)} evals={evaluations_used(trace, model.horizon)}"
    if oracle is not None:
        line += f" final_gap={fmt(nash_gap(policy, oracle).max)}"
    if args.timing:
        line += f" wall_ms={fmt(elapsed)}"
    print(line)
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


def cmd_compare(args) -> int:
    base = load_model(args.model)
    if any(T < 1 for T in args.horizons):
        raise InputError("horizons must be >= 1")
    if len(set(args.horizons)) != len(args.horizons):
        raise InputError("horizons must be distinct")
    if not base.is_time_invariant() and args.horizons != [base.horizon]:
        raise InputError("re-horizoning needs a time-invariant model")
    settings = _learner_settings(args, {"inner_iters": 70, "lr": 0.025})
    cfg = _build_config(settings, "exact", args.threads, base.state_dim)
    out = _out_dir(args.out)
    m, p = base.state_dim, base.control_dim
    rows = []
    resolved = {}
    for T in args.horizons:
        model = base if T == base.horizon else base.with_horizon(T)
        sol = solve_riccati(model)
        oracle = sol if sol.ok else None
        results = {}
        for algo, learner in (("ergda", rgda), ("baseline", baseline_gda)):
            start = time.perf_counter()
            policy, trace = learner(model, cfg, oracle if oracle is not None else False)
            results[algo] = (policy, trace, (time.perf_counter() - start) * 1e3)
            write_trace(out / f"trace_{algo}_T{T}.csv", trace, args.timing)
        budget = min(evaluations_used(tr, T) for _, tr, _ in results.values())
        for algo, (policy, trace, wall) in results.items():
            final = matched = None
            if oracle is not None:
                final = nash_gap(policy, oracle).max
                matched = nash_gap(policy_at_budget(trace, T, m, p, budget), oracle).max
            rows.append((algo, T, final, matched, evaluations_used(trace, T),
                         wall if args.timing else None))
        resolved[str(T)] = _resolved(cfg, oracle, m)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for algo, T, final, matched, evals, wall in rows:
            writer.writerow([algo, T, fmt(final), fmt(matched), evals, fmt(wall)])
    (out / "plot_trace.py").write_text(PLOT_SCRIPT, encoding="utf-8")
    _manifest(out, args, {"horizons": args.horizons, "per_horizon": resolved,
                          "seed": cfg.seed}, args.model)
    print(",".join(SUMMARY_COLUMNS))
    for row in rows:
        print(",".join(fmt(x) if not isinstance(x, str) else x for x in row))
    return EXIT_OK


# ---------------------------------------------------------------------------


def _learner_flags(p: argparse.ArgumentParser, iters_default: str, lr_default: str) -> None:
    p.add_argument("--iters", type=int, help=f"inner iterations K (default {iters_default})")
    p.add_argument("--lr", type=float, help=f"learning rate eta (default {lr_default})")
    p.add_argument("--lr-schedule", choices=("constant", "inverse"))
    p.add_argument("--proj-radius-sq", type=float,
                   help="projection radius D (default 4 max_t ||Nash gains||^2)")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file with learner settings; flags override it")
    p.add_argument("--threads", type=int, help="worker cap (ROBUST_MFTG_THREADS overrides)")
    p.add_argument("--timing", action="store_true",
                   help="record wall-clock columns (off keeps CSVs byte-reproducible)")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-mftg",
                                     description="Robust LQ mean-field-type game toolkit")
    parser.add_argument("--version", action="version", version=TOOL)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the Riccati recursions")
    p.add_argument("model")
    p.add_argument("--out", help="write gains.json, value.json and a manifest here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check-gamma", help="viability verdict or minimal viable gamma")
    p.add_argument("model")
    p.add_argument("--mode", choices=("mf", "finite"), default="mf")
    p.add_argument("--agents", type=int, help="population size N for --mode finite")
    p.add_argument("--c1", type=float, help="override the population-gap constant C1")
    p.add_argument("--min-gamma", action="store_true",
                   help="search for the minimal viable gamma (default bracket 1e-3..1e3)")
    p.add_argument("--bisect", nargs=3, type=float, metavar=("LO", "HI", "TOL"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_check_gamma)

    p = sub.add_parser("learn", help="run a learner and write its trace")
    p.add_argument("model")
    p.add_argument("--algo", choices=("rgda", "ergda", "baseline"), default="ergda")
    p.add_argument("--batch", type=int, help="mini-batch size N_b (default 1000)")
    p.add_argument("--radius", type=float, help="smoothing radius r (default 1.0)")
    p.add_argument("--antithetic-directions", action="store_true")
    p.add_argument("--agents", type=int, help="simulated agents M (default 100)")
    p.add_argument("--rollouts", type=int, help="rollouts per cost evaluation (default 1)")
    p.add_argument("--antithetic-noise", action="store_true")
    p.add_argument("--sim-method", choices=METHODS)
    _learner_flags(p, "1000", "0.001")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("compare", help="exact rgda vs the simultaneous baseline")
    p.add_argument("model")
    p.add_argument("--horizons", type=int, nargs="+", default=[2, 3, 4, 5])
    _learner_flags(p, "70", "0.025")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    if args.command == "compare":
        for name in ("radius", "batch", "agents", "rollouts", "sim_method"):
            setattr(args, name, None)
        args.antithetic_directions = args.antithetic_noise = False
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"input error: {exc.key}: {exc.reason}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
