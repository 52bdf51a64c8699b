"""Command line entry point: ``polopt <command>``.

Commands read an optional TOML file; explicit flags override its values.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field, fields
from importlib import resources

import numpy as np

from . import experiments, lqr, oracle, svg, verify
from .errors import PoloptError, ValidationError
from .mdp import Setup, SoftmaxPolicy, load_mdp, objective
from .optimizers import TrustRegionConfig, gradient_ascent, natural_gradient_ascent, policy_iteration, ppo

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DEMO_METHODS = ("policy_iteration", "policy_gradient", "npg", "trpo", "ppo")


@dataclass
class ExperimentConfig:
    gamma: float = experiments.DEFAULT_GAMMA
    alpha: float = 1.0
    grid: tuple = experiments.DEFAULT_GRID
    k0: tuple = (0.1, 0.8)
    max_iters: int = 500
    step_sizes: tuple = experiments.STEP_SIZES
    alphas: tuple = (0.3, 1.0)
    gammas: tuple = (0.7, 0.99)
    methods: tuple | None = None
    iters: int = 50
    problem: object = None  # path to a problem JSON, an inline table, or None for the default system
    out: str | None = None
    svg: bool = False
    extra: dict = field(default_factory=dict)

    def validate(self):
        def unit(name, x, closed=False):
            ok = 0 < x <= 1 if closed else 0 < x < 1
            if not ok:
                raise ValidationError(f"{name} must lie in (0, 1{']' if closed else ')'}, got {x}")

        unit("gamma", self.gamma)
        if len(self.grid) != 5:
            raise ValidationError("grid needs K0MIN,K0MAX,K1MIN,K1MAX,N")
        k0_min, k0_max, k1_min, k1_max, n = self.grid
        if not (k0_min < k0_max and k1_min < k1_max):
            raise ValidationError(f"grid bounds are empty: {self.grid}")
        if int(n) != n or n < 1:
            raise ValidationError(f"grid steps must be a positive integer, got {n}")
        if self.alpha <= 0 or any(a <= 0 for a in self.alphas):
            raise ValidationError("alpha values must be positive")
        for g in self.gammas:
            unit("gammas entry", g)
        if self.max_iters < 0 or int(self.max_iters) != self.max_iters:
            raise ValidationError(f"max_iters must be a nonnegative integer, got {self.max_iters}")
        if self.iters < 0:
            raise ValidationError(f"iters must be nonnegative, got {self.iters}")
        if not self.step_sizes or any(s <= 0 for s in self.step_sizes):
            raise ValidationError("step sizes must be positive")
        if len(self.k0) != 2:
            raise ValidationError("k0 needs two entries")
        return self

    def load_problem(self):
        if self.problem is None:
            return lqr.default_problem(self.alpha)
        if isinstance(self.problem, dict):
            return lqr.problem_from_dict(self.problem)
        return lqr.load_problem(self.problem)


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _grid(text):
    vals = _floats(text)
    if len(vals) != 5:
        raise argparse.ArgumentTypeError("expected K0MIN,K0MAX,K1MIN,K1MAX,N")
    return vals[:4] + (int(vals[4]),)


def _methods(text):
    return tuple(m.strip() for m in text.split(",") if m.strip())


def build_config(args, **defaults):
    """Defaults, then the TOML file, then any flag that was given."""
    values = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config, "rb") as f:
            values.update(tomllib.load(f))
    known = {f.name for f in fields(ExperimentConfig)}
    extra = {k: values.pop(k) for k in list(values) if k not in known}
    for name in known:
        flag = getattr(args, name.replace("-", "_"), None)
        if flag is not None and flag is not False:
            values[name] = flag
    for name in ("grid", "k0", "step_sizes", "alphas", "gammas", "methods"):
        if values.get(name) is not None:
            values[name] = tuple(values[name])
    if "grid" in values:
        values["grid"] = tuple(values["grid"][:4]) + (int(values["grid"][4]),)
    return ExperimentConfig(**values, extra=extra).validate()


def write_csv(header, rows, path):
    if path is None:
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(rows)
    else:
        oracle.write_rows_csv(header, rows, path)


def _svg_path(out, suffix=""):
    base = out[:-4] if out and out.endswith(".csv") else (out or "polopt")
    return f"{base}{suffix}.svg"


# -- commands ------------------------------------------------------------------------


def cmd_verify(args):
    checks = verify.select(args.filter)
    if not checks:
        print(f"no checks match {args.filter!r}", file=sys.stderr)
        return 2
    saved = lqr.GAMMA_CORRECTION
    if args.inject_fault == "gamma-correction":
        lqr.GAMMA_CORRECTION = False
    try:
        start = time.perf_counter()
        results = verify.run(args.filter)
        total = time.perf_counter() - start
    finally:
        lqr.GAMMA_CORRECTION = saved
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {total:.1f}s")
    sys.stdout.flush()
    if args.json:
        oracle.write_json({"total_seconds": total, "results": [r.to_dict() for r in results]}, args.json)
    if total > verify.TOTAL_BUDGET:
        print(f"suite exceeded its {verify.TOTAL_BUDGET:.0f}s budget", file=sys.stderr)
        return 1
    if failed:
        print(f"first failure: {failed[0].name}: {failed[0].detail}", file=sys.stderr)
        return 1
    return 0


def cmd_vector_field(args):
    cfg = build_config(args)
    problem = cfg.load_problem()
    methods = cfg.methods or experiments.FIELD_METHODS
    rows = experiments.vector_field(problem, cfg.gamma, cfg.grid, methods)
    write_csv(experiments.FIELD_HEADER, rows, cfg.out)
    if cfg.svg:
        k0 = np.array([cfg.k0])
        marks = []
        for setup in (Setup.average(), Setup.discounted(cfg.gamma)):
            try:
                marks.append(tuple(lqr.riccati_fixed_point(problem, setup, k0).ravel()[:2]))
            except PoloptError:
                pass
        svg.vector_field_figure(rows, methods, _svg_path(cfg.out), marks)
    return 0


def cmd_gap(args):
    cfg = build_config(args)
    problem = cfg.load_problem()
    runs = experiments.gap_experiment(problem, cfg.gamma, cfg.k0, cfg.max_iters,
                                      cfg.methods or experiments.GAP_METHODS, cfg.step_sizes)
    write_csv(experiments.GAP_HEADER, experiments.gap_rows(runs), cfg.out)
    if cfg.svg:
        svg.gap_figure(runs, _svg_path(cfg.out))
    return 0


SWEEP_HEADER = ["alpha", "gamma"] + experiments.FIELD_HEADER
SWEEP_SUMMARY_HEADER = ["alpha", "gamma", "mean_cosine_grad_gamma_grad_mu", "n_points"]


def cmd_sweep(args):
    cfg = build_config(args)
    fields_, summary = experiments.sweep(cfg.alphas, cfg.gammas, cfg.grid)
    rows = [[a, g] + r for a, g, cell in fields_ for r in cell]
    write_csv(SWEEP_HEADER, rows, cfg.out)
    summary_path = None if cfg.out is None else (cfg.out[:-4] if cfg.out.endswith(".csv") else cfg.out) + "_summary.csv"
    write_csv(SWEEP_SUMMARY_HEADER, summary, summary_path)
    if cfg.svg:
        svg.sweep_figure(fields_, _svg_path(cfg.out))
    return 0


def run_mdp_demo(mdp, methods=DEMO_METHODS, gamma=0.9, iters=50):
    """Objective after each iteration, per setup and method."""
    report = {}
    if not methods:
        return report
    for setup in (Setup.discounted(gamma), Setup.average()):
        start = SoftmaxPolicy.uniform(mdp.n_states, mdp.n_actions)
        step = 0.5 if setup.is_average else 0.5 * (1 - gamma)
        per = {}
        for method in methods:
            if method == "policy_iteration":
                per[method] = policy_iteration(mdp, setup)[1]
                per["enumeration_optimum"] = oracle.enumerate_deterministic_optimum(mdp, setup)[1]
                continue
            if method == "policy_gradient":
                policies = gradient_ascent(mdp, start, setup, step, iters)
            elif method == "npg":
                policies = natural_gradient_ascent(mdp, start, setup, TrustRegionConfig(eta=0.1), iters)
            elif method == "trpo":
                policies = natural_gradient_ascent(mdp, start, setup, TrustRegionConfig(rho=0.01), iters,
                                                   trust_region=True)
            elif method == "ppo":
                policies = ppo(mdp, start, setup, n_outer=iters)
            else:
                raise ValidationError(f"unknown method {method!r}; choose from {', '.join(DEMO_METHODS)}")
            per[method] = [objective(mdp, p, setup) for p in policies]
        report[str(setup)] = per
    return report


def cmd_mdp_demo(args):
    cfg = build_config(args, gamma=0.9)
    if args.mdp:
        mdp = load_mdp(args.mdp)
    else:
        with resources.as_file(resources.files("polopt") / "data" / "demo_mdp.json") as path:
            mdp = load_mdp(path)
    methods = DEMO_METHODS if cfg.methods is None else cfg.methods
    report = run_mdp_demo(mdp, methods, cfg.gamma, cfg.iters)
    text = json.dumps(report, indent=1, sort_keys=True)
    if cfg.out:
        with open(cfg.out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


# -- parser ----------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="polopt", description="Policy optimization experiments and acceptance checks.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the acceptance checks")
    v.add_argument("--filter", help="check name or group prefix (e.g. lqr, tabular.limits) or criterion number")
    v.add_argument("--json", help="also write results as JSON")
    v.add_argument("--inject-fault", choices=["gamma-correction"], help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    def common(sp):
        sp.add_argument("--config", help="TOML file; flags override it")
        sp.add_argument("--out", help="output path (stdout if omitted)")
        sp.add_argument("--svg", action="store_true", default=None, help="also write an SVG next to --out")

    f = sub.add_parser("vector-field", help="update directions on a K grid")
    common(f)
    f.add_argument("--gamma", type=float)
    f.add_argument("--alpha", type=float, help="scale the default system matrix")
    f.add_argument("--grid", type=_grid, help="K0MIN,K0MAX,K1MIN,K1MAX,N")
    f.add_argument("--methods", type=_methods)
    f.set_defaults(func=cmd_vector_field)

    g = sub.add_parser("gap", help="optimality gap of tuned runs in both setups")
    common(g)
    g.add_argument("--gamma", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--max-iters", dest="max_iters", type=int)
    g.add_argument("--k0", type=_floats)
    g.add_argument("--step-sizes", dest="step_sizes", type=_floats)
    g.add_argument("--methods", type=_methods)
    g.set_defaults(func=cmd_gap)

    s = sub.add_parser("sweep", help="vector fields over an alpha x gamma grid")
    common(s)
    s.add_argument("--alphas", type=_floats)
    s.add_argument("--gammas", type=_floats)
    s.add_argument("--grid", type=_grid)
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("mdp-demo", help="PI/PG/NPG/TRPO/PPO on a tabular MDP")
    d.add_argument("--config")
    d.add_argument("--mdp", help="MDP JSON (bundled 5-state example if omitted)")
    d.add_argument("--out")
    d.add_argument("--gamma", type=float)
    d.add_argument("--iters", type=int)
    d.add_argument("--methods", type=_methods, help="comma-separated; empty string for none")
    d.set_defaults(func=cmd_mdp_demo)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PoloptError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"polopt: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
