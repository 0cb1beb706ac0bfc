"""Command-line entry points.

Every subcommand takes --config (YAML, see README) and --out (directory).
Exit codes: 0 on success, 2 on configuration errors, 3 when any row or check
hard-fails (unrealizable classes, enumeration caps, failed verification).
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .dataset import sample_dataset, save_dataset
from .function_classes import UnrealizableError
from .harness import (ConfigError, ExperimentSetup, build_config_mdp,
                      build_counterexample, build_setup, load_config,
                      run_experiment)
from .mdp import (Policy, QFunction, expected_return, performance_difference,
                  save_mdp, truncated_return)
from .occupancy import (SADistribution, StateDistribution, apply_adjoint,
                        apply_transition, compose, occupancy_measure,
                        sa_transition_matrix, sup_ratio)
from .oracle import (EnumerationCapError, covering_concentrability,
                     data_concentrability, mixture_covering,
                     near_optimal_policies, per_step_coefficient,
                     telescoping_sides)
from .solver import run_solver, save_report
from .textio import fmt_float

log = logging.getLogger(__name__)


def _cmd_gen_mdp(cfg, out: Path) -> int:
    mdp = build_config_mdp(cfg)
    save_mdp(mdp, out / "mdp.txt")
    print(out / "mdp.txt")
    return 0


def _cmd_counterexample(cfg, out: Path) -> int:
    mdp = build_counterexample(cfg.gamma)
    save_mdp(mdp, out / "mdp.txt")
    print(out / "mdp.txt")
    return 0


def _cmd_sample(cfg, out: Path) -> int:
    setup = build_setup(cfg)
    for n in cfg.n_grid:
        for seed in cfg.seeds:
            ds = sample_dataset(setup.mdp, setup.mu_data, setup.pi_b, n, seed)
            path = out / f"dataset_seed{seed}_n{n}.jsonl"
            save_dataset(ds, path)
            print(path)
    return 0


def _cmd_solve(cfg, out: Path) -> int:
    setup = build_setup(cfg)
    seed, n = cfg.seeds[0], cfg.n_grid[0]
    ds = sample_dataset(setup.mdp, setup.mu_data, setup.pi_b, n, seed)
    report = run_solver(ds, setup.mdp, setup.d_c, setup.mu_c, setup.pi_c,
                        setup.q_class, setup.w_class, setup.b_class,
                        cfg.delta, c_c=setup.c_c)
    save_report(report, out)
    gap = setup.j_star - expected_return(setup.mdp, report.pi_hat)
    print(f"seed={seed} n={n} gap={fmt_float(gap)} bound={fmt_float(report.bound)}")
    return 0


def _cmd_experiment(cfg, out: Path) -> int:
    rows = run_experiment(cfg, out)
    failed = sum(1 for r in rows if r.error)
    print(f"{len(rows)} rows, {failed} failed -> {out / 'rows.csv'}")
    return 3 if failed else 0


# ---------------------------------------------------------------------------
# verification battery


def _verify_rows(setup: ExperimentSetup):
    """Identity and bound checks on the configured model.

    Yields (check, detail, value, bound, ok).  Values are deviations or
    coefficients; bound is what the value was compared against (nan for
    purely informational rows, which always pass).
    """
    mdp = setup.mdp
    cfg = setup.config
    S, A = mdp.n_states, mdp.n_actions
    g = mdp.gamma
    rng = np.random.default_rng(0)

    def rand_dist():
        return SADistribution(rng.dirichlet(np.ones(S * A)).reshape(S, A))

    def rand_policy():
        return Policy(rng.dirichlet(np.ones(A), size=S))

    worst = 0.0
    for _ in range(20):
        d, pol = rand_dist(), rand_policy()
        q = QFunction(rng.random((S, A)) * mdp.v_max)
        lhs = float(np.sum(apply_transition(mdp, pol, d).weights * q.values))
        rhs = float(np.sum(d.weights * apply_adjoint(mdp, pol, q).values))
        worst = max(worst, abs(lhs - rhs))
    yield ("adjoint-identity", "20 random (d, pi, q) triples", worst, 1e-12, worst <= 1e-12)

    worst = 0.0
    for _ in range(20):
        d, pol = rand_dist(), rand_policy()
        worst = max(worst, abs(float(apply_transition(mdp, pol, d).weights.sum()) - 1.0))
    yield ("mass-conservation", "20 random pushforwards", worst, 1e-13, worst <= 1e-13)

    pol = rand_policy()
    d0 = compose(StateDistribution(mdp.initial_dist), pol)
    direct = occupancy_measure(mdp, pol, d0).flat
    M = sa_transition_matrix(mdp, pol)
    term = (1.0 - g) * d0.flat
    series = term.copy()
    k = 200
    for _ in range(k):
        term = g * (M @ term)
        series = series + term
    diff = float(np.max(np.abs(series - direct)))
    tail = g ** (k + 1)
    yield ("neumann-truncation", f"{k} terms vs direct solve", diff, tail + 1e-12,
           diff <= tail + 1e-12)

    worst = 0.0
    for _ in range(5):
        lhs, rhs = performance_difference(mdp, rand_policy(), rand_policy())
        worst = max(worst, abs(lhs - rhs))
    yield ("performance-difference", "5 random policy pairs", worst, 1e-8, worst <= 1e-8)

    pi_try = rand_policy()
    worst = 0.0
    for i in (0, 3, 7):
        lhs, rhs = telescoping_sides(mdp, pi_try, i)
        worst = max(worst, abs(lhs - rhs))
    yield ("prefix-telescoping", "switch steps 0, 3, 7", worst, 1e-8, worst <= 1e-8)

    horizon = 10
    trunc_gap = abs(expected_return(mdp, pi_try) - truncated_return(mdp, pi_try, horizon))
    cap = g ** (horizon + 1) * mdp.v_max
    yield ("return-tail", f"truncated at step {horizon}", trunc_gap, cap + 1e-12,
           trunc_gap <= cap + 1e-12)

    enum_eps = mdp.v_max if cfg.enum_eps == "vmax" else float(cfg.enum_eps)
    rep = covering_concentrability(mdp, setup.mu_c, enum_eps, cfg.enum_horizon,
                                   cfg.enum_cap)
    yield ("covering-concentrability",
           f"witness policy {rep.witness_policy_index} state {rep.witness_index} "
           f"over {rep.policy_count} policies at horizon {rep.horizon}",
           rep.coefficient, math.nan, True)

    rep_d = data_concentrability(mdp, setup.d_c, setup.d_data)
    yield ("data-concentrability", f"witness pair {rep_d.witness_index}",
           rep_d.coefficient, math.nan, True)

    if math.isfinite(rep_d.coefficient):
        ratio = sup_ratio(setup.d_c, setup.d_data)
        cap = rep_d.coefficient / (1.0 - g) + 1e-9
        yield ("covering-ratio-bound", "sup d_c / d_data vs c_d / (1 - gamma)",
               ratio, cap, ratio <= cap)

    try:
        pols = near_optimal_policies(mdp, cfg.mixture_eps, cfg.mixture_horizon,
                                     cfg.enum_cap)
        mix = mixture_covering(mdp, pols)
        c_d_mix = data_concentrability(mdp, mix, setup.d_data).coefficient
        per_step = per_step_coefficient(mdp, pols, setup.d_data)
        ok = (c_d_mix <= per_step + 1e-9) or (math.isinf(c_d_mix) and math.isinf(per_step))
        yield ("mixture-covering-bound",
               f"{len(pols)} policies at horizon {cfg.mixture_horizon}",
               c_d_mix, per_step + 1e-9, ok)
    except EnumerationCapError as exc:
        yield ("mixture-covering-bound", f"skipped: {exc}", math.nan, math.nan, True)


def _cmd_verify(cfg, out: Path) -> int:
    setup = build_setup(cfg)
    rows = list(_verify_rows(setup))
    with open(out / "verify.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "detail", "value", "bound", "pass"])
        for check, detail, value, bound, ok in rows:
            writer.writerow([check, detail, fmt_float(value), fmt_float(bound),
                             "1" if ok else "0"])
    passed = sum(1 for r in rows if r[4])
    lines = [f"{passed}/{len(rows)} checks passed"]
    for check, detail, value, bound, ok in rows:
        status = "ok" if ok else "FAIL"
        lines.append(f"  [{status}] {check}: {detail} (value {fmt_float(value)})")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0 if passed == len(rows) else 3


_COMMANDS = {
    "gen-mdp": (_cmd_gen_mdp, "generate the configured model and write it out"),
    "counterexample": (_cmd_counterexample, "write the tie-breaking counterexample model"),
    "sample": (_cmd_sample, "draw the configured datasets"),
    "solve": (_cmd_solve, "run one minimax solve and report the selection"),
    "verify": (_cmd_verify, "run the identity and bound checks on the configured model"),
    "experiment": (_cmd_experiment, "run the full sweep with resumable output"),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="voprlab",
        description="tabular offline RL laboratory with verification oracles")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", required=True, help="output directory")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = _COMMANDS[args.command][0]
    try:
        return handler(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (UnrealizableError, EnumerationCapError) as exc:
        print(f"hard failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
