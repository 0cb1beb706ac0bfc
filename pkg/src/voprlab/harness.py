"""Experiment harness: model builders, config handling, and the sweep runner.

The YAML config format is a small nested tree; see README for the schema.
Runs are deterministic: identical config and seeds reproduce byte-identical
result rows, and a partially written rows.csv is resumed rather than redone.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .dataset import sample_dataset
from .function_classes import (FiniteFunctionClass, UnrealizableError,
                               build_realizable_classes, optimal_policy_ratio)
from .mdp import (Policy, TabularMDP, expected_return, load_mdp, optimal_q,
                  validate_mdp)
from .occupancy import (SADistribution, StateDistribution, compose,
                        conditional_policy, state_marginal, sup_ratio)
from .oracle import (EnumerationCapError, covering_concentrability,
                     data_concentrability, mixture_covering,
                     near_optimal_policies, weighted_l2)
from .solver import run_solver
from .textio import fmt_float

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentRow",
    "build_counterexample",
    "counterexample_misleading_policy",
    "random_mdp",
    "config_from_dict",
    "load_config",
    "ExperimentSetup",
    "build_setup",
    "run_experiment",
]

SLACK = 1e-9


class ConfigError(ValueError):
    pass


def build_counterexample(gamma: float = 0.9) -> TabularMDP:
    """Four-state chain where greedy tie-breaking decides everything.

    States 0..3 (two rewarding self-loops at 1 and 3).  From state 0, action
    0 moves to state 2 and action 1 moves to state 1; from state 2, action 0
    moves to state 3 and action 1 returns to state 0.  Rewards: 1 at state 1,
    1/gamma at state 3, zero elsewhere.  Start in state 0.  Both actions at
    state 0 are exactly optimal, so a policy may commit to the 0 -> 2 branch
    and still be optimal, but only if it continues correctly at state 2.
    """
    P = np.zeros((4, 2, 4))
    P[0, 0, 2] = 1.0
    P[0, 1, 1] = 1.0
    P[1, :, 1] = 1.0
    P[2, 0, 3] = 1.0
    P[2, 1, 0] = 1.0
    P[3, :, 3] = 1.0
    R = np.zeros((4, 2))
    R[1, :] = 1.0
    R[3, :] = 1.0 / gamma
    mu0 = np.array([1.0, 0.0, 0.0, 0.0])
    return validate_mdp(TabularMDP(P, R, gamma, mu0, r_max=1.0 / gamma))


def counterexample_misleading_policy() -> Policy:
    """Deterministic policy taking the 0 -> 2 branch but turning back at 2.

    It matches an optimal policy everywhere the usual covering distribution
    looks, yet earns nothing: the flow cycles 0 -> 2 -> 0 forever.
    """
    probs = np.zeros((4, 2))
    probs[0, 0] = 1.0
    probs[1, 0] = 1.0
    probs[2, 1] = 1.0
    probs[3, 0] = 1.0
    return Policy(probs)


def random_mdp(n_states: int, n_actions: int, seed: int,
               reward_sparsity: float = 0.5, gamma: float = 0.9) -> TabularMDP:
    """Dense Dirichlet transitions, sparse uniform rewards in [0, 1]."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.random((n_states, n_actions))
    R[rng.random((n_states, n_actions)) < reward_sparsity] = 0.0
    mu0 = rng.dirichlet(np.ones(n_states))
    return validate_mdp(TabularMDP(P, R, gamma, mu0, r_max=1.0))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    mdp_kind: str = "random"
    mdp_file: str = None
    gamma: float = 0.9
    n_states: int = 5
    n_actions: int = 3
    mdp_seed: int = 0
    reward_sparsity: float = 0.5
    mu_data: object = "uniform"
    pi_b: object = "uniform"
    covering: str = "uniform"
    covering_mu: tuple = None
    covering_pi: tuple = None
    mixture_eps: float = 1e-6
    mixture_horizon: int = 1
    enum_eps: object = "vmax"
    enum_horizon: int = 0
    enum_cap: int = 200_000
    n_distractors: int = 7
    noise_scale: float = 0.25
    class_seed: int = 0
    n_grid: tuple = (10_000,)
    seeds: tuple = (0,)
    delta: float = 0.1
    adversarial_tie_break: bool = False


_SECTIONS = {
    "mdp": {"kind", "file", "gamma", "n_states", "n_actions", "seed", "reward_sparsity"},
    "data": {"mu", "pi_b"},
    "covering": {"kind", "mu", "pi", "mixture_eps", "mixture_horizon"},
    "classes": {"n_distractors", "noise_scale", "seed"},
    "enumeration": {"eps", "horizon", "cap"},
    "sweep": {"n_grid", "seeds", "delta"},
}


def _section(raw, name):
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section '{name}' must be a mapping")
    unknown = set(sec) - _SECTIONS[name]
    if unknown:
        raise ConfigError(f"unknown key '{sorted(unknown)[0]}' in config section '{name}'")
    return sec


def _as_list(val, where):
    if not isinstance(val, (list, tuple)):
        raise ConfigError(f"{where} must be a list")
    return val


def _seed_tuple(val):
    """A seed spec is either a list of seeds or a count meaning 0..k-1."""
    if isinstance(val, int):
        return tuple(range(val))
    return tuple(int(s) for s in _as_list(val, "sweep.seeds"))


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - set(_SECTIONS) - {"adversarial_tie_break"}
    if unknown:
        raise ConfigError(f"unknown config section '{sorted(unknown)[0]}'")
    mdp_s = _section(raw, "mdp")
    data_s = _section(raw, "data")
    cov_s = _section(raw, "covering")
    cls_s = _section(raw, "classes")
    enum_s = _section(raw, "enumeration")
    sweep_s = _section(raw, "sweep")

    cfg = ExperimentConfig(
        mdp_kind=mdp_s.get("kind", "random"),
        mdp_file=mdp_s.get("file"),
        gamma=float(mdp_s.get("gamma", 0.9)),
        n_states=int(mdp_s.get("n_states", 5)),
        n_actions=int(mdp_s.get("n_actions", 3)),
        mdp_seed=int(mdp_s.get("seed", 0)),
        reward_sparsity=float(mdp_s.get("reward_sparsity", 0.5)),
        mu_data=data_s.get("mu", "uniform"),
        pi_b=data_s.get("pi_b", "uniform"),
        covering=cov_s.get("kind", "uniform"),
        covering_mu=tuple(cov_s["mu"]) if "mu" in cov_s else None,
        covering_pi=tuple(map(tuple, cov_s["pi"])) if "pi" in cov_s else None,
        mixture_eps=float(cov_s.get("mixture_eps", 1e-6)),
        mixture_horizon=int(cov_s.get("mixture_horizon", 1)),
        enum_eps=enum_s.get("eps", "vmax"),
        enum_horizon=int(enum_s.get("horizon", 0)),
        enum_cap=int(enum_s.get("cap", 200_000)),
        n_distractors=int(cls_s.get("n_distractors", 7)),
        noise_scale=float(cls_s.get("noise_scale", 0.25)),
        class_seed=int(cls_s.get("seed", 0)),
        n_grid=tuple(int(n) for n in _as_list(sweep_s.get("n_grid", [10_000]), "sweep.n_grid")),
        seeds=_seed_tuple(sweep_s.get("seeds", [0])),
        delta=float(sweep_s.get("delta", 0.1)),
        adversarial_tie_break=bool(raw.get("adversarial_tie_break", False)),
    )
    if cfg.mdp_kind not in ("random", "counterexample", "file"):
        raise ConfigError(f"mdp.kind must be random, counterexample, or file, got {cfg.mdp_kind!r}")
    if cfg.mdp_kind == "file":
        if not cfg.mdp_file:
            raise ConfigError("mdp.kind is 'file' but mdp.file is missing")
        if not Path(cfg.mdp_file).exists():
            raise ConfigError(f"mdp.file does not exist: {cfg.mdp_file}")
    if not (0.0 < cfg.gamma < 1.0):
        raise ConfigError(f"mdp.gamma must lie in (0, 1), got {cfg.gamma}")
    if cfg.covering not in ("uniform", "data", "mixture", "explicit"):
        raise ConfigError(f"covering.kind must be uniform, data, mixture, or explicit, got {cfg.covering!r}")
    if cfg.covering == "explicit" and cfg.covering_mu is None:
        raise ConfigError("covering.kind is 'explicit' but covering.mu is missing")
    if not (0.0 < cfg.delta < 1.0):
        raise ConfigError(f"sweep.delta must lie in (0, 1), got {cfg.delta}")
    if not cfg.seeds:
        raise ConfigError("sweep.seeds must be a nonempty list")
    if not cfg.n_grid or any(n <= 0 for n in cfg.n_grid):
        raise ConfigError("sweep.n_grid must be a nonempty list of positive sizes")
    if cfg.n_distractors < 0:
        raise ConfigError(f"classes.n_distractors must be >= 0, got {cfg.n_distractors}")
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file does not exist: {path}")
    raw = yaml.safe_load(p.read_text())
    return config_from_dict(raw if raw is not None else {})


# ---------------------------------------------------------------------------
# setup assembly


@dataclass(frozen=True, eq=False)
class ExperimentSetup:
    config: ExperimentConfig
    mdp: TabularMDP
    mu_data: StateDistribution
    pi_b: Policy
    d_data: SADistribution
    mu_c: StateDistribution
    pi_c: Policy
    d_c: SADistribution
    q_class: FiniteFunctionClass
    w_class: FiniteFunctionClass
    b_class: FiniteFunctionClass
    c_c: float
    c_d: float
    j_star: float
    q_star: np.ndarray
    pi_star: Policy


def _dist_from(spec, n: int, what: str) -> np.ndarray:
    if isinstance(spec, str):
        if spec == "uniform":
            return np.full(n, 1.0 / n)
        raise ConfigError(f"{what}: unknown distribution spec {spec!r}")
    arr = np.asarray(spec, dtype=np.float64)
    if arr.shape != (n,):
        raise ConfigError(f"{what}: expected {n} weights, got shape {arr.shape}")
    return arr


def _policy_from(spec, S: int, A: int, what: str) -> Policy:
    if isinstance(spec, str):
        if spec == "uniform":
            return Policy(np.full((S, A), 1.0 / A))
        raise ConfigError(f"{what}: unknown policy spec {spec!r}")
    arr = np.asarray(spec, dtype=np.float64)
    if arr.shape != (S, A):
        raise ConfigError(f"{what}: expected an {S} x {A} table, got shape {arr.shape}")
    return Policy(arr)


def build_config_mdp(cfg: ExperimentConfig) -> TabularMDP:
    if cfg.mdp_kind == "counterexample":
        return build_counterexample(cfg.gamma)
    if cfg.mdp_kind == "file":
        return load_mdp(cfg.mdp_file)
    return random_mdp(cfg.n_states, cfg.n_actions, cfg.mdp_seed,
                      cfg.reward_sparsity, cfg.gamma)


def _adversarial_b_class(mdp: TabularMDP, b_class: FiniteFunctionClass,
                         pi_c: Policy) -> FiniteFunctionClass:
    # ratio member realizing the misleading policy; placed first so the
    # lowest-index tie-break selects it whenever scores tie exactly
    misleading = counterexample_misleading_policy()
    beta_adv = optimal_policy_ratio(misleading, pi_c)
    members = (beta_adv,) + b_class.members
    return FiniteFunctionClass(members, "B", max(b_class.bound, float(beta_adv.max())))


def build_setup(cfg: ExperimentConfig) -> ExperimentSetup:
    """Everything an experiment needs that does not depend on the dataset
    seed: the model, the distributions, the classes, and the coefficients."""
    mdp = build_config_mdp(cfg)
    S, A = mdp.n_states, mdp.n_actions
    mu_data = StateDistribution(_dist_from(cfg.mu_data, S, "data.mu"))
    pi_b = _policy_from(cfg.pi_b, S, A, "data.pi_b")
    d_data = compose(mu_data, pi_b)

    if cfg.covering == "uniform":
        mu_c = StateDistribution(np.full(S, 1.0 / S))
        pi_c = Policy(np.full((S, A), 1.0 / A))
        d_c = compose(mu_c, pi_c)
    elif cfg.covering == "data":
        mu_c, pi_c, d_c = mu_data, pi_b, d_data
    elif cfg.covering == "explicit":
        mu_c = StateDistribution(_dist_from(cfg.covering_mu, S, "covering.mu"))
        pi_c = (_policy_from(cfg.covering_pi, S, A, "covering.pi")
                if cfg.covering_pi is not None else Policy(np.full((S, A), 1.0 / A)))
        d_c = compose(mu_c, pi_c)
    else:
        pols = near_optimal_policies(mdp, cfg.mixture_eps, cfg.mixture_horizon,
                                     cfg.enum_cap)
        d_c = mixture_covering(mdp, pols)
        mu_c = state_marginal(d_c)
        pi_c = conditional_policy(d_c)

    q_class, w_class, b_class = build_realizable_classes(
        mdp, d_c, d_data, pi_c, cfg.n_distractors, cfg.class_seed, cfg.noise_scale)
    if cfg.mdp_kind == "counterexample":
        b_class = _adversarial_b_class(mdp, b_class, pi_c)
        if not cfg.adversarial_tie_break:
            members = (b_class.members[1], b_class.members[0]) + b_class.members[2:]
            b_class = FiniteFunctionClass(members, "B", b_class.bound)

    enum_eps = mdp.v_max if cfg.enum_eps == "vmax" else float(cfg.enum_eps)
    c_c = covering_concentrability(mdp, mu_c, enum_eps, cfg.enum_horizon,
                                   cfg.enum_cap).coefficient
    c_d = data_concentrability(mdp, d_c, d_data).coefficient
    qstar, pistar = optimal_q(mdp)
    j_star = expected_return(mdp, pistar)
    return ExperimentSetup(cfg, mdp, mu_data, pi_b, d_data, mu_c, pi_c, d_c,
                           q_class, w_class, b_class, c_c, c_d, j_star,
                           qstar.values, pistar)


# ---------------------------------------------------------------------------
# sweep runner


@dataclass(frozen=True)
class ExperimentRow:
    seed: int
    n: int
    j_star: float
    j_hat: float
    gap: float
    bound: float
    q_err: float
    q_err_bound: float
    c_c: float
    c_d: float
    fit_ok: bool
    extract_ok: bool
    gap_ok: bool
    cover_ok: object  # True / False / None when c_d is infinite
    error: str = ""


_CSV_FIELDS = ["seed", "n", "j_star", "j_hat", "gap", "bound", "q_err",
               "q_err_bound", "c_c", "c_d", "fit_ok", "extract_ok", "gap_ok",
               "cover_ok", "error"]


def _flag(x) -> str:
    if x is None:
        return "na"
    return "1" if x else "0"


def _row_to_csv(row: ExperimentRow) -> list:
    return [
        str(row.seed), str(row.n),
        fmt_float(row.j_star), fmt_float(row.j_hat), fmt_float(row.gap),
        fmt_float(row.bound), fmt_float(row.q_err), fmt_float(row.q_err_bound),
        fmt_float(row.c_c), fmt_float(row.c_d),
        _flag(row.fit_ok), _flag(row.extract_ok), _flag(row.gap_ok), _flag(row.cover_ok),
        row.error,
    ]


def _row_from_csv(rec: dict) -> ExperimentRow:
    def flag(v):
        return None if v == "na" else v == "1"
    return ExperimentRow(
        int(rec["seed"]), int(rec["n"]),
        float(rec["j_star"]), float(rec["j_hat"]), float(rec["gap"]),
        float(rec["bound"]), float(rec["q_err"]), float(rec["q_err_bound"]),
        float(rec["c_c"]), float(rec["c_d"]),
        flag(rec["fit_ok"]), flag(rec["extract_ok"]), flag(rec["gap_ok"]),
        flag(rec["cover_ok"]), rec.get("error", ""),
    )


def _compute_row(setup: ExperimentSetup, seed: int, n: int) -> ExperimentRow:
    cfg = setup.config
    mdp = setup.mdp
    ds = sample_dataset(mdp, setup.mu_data, setup.pi_b, n, seed)
    report = run_solver(ds, mdp, setup.d_c, setup.mu_c, setup.pi_c,
                        setup.q_class, setup.w_class, setup.b_class,
                        cfg.delta, c_c=setup.c_c)
    j_hat = expected_return(mdp, report.pi_hat)
    gap = setup.j_star - j_hat
    q_err = weighted_l2(setup.d_c, report.q_hat - setup.q_star)
    q_err_bound = 2.0 * math.sqrt(report.eps_stat)
    adv_lhs = float(setup.mu_c.weights @ (
        np.einsum("sa,sa->s", setup.q_star, setup.pi_star.probs)
        - np.einsum("sa,sa->s", setup.q_star, report.pi_hat.probs)))
    adv_rhs = 2.0 * setup.b_class.bound * float(
        np.sum(setup.d_c.weights * np.abs(report.q_hat - setup.q_star)))
    cover_ok = None
    if math.isfinite(setup.c_d):
        cover_ok = sup_ratio(setup.d_c, setup.d_data) <= setup.c_d / (1.0 - mdp.gamma) + SLACK
    return ExperimentRow(
        seed=seed, n=n, j_star=setup.j_star, j_hat=j_hat, gap=gap,
        bound=report.bound, q_err=q_err, q_err_bound=q_err_bound,
        c_c=setup.c_c, c_d=setup.c_d,
        fit_ok=q_err <= q_err_bound + SLACK,
        extract_ok=adv_lhs <= adv_rhs + SLACK,
        gap_ok=gap <= report.bound + SLACK,
        cover_ok=cover_ok,
    )


def run_experiment(cfg: ExperimentConfig, out_dir) -> list:
    """Run the sweep, appending one CSV row per (seed, n) as it completes.

    Pairs already present in rows.csv are skipped, so an interrupted run can
    be resumed by running again with the same config and output directory.
    Rows whose computation fails (unrealizable classes, enumeration caps)
    carry the error message instead of metrics; the CLI turns their presence
    into a nonzero exit code.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows_path = out / "rows.csv"
    existing = {}
    if rows_path.exists():
        with open(rows_path, newline="") as fh:
            for rec in csv.DictReader(fh):
                row = _row_from_csv(rec)
                existing[(row.seed, row.n)] = row
    fresh_file = not rows_path.exists()

    setup = None
    setup_error = None
    try:
        setup = build_setup(cfg)
    except (UnrealizableError, EnumerationCapError) as exc:
        setup_error = f"{type(exc).__name__}: {exc}"

    rows = []
    with open(rows_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh_file:
            writer.writerow(_CSV_FIELDS)
            fh.flush()
        for n in cfg.n_grid:
            for seed in cfg.seeds:
                if (seed, n) in existing:
                    rows.append(existing[(seed, n)])
                    continue
                if setup_error is not None:
                    row = ExperimentRow(seed, n, math.nan, math.nan, math.nan,
                                        math.nan, math.nan, math.nan, math.nan,
                                        math.nan, None, None, None, None,
                                        error=setup_error)
                else:
                    try:
                        row = _compute_row(setup, seed, n)
                    except (UnrealizableError, EnumerationCapError,
                            np.linalg.LinAlgError) as exc:
                        row = ExperimentRow(seed, n, math.nan, math.nan, math.nan,
                                            math.nan, math.nan, math.nan, math.nan,
                                            math.nan, None, None, None, None,
                                            error=f"{type(exc).__name__}: {exc}")
                writer.writerow(_row_to_csv(row))
                fh.flush()
                rows.append(row)

    _write_summary(out / "summary.txt", cfg, rows)
    return rows


def _rate(flags) -> str:
    known = [f for f in flags if f is not None]
    if not known:
        return "n/a"
    return f"{sum(known)}/{len(known)}"


def _write_summary(path, cfg: ExperimentConfig, rows):
    failed = [r for r in rows if r.error]
    clean = [r for r in rows if not r.error]
    lines = [
        f"rows: {len(rows)} ({len(failed)} failed)",
        f"mdp: {cfg.mdp_kind} gamma={cfg.gamma}",
        f"fit error within bound: {_rate([r.fit_ok for r in clean])}",
        f"extraction inequality: {_rate([r.extract_ok for r in clean])}",
        f"suboptimality within bound: {_rate([r.gap_ok for r in clean])}",
        f"covering ratio within bound: {_rate([r.cover_ok for r in clean])}",
    ]
    if clean:
        lines.append(f"c_c: {fmt_float(clean[0].c_c)}  c_d: {fmt_float(clean[0].c_d)}")
    if failed:
        lines.append(f"first failure: {failed[0].error}")
    Path(path).write_text("\n".join(lines) + "\n")
