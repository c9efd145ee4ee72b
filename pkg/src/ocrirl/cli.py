"""Command-line entry point: ``ocrirl <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import artifacts, experiments
from .baselines import SoftValueError, load_state_reward, maxent_irl, save_state_reward
from .config import Config, ConfigError, load_config, write_manifest
from .envs import CarOnHillEnv, FourRoomsEnv
from .experts import CarOptionConfig, ConvergenceError, FitConfig, FitError, OptionCriticConfig, rollout_expert
from .extend import ExtendError, default_bandwidths, knn_models_from_recovery, load_knn, merge_tabular, save_knn
from .irl import IrlConfig, IrlError, recover
from .learners import FqiConfig, RegressorError, SarsaConfig
from .mdp import DemoParseError, TrajectoryError, read_demos, write_demos
from .policies import DomainError, SaturationError

log = logging.getLogger("ocrirl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# config -> typed settings


def _domain(cfg: Config) -> str:
    return cfg.get("run", "domain")


def _env(cfg: Config):
    if _domain(cfg) == "fourrooms":
        f = cfg["fourrooms"]
        kw = {"slip_prob": f["slip_prob"], "gamma": f["gamma"]}
        if f["goal"] >= 0:
            kw["goal"] = f["goal"]
        return FourRoomsEnv(**kw)
    c = cfg["car_env"]
    return CarOnHillEnv(gamma=c["gamma"], integration_dt=c["dt"], decision_dt=c["decision_dt"])


def _n_demos(cfg):
    n = cfg.get("expert", "n_demos")
    return n if n > 0 else (50 if _domain(cfg) == "fourrooms" else 20)


def _horizon(cfg):
    h = cfg.get("expert", "horizon")
    return h if h > 0 else (500 if _domain(cfg) == "fourrooms" else 100)


def option_critic_config(cfg: Config) -> OptionCriticConfig:
    return OptionCriticConfig(**cfg["option_critic"], seed=cfg.get("run", "seed"))


def car_option_config(cfg: Config) -> CarOptionConfig:
    c = dict(cfg["car"])
    c["actions"] = tuple(cfg.floats("car", "actions"))
    return CarOptionConfig(**c, horizon=_horizon(cfg), seed=cfg.get("run", "seed"))


def fit_config(cfg: Config) -> FitConfig:
    c = dict(cfg["fit"])
    c["delta"] = cfg.optional_float("fit", "delta")
    return FitConfig(**c)


def irl_config(cfg: Config) -> IrlConfig:
    c = dict(cfg["irl"])
    c["resolution"] = cfg.optional_float("irl", "resolution")
    return IrlConfig(**c)


def sarsa_config(cfg: Config) -> SarsaConfig:
    return SarsaConfig(**cfg["sarsa"], seed=cfg.get("run", "seed"))


def fqi_config(cfg: Config) -> FqiConfig:
    return FqiConfig(**cfg["fqi"], seed=cfg.get("run", "seed"))


# ---------------------------------------------------------------------------
# commands


def cmd_expert(args, cfg: Config) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.get("run", "seed")
    env = _env(cfg)
    option_cfg = None
    if _domain(cfg) == "fourrooms":
        eps = cfg.get("expert", "epsilon")
        ex = experiments.fourrooms_expert(option_critic_config(cfg), _n_demos(cfg), _horizon(cfg), seed, env)
        demos = ex.demos if eps == 0 else \
            rollout_expert(env, ex.opts, eps, _n_demos(cfg), seed, _horizon(cfg))
        opts = ex.opts
    else:
        option_cfg = car_option_config(cfg)
        ex = experiments.car_expert(option_cfg, env)
        demos = experiments.car_demos(ex, cfg.get("expert", "epsilon"), _n_demos(cfg), seed, _horizon(cfg))
        opts = experiments.car_fit(demos, ex, fit_config(cfg))
    demo_path = out / "demos.csv"
    write_demos(demo_path, demos)
    outputs = [demo_path] + artifacts.save_option_set(out / "params", opts, option_cfg)
    write_manifest(out, "expert", cfg, outputs=outputs,
                   extra={"epsilon": cfg.get("expert", "epsilon"), "n_demos": len(demos)})
    print(f"demos,{len(demos)}")
    print(f"steps,{sum(len(d) for d in demos)}")
    return EXIT_OK


def _bandwidths(cfg: Config, env):
    ds, da = default_bandwidths(env.state_low, env.state_high, [env.a_bounds[0]], [env.a_bounds[1]])
    return (cfg.optional_float("extend", "sigma_s") or ds, cfg.optional_float("extend", "sigma_a") or da)


def cmd_recover(args, cfg: Config) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    demos = read_demos(args.demos)
    opts, _ = artifacts.load_option_set(args.params)
    env = _env(cfg)
    outputs = []
    try:
        rec = recover(demos, opts, env.gamma, irl_config(cfg))
    except IrlError as exc:
        part = exc.partial
        if "features" in part:
            artifacts.write_features(out / "features.csv", part["vi"], part["features"])
            outputs.append(out / "features.csv")
        if "hessians" in part:
            artifacts.write_hessian_report(out / "hessian_report.csv", part["hessians"])
            outputs.append(out / "hessian_report.csv")
        write_manifest(out, "recover", cfg, inputs=[args.demos], outputs=outputs, extra={"error": str(exc)})
        raise
    artifacts.write_features(out / "features.csv", rec.vi, rec.features)
    artifacts.write_hessian_report(out / "hessian_report.csv", rec.hessians)
    artifacts.write_reward(out / "reward.csv", rec.reward)
    outputs += [out / "features.csv", out / "hessian_report.csv", out / "reward.csv"]
    if _domain(cfg) == "car":
        ss, sa = _bandwidths(cfg, env)
        for w, model in knn_models_from_recovery(rec.reward, opts.n_options, cfg.get("extend", "k"), ss, sa).items():
            p = out / f"knn_option{w}.csv"
            save_knn(p, model)
            outputs.append(p)
    write_manifest(out, "recover", cfg, inputs=[args.demos], outputs=outputs)
    print(f"triples,{rec.vi.M}")
    print(f"pairs,{rec.vi.L}")
    print(f"p,{rec.features.phi.shape[1]}")
    print(f"p_kept,{rec.reward.kept.size}")
    print(f"nullspace_residual,{rec.features.residual():.3e}")
    return EXIT_OK


def _fourrooms_reward(path, params, cfg: Config, env):
    """Flat ``R[s, a]`` from a recover output directory or a MaxEnt state-reward CSV."""
    path = Path(path)
    if path.is_dir():
        opts, _ = artifacts.load_option_set(params)
        R_opt = artifacts.tabular_reward_from_file(path / "reward.csv", env.n_states, env.n_actions,
                                                   opts.n_options, cfg.get("extend", "tabular_fill"))
        return merge_tabular(R_opt, opts.policy_over_options.table)
    r = load_state_reward(path)
    return np.repeat(r[:, None], env.n_actions, axis=1)


def _car_reward(path, params):
    path = Path(path)
    _, option_cfg = artifacts.load_option_set(params)
    models = {}
    for p in sorted(path.glob("knn_option*.csv")):
        models[int(p.stem.replace("knn_option", ""))] = load_knn(p)
    if not models:
        raise ExtendError(f"no KNN reward models in {path}")
    return experiments.CarRecoveredReward(models, option_cfg)


def cmd_evaluate(args, cfg: Config) -> int:
    env = _env(cfg)
    reps, seed, jobs = cfg.get("eval", "repetitions"), cfg.get("run", "seed"), cfg.get("eval", "jobs")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    inputs = []
    if _domain(cfg) == "fourrooms":
        if args.reward:
            reward = experiments.TabularReward(_fourrooms_reward(args.reward, args.params, cfg, env))
        else:
            reward = experiments.DefaultFourRoomsReward(env.goal)
        curves = experiments.sarsa_repetitions(env, reward, sarsa_config(cfg), reps, seed, jobs)
        label = "episode"
    else:
        reward = _car_reward(args.reward, args.params) if args.reward else experiments.car_default_reward
        curves, _ = experiments.fqi_repetitions(env, reward, fqi_config(cfg), reps, seed, jobs)
        label = "iteration"
    artifacts.write_curves(out, curves, label)
    write_manifest(out.parent, "evaluate", cfg, inputs=inputs, outputs=[out])
    mean = curves.mean(axis=0)
    print(f"final_mean_return,{mean[-1]:.6g}")
    return EXIT_OK


def cmd_transfer(args, cfg: Config) -> int:
    env = _env(cfg)
    if _domain(cfg) != "fourrooms":
        raise ConfigError("transfer is defined for the fourrooms domain only")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    R = _fourrooms_reward(args.reward, args.params, cfg, env)
    reps, seed, jobs = cfg.get("eval", "repetitions"), cfg.get("run", "seed"), cfg.get("eval", "jobs")
    outputs = []
    for alpha in cfg.floats("transfer", "alphas"):
        curves = experiments.transfer_repetitions(env, R, alpha, sarsa_config(cfg), reps, seed, jobs)
        p = out / f"curve_alpha{alpha:g}.csv"
        artifacts.write_curves(p, curves, "episode")
        outputs.append(p)
        print(f"alpha,{alpha:g},last50_mean,{curves[:, -50:].mean():.6g}")
    write_manifest(out, "transfer", cfg, outputs=outputs)
    return EXIT_OK


def cmd_baseline(args, cfg: Config) -> int:
    env = _env(cfg)
    if _domain(cfg) != "fourrooms":
        raise ConfigError("the MaxEnt baseline is defined for the fourrooms domain only")
    demos = read_demos(args.demos)
    m = cfg["maxent"]
    res = maxent_irl(demos, env.transition_matrix(), env.gamma, [env.goal], m["lr"], m["iters"], m["horizon"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_state_reward(out, res.reward)
    write_manifest(out.parent, "baseline", cfg, inputs=[args.demos], outputs=[out])
    print(f"final_grad_norm,{res.grad_norms[-1]:.3e}")
    return EXIT_OK


def cmd_report(args, cfg: Config | None) -> int:
    from .report import aggregate, render_figures

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = aggregate(args.curves)
    table_path = out / "summary.csv"
    table.write(table_path)
    outputs = [table_path]
    if args.figures:
        outputs += render_figures(table, out)
    for p in outputs:
        print(f"wrote,{p}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ocrirl", description="Option-compatible reward IRL experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="INI config or a manifest.json to rerun")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--jobs", type=int, help="override eval.jobs")

    p = sub.add_parser("expert", help="train/construct the expert and write demonstrations")
    common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("recover", help="recover option-wise rewards from demonstrations")
    common(p)
    p.add_argument("--demos", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="learning curves of a forward learner on a reward")
    common(p)
    p.add_argument("--reward", help="recover output dir or MaxEnt reward CSV; default reward if omitted")
    p.add_argument("--params", help="expert parameter dir (needed with --reward dir)")
    p.add_argument("--out", required=True, help="curve CSV path")

    p = sub.add_parser("transfer", help="random-goal transfer curves for each alpha")
    common(p)
    p.add_argument("--reward", required=True)
    p.add_argument("--params")
    p.add_argument("--out", required=True)

    p = sub.add_parser("baseline", help="MaxEnt IRL state reward")
    common(p)
    p.add_argument("--demos", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="aggregate curve CSVs into plot-ready CSV (and optional PNGs)")
    p.add_argument("curves", nargs="+", help="curve CSV files")
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action="store_true", help="also render PNG figures with matplotlib")
    return ap


COMMANDS = {"expert": cmd_expert, "recover": cmd_recover, "evaluate": cmd_evaluate,
            "transfer": cmd_transfer, "baseline": cmd_baseline, "report": cmd_report}

DATA_ERRORS = (DemoParseError, TrajectoryError, artifacts.ArtifactError, ExtendError, FitError,
               DomainError, FileNotFoundError)
NUMERIC_ERRORS = (IrlError, FloatingPointError, SaturationError, RegressorError, ConvergenceError,
                  SoftValueError, np.linalg.LinAlgError)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = None
        if args.command != "report":
            overrides = list(args.set)
            if args.seed is not None:
                overrides.append(f"run.seed={args.seed}")
            if args.jobs is not None:
                overrides.append(f"eval.jobs={args.jobs}")
            cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
