"""File formats for option parameters, recovery outputs and learning curves."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .experts import CarOptionConfig, car_option_select
from .mdp import Box, DeterministicOptionPolicy, Discrete, OptionSet, OptionSpec, TabularOptionPolicy, as_array
from .policies import BoltzmannTabularPolicy, load_params, save_params


class ArtifactError(ValueError):
    pass


def _f(x) -> str:
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# option sets


def save_option_set(out_dir, opts: OptionSet, option_cfg: CarOptionConfig | None = None) -> list[Path]:
    """One parameter CSV per option policy and termination, plus the policy over options."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for w, o in enumerate(opts.options):
        for part, obj in (("policy", o.policy), ("termination", o.termination)):
            p = out_dir / f"option{w}_{part}.csv"
            save_params(p, obj)
            paths.append(p)
    p = out_dir / "pi_omega.csv"
    po = opts.policy_over_options
    with open(p, "w", encoding="utf-8") as f:
        if isinstance(po, TabularOptionPolicy):
            f.write(f"#family=tabular;n_options={po.n_options}\n")
            f.write("state," + ",".join(f"option{w}" for w in range(po.n_options)) + "\n")
            for s, row in enumerate(po.table):
                f.write(f"{s}," + ",".join(_f(x) for x in row) + "\n")
        elif option_cfg is not None:
            f.write(f"#family=car_subgoal;n_options={po.n_options};subgoal_p={option_cfg.subgoal_p!r};"
                    f"subgoal_v={option_cfg.subgoal_v!r}\n")
        else:
            raise ArtifactError("deterministic policy over options needs its subgoal config to be saved")
    paths.append(p)
    return paths


def load_option_set(in_dir) -> tuple[OptionSet, CarOptionConfig | None]:
    in_dir = Path(in_dir)
    pfile = in_dir / "pi_omega.csv"
    if not pfile.exists():
        raise ArtifactError(f"{pfile} not found")
    with open(pfile, encoding="utf-8") as f:
        head = f.readline().strip()
        if not head.startswith("#"):
            raise ArtifactError(f"{pfile}: missing header")
        meta = dict(kv.split("=", 1) for kv in head[1:].split(";"))
        rest = f.read()
    n = int(meta["n_options"])
    options = []
    for w in range(n):
        try:
            pol = load_params(in_dir / f"option{w}_policy.csv")
            term = load_params(in_dir / f"option{w}_termination.csv")
        except FileNotFoundError as exc:
            raise ArtifactError(f"missing parameter file: {exc.filename}") from None
        options.append(OptionSpec(pol, term))
    option_cfg = None
    if meta["family"] == "tabular":
        rows = [line.split(",") for line in rest.splitlines()[1:] if line.strip()]
        table = np.array([[float(x) for x in r[1:]] for r in rows])
        po = TabularOptionPolicy(table)
        pol0 = options[0].policy
        space = (Discrete(pol0.n_states), Discrete(pol0.n_actions)) if isinstance(pol0, BoltzmannTabularPolicy) \
            else (None, None)
    elif meta["family"] == "car_subgoal":
        option_cfg = CarOptionConfig(subgoal_p=float(meta["subgoal_p"]), subgoal_v=float(meta["subgoal_v"]))
        po = DeterministicOptionPolicy(car_option_select(option_cfg), n)
        pol0 = options[0].policy
        lo = pol0.features.centers.min(axis=0)
        hi = pol0.features.centers.max(axis=0)
        space = (Box(tuple(lo), tuple(hi)), Box((pol0.action_low,), (pol0.action_high,)))
    else:
        raise ArtifactError(f"{pfile}: unknown family {meta['family']!r}")
    return OptionSet(options, po, *space), option_cfg


# ---------------------------------------------------------------------------
# recovery outputs


def _key_cells(x) -> list[str]:
    return [_f(v) for v in as_array(x)]


def write_features(path, vi, bank) -> None:
    p = bank.phi.shape[1]
    ds = len(as_array(vi.triple_state[0]))
    da = len(as_array(vi.triple_action[0]))
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join([f"s{i}" for i in range(ds)] + ["option"] + [f"a{i}" for i in range(da)]
                         + [f"phi{i}" for i in range(p)] + [f"psi{i}" for i in range(p)]) + "\n")
        for m in range(vi.M):
            cells = _key_cells(vi.triple_state[m]) + [str(int(vi.triple_option[m]))] + _key_cells(vi.triple_action[m])
            cells += [_f(x) for x in bank.phi[m]] + [_f(x) for x in bank.psi[m]]
            f.write(",".join(cells) + "\n")


def write_hessian_report(path, rep) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("feature,class_theta,class_vartheta,tr_theta,tr_vartheta,kept,sign,"
                "min_eig_theta,max_eig_theta,min_eig_vartheta,max_eig_vartheta\n")
        for i in range(rep.p):
            et, ev = rep.eig_theta[i], rep.eig_vartheta[i]
            ext = [(_f(e.min()), _f(e.max())) if e.size else ("0", "0") for e in (et, ev)]
            f.write(",".join([str(i), rep.class_theta[i], rep.class_vartheta[i],
                              _f(rep.sign[i] * rep.tr_theta_all[i]), _f(rep.sign[i] * rep.tr_vartheta_all[i]),
                              str(int(rep.kept[i])), str(int(rep.sign[i])), *ext[0], *ext[1]]) + "\n")


def write_reward(path, reward) -> None:
    vi = reward.vi
    ds = len(as_array(vi.triple_state[0]))
    da = len(as_array(vi.triple_action[0]))
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join([f"s{i}" for i in range(ds)] + ["option"] + [f"a{i}" for i in range(da)] + ["value"]) + "\n")
        for m in range(vi.M):
            cells = _key_cells(vi.triple_state[m]) + [str(int(vi.triple_option[m]))] + _key_cells(vi.triple_action[m])
            f.write(",".join(cells + [_f(reward.values[m])]) + "\n")


def read_reward(path):
    """``(states [M, ds], options [M], actions [M, da], values [M])`` from a reward CSV."""
    with open(path, encoding="utf-8") as f:
        cols = f.readline().strip().split(",")
        rows = [line.strip().split(",") for line in f if line.strip()]
    if "option" not in cols or cols[-1] != "value":
        raise ArtifactError(f"{path}: not a reward file")
    data = np.array(rows, float).reshape(-1, len(cols))
    k = cols.index("option")
    return data[:, :k], data[:, k].astype(int), data[:, k + 1:-1], data[:, -1]


def tabular_reward_from_file(path, n_states, n_actions, n_options, fill="mean") -> np.ndarray:
    S, W, A, v = read_reward(path)
    base = float(np.mean(v)) if fill == "mean" else 0.0
    R = np.full((n_options, n_states, n_actions), base)
    R[W, S[:, 0].astype(int), A[:, 0].astype(int)] = v
    return R


# ---------------------------------------------------------------------------
# curves


def write_curves(path, curves, label="episode") -> None:
    """Per-run rows ``run,<label>,return`` followed by aggregate rows with ``run=mean``."""
    curves = np.atleast_2d(np.asarray(curves, float))
    n = curves.shape[0]
    mean = curves.mean(axis=0)
    se = curves.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(curves.shape[1])
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"run,{label},mean_return,stderr\n")
        for r in range(n):
            for t, v in enumerate(curves[r]):
                f.write(f"{r},{t},{_f(v)},\n")
        for t in range(curves.shape[1]):
            f.write(f"mean,{t},{_f(mean[t])},{_f(se[t])}\n")


def read_curves(path):
    """``(per_run [runs, T], mean [T], stderr [T], label)``."""
    with open(path, encoding="utf-8") as f:
        head = f.readline().strip().split(",")
        rows = [line.rstrip("\n").split(",") for line in f if line.strip()]
    if len(head) != 4 or head[0] != "run":
        raise ArtifactError(f"{path}: not a curve file")
    runs = {}
    mean, se = {}, {}
    for r, t, v, e in rows:
        if r == "mean":
            mean[int(t)] = float(v)
            se[int(t)] = float(e)
        else:
            runs.setdefault(int(r), {})[int(t)] = float(v)
    T = len(mean)
    per_run = np.array([[runs[r][t] for t in range(T)] for r in sorted(runs)])
    return per_run, np.array([mean[t] for t in range(T)]), np.array([se[t] for t in range(T)]), head[1]
