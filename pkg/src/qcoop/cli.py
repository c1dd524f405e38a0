"""Experiment harness: configs, the training loop, seed sweeps, summaries.

Subcommands:

* ``run``       one configuration across its seeds, CSV + checkpoints per seed
* ``sweep``     Cartesian product over ``--grid`` axes, one run per point
* ``summarize`` aggregate finished runs into a table plus training-curve figures
* ``eval``      greedy final-policy evaluation of saved checkpoints

Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 partial
sweep failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import itertools
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, agent as agent_mod, comms, envs, metrics, qnet
from .errors import ConfigError, InputError

_RNG_ROLES = {"env": 0, "agent0": 1, "agent1": 2, "protocol": 3}

HARVEST_PROTOCOLS = ("harvest_iql", "harvest_classical")


@dataclass
class ExperimentConfig:
    """Resolved experiment parameters; ``resolve()`` fills env-dependent defaults."""

    env: str = "ipd"
    protocol: str = "baseline"
    episodes: int | None = None
    steps_per_episode: int | None = None
    seeds: tuple[int, ...] | None = None
    n_layers: int | None = None
    alpha: float = 0.001
    alpha_w: float = 0.1
    gamma: float | None = None
    buffer_capacity: int | None = None
    batch_size: int | None = None
    minibatches: int | None = None
    eps_kind: str | None = None
    eps_initial: float | None = None
    eps_final: float | None = None
    mate_x: float = 1.0
    mate_y: float = 1.0
    mediate_alpha: float = 0.1
    mediate_epoch: int = 5
    mediate_init_token: float = 0.1
    mediate_up_on_drop: bool = True
    normalized_state_value: bool = False
    gift_amount: float = 1.0
    gift_budget: float = 10.0
    payoffs: list | None = None
    hidden_sizes: tuple[int, ...] = (64, 64)
    map_file: str | None = None
    trace: bool = False
    workers: int = 1

    def resolve(self) -> "ExperimentConfig":
        cfg = dataclasses.replace(self)
        if cfg.env not in envs.MATRIX_ENVS and cfg.env != "harvest":
            raise ConfigError(f"unknown environment {cfg.env!r}")
        is_matrix = cfg.env in envs.MATRIX_ENVS
        if is_matrix and cfg.protocol not in qnet.MATRIX_PROTOCOLS:
            raise ConfigError(f"protocol {cfg.protocol!r} is not a matrix-game protocol")
        if not is_matrix and cfg.protocol not in HARVEST_PROTOCOLS:
            raise ConfigError(f"protocol {cfg.protocol!r} does not run in the harvest game")
        defaults = {
            True: dict(episodes=2000, steps_per_episode=50, gamma=0.9, buffer_capacity=50,
                       batch_size=5, minibatches=5, eps_kind="linear", eps_initial=0.3,
                       eps_final=0.0, n_layers=4, seeds=tuple(range(15))),
            False: dict(episodes=1000, steps_per_episode=250, gamma=0.99, buffer_capacity=2500,
                        batch_size=100, minibatches=1, eps_kind="exponential", eps_initial=1.0,
                        eps_final=0.02, n_layers=1, seeds=(0, 1, 2)),
        }[is_matrix]
        for name, value in defaults.items():
            if getattr(cfg, name) is None:
                cfg = dataclasses.replace(cfg, **{name: value})
        cfg = dataclasses.replace(cfg, seeds=tuple(int(s) for s in cfg.seeds))
        if is_matrix:
            envs.PayoffMatrix.from_table(cfg.env, cfg.payoffs or envs.DEFAULT_PAYOFFS[cfg.env])
        if cfg.episodes <= 0 or cfg.steps_per_episode <= 0:
            raise ConfigError("episodes and steps_per_episode must be positive")
        if cfg.workers < 1:
            raise ConfigError("workers must be >= 1")
        return cfg

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["seeds"] = list(self.seeds) if self.seeds is not None else None
        out["hidden_sizes"] = list(self.hidden_sizes)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if data.get("seeds") is not None:
            data["seeds"] = tuple(data["seeds"])
        if data.get("hidden_sizes") is not None:
            data["hidden_sizes"] = tuple(data["hidden_sizes"])
        return cls(**data)


def _rng(seed: int, role: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, _RNG_ROLES[role])))


def _make_network(cfg: ExperimentConfig, rng: np.random.Generator):
    if cfg.protocol == "harvest_classical":
        return qnet.build_classical_baseline(rng, hidden=cfg.hidden_sizes)
    kwargs = {}
    if cfg.protocol == "gifting_budget":
        kwargs["budget_max"] = cfg.gift_budget
    return qnet.build_layout(cfg.protocol, rng, n_layers=cfg.n_layers, **kwargs)


def _make_protocol(cfg: ExperimentConfig, trace):
    p = cfg.protocol
    if p in ("mate_rew", "mate_td"):
        return comms.MateProtocol(
            p.split("_")[1], cfg.mate_x, cfg.mate_y, cfg.gamma,
            normalized_value=cfg.normalized_state_value, trace=trace,
        )
    if p in comms.MEDIATE_VARIANTS:
        return comms.MediateProtocol(
            p, gamma=cfg.gamma, token_alpha=cfg.mediate_alpha, epoch_length=cfg.mediate_epoch,
            init_token=cfg.mediate_init_token, up_on_drop=cfg.mediate_up_on_drop,
            normalized_value=cfg.normalized_state_value, trace=trace,
        )
    if p in ("gifting_zerosum", "gifting_budget"):
        return comms.GiftingProtocol(p.split("_")[1], cfg.gift_amount, cfg.gift_budget, trace=trace)
    if p == "rial":
        return comms.RialProtocol()
    return comms.NoProtocol()


def _assemble_obs(cfg: ExperimentConfig, idx: int, pair: np.ndarray, protocol) -> np.ndarray:
    if cfg.protocol == "rial":
        own, other = pair[idx], pair[1 - idx]
        return np.concatenate([np.array([own, other]), protocol.observation_fragment(idx)])
    if cfg.protocol == "gifting_budget":
        return np.append(pair, protocol.budgets()[idx])
    return np.asarray(pair, dtype=np.float64).copy()


def _run_matrix_seed(cfg: ExperimentConfig, seed: int, out_dir: Path) -> dict:
    payoff = envs.PayoffMatrix.from_table(cfg.env, cfg.payoffs or envs.DEFAULT_PAYOFFS[cfg.env])
    env = envs.MatrixGame(payoff, episode_len=cfg.steps_per_episode)
    env_rng = _rng(seed, "env")
    proto_rng = _rng(seed, "protocol")
    agents = [
        agent_mod.QAgent(
            _make_network(cfg, rng), gamma=cfg.gamma, alpha=cfg.alpha, alpha_w=cfg.alpha_w,
            buffer_capacity=cfg.buffer_capacity, minibatches=cfg.minibatches,
            batch_size=cfg.batch_size, rng=rng,
        )
        for rng in (_rng(seed, "agent0"), _rng(seed, "agent1"))
    ]
    trace_fh = open(out_dir / f"trace_seed{seed}.log", "w") if cfg.trace else None
    protocol = _make_protocol(cfg, trace_fh)
    schedule = agent_mod.EpsilonSchedule(cfg.eps_kind, cfg.eps_initial, cfg.eps_final, cfg.episodes)
    is_gifting = cfg.protocol.startswith("gifting")
    is_rial = cfg.protocol == "rial"

    records = []
    try:
        for episode in range(cfg.episodes):
            eps = agent_mod.epsilon_at(schedule, episode)
            base = env.reset(env_rng)
            protocol.begin_episode(env_rng)
            obs = [_assemble_obs(cfg, i, base[i], protocol) for i in range(2)]
            record = metrics.EpisodeRecord(episode, epsilon=eps)
            done = False
            step = 0
            while not done:
                actions = [agents[i].select_actions(obs[i], eps) for i in range(2)]
                env_actions = [int(a[0]) for a in actions]
                gift_decisions = [int(a[1]) for a in actions] if is_gifting else None
                rewards, pair, done = env.step(env_actions)
                if is_rial:
                    protocol.deliver([np.array([a[1], a[2]], dtype=np.float64) for a in actions])
                ctx = comms.StepContext(
                    step, rewards, obs, [], agents, eps, gift_decisions=gift_decisions
                )
                if is_gifting:
                    shaped = protocol.shape_step(ctx)
                    next_obs = [_assemble_obs(cfg, i, pair, protocol) for i in range(2)]
                else:
                    next_obs = [_assemble_obs(cfg, i, pair, protocol) for i in range(2)]
                    ctx.next_obs = next_obs
                    shaped = protocol.shape_step(ctx)
                for i in range(2):
                    agents[i].store(obs[i], actions[i], shaped[i], next_obs[i], done)
                metrics.accumulate(
                    record, rewards, env_actions, payoff.cooperative_action,
                    shaped_rewards=shaped, gift_decisions=gift_decisions,
                )
                obs = next_obs
                step += 1
            for a in agents:
                a.train_episode()
            protocol.end_episode(episode, proto_rng)
            record.token_mean = protocol.token_mean()
            records.append(record)
    finally:
        if trace_fh is not None:
            trace_fh.close()

    episode_file = out_dir / f"seed_{seed}.csv"
    metrics.write_episode_csv(episode_file, records)
    fractions = metrics.final_policy_eval(agents, cfg.protocol, payoff.cooperative_action)
    eval_file = out_dir / f"final_eval_seed_{seed}.csv"
    metrics.write_final_eval(eval_file, fractions)
    checkpoints = []
    for i, a in enumerate(agents):
        path = out_dir / f"agent{i}_seed{seed}.npz"
        qnet.save_checkpoint(a.net, path)
        checkpoints.append(path.name)
    return {
        "episodes": episode_file.name,
        "final_eval": eval_file.name,
        "checkpoints": checkpoints,
    }


def _run_harvest_seed(cfg: ExperimentConfig, seed: int, out_dir: Path) -> dict:
    if cfg.map_file:
        game_map = envs.load_map(Path(cfg.map_file).read_text())
    else:
        game_map = envs.default_map()
    env = envs.HarvestGame(game_map, episode_len=cfg.steps_per_episode)
    env_rng = _rng(seed, "env")
    agents = [
        agent_mod.QAgent(
            _make_network(cfg, rng), gamma=cfg.gamma, alpha=cfg.alpha, alpha_w=cfg.alpha_w,
            buffer_capacity=cfg.buffer_capacity, minibatches=cfg.minibatches,
            batch_size=cfg.batch_size, rng=rng,
        )
        for rng in (_rng(seed, "agent0"), _rng(seed, "agent1"))
    ]
    schedule = agent_mod.EpsilonSchedule(cfg.eps_kind, cfg.eps_initial, cfg.eps_final, cfg.episodes)

    records = []
    for episode in range(cfg.episodes):
        eps = agent_mod.epsilon_at(schedule, episode)
        obs = env.reset(env_rng)
        record = metrics.EpisodeRecord(episode, epsilon=eps)
        done = False
        while not done:
            actions = [agents[i].select_actions(obs[i], eps) for i in range(2)]
            rewards, next_obs, done = env.step([int(a[0]) for a in actions], env_rng)
            for i in range(2):
                agents[i].store(obs[i], actions[i], rewards[i], next_obs[i], done)
            metrics.accumulate(record, rewards, [int(a[0]) for a in actions], -1)
            obs = next_obs
        for a in agents:
            a.train_episode()
        records.append(record)

    episode_file = out_dir / f"seed_{seed}.csv"
    metrics.write_episode_csv(episode_file, records)
    checkpoints = []
    for i, a in enumerate(agents):
        path = out_dir / f"agent{i}_seed{seed}.npz"
        qnet.save_checkpoint(a.net, path)
        checkpoints.append(path.name)
    return {"episodes": episode_file.name, "final_eval": None, "checkpoints": checkpoints}


def run_seed(cfg: ExperimentConfig, seed: int, out_dir) -> dict:
    out_dir = Path(out_dir)
    if cfg.env in envs.MATRIX_ENVS:
        return _run_matrix_seed(cfg, seed, out_dir)
    return _run_harvest_seed(cfg, seed, out_dir)


def _seed_worker(payload):
    cfg_dict, seed, out_dir = payload
    cfg = ExperimentConfig.from_dict(cfg_dict)
    started = time.time()
    files = run_seed(cfg, seed, out_dir)
    return seed, files, time.time() - started


def _write_json_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True))
    os.replace(tmp, path)


def run_experiment(cfg: ExperimentConfig, out_dir) -> Path:
    """Execute every seed of one configuration; returns the run directory."""
    cfg = cfg.resolve()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "qcoop_version": __version__,
        "config": cfg.to_dict(),
        "status": "running",
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "files": {},
        "timings": {},
    }
    manifest_path = out_dir / "manifest.json"
    _write_json_atomic(manifest_path, manifest)

    jobs = [(cfg.to_dict(), seed, str(out_dir)) for seed in cfg.seeds]
    failures = {}
    if cfg.workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {pool.submit(_seed_worker, job): job[1] for job in jobs}
            for fut in concurrent.futures.as_completed(futures):
                seed = futures[fut]
                try:
                    seed, files, elapsed = fut.result()
                    manifest["files"][str(seed)] = files
                    manifest["timings"][str(seed)] = round(elapsed, 3)
                except Exception as exc:  # noqa: BLE001 - per-seed isolation
                    failures[seed] = repr(exc)
    else:
        for job in jobs:
            seed = job[1]
            try:
                seed, files, elapsed = _seed_worker(job)
                manifest["files"][str(seed)] = files
                manifest["timings"][str(seed)] = round(elapsed, 3)
            except (ConfigError, InputError):
                raise
            except Exception as exc:  # noqa: BLE001
                failures[seed] = repr(exc)

    manifest["status"] = "complete" if not failures else "failed"
    manifest["failures"] = {str(k): v for k, v in failures.items()}
    manifest["completed"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    _write_json_atomic(manifest_path, manifest)
    if failures:
        raise RuntimeError(f"seeds failed: {sorted(failures)}")
    return out_dir


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def run_sweep(cfg: ExperimentConfig, grid: dict[str, list], out_dir) -> tuple[list[Path], dict]:
    """One run per Cartesian grid point; returns (completed run dirs, failures)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    axes = sorted(grid)
    points = list(itertools.product(*(grid[k] for k in axes))) if axes else [()]
    finished, failures = [], {}
    for values in points:
        overrides = dict(zip(axes, values))
        label = "_".join(f"{k}={v}" for k, v in overrides.items()) or "single"
        point_cfg = dataclasses.replace(cfg, **overrides)
        point_dir = out_dir / label
        try:
            run_experiment(point_cfg, point_dir)
            finished.append(point_dir)
        except (ConfigError, InputError, RuntimeError) as exc:
            failures[label] = repr(exc)
    _write_json_atomic(
        out_dir / "sweep_manifest.json",
        {
            "grid": {k: list(v) for k, v in grid.items()},
            "completed": [p.name for p in finished],
            "failures": failures,
        },
    )
    return finished, failures


# ---------------------------------------------------------------------------
# summarize
# ---------------------------------------------------------------------------

SUMMARY_COLUMNS = (
    "run", "env", "protocol", "n_seeds",
    "C_mean", "C_std", "FC_rate_mean", "FC_rate_std", "I_mean", "I_std",
    "FG_mean", "FG_std", "token_mean", "token_std",
    "coop_frac_mean", "coop_frac_std",
)


def _load_run(run_dir: Path) -> dict:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{run_dir} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    cfg = manifest["config"]
    seeds = sorted(int(s) for s in manifest["files"])
    per_seed = []
    for seed in seeds:
        files = manifest["files"][str(seed)]
        columns = metrics.read_episode_csv(run_dir / files["episodes"])
        final = (
            metrics.read_final_eval(run_dir / files["final_eval"])
            if files.get("final_eval")
            else None
        )
        per_seed.append({"columns": columns, "final": final})
    return {"manifest": manifest, "config": cfg, "seeds": seeds, "per_seed": per_seed}


def _nanaware(values: list[float]) -> tuple[float | None, float | None]:
    arr = np.array([v for v in values if v is not None and not np.isnan(v)])
    if arr.size == 0:
        return None, None
    return float(arr.mean()), float(arr.std())


def summarize(run_dirs: list, out_dir, window: int = 100, figures: bool = True) -> Path:
    """Final-window aggregate table (mean and std across seeds) plus figures."""
    from . import plots

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    curve_data: dict[str, dict[str, np.ndarray]] = {}
    for run_dir in map(Path, run_dirs):
        run = _load_run(run_dir)
        cfg = run["config"]
        steps = cfg["steps_per_episode"]
        per_metric: dict[str, list[float]] = {k: [] for k in ("C", "FC_rate", "I", "FG", "token_mean")}
        coop_fracs: list[float] = []
        stacked: dict[str, list[np.ndarray]] = {k: [] for k in ("C", "FC", "I", "FG", "token_mean")}
        for entry in run["per_seed"]:
            cols = entry["columns"]
            tail = slice(-min(window, len(cols["C"])), None)
            with np.errstate(invalid="ignore"):
                per_metric["C"].append(float(np.mean(cols["C"][tail])))
                per_metric["FC_rate"].append(float(np.mean(cols["FC"][tail] / steps)))
                per_metric["I"].append(float(np.mean(cols["I"][tail])))
                fg = cols["FG"][tail]
                per_metric["FG"].append(float(np.mean(fg)) if not np.all(np.isnan(fg)) else np.nan)
                tok = cols["token_mean"][tail]
                per_metric["token_mean"].append(
                    float(np.mean(tok)) if not np.all(np.isnan(tok)) else np.nan
                )
            if entry["final"]:
                coop_fracs.extend(entry["final"])
            for key in stacked:
                stacked[key].append(cols[key])
        label = run_dir.name
        with np.errstate(invalid="ignore"):
            curve_data[label] = {
                key: np.nanmean(np.stack(series), axis=0) if series else np.array([])
                for key, series in stacked.items()
            }
        row = {"run": label, "env": cfg["env"], "protocol": cfg["protocol"],
               "n_seeds": len(run["seeds"])}
        for key, out_name in (("C", "C"), ("FC_rate", "FC_rate"), ("I", "I"),
                              ("FG", "FG"), ("token_mean", "token")):
            mean, std = _nanaware(per_metric[key])
            row[f"{out_name}_mean"] = mean
            row[f"{out_name}_std"] = std
        mean, std = _nanaware(coop_fracs)
        row["coop_frac_mean"] = mean
        row["coop_frac_std"] = std
        rows.append(row)

    table_path = out_dir / "summary.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow(
                ["" if row.get(c) is None else row.get(c) for c in SUMMARY_COLUMNS]
            )
    if figures:
        plots.render_curves(curve_data, out_dir)
    return table_path


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def evaluate_checkpoints(paths: list, cooperative_action: int = 0) -> list[tuple[str, float]]:
    """Greedy cooperation fraction of each saved network over its observation space."""
    results = []
    for path in paths:
        net = qnet.load_checkpoint(path)
        if isinstance(net, qnet.ClassicalQNetwork):
            raise ConfigError("final-policy evaluation enumerates matrix-game observations only")
        frac = metrics.final_policy_eval([net], net.protocol, cooperative_action)[0]
        results.append((str(path), frac))
    return results


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(f"override must be key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _config_from_args(args) -> ExperimentConfig:
    data = {}
    if args.config:
        data.update(json.loads(Path(args.config).read_text()))
    if args.env is not None:
        data["env"] = args.env
    if args.protocol is not None:
        data["protocol"] = args.protocol
    if args.episodes is not None:
        data["episodes"] = args.episodes
    if args.seeds is not None:
        data["seeds"] = tuple(args.seeds)
    if getattr(args, "workers", None) is not None:
        data["workers"] = args.workers
    if getattr(args, "trace", False):
        data["trace"] = True
    for text in args.override or []:
        key, value = _parse_override(text)
        data[key] = value
    return ExperimentConfig.from_dict(data)


def _add_common_run_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--env", choices=list(envs.MATRIX_ENVS) + ["harvest"])
    parser.add_argument("--protocol", choices=list(qnet.MATRIX_PROTOCOLS) + list(HARVEST_PROTOCOLS))
    parser.add_argument("--episodes", type=int)
    parser.add_argument("--seeds", type=int, nargs="+")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--trace", action="store_true")
    parser.add_argument("--override", action="append", metavar="KEY=VALUE")
    parser.add_argument("--out-dir", default="runs/run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcoop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configuration across its seeds")
    _add_common_run_args(p_run)

    p_sweep = sub.add_parser("sweep", help="Cartesian parameter sweep")
    _add_common_run_args(p_sweep)
    p_sweep.add_argument(
        "--grid", action="append", metavar="KEY=V1,V2,...",
        help="sweep axis; repeat for multiple axes",
    )

    p_sum = sub.add_parser("summarize", help="aggregate finished runs")
    p_sum.add_argument("run_dirs", nargs="+")
    p_sum.add_argument("--out-dir", default="summary")
    p_sum.add_argument("--window", type=int, default=100)
    p_sum.add_argument("--no-figures", action="store_true")

    p_eval = sub.add_parser("eval", help="greedy policy evaluation of checkpoints")
    p_eval.add_argument("checkpoints", nargs="+")
    p_eval.add_argument("--coop-action", type=int, default=0)
    p_eval.add_argument("--out", help="write agent,coop_fraction CSV here")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _config_from_args(args)
            run_experiment(cfg, args.out_dir)
            print(f"run complete: {args.out_dir}")
        elif args.command == "sweep":
            cfg = _config_from_args(args)
            grid = {}
            for text in args.grid or []:
                key, raw = text.split("=", 1)
                grid[key] = [_parse_override(f"{key}={v}")[1] for v in raw.split(",")]
            _, failures = run_sweep(cfg, grid, args.out_dir)
            if failures:
                print(f"sweep finished with failures: {failures}", file=sys.stderr)
                return 3
            print(f"sweep complete: {args.out_dir}")
        elif args.command == "summarize":
            table = summarize(
                args.run_dirs, args.out_dir, window=args.window, figures=not args.no_figures
            )
            print(f"summary written: {table}")
        else:  # eval
            results = evaluate_checkpoints(args.checkpoints, args.coop_action)
            lines = ["agent,coop_fraction"] + [
                f"{path},{frac!r}" for path, frac in results
            ]
            text = "\n".join(lines)
            if args.out:
                Path(args.out).write_text(text + "\n")
            print(text)
    except (ConfigError, InputError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
