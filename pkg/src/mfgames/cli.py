"""Unified command-line front end for the four games.

Runs are fully determined by (game, mode, seed, parameters): outputs are CSV
trajectories, loss histories, network checkpoints, histogram-ready plot data,
and a manifest carrying the echoed configuration plus a content hash of every
emitted byte. Exit codes: 0 ok, 2 configuration, 3 data, 4 training.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .games import dice as dice_mod
from .games import elfarol as elfarol_mod
from .games import meeting as meeting_mod
from .games import sir as sir_mod
from .mfg import TrainingConfig, TrainingDivergence, write_history_csv
from .nets import save_checkpoint

__all__ = ["main", "run_experiment", "emit_histogram", "ConfigError"]

GAMES = ("meeting", "elfarol", "sir", "dice")
MODES = ("standard", "neural")


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration."""


# key -> (type, default) accepted per game, beyond the shared flags
_PARAMS: dict[str, dict[str, tuple]] = {
    "meeting": {
        "agents": (int, 64),
        "turns": (int, 15),
        "quorum": (float, 0.9),
        "noise_std": (float, 1.0),
        "sigma": (float, 0.1),
        "drift_gain": (float, 1.0),
        "smoothing": (float, 0.6),
        "scheduled": (float, 15.0),
        "init_mean": (float, 12.0),
        "games_per_epoch": (int, 10),
        "data_weight": (float, 1.0),
    },
    "elfarol": {
        "agents": (int, 64),
        "turns": (int, 15),
        "threshold": (float, 0.9),
        "drift_gain": (float, 0.3),
        "games_per_epoch": (int, 10),
        "data_weight": (float, 1.0),
    },
    "sir": {
        "population": (int, 1_000_000),
        "trajectories": (int, 100),
        "batch": (int, 5),
        "window": (int, 28),
        "layers": (int, 8),
        "width": (int, 32),
        "lr": (float, 5e-4),
    },
    "dice": {
        "players": (int, 30),
        "dice": (int, 15),
        "faces": (int, 6),
        "rounds": (int, 100),
        "rounds_per_game": (int, 10),
        "lambda0": (float, 0.0),
        "theta": (str, ""),
        "likelihood": (float, 0.3),
        "lr": (float, 5e-4),
    },
}
_DEFAULT_EPOCHS = {"meeting": 20, "elfarol": 20, "sir": 10, "dice": 0}


def _coerce(game: str, key: str, value) -> object:
    spec = _PARAMS[game]
    if key not in spec:
        raise ConfigError(f"unknown key '{key}' for game '{game}'")
    typ = spec[key][0]
    try:
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"key '{key}' expects {typ.__name__}, got {value!r}") from None


def load_config_file(path: str, game: str) -> dict:
    """Flat INI with a [run] section plus one section per game."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    out: dict = {}
    for section in parser.sections():
        if section == "run":
            for key, value in parser.items(section):
                if key not in ("game", "mode", "seed", "out", "epochs", "data"):
                    raise ConfigError(f"unknown key '{key}' in [run]")
                out[key] = value
        elif section in GAMES:
            if section != game:
                continue
            for key, value in parser.items(section):
                out[key] = _coerce(game, key, value)
        else:
            raise ConfigError(f"unknown section '[{section}]'")
    return out


def _params_for(game: str, file_cfg: dict, args: argparse.Namespace) -> dict:
    params = {k: d for k, (_t, d) in _PARAMS[game].items()}
    for key, value in file_cfg.items():
        if key in params:
            params[key] = value
    flag_map = {
        "meeting": {"agents": "agents"},
        "elfarol": {"agents": "agents", "threshold": "threshold"},
        "sir": {"population": "population", "trajectories": "trajectories"},
        "dice": {"players": "players", "dice": "dice", "rounds": "rounds",
                 "lambda0": "lambda0", "theta": "theta"},
    }[game]
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            params[key] = _coerce(game, key, value)
    return params


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def emit_histogram(path, per_turn_values: list[np.ndarray]) -> None:
    """Long-format plot data ``turn,value,weight``; weights per turn sum to 1."""
    if not per_turn_values:
        raise ValueError("no trajectories to emit")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["turn", "value", "weight"])
        for turn, values in enumerate(per_turn_values, start=1):
            values = np.asarray(values, dtype=float)
            if values.size == 0:
                raise ValueError(f"turn {turn} has no values")
            w = 1.0 / values.size
            for v in values:
                writer.writerow([turn, repr(float(v)), repr(w)])


def _training_config(args, params, game: str) -> TrainingConfig:
    epochs = args.epochs if args.epochs is not None else _DEFAULT_EPOCHS[game]
    return TrainingConfig(
        epochs=int(epochs),
        games_per_epoch=int(params.get("games_per_epoch", 10)),
        seed=args.seed,
        data_loss_weight=float(params.get("data_weight", 1.0)),
    )


def _run_meeting(args, params, out: Path) -> list[Path]:
    config = meeting_mod.MeetingConfig(
        scheduled=params["scheduled"], quorum=params["quorum"],
        n_agents=params["agents"], noise_std=params["noise_std"],
        turns=params["turns"], init_mean=params["init_mean"],
        drift_gain=params["drift_gain"], smoothing=params["smoothing"],
        sigma=params["sigma"],
    )
    written = []
    if args.mode == "standard":
        states = meeting_mod.run_standard(config, seed=args.seed)
    else:
        observations = [
            meeting_mod.generate_observations(seed=args.seed * 1000 + k)
            for k in range(10)
        ]
        training = _training_config(args, params, "meeting")
        game, nets, history = meeting_mod.run_neural(
            config, observations, training, net_seed=args.seed
        )
        states = meeting_mod.simulate_neural(config, nets, seed=args.seed)
        write_history_csv(out / "loss_history.csv", history)
        written.append(out / "loss_history.csv")
        for name, net in nets.items():
            p = out / f"checkpoint_{name}.json"
            save_checkpoint(net, p)
            written.append(p)
    meeting_mod.write_history(out / "trajectory.csv", states)
    emit_histogram(out / "plotdata.csv", [st.tau_tilde for st in states])
    return written + [out / "trajectory.csv", out / "plotdata.csv"]


def _run_elfarol(args, params, out: Path) -> list[Path]:
    config = elfarol_mod.BarConfig(
        threshold=params["threshold"], n_agents=params["agents"],
        turns=params["turns"], drift_gain=params["drift_gain"],
    )
    written = []
    if args.mode == "standard":
        states = elfarol_mod.run_standard(config, seed=args.seed)
    else:
        observations = elfarol_mod.generate_attendance_observations(seed=args.seed)
        training = _training_config(args, params, "elfarol")
        game, nets, history = elfarol_mod.run_neural(
            config, observations, training, net_seed=args.seed
        )
        states = elfarol_mod.simulate_neural(config, nets, seed=args.seed)
        write_history_csv(out / "loss_history.csv", history)
        written.append(out / "loss_history.csv")
        p = out / "checkpoint_drift.json"
        save_checkpoint(nets["drift"], p)
        written.append(p)
    elfarol_mod.write_history(out / "trajectory.csv", states)
    emit_histogram(out / "plotdata.csv", [st.p for st in states])
    return written + [out / "trajectory.csv", out / "plotdata.csv"]


def _run_sir(args, params, out: Path) -> list[Path]:
    if not args.data:
        raise ConfigError("sir requires --data FILE")
    dataset = sir_mod.ingest_csv(args.data, population=params["population"])
    window = min(params["window"], len(dataset))
    rates, _warn = sir_mod.estimate_rates(dataset, window=window)
    epochs = args.epochs if args.epochs is not None else _DEFAULT_EPOCHS["sir"]
    cfg = sir_mod.SIRTrainingConfig(
        epochs=int(epochs), trajectories=params["trajectories"],
        batch=params["batch"], lr=params["lr"], seed=args.seed,
        window=window, hidden_layers=params["layers"], hidden_width=params["width"],
    )
    model, history = sir_mod.train_sir(dataset, cfg, warm_rates=rates)
    traj = sir_mod.forecast(model, dataset.states[0], len(dataset) - 1, dataset.measures)

    rates_path = out / "rates.csv"
    with open(rates_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "gamma", "rho", "pi"])
        for date, rv in zip(dataset.dates, rates):
            writer.writerow([date.isoformat(), repr(rv.gamma), repr(rv.rho), repr(rv.pi)])
    forecast_path = out / "forecast.csv"
    with open(forecast_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "m_S", "m_I", "m_R", "source"])
        for date, row in zip(dataset.dates, dataset.states):
            writer.writerow([date.isoformat()] + [repr(float(x)) for x in row] + ["observed"])
        for date, row in zip(dataset.dates, traj):
            writer.writerow([date.isoformat()] + [repr(float(x)) for x in row] + ["predicted"])
    written = [rates_path, forecast_path]
    hist_path = out / "loss_history.csv"
    with open(hist_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "game_cost", "data_loss", "total"])
        for epoch, gc, dl, total in history:
            writer.writerow([epoch, repr(gc), repr(dl), repr(total)])
    written.append(hist_path)
    for name, net in (("drift", model.drift_net), ("diffusion", model.diffusion_net)):
        if net is not None:
            p = out / f"checkpoint_{name}.json"
            save_checkpoint(net, p)
            written.append(p)
    return written


def _run_dice(args, params, out: Path) -> list[Path]:
    faces = params["faces"]
    theta = (
        tuple(float(x) for x in params["theta"].split(","))
        if params["theta"]
        else (1.0 / faces,) * faces
    )
    if len(theta) != faces:
        raise ConfigError(f"theta must list {faces} probabilities")
    config = dice_mod.DiceConfig(
        n_players=params["players"], dice_per_player=params["dice"], n_faces=faces,
        theta=theta, likelihood=params["likelihood"], bluff0=params["lambda0"],
    )
    rounds_per_game = params["rounds_per_game"]
    games = max(1, params["rounds"] // rounds_per_game)
    training = TrainingConfig(epochs=1, seed=args.seed, lr=params["lr"])
    net, records = dice_mod.train_dice(
        config, training, games=games, rounds_per_game=rounds_per_game,
        neural=(args.mode == "neural"),
    )
    dice_mod.write_round_history(out / "history.csv", records)
    dice_mod.write_analysis_csv(out / "analysis.csv", dice_mod.analyze(records))
    written = [out / "history.csv", out / "analysis.csv"]
    if net is not None:
        p = out / "checkpoint_drift.json"
        save_checkpoint(net, p)
        written.append(p)
    return written


_RUNNERS = {
    "meeting": _run_meeting,
    "elfarol": _run_elfarol,
    "sir": _run_sir,
    "dice": _run_dice,
}


def run_experiment(args: argparse.Namespace) -> int:
    if args.game not in GAMES:
        raise ConfigError(f"unknown game '{args.game}'")
    file_cfg = load_config_file(args.config, args.game) if args.config else {}
    # resolution order: flag, then config file, then default
    args.mode = args.mode or file_cfg.get("mode") or "standard"
    if args.mode not in MODES:
        raise ConfigError(f"unknown mode '{args.mode}'")
    args.seed = args.seed if args.seed is not None else int(file_cfg.get("seed", 0))
    args.out = args.out or file_cfg.get("out") or "out"
    if args.epochs is None and "epochs" in file_cfg:
        args.epochs = int(file_cfg["epochs"])
    args.data = args.data or file_cfg.get("data")
    params = _params_for(args.game, file_cfg, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    written = _RUNNERS[args.game](args, params, out)

    manifest = {
        "game": args.game,
        "mode": args.mode,
        "seed": args.seed,
        "parameters": {k: params[k] for k in sorted(params)},
        "outputs": {},
    }
    hasher = hashlib.sha256()
    for path in sorted(written):
        digest = _sha256(path)
        manifest["outputs"][path.name] = digest
        hasher.update(path.name.encode())
        hasher.update(digest.encode())
    manifest["content_hash"] = hasher.hexdigest()
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return 0


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--data", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfgames", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run any game by name")
    run.add_argument("--game", required=True, choices=GAMES)
    _add_shared(run)
    for flag in ("agents", "players", "dice", "rounds", "trajectories", "population"):
        run.add_argument(f"--{flag}", type=int, default=None)
    run.add_argument("--threshold", type=float, default=None)
    run.add_argument("--lambda0", type=float, default=None)
    run.add_argument("--theta", type=str, default=None)

    meeting = sub.add_parser("meeting", help="meeting arrival-times game")
    _add_shared(meeting)
    meeting.add_argument("--agents", type=int, default=None)

    elfarol = sub.add_parser("elfarol", help="El Farol bar game")
    _add_shared(elfarol)
    elfarol.add_argument("--agents", type=int, default=None)
    elfarol.add_argument("--threshold", type=float, default=None)

    sir = sub.add_parser("sir", help="SIR epidemic game")
    _add_shared(sir)
    sir.add_argument("--trajectories", type=int, default=None)
    sir.add_argument("--population", type=int, default=None)

    dice = sub.add_parser("dice", help="liar's dice game")
    _add_shared(dice)
    dice.add_argument("--players", type=int, default=None)
    dice.add_argument("--dice", type=int, default=None)
    dice.add_argument("--rounds", type=int, default=None)
    dice.add_argument("--lambda0", type=float, default=None)
    dice.add_argument("--theta", type=str, default=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "run":
        args.game = args.command
    try:
        return run_experiment(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (sir_mod.DataError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except TrainingDivergence as err:
        print(f"training error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
