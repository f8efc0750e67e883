"""Run entry points: CLI episodes with scripted policies, metrics logging,
trajectory persistence, and the TCP environment server for external
trainers.

Wire protocol: length-prefixed frames (4-byte big-endian payload length,
then a UTF-8 JSON object). Client commands: handshake, reset, step,
close. The handshake reply carries the observation layout so clients can
decode the flat arrays.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import socket
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .baselines import POLICY_KINDS, make_policy
from .env import (
    CurriculumConfig,
    EnvConfig,
    ExplorationEnv,
    observation_layout,
)
from .kinematics import KinematicLimits, action_dim
from .mapping import MapParams
from .network import CommConfig
from .sensing import LidarConfig

PROTOCOL_VERSION = 1
LOG_DIR_ENV_VAR = "IMAGINE_LOG_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: str = "random_walk"  # baseline kind or "external"
    episodes: int = 1
    log_dir: str = "runs"
    listen_port: int = None
    metrics_flush_every: int = 100
    dump_trajectories: bool = False

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")


def ewma(series, alpha: float):
    """Exponentially weighted moving average: y0 = x0, y_t = a*x + (1-a)*y."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    values = list(series)
    if not values:
        raise ValueError("series must be nonempty")
    out = [float(values[0])]
    for x in values[1:]:
        out.append(alpha * float(x) + (1.0 - alpha) * out[-1])
    return out


# ------------------------------------------------------------------ config

_SECTION_TYPES = {
    "limits": KinematicLimits,
    "comm": CommConfig,
    "lidar": LidarConfig,
    "map_params": MapParams,
    "curriculum": CurriculumConfig,
}

_RUN_KEYS = {"policy", "episodes", "log_dir", "listen_port", "metrics_flush_every", "dump_trajectories"}


def _build_section(cls, table: dict, name: str):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - valid
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {sorted(unknown)}")
    kwargs = dict(table)
    for key in ("level_order", "observation_variant"):
        if key in kwargs and isinstance(kwargs[key], list):
            kwargs[key] = tuple(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}] section: {exc}") from exc


def load_run_config(path) -> RunConfig:
    """Parse a TOML run config; flat keys mirror the EnvConfig field names."""
    raw = Path(path).read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    env_fields = {f.name for f in dataclasses.fields(EnvConfig)}
    env_kwargs = {}
    run_kwargs = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: key {key!r} must be a table")
            env_kwargs[key] = _build_section(_SECTION_TYPES[key], value, key)
        elif key == "dt":
            env_kwargs.setdefault("_dt", value)
        elif key in env_fields:
            if key == "observation_variant" and isinstance(value, list):
                value = tuple(value)
            env_kwargs[key] = value
        elif key in _RUN_KEYS:
            run_kwargs[key] = value
        else:
            raise ConfigError(f"{path}: unknown key {key!r}")
    dt = env_kwargs.pop("_dt", None)
    if dt is not None:
        limits = env_kwargs.get("limits", KinematicLimits())
        env_kwargs["limits"] = dataclasses.replace(limits, dt=float(dt))
    try:
        env = EnvConfig(**env_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig(env=env, **run_kwargs)


# ------------------------------------------------------------------ metrics

def _json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"


class JsonlWriter:
    def __init__(self, path: Path, flush_every: int = 100):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")
        self._since_flush = 0
        self._flush_every = max(1, flush_every)

    def write(self, record: dict):
        self._fh.write(_json_line(record))
        self._since_flush += 1
        if self._since_flush >= self._flush_every:
            self._fh.flush()
            self._since_flush = 0

    def close(self):
        self._fh.close()


def _metrics_record(episode: int, step: int, info: dict) -> dict:
    return {
        "episode": episode,
        "step": step,
        "coverage": float(info["coverage"]),
        "reward_sum": float(info["reward_sum"]),
        "cells_self": int(info["cells_self"]),
        "cells_collab": int(info["cells_collab"]),
        "bytes_lidar": int(info["bytes_lidar"]),
        "bytes_map": int(info["bytes_map"]),
        "collisions": int(info["collisions"]),
        "level_id": int(info["level_id"]),
        "curriculum_counter": int(info["curriculum_counter"]),
    }


# ------------------------------------------------------------------ episodes

def run_episodes(config: RunConfig, log_name: str = "metrics.jsonl"):
    """Execute config.episodes with the configured baseline policy."""
    env = ExplorationEnv(config.env)
    log_dir = Path(config.log_dir)
    writer = JsonlWriter(log_dir / log_name, config.metrics_flush_every)
    traj_writer = None
    if config.dump_trajectories:
        traj_writer = JsonlWriter(log_dir / "trajectories.jsonl", config.metrics_flush_every)
    n = config.env.n_agents
    summaries = []
    try:
        for episode in range(config.episodes):
            episode_seed = config.env.seed + episode
            policies = [
                make_policy(config.policy, config.env, seed=episode_seed * 8_191 + 31 * i)
                for i in range(n)
            ]
            obs = env.reset(episode_seed)
            if traj_writer:
                traj_writer.write({"episode": episode, "seed": episode_seed, "step": -1})
            step = 0
            while True:
                actions = [policies[i].act(obs[i]) for i in range(n)]
                result = env.step(actions)
                if traj_writer:
                    traj_writer.write(
                        {
                            "episode": episode,
                            "step": step,
                            "actions": [[float(v) for v in a] for a in actions],
                            "reward": result.reward,
                        }
                    )
                writer.write(_metrics_record(episode, step, result.info))
                obs = result.observations
                step += 1
                if result.terminated or result.truncated:
                    break
            summary = _metrics_record(episode, -1, result.info)
            summary["episode_length"] = step
            writer.write(summary)
            summaries.append(summary)
    finally:
        writer.close()
        if traj_writer:
            traj_writer.close()
    return summaries


def replay_trajectory(config: RunConfig, trajectory_path) -> list:
    """Re-run dumped actions; returns the coverage sequence per step."""
    env = ExplorationEnv(config.env)
    coverages = []
    with open(trajectory_path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["step"] == -1:
                env.reset(rec["seed"])
                continue
            result = env.step([np.asarray(a) for a in rec["actions"]])
            coverages.append(result.info["coverage"])
    return coverages


# ------------------------------------------------------------------ server

def _recv_exact(conn, count: int) -> bytes:
    buf = b""
    while len(buf) < count:
        chunk = conn.recv(count - len(buf))
        if not chunk:
            raise ConnectionError("client closed the connection mid-frame")
        buf += chunk
    return buf


def read_frame(conn) -> dict:
    header = _recv_exact(conn, 4)
    (length,) = struct.unpack(">I", header)
    return json.loads(_recv_exact(conn, length).decode("utf-8"))


def write_frame(conn, payload: dict):
    data = json.dumps(payload, separators=(",", ":")).encode("utf-8")
    conn.sendall(struct.pack(">I", len(data)) + data)


def _obs_to_wire(env: ExplorationEnv, shaped):
    if env.config.paradigm == "ctce":
        return [[float(v) for v in shaped]]
    return [[float(v) for v in o.flat()] for o in shaped]


def _info_to_wire(info: dict) -> dict:
    out = {}
    for key, value in info.items():
        if isinstance(value, np.ndarray):
            out[key] = [float(v) for v in value]
        elif isinstance(value, (np.integer,)):
            out[key] = int(value)
        elif isinstance(value, (np.floating,)):
            out[key] = float(value)
        else:
            out[key] = value
    return out


def _handshake_reply(config: EnvConfig) -> dict:
    segments = [{"name": name, "size": size} for name, size in observation_layout(config)]
    obs_dim = sum(s["size"] for s in segments)
    actors = 1 if config.paradigm == "ctce" else config.n_agents
    dim = action_dim(config.action_variant)
    reply = {
        "ok": True,
        "version": PROTOCOL_VERSION,
        "paradigm": config.paradigm,
        "n_agents": config.n_agents,
        "actors": actors,
        "action_dim": dim * config.n_agents if config.paradigm == "ctce" else dim,
        "obs_segments": segments,
        "obs_dim": obs_dim * config.n_agents if config.paradigm == "ctce" else obs_dim,
        "episode_steps": config.episode_steps,
        "ego_window": config.ego_window,
        "lidar_max_range": config.lidar.max_range,
    }
    if config.paradigm == "ctde":
        reply["global_state_dim"] = 6 * config.n_agents + 1
    return reply


def serve(config: RunConfig) -> int:
    """Serve one client over TCP; returns a process exit status."""
    env = ExplorationEnv(config.env)
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        server.bind(("127.0.0.1", config.listen_port))
    except OSError as exc:
        print(f"cannot bind port {config.listen_port}: {exc}", file=sys.stderr)
        server.close()
        return 2
    server.listen(1)
    conn, _ = server.accept()
    try:
        while True:
            try:
                msg = read_frame(conn)
            except ConnectionError:
                break
            cmd = msg.get("cmd")
            if cmd == "handshake":
                if msg.get("version") != PROTOCOL_VERSION:
                    write_frame(
                        conn,
                        {"ok": False, "error": f"protocol version {PROTOCOL_VERSION} required"},
                    )
                    continue
                write_frame(conn, _handshake_reply(config.env))
            elif cmd == "reset":
                shaped = env.reset(msg.get("seed"))
                write_frame(
                    conn,
                    {
                        "ok": True,
                        "obs": _obs_to_wire(env, shaped),
                        "reward": 0.0,
                        "terminated": False,
                        "truncated": False,
                        "info": _info_to_wire(env.last_info),
                    },
                )
            elif cmd == "step":
                try:
                    actions = msg["actions"]
                    if env.config.paradigm == "ctce":
                        result = env.step(np.asarray(actions[0], dtype=float))
                    else:
                        result = env.step([np.asarray(a, dtype=float) for a in actions])
                except (KeyError, ValueError, RuntimeError) as exc:
                    write_frame(conn, {"ok": False, "error": str(exc)})
                    continue
                write_frame(
                    conn,
                    {
                        "ok": True,
                        "obs": _obs_to_wire(env, result.observations),
                        "reward": float(result.reward),
                        "terminated": bool(result.terminated),
                        "truncated": bool(result.truncated),
                        "info": _info_to_wire(result.info),
                    },
                )
            elif cmd == "close":
                write_frame(conn, {"ok": True})
                break
            else:
                write_frame(conn, {"ok": False, "error": f"unknown command {cmd!r}"})
    finally:
        conn.close()
        server.close()
    return 0


# ------------------------------------------------------------------ CLI

def run(config: RunConfig) -> int:
    if config.policy == "external" or config.listen_port is not None:
        if config.listen_port is None:
            raise ConfigError("external policy requires a listen_port")
        return serve(config)
    run_episodes(config)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="swarmexplore", description="Multi-agent indoor exploration simulator"
    )
    parser.add_argument("--config", type=str, help="TOML run configuration")
    parser.add_argument("--episodes", type=int)
    parser.add_argument("--policy", type=str, choices=list(POLICY_KINDS) + ["external"])
    parser.add_argument("--serve", action="store_true", help="run the TCP environment server")
    parser.add_argument("--port", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--log-dir", type=str)
    parser.add_argument("--dump-trajectories", action="store_true")
    args = parser.parse_args(argv)

    try:
        config = load_run_config(args.config) if args.config else RunConfig()
        if args.episodes is not None:
            config.episodes = args.episodes
        if args.policy is not None:
            config.policy = args.policy
        if args.port is not None:
            config.listen_port = args.port
        if args.serve:
            config.policy = "external"
            if config.listen_port is None:
                raise ConfigError("--serve requires --port")
        if args.seed is not None:
            config.env = dataclasses.replace(config.env, seed=args.seed)
        if args.log_dir is not None:
            config.log_dir = args.log_dir
        if os.environ.get(LOG_DIR_ENV_VAR):
            config.log_dir = os.environ[LOG_DIR_ENV_VAR]
        if args.dump_trajectories:
            config.dump_trajectories = True
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        return run(config)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
