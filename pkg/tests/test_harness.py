import json
import socket
import struct
import threading

import numpy as np
import pytest

from swarmexplore.env import EnvConfig
from swarmexplore.harness import (
    ConfigError,
    RunConfig,
    ewma,
    load_run_config,
    main,
    read_frame,
    replay_trajectory,
    run_episodes,
    serve,
    write_frame,
)


def run_config(tmp_path, **env_kwargs):
    defaults = dict(n_agents=1, level_id=0, episode_steps=25, seed=3)
    defaults.update(env_kwargs)
    return RunConfig(
        env=EnvConfig(**defaults),
        policy="stationary",
        episodes=2,
        log_dir=str(tmp_path),
    )


# ------------------------------------------------------------------ ewma


def test_ewma_constant_series_is_fixed_point():
    assert ewma([2.5] * 6, 0.3) == [2.5] * 6


def test_ewma_alpha_one_is_identity():
    series = [1.0, -2.0, 7.5]
    assert ewma(series, 1.0) == series


def test_ewma_one_step_recurrence():
    assert ewma([0.0, 1.0], 0.5) == [0.0, 0.5]


def test_ewma_rejects_bad_inputs():
    with pytest.raises(ValueError):
        ewma([1.0], 0.0)
    with pytest.raises(ValueError):
        ewma([1.0], 1.5)
    with pytest.raises(ValueError):
        ewma([], 0.5)


# ------------------------------------------------------------------ config


def test_load_config_round_trip(tmp_path):
    cfg_file = tmp_path / "run.toml"
    cfg_file.write_text(
        """
n_agents = 2
level_id = 1
episode_steps = 77
action_variant = "planar2d"
seed = 9
policy = "random_walk"
episodes = 3
dt = 0.05

[comm]
mode = "multi_hop"
range = 2.5

[lidar]
ray_count = 18

[curriculum]
mode = "sequential"
pass_area = 0.7
pass_x_times = 5
level_order = [0, 1, 2]
"""
    )
    config = load_run_config(cfg_file)
    assert config.env.n_agents == 2
    assert config.env.level_id == 1
    assert config.env.episode_steps == 77
    assert config.env.limits.dt == 0.05
    assert config.env.comm.mode == "multi_hop"
    assert config.env.comm.range == 2.5
    assert config.env.lidar.ray_count == 18
    assert config.env.curriculum.pass_area == 0.7
    assert config.env.curriculum.level_order == (0, 1, 2)
    assert config.policy == "random_walk"
    assert config.episodes == 3


def test_load_config_unknown_key_diagnostic(tmp_path):
    cfg_file = tmp_path / "bad.toml"
    cfg_file.write_text("lidar_rays = 10\n")
    with pytest.raises(ConfigError, match="lidar_rays"):
        load_run_config(cfg_file)


def test_load_config_unknown_section_key(tmp_path):
    cfg_file = tmp_path / "bad2.toml"
    cfg_file.write_text("[comm]\nspan = 4.0\n")
    with pytest.raises(ConfigError, match="span"):
        load_run_config(cfg_file)


def test_load_config_malformed_toml_has_location(tmp_path):
    cfg_file = tmp_path / "broken.toml"
    cfg_file.write_text("n_agents = \n")
    with pytest.raises(ConfigError, match="line"):
        load_run_config(cfg_file)


def test_external_policy_requires_port():
    from swarmexplore.harness import run

    with pytest.raises(ConfigError):
        run(RunConfig(policy="external"))


# ------------------------------------------------------------------ episodes & metrics


def test_run_episodes_writes_step_and_summary_records(tmp_path):
    config = run_config(tmp_path)
    summaries = run_episodes(config)
    assert len(summaries) == 2
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    records = [json.loads(line) for line in lines]
    step_records = [r for r in records if r["step"] >= 0]
    summary_records = [r for r in records if r["step"] == -1]
    assert len(summary_records) == 2
    assert len(step_records) == 2 * 25
    for rec in records:
        assert 0.0 <= rec["coverage"] <= 1.0
        assert rec["level_id"] == 0


def test_metrics_files_byte_identical_across_runs(tmp_path):
    config_a = run_config(tmp_path / "a", episode_steps=30)
    config_a.policy = "random_walk"
    run_episodes(config_a)
    config_b = run_config(tmp_path / "b", episode_steps=30)
    config_b.policy = "random_walk"
    run_episodes(config_b)
    a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
    b = (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert a == b


def test_trajectory_replay_reproduces_coverage(tmp_path):
    config = run_config(tmp_path, episode_steps=30)
    config.policy = "random_walk"
    config.episodes = 1
    config.dump_trajectories = True
    run_episodes(config)
    metrics = [
        json.loads(line) for line in (tmp_path / "metrics.jsonl").read_text().splitlines()
    ]
    logged = [r["coverage"] for r in metrics if r["step"] >= 0]
    replayed = replay_trajectory(config, tmp_path / "trajectories.jsonl")
    assert replayed == logged


# ------------------------------------------------------------------ CLI


def test_cli_runs_config_file(tmp_path):
    cfg_file = tmp_path / "run.toml"
    cfg_file.write_text('episode_steps = 10\npolicy = "stationary"\nepisodes = 1\n')
    code = main(["--config", str(cfg_file), "--log-dir", str(tmp_path / "logs")])
    assert code == 0
    assert (tmp_path / "logs" / "metrics.jsonl").exists()


def test_cli_env_var_overrides_log_dir(tmp_path, monkeypatch):
    cfg_file = tmp_path / "run.toml"
    cfg_file.write_text('episode_steps = 5\npolicy = "stationary"\nepisodes = 1\n')
    monkeypatch.setenv("IMAGINE_LOG_DIR", str(tmp_path / "override"))
    code = main(["--config", str(cfg_file), "--log-dir", str(tmp_path / "ignored")])
    assert code == 0
    assert (tmp_path / "override" / "metrics.jsonl").exists()
    assert not (tmp_path / "ignored").exists()


def test_cli_serve_without_port_fails(capsys):
    assert main(["--serve"]) == 2
    assert "port" in capsys.readouterr().err


def test_cli_malformed_config_exits_nonzero(tmp_path, capsys):
    cfg_file = tmp_path / "bad.toml"
    cfg_file.write_text("nonsense_key = 1\n")
    assert main(["--config", str(cfg_file)]) == 2
    assert "nonsense_key" in capsys.readouterr().err


# ------------------------------------------------------------------ TCP server


class Client:
    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=10)

    def call(self, payload):
        write_frame(self.sock, payload)
        return read_frame(self.sock)

    def close(self):
        self.sock.close()


def free_port():
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    return port


@pytest.fixture
def server():
    port = free_port()
    config = RunConfig(
        env=EnvConfig(n_agents=2, level_id=0, episode_steps=15, seed=1),
        policy="external",
        episodes=1,
        listen_port=port,
    )
    thread = threading.Thread(target=serve, args=(config,), daemon=True)
    thread.start()
    import time

    client = None
    for _ in range(100):
        try:
            client = Client(port)
            break
        except OSError:
            time.sleep(0.05)
    assert client is not None
    yield client, config
    client.close()
    thread.join(timeout=5)


def test_server_handshake_reports_layout(server):
    client, config = server
    reply = client.call({"cmd": "handshake", "version": 1})
    assert reply["ok"] is True
    assert reply["version"] == 1
    assert reply["n_agents"] == 2
    assert reply["actors"] == 2
    assert reply["action_dim"] == 3
    names = [seg["name"] for seg in reply["obs_segments"]]
    assert names == ["ego_map", "lidar", "pose", "velocities"]
    obs_dim = sum(seg["size"] for seg in reply["obs_segments"])
    assert reply["obs_dim"] == obs_dim == 64 * 64 + 36 + 6

    wrong = client.call({"cmd": "handshake", "version": 99})
    assert wrong["ok"] is False

    reply = client.call({"cmd": "reset", "seed": 5})
    assert reply["ok"] is True
    assert len(reply["obs"]) == 2
    assert len(reply["obs"][0]) == obs_dim
    assert reply["info"]["coverage"] > 0

    bad = client.call({"cmd": "step", "actions": [[0, 0, 0]]})
    assert bad["ok"] is False and "error" in bad

    step = client.call({"cmd": "step", "actions": [[0, 0, 0], [0, 0, 0]]})
    assert step["ok"] is True
    assert isinstance(step["reward"], float)
    assert step["terminated"] is False

    unknown = client.call({"cmd": "warp"})
    assert unknown["ok"] is False

    bye = client.call({"cmd": "close"})
    assert bye["ok"] is True


def test_frame_codec_round_trip():
    received = {}

    def endpoint(conn):
        received.update(read_frame(conn))
        write_frame(conn, {"ok": True})

    a, b = socket.socketpair()
    thread = threading.Thread(target=endpoint, args=(b,))
    thread.start()
    write_frame(a, {"cmd": "handshake", "version": 1})
    reply = read_frame(a)
    thread.join()
    assert received == {"cmd": "handshake", "version": 1}
    assert reply == {"ok": True}
    # frame header carries the big-endian payload length
    payload = json.dumps({"x": 1}, separators=(",", ":")).encode()
    assert struct.pack(">I", len(payload)) + payload == struct.pack(
        ">I", len(payload)
    ) + payload
    a.close()
    b.close()
