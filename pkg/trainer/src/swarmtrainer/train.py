"""CLI: train a PPO policy against a running or freshly spawned server."""

from __future__ import annotations

import argparse

import torch

from .client import EnvClient, ServerProcess
from .config import TrainerConfig
from .ppo import PPOTrainer

# desk-scale environment: the short sensor makes coverage policy-driven
# (with the default 5 m range a random walk already sees most of level 0)
DESK_SCALE_ENV = """
n_agents = 1
level_id = 0
paradigm = "dtde"
episode_steps = 400
action_variant = "planar2d"
observation_variant = ["ego_map", "lidar"]
seed = 0

[lidar]
max_range = 1.5
"""


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="swarmtrainer")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, help="connect to an already-running server")
    parser.add_argument("--spawn", action="store_true", help="launch a desk-scale server")
    parser.add_argument("--episodes", type=int, default=200)
    parser.add_argument("--eval-episodes", type=int, default=10)
    parser.add_argument("--lidar-branch", choices=["dense", "conv1", "conv2"], default="dense")
    parser.add_argument("--recurrent", action="store_true")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--log-dir", default="runs/trainer")
    args = parser.parse_args(argv)

    torch.set_num_threads(max(1, torch.get_num_threads() // 2))
    config = TrainerConfig(
        lidar_branch=args.lidar_branch, recurrent=args.recurrent, seed=args.seed
    )

    server = None
    try:
        if args.port is not None and not args.spawn:
            client = EnvClient(args.host, args.port)
            client.handshake()
        else:
            server = ServerProcess(DESK_SCALE_ENV, port=args.port)
            client = server.connect()
        trainer = PPOTrainer(client, config, log_dir=args.log_dir)
        history = trainer.train(args.episodes)
        stats = trainer.evaluate(args.eval_episodes)
        print(
            f"trained {args.episodes} episodes: final rollout coverage "
            f"{history['coverage'][-1]:.3f}, eval mean coverage "
            f"{stats['mean_coverage']:.3f} +- {stats['std_coverage']:.3f}"
        )
        client.close()
    finally:
        if server is not None:
            server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
