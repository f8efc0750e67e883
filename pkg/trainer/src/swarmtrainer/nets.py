"""Actor-critic network: ego-map CNN branch, LiDAR branch, shared trunk.

The LiDAR branch is a dense layer or a one/two-layer 1D convolution stack.
The value side is either one shared head (centralized critic sharing) or a
separate head per agent; in ctde mode with more than one agent, value
heads additionally consume the critic-only global channel.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import TrainerConfig

TRUNK_DIM = 128
LIDAR_FEATURES = 64
GLOBAL_FEATURES = 32


def _conv2d_out(size, kernel, stride):
    return (size - kernel) // stride + 1


class EgoBranch(nn.Module):
    def __init__(self, window: int):
        super().__init__()
        self.window = window
        self.conv = nn.Sequential(
            nn.Conv2d(1, 8, kernel_size=5, stride=2),
            nn.ReLU(),
            nn.Conv2d(8, 16, kernel_size=3, stride=2),
            nn.ReLU(),
            nn.Conv2d(16, 32, kernel_size=3, stride=2),
            nn.ReLU(),
        )
        side = _conv2d_out(_conv2d_out(_conv2d_out(window, 5, 2), 3, 2), 3, 2)
        self.fc = nn.Sequential(nn.Flatten(), nn.Linear(32 * side * side, TRUNK_DIM), nn.ReLU())

    def forward(self, ego):
        x = ego.view(-1, 1, self.window, self.window)
        return self.fc(self.conv(x))


class LidarBranch(nn.Module):
    def __init__(self, ray_count: int, kind: str, max_range: float):
        super().__init__()
        self.kind = kind
        self.scale = float(max_range)
        if kind == "dense":
            self.net = nn.Sequential(nn.Linear(ray_count, LIDAR_FEATURES), nn.ReLU())
        else:
            layers = [nn.Conv1d(1, 8, kernel_size=5, stride=2), nn.ReLU()]
            out = _conv2d_out(ray_count, 5, 2)
            channels = 8
            if kind == "conv2":
                layers += [nn.Conv1d(8, 16, kernel_size=3, stride=2), nn.ReLU()]
                out = _conv2d_out(out, 3, 2)
                channels = 16
            layers += [nn.Flatten(), nn.Linear(channels * out, LIDAR_FEATURES), nn.ReLU()]
            self.net = nn.Sequential(*layers)

    def forward(self, ranges):
        x = ranges / self.scale
        if self.kind != "dense":
            x = x.unsqueeze(1)
        return self.net(x)


class PolicyNet(nn.Module):
    """Shared-parameter actor with one or per-agent value heads."""

    def __init__(self, layout: dict, config: TrainerConfig):
        super().__init__()
        self.config = config
        self.segments = {seg["name"]: seg["size"] for seg in layout["obs_segments"]}
        self.action_dim = layout["action_dim"]
        self.n_agents = layout["n_agents"]
        # a lone agent has no teammates to centralize over: ctde == dtde
        self.use_global = config.paradigm == "ctde" and self.n_agents > 1
        trunk_in = 0
        if "ego_map" in self.segments and config.ego_map_cnn:
            self.ego = EgoBranch(layout["ego_window"])
            trunk_in += TRUNK_DIM
        else:
            self.ego = None
            trunk_in += self.segments.get("ego_map", 0)
        if "lidar" in self.segments:
            self.lidar = LidarBranch(
                self.segments["lidar"], config.lidar_branch, layout["lidar_max_range"]
            )
            trunk_in += LIDAR_FEATURES
        else:
            self.lidar = None
        self.extra_names = [
            name for name in self.segments if name not in ("ego_map", "lidar")
        ]
        trunk_in += sum(self.segments[name] for name in self.extra_names)

        self.trunk = nn.Sequential(nn.Linear(trunk_in, TRUNK_DIM), nn.ReLU())
        self.gru = nn.GRU(TRUNK_DIM, TRUNK_DIM, batch_first=True) if config.recurrent else None

        self.actor_mean = nn.Linear(TRUNK_DIM, self.action_dim)
        self.log_std = nn.Parameter(torch.full((self.action_dim,), -0.5))

        critic_in = TRUNK_DIM
        if self.use_global:
            self.global_net = nn.Sequential(
                nn.Linear(layout["global_state_dim"], GLOBAL_FEATURES), nn.ReLU()
            )
            critic_in += GLOBAL_FEATURES
        else:
            self.global_net = None
        heads = 1 if config.centralized_critic_sharing else self.n_agents
        self.critic_heads = nn.ModuleList(nn.Linear(critic_in, 1) for _ in range(heads))

    def critic_head(self, agent_index: int) -> nn.Linear:
        if self.config.centralized_critic_sharing:
            return self.critic_heads[0]
        return self.critic_heads[agent_index]

    def features(self, obs: dict, hidden=None):
        parts = []
        if "ego_map" in self.segments:
            ego = obs["ego_map"]
            parts.append(self.ego(ego) if self.ego is not None else ego)
        if self.lidar is not None:
            parts.append(self.lidar(obs["lidar"]))
        for name in self.extra_names:
            parts.append(obs[name])
        x = self.trunk(torch.cat(parts, dim=-1))
        if self.gru is not None:
            seq = x.unsqueeze(0) if x.dim() == 2 else x
            out, hidden = self.gru(seq, hidden)
            x = out.squeeze(0)
        return x, hidden

    def features_sequence(self, obs: dict, hidden=None):
        """Trunk over a (batch, time, ...) observation batch; recurrent only."""
        batch, steps = obs["lidar"].shape[:2] if "lidar" in obs else obs["ego_map"].shape[:2]
        flat = {name: tensor.reshape(batch * steps, -1) for name, tensor in obs.items()}
        parts = []
        if "ego_map" in self.segments:
            ego = flat["ego_map"]
            parts.append(self.ego(ego) if self.ego is not None else ego)
        if self.lidar is not None:
            parts.append(self.lidar(flat["lidar"]))
        for name in self.extra_names:
            parts.append(flat[name])
        x = self.trunk(torch.cat(parts, dim=-1)).reshape(batch, steps, -1)
        x, hidden = self.gru(x, hidden)
        return x, hidden

    def distribution(self, trunk_features):
        mean = self.actor_mean(trunk_features)
        std = torch.exp(self.log_std).expand_as(mean)
        return torch.distributions.Normal(mean, std)

    def value(self, trunk_features, agent_index: int, global_state=None):
        x = trunk_features
        if self.use_global:
            if global_state is None:
                raise ValueError("ctde critic needs the global channel")
            x = torch.cat([x, self.global_net(global_state)], dim=-1)
        return self.critic_head(agent_index)(x).squeeze(-1)
