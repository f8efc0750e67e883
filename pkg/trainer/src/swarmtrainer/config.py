"""Trainer hyperparameters and architecture switches."""

from dataclasses import dataclass, field


@dataclass
class TrainerConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    rollout_episodes: int = 4  # episodes collected per update iteration
    minibatch_size: int = 256
    epochs: int = 4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    ego_map_cnn: bool = True
    lidar_branch: str = "dense"  # dense | conv1 | conv2
    recurrent: bool = False
    sequence_length: int = 64  # recurrent minibatches are whole subsequences
    centralized_critic_sharing: bool = True
    paradigm: str = "dtde"  # must match the server
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.lidar_branch not in ("dense", "conv1", "conv2"):
            raise ValueError("lidar_branch must be dense, conv1, or conv2")
        if self.paradigm not in ("ctce", "ctde", "dtde"):
            raise ValueError("paradigm must be ctce, ctde, or dtde")
