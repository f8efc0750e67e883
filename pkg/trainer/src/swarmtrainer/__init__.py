"""PPO actor-critic client for the exploration environment server."""

from .client import EnvClient, ProtocolError, ServerProcess
from .config import TrainerConfig
from .nets import PolicyNet
from .ppo import PPOTrainer

__version__ = "0.1.0"
