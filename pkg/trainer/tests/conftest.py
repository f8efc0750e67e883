import torch

torch.set_num_threads(2)


SMALL_ENV = """
n_agents = 2
level_id = 0
paradigm = "dtde"
episode_steps = 30
action_variant = "planar2d"
observation_variant = ["ego_map", "lidar"]
ego_window = 32

[lidar]
ray_count = 24
max_range = 1.5
"""

SMALL_ENV_CTDE = SMALL_ENV.replace('paradigm = "dtde"', 'paradigm = "ctde"')

SINGLE_ENV = """
n_agents = 1
level_id = 0
paradigm = "dtde"
episode_steps = 25
action_variant = "planar2d"
observation_variant = ["ego_map", "lidar"]
ego_window = 32

[lidar]
ray_count = 24
max_range = 1.5
"""

SINGLE_ENV_CTDE = SINGLE_ENV.replace('paradigm = "dtde"', 'paradigm = "ctde"')
