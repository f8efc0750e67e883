"""PPO with clipped surrogate objective and GAE over the wire protocol.

Each agent's experience is a separate stream through one shared-parameter
network (the ctce paradigm arrives as a single concatenated stream and
needs no special casing). Recurrent updates shuffle whole episode
sequences; feedforward updates shuffle steps.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import torch
from torch import optim

from .client import EnvClient, ProtocolError
from .config import TrainerConfig
from .nets import PolicyNet


def _to_tensor_dict(obs_list):
    names = obs_list[0].keys()
    return {
        name: torch.as_tensor(np.stack([o[name] for o in obs_list]), dtype=torch.float32)
        for name in names
    }


class EpisodeBuffer:
    """One episode of one actor stream."""

    def __init__(self):
        self.obs = []
        self.actions = []
        self.logprobs = []
        self.values = []
        self.rewards = []
        self.globals = []
        self.bootstrap = 0.0

    def __len__(self):
        return len(self.actions)


class PPOTrainer:
    def __init__(self, client: EnvClient, config: TrainerConfig, log_dir=None):
        if client.layout is None:
            client.handshake()
        if client.layout["paradigm"] != config.paradigm:
            raise ProtocolError(
                f"paradigm mismatch: server runs {client.layout['paradigm']!r}, "
                f"trainer configured for {config.paradigm!r}"
            )
        self.client = client
        self.config = config
        self.layout = client.layout
        self.actors = self.layout["actors"]
        torch.manual_seed(config.seed)
        self.net = PolicyNet(self.layout, config)
        self.optimizer = optim.Adam(self.net.parameters(), lr=config.learning_rate)
        self.log_dir = Path(log_dir) if log_dir else None
        self.history = {"policy_loss": [], "value_loss": [], "entropy": [], "coverage": []}
        self._episode_index = 0

    # ------------------------------------------------------------ rollout
    def _act(self, obs_list, global_state, hidden):
        obs = _to_tensor_dict(obs_list)
        with torch.no_grad():
            features, hidden = self.net.features(obs, hidden)
            dist = self.net.distribution(features)
            actions = dist.sample()
            logprobs = dist.log_prob(actions).sum(-1)
            values = torch.stack(
                [
                    self.net.value(features[i : i + 1], i, global_state=global_state)
                    for i in range(self.actors)
                ]
            ).squeeze(-1)
        return actions, logprobs, values, hidden

    def _global_tensor(self, info):
        if not self.net.use_global:
            return None
        return torch.as_tensor([info["global_state"]], dtype=torch.float32)

    def run_episode(self, seed: int, deterministic: bool = False):
        """One episode; returns (streams, final coverage)."""
        obs_list, info = self.client.reset(seed)
        streams = [EpisodeBuffer() for _ in range(self.actors)]
        hidden = None
        coverage = info.get("coverage", 0.0)
        while True:
            gstate = self._global_tensor(info)
            if deterministic:
                obs = _to_tensor_dict(obs_list)
                with torch.no_grad():
                    features, hidden = self.net.features(obs, hidden)
                    actions = self.net.actor_mean(features)
                step_actions = actions.clamp(-1.0, 1.0).numpy()
                obs_list, reward, terminated, truncated, info = self.client.step(step_actions)
                coverage = info.get("coverage", coverage)
                if terminated or truncated:
                    return streams, coverage
                continue
            actions, logprobs, values, hidden = self._act(obs_list, gstate, hidden)
            step_actions = actions.clamp(-1.0, 1.0).numpy()
            next_obs, reward, terminated, truncated, next_info = self.client.step(step_actions)
            for i in range(self.actors):
                stream = streams[i]
                stream.obs.append(obs_list[i])
                stream.actions.append(actions[i].numpy())
                stream.logprobs.append(float(logprobs[i]))
                stream.values.append(float(values[i]))
                stream.rewards.append(reward)
                if self.net.use_global:
                    stream.globals.append(np.asarray(info["global_state"], dtype=np.float32))
            obs_list, info = next_obs, next_info
            coverage = info.get("coverage", coverage)
            if terminated or truncated:
                if truncated and not terminated:
                    gstate = self._global_tensor(info)
                    obs = _to_tensor_dict(obs_list)
                    with torch.no_grad():
                        features, _ = self.net.features(obs, hidden)
                        for i in range(self.actors):
                            streams[i].bootstrap = float(
                                self.net.value(features[i : i + 1], i, global_state=gstate)
                            )
                return streams, coverage

    def _gae(self, stream: EpisodeBuffer):
        gamma = self.config.gamma
        lam = self.config.gae_lambda
        steps = len(stream)
        advantages = np.zeros(steps, dtype=np.float64)
        last_adv = 0.0
        next_value = stream.bootstrap
        for t in reversed(range(steps)):
            delta = stream.rewards[t] + gamma * next_value - stream.values[t]
            last_adv = delta + gamma * lam * last_adv
            advantages[t] = last_adv
            next_value = stream.values[t]
        returns = advantages + np.asarray(stream.values)
        return advantages, returns

    # ------------------------------------------------------------ updates
    def _update_feedforward(self, streams):
        cfg = self.config
        obs_all = []
        agent_ids = []
        actions = []
        logprobs = []
        advantages = []
        returns = []
        globals_all = []
        for agent_index, stream in streams:
            adv, ret = self._gae(stream)
            obs_all.extend(stream.obs)
            agent_ids.extend([agent_index] * len(stream))
            actions.extend(stream.actions)
            logprobs.extend(stream.logprobs)
            advantages.extend(adv)
            returns.extend(ret)
            if self.net.use_global:
                globals_all.extend(stream.globals)
        obs = _to_tensor_dict(obs_all)
        agent_ids = np.asarray(agent_ids)
        actions_t = torch.as_tensor(np.stack(actions), dtype=torch.float32)
        logprobs_t = torch.as_tensor(logprobs, dtype=torch.float32)
        adv_raw = torch.as_tensor(np.asarray(advantages), dtype=torch.float32)
        adv_t = (adv_raw - adv_raw.mean()) / (adv_raw.std() + 1e-8)
        ret_t = torch.as_tensor(np.asarray(returns), dtype=torch.float32)
        glob_t = (
            torch.as_tensor(np.stack(globals_all), dtype=torch.float32)
            if self.net.use_global
            else None
        )

        total = len(logprobs)
        metrics = {"policy_loss": [], "value_loss": [], "entropy": []}
        generator = torch.Generator().manual_seed(cfg.seed + self._episode_index)
        for _ in range(cfg.epochs):
            order = torch.randperm(total, generator=generator)
            for start in range(0, total, cfg.minibatch_size):
                idx = order[start : start + cfg.minibatch_size]
                batch_obs = {name: tensor[idx] for name, tensor in obs.items()}
                features, _ = self.net.features(batch_obs)
                dist = self.net.distribution(features)
                new_logprobs = dist.log_prob(actions_t[idx]).sum(-1)
                entropy = dist.entropy().sum(-1).mean()
                ratio = torch.exp(new_logprobs - logprobs_t[idx])
                clipped = torch.clamp(ratio, 1 - cfg.clip_ratio, 1 + cfg.clip_ratio)
                policy_loss = -torch.min(ratio * adv_t[idx], clipped * adv_t[idx]).mean()

                batch_glob = glob_t[idx] if glob_t is not None else None
                value_losses = []
                ids = agent_ids[idx.numpy()]
                for agent in np.unique(ids):
                    mask = torch.as_tensor(ids == agent)
                    value = self.net.value(
                        features[mask],
                        int(agent),
                        global_state=batch_glob[mask] if batch_glob is not None else None,
                    )
                    value_losses.append(((value - ret_t[idx][mask]) ** 2).mean())
                value_loss = torch.stack(value_losses).mean()

                loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
                self.optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(self.net.parameters(), cfg.max_grad_norm)
                self.optimizer.step()
                metrics["policy_loss"].append(float(policy_loss.detach()))
                metrics["value_loss"].append(float(value_loss.detach()))
                metrics["entropy"].append(float(entropy.detach()))
                with torch.no_grad():
                    raw = -torch.min(ratio * adv_raw[idx], clipped * adv_raw[idx]).mean()
                metrics.setdefault("policy_loss_raw", []).append(float(raw))
        metrics.setdefault("exploitability", []).append(float(-adv_raw.mean()))
        return {name: float(np.mean(vals)) for name, vals in metrics.items()}

    def _update_recurrent(self, streams):
        cfg = self.config
        prepared = []
        for agent_index, stream in streams:
            adv, ret = self._gae(stream)
            prepared.append(
                (
                    agent_index,
                    _to_tensor_dict(stream.obs),
                    torch.as_tensor(np.stack(stream.actions), dtype=torch.float32),
                    torch.as_tensor(stream.logprobs, dtype=torch.float32),
                    torch.as_tensor(adv, dtype=torch.float32),
                    torch.as_tensor(ret, dtype=torch.float32),
                    torch.as_tensor(np.stack(stream.globals), dtype=torch.float32)
                    if self.net.use_global
                    else None,
                )
            )
        adv_cat = torch.cat([p[4] for p in prepared])
        mean, std = adv_cat.mean(), adv_cat.std() + 1e-8

        metrics = {"policy_loss": [], "value_loss": [], "entropy": []}
        generator = torch.Generator().manual_seed(cfg.seed + self._episode_index)
        for _ in range(cfg.epochs):
            # shuffle whole sequences, never individual steps
            for seq_idx in torch.randperm(len(prepared), generator=generator):
                agent_index, obs, actions_t, logprobs_t, adv_t, ret_t, glob_t = prepared[
                    int(seq_idx)
                ]
                adv_n = (adv_t - mean) / std
                seq_obs = {name: tensor.unsqueeze(0) for name, tensor in obs.items()}
                features, _ = self.net.features_sequence(seq_obs)
                features = features.squeeze(0)
                dist = self.net.distribution(features)
                new_logprobs = dist.log_prob(actions_t).sum(-1)
                entropy = dist.entropy().sum(-1).mean()
                ratio = torch.exp(new_logprobs - logprobs_t)
                clipped = torch.clamp(ratio, 1 - cfg.clip_ratio, 1 + cfg.clip_ratio)
                policy_loss = -torch.min(ratio * adv_n, clipped * adv_n).mean()
                value = self.net.value(features, agent_index, global_state=glob_t)
                value_loss = ((value - ret_t) ** 2).mean()
                loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
                self.optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(self.net.parameters(), cfg.max_grad_norm)
                self.optimizer.step()
                metrics["policy_loss"].append(float(policy_loss.detach()))
                metrics["value_loss"].append(float(value_loss.detach()))
                metrics["entropy"].append(float(entropy.detach()))
                with torch.no_grad():
                    raw = -torch.min(ratio * adv_raw[idx], clipped * adv_raw[idx]).mean()
                metrics.setdefault("policy_loss_raw", []).append(float(raw))
        metrics.setdefault("exploitability", []).append(float(-adv_raw.mean()))
        return {name: float(np.mean(vals)) for name, vals in metrics.items()}

    def train_iteration(self):
        """Collect config.rollout_episodes episodes and run one update."""
        streams = []
        coverages = []
        for _ in range(self.config.rollout_episodes):
            episode_streams, coverage = self.run_episode(
                self.config.seed + self._episode_index
            )
            self._episode_index += 1
            coverages.append(coverage)
            streams.extend(enumerate(episode_streams))
        if self.config.recurrent:
            metrics = self._update_recurrent(streams)
        else:
            metrics = self._update_feedforward(streams)
        metrics["coverage"] = float(np.mean(coverages))
        for name, value in metrics.items():
            self.history.setdefault(name, []).append(value)
        return metrics

    def train(self, episodes: int):
        """Run PPO for the given episode budget; returns the loss history."""
        iterations = max(1, episodes // self.config.rollout_episodes)
        for _ in range(iterations):
            self.train_iteration()
        if self.log_dir:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            with open(self.log_dir / "learning_curves.json", "w", encoding="utf-8") as fh:
                json.dump(self.history, fh)
            self.save(self.log_dir / "checkpoint.pt")
        return self.history

    # ------------------------------------------------------------ persistence
    def save(self, path):
        torch.save(
            {
                "model": self.net.state_dict(),
                "config": dataclasses.asdict(self.config),
                "layout": self.layout,
            },
            path,
        )

    def load(self, path):
        payload = torch.load(path, weights_only=False)
        # the net stays shaped by the current config/layout, so a checkpoint
        # trained under different dimensions fails here
        self.net.load_state_dict(payload["model"])

    def evaluate(self, episodes: int, seed_base: int = 10_000):
        """Deterministic-mean-action episodes; returns coverage stats."""
        coverages = []
        for k in range(episodes):
            _, coverage = self.run_episode(seed_base + k, deterministic=True)
            coverages.append(coverage)
        return {
            "mean_coverage": float(np.mean(coverages)),
            "std_coverage": float(np.std(coverages)),
            "coverages": coverages,
        }
