"""PPO over the model-based conversation environment.

Actor and critic are separate small MLPs over the preference state vector.
The actor addresses a fixed 2N-slot layout: slots 0..N-1 anchor the ranked
candidate items (a recommend action), slots N..2N-1 anchor the ranked
candidate attributes (a query action); slots without a ranked candidate are
masked out. Training uses GAE advantages, the clipped surrogate objective,
a value MSE term, and an entropy bonus.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .catalog import Catalog, DataSplit
from .errors import ConfigError
from .policy_env import QUERY, RECOMMEND, ConversationEnv, EnvConfig
from .user_model import PreferenceModel


@dataclass(frozen=True)
class PPOHyper:
    iterations: int = 200
    rollout_steps: int = 2048
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lam: float = 0.95
    clip_eps: float = 0.5
    c_vf: float = 0.5
    c_ent: float = 0.01
    minibatch_passes: int = 4
    n_minibatches: int = 4
    hidden: int = 64
    top_n: int = 10


class PolicyNet(nn.Module):
    def __init__(self, d: int, n_slots: int, hidden: int = 64):
        super().__init__()
        self.d, self.n_slots, self.hidden = d, n_slots, hidden
        self.actor = nn.Sequential(nn.Linear(d, hidden), nn.ReLU(), nn.Linear(hidden, n_slots))
        self.critic = nn.Sequential(nn.Linear(d, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def meta(self) -> dict:
        return {"d": self.d, "n_slots": self.n_slots, "hidden": self.hidden}


def policy_forward(net: PolicyNet, s: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Masked action distribution and value estimate.

    Masked slots get probability exactly zero (softmax over -inf logits).
    Accepts single (d,)/(n_slots,) inputs or batches.
    """
    if not mask.any():
        raise ConfigError("all action slots are masked")
    if mask.dim() > 1 and not mask.any(dim=-1).all():
        raise ConfigError("a batch row has all action slots masked")
    logits = net.actor(s)
    logits = torch.where(mask, logits, torch.tensor(float("-inf"), dtype=logits.dtype))
    probs = torch.softmax(logits, dim=-1)
    value = net.critic(s).squeeze(-1)
    return probs, value


def masked_log_probs(net: PolicyNet, s: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    # Large finite fill instead of -inf: keeps every gradient finite while the
    # masked probabilities still underflow to exactly zero.
    logits = net.actor(s)
    logits = logits.masked_fill(~mask, -1e9)
    return torch.log_softmax(logits, dim=-1)


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    gamma: float = 0.99,
    gae_lam: float = 0.95,
) -> tuple[np.ndarray, np.ndarray]:
    """Raw (un-normalized) GAE advantages and returns.

    Episodes are contiguous in the buffer; the bootstrap value after a done
    step is zero, so no out-of-buffer value is needed as long as the buffer
    ends on an episode boundary.
    """
    n = len(rewards)
    adv = np.zeros(n, dtype=np.float64)
    gae = 0.0
    for t in range(n - 1, -1, -1):
        next_v = 0.0 if (t == n - 1 or dones[t]) else values[t + 1]
        delta = rewards[t] + gamma * next_v * (1.0 - dones[t]) - values[t]
        gae = delta + gamma * gae_lam * (1.0 - dones[t]) * gae
        adv[t] = gae
    returns = adv + values
    return adv, returns


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8)


def ppo_loss(
    net: PolicyNet,
    batch: dict[str, torch.Tensor],
    clip_eps: float = 0.5,
    c_vf: float = 0.5,
    c_ent: float = 0.01,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Total objective: -L_clip + c_vf * L_value - c_ent * entropy."""
    logp_all = masked_log_probs(net, batch["states"], batch["masks"])
    new_logp = logp_all.gather(1, batch["slots"][:, None]).squeeze(1)
    ratio = torch.exp(new_logp - batch["old_logps"])
    adv = batch["advantages"]
    unclipped = ratio * adv
    clipped = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    l_clip = torch.minimum(unclipped, clipped).mean()

    _, value = policy_forward(net, batch["states"], batch["masks"])
    l_vf = ((value - batch["returns"]) ** 2).mean()

    probs = torch.exp(logp_all)
    ent_terms = torch.where(probs > 0, -probs * logp_all, torch.zeros_like(probs))
    entropy = ent_terms.sum(dim=-1).mean()

    total = -l_clip + c_vf * l_vf - c_ent * entropy
    components = {
        "loss_clip": float(l_clip.detach()),
        "loss_vf": float(l_vf.detach()),
        "entropy": float(entropy.detach()),
    }
    return total, components


def slot_mask(n_items: int, n_attrs: int, top_n: int, dtype=torch.bool) -> torch.Tensor:
    mask = torch.zeros(2 * top_n, dtype=dtype)
    mask[: min(n_items, top_n)] = True
    mask[top_n : top_n + min(n_attrs, top_n)] = True
    return mask


def slot_kind(slot: int, top_n: int) -> str:
    return RECOMMEND if slot < top_n else QUERY


def train_policy(
    model: PreferenceModel,
    catalog: Catalog,
    split: DataSplit,
    env_cfg: EnvConfig,
    hyper: PPOHyper,
    seed: int,
) -> tuple[PolicyNet, list[dict]]:
    """Rollout/update loop against the model-based environment.

    Episode start pairs are drawn from the validation split (training split
    as fallback). On a non-finite loss the last-good parameters are restored
    and training stops early with a 'diverged' log row. Deterministic for a
    fixed seed in this single-environment configuration.
    """
    pairs = list(split.valid.records) or list(split.train.records)
    if not pairs:
        raise ConfigError("no interaction pairs available for policy training")
    torch.manual_seed(seed)
    torch.set_num_threads(1)

    history = [set() for _ in range(catalog.n_users)]
    for u, v in split.train.records:
        history[u].add(v)

    net = PolicyNet(model.d, 2 * hyper.top_n, hyper.hidden)
    opt = torch.optim.Adam(net.parameters(), lr=hyper.lr)
    rng = np.random.default_rng(seed)
    env = ConversationEnv(model, catalog, env_cfg, history)

    log_rows: list[dict] = []
    last_good = copy.deepcopy(net.state_dict())
    episode_open = False
    for it in range(hyper.iterations):
        buf = {k: [] for k in ("states", "masks", "slots", "old_logps", "rewards", "values", "dones")}
        ep_rewards: list[float] = []
        ep_successes: list[bool] = []
        cur_reward = 0.0
        while len(buf["rewards"]) < hyper.rollout_steps or episode_open:
            if not episode_open:
                u, v = pairs[int(rng.integers(len(pairs)))]
                env.reset(u, v)
                episode_open = True
                cur_reward = 0.0
            s = torch.tensor(env.state_vector, dtype=torch.float32)
            items, attrs = env.action_space(hyper.top_n)
            mask = slot_mask(len(items), len(attrs), hyper.top_n)
            with torch.no_grad():
                probs, value = policy_forward(net, s, mask)
            p = probs.numpy().astype(np.float64)
            p /= p.sum()
            slot = int(rng.choice(len(p), p=p))
            action = env.build_action(slot_kind(slot, hyper.top_n))
            out = env.step(action)
            cur_reward += out.reward
            buf["states"].append(s.numpy())
            buf["masks"].append(mask.numpy())
            buf["slots"].append(slot)
            buf["old_logps"].append(float(np.log(p[slot])))
            buf["rewards"].append(out.reward)
            buf["values"].append(float(value))
            buf["dones"].append(float(out.done))
            if out.done:
                episode_open = False
                ep_rewards.append(cur_reward)
                ep_successes.append(env.state.success)

        rewards = np.array(buf["rewards"])
        values = np.array(buf["values"])
        dones = np.array(buf["dones"])
        adv, returns = compute_gae(rewards, values, dones, hyper.gamma, hyper.gae_lam)
        adv = normalize_advantages(adv)

        batch_all = {
            "states": torch.tensor(np.array(buf["states"]), dtype=torch.float32),
            "masks": torch.tensor(np.array(buf["masks"]), dtype=torch.bool),
            "slots": torch.tensor(buf["slots"], dtype=torch.long),
            "old_logps": torch.tensor(buf["old_logps"], dtype=torch.float32),
            "advantages": torch.tensor(adv, dtype=torch.float32),
            "returns": torch.tensor(returns, dtype=torch.float32),
        }
        n = len(rewards)
        comps = {"loss_clip": 0.0, "loss_vf": 0.0, "entropy": 0.0}
        n_updates = 0
        diverged = False
        for _ in range(hyper.minibatch_passes):
            order = rng.permutation(n)
            for chunk in np.array_split(order, hyper.n_minibatches):
                mb = {k: v[torch.tensor(chunk, dtype=torch.long)] for k, v in batch_all.items()}
                loss, c = ppo_loss(net, mb, hyper.clip_eps, hyper.c_vf, hyper.c_ent)
                if not torch.isfinite(loss):
                    diverged = True
                    break
                opt.zero_grad()
                loss.backward()
                opt.step()
                for k in comps:
                    comps[k] += c[k]
                n_updates += 1
            if diverged:
                break
        if diverged:
            net.load_state_dict(last_good)
            log_rows.append({"iter": it, "mean_reward": float("nan"), "success_rate": float("nan"),
                             "loss_clip": float("nan"), "loss_vf": float("nan"),
                             "entropy": float("nan"), "diverged": True})
            break
        last_good = copy.deepcopy(net.state_dict())
        log_rows.append({
            "iter": it,
            "mean_reward": float(np.mean(ep_rewards)) if ep_rewards else float("nan"),
            "success_rate": float(np.mean(ep_successes)) if ep_successes else float("nan"),
            **{k: v / max(n_updates, 1) for k, v in comps.items()},
            "diverged": False,
        })
    net.eval()
    return net, log_rows
