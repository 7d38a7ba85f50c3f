"""Evaluation harness: runs policies against the rule-based simulator and
aggregates success-rate / average-turn / match-rate metrics.

Evaluation is strictly black-box: every feedback record in a transcript
comes from the simulator, never from the learned user model (the model still
prunes the action space and supplies the state vector, which is the policy's
own machinery, not user feedback).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .catalog import Catalog, DataSplit
from .errors import ConfigError
from .policy_env import (
    QUERY,
    RECOMMEND,
    Action,
    ConversationEnv,
    EnvConfig,
)
from .ppo import PolicyNet, policy_forward, slot_kind, slot_mask
from .simulator import SimulatorConfig, evolve, init_sim_user, respond
from .user_model import PreferenceModel


@dataclass(frozen=True)
class TurnRecord:
    t: int
    kind: str
    ids: tuple[int, ...]
    clicked: tuple[int, ...]
    nonclicked: tuple[int, ...]
    accepted: tuple[int, ...]
    feedback_source: str
    reward: float
    alpha: float
    match_rate: float
    done: bool


@dataclass
class EpisodeTranscript:
    user: int
    target: int
    turns: list[TurnRecord] = field(default_factory=list)
    success_turn: int | None = None
    aborted: bool = False

    def to_json(self) -> str:
        doc = {
            "user": self.user,
            "target": self.target,
            "success_turn": self.success_turn,
            "aborted": self.aborted,
            "turns": [asdict(t) for t in self.turns],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


@dataclass
class MetricsReport:
    sr: dict[int, float]
    at: float
    match_curve: list[float]
    n_episodes: int


# --- policies ----------------------------------------------------------------
# A policy is a callable (env, rng) -> Action; rng is a per-episode stream so
# stochastic policies stay reproducible.


def ppo_policy(net: PolicyNet, top_n: int):
    """Greedy decoding of the trained actor: pick the highest-probability
    valid slot and emit the corresponding action kind."""

    def act(env: ConversationEnv, rng: np.random.Generator) -> Action:
        import torch

        items, attrs = env.action_space(top_n)
        mask = slot_mask(len(items), len(attrs), top_n)
        s = torch.tensor(env.state_vector, dtype=torch.float32)
        with torch.no_grad():
            probs, _ = policy_forward(net, s, mask)
        slot = int(torch.argmax(probs))
        return env.build_action(slot_kind(slot, top_n))

    return act


def abs_greedy_policy():
    """Recommends the model's top items every turn, never queries."""

    def act(env: ConversationEnv, rng: np.random.Generator) -> Action:
        return env.build_action(RECOMMEND)

    return act


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log(p) + (1.0 - p) * math.log(1.0 - p))


def max_entropy_policy():
    """Alternates query / recommend turns, query first. Query turns pick the
    attributes whose presence among the remaining candidate items has maximal
    binary entropy; ties break toward lower ids."""

    def act(env: ConversationEnv, rng: np.random.Generator) -> Action:
        st = env.state
        query_turn = st.t % 2 == 0  # turns are 1-based once stepped; first action queries
        if query_turn and st.candidate_attrs:
            cands = st.candidate_items
            n = max(len(cands), 1)
            scored = []
            for a in st.candidate_attrs:
                p = sum(1 for i in cands if a in env.catalog.attrs_of(i)) / n
                scored.append((-binary_entropy(p), a))
            scored.sort()
            ids = tuple(a for _, a in scored[: env.cfg.max_queries_per_turn])
            return Action(QUERY, ids)
        return env.build_action(RECOMMEND)

    return act


def random_policy():
    """Uniform choice over the currently valid action slots."""

    def act(env: ConversationEnv, rng: np.random.Generator) -> Action:
        items, attrs = env.action_space()
        n = env.cfg.top_n
        valid = list(range(min(len(items), n))) + [n + j for j in range(min(len(attrs), n))]
        slot = int(rng.choice(valid))
        return env.build_action(slot_kind(slot, n))

    return act


# --- harness -----------------------------------------------------------------

def run_episode(
    policy,
    model: PreferenceModel,
    catalog: Catalog,
    history_by_user: list[set[int]],
    pair: tuple[int, int],
    sim_cfg: SimulatorConfig,
    env_cfg: EnvConfig,
    seed: int,
) -> EpisodeTranscript:
    """One conversation: policy action -> simulator respond -> simulator
    evolve -> conversation-state update, until done. All feedback comes from
    the simulator; the environment's model-feedback path is disabled."""
    u, v = pair
    eval_env_cfg = EnvConfig(
        t_max=env_cfg.t_max,
        top_n=env_cfg.top_n,
        max_recs_per_turn=env_cfg.max_recs_per_turn,
        max_queries_per_turn=env_cfg.max_queries_per_turn,
        turn_penalty=env_cfg.turn_penalty,
        click_threshold=env_cfg.click_threshold,
        model_feedback=False,
    )
    env = ConversationEnv(model, catalog, eval_env_cfg, history_by_user)
    env.reset(u, v)
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, u, v])
    sim_seed_seq, policy_seed_seq = ss.spawn(2)
    sim = init_sim_user(u, v, sorted(history_by_user[u]), catalog, sim_cfg,
                        int(sim_seed_seq.generate_state(1)[0]))
    rng = np.random.default_rng(policy_seed_seq)

    transcript = EpisodeTranscript(user=u, target=v)
    while not env.state.done:
        try:
            action = policy(env, rng)
            fb = respond(sim, action)
            evolve(sim, fb)
            out = env.step(action, fb)
        except ConfigError:
            transcript.aborted = True
            break
        transcript.turns.append(TurnRecord(
            t=env.state.t,
            kind=action.kind,
            ids=tuple(action.ids),
            clicked=fb.clicked,
            nonclicked=fb.nonclicked,
            accepted=fb.accepted_items,
            feedback_source=fb.source,
            reward=out.reward,
            alpha=sim.alpha,
            match_rate=sim.match_rate(),
            done=out.done,
        ))
        if out.success:
            transcript.success_turn = env.state.t
    return transcript


def run_policy_eval(
    policy,
    model: PreferenceModel,
    catalog: Catalog,
    split: DataSplit,
    pairs: list[tuple[int, int]],
    sim_cfg: SimulatorConfig,
    env_cfg: EnvConfig,
    seed: int,
) -> list[EpisodeTranscript]:
    history = [set() for _ in range(catalog.n_users)]
    for u, v in split.train.records:
        history[u].add(v)
    out = []
    for u, v in pairs:
        if not history[u]:
            continue
        out.append(run_episode(policy, model, catalog, history, (u, v), sim_cfg, env_cfg, seed))
    return out


def eval_pairs(split: DataSplit, catalog: Catalog, limit: int | None = None) -> list[tuple[int, int]]:
    """Test-split pairs whose user has training history, id-ordered."""
    with_history = {u for u, _ in split.train.records}
    pairs = [(u, v) for u, v in split.test.records if u in with_history]
    return pairs[:limit] if limit else pairs


def compute_metrics(
    transcripts: list[EpisodeTranscript],
    t_levels: tuple[int, ...] = (5, 10, 15),
    t_max: int = 15,
) -> MetricsReport:
    """SR@T = fraction of episodes succeeding within T turns; AT = mean
    success turn with failures counted at the full budget."""
    if not transcripts:
        raise ConfigError("compute_metrics needs at least one transcript")
    sr = {
        t: sum(1 for tr in transcripts if tr.success_turn is not None and tr.success_turn <= t)
        / len(transcripts)
        for t in t_levels
    }
    at = float(np.mean([
        tr.success_turn if tr.success_turn is not None else t_max for tr in transcripts
    ]))
    curve = []
    for t in range(1, t_max + 1):
        vals = [rec.match_rate for tr in transcripts for rec in tr.turns if rec.t == t]
        curve.append(float(np.mean(vals)) if vals else float("nan"))
    return MetricsReport(sr=sr, at=at, match_curve=curve, n_episodes=len(transcripts))


def sweep(
    policy,
    model: PreferenceModel,
    catalog: Catalog,
    split: DataSplit,
    pairs: list[tuple[int, int]],
    alpha_grid: list[float],
    dl_grid: list[float],
    env_cfg: EnvConfig,
    base_sim_cfg: SimulatorConfig,
    seed: int,
) -> list[dict]:
    """Cross-product of (alpha0, delta_lambda) cells evaluated with common
    random numbers (same seed per cell) for low-variance comparisons."""
    rows = []
    for alpha in alpha_grid:
        for dl in dl_grid:
            cfg = SimulatorConfig(
                alpha0=alpha, delta_lambda=dl,
                his_strategy=base_sim_cfg.his_strategy,
                tar_strategy=base_sim_cfg.tar_strategy,
            )
            transcripts = run_policy_eval(policy, model, catalog, split, pairs, cfg, env_cfg, seed)
            m = compute_metrics(transcripts, t_max=env_cfg.t_max)
            rows.append({
                "alpha": alpha,
                "delta_lambda": dl,
                "SR@5": m.sr.get(5, float("nan")),
                "SR@10": m.sr.get(10, float("nan")),
                "SR@15": m.sr.get(15, float("nan")),
                "AT": m.at,
            })
    return rows
