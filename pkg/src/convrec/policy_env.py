"""Conversational MDP around a trained preference model.

Each turn the policy either recommends items or queries attributes, drawn
from candidate pools pruned to the model's top-N. Reward is the summed
preference score of the chosen ids plus a per-turn penalty; the episode ends
when the turn budget runs out or the hidden target item is recommended.
During policy training the model itself produces the binary feedback
(model-based rollouts); during evaluation feedback is injected from an
external simulator and the model path can be disabled outright.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .catalog import Catalog
from .errors import ConfigError
from .user_model import PreferenceModel

RECOMMEND = "recommend"
QUERY = "query"

MODEL_SOURCE = "user_model"
SIMULATOR_SOURCE = "simulator"


@dataclass(frozen=True)
class Action:
    kind: str  # RECOMMEND or QUERY
    ids: tuple[int, ...]


@dataclass(frozen=True)
class Feedback:
    clicked: tuple[int, ...] = ()
    nonclicked: tuple[int, ...] = ()
    accepted_items: tuple[int, ...] = ()
    source: str = MODEL_SOURCE


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    done: bool
    success: bool
    feedback: Feedback


@dataclass(frozen=True)
class EnvConfig:
    t_max: int = 15
    top_n: int = 10
    max_recs_per_turn: int = 10
    max_queries_per_turn: int = 2
    turn_penalty: float = -1.0
    click_threshold: float = 0.5  # model-based feedback: attribute clicked iff score >= threshold
    model_feedback: bool = True


@dataclass
class ConversationState:
    user: int
    target: int
    t: int = 0
    done: bool = False
    success: bool = False
    clicked: list[int] = field(default_factory=list)
    nonclicked: list[int] = field(default_factory=list)
    candidate_items: list[int] = field(default_factory=list)
    candidate_attrs: list[int] = field(default_factory=list)


class ConversationEnv:
    """One episode at a time; create one env per parallel episode."""

    def __init__(
        self,
        model: PreferenceModel,
        catalog: Catalog,
        cfg: EnvConfig,
        history_by_user: list[set[int]] | None = None,
    ):
        self.model = model
        self.catalog = catalog
        self.cfg = cfg
        self.history_by_user = history_by_user or [set() for _ in range(catalog.n_users)]
        self.state: ConversationState | None = None
        self._item_scores: np.ndarray | None = None
        self._attr_scores: np.ndarray | None = None

    def reset(self, user: int, target: int) -> ConversationState:
        if not (0 <= user < self.catalog.n_users) or not (0 <= target < self.catalog.n_items):
            raise ConfigError(f"invalid episode pair ({user}, {target})")
        excluded = self.history_by_user[user] - {target}
        self.state = ConversationState(
            user=user,
            target=target,
            candidate_items=[i for i in range(self.catalog.n_items) if i not in excluded],
            candidate_attrs=list(range(self.catalog.n_attrs)),
        )
        self._refresh_scores()
        return self.state

    def _refresh_scores(self) -> None:
        st = self.state
        with torch.no_grad():
            s = self.model.encode_state(st.user, tuple(st.clicked), tuple(st.nonclicked))
            self._state_vec = s.detach().cpu().numpy().astype(np.float64)
            self._item_scores = (
                self.model.score_items(s, np.arange(self.catalog.n_items)).cpu().numpy().astype(np.float64)
            )
            self._attr_scores = self.model.score_attributes(s).cpu().numpy().astype(np.float64)

    @property
    def state_vector(self) -> np.ndarray:
        return self._state_vec

    def action_space(self, n: int | None = None) -> tuple[list[int], list[int]]:
        """Top-n unconsumed items and attributes by model score, ties broken
        by ascending id; shorter lists when fewer candidates remain."""
        n = self.cfg.top_n if n is None else n
        st = self.state
        items = sorted(st.candidate_items, key=lambda i: (-self._item_scores[i], i))[:n]
        attrs = sorted(st.candidate_attrs, key=lambda a: (-self._attr_scores[a], a))[:n]
        return items, attrs

    def build_action(self, kind: str) -> Action:
        """Fill the chosen action kind with the top of the pruned lists, up
        to the per-turn caps."""
        items, attrs = self.action_space()
        if kind == RECOMMEND:
            return Action(RECOMMEND, tuple(items[: self.cfg.max_recs_per_turn]))
        if kind == QUERY:
            return Action(QUERY, tuple(attrs[: self.cfg.max_queries_per_turn]))
        raise ConfigError(f"unknown action kind {kind!r}")

    def _validate(self, action: Action) -> None:
        st = self.state
        if st is None or st.done:
            raise ConfigError("step called on a finished or unstarted episode")
        if not action.ids:
            raise ConfigError("action has no ids")
        if action.kind == RECOMMEND:
            if len(action.ids) > self.cfg.max_recs_per_turn:
                raise ConfigError("too many items recommended in one turn")
            bad = [i for i in action.ids if i not in st.candidate_items]
        elif action.kind == QUERY:
            if len(action.ids) > self.cfg.max_queries_per_turn:
                raise ConfigError("too many attributes queried in one turn")
            bad = [a for a in action.ids if a not in st.candidate_attrs]
        else:
            raise ConfigError(f"unknown action kind {action.kind!r}")
        if bad:
            raise ConfigError(f"action ids not in the current candidate pool: {bad}")

    def model_feedback(self, action: Action) -> Feedback:
        """Model-based binary feedback used during policy training."""
        if not self.cfg.model_feedback:
            raise ConfigError("model-based feedback is disabled for this environment")
        st = self.state
        if action.kind == QUERY:
            clicked = tuple(a for a in action.ids if self._attr_scores[a] >= self.cfg.click_threshold)
            nonclicked = tuple(a for a in action.ids if a not in clicked)
            return Feedback(clicked, nonclicked, (), MODEL_SOURCE)
        accepted = (st.target,) if st.target in action.ids else ()
        return Feedback((), (), accepted, MODEL_SOURCE)

    def action_reward(self, action: Action) -> float:
        """Summed preference score of the action ids plus the turn penalty,
        computed from the pre-feedback state."""
        if action.kind == RECOMMEND:
            base = float(sum(self._item_scores[i] for i in action.ids))
        else:
            base = float(sum(self._attr_scores[a] for a in action.ids))
        return base + self.cfg.turn_penalty

    def step(self, action: Action, feedback: Feedback | None = None) -> StepOutcome:
        """Advance one turn. With feedback=None the environment is model-based
        and generates its own feedback; otherwise the caller supplies it
        (simulator-driven evaluation)."""
        self._validate(action)
        st = self.state
        if feedback is None:
            feedback = self.model_feedback(action)
        reward = self.action_reward(action)

        if action.kind == RECOMMEND:
            st.candidate_items = [i for i in st.candidate_items if i not in set(action.ids)]
        else:
            st.candidate_attrs = [a for a in st.candidate_attrs if a not in set(action.ids)]

        changed = bool(feedback.clicked or feedback.nonclicked)
        st.clicked.extend(feedback.clicked)
        st.nonclicked.extend(feedback.nonclicked)
        st.t += 1
        hit = st.target in feedback.accepted_items
        st.success = st.success or hit
        st.done = hit or st.t >= self.cfg.t_max
        if changed and not st.done:
            self._refresh_scores()
        return StepOutcome(reward=reward, done=st.done, success=hit, feedback=feedback)
