"""Controllable rule-based user simulation for black-box policy evaluation.

The simulated user's current preference set blends attributes of their
historical items with attributes of the hidden target item. A personalization
weight alpha controls the blend (1 = purely historical, 0 = purely
item-centric) and drifts each round by a fixed evolution rate depending on
the click / non-click balance. Three weighted sampling strategies draw
attributes from the pools: uniform, proportional to historical frequency, or
proportional to inverse frequency.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .catalog import Catalog
from .errors import ConfigError
from .policy_env import QUERY, RECOMMEND, SIMULATOR_SOURCE, Action, Feedback

RANDOM = "random"
FREQUENCY = "frequency"
INVERSE_FREQUENCY = "inverse_frequency"
STRATEGIES = (RANDOM, FREQUENCY, INVERSE_FREQUENCY)


@dataclass(frozen=True)
class SimulatorConfig:
    alpha0: float = 0.5
    delta_lambda: float = 0.1
    his_strategy: str = FREQUENCY
    tar_strategy: str = INVERSE_FREQUENCY

    def validate(self) -> None:
        if not (0.0 <= self.alpha0 <= 1.0):
            raise ConfigError(f"alpha0 must be in [0, 1], got {self.alpha0}")
        if self.delta_lambda < 0.0:
            raise ConfigError(f"delta_lambda must be >= 0, got {self.delta_lambda}")
        for name in ("his_strategy", "tar_strategy"):
            if getattr(self, name) not in STRATEGIES:
                raise ConfigError(f"{name} must be one of {STRATEGIES}, got {getattr(self, name)!r}")


def sample_attributes(
    pool: dict[int, int], strategy: str, k: int, rng: np.random.Generator,
    exclude: set[int] | None = None,
) -> list[int]:
    """Weighted sampling without replacement; weights renormalized after
    each draw. Returns min(k, |pool|) attributes."""
    exclude = exclude or set()
    ids = sorted(a for a in pool if a not in exclude)
    if not ids or k <= 0:
        return []
    if strategy == RANDOM:
        weights = np.ones(len(ids))
    elif strategy == FREQUENCY:
        weights = np.array([float(pool[a]) for a in ids])
    elif strategy == INVERSE_FREQUENCY:
        weights = np.array([1.0 / pool[a] for a in ids])
    else:
        raise ConfigError(f"unknown sampling strategy {strategy!r}")
    chosen: list[int] = []
    avail = list(range(len(ids)))
    w = weights.copy()
    for _ in range(min(k, len(ids))):
        p = w[avail] / w[avail].sum()
        pick = avail[int(rng.choice(len(avail), p=p))]
        chosen.append(ids[pick])
        avail.remove(pick)
    return chosen


@dataclass
class SimUser:
    user: int
    target: int
    alpha: float
    delta_lambda: float
    his_pool: dict[int, int]
    tar_pool: dict[int, int]
    k_pref: int
    his_strategy: str
    tar_strategy: str
    preference: set[int] = field(default_factory=set)
    pinned: set[int] = field(default_factory=set)  # clicked attrs, never dropped
    target_attrs: frozenset[int] = frozenset()
    _rng: np.random.Generator = None

    def match_rate(self) -> float:
        return len(self.preference & self.target_attrs) / len(self.target_attrs)


def _compose_preference(sim: SimUser) -> None:
    """Rebuild the preference set for the current alpha: pinned clicks stay,
    the remaining slots split ceil(alpha * k) historical vs target, with
    duplicates resolved toward the historical draw and shortfalls backfilled
    from the target pool, then anywhere."""
    pref = set(sim.pinned)
    n_free = max(sim.k_pref - len(pref), 0)
    n_his = min(math.ceil(sim.alpha * sim.k_pref), n_free)
    n_tar = n_free - n_his
    his = sample_attributes(sim.his_pool, sim.his_strategy, n_his, sim._rng, exclude=pref)
    pref.update(his)
    tar = sample_attributes(sim.tar_pool, sim.tar_strategy, n_tar, sim._rng, exclude=pref)
    pref.update(tar)
    missing = sim.k_pref - len(pref)
    if missing > 0:  # backfill: target pool first, then historical
        extra = sample_attributes(sim.tar_pool, sim.tar_strategy, missing, sim._rng, exclude=pref)
        pref.update(extra)
        missing = sim.k_pref - len(pref)
        if missing > 0:
            pref.update(sample_attributes(sim.his_pool, sim.his_strategy, missing, sim._rng, exclude=pref))
    sim.preference = pref


def init_sim_user(
    user: int,
    target: int,
    history_items: list[int],
    catalog: Catalog,
    cfg: SimulatorConfig,
    seed: int,
) -> SimUser:
    """Initialize a simulated user from (user, history, target).

    The preference set size is pinned to the target item's attribute count;
    the historical pool counts attribute occurrences over the history items.
    """
    cfg.validate()
    if not history_items:
        raise ConfigError(f"user {user} has no history items")
    if target in history_items:
        history_items = [i for i in history_items if i != target]
        if not history_items:
            raise ConfigError(f"user {user}: history contains only the target item")
    his_pool = Counter(a for i in history_items for a in catalog.attrs_of(i))
    target_attrs = catalog.attrs_of(target)
    tar_pool = Counter(target_attrs)
    sim = SimUser(
        user=user,
        target=target,
        alpha=cfg.alpha0,
        delta_lambda=cfg.delta_lambda,
        his_pool=dict(his_pool),
        tar_pool=dict(tar_pool),
        k_pref=len(target_attrs),
        his_strategy=cfg.his_strategy,
        tar_strategy=cfg.tar_strategy,
        target_attrs=frozenset(target_attrs),
        _rng=np.random.default_rng(seed),
    )
    _compose_preference(sim)
    return sim


def respond(sim: SimUser, action: Action) -> Feedback:
    """Deterministic feedback: a queried attribute is clicked iff it is in
    the current preference set; a recommendation is accepted iff it contains
    the target item."""
    if action.kind == QUERY:
        clicked = tuple(a for a in action.ids if a in sim.preference)
        nonclicked = tuple(a for a in action.ids if a not in sim.preference)
        return Feedback(clicked, nonclicked, (), SIMULATOR_SOURCE)
    if action.kind == RECOMMEND:
        accepted = (sim.target,) if sim.target in action.ids else ()
        return Feedback((), (), accepted, SIMULATOR_SOURCE)
    raise ConfigError(f"unknown action kind {action.kind!r}")


def evolve(sim: SimUser, feedback: Feedback) -> None:
    """Adapt after a round: more clicks than non-clicks pulls alpha down
    (toward the target item), more non-clicks pushes it up (toward history);
    ties and recommendation-only rounds leave alpha unchanged. The
    preference set is then re-composed with clicked attributes pinned."""
    n_click, n_non = len(feedback.clicked), len(feedback.nonclicked)
    sim.pinned.update(feedback.clicked)
    if n_click == n_non:  # includes recommendation-only rounds (0 vs 0)
        if feedback.clicked:
            _compose_preference(sim)
        return
    if n_click > n_non:
        sim.alpha = min(max(sim.alpha - sim.delta_lambda, 0.0), 1.0)
    else:
        sim.alpha = min(max(sim.alpha + sim.delta_lambda, 0.0), 1.0)
    # snap accumulated float error at the boundaries so repeated fixed-size
    # steps land exactly on 0 or 1
    if abs(sim.alpha) < 1e-9:
        sim.alpha = 0.0
    elif abs(sim.alpha - 1.0) < 1e-9:
        sim.alpha = 1.0
    _compose_preference(sim)


def match_rate(sim: SimUser) -> float:
    return sim.match_rate()
