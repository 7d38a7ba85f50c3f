import numpy as np
import pytest
import torch

from convrec.catalog import (
    Catalog,
    InteractionLog,
    WorldConfig,
    generate_synthetic_world,
    split_interactions,
)
from convrec.user_model import (
    ExampleGenConfig,
    PreferenceModel,
    TrainingExample,
    UserModelHyper,
    train_user_model,
)

TINY_WORLD = WorldConfig(
    n_users=6, n_items=20, n_attrs=8,
    attrs_per_item=(2, 4), interactions_per_user=(6, 10), taste_size=3,
)


@pytest.fixture(scope="session")
def tiny_world():
    return generate_synthetic_world(TINY_WORLD, seed=11)


@pytest.fixture(scope="session")
def tiny_split(tiny_world):
    _, log = tiny_world
    return split_interactions(log, (0.7, 0.15, 0.15), seed=12, n_users=TINY_WORLD.n_users)


@pytest.fixture(scope="session")
def tiny_model(tiny_world):
    catalog, _ = tiny_world
    torch.manual_seed(3)
    model = PreferenceModel(catalog.n_users, catalog.n_items, catalog.n_attrs, d=16, n_layers=1)
    model.eval()
    return model


@pytest.fixture(scope="session")
def trained_tiny(tiny_world, tiny_split):
    catalog, _ = tiny_world
    model, rows = train_user_model(
        tiny_split, catalog,
        UserModelHyper(d=16, n_layers=1, batch_size=64, epochs=8),
        ExampleGenConfig(max_click_len=3, max_nonclick_len=3, n_item_negatives=10),
        seed=21,
    )
    return model, rows


def small_model(n_users=4, n_items=6, n_attrs=5, d=4, n_layers=1, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    model = PreferenceModel(n_users, n_items, n_attrs, d=d, n_layers=n_layers)
    if dtype == torch.float64:
        model = model.double()
    return model


def random_example(n_items=6, n_attrs=5, rng=None) -> TrainingExample:
    rng = rng or np.random.default_rng(0)
    attrs = list(rng.permutation(n_attrs))
    n_click = int(rng.integers(0, 3))
    n_non = int(rng.integers(0, 2))
    p_click = tuple(int(a) for a in attrs[:n_click])
    p_nonclick = tuple(int(a) for a in attrs[n_click : n_click + n_non])
    pos = int(rng.integers(n_items))
    negs = tuple(int(i) for i in rng.permutation(n_items) if i != pos)[:2]
    labels = tuple(sorted(set(p_click) | {int(rng.integers(n_attrs))}))
    return TrainingExample(int(rng.integers(4)), p_click, p_nonclick, labels, pos, negs)
