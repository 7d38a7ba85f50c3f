"""Catalog data model: users, items, attributes, interaction logs.

Includes synthetic-world generation with planted per-user taste clusters,
per-user proportional train/valid/test splitting, and canonical on-disk
formats (catalog JSON + tab-separated interaction log).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CatalogLoadError, ConfigError

CATALOG_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Catalog:
    n_users: int
    n_items: int
    n_attrs: int
    item_attrs: tuple[tuple[int, ...], ...]  # item id -> ordered attribute ids

    def __post_init__(self):
        if len(self.item_attrs) != self.n_items:
            raise CatalogLoadError(
                f"item_attrs has {len(self.item_attrs)} entries, expected {self.n_items}"
            )
        for item, attrs in enumerate(self.item_attrs):
            if len(attrs) == 0:
                raise CatalogLoadError(f"item {item} has no attributes")
            for a in attrs:
                if not (0 <= a < self.n_attrs):
                    raise CatalogLoadError(
                        f"item {item} references attribute {a}, valid range is 0..{self.n_attrs - 1}"
                    )

    def attrs_of(self, item: int) -> tuple[int, ...]:
        return self.item_attrs[item]


@dataclass(frozen=True)
class InteractionLog:
    records: tuple[tuple[int, int], ...]  # (user, item), chronological

    def __len__(self) -> int:
        return len(self.records)

    def validate(self, catalog: Catalog) -> None:
        for i, (u, v) in enumerate(self.records):
            if not (0 <= u < catalog.n_users):
                raise CatalogLoadError(f"record {i}: user {u} out of range")
            if not (0 <= v < catalog.n_items):
                raise CatalogLoadError(f"record {i}: item {v} out of range")

    def by_user(self, n_users: int) -> list[list[int]]:
        """Item history per user, order preserved."""
        hist: list[list[int]] = [[] for _ in range(n_users)]
        for u, v in self.records:
            hist[u].append(v)
        return hist


@dataclass(frozen=True)
class DataSplit:
    train: InteractionLog
    valid: InteractionLog
    test: InteractionLog


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 50
    n_items: int = 200
    n_attrs: int = 30
    attrs_per_item: tuple[int, int] = (3, 6)
    interactions_per_user: tuple[int, int] = (10, 20)
    taste_size: int = 5
    taste_bias: float = 5.0  # sampling weight bonus per taste-attribute overlap

    def validate(self) -> None:
        for name in ("n_users", "n_items", "n_attrs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        lo, hi = self.attrs_per_item
        if lo < 1 or lo > hi:
            raise ConfigError(f"attrs_per_item range invalid: {lo}..{hi}")
        if hi > self.n_attrs:
            raise ConfigError("attrs_per_item max exceeds n_attrs")
        lo, hi = self.interactions_per_user
        if lo < 1 or lo > hi:
            raise ConfigError(f"interactions_per_user range invalid: {lo}..{hi}")


def generate_synthetic_world(config: WorldConfig, seed: int) -> tuple[Catalog, InteractionLog]:
    """Build a small world where each user's interactions concentrate on a
    planted taste cluster of attributes, so preference signal is learnable.

    Deterministic: identical (config, seed) yields identical output.
    """
    config.validate()
    rng = np.random.default_rng(seed)

    # Items draw attributes from a window around a random anchor so attributes
    # co-occur in clusters rather than independently.
    item_attrs: list[tuple[int, ...]] = []
    lo, hi = config.attrs_per_item
    for _ in range(config.n_items):
        k = int(rng.integers(lo, hi + 1))
        anchor = int(rng.integers(config.n_attrs))
        window = np.arange(anchor, anchor + max(2 * k, 4)) % config.n_attrs
        attrs = rng.choice(np.unique(window), size=min(k, len(np.unique(window))), replace=False)
        item_attrs.append(tuple(sorted(int(a) for a in attrs)))
    catalog = Catalog(config.n_users, config.n_items, config.n_attrs, tuple(item_attrs))

    attr_sets = [frozenset(a) for a in item_attrs]
    records: list[tuple[int, int]] = []
    ilo, ihi = config.interactions_per_user
    for u in range(config.n_users):
        taste = frozenset(
            int(a) for a in rng.choice(config.n_attrs, size=min(config.taste_size, config.n_attrs), replace=False)
        )
        weights = np.array(
            [1.0 + config.taste_bias * len(attr_sets[i] & taste) for i in range(config.n_items)]
        )
        weights /= weights.sum()
        n = int(rng.integers(ilo, ihi + 1))
        replace = n > config.n_items
        items = rng.choice(config.n_items, size=n, replace=replace, p=weights)
        records.extend((u, int(v)) for v in items)
    return catalog, InteractionLog(tuple(records))


def split_interactions(log: InteractionLog, ratios: tuple[float, float, float], seed: int, n_users: int | None = None) -> DataSplit:
    """Split per user by ratio so every evaluated user has training history.

    Users with fewer than 3 records contribute everything to train. Leftover
    records after per-user floor allocation go to whichever split is furthest
    behind its global target, keeping overall sizes within rounding of the
    configured ratios.
    """
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    if n_users is None:
        n_users = max((u for u, _ in log.records), default=-1) + 1

    per_user: list[list[int]] = [[] for _ in range(n_users)]
    for idx, (u, _) in enumerate(log.records):
        per_user[u].append(idx)

    rng = np.random.default_rng(seed)
    ideal = [0.0, 0.0, 0.0]
    assigned = [0, 0, 0]
    membership = np.zeros(len(log.records), dtype=np.int64)  # 0 train / 1 valid / 2 test
    for u in range(n_users):
        idxs = per_user[u]
        n = len(idxs)
        if n == 0:
            continue
        if n < 3:
            ideal[0] += n
            assigned[0] += n
            continue
        for s in range(3):
            ideal[s] += n * ratios[s]
        counts = [int(np.floor(n * r)) for r in ratios]
        leftover = n - sum(counts)
        for _ in range(leftover):
            deficits = [ideal[s] - (assigned[s] + counts[s]) for s in range(3)]
            s = int(np.argmax(deficits))
            counts[s] += 1
        for s in range(3):
            assigned[s] += counts[s]
        perm = rng.permutation(n)
        labels = np.zeros(n, dtype=np.int64)
        labels[perm[counts[0] : counts[0] + counts[1]]] = 1
        labels[perm[counts[0] + counts[1] :]] = 2
        for pos, lab in zip(idxs, labels):
            membership[pos] = lab

    parts: list[list[tuple[int, int]]] = [[], [], []]
    for idx, rec in enumerate(log.records):
        parts[membership[idx]].append(rec)
    return DataSplit(*(InteractionLog(tuple(p)) for p in parts))


# --- on-disk formats ---------------------------------------------------------

def catalog_to_json(catalog: Catalog) -> str:
    doc = {
        "version": CATALOG_FORMAT_VERSION,
        "n_users": catalog.n_users,
        "n_items": catalog.n_items,
        "n_attrs": catalog.n_attrs,
        "item_attrs": [list(a) for a in catalog.item_attrs],
    }
    return json.dumps(doc, separators=(",", ":"))


def save_catalog(catalog: Catalog, log: InteractionLog, catalog_path: Path, log_path: Path) -> None:
    catalog_path = Path(catalog_path)
    log_path = Path(log_path)
    catalog_path.write_text(catalog_to_json(catalog) + "\n", encoding="utf-8")
    lines = "".join(f"{u}\t{v}\n" for u, v in log.records)
    log_path.write_text(lines, encoding="utf-8")


def load_catalog(catalog_path: Path, log_path: Path) -> tuple[Catalog, InteractionLog]:
    catalog_path = Path(catalog_path)
    log_path = Path(log_path)
    try:
        doc = json.loads(catalog_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CatalogLoadError(f"{catalog_path}: {e}") from e
    if doc.get("version") != CATALOG_FORMAT_VERSION:
        raise CatalogLoadError(f"{catalog_path}: unsupported version {doc.get('version')!r}")
    for key in ("n_users", "n_items", "n_attrs", "item_attrs"):
        if key not in doc:
            raise CatalogLoadError(f"{catalog_path}: missing field {key!r}")
    catalog = Catalog(
        doc["n_users"], doc["n_items"], doc["n_attrs"],
        tuple(tuple(int(a) for a in attrs) for attrs in doc["item_attrs"]),
    )

    records: list[tuple[int, int]] = []
    try:
        text = log_path.read_text(encoding="utf-8")
    except OSError as e:
        raise CatalogLoadError(f"{log_path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CatalogLoadError(f"{log_path}:{lineno}: expected 'user<TAB>item', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise CatalogLoadError(f"{log_path}:{lineno}: non-integer id in {line!r}") from None
        if not (0 <= u < catalog.n_users):
            raise CatalogLoadError(f"{log_path}:{lineno}: user {u} out of range")
        if not (0 <= v < catalog.n_items):
            raise CatalogLoadError(f"{log_path}:{lineno}: item {v} out of range")
        records.append((u, v))
    return catalog, InteractionLog(tuple(records))
