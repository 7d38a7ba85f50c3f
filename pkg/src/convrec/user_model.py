"""Preference-estimation user model.

A multi-task network that encodes (user, clicked attributes, non-clicked
attributes) into a preference state vector, then scores candidate items
(dot product + sigmoid) and all attributes (linear head + sigmoid). Trained
with a joint binary cross-entropy loss on logged interactions; a finite
difference gradient check verifies the backward pass end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .catalog import Catalog, DataSplit, InteractionLog
from .errors import ConfigError, NumericError

PROB_EPS = 1e-7  # probability clipping before logs, keeps BCE finite


@dataclass(frozen=True)
class ExampleGenConfig:
    max_click_len: int = 5
    max_nonclick_len: int = 5
    n_item_negatives: int = 2000
    label_mix: float = 0.5  # fraction of the target item's attrs mixed into the attr labels


@dataclass(frozen=True)
class TrainingExample:
    user: int
    p_click: tuple[int, ...]
    p_nonclick: tuple[int, ...]
    attr_labels: tuple[int, ...]  # Y_p, multi-hot support
    item_pos: int                 # Y_v
    item_negs: tuple[int, ...]


@dataclass(frozen=True)
class UserModelHyper:
    d: int = 64
    n_layers: int = 4
    batch_size: int = 512
    lr: float = 1e-3
    lam: float = 0.8  # item-loss weight; attribute loss gets 1 - lam
    epochs: int = 30
    use_positions: bool = False


def generate_training_example(
    u: int,
    v: int,
    history: InteractionLog,
    catalog: Catalog,
    cfg: ExampleGenConfig,
    rng: np.random.Generator,
) -> TrainingExample:
    """Build one supervised example from a logged (u, v) pair.

    Clicked/non-clicked attributes are disjoint uniform samples from the
    attribute pool of u's historical items; requested lengths are truncated
    to the pool size. Attribute labels combine the clicked sample with a
    random share of the target item's attributes.
    """
    hist_items = [iv for hu, iv in history.records if hu == u]
    if not hist_items:
        raise ConfigError(f"user {u} has no history, cannot generate example")
    pool = sorted({a for iv in hist_items for a in catalog.attrs_of(iv)})

    n_click = min(cfg.max_click_len, len(pool))
    p_click = tuple(int(a) for a in rng.choice(pool, size=n_click, replace=False)) if n_click else ()
    rest = [a for a in pool if a not in set(p_click)]
    n_non = min(cfg.max_nonclick_len, len(rest))
    p_nonclick = tuple(int(a) for a in rng.choice(rest, size=n_non, replace=False)) if n_non else ()

    v_attrs = list(catalog.attrs_of(v))
    n_mix = math.ceil(cfg.label_mix * len(v_attrs))
    mixed = rng.choice(v_attrs, size=min(n_mix, len(v_attrs)), replace=False) if n_mix else []
    attr_labels = tuple(sorted(set(p_click) | {int(a) for a in mixed}))

    others = np.setdiff1d(np.arange(catalog.n_items), [v])
    n_neg = min(cfg.n_item_negatives, len(others))
    negs = tuple(int(i) for i in rng.choice(others, size=n_neg, replace=False))
    return TrainingExample(u, p_click, p_nonclick, attr_labels, v, negs)


class EncoderLayer(nn.Module):
    """Pre-layer-norm transformer block with single-head attention and a
    4x feed-forward expansion."""

    def __init__(self, d: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.ln2 = nn.LayerNorm(d)
        self.wq = nn.Linear(d, d, bias=False)
        self.wk = nn.Linear(d, d, bias=False)
        self.wv = nn.Linear(d, d, bias=False)
        self.wo = nn.Linear(d, d, bias=False)
        self.ff = nn.Sequential(nn.Linear(d, 4 * d), nn.ReLU(), nn.Linear(4 * d, d))
        self.scale = 1.0 / math.sqrt(d)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        # x: (B, L, d); key_mask: (B, L) True where the position is real
        h = self.ln1(x)
        q, k, v = self.wq(h), self.wk(h), self.wv(h)
        scores = torch.matmul(q, k.transpose(-2, -1)) * self.scale  # (B, L, L)
        scores = scores.masked_fill(~key_mask[:, None, :], -1e9)
        attn = torch.softmax(scores, dim=-1)
        x = x + self.wo(torch.matmul(attn, v))
        x = x + self.ff(self.ln2(x))
        return x


class PreferenceModel(nn.Module):
    """State tracker plus item/attribute ranking heads."""

    def __init__(
        self,
        n_users: int,
        n_items: int,
        n_attrs: int,
        d: int = 64,
        n_layers: int = 4,
        use_positions: bool = False,
        max_seq_len: int = 256,
    ):
        super().__init__()
        self.n_users, self.n_items, self.n_attrs = n_users, n_items, n_attrs
        self.d, self.n_layers = d, n_layers
        self.use_positions = use_positions
        self.user_emb = nn.Embedding(n_users, d)
        self.item_emb = nn.Embedding(n_items, d)
        self.attr_emb = nn.Embedding(n_attrs, d)
        self.pos_emb = nn.Embedding(max_seq_len, d) if use_positions else None
        self.layers = nn.ModuleList(EncoderLayer(d) for _ in range(n_layers))
        self.state_mlp = nn.Sequential(nn.Linear(3 * d, d), nn.ReLU(), nn.Linear(d, d))
        self.attr_head = nn.Linear(d, n_attrs)

    def meta(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_attrs": self.n_attrs,
            "d": self.d,
            "n_layers": self.n_layers,
            "use_positions": self.use_positions,
        }

    def _encode_sequence(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Encode padded attribute id sequences and mean-pool the valid
        positions; all-padding rows pool to zero."""
        if ids.shape[1] == 0:
            return torch.zeros(ids.shape[0], self.d, dtype=self.user_emb.weight.dtype,
                               device=ids.device)
        x = self.attr_emb(ids) * mask[:, :, None]
        if self.pos_emb is not None:
            pos = torch.arange(ids.shape[1], device=ids.device)
            x = x + self.pos_emb(pos)[None, :, :] * mask[:, :, None]
        safe_mask = mask.bool() | ~mask.bool().any(dim=1, keepdim=True)  # avoid all-masked softmax
        for layer in self.layers:
            x = layer(x, safe_mask)
        counts = mask.sum(dim=1, keepdim=True).clamp(min=1.0)
        return (x * mask[:, :, None]).sum(dim=1) / counts

    def encode_batch(
        self,
        users: torch.Tensor,
        click_ids: torch.Tensor,
        click_mask: torch.Tensor,
        nonclick_ids: torch.Tensor,
        nonclick_mask: torch.Tensor,
    ) -> torch.Tensor:
        h_click = self._encode_sequence(click_ids, click_mask)
        h_nonclick = self._encode_sequence(nonclick_ids, nonclick_mask)
        u = self.user_emb(users)
        return self.state_mlp(torch.cat([u, h_click, h_nonclick], dim=-1))

    def encode_state(
        self, user: int, p_click: tuple[int, ...] | list[int], p_nonclick: tuple[int, ...] | list[int]
    ) -> torch.Tensor:
        """State vector for a single (user, feedback) context."""
        dtype = self.user_emb.weight.dtype
        dev = self.user_emb.weight.device

        def pack(seq):
            ids = torch.tensor([list(seq)], dtype=torch.long, device=dev) if len(seq) else torch.zeros(1, 0, dtype=torch.long, device=dev)
            mask = torch.ones(1, len(seq), dtype=dtype, device=dev)
            return ids, mask

        ci, cm = pack(p_click)
        ni, nm = pack(p_nonclick)
        users = torch.tensor([user], dtype=torch.long, device=dev)
        return self.encode_batch(users, ci, cm, ni, nm)[0]

    def score_items(self, s: torch.Tensor, candidates) -> torch.Tensor:
        """Sigmoid of the dot product between the state and candidate item
        embeddings; accepts a single state (d,) or a batch (B, d)."""
        cand = torch.as_tensor(np.asarray(candidates), dtype=torch.long, device=s.device)
        e = self.item_emb(cand)
        if s.dim() == 1:
            return torch.sigmoid(e @ s)
        return torch.sigmoid(torch.einsum("bmd,bd->bm", e, s))

    def score_attributes(self, s: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.attr_head(s))


def joint_loss(
    item_probs: torch.Tensor,
    item_labels: torch.Tensor,
    attr_probs: torch.Tensor,
    attr_labels: torch.Tensor,
    lam: float,
) -> torch.Tensor:
    """Weighted sum of the item and attribute mean BCEs:
    lam * L_item + (1 - lam) * L_attr. Probabilities are clipped before logs."""
    if not (0.0 <= lam <= 1.0):
        raise ConfigError(f"item-loss weight must be in [0, 1], got {lam}")
    l_item = _bce(item_probs, item_labels)
    l_attr = _bce(attr_probs, attr_labels)
    return lam * l_item + (1.0 - lam) * l_attr


def _bce(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(labels * torch.log(p) + (1.0 - labels) * torch.log(1.0 - p)).mean()


# --- batching ---------------------------------------------------------------

def _pad(seqs: list[tuple[int, ...]], dtype) -> tuple[torch.Tensor, torch.Tensor]:
    max_len = max((len(s) for s in seqs), default=0)
    ids = torch.zeros(len(seqs), max_len, dtype=torch.long)
    mask = torch.zeros(len(seqs), max_len, dtype=dtype)
    for i, s in enumerate(seqs):
        if s:
            ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
            mask[i, : len(s)] = 1.0
    return ids, mask


def batch_loss(model: PreferenceModel, examples: list[TrainingExample], lam: float) -> torch.Tensor:
    dtype = model.user_emb.weight.dtype
    users = torch.tensor([e.user for e in examples], dtype=torch.long)
    ci, cm = _pad([e.p_click for e in examples], dtype)
    ni, nm = _pad([e.p_nonclick for e in examples], dtype)
    s = model.encode_batch(users, ci, cm, ni, nm)

    # Item task: per example, one positive plus its negatives. Negative counts
    # match within a generated dataset, so a rectangular batch is fine.
    n_neg = len(examples[0].item_negs)
    cand = torch.tensor(
        [[e.item_pos, *e.item_negs] for e in examples], dtype=torch.long
    )
    item_probs = model.score_items(s, cand)
    item_labels = torch.zeros(len(examples), 1 + n_neg, dtype=dtype)
    item_labels[:, 0] = 1.0

    attr_probs = model.score_attributes(s)
    attr_labels = torch.zeros(len(examples), model.n_attrs, dtype=dtype)
    for i, e in enumerate(examples):
        for a in e.attr_labels:
            attr_labels[i, a] = 1.0
    return joint_loss(item_probs, item_labels, attr_probs, attr_labels, lam)


def build_examples(
    log: InteractionLog,
    history: InteractionLog,
    catalog: Catalog,
    gen_cfg: ExampleGenConfig,
    seed: int,
) -> list[TrainingExample]:
    """One example per (u, v) record; users without history are skipped."""
    rng = np.random.default_rng(seed)
    hist_by_user = history.by_user(catalog.n_users)
    out: list[TrainingExample] = []
    for u, v in log.records:
        if not hist_by_user[u]:
            continue
        user_hist = InteractionLog(tuple((u, iv) for iv in hist_by_user[u]))
        out.append(generate_training_example(u, v, user_hist, catalog, gen_cfg, rng))
    return out


def train_user_model(
    split: DataSplit,
    catalog: Catalog,
    hyper: UserModelHyper,
    gen_cfg: ExampleGenConfig,
    seed: int,
) -> tuple[PreferenceModel, list[dict]]:
    """Adam-train the preference model; returns the parameters with the best
    validation loss and a per-epoch log (epoch, train_loss, valid_loss)."""
    if len(split.train) == 0:
        raise ConfigError("train split is empty")
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    model = PreferenceModel(
        catalog.n_users, catalog.n_items, catalog.n_attrs,
        d=hyper.d, n_layers=hyper.n_layers, use_positions=hyper.use_positions,
    )
    train_ex = build_examples(split.train, split.train, catalog, gen_cfg, seed)
    valid_ex = build_examples(split.valid, split.train, catalog, gen_cfg, seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=hyper.lr)
    rng = np.random.default_rng(seed + 2)

    log_rows: list[dict] = []
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    best_valid = _eval_loss(model, valid_ex, hyper)
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(train_ex))
        epoch_losses = []
        for start in range(0, len(train_ex), hyper.batch_size):
            batch = [train_ex[i] for i in order[start : start + hyper.batch_size]]
            loss = batch_loss(model, batch, hyper.lam)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss in epoch {epoch}, batch starting at {start}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.detach()))
        valid_loss = _eval_loss(model, valid_ex, hyper)
        log_rows.append({
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "valid_loss": valid_loss,
        })
        if valid_loss < best_valid:
            best_valid = valid_loss
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    model.load_state_dict(best_state)
    model.eval()
    return model, log_rows


def _eval_loss(model: PreferenceModel, examples: list[TrainingExample], hyper: UserModelHyper) -> float:
    if not examples:
        return float("nan")
    with torch.no_grad():
        losses = []
        for start in range(0, len(examples), hyper.batch_size):
            batch = examples[start : start + hyper.batch_size]
            losses.append(float(batch_loss(model, batch, hyper.lam)) * len(batch))
    return float(sum(losses) / len(examples))


# --- gradient verification --------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    passed: bool
    per_param: dict[str, float] = field(default_factory=dict)


def finite_difference_check(
    loss_fn,
    module: nn.Module,
    tol: float,
    h: float = 1e-5,
    max_elems_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare autograd gradients of loss_fn() against central finite
    differences for every parameter tensor of the module.

    loss_fn takes no arguments and must be deterministic. The module should
    be in float64 for the stated tolerances to be meaningful. When
    max_elems_per_tensor is set, a random subset of coordinates per tensor is
    probed (still covering every tensor).
    """
    rng = rng or np.random.default_rng(0)
    module.zero_grad()
    loss = loss_fn()
    loss.backward()
    grads = {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
             for name, p in module.named_parameters()}

    report = GradCheckReport(0.0, "", True)
    with torch.no_grad():
        for name, p in module.named_parameters():
            flat = p.view(-1)
            n = flat.numel()
            idxs = np.arange(n)
            if max_elems_per_tensor is not None and n > max_elems_per_tensor:
                idxs = rng.choice(n, size=max_elems_per_tensor, replace=False)
            worst = 0.0
            gflat = grads[name].view(-1)
            for i in idxs:
                orig = float(flat[i])
                flat[i] = orig + h
                lp = float(loss_fn())
                flat[i] = orig - h
                lm = float(loss_fn())
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                an = float(gflat[i])
                denom = max(abs(fd), abs(an), 1e-8)
                worst = max(worst, abs(fd - an) / denom)
            report.per_param[name] = worst
            if worst > report.max_rel_error:
                report.max_rel_error = worst
                report.worst_param = name
    report.passed = report.max_rel_error < tol
    return report


def gradient_check(
    model: PreferenceModel,
    examples: list[TrainingExample],
    lam: float,
    tol: float = 1e-4,
    h: float = 1e-5,
    max_elems_per_tensor: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Verify the joint-loss backward pass on a small model (d <= 8 keeps the
    runtime sensible)."""
    model = model.double()
    return finite_difference_check(
        lambda: batch_loss(model, examples, lam),
        model, tol=tol, h=h,
        max_elems_per_tensor=max_elems_per_tensor,
        rng=np.random.default_rng(seed),
    )
