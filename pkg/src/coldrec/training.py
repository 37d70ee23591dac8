"""Training loop: negative sampling, Adam updates of the joint loss,
validation-based early stopping, and checkpoint persistence."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .data import BipartiteGraph, ColdStartSplit, InteractionSet, SideFeatures, build_graph

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


class TrainingDivergedError(Exception):
    def __init__(self, epoch: int, batch: int, detail: str):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {detail}")
        self.epoch = epoch
        self.batch = batch


class NonFiniteGradientError(Exception):
    def __init__(self, param_name: str):
        super().__init__(f"non-finite gradient in parameter {param_name!r}")
        self.param_name = param_name


class CheckpointError(Exception):
    pass


class CheckpointCorruptError(CheckpointError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    epochs: int = 50
    batch_size: int = 1024
    bce_negatives: int = 4
    cl_negatives: int = 16
    seed: int = 0
    early_stop_patience: int = 5
    val_fraction: float = 0.05
    model: mdl.ModelConfig = field(default_factory=mdl.ModelConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        for name in ("batch_size", "bce_negatives", "cl_negatives"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if isinstance(self.model, dict):
            self.model = mdl.ModelConfig.from_dict(self.model)

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "bce_negatives": self.bce_negatives,
            "cl_negatives": self.cl_negatives,
            "seed": self.seed,
            "early_stop_patience": self.early_stop_patience,
            "val_fraction": self.val_fraction,
            "model": self.model.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        if "model" in d:
            d["model"] = mdl.ModelConfig.from_dict(d["model"])
        return TrainConfig(**d)


def sample_negatives(user: int, k: int, user_positives: set[int], n_items: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw k items (dense ids) the user has no train positive for.

    Rejection sampling with a bounded attempt budget; degenerate users
    fall back to an explicit scan of the complement.
    """
    if len(user_positives) >= n_items:
        raise ValueError(f"user {user} has positives on all {n_items} items")
    out = np.empty(k, dtype=np.int64)
    filled = 0
    attempts = 0
    budget = 100 * k
    while filled < k and attempts < budget:
        cand = int(rng.integers(0, n_items))
        attempts += 1
        if cand not in user_positives:
            out[filled] = cand
            filled += 1
    if filled < k:
        complement = np.setdiff1d(np.arange(n_items), np.fromiter(user_positives, dtype=np.int64))
        out[filled:] = rng.choice(complement, size=k - filled, replace=True)
    return out


class AdamState:
    """First/second moment accumulators, lazily shaped from the ParamSet."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self):
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def ensure(self, params: ad.ParamSet) -> None:
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p.value)
                self.v[name] = np.zeros_like(p.value)


def adam_step(params: ad.ParamSet, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update in place; grads must already be populated."""
    state.ensure(params)
    state.step += 1
    t = state.step
    b1, b2, eps = AdamState.beta1, AdamState.beta2, AdamState.eps
    for name, p in params.items():
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class ValidationSlice:
    users: np.ndarray            # dense user ids
    held_out: np.ndarray         # one dense item per user
    candidates: list[np.ndarray]  # fixed distinct negatives per user


@dataclass
class TrainResult:
    params: mdl.ModelParams
    history: list[dict]
    graph: BipartiteGraph
    best_epoch: int
    stopped_early: bool
    contrastive_draws: int
    val_slice: ValidationSlice | None


def _dense_positives(inter: InteractionSet) -> np.ndarray:
    pairs = sorted((inter.user_index[u], inter.item_index[m]) for u, m in inter.positives)
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def carve_validation(train: InteractionSet, cfg: TrainConfig,
                     rng: np.random.Generator,
                     n_candidates: int = 99) -> tuple[InteractionSet, ValidationSlice | None]:
    """Hold out one positive for a seeded sample of warm users.

    Only users with at least two train positives are eligible, so every
    training user keeps at least one pair. Returns the reduced train set
    and the fixed validation candidates.
    """
    by_user: dict[int, list[int]] = {}
    for u, m in train.positives:
        by_user.setdefault(u, []).append(m)
    n_train_users = len(by_user)
    eligible = sorted(u for u, items in by_user.items()
                      if 2 <= len(items) < train.n_items)
    n_val = min(int(cfg.val_fraction * n_train_users), len(eligible))
    if n_val == 0:
        return train, None
    chosen = rng.choice(np.array(eligible), size=n_val, replace=False)
    removed = set()
    val_users, val_items = [], []
    for u in sorted(int(x) for x in chosen):
        items = sorted(by_user[u])
        held = items[int(rng.integers(0, len(items)))]
        removed.add((u, held))
        val_users.append(train.user_index[u])
        val_items.append(train.item_index[held])
    core = InteractionSet(train.positives - removed, dict(train.user_index),
                          dict(train.item_index))

    # fixed distinct negatives per validation user, so the epoch metric is
    # stable and the candidate list stays duplicate-free
    pos_by_dense: dict[int, set[int]] = {}
    for u, m in train.positives:
        pos_by_dense.setdefault(train.user_index[u], set()).add(train.item_index[m])
    cands = []
    for du in val_users:
        upos = pos_by_dense[du]
        want = min(n_candidates, train.n_items - len(upos))
        row: list[int] = []
        seen: set[int] = set()
        attempts = 0
        while len(row) < want and attempts < 100 * want:
            cand = int(rng.integers(0, train.n_items))
            attempts += 1
            if cand not in upos and cand not in seen:
                seen.add(cand)
                row.append(cand)
        if len(row) < want:
            pool = np.setdiff1d(np.arange(train.n_items),
                                np.fromiter(upos | seen, dtype=np.int64))
            row.extend(pool[: want - len(row)].tolist())
        cands.append(np.array(row, dtype=np.int64))
    val = ValidationSlice(np.array(val_users), np.array(val_items), cands)
    return core, val


def _validation_hr10(val: ValidationSlice, u_emb: np.ndarray, v_emb: np.ndarray,
                     k: int = 10) -> float:
    hits = 0
    for r in range(val.users.shape[0]):
        zu = u_emb[val.users[r]]
        cand = np.concatenate([[val.held_out[r]], val.candidates[r]])
        scores = v_emb[cand] @ zu
        # held-out item sits at position 0; count strictly-better negatives
        rank = int(np.sum(scores[1:] > scores[0]))
        hits += rank < k
    return hits / val.users.shape[0]


def train(split: ColdStartSplit, user_feats: SideFeatures, item_feats: SideFeatures,
          cfg: TrainConfig) -> TrainResult:
    """Optimize the joint loss over the warm training pairs.

    Fully deterministic for a fixed config: sampling, shuffling and
    validation all consume one seeded generator in a fixed order.
    """
    rng = np.random.default_rng(cfg.seed)
    params = mdl.ModelParams.init(user_feats.schema, item_feats.schema,
                                  cfg.model, seed=cfg.seed)
    core, val = carve_validation(split.train, cfg, rng)
    graph = build_graph(core)
    inputs = mdl.ModelInputs(user_feats, item_feats, graph)
    positives = _dense_positives(core)
    n_pos = positives.shape[0]
    if n_pos == 0:
        raise ValueError("no training positives after validation carving")

    pos_by_user: dict[int, set[int]] = {}
    for du, di in positives:
        pos_by_user.setdefault(int(du), set()).add(int(di))

    n_items = item_feats.n
    history: list[dict] = []
    best_hr = -np.inf
    best_values = params.params.copy_values()
    best_epoch = -1
    patience_left = cfg.early_stop_patience
    stopped_early = False
    contrastive_draws = 0
    state = AdamState()
    draw_cl = cfg.model.uses_contrastive

    for epoch in range(cfg.epochs):
        order = rng.permutation(n_pos)
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, n_pos, cfg.batch_size)):
            rows = positives[order[start:start + cfg.batch_size]]
            users, pos_items = rows[:, 0], rows[:, 1]
            b = users.shape[0]
            bce_negs = np.empty((b, cfg.bce_negatives), dtype=np.int64)
            cl_negs = np.empty((b, cfg.cl_negatives if draw_cl else 0), dtype=np.int64)
            for r in range(b):
                upos = pos_by_user[int(users[r])]
                bce_negs[r] = sample_negatives(int(users[r]), cfg.bce_negatives,
                                               upos, n_items, rng)
                if draw_cl:
                    cl_negs[r] = sample_negatives(int(users[r]), cfg.cl_negatives,
                                                  upos, n_items, rng)
                    contrastive_draws += cfg.cl_negatives
            batch = mdl.TrainBatch(users, pos_items, bce_negs, cl_negs)
            params.params.zero_grad()
            try:
                loss = mdl.total_loss(batch, inputs, params, cfg.model)
            except ad.NonFiniteError as e:
                raise TrainingDivergedError(epoch, batch_no, str(e)) from e
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingDivergedError(epoch, batch_no, f"loss={loss_val}")
            ad.backward(loss)
            adam_step(params.params, state, cfg.learning_rate)
            epoch_loss += loss_val * b
        epoch_loss /= n_pos

        val_hr = float("nan")
        if val is not None:
            u_emb, v_emb = mdl.materialize_embeddings(user_feats, item_feats,
                                                      graph, params, cfg.model)
            val_hr = _validation_hr10(val, u_emb, v_emb)
            if val_hr > best_hr:
                best_hr = val_hr
                best_values = params.params.copy_values()
                best_epoch = epoch
                patience_left = cfg.early_stop_patience
            else:
                patience_left -= 1
        history.append({"epoch": epoch, "train_loss": epoch_loss, "val_hr10": val_hr})
        log.info("epoch %d: loss %.6f, val HR@10 %s", epoch, epoch_loss,
                 f"{val_hr:.4f}" if np.isfinite(val_hr) else "n/a")
        if val is not None and patience_left <= 0:
            stopped_early = True
            break

    if val is not None and best_epoch >= 0:
        params.params.load_values(best_values)
    else:
        best_epoch = len(history) - 1
    return TrainResult(params, history, graph, best_epoch, stopped_early,
                       contrastive_draws, val)


def save_checkpoint(params: mdl.ModelParams, manifest_extra: dict, base_path: str) -> None:
    """Write ``<base>.json`` manifest plus ``<base>.bin`` of little-endian f64."""
    tensors = []
    offset = 0
    blobs = []
    for name, p in params.params.items():
        blob = p.value.astype("<f8").tobytes()
        tensors.append({"name": name, "rows": p.value.shape[0],
                        "cols": p.value.shape[1], "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": params.config.to_dict(),
        "data_file": os.path.basename(base_path) + ".bin",
        "total_bytes": offset,
        "tensors": tensors,
    }
    manifest.update(manifest_extra)
    with open(base_path + ".bin", "wb") as f:
        for blob in blobs:
            f.write(blob)
    tmp = base_path + ".json.tmp"
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    os.replace(tmp, base_path + ".json")


def load_checkpoint(base_path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read back tensors and manifest; bitwise-faithful to what was saved."""
    json_path = base_path + ".json"
    if not os.path.exists(json_path) and base_path.endswith(".json"):
        json_path = base_path
        base_path = base_path[: -len(".json")]
    try:
        with open(json_path) as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointCorruptError(f"unreadable manifest {json_path}: {e}") from e
    version = manifest.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})")
    bin_path = os.path.join(os.path.dirname(base_path) or ".", manifest["data_file"])
    try:
        with open(bin_path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointCorruptError(f"unreadable tensor file {bin_path}: {e}") from e
    values: dict[str, np.ndarray] = {}
    for t in manifest["tensors"]:
        n_bytes = t["rows"] * t["cols"] * 8
        end = t["offset"] + n_bytes
        if end > len(raw):
            raise CheckpointCorruptError(
                f"tensor {t['name']!r} runs past end of file", offset=t["offset"])
        arr = np.frombuffer(raw[t["offset"]:end], dtype="<f8").reshape(t["rows"], t["cols"])
        values[t["name"]] = arr.astype(np.float64)
    return values, manifest


def restore_model(values: dict[str, np.ndarray], manifest: dict,
                  user_schema, item_schema) -> mdl.ModelParams:
    config = mdl.ModelConfig.from_dict(manifest["model_config"])
    params = mdl.ModelParams.init(user_schema, item_schema, config, seed=0)
    try:
        params.params.load_values(values)
    except KeyError as e:
        raise CheckpointCorruptError(f"missing tensor {e} in checkpoint") from e
    return params
