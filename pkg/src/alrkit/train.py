"""Training engine: AdamW, cosine warm restarts, augmentation, two-stage runs.

All entry points are deterministic functions of (data, config, seed); gradient
reduction is full-batch or fixed-order mini-batch so checkpoints reproduce
bit-exactly across runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .nnet import (
    ModelConfig,
    ParamSet,
    backward,
    concat_forward_batch,
    extractor_forward,
    gated_forward_batch,
    init_params,
    stage1_model_forward,
)
from .volgrid import VIEWS, ViewStack, read_stack

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8

# substream tags so augmentation, batching, dropout and search draws never share
_RNG_AUG = 101
_RNG_BATCH = 102
_RNG_DROPOUT = 103
_FROZEN_STAGE1 = frozenset({"patch.weight", "patch.bias"})

# incremented on every augment() call; lets tests assert augmentation never
# touches validation or test batches
AUG_CALLS = 0


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {target.shape}")
    if pred.size < 1:
        raise ValueError("mse_loss needs at least one element")
    r = pred - target
    return float(np.mean(r * r))


def _mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (pred - target) / len(pred)


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

@dataclass
class AdamWState:
    m: dict
    v: dict
    t: int
    lr: float
    weight_decay: float


def adamw_init(params: ParamSet, lr: float, weight_decay: float) -> AdamWState:
    if lr <= 0 or weight_decay < 0:
        raise ValueError("lr must be positive and weight_decay non-negative")
    names = params.trainable_names()
    return AdamWState(m={n: np.zeros_like(params[n]) for n in names},
                      v={n: np.zeros_like(params[n]) for n in names},
                      t=0, lr=lr, weight_decay=weight_decay)


def adamw_step(params: ParamSet, grads: dict, state: AdamWState) -> ParamSet:
    """One decoupled-weight-decay Adam step, in place; frozen entries untouched."""
    unknown = set(grads) - set(state.m)
    if unknown:
        raise ValueError(f"gradients for unknown or frozen parameters: {sorted(unknown)}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.t += 1
    c1 = 1.0 - BETA1 ** state.t
    c2 = 1.0 - BETA2 ** state.t
    for name in state.m:
        g = grads.get(name)
        theta = params[name]
        if g is not None:
            state.m[name] = BETA1 * state.m[name] + (1.0 - BETA1) * g
            state.v[name] = BETA2 * state.v[name] + (1.0 - BETA2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        theta -= state.lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS)
                             + state.weight_decay * theta)
    return params


# ---------------------------------------------------------------------------
# Learning-rate schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LrSchedule:
    eta_max: float
    eta_min: float = 0.0
    t0: int = 10
    t_mult: int = 2

    def __post_init__(self):
        if self.eta_min > self.eta_max:
            raise ValueError("eta_min must not exceed eta_max")
        if self.t0 < 1 or self.t_mult < 1:
            raise ValueError("T_0 and T_mult must be >= 1")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Cosine annealing with warm restarts; lr(restart epoch) = eta_max."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    t_cur, t_i = epoch, schedule.t0
    while t_cur >= t_i:
        t_cur -= t_i
        t_i *= schedule.t_mult
    span = schedule.eta_max - schedule.eta_min
    return schedule.eta_min + span * (1.0 + math.cos(math.pi * t_cur / t_i)) / 2.0


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

def _rotate_bilinear(data: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rotate (H, W, C) about the image center, bilinear, zero fill."""
    if theta_deg == 0.0:
        return data.copy()
    h, w, _ = data.shape
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    th = math.radians(theta_deg)
    cos_t, sin_t = math.cos(th), math.sin(th)
    rr, cc_idx = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    dr, dc = rr - cr, cc_idx - cc
    # inverse map: rotate output coordinates by -theta to find the source
    src_r = cos_t * dr + sin_t * dc + cr
    src_c = -sin_t * dr + cos_t * dc + cc
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr, fc = src_r - r0, src_c - c0
    out = np.zeros_like(data)
    for di in (0, 1):
        for dj in (0, 1):
            ri, cj = r0 + di, c0 + dj
            wgt = (fr if di else 1.0 - fr) * (fc if dj else 1.0 - fc)
            ok = (ri >= 0) & (ri < h) & (cj >= 0) & (cj < w)
            vals = np.zeros((h, w) + data.shape[2:])
            vals[ok] = data[ri[ok], cj[ok]]
            out += wgt[..., None] * vals
    return out


def augment(stack: ViewStack, rng: np.random.Generator,
            force_flip: bool | None = None,
            force_theta: float | None = None) -> ViewStack:
    """Horizontal mirror with p = 0.5, then rotation uniform in +/-15 degrees."""
    global AUG_CALLS
    AUG_CALLS += 1
    flip = rng.random() < 0.5 if force_flip is None else force_flip
    theta = rng.uniform(-15.0, 15.0) if force_theta is None else force_theta
    data = stack.data[:, ::-1, :] if flip else stack.data
    return ViewStack(view=stack.view, data=_rotate_bilinear(data, theta))


# ---------------------------------------------------------------------------
# Target normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TargetScaler:
    mu: float
    sigma: float

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mu) / self.sigma

    def invert(self, x):
        return np.asarray(x, dtype=np.float64) * self.sigma + self.mu


def fit_scaler(train_alr) -> TargetScaler:
    y = np.asarray(train_alr, dtype=np.float64)
    if y.size < 2 or np.unique(y).size < 2:
        raise ValueError("degenerate targets: need >= 2 distinct values")
    sigma = float(y.std())  # population sigma
    if sigma == 0.0:
        raise ValueError("degenerate targets: zero variance")
    return TargetScaler(mu=float(y.mean()), sigma=sigma)


# ---------------------------------------------------------------------------
# Config and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 6.685e-5
    weight_decay: float = 2.953e-4
    max_epochs: int = 200
    patience: int = 20  # 0 disables early stopping
    # small batches keep the per-epoch step count at a few-hundred-sample
    # scale high enough for the low default lr to converge in 200 epochs;
    # None = full batch
    batch_size: int | None = 2
    seed: int = 0
    augment: bool = True
    t0: int = 10
    t_mult: int = 2
    eta_min: float = 0.0
    image_hw: int = 64
    patch: int = 8
    dim: int = 64
    blocks: int = 2
    attn_hidden: int = 32
    dropout: float = 0.0

    def __post_init__(self):
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")
        if self.max_epochs < 1 or self.patience < 0:
            raise ValueError("max_epochs must be >= 1 and patience >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 when set")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def model_config(self) -> ModelConfig:
        return ModelConfig(image_hw=self.image_hw, patch=self.patch,
                           dim=self.dim, blocks=self.blocks,
                           attn_hidden=self.attn_hidden)

    def schedule(self) -> LrSchedule:
        return LrSchedule(eta_max=self.lr, eta_min=self.eta_min,
                          t0=self.t0, t_mult=self.t_mult)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Stage1Result:
    params: ParamSet  # best-validation parameters
    curves: list  # (epoch, train_mse, val_mse, lr) tuples
    scaler: TargetScaler
    best_epoch: int
    best_val_mse: float


@dataclass
class Stage2Result:
    params: ParamSet
    curves: list
    best_epoch: int
    best_val_mse: float


# ---------------------------------------------------------------------------
# Shared epoch loop
# ---------------------------------------------------------------------------

def _epoch_batches(n: int, batch_size: int | None, rng: np.random.Generator):
    if batch_size is None or batch_size >= n:
        yield np.arange(n)
        return
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _run_loop(config: TrainConfig, forward_fn, n_train: int, val_fn, params: ParamSet):
    """Generic train loop: forward_fn(idx, epoch) -> (loss, grads) on a batch."""
    state = adamw_init(params, config.lr, config.weight_decay)
    schedule = config.schedule()
    batch_rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, _RNG_BATCH)))
    curves = []
    best_val = math.inf
    best_epoch = -1
    best_params = None
    stall = 0
    for epoch in range(config.max_epochs):
        state.lr = lr_at(schedule, epoch)
        losses, counts = [], []
        for idx in _epoch_batches(n_train, config.batch_size, batch_rng):
            loss, grads = forward_fn(idx, epoch)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            adamw_step(params, grads, state)
            losses.append(loss)
            counts.append(len(idx))
        train_mse = float(np.average(losses, weights=counts))
        val_mse = val_fn(params)
        curves.append((epoch, train_mse, val_mse, state.lr))
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_params = params.copy()
            stall = 0
        else:
            stall += 1
            if config.patience and stall >= config.patience:
                break
    return best_params, curves, best_epoch, best_val


# ---------------------------------------------------------------------------
# Stage 1: per-view extractor + linear head
# ---------------------------------------------------------------------------

def stack_path(stack_dir, subject_id: int, view: str) -> Path:
    return Path(stack_dir) / f"{subject_id:04d}_{view}.mvol"


def load_stacks(rows, stack_dir, view: str) -> np.ndarray:
    """Load cached projections for manifest rows into one (n, H, W, 3) array."""
    stacks = []
    for row in rows:
        path = stack_path(stack_dir, row["id"], view)
        if not path.exists():
            raise FileNotFoundError(f"missing projection {path}; run preprocessing first")
        stacks.append(read_stack(path).data)
    return np.stack(stacks, axis=0)


def _split_rows(manifest, split: str):
    rows = [r for r in manifest if r["split"] == split]
    if not rows:
        raise ValueError(f"empty split {split!r}")
    return rows


def train_stage1(manifest, view: str, config: TrainConfig, stack_dir) -> Stage1Result:
    """Train one view's extractor (patch embed frozen) + linear head."""
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r}")
    train_rows = _split_rows(manifest, "train")
    val_rows = _split_rows(manifest, "val")
    x_train = load_stacks(train_rows, stack_dir, view)
    x_val = load_stacks(val_rows, stack_dir, view)
    scaler = fit_scaler([r["alr_gt"] for r in train_rows])
    y_train = scaler.apply([r["alr_gt"] for r in train_rows])
    y_val = scaler.apply([r["alr_gt"] for r in val_rows])

    mc = config.model_config()
    params = (init_params(config.seed, mc, "extractor")
              .merged_with(init_params(config.seed, mc, "stage1"))
              .with_frozen(_FROZEN_STAGE1))
    aug_rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, _RNG_AUG, VIEWS.index(view))))

    def forward_fn(idx, epoch):
        xb = x_train[idx]
        if config.augment:
            xb = np.stack([augment(ViewStack(view=view, data=s), aug_rng).data
                           for s in xb], axis=0)
        preds, cache = stage1_model_forward(xb, params)
        loss = mse_loss(preds, y_train[idx])
        return loss, backward(_mse_grad(preds, y_train[idx]), cache)

    def val_fn(p):
        preds, _ = stage1_model_forward(x_val, p)
        return mse_loss(preds, y_val)

    best, curves, best_epoch, best_val = _run_loop(
        config, forward_fn, len(train_rows), val_fn, params)
    return Stage1Result(params=best, curves=curves, scaler=scaler,
                        best_epoch=best_epoch, best_val_mse=best_val)


def compute_features(stacks: np.ndarray, params: ParamSet) -> np.ndarray:
    """Frozen-extractor features for precomputed stacks: (n, H, W, 3) -> (n, D)."""
    feats, _ = extractor_forward(stacks, params)
    return feats


# ---------------------------------------------------------------------------
# Stage 2: aggregation heads over frozen features
# ---------------------------------------------------------------------------

def train_stage2(feat_train: np.ndarray, y_train: np.ndarray,
                 feat_val: np.ndarray, y_val: np.ndarray,
                 mode: str, config: TrainConfig) -> Stage2Result:
    """Train the gated-attention or concatenation head on frozen features.

    feat_* have shape (n, 3, D) with views ordered (cor, sag, ax); targets are
    already in normalized units.
    """
    if mode not in ("gated", "concat"):
        raise ValueError(f"unknown stage-2 mode {mode!r}")
    feat_train = np.asarray(feat_train, dtype=np.float64)
    feat_val = np.asarray(feat_val, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)
    if feat_train.ndim != 3 or feat_train.shape[1] != 3:
        raise ValueError(f"expected features of shape (n, 3, D), got {feat_train.shape}")

    mc_kwargs = {"image_hw": config.image_hw, "patch": config.patch,
                 "dim": feat_train.shape[2], "blocks": config.blocks,
                 "attn_hidden": config.attn_hidden}
    params = init_params(config.seed, ModelConfig(**mc_kwargs), mode)
    drop_rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, _RNG_DROPOUT)))

    def forward_fn(idx, epoch):
        xb, yb = feat_train[idx], y_train[idx]
        if mode == "gated":
            preds, _, cache = gated_forward_batch(xb, params)
        else:
            preds, cache = concat_forward_batch(
                xb, params, dropout=config.dropout,
                rng=drop_rng if config.dropout > 0 else None)
        return mse_loss(preds, yb), backward(_mse_grad(preds, yb), cache)

    def val_fn(p):
        if mode == "gated":
            preds, _, _ = gated_forward_batch(feat_val, p)
        else:
            preds, _ = concat_forward_batch(feat_val, p)
        return mse_loss(preds, y_val)

    best, curves, best_epoch, best_val = _run_loop(
        config, forward_fn, len(feat_train), val_fn, params)
    return Stage2Result(params=best, curves=curves,
                        best_epoch=best_epoch, best_val_mse=best_val)


# ---------------------------------------------------------------------------
# Random hyperparameter search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    lr_range: tuple = (1e-6, 1e-3)
    wd_range: tuple = (1e-6, 1e-2)

    def __post_init__(self):
        for lo, hi in (self.lr_range, self.wd_range):
            if not 0 < lo < hi:
                raise ValueError("search ranges must satisfy 0 < low < high")


@dataclass
class Trial:
    index: int
    lr: float
    weight_decay: float
    val_mse: float  # inf for failed trials
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def sample_trial(seed: int, index: int, space: SearchSpace) -> tuple[float, float]:
    """Log-uniform (lr, weight_decay) draw from the per-trial stream."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, index)))
    lr = 10.0 ** rng.uniform(math.log10(space.lr_range[0]),
                             math.log10(space.lr_range[1]))
    wd = 10.0 ** rng.uniform(math.log10(space.wd_range[0]),
                             math.log10(space.wd_range[1]))
    return lr, wd


def random_search(train_fn, space: SearchSpace | None = None,
                  n_iters: int = 20, seed: int = 0) -> list[Trial]:
    """Run n_iters trainings; return trials sorted by validation MSE.

    train_fn(lr, weight_decay) must return a validation MSE; trials that raise
    are recorded as failed and ranked last.
    """
    space = space or SearchSpace()
    trials = []
    for i in range(n_iters):
        lr, wd = sample_trial(seed, i, space)
        try:
            val = float(train_fn(lr, wd))
        except Exception as exc:  # a failed trial must not kill the sweep
            trials.append(Trial(index=i, lr=lr, weight_decay=wd,
                                val_mse=math.inf, error=str(exc)))
            continue
        trials.append(Trial(index=i, lr=lr, weight_decay=wd, val_mse=val))
    return sorted(trials, key=lambda t: (t.val_mse, t.index))


# ---------------------------------------------------------------------------
# Loss-curve CSV
# ---------------------------------------------------------------------------

def write_curves(path, curves) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "val_mse", "lr"])
        for epoch, train_mse, val_mse, lr in curves:
            writer.writerow([epoch, "%.17g" % train_mse,
                             "%.17g" % val_mse, "%.17g" % lr])


def read_curves(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["epoch", "train_mse", "val_mse", "lr"]:
            raise ValueError(f"unexpected curve header: {header}")
        return [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in reader]
