"""Numerical core: parameter container, per-view feature extractor, and
regression heads with hand-written analytic gradients.

Everything runs in float64 with deterministic, order-fixed arithmetic so
checkpoints are bit-reproducible.  Forwards come in two flavors: batched
functions returning (output, cache) for training, and single-sample
wrappers matching the library surface.  `backward(loss_grad, cache)`
dispatches on the cache type and returns gradients for every non-frozen
parameter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .volgrid import ViewStack

LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715

_COMPONENT_TAGS = {"extractor": 0, "stage1": 1, "gated": 2, "concat": 3}


@dataclass(frozen=True)
class ModelConfig:
    image_hw: int = 64
    patch: int = 8
    dim: int = 64
    blocks: int = 2
    attn_hidden: int = 32

    def __post_init__(self):
        if self.image_hw % self.patch != 0:
            raise ValueError(f"image size {self.image_hw} not divisible by patch {self.patch}")
        if min(self.image_hw, self.patch, self.dim, self.blocks, self.attn_hidden) < 1:
            raise ValueError("all model dimensions must be positive")

    @property
    def n_tokens(self) -> int:
        return (self.image_hw // self.patch) ** 2


@dataclass
class ParamSet:
    """Ordered name -> float64 array map with a per-name frozen mask."""
    params: dict
    frozen: frozenset = frozenset()

    def __post_init__(self):
        self.frozen = frozenset(self.frozen)
        for name, arr in self.params.items():
            if arr.dtype != np.float64:
                raise ValueError(f"parameter {name} must be float64")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name} contains non-finite values")
        missing = self.frozen - set(self.params)
        if missing:
            raise ValueError(f"frozen mask names unknown parameters: {sorted(missing)}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def names(self) -> list:
        return list(self.params)

    def trainable_names(self) -> list:
        return [n for n in self.params if n not in self.frozen]

    def is_frozen(self, name: str) -> bool:
        return name in self.frozen

    def copy(self) -> "ParamSet":
        return ParamSet({n: a.copy() for n, a in self.params.items()}, self.frozen)

    def with_frozen(self, names) -> "ParamSet":
        return ParamSet(self.params, frozenset(names))

    def merged_with(self, other: "ParamSet") -> "ParamSet":
        clash = set(self.params) & set(other.params)
        if clash:
            raise ValueError(f"duplicate parameter names: {sorted(clash)}")
        return ParamSet({**self.params, **other.params}, self.frozen | other.frozen)


@dataclass(frozen=True)
class FeatureVec:
    values: np.ndarray  # (D,)
    view: str


@dataclass(frozen=True)
class GatedAttentionHead:
    V: np.ndarray  # (L, D)
    U: np.ndarray  # (L, D)
    w: np.ndarray  # (L,)
    W: np.ndarray  # (1, D)

    @classmethod
    def from_paramset(cls, params: ParamSet) -> "GatedAttentionHead":
        return cls(V=params["gated.V"], U=params["gated.U"],
                   w=params["gated.w"], W=params["gated.W"])

    def to_paramset(self) -> ParamSet:
        return ParamSet({"gated.V": self.V, "gated.U": self.U,
                         "gated.w": self.w, "gated.W": self.W})


@dataclass(frozen=True)
class AttentionOutput:
    alr_norm: float
    weights: np.ndarray  # (3,), sums to 1
    z: np.ndarray  # (D,) pooled feature


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _xavier(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(seed: int, config: ModelConfig, component: str) -> ParamSet:
    """Deterministic Xavier-uniform weights, zero biases, unit norm gains."""
    if component not in _COMPONENT_TAGS:
        raise ValueError(f"unknown component {component!r}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, _COMPONENT_TAGS[component])))
    d, L = config.dim, config.attn_hidden
    p: dict[str, np.ndarray] = {}
    if component == "extractor":
        in_dim = 3 * config.patch ** 2
        p["patch.weight"] = _xavier(rng, in_dim, d, (in_dim, d))
        p["patch.bias"] = np.zeros(d)
        for b in range(config.blocks):
            p[f"block{b}.ln1.gain"] = np.ones(d)
            p[f"block{b}.ln1.bias"] = np.zeros(d)
            for nm in ("wq", "wk", "wv", "wo"):
                p[f"block{b}.attn.{nm}"] = _xavier(rng, d, d, (d, d))
                p[f"block{b}.attn.{nm[1]}b"] = np.zeros(d)
            p[f"block{b}.ln2.gain"] = np.ones(d)
            p[f"block{b}.ln2.bias"] = np.zeros(d)
            p[f"block{b}.ffn.w1"] = _xavier(rng, d, 2 * d, (d, 2 * d))
            p[f"block{b}.ffn.b1"] = np.zeros(2 * d)
            p[f"block{b}.ffn.w2"] = _xavier(rng, 2 * d, d, (2 * d, d))
            p[f"block{b}.ffn.b2"] = np.zeros(d)
    elif component == "stage1":
        p["head.weight"] = _xavier(rng, d, 1, (1, d))
        p["head.bias"] = np.zeros(1)
    elif component == "gated":
        p["gated.V"] = _xavier(rng, d, L, (L, d))
        p["gated.U"] = _xavier(rng, d, L, (L, d))
        p["gated.w"] = _xavier(rng, L, 1, (L,))
        p["gated.W"] = _xavier(rng, d, 1, (1, d))
    else:  # concat
        if (3 * d) % 16 != 0:
            raise ValueError(f"concat head needs 3*dim divisible by 16, got {3 * d}")
        sizes = [3 * d, 3 * d // 2, 3 * d // 4, 3 * d // 8, 3 * d // 16, 1]
        for i in range(5):
            p[f"concat.w{i}"] = _xavier(rng, sizes[i], sizes[i + 1], (sizes[i], sizes[i + 1]))
            p[f"concat.b{i}"] = np.zeros(sizes[i + 1])
    return ParamSet(p)


# ---------------------------------------------------------------------------
# Primitive forward/backward pieces
# ---------------------------------------------------------------------------

def _gelu(x: np.ndarray):
    u = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy: np.ndarray, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du)


def _layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv)


def _layer_norm_backward(dy: np.ndarray, gain: np.ndarray, cache):
    xhat, inv = cache
    flat = dy.shape[-1]
    dgain = (dy.reshape(-1, flat) * xhat.reshape(-1, flat)).sum(axis=0)
    dbias = dy.reshape(-1, flat).sum(axis=0)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def _softmax_last(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


def patchify(stacks: np.ndarray, patch: int) -> np.ndarray:
    """(B, H, W, 3) -> (B, N, 3*patch^2) row-major patch tokens."""
    b, h, w, c = stacks.shape
    hp, wp = h // patch, w // patch
    x = stacks.reshape(b, hp, patch, wp, patch, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(x).reshape(b, hp * wp, patch * patch * c)


def _extractor_layout(params: ParamSet) -> tuple[int, int, int]:
    """Infer (patch, dim, blocks) from parameter shapes."""
    in_dim, d = params["patch.weight"].shape
    patch = math.isqrt(in_dim // 3)
    if 3 * patch * patch != in_dim:
        raise ValueError(f"patch.weight input dim {in_dim} is not 3*P^2")
    blocks = 0
    while f"block{blocks}.ln1.gain" in params.params:
        blocks += 1
    return patch, d, blocks


# ---------------------------------------------------------------------------
# Feature extractor
# ---------------------------------------------------------------------------

@dataclass
class ExtractorCache:
    params: ParamSet
    tokens: np.ndarray
    block_caches: list
    n_tokens: int


def extractor_forward(stacks: np.ndarray, params: ParamSet):
    """Batched extractor: (B, H, W, 3) -> (B, D) features plus cache."""
    stacks = np.asarray(stacks, dtype=np.float64)
    if stacks.ndim != 4 or stacks.shape[3] != 3:
        raise ValueError(f"expected stacks of shape (B, H, W, 3), got {stacks.shape}")
    patch, d, blocks = _extractor_layout(params)
    b, h, w, _ = stacks.shape
    if h % patch or w % patch or h != w:
        raise ValueError(f"image {h}x{w} incompatible with square patch {patch}")

    tokens = patchify(stacks, patch)
    x = tokens @ params["patch.weight"] + params["patch.bias"]
    block_caches = []
    scale = 1.0 / math.sqrt(d)
    for i in range(blocks):
        pre = f"block{i}"
        h1, ln1c = _layer_norm(x, params[f"{pre}.ln1.gain"], params[f"{pre}.ln1.bias"])
        q = h1 @ params[f"{pre}.attn.wq"] + params[f"{pre}.attn.qb"]
        k = h1 @ params[f"{pre}.attn.wk"] + params[f"{pre}.attn.kb"]
        v = h1 @ params[f"{pre}.attn.wv"] + params[f"{pre}.attn.vb"]
        scores = (q @ k.transpose(0, 2, 1)) * scale
        attn = _softmax_last(scores)
        ctx = attn @ v
        x1 = x + ctx @ params[f"{pre}.attn.wo"] + params[f"{pre}.attn.ob"]
        h2, ln2c = _layer_norm(x1, params[f"{pre}.ln2.gain"], params[f"{pre}.ln2.bias"])
        f1 = h2 @ params[f"{pre}.ffn.w1"] + params[f"{pre}.ffn.b1"]
        g1, gt = _gelu(f1)
        x2 = x1 + g1 @ params[f"{pre}.ffn.w2"] + params[f"{pre}.ffn.b2"]
        block_caches.append((x, h1, ln1c, q, k, v, attn, ctx, x1, h2, ln2c, f1, g1, gt))
        x = x2
    feats = x.mean(axis=1)
    return feats, ExtractorCache(params=params, tokens=tokens,
                                 block_caches=block_caches, n_tokens=x.shape[1])


def _extractor_backward(dfeats: np.ndarray, cache: ExtractorCache) -> dict:
    params = cache.params
    patch, d, blocks = _extractor_layout(params)
    scale = 1.0 / math.sqrt(d)
    grads: dict[str, np.ndarray] = {}
    dx = np.repeat(dfeats[:, None, :] / cache.n_tokens, cache.n_tokens, axis=1)
    for i in reversed(range(blocks)):
        pre = f"block{i}"
        x, h1, ln1c, q, k, v, attn, ctx, x1, h2, ln2c, f1, g1, gt = cache.block_caches[i]
        # x2 = x1 + gelu(LN2(x1) @ w1 + b1) @ w2 + b2
        dg1 = dx @ params[f"{pre}.ffn.w2"].T
        grads[f"{pre}.ffn.w2"] = np.einsum("bnh,bnd->hd", g1, dx)
        grads[f"{pre}.ffn.b2"] = dx.sum(axis=(0, 1))
        df1 = _gelu_backward(dg1, f1, gt)
        grads[f"{pre}.ffn.w1"] = np.einsum("bnd,bnh->dh", h2, df1)
        grads[f"{pre}.ffn.b1"] = df1.sum(axis=(0, 1))
        dh2 = df1 @ params[f"{pre}.ffn.w1"].T
        dx1, dg, db = _layer_norm_backward(dh2, params[f"{pre}.ln2.gain"], ln2c)
        grads[f"{pre}.ln2.gain"], grads[f"{pre}.ln2.bias"] = dg, db
        dx1 = dx1 + dx
        # x1 = x + (attn @ v) @ wo + ob
        dctx = dx1 @ params[f"{pre}.attn.wo"].T
        grads[f"{pre}.attn.wo"] = np.einsum("bnd,bne->de", ctx, dx1)
        grads[f"{pre}.attn.ob"] = dx1.sum(axis=(0, 1))
        dattn = dctx @ v.transpose(0, 2, 1)
        dv = attn.transpose(0, 2, 1) @ dctx
        dscores = _softmax_backward(dattn, attn)
        dq = (dscores @ k) * scale
        dk = (dscores.transpose(0, 2, 1) @ q) * scale
        dh1 = (dq @ params[f"{pre}.attn.wq"].T + dk @ params[f"{pre}.attn.wk"].T
               + dv @ params[f"{pre}.attn.wv"].T)
        for nm, dmat in (("wq", dq), ("wk", dk), ("wv", dv)):
            grads[f"{pre}.attn.{nm}"] = np.einsum("bnd,bne->de", h1, dmat)
            grads[f"{pre}.attn.{nm[1]}b"] = dmat.sum(axis=(0, 1))
        dxa, dg, db = _layer_norm_backward(dh1, params[f"{pre}.ln1.gain"], ln1c)
        grads[f"{pre}.ln1.gain"], grads[f"{pre}.ln1.bias"] = dg, db
        dx = dx1 + dxa
    if not params.is_frozen("patch.weight"):
        grads["patch.weight"] = np.einsum("bnp,bnd->pd", cache.tokens, dx)
    if not params.is_frozen("patch.bias"):
        grads["patch.bias"] = dx.sum(axis=(0, 1))
    return {n: g for n, g in grads.items() if not params.is_frozen(n)}


def extract_features(stack: ViewStack, params: ParamSet) -> FeatureVec:
    """Single-stack convenience wrapper around the batched extractor."""
    feats, _ = extractor_forward(stack.data[None], params)
    return FeatureVec(values=feats[0], view=stack.view)


# ---------------------------------------------------------------------------
# Stage-1 regression head
# ---------------------------------------------------------------------------

@dataclass
class Stage1HeadCache:
    params: ParamSet
    feats: np.ndarray


def stage1_forward_batch(feats: np.ndarray, params: ParamSet):
    preds = feats @ params["head.weight"][0] + params["head.bias"][0]
    return preds, Stage1HeadCache(params=params, feats=feats)


def _stage1_head_backward(dpreds: np.ndarray, cache: Stage1HeadCache):
    grads = {"head.weight": (dpreds @ cache.feats)[None, :],
             "head.bias": np.array([dpreds.sum()])}
    dfeats = dpreds[:, None] * cache.params["head.weight"][0]
    grads = {n: g for n, g in grads.items() if not cache.params.is_frozen(n)}
    return grads, dfeats


def stage1_forward(x: FeatureVec, head: ParamSet) -> float:
    w = head["head.weight"]
    if w.shape != (1, x.values.shape[0]):
        raise ValueError(f"head weight {w.shape} does not match feature dim {x.values.shape}")
    return float(x.values @ w[0] + head["head.bias"][0])


@dataclass
class Stage1ModelCache:
    extractor: ExtractorCache
    head: Stage1HeadCache


def stage1_model_forward(stacks: np.ndarray, params: ParamSet):
    """Full Stage-1 pipeline: stacks -> features -> scalar predictions."""
    feats, ecache = extractor_forward(stacks, params)
    preds, hcache = stage1_forward_batch(feats, params)
    return preds, Stage1ModelCache(extractor=ecache, head=hcache)


# ---------------------------------------------------------------------------
# Gated attention head (Stage 2)
# ---------------------------------------------------------------------------

@dataclass
class GatedCache:
    params: ParamSet
    xs: np.ndarray
    tanh_v: np.ndarray
    sig_u: np.ndarray
    weights: np.ndarray
    z: np.ndarray


def _check_finite(arr: np.ndarray, stage: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"gated attention: non-finite values at {stage}")


def gated_forward_batch(xs: np.ndarray, params: ParamSet):
    """(B, 3, D) view features -> (B,) predictions, (B, 3) attention weights."""
    V, U = params["gated.V"], params["gated.U"]
    w, W = params["gated.w"], params["gated.W"]
    tanh_v = np.tanh(xs @ V.T)
    sig_u = expit(xs @ U.T)
    _check_finite(tanh_v, "gate tanh(Vx)")
    _check_finite(sig_u, "gate sigmoid(Ux)")
    logits = (tanh_v * sig_u) @ w
    _check_finite(logits, "attention logits")
    weights = _softmax_last(logits)
    _check_finite(weights, "softmax weights")
    z = np.einsum("bk,bkd->bd", weights, xs)
    preds = z @ W[0]
    _check_finite(preds, "output")
    cache = GatedCache(params=params, xs=xs, tanh_v=tanh_v, sig_u=sig_u,
                       weights=weights, z=z)
    return preds, weights, cache


def _gated_backward(dpreds: np.ndarray, cache: GatedCache) -> dict:
    p = cache.params
    xs, a = cache.xs, cache.weights
    W, w = p["gated.W"], p["gated.w"]
    grads = {"gated.W": (dpreds @ cache.z)[None, :]}
    dz = dpreds[:, None] * W[0]
    da = np.einsum("bd,bkd->bk", dz, xs)
    dlogits = _softmax_backward(da, a)
    dgate = dlogits[:, :, None] * w
    dtanh = dgate * cache.sig_u
    dsig = dgate * cache.tanh_v
    dhv = dtanh * (1.0 - cache.tanh_v ** 2)
    dhu = dsig * cache.sig_u * (1.0 - cache.sig_u)
    grads["gated.w"] = np.einsum("bk,bkl->l", dlogits, cache.tanh_v * cache.sig_u)
    grads["gated.V"] = np.einsum("bkl,bkd->ld", dhv, xs)
    grads["gated.U"] = np.einsum("bkl,bkd->ld", dhu, xs)
    return {n: g for n, g in grads.items() if not p.is_frozen(n)}


def gated_attention_forward(x1: FeatureVec, x2: FeatureVec, x3: FeatureVec,
                            head: GatedAttentionHead) -> AttentionOutput:
    """Gated-attention pooling of three view features into one prediction."""
    xs = np.stack([x1.values, x2.values, x3.values])[None]
    preds, weights, cache = gated_forward_batch(xs, head.to_paramset())
    return AttentionOutput(alr_norm=float(preds[0]), weights=weights[0], z=cache.z[0])


# ---------------------------------------------------------------------------
# Concatenation head (Stage 2)
# ---------------------------------------------------------------------------

@dataclass
class ConcatCache:
    params: ParamSet
    acts: list  # inputs to each layer
    pre: list  # pre-activation values per hidden layer
    gelu_t: list
    drop_masks: list


def concat_forward_batch(xs: np.ndarray, params: ParamSet,
                         dropout: float = 0.0, rng=None):
    """(B, 3, D) or (B, 3D) features -> (B,) predictions through 5 affine layers."""
    h = xs.reshape(xs.shape[0], -1)
    if "concat.w0" not in params.params:
        raise ValueError("concat head parameters missing")
    if h.shape[1] != params["concat.w0"].shape[0]:
        raise ValueError(f"concat input dim {h.shape[1]} != "
                         f"{params['concat.w0'].shape[0]}")
    acts, pre, gelu_t, masks = [], [], [], []
    for i in range(5):
        acts.append(h)
        z = h @ params[f"concat.w{i}"] + params[f"concat.b{i}"]
        if i < 4:
            pre.append(z)
            h, t = _gelu(z)
            gelu_t.append(t)
            if dropout > 0.0:
                if rng is None:
                    raise ValueError("dropout requires an rng")
                mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
                h = h * mask
                masks.append(mask)
            else:
                masks.append(None)
        else:
            h = z
    preds = h[:, 0]
    return preds, ConcatCache(params=params, acts=acts, pre=pre,
                              gelu_t=gelu_t, drop_masks=masks)


def _concat_backward(dpreds: np.ndarray, cache: ConcatCache) -> dict:
    p = cache.params
    grads: dict[str, np.ndarray] = {}
    dh = dpreds[:, None]
    for i in reversed(range(5)):
        grads[f"concat.w{i}"] = cache.acts[i].T @ dh
        grads[f"concat.b{i}"] = dh.sum(axis=0)
        dh = dh @ p[f"concat.w{i}"].T
        if i > 0:
            mask = cache.drop_masks[i - 1]
            if mask is not None:
                dh = dh * mask
            dh = _gelu_backward(dh, cache.pre[i - 1], cache.gelu_t[i - 1])
    return {n: g for n, g in grads.items() if not p.is_frozen(n)}


def concat_forward(x1: FeatureVec, x2: FeatureVec, x3: FeatureVec,
                   head: ParamSet) -> float:
    xs = np.concatenate([x1.values, x2.values, x3.values])[None]
    preds, _ = concat_forward_batch(xs, head)
    return float(preds[0])


# ---------------------------------------------------------------------------
# Generic backward dispatch
# ---------------------------------------------------------------------------

def backward(loss_grad: np.ndarray, cache) -> dict:
    """Gradients of a scalar loss given d(loss)/d(output) and a forward cache.

    Returns name -> gradient for every non-frozen parameter; raises if no
    valid forward cache is supplied.
    """
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if isinstance(cache, Stage1ModelCache):
        grads, dfeats = _stage1_head_backward(loss_grad, cache.head)
        grads.update(_extractor_backward(dfeats, cache.extractor))
        return grads
    if isinstance(cache, Stage1HeadCache):
        return _stage1_head_backward(loss_grad, cache)[0]
    if isinstance(cache, ExtractorCache):
        return _extractor_backward(loss_grad, cache)
    if isinstance(cache, GatedCache):
        return _gated_backward(loss_grad, cache)
    if isinstance(cache, ConcatCache):
        return _concat_backward(loss_grad, cache)
    raise ValueError("backward requires the cache object produced by a forward pass")


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

_CKPT_MAGIC = "alrkit-checkpoint v1"


def save_checkpoint(path, params: ParamSet, config: dict, seed: int) -> None:
    """Structured text: config + seed + per-parameter shape and 17-digit values."""
    lines = [_CKPT_MAGIC, f"seed {int(seed)}",
             "config " + json.dumps(config, sort_keys=True),
             f"params {len(params.params)}"]
    for name, arr in params.params.items():
        lines.append(f"param {name}")
        lines.append("shape " + " ".join(str(s) for s in arr.shape))
        lines.append(f"frozen {1 if params.is_frozen(name) else 0}")
        flat = arr.ravel()
        lines.append(f"values {flat.size}")
        for i in range(0, flat.size, 64):
            lines.append(" ".join(f"{v:.17g}" for v in flat[i:i + 64]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_checkpoint(path):
    """Inverse of save_checkpoint: returns (ParamSet, config, seed)."""
    text = Path(path).read_text(encoding="ascii")
    lines = text.splitlines()
    if not lines or lines[0] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    seed = int(lines[1].split(" ", 1)[1])
    config = json.loads(lines[2].split(" ", 1)[1])
    n_params = int(lines[3].split(" ", 1)[1])
    params: dict[str, np.ndarray] = {}
    frozen = set()
    i = 4
    for _ in range(n_params):
        name = lines[i].split(" ", 1)[1]
        shape = tuple(int(s) for s in lines[i + 1].split()[1:])
        if int(lines[i + 2].split()[1]):
            frozen.add(name)
        count = int(lines[i + 3].split()[1])
        i += 4
        vals: list[float] = []
        while len(vals) < count:
            vals.extend(float(tok) for tok in lines[i].split())
            i += 1
        params[name] = np.array(vals, dtype=np.float64).reshape(shape)
    return ParamSet(params, frozenset(frozen)), config, seed
