"""Pre-norm transformer encoder with hand-written backpropagation.

Embeddings are the sum of learned token, position and segment tables. Each
layer applies ``x + MHA(LN(x))`` then ``x + FFN(LN(x))`` with a GELU
feed-forward block; a final layer norm feeds three heads: the sequence
classifier (on the ``[CLS]`` position), masked-token prediction, and
next-sentence prediction. Dropout and weight decay are omitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import NonFiniteActivation, NonFiniteLoss, ShapeMismatch, UnknownToken
from .tokenization import BatchEncoding

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    max_positions: int = 512
    n_layers: int = 2
    hidden_size: int = 64
    n_heads: int = 4
    ffn_size: Optional[int] = None
    n_classes: int = 2
    mask_rate: float = 0.15
    seed: int = 0
    init_std: float = 0.3

    def __post_init__(self):
        if self.ffn_size is None:
            object.__setattr__(self, "ffn_size", 4 * self.hidden_size)
        if self.hidden_size % self.n_heads:
            raise ValueError("hidden_size must be divisible by n_heads")
        if self.n_layers < 1 or self.vocab_size < 6 or self.n_classes < 2:
            raise ValueError("need n_layers >= 1, vocab_size >= 6 and n_classes >= 2")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError("mask_rate must lie in [0, 1]")

    @classmethod
    def preset(cls, name: str, vocab_size: int, n_classes: int = 2, **overrides) -> "TransformerConfig":
        presets = {
            "desk": dict(max_positions=512, n_layers=2, hidden_size=64, n_heads=4),
            "bert-base": dict(max_positions=512, n_layers=12, hidden_size=768, n_heads=12, init_std=0.02),
        }
        if name not in presets:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(presets)}")
        return cls(vocab_size=vocab_size, n_classes=n_classes, **{**presets[name], **overrides})

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.n_heads


def _layer_keys(i: int) -> list[str]:
    p = f"layers.{i}."
    return [p + k for k in (
        "ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
        "attn.wo", "attn.bo", "ln2.g", "ln2.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
    )]


def init_params(config: TransformerConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    h, f, v = config.hidden_size, config.ffn_size, config.vocab_size

    def normal(*shape):
        return rng.normal(0.0, config.init_std, size=shape)

    params = {
        "tok_emb": normal(v, h),
        "pos_emb": normal(config.max_positions, h),
        "seg_emb": normal(2, h),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        params.update({
            p + "ln1.g": np.ones(h), p + "ln1.b": np.zeros(h),
            p + "attn.wq": normal(h, h), p + "attn.bq": np.zeros(h),
            p + "attn.wk": normal(h, h), p + "attn.bk": np.zeros(h),
            p + "attn.wv": normal(h, h), p + "attn.bv": np.zeros(h),
            p + "attn.wo": normal(h, h), p + "attn.bo": np.zeros(h),
            p + "ln2.g": np.ones(h), p + "ln2.b": np.zeros(h),
            p + "ffn.w1": normal(h, f), p + "ffn.b1": np.zeros(f),
            p + "ffn.w2": normal(f, h), p + "ffn.b2": np.zeros(h),
        })
    params.update({
        "final_ln.g": np.ones(h), "final_ln.b": np.zeros(h),
        "cls.w": normal(h, config.n_classes), "cls.b": np.zeros(config.n_classes),
        "mlm.w": normal(h, v), "mlm.b": np.zeros(v),
        "nsp.w": normal(h, 2), "nsp.b": np.zeros(2),
    })
    return params


class TransformerModel:
    """Parameters plus per-layer-group trainability.

    Layer groups, earliest first: ``embeddings``, ``layer_0`` ..
    ``layer_{L-1}`` (the top layer also owns the final layer norm), ``head``
    (sequence classifier). The pretraining heads form their own group,
    ``pretrain_heads``, outside the fine-tuning order.
    """

    def __init__(self, config: TransformerConfig, params: Optional[dict[str, np.ndarray]] = None):
        self.config = config
        self.params = init_params(config) if params is None else params
        expected = init_params_shapes(config)
        for k, shape in expected.items():
            if k not in self.params or self.params[k].shape != shape:
                raise ShapeMismatch(f"parameter {k} missing or not of shape {shape}")
        self.trainable = {g: True for g in self.layer_groups + ["pretrain_heads"]}

    @property
    def layer_groups(self) -> list[str]:
        return ["embeddings"] + [f"layer_{i}" for i in range(self.config.n_layers)] + ["head"]

    def group_of(self, name: str) -> str:
        if name in ("tok_emb", "pos_emb", "seg_emb"):
            return "embeddings"
        if name.startswith("layers."):
            return f"layer_{name.split('.')[1]}"
        if name.startswith("final_ln."):
            return f"layer_{self.config.n_layers - 1}"
        if name.startswith("cls."):
            return "head"
        return "pretrain_heads"

    def group_params(self, group: str) -> list[str]:
        return [k for k in self.params if self.group_of(k) == group]

    def set_trainable(self, mask: list[bool]) -> None:
        for group, flag in zip(self.layer_groups, mask, strict=True):
            self.trainable[group] = bool(flag)

    def copy(self) -> "TransformerModel":
        clone = TransformerModel(self.config, {k: v.copy() for k, v in self.params.items()})
        clone.trainable = dict(self.trainable)
        return clone

    def zero_classifier_head(self) -> None:
        self.params["cls.w"][...] = 0.0
        self.params["cls.b"][...] = 0.0


def init_params_shapes(config: TransformerConfig) -> dict[str, tuple]:
    h, f, v, c = config.hidden_size, config.ffn_size, config.vocab_size, config.n_classes
    shapes = {"tok_emb": (v, h), "pos_emb": (config.max_positions, h), "seg_emb": (2, h)}
    for i in range(config.n_layers):
        for k in _layer_keys(i):
            leaf = k.split(".", 2)[2]
            shapes[k] = {
                "ln1.g": (h,), "ln1.b": (h,), "ln2.g": (h,), "ln2.b": (h,),
                "attn.wq": (h, h), "attn.wk": (h, h), "attn.wv": (h, h), "attn.wo": (h, h),
                "attn.bq": (h,), "attn.bk": (h,), "attn.bv": (h,), "attn.bo": (h,),
                "ffn.w1": (h, f), "ffn.b1": (f,), "ffn.w2": (f, h), "ffn.b2": (h,),
            }[leaf]
    shapes.update({
        "final_ln.g": (h,), "final_ln.b": (h,), "cls.w": (h, c), "cls.b": (c,),
        "mlm.w": (h, v), "mlm.b": (v,), "nsp.w": (h, 2), "nsp.b": (2,),
    })
    return shapes


# ---------------------------------------------------------------- primitives

def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def gelu(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * (1.0 + np.tanh(_GELU_C * (u + 0.044715 * u**3)))


def _gelu_grad(u: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (u + 0.044715 * u**3))
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_back(dy, g, cache):
    xhat, inv = cache
    flat = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=flat)
    db = dy.sum(axis=flat)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _mask_bias(mask: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if mask is None:
        return None
    mask = np.asarray(mask).astype(bool)
    if not mask.any(axis=-1).all():
        raise ShapeMismatch("attention mask hides every key of some row")
    return np.where(mask, 0.0, -np.inf)


def attention_weights(q: np.ndarray, k: np.ndarray, mask=None) -> np.ndarray:
    """softmax(q k^T / sqrt(d) + bias), bias = -inf on masked keys."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape[-1] != k.shape[-1] or q.shape[:-2] != k.shape[:-2]:
        raise ShapeMismatch(f"query {q.shape} and key {k.shape} do not align")
    scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(q.shape[-1])
    bias = _mask_bias(mask)
    if bias is not None:
        if bias.shape[-1] != k.shape[-2]:
            raise ShapeMismatch(f"mask over {bias.shape[-1]} keys for {k.shape[-2]} keys")
        scores = scores + bias[..., None, :]
    return softmax(scores)


def attention(q, k, v, mask=None, return_weights: bool = False):
    """Scaled dot-product attention over [..., seq, d] inputs.

    ``mask`` marks real keys with 1; masked keys get zero weight.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[:-1] != np.shape(k)[:-1]:
        raise ShapeMismatch(f"key {np.shape(k)} and value {v.shape} do not align")
    w = attention_weights(q, k, mask)
    out = w @ v
    return (out, w) if return_weights else out


# ---------------------------------------------------------------- forward / backward

@dataclass
class ForwardOutput:
    class_probs: np.ndarray
    mlm_logits: np.ndarray
    nsp_logits: np.ndarray
    pooled: np.ndarray
    hidden: np.ndarray = field(repr=False)


def _check_batch(model: TransformerModel, batch: BatchEncoding) -> None:
    cfg = model.config
    ids = batch.input_ids
    if ids.shape != batch.attention_mask.shape or ids.shape != batch.segment_ids.shape:
        raise ShapeMismatch("ids, attention mask and segment ids differ in shape")
    if ids.shape[1] > cfg.max_positions:
        raise ShapeMismatch(f"sequence of {ids.shape[1]} exceeds {cfg.max_positions} positions")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ShapeMismatch("token id outside the vocabulary")
    if batch.segment_ids.size and (batch.segment_ids.min() < 0 or batch.segment_ids.max() > 1):
        raise ShapeMismatch("segment ids must be 0 or 1")


def _encode(model: TransformerModel, batch: BatchEncoding):
    """Run embeddings and the encoder stack; return final hidden states and caches."""
    p = model.params
    cfg = model.config
    _check_batch(model, batch)
    bsz, seq = batch.input_ids.shape
    nh, dh = cfg.n_heads, cfg.head_size
    x = p["tok_emb"][batch.input_ids] + p["pos_emb"][:seq][None] + p["seg_emb"][batch.segment_ids]
    bias = _mask_bias(batch.attention_mask)[:, None, None, :]
    caches = []
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        a, ln1 = _layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])

        def heads(t):
            return t.reshape(bsz, seq, nh, dh).transpose(0, 2, 1, 3)

        q = heads(a @ p[pre + "attn.wq"] + p[pre + "attn.bq"])
        k = heads(a @ p[pre + "attn.wk"] + p[pre + "attn.bk"])
        v = heads(a @ p[pre + "attn.wv"] + p[pre + "attn.bv"])
        w = softmax(q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh) + bias)
        ctx = (w @ v).transpose(0, 2, 1, 3).reshape(bsz, seq, cfg.hidden_size)
        x = x + ctx @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
        c, ln2 = _layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        u = c @ p[pre + "ffn.w1"] + p[pre + "ffn.b1"]
        gl = gelu(u)
        x = x + gl @ p[pre + "ffn.w2"] + p[pre + "ffn.b2"]
        caches.append((a, ln1, q, k, v, w, ctx, c, ln2, u, gl))
    hidden, lnf = _layer_norm(x, p["final_ln.g"], p["final_ln.b"])
    if not np.all(np.isfinite(hidden)):
        raise NonFiniteActivation("non-finite hidden state")
    return hidden, (caches, lnf)


def forward(model: TransformerModel, batch: BatchEncoding) -> ForwardOutput:
    p = model.params
    hidden, _ = _encode(model, batch)
    pooled = hidden[:, 0]
    probs = softmax(pooled @ p["cls.w"] + p["cls.b"])
    if not np.all(np.isfinite(probs)):
        raise NonFiniteActivation("non-finite class probabilities")
    return ForwardOutput(
        class_probs=probs,
        mlm_logits=hidden @ p["mlm.w"] + p["mlm.b"],
        nsp_logits=pooled @ p["nsp.w"] + p["nsp.b"],
        pooled=pooled,
        hidden=hidden,
    )


def predict_proba(model: TransformerModel, batch: BatchEncoding, batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(batch), batch_size):
        sub = BatchEncoding(
            batch.input_ids[start:start + batch_size],
            batch.attention_mask[start:start + batch_size],
            batch.segment_ids[start:start + batch_size],
        ).trimmed()
        out.append(forward(model, sub).class_probs)
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.n_classes))


def _cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -float(logp[np.arange(n), targets].mean())
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


def loss_and_grads(model: TransformerModel, batch: BatchEncoding, objective: str = "classify",
                   need_grads: bool = True):
    """Loss and gradients for ``classify`` (class labels) or ``pretrain`` (MLM + NSP).

    Returns ``(loss, grads)``; ``grads`` maps every parameter name to an array
    of its shape (zeros for parameters the objective does not touch).
    """
    p = model.params
    cfg = model.config
    hidden, (caches, lnf) = _encode(model, batch)
    bsz, seq, hsz = hidden.shape
    d_hidden = np.zeros_like(hidden)
    grads = {k: np.zeros_like(v) for k, v in p.items()} if need_grads else None
    pooled = hidden[:, 0]

    if objective == "classify":
        if batch.labels is None:
            raise ShapeMismatch("classification needs labels")
        loss, dlog = _cross_entropy(pooled @ p["cls.w"] + p["cls.b"], batch.labels)
        if need_grads:
            grads["cls.w"] = pooled.T @ dlog
            grads["cls.b"] = dlog.sum(axis=0)
            d_hidden[:, 0] += dlog @ p["cls.w"].T
    elif objective == "pretrain":
        if batch.mlm_targets is None or batch.nsp_labels is None:
            raise ShapeMismatch("pretraining needs MLM targets and NSP labels")
        loss, dlog = _cross_entropy(pooled @ p["nsp.w"] + p["nsp.b"], batch.nsp_labels)
        if need_grads:
            grads["nsp.w"] = pooled.T @ dlog
            grads["nsp.b"] = dlog.sum(axis=0)
            d_hidden[:, 0] += dlog @ p["nsp.w"].T
        rows, cols = np.nonzero(batch.mlm_targets >= 0)
        if rows.size:
            hm = hidden[rows, cols]
            mlm_loss, dmlm = _cross_entropy(hm @ p["mlm.w"] + p["mlm.b"], batch.mlm_targets[rows, cols])
            loss += mlm_loss
            if need_grads:
                grads["mlm.w"] = hm.T @ dmlm
                grads["mlm.b"] = dmlm.sum(axis=0)
                np.add.at(d_hidden, (rows, cols), dmlm @ p["mlm.w"].T)
    else:
        raise ValueError(f"unknown objective {objective!r}")

    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss}")
    if not need_grads:
        return loss, None

    dx, grads["final_ln.g"], grads["final_ln.b"] = _layer_norm_back(d_hidden, p["final_ln.g"], lnf)
    nh, dh = cfg.n_heads, cfg.head_size
    for i in reversed(range(cfg.n_layers)):
        pre = f"layers.{i}."
        a, ln1, q, k, v, w, ctx, c, ln2, u, gl = caches[i]
        # feed-forward residual
        grads[pre + "ffn.w2"] = np.einsum("bsf,bsh->fh", gl, dx)
        grads[pre + "ffn.b2"] = dx.sum(axis=(0, 1))
        du = (dx @ p[pre + "ffn.w2"].T) * _gelu_grad(u)
        grads[pre + "ffn.w1"] = np.einsum("bsh,bsf->hf", c, du)
        grads[pre + "ffn.b1"] = du.sum(axis=(0, 1))
        dc = du @ p[pre + "ffn.w1"].T
        dln, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = _layer_norm_back(dc, p[pre + "ln2.g"], ln2)
        dx = dx + dln
        # attention residual
        grads[pre + "attn.wo"] = np.einsum("bsh,bsk->hk", ctx, dx)
        grads[pre + "attn.bo"] = dx.sum(axis=(0, 1))
        dctx = (dx @ p[pre + "attn.wo"].T).reshape(bsz, seq, nh, dh).transpose(0, 2, 1, 3)
        dw = dctx @ v.transpose(0, 1, 3, 2)
        dv = w.transpose(0, 1, 3, 2) @ dctx
        dscores = w * (dw - (dw * w).sum(axis=-1, keepdims=True)) / math.sqrt(dh)
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q

        def merge(t):
            return t.transpose(0, 2, 1, 3).reshape(bsz, seq, hsz)

        da = np.zeros_like(a)
        for name, dt in (("q", merge(dq)), ("k", merge(dk)), ("v", merge(dv))):
            grads[pre + f"attn.w{name}"] = np.einsum("bsh,bsk->hk", a, dt)
            grads[pre + f"attn.b{name}"] = dt.sum(axis=(0, 1))
            da += dt @ p[pre + f"attn.w{name}"].T
        dln, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = _layer_norm_back(da, p[pre + "ln1.g"], ln1)
        dx = dx + dln

    grads["tok_emb"] = np.zeros_like(p["tok_emb"])
    np.add.at(grads["tok_emb"], batch.input_ids, dx)
    grads["pos_emb"] = np.zeros_like(p["pos_emb"])
    grads["pos_emb"][:seq] = dx.sum(axis=0)
    grads["seg_emb"] = np.zeros_like(p["seg_emb"])
    np.add.at(grads["seg_emb"], batch.segment_ids, dx)
    return loss, grads


class MomentumSGD:
    """Heavy-ball gradient descent: v <- mu v + g; p <- p - lr v."""

    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lrs: dict[str, float]) -> None:
        """Update the parameters named in ``lrs``; every other entry is left untouched."""
        for name, lr in lrs.items():
            vel = self.velocity.get(name)
            if vel is None:
                vel = np.zeros_like(params[name])
            vel = self.momentum * vel + grads[name]
            self.velocity[name] = vel
            params[name] -= lr * vel


def embedding_analogy(model: TransformerModel, vocab, positive, negative=(), exclude=()) -> str:
    """Token whose embedding is most cosine-similar to sum(positive) - sum(negative)."""
    table = model.params["tok_emb"]
    ids = {}
    for tok in list(positive) + list(negative):
        if tok not in vocab:
            raise UnknownToken(tok)
        ids[tok] = vocab.token_to_id[tok]
    query = np.zeros(table.shape[1])
    for tok in positive:
        query += table[ids[tok]]
    for tok in negative:
        query -= table[ids[tok]]
    norms = np.linalg.norm(table, axis=1) * np.linalg.norm(query)
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = np.where(norms > 0, table @ query / norms, -np.inf)
    for tok in exclude:
        if tok in vocab:
            sims[vocab.token_to_id[tok]] = -np.inf
    return vocab.tokens[int(np.argmax(sims))]
