"""List-wise ranking model.

A shared news encoder (word embeddings -> multi-head self-attention ->
attention pooling -> dense ReLU) turns titles into vectors.  A user encoder
(self-attention + attention pooling over clicked-news vectors) produces the
user vector ``u``.  The candidate list encoder relates candidates to each
other; in ``permutation`` mode every head sees the list in its own random
order through a causal mask, so identical candidates end up with different
representations.  Click scores are inner products ``u . h_i``.

No layer normalization and no feed-forward sublayer anywhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .text import PAD

LIST_ENCODER_MODES = ("none", "transformer_no_pos", "transformer_pos", "permutation")
CHECKPOINT_MAGIC = "divrec-checkpoint 1"


@dataclass
class ModelConfig:
    embed_dim: int = 300
    model_dim: int = 400
    heads: int = 20
    pool_dim: int = 200
    max_title_len: int = 30
    max_history_len: int = 50
    max_list_len: int = 256
    list_encoder_mode: str = "permutation"
    permutation_samples_at_inference: int = 1
    dtype: str = "float64"

    def __post_init__(self):
        for f in fields(self):
            if f.type == "int" and getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive, got {getattr(self, f.name)}")
        if self.model_dim % self.heads:
            raise ValueError(f"heads: model_dim {self.model_dim} is not divisible by heads {self.heads}")
        if self.list_encoder_mode not in LIST_ENCODER_MODES:
            raise ValueError(f"list_encoder_mode: expected one of {LIST_ENCODER_MODES}, got {self.list_encoder_mode!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype: expected float64 or float32, got {self.dtype!r}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        base = dict(embed_dim=32, model_dim=32, heads=4, pool_dim=16, max_title_len=30, max_history_len=20)
        base.update(overrides)
        return cls(**base)


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(t.data.copy(), requires_grad=True) for k, t in self.tensors.items()})


def init_params(config: ModelConfig, word_vectors: np.ndarray, seed: int = 0) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; word table copied from ``word_vectors``."""
    if word_vectors.shape[1] != config.embed_dim:
        raise ValueError(f"embed_dim: config says {config.embed_dim}, word vectors have {word_vectors.shape[1]}")
    dtype = np.dtype(config.dtype)
    rng = np.random.default_rng(seed)
    e, d, p = config.embed_dim, config.model_dim, config.pool_dim
    tensors: dict[str, Tensor] = {}

    def uniform(name, shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        tensors[name] = Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)

    table = np.array(word_vectors, dtype=dtype)
    table[PAD] = 0.0
    tensors["word_emb"] = Tensor(table, requires_grad=True)
    for proj in ("wq", "wk", "wv"):
        uniform(f"news.{proj}", (e, d), e)
    uniform("news.pool.w", (d, p), d)
    uniform("news.pool.b", (p,), d)
    uniform("news.pool.q", (p,), p)
    uniform("news.dense.w", (d, d), d)
    uniform("news.dense.b", (d,), d)
    for proj in ("wq", "wk", "wv"):
        uniform(f"user.{proj}", (d, d), d)
    uniform("user.pool.w", (d, p), d)
    uniform("user.pool.b", (p,), d)
    uniform("user.pool.q", (p,), p)
    if config.list_encoder_mode != "none":
        for proj in ("wq", "wk", "wv"):
            uniform(f"list.{proj}", (d, d), d)
    if config.list_encoder_mode == "transformer_pos":
        uniform("list.pos", (config.max_list_len, d), d)
    return ModelParams(config, tensors)


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------

def _key_mask(valid: np.ndarray, dtype) -> np.ndarray:
    return np.where(valid, 0.0, -np.inf).astype(dtype)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, length, width = x.shape
    x = ad.reshape(x, (*lead, length, heads, width // heads))
    n = len(lead)
    return ad.transpose(x, (*range(n), n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, hd = x.shape
    n = len(lead)
    x = ad.transpose(x, (*range(n), n + 1, n, n + 2))
    return ad.reshape(x, (*lead, length, heads * hd))


def scaled_attention(q: Tensor, k: Tensor, v: Tensor, mask=None) -> Tensor:
    """softmax(q k^T / sqrt(dk) + mask) v over the last two axes."""
    scores = ad.scale(q @ ad.transpose(k, (*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)), 1.0 / math.sqrt(q.shape[-1]))
    return ad.masked_softmax(scores, mask) @ v


def causal_mask(length: int, dtype=np.float64) -> np.ndarray:
    """Additive mask letting position i see positions 0..i (itself included)."""
    return np.triu(np.full((length, length), -np.inf, dtype=dtype), k=1)


def causal_self_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Attention in which position i only reads positions <= i."""
    return scaled_attention(q, k, v, causal_mask(q.shape[-2], q.dtype))


def multi_head_self_attention(x: Tensor, valid: np.ndarray, wq: Tensor, wk: Tensor, wv: Tensor, heads: int) -> Tensor:
    """Bidirectional MHSA on ``x`` (B, L, D_in) with padded keys masked out.

    Rows with no valid key attend to position 0 instead of raising; callers
    zero such rows afterwards.
    """
    valid = np.array(valid, dtype=bool)
    dead = ~valid.any(axis=-1)
    valid[dead, 0] = True
    q, k, v = (_split_heads(x @ w, heads) for w in (wq, wk, wv))
    mask = _key_mask(valid, x.dtype)[:, None, None, :]
    return _merge_heads(scaled_attention(q, k, v, mask))


def _pool(x: Tensor, valid: np.ndarray, w: Tensor, b: Tensor, q: Tensor) -> Tensor:
    bsz, length, _ = x.shape
    hidden = ad.tanh(ad.add(x @ w, b))
    logits = ad.reshape(hidden @ ad.reshape(q, (q.shape[0], 1)), (bsz, length))
    alpha = ad.masked_softmax(logits, _key_mask(valid, x.dtype))
    return ad.reshape(ad.reshape(alpha, (bsz, 1, length)) @ x, (bsz, x.shape[-1]))


def attention_pool(seq: Tensor, valid, w: Tensor, b: Tensor, q: Tensor) -> Tensor:
    """Additive attention pooling: alpha_i = softmax_i(q . tanh(W x_i + b)), output sum alpha_i x_i.

    ``seq`` is (L, d) or (B, L, d); padded positions (``valid`` False) get
    zero weight.  A sequence with no valid position raises ``ValueError``.
    """
    valid = np.asarray(valid, dtype=bool)
    if seq.ndim == 2:
        if not valid.any():
            raise ValueError("attention_pool: every position is padding")
        out = _pool(ad.reshape(seq, (1, *seq.shape)), valid[None], w, b, q)
        return ad.reshape(out, (seq.shape[1],))
    if not valid.any(axis=-1).all():
        raise ValueError("attention_pool: a sequence has only padding")
    return _pool(seq, valid, w, b, q)


def encode_news(titles, params: ModelParams) -> Tensor:
    """Token-id matrix (B, L) -> news vectors (B, d).  All-PAD titles map to zero."""
    ids = np.asarray(titles, dtype=np.intp)
    if ids.ndim == 1:
        return ad.reshape(encode_news(ids[None], params), (params.config.model_dim,))
    cfg = params.config
    bsz, length = ids.shape
    valid = ids != PAD
    alive = valid.any(axis=1)
    pool_valid = valid.copy()
    pool_valid[~alive, 0] = True
    emb = ad.reshape(ad.gather_rows(params["word_emb"], ids.reshape(-1)), (bsz, length, cfg.embed_dim))
    ctx = multi_head_self_attention(emb, valid, params["news.wq"], params["news.wk"], params["news.wv"], cfg.heads)
    pooled = _pool(ctx, pool_valid, params["news.pool.w"], params["news.pool.b"], params["news.pool.q"])
    out = ad.relu(ad.add(pooled @ params["news.dense.w"], params["news.dense.b"]))
    if not alive.all():
        out = ad.mul(out, alive[:, None].astype(out.dtype))
    return out


def encode_user(history: Tensor, params: ModelParams, valid=None) -> Tensor:
    """Clicked-news vectors (N, d) -> user vector (d,).  Empty history gives zeros."""
    cfg = params.config
    n = history.shape[0]
    valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if n == 0 or not valid.any():
        return Tensor(np.zeros(cfg.model_dim, dtype=np.dtype(cfg.dtype)))
    x = ad.reshape(history, (1, n, cfg.model_dim))
    ctx = multi_head_self_attention(x, valid[None], params["user.wq"], params["user.wk"], params["user.wv"], cfg.heads)
    pooled = _pool(ctx, valid[None], params["user.pool.w"], params["user.pool.b"], params["user.pool.q"])
    return ad.reshape(pooled, (cfg.model_dim,))


# --------------------------------------------------------------------------
# permutation list encoder
# --------------------------------------------------------------------------

@dataclass
class PermutationPlan:
    """One ordering per head: row h lists which input row lands at each permuted slot."""

    perms: np.ndarray  # (heads, M)
    seed: int | None = None

    def __post_init__(self):
        self.perms = np.asarray(self.perms, dtype=np.intp)
        m = self.perms.shape[1]
        for h, p in enumerate(self.perms):
            if not np.array_equal(np.sort(p), np.arange(m)):
                raise ValueError(f"head {h}: not a permutation of 0..{m - 1}")

    @property
    def heads(self) -> int:
        return self.perms.shape[0]

    @property
    def size(self) -> int:
        return self.perms.shape[1]

    @property
    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.perms)
        rows = np.arange(self.heads)[:, None]
        inv[rows, self.perms] = np.arange(self.size)
        return inv

    @classmethod
    def sample(cls, size: int, heads: int, rng: np.random.Generator) -> "PermutationPlan":
        return cls(np.stack([rng.permutation(size) for _ in range(heads)]))

    @classmethod
    def from_seed(cls, size: int, heads: int, seed) -> "PermutationPlan":
        plan = cls.sample(size, heads, np.random.default_rng(seed))
        plan.seed = seed if isinstance(seed, int) else None
        return plan

    @classmethod
    def identity(cls, size: int, heads: int) -> "PermutationPlan":
        return cls(np.tile(np.arange(size), (heads, 1)))


def shuffle_rows(x: np.ndarray, perm: np.ndarray) -> np.ndarray:
    return x[perm]


def unshuffle_rows(x: np.ndarray, perm: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    out[perm] = x
    return out


def _per_head_gather(x: Tensor, index: np.ndarray) -> Tensor:
    """x (H, M, hd), index (H, M) -> y[h, i] = x[h, index[h, i]]."""
    heads, m, hd = x.shape
    flat = (index + np.arange(heads)[:, None] * m).reshape(-1)
    return ad.reshape(ad.gather_rows(ad.reshape(x, (heads * m, hd)), flat), (heads, m, hd))


def encode_candidate_list(rc: Tensor, params: ModelParams, plan: PermutationPlan | None = None, mode: str | None = None) -> Tensor:
    """Candidate vectors (M, d) -> list-aware vectors (M, d), with a residual connection."""
    cfg = params.config
    mode = mode or cfg.list_encoder_mode
    m = rc.shape[0]
    if m == 0:
        raise ValueError("encode_candidate_list: empty candidate list")
    if mode == "none":
        return rc
    if mode in ("transformer_no_pos", "transformer_pos"):
        x = rc
        if mode == "transformer_pos":
            if m > cfg.max_list_len:
                raise ValueError(f"list of {m} candidates exceeds max_list_len {cfg.max_list_len}")
            x = ad.add(rc, ad.gather_rows(params["list.pos"], np.arange(m)))
        ctx = multi_head_self_attention(
            ad.reshape(x, (1, m, cfg.model_dim)), np.ones((1, m), dtype=bool),
            params["list.wq"], params["list.wk"], params["list.wv"], cfg.heads,
        )
        return ad.add(ad.reshape(ctx, (m, cfg.model_dim)), rc)
    if mode != "permutation":
        raise ValueError(f"unknown list encoder mode {mode!r}")
    if plan is None:
        raise ValueError("permutation mode needs a PermutationPlan")
    if plan.heads != cfg.heads or plan.size != m:
        raise ValueError(f"plan is {plan.heads}x{plan.size}, expected {cfg.heads}x{m}")
    # Projecting before shuffling equals shuffling before projecting (row-wise maps).
    q, k, v = (_split_heads(rc @ params[f"list.{w}"], cfg.heads) for w in ("wq", "wk", "wv"))
    q, k, v = (_per_head_gather(t, plan.perms) for t in (q, k, v))
    ctx = causal_self_attention(q, k, v)
    ctx = _per_head_gather(ctx, plan.inverse)
    return ad.add(_merge_heads(ctx), rc)


def predict_clicks(u: Tensor, hc: Tensor) -> Tensor:
    d = u.shape[0]
    return ad.reshape(hc @ ad.reshape(u, (d, 1)), (hc.shape[0],))


def rank_order(scores) -> np.ndarray:
    """Indices by descending score; ties keep the original candidate order."""
    return np.argsort(-np.asarray(scores), kind="stable")


# --------------------------------------------------------------------------
# full forward
# --------------------------------------------------------------------------

def forward(params: ModelParams, history_titles, candidate_titles, plan: PermutationPlan | None = None) -> Tensor:
    """Click scores (M,) for one impression.

    ``history_titles`` is (N, L) token ids (N may be 0), ``candidate_titles``
    is (M, L).  ``plan`` is required in permutation mode.
    """
    cfg = params.config
    hist = np.asarray(history_titles, dtype=np.intp).reshape(-1, cfg.max_title_len)
    cand = np.asarray(candidate_titles, dtype=np.intp).reshape(-1, cfg.max_title_len)
    n, m = hist.shape[0], cand.shape[0]
    news = encode_news(np.concatenate([hist, cand]), params)
    cand_vecs = ad.gather_rows(news, np.arange(n, n + m))
    if n:
        u = encode_user(ad.gather_rows(news, np.arange(n)), params, (hist != PAD).any(axis=1))
    else:
        u = Tensor(np.zeros(cfg.model_dim, dtype=news.dtype))
    hc = encode_candidate_list(cand_vecs, params, plan)
    return predict_clicks(u, hc)


def predict(params: ModelParams, history_titles, candidate_titles, seed=0, samples: int | None = None) -> np.ndarray:
    """Inference scores; permutation mode averages over ``samples`` seeded plans."""
    cfg = params.config
    samples = samples or cfg.permutation_samples_at_inference
    m = np.asarray(candidate_titles).reshape(-1, cfg.max_title_len).shape[0]
    with ad.no_grad():
        if cfg.list_encoder_mode != "permutation":
            return forward(params, history_titles, candidate_titles).data.copy()
        rng = np.random.default_rng(seed)
        total = np.zeros(m, dtype=np.dtype(cfg.dtype))
        for _ in range(samples):
            total += forward(params, history_titles, candidate_titles, PermutationPlan.sample(m, cfg.heads, rng)).data
        return total / samples


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(params: ModelParams, path) -> None:
    """Text manifest: magic line, config JSON, then one ``tensor`` header + values line per parameter."""
    lines = [CHECKPOINT_MAGIC, "config\t" + json.dumps(asdict(params.config), sort_keys=True)]
    for name, t in params.tensors.items():
        shape = ",".join(str(n) for n in t.shape)
        lines.append(f"tensor\t{name}\t{t.dtype.name}\t{shape}")
        lines.append(" ".join(repr(x) for x in t.data.reshape(-1).tolist()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> ModelParams:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a divrec checkpoint (bad header {lines[0][:40]!r})")
    tag, payload = lines[1].split("\t", 1)
    if tag != "config":
        raise ValueError(f"{path}: line 2 must hold the config")
    config = ModelConfig(**json.loads(payload))
    tensors: dict[str, Tensor] = {}
    i = 2
    while i < len(lines) and lines[i]:
        tag, name, dtype, shape = lines[i].split("\t")
        if tag != "tensor":
            raise ValueError(f"{path}:{i + 1}: expected a tensor header")
        dims = tuple(int(s) for s in shape.split(",") if s)
        values = np.array([float(x) for x in lines[i + 1].split()], dtype=np.float64)
        if values.size != int(np.prod(dims)):
            raise ValueError(f"{path}:{i + 2}: {name} has {values.size} values for shape {dims}")
        tensors[name] = Tensor(values.astype(dtype).reshape(dims), requires_grad=True)
        i += 2
    return ModelParams(config, tensors)
