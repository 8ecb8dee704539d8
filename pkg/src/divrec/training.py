"""Losses and the per-impression training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ModelConfig, ModelParams, PermutationPlan, forward, init_params
from .optim import AdamState, adam_step
from .text import EmbeddingTable, similarity_matrix, tokenize

logger = logging.getLogger(__name__)

OBJECTIVES = ("listwise", "pointwise", "pairwise")


@dataclass
class TrainingConfig:
    lam: float = 20.0
    objective: str = "listwise"
    epochs: int = 3
    batch_size: int = 1  # impressions per Adam step (gradient accumulation)
    seed: int = 0
    lr: float = 1e-4
    squash_div: bool = False  # sigmoid(scores) inside the diversity term only

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam: must be >= 0, got {self.lam}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective: expected one of {OBJECTIVES}, got {self.objective!r}")
        if self.epochs < 0:
            raise ValueError(f"epochs: must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr: must be positive, got {self.lr}")


@dataclass
class ImpressionSample:
    impression_id: str
    history: np.ndarray  # (N, L) token ids
    candidates: np.ndarray  # (M, L) token ids
    labels: np.ndarray  # (M,) in {0, 1}
    similarity: np.ndarray  # (M, M)

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(len(self.labels) - self.labels.sum())


def build_samples(dataset, table: EmbeddingTable, max_title_len: int, max_history_len: int) -> list[ImpressionSample]:
    """Tokenize impressions and precompute their similarity matrices from fixed word vectors."""
    samples = []
    vocab = dataset.vocab
    cache: dict[str, list[int]] = {}

    def tokens(nid):
        if nid not in cache:
            cache[nid] = tokenize(dataset.news[nid].title, vocab, max_title_len)
        return cache[nid]

    for imp in dataset.impressions:
        hist_ids = list(imp.history)[-max_history_len:] if max_history_len else []
        history = np.array([tokens(n) for n in hist_ids], dtype=np.intp).reshape(-1, max_title_len)
        cands = np.array([tokens(n) for n, _ in imp.candidates], dtype=np.intp).reshape(-1, max_title_len)
        labels = np.array([lab for _, lab in imp.candidates], dtype=np.int64)
        samples.append(ImpressionSample(imp.impression_id, history, cands, labels, similarity_matrix(cands, table)))
    return samples


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

def _split(labels) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    return np.flatnonzero(labels == 1), np.flatnonzero(labels != 1)


def listwise_contrastive_loss(scores: Tensor, labels) -> Tensor:
    """Sum over clicked items of -log softmax against all non-clicked items of the list."""
    pos, neg = _split(labels)
    if pos.size == 0:
        raise ValueError("listwise loss needs at least one clicked candidate")
    if neg.size == 0:
        return Tensor(np.zeros((), dtype=scores.dtype))
    p, q = pos.size, neg.size
    zp = ad.reshape(ad.gather_rows(scores, pos), (p, 1))
    zn = ad.add(ad.reshape(ad.gather_rows(scores, neg), (1, q)), np.zeros((p, 1), dtype=scores.dtype))
    z = ad.concat([zp, zn], axis=1)
    # per-row max shift; the loss is invariant to it
    shift = -z.data.max(axis=1, keepdims=True)
    z = ad.add(z, shift)
    log_norm = ad.log(ad.sum(ad.exp(z), axis=1))
    first = ad.reshape(ad.gather_rows(ad.transpose(z), [0]), (p,))
    return ad.sum(ad.add(log_norm, ad.neg(first)))


def diversity_regularization_loss(scores: Tensor, similarity, squash: bool = False) -> Tensor:
    """sum_i sum_j y_i y_j s_ij, the diagonal included."""
    m = scores.shape[0]
    s = np.asarray(similarity, dtype=scores.dtype)
    if s.shape != (m, m):
        raise ad.DimensionError(f"similarity {s.shape} does not match {m} scores")
    y = ad.sigmoid(scores) if squash else scores
    col = ad.reshape(y, (m, 1))
    return ad.reshape(ad.transpose(col) @ (Tensor(s) @ col), ())


def combined_loss(scores: Tensor, labels, similarity, lam: float, squash: bool = False) -> Tensor:
    rec = listwise_contrastive_loss(scores, labels)
    if lam == 0:
        return rec
    return ad.add(rec, ad.scale(diversity_regularization_loss(scores, similarity, squash), lam))


def pointwise_loss(scores: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy of sigmoid(scores) against the click labels."""
    y = np.asarray(labels, dtype=scores.dtype)
    ll = ad.add(ad.mul(ad.log_sigmoid(scores), y), ad.mul(ad.log_sigmoid(ad.neg(scores)), 1.0 - y))
    return ad.neg(ad.mean(ll))


def pairwise_bpr_loss(scores: Tensor, labels) -> Tensor:
    """Mean of -log sigmoid(y_pos - y_neg) over every clicked/non-clicked pair."""
    pos, neg = _split(labels)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("BPR loss needs at least one clicked and one non-clicked candidate")
    sp = ad.reshape(ad.gather_rows(scores, pos), (pos.size, 1))
    sn = ad.reshape(ad.gather_rows(scores, neg), (1, neg.size))
    return ad.neg(ad.mean(ad.log_sigmoid(ad.add(sp, ad.neg(sn)))))


def objective_terms(scores: Tensor, sample: ImpressionSample, config: TrainingConfig) -> tuple[Tensor, Tensor | None]:
    if config.objective == "listwise":
        rec = listwise_contrastive_loss(scores, sample.labels)
    elif config.objective == "pointwise":
        rec = pointwise_loss(scores, sample.labels)
    else:
        rec = pairwise_bpr_loss(scores, sample.labels)
    div = diversity_regularization_loss(scores, sample.similarity, config.squash_div) if config.lam else None
    return rec, div


# --------------------------------------------------------------------------
# loop
# --------------------------------------------------------------------------

@dataclass
class TraceRow:
    epoch: int
    step: int
    l_rec: float
    l_div: float
    l_total: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.step}\t{self.l_rec!r}\t{self.l_div!r}\t{self.l_total!r}"


@dataclass
class TrainResult:
    params: ModelParams
    trace: list[TraceRow] = field(default_factory=list)

    def epoch_means(self) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for row in self.trace:
            by_epoch.setdefault(row.epoch, []).append(row.l_total)
        return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def _seeds(seed: int):
    """Independent streams for init, impression order and permutation plans."""
    return np.random.SeedSequence(seed).spawn(3)


def init_seed(seed: int) -> int:
    return int(_seeds(seed)[0].generate_state(1)[0])


def trainable(sample: ImpressionSample, objective: str) -> bool:
    if sample.n_pos == 0:
        return False
    return objective != "pairwise" or sample.n_neg > 0


def train(
    samples: list[ImpressionSample],
    config: TrainingConfig,
    model_config: ModelConfig,
    word_vectors: np.ndarray,
    params: ModelParams | None = None,
) -> TrainResult:
    """Fit the model impression by impression; deterministic given ``config.seed``.

    Impressions without clicks (or, for BPR, without non-clicks) are skipped.
    """
    usable = [s for s in samples if trainable(s, config.objective)]
    if not usable:
        raise ValueError("no trainable impressions (need at least one click per impression)")
    _, order_seq, plan_seq = _seeds(config.seed)
    if params is None:
        params = init_params(model_config, word_vectors, seed=init_seed(config.seed))
    order_rng = np.random.default_rng(order_seq)
    plan_rng = np.random.default_rng(plan_seq)
    state = AdamState(lr=config.lr)
    named = params.tensors
    permute = model_config.list_encoder_mode == "permutation"
    result = TrainResult(params)
    step = 0
    pending = 0
    params.zero_grad()
    for epoch in range(config.epochs):
        for idx in order_rng.permutation(len(usable)):
            sample = usable[idx]
            plan = PermutationPlan.sample(len(sample.labels), model_config.heads, plan_rng) if permute else None
            scores = forward(params, sample.history, sample.candidates, plan)
            rec, div = objective_terms(scores, sample, config)
            loss = rec if div is None else ad.add(rec, ad.scale(div, config.lam))
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite loss at impression {sample.impression_id}")
            ad.backward(loss)
            pending += 1
            if pending == config.batch_size:
                adam_step(named, state)
                params.zero_grad()
                pending = 0
            result.trace.append(TraceRow(epoch, step, float(rec.data), 0.0 if div is None else float(div.data), float(loss.data)))
            step += 1
        if pending:
            adam_step(named, state)
            params.zero_grad()
            pending = 0
        logger.info("epoch %d mean loss %.5f", epoch, result.epoch_means()[-1] if result.trace else float("nan"))
    return result
