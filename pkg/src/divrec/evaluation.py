"""Accuracy (AUC, MRR, nDCG@k) and diversity (ILAD@k, ILMD@k) evaluation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .model import ModelConfig, ModelParams, predict, rank_order
from .rerank import rerank_pipeline
from .training import ImpressionSample, TrainingConfig, train

METRICS = ("auc", "mrr", "ndcg5", "ndcg10", "ilad5", "ilad10", "ilmd5", "ilmd10")


def auc(scores, labels) -> float:
    """Share of (clicked, non-clicked) pairs ordered correctly; ties count one half."""
    y = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels)
    pos, neg = y[lab == 1], y[lab != 1]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs both clicked and non-clicked candidates")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def mrr_and_ndcg(scores, labels, k: int) -> tuple[float, float]:
    lab = np.asarray(labels)
    n_pos = int((lab == 1).sum())
    if n_pos == 0:
        raise ValueError("MRR/nDCG need at least one clicked candidate")
    order = rank_order(scores)
    ranks = np.flatnonzero(lab[order] == 1) + 1
    mrr = float(np.mean(1.0 / ranks))
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float(discounts[ranks[ranks <= k] - 1].sum())
    idcg = float(discounts[: min(n_pos, k)].sum())
    return mrr, dcg / idcg


def intra_list_metrics(top, similarity) -> tuple[float, float]:
    """(ILAD, ILMD) with distance 1 - s_ij over the unordered pairs of ``top``."""
    top = np.asarray(top, dtype=np.intp)
    if top.size < 2:
        raise ValueError("intra-list metrics need at least two items")
    s = np.asarray(similarity)[np.ix_(top, top)]
    iu = np.triu_indices(top.size, k=1)
    dist = 1.0 - s[iu]
    return float(dist.mean()), float(dist.min())


@dataclass
class EvalReport:
    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    ilad5: float
    ilad10: float
    ilmd5: float
    ilmd10: float
    n_impressions: int
    n_accuracy: int = 0
    n_diversity5: int = 0
    n_diversity10: int = 0

    def metrics(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}

    def header(self) -> list[str]:
        return [f.name for f in fields(self)]

    def row(self) -> list[str]:
        return [_fmt(getattr(self, f.name)) for f in fields(self)]

    def to_tsv(self) -> str:
        return "\t".join(self.header()) + "\n" + "\t".join(self.row()) + "\n"

    def to_table(self) -> str:
        names = self.header()
        width = max(len(n) for n in names)
        return "\n".join(f"{n:<{width}}  {v}" for n, v in zip(names, self.row())) + "\n"


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "nan" if math.isnan(value) else f"{value:.6f}"


def impression_metrics(scores, labels, similarity, ks: Sequence[int] = (5, 10)) -> dict[str, float]:
    """Per-impression metrics.  Accuracy keys are absent when the list has no
    clicks or no non-clicks; ``ilad{k}``/``ilmd{k}`` are absent for lists shorter than 2."""
    lab = np.asarray(labels)
    out: dict[str, float] = {}
    n_pos = int((lab == 1).sum())
    if 0 < n_pos < lab.size:
        out["auc"] = auc(scores, lab)
        for k in ks:
            mrr, ndcg = mrr_and_ndcg(scores, lab, k)
            out["mrr"] = mrr
            out[f"ndcg{k}"] = ndcg
    order = rank_order(scores)
    for k in ks:
        top = order[: min(k, order.size)]
        if top.size >= 2:
            out[f"ilad{k}"], out[f"ilmd{k}"] = intra_list_metrics(top, similarity)
    return out


def aggregate(per_impression: Sequence[dict[str, float]]) -> EvalReport:
    if not per_impression:
        raise ValueError("cannot evaluate an empty dataset")

    def avg(key):
        vals = [d[key] for d in per_impression if key in d]
        return float(np.mean(vals)) if vals else float("nan")

    return EvalReport(
        **{m: avg(m) for m in METRICS},
        n_impressions=len(per_impression),
        n_accuracy=sum("auc" in d for d in per_impression),
        n_diversity5=sum("ilad5" in d for d in per_impression),
        n_diversity10=sum("ilad10" in d for d in per_impression),
    )


def ranking_scores(order: Sequence[int]) -> np.ndarray:
    """Pseudo-scores reproducing a given full ordering (first item highest)."""
    m = len(order)
    s = np.empty(m)
    s[np.asarray(order)] = np.arange(m, 0, -1)
    return s


def evaluate_scores(score_lists: Iterable[np.ndarray], samples: Sequence[ImpressionSample]) -> EvalReport:
    return aggregate([impression_metrics(s, x.labels, x.similarity) for s, x in zip(score_lists, samples)])


def score_samples(params: ModelParams, samples: Sequence[ImpressionSample], seed: int = 0,
                  n_plans: int | None = None) -> list[np.ndarray]:
    """Model scores per impression.  Plan seeds depend only on (seed, position), so
    impressions can be scored in any order or in parallel with identical results."""
    return [predict(params, x.history, x.candidates, seed=[seed, i], samples=n_plans) for i, x in enumerate(samples)]


def rerank_scores(score_lists, samples, method: str, **kwargs) -> list[np.ndarray]:
    return [ranking_scores(rerank_pipeline(s, x.similarity, method, **kwargs).order)
            for s, x in zip(score_lists, samples)]


def evaluate(params: ModelParams, samples: Sequence[ImpressionSample], seed: int = 0,
             rerank: str = "none", **rerank_kwargs) -> EvalReport:
    if not samples:
        raise ValueError("cannot evaluate an empty dataset")
    scores = score_samples(params, samples, seed)
    if rerank != "none":
        scores = rerank_scores(scores, samples, rerank, **rerank_kwargs)
    return evaluate_scores(scores, samples)


def summarize_repeats(reports: Sequence[EvalReport]) -> tuple[EvalReport, dict[str, float]]:
    """Mean report and per-metric standard deviation over repeated runs."""
    if not reports:
        raise ValueError("no reports to summarize")
    mean = replace(reports[0], **{m: float(np.mean([getattr(r, m) for r in reports])) for m in METRICS})
    std = {m: float(np.std([getattr(r, m) for r in reports])) for m in METRICS}
    return mean, std


@dataclass
class SweepRow:
    knob: str
    value: float
    report: EvalReport

    def cells(self) -> list[str]:
        return [self.knob, repr(self.value)] + [_fmt(getattr(self.report, m)) for m in METRICS]


SWEEP_KNOBS = ("lambda", "theta", "beta")


def tradeoff_sweep(
    train_samples: Sequence[ImpressionSample],
    test_samples: Sequence[ImpressionSample],
    knob: str,
    grid: Sequence[float],
    model_config: ModelConfig,
    train_config: TrainingConfig,
    word_vectors: np.ndarray,
    eval_seed: int = 0,
    on_row: Callable[[SweepRow], None] | None = None,
) -> list[SweepRow]:
    """Accuracy/diversity per knob value.

    ``lambda`` retrains per value from the same seed; ``theta`` (DPP) and
    ``beta`` (MMR) train once with lambda = 0 and rerank its scores.
    """
    if knob not in SWEEP_KNOBS:
        raise ValueError(f"unknown sweep knob {knob!r}; expected one of {SWEEP_KNOBS}")
    if not grid:
        raise ValueError("sweep grid is empty")
    rows = []
    if knob == "lambda":
        for value in grid:
            cfg = replace(train_config, lam=float(value))
            params = train(list(train_samples), cfg, model_config, word_vectors).params
            rows.append(SweepRow(knob, float(value), evaluate(params, test_samples, eval_seed)))
            if on_row:
                on_row(rows[-1])
        return rows
    params = train(list(train_samples), replace(train_config, lam=0.0), model_config, word_vectors).params
    base = score_samples(params, test_samples, eval_seed)
    method = "dpp" if knob == "theta" else "mmr"
    for value in grid:
        scores = rerank_scores(base, test_samples, method, **{knob: float(value)})
        rows.append(SweepRow(knob, float(value), evaluate_scores(scores, test_samples)))
        if on_row:
            on_row(rows[-1])
    return rows


def sweep_tsv(rows: Sequence[SweepRow]) -> str:
    lines = ["\t".join(["knob", "value", *METRICS])]
    lines += ["\t".join(r.cells()) for r in rows]
    return "\n".join(lines) + "\n"
