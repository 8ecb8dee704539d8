"""Post-hoc diversity rerankers: MMR and greedy DPP MAP inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

METHODS = ("none", "mmr", "dpp")


@dataclass
class RankedList:
    order: list[int]
    scores: np.ndarray  # relevance fed to the reranker (after normalization)
    method: str = "none"


def _check_k(k: int, m: int) -> None:
    if k < 1 or k > m:
        raise ValueError(f"k must be in [1, {m}], got {k}")


def mmr_rerank(relevance, similarity, k: int, beta: float) -> list[int]:
    """Greedy MMR: repeatedly take argmax of beta*r_i - (1-beta)*max_{j selected} s_ij."""
    r = np.asarray(relevance, dtype=np.float64)
    s = np.asarray(similarity, dtype=np.float64)
    m = r.size
    _check_k(k, m)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    chosen = [int(np.argmax(beta * r))]
    available = np.ones(m, dtype=bool)
    available[chosen[0]] = False
    max_sim = s[chosen[0]].copy()
    while len(chosen) < k:
        gain = np.where(available, beta * r - (1.0 - beta) * max_sim, -np.inf)
        j = int(np.argmax(gain))
        chosen.append(j)
        available[j] = False
        np.maximum(max_sim, s[j], out=max_sim)
    return chosen


def psd_floor(matrix) -> np.ndarray:
    """Clip negative eigenvalues to zero; returns the input unchanged when already PSD."""
    a = np.asarray(matrix, dtype=np.float64)
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    if w.min() >= 0:
        return a
    out = (v * np.clip(w, 0.0, None)) @ v.T
    return 0.5 * (out + out.T)


def build_dpp_kernel(relevance, similarity, theta: float) -> np.ndarray:
    """L_ij = exp(alpha r_i) s_ij exp(alpha r_j), alpha = theta / (2 (1 - theta))."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must be in (0, 1), got {theta}")
    alpha = theta / (2.0 * (1.0 - theta))
    q = np.exp(alpha * np.asarray(relevance, dtype=np.float64))
    return q[:, None] * psd_floor(similarity) * q[None, :]


def dpp_fast_greedy(kernel, k: int, eps: float = 1e-10, return_gains: bool = False):
    """Greedy MAP for a DPP via incremental Cholesky updates, O(k^2 M) overall.

    Keeps d_i^2 = current marginal gain of item i; stops early once the best
    gain drops to ``eps`` times the largest diagonal entry, so the selection
    does not change when the kernel is multiplied by a positive constant.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    m = kernel.shape[0]
    _check_k(k, m)
    cis = np.zeros((k, m))
    d2 = np.diag(kernel).copy()
    floor = eps * max(float(d2.max()), 0.0)
    chosen: list[int] = []
    gains: list[float] = []
    j = int(np.argmax(d2))
    while d2[j] > floor and d2[j] > 0:
        chosen.append(j)
        gains.append(float(d2[j]))
        if len(chosen) == k:
            break
        t = len(chosen) - 1
        e = (kernel[j] - cis[:t, j] @ cis[:t]) / np.sqrt(d2[j])
        cis[t] = e
        d2 = d2 - e * e
        d2[chosen] = -np.inf
        j = int(np.argmax(d2))
    return (chosen, gains) if return_gains else chosen


def dpp_naive_greedy(kernel, k: int, eps: float = 1e-10, return_gains: bool = False):
    """Reference greedy: at every step recompute det(L_{T+i}) directly for each candidate."""
    kernel = np.asarray(kernel, dtype=np.float64)
    m = kernel.shape[0]
    _check_k(k, m)
    floor = eps * max(float(np.diag(kernel).max()), 0.0)
    chosen: list[int] = []
    gains: list[float] = []
    base = 1.0
    while len(chosen) < k:
        best, best_det = -1, -np.inf
        for i in range(m):
            if i in chosen:
                continue
            idx = chosen + [i]
            det = np.linalg.det(kernel[np.ix_(idx, idx)])
            if det > best_det:
                best, best_det = i, det
        if not best_det / base > floor or best_det <= 0:
            break
        gains.append(best_det / base)
        chosen.append(best)
        base = best_det
    return (chosen, gains) if return_gains else chosen


def minmax(scores) -> np.ndarray:
    y = np.asarray(scores, dtype=np.float64)
    lo, hi = y.min(), y.max()
    if hi == lo:
        return np.zeros_like(y)
    return (y - lo) / (hi - lo)


def rerank_pipeline(scores, similarity, method: str = "none", k: int | None = None,
                    theta: float = 0.9, beta: float = 0.5) -> RankedList:
    """Order a candidate list by model scores, optionally diversified.

    Scores are min-max normalized within the list first.  The result always
    covers all M candidates: the first ``k`` come from the reranker and the
    rest follow in relevance order.
    """
    if method not in METHODS:
        raise ValueError(f"unknown rerank method {method!r}; expected one of {METHODS}")
    y = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("rerank_pipeline: scores must be finite")
    r = minmax(y)
    m = r.size
    k = m if k is None else k
    by_relevance = list(np.argsort(-y, kind="stable"))
    if method == "none":
        head = by_relevance[:k]
    elif method == "mmr":
        head = mmr_rerank(r, similarity, k, beta)
    else:
        # shifting r by its max scales the kernel by a constant, which leaves the
        # greedy choice unchanged and keeps exp() from overflowing as theta -> 1
        head = dpp_fast_greedy(build_dpp_kernel(r - r.max(), similarity, theta), k)
    taken = set(head)
    order = [int(i) for i in head] + [int(i) for i in by_relevance if i not in taken]
    return RankedList(order, r, method)
