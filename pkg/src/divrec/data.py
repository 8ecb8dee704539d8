"""MIND-format ingestion and a planted-topic synthetic impression log.

news.tsv columns: id, category, subcategory, title, abstract, url,
title_entities, abstract_entities.  behaviors.tsv columns: impression_id,
user_id, time, space-separated history ids, space-separated ``id-label``
candidates.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .text import Vocab, tokenize

logger = logging.getLogger(__name__)

NEWS_COLUMNS = 8
BEHAVIOR_COLUMNS = 5


@dataclass
class NewsRecord:
    news_id: str
    category: str
    subcategory: str
    title: str
    title_tokens: tuple[int, ...] = ()
    abstract: str = ""
    url: str = ""
    title_entities: str = ""
    abstract_entities: str = ""


@dataclass
class ImpressionRecord:
    impression_id: str
    user_id: str
    time: str
    history: tuple[str, ...]
    candidates: tuple[tuple[str, int], ...]

    @property
    def labels(self) -> list[int]:
        return [lab for _, lab in self.candidates]


@dataclass
class Dataset:
    news: dict[str, NewsRecord]
    impressions: list[ImpressionRecord]
    vocab: Vocab
    warnings: Counter = field(default_factory=Counter)


class MalformedDataError(ValueError):
    pass


def _check_malformed(path, bad: list[str], total: int, max_fraction: float) -> None:
    if total and len(bad) / total > max_fraction:
        sample = "\n".join(repr(line[:120]) for line in bad[:3])
        raise MalformedDataError(f"{path}: {len(bad)} of {total} lines malformed; first ones:\n{sample}")


def read_news(path, max_fraction: float = 0.01) -> tuple[dict[str, NewsRecord], int]:
    news: dict[str, NewsRecord] = {}
    bad: list[str] = []
    total = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            total += 1
            cols = line.split("\t")
            if len(cols) < 4 or not cols[0] or cols[0] in news:
                bad.append(line)
                continue
            cols += [""] * (NEWS_COLUMNS - len(cols))
            nid, cat, sub, title, abstract, url, tent, aent = cols[:NEWS_COLUMNS]
            news[nid] = NewsRecord(nid, cat, sub, title, (), abstract, url, tent, aent)
    _check_malformed(path, bad, total, max_fraction)
    return news, len(bad)


def _parse_candidate(token: str) -> tuple[str, int]:
    nid, sep, label = token.rpartition("-")
    if not sep or not nid or label not in ("0", "1"):
        raise ValueError(token)
    return nid, int(label)


def read_behaviors(path, news: dict[str, NewsRecord], max_fraction: float = 0.01) -> tuple[list[ImpressionRecord], Counter]:
    impressions: list[ImpressionRecord] = []
    warnings: Counter = Counter()
    bad: list[str] = []
    total = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            total += 1
            cols = line.split("\t")
            try:
                if len(cols) != BEHAVIOR_COLUMNS or not cols[0]:
                    raise ValueError(line)
                cands = tuple(_parse_candidate(tok) for tok in cols[4].split())
                if not cands:
                    raise ValueError(line)
            except ValueError:
                bad.append(line)
                continue
            history = tuple(cols[3].split())
            if any(n not in news for n in history) or any(n not in news for n, _ in cands):
                warnings["unresolved_news_id"] += 1
                continue
            impressions.append(ImpressionRecord(cols[0], cols[1], cols[2], history, cands))
    _check_malformed(path, bad, total, max_fraction)
    warnings["malformed_line"] += len(bad)
    return impressions, warnings


def parse_mind(news_path, behaviors_path, vocab: Vocab | None = None, max_title_len: int = 30,
               min_count: int = 1, max_malformed: float = 0.01) -> Dataset:
    """Load a MIND split.  Builds the vocabulary from titles unless one is given."""
    for p in (news_path, behaviors_path):
        if not Path(p).is_file():
            raise FileNotFoundError(f"missing data file: {p}")
    news, bad_news = read_news(news_path, max_malformed)
    impressions, warnings = read_behaviors(behaviors_path, news, max_malformed)
    warnings["malformed_line"] += bad_news
    for key, n in warnings.items():
        if n:
            logger.warning("%s: skipped %d (%s)", behaviors_path, n, key)
    if vocab is None:
        vocab = Vocab.build((n.title for n in news.values()), min_count=min_count)
    for rec in news.values():
        rec.title_tokens = tuple(tokenize(rec.title, vocab, max_title_len))
    return Dataset(news, impressions, vocab, warnings)


def write_news(news: dict[str, NewsRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in news.values():
            fh.write("\t".join([r.news_id, r.category, r.subcategory, r.title, r.abstract, r.url,
                                r.title_entities, r.abstract_entities]) + "\n")


def write_behaviors(impressions, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for imp in impressions:
            cands = " ".join(f"{n}-{lab}" for n, lab in imp.candidates)
            fh.write("\t".join([imp.impression_id, imp.user_id, imp.time, " ".join(imp.history), cands]) + "\n")


def write_mind(dataset: Dataset, news_path, behaviors_path) -> None:
    write_news(dataset.news, news_path)
    write_behaviors(dataset.impressions, behaviors_path)


# --------------------------------------------------------------------------
# synthetic data
# --------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Planted-topic corpus: users like 1-2 topics and click with probability
    sigmoid(click_a * <user topics, news topic> + click_b)."""

    n_topics: int = 5
    topic_dim: int = 32
    n_users: int = 500
    n_news: int = 2000
    words_per_topic: int = 40
    generic_words: int = 60
    title_len: tuple[int, int] = (6, 12)
    topic_word_share: float = 0.7
    word_noise: float = 0.6
    history_len: tuple[int, int] = (5, 20)
    list_len: tuple[int, int] = (10, 20)
    train_impressions_per_user: int = 4
    test_impressions_per_user: int = 1
    click_a: float = 10.0
    click_b: float = -6.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_topics", "topic_dim", "n_users", "n_news", "words_per_topic"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.topic_word_share <= 1.0:
            raise ValueError("topic_word_share must be in [0, 1]")
        if self.list_len[1] > self.n_news:
            raise ValueError("list_len exceeds n_news")
        for z in (self.click_a + self.click_b, self.click_b):
            p = 1.0 / (1.0 + math.exp(-z))
            if not 0.0 < p < 1.0:
                raise ValueError("click probabilities must lie strictly inside (0, 1)")


@dataclass
class SyntheticData:
    news: dict[str, NewsRecord]
    train: list[ImpressionRecord]
    test: list[ImpressionRecord]
    word_vectors: dict[str, np.ndarray]
    news_topic: dict[str, int]
    user_topics: dict[str, tuple[int, ...]]

    def dataset(self, split: str, vocab: Vocab | None = None, max_title_len: int = 30) -> Dataset:
        """A split in the same in-memory form :func:`parse_mind` returns."""
        impressions = {"train": self.train, "test": self.test}[split]
        if vocab is None:
            vocab = Vocab.build(n.title for n in self.news.values())
        news = {nid: NewsRecord(r.news_id, r.category, r.subcategory, r.title,
                                tuple(tokenize(r.title, vocab, max_title_len)))
                for nid, r in self.news.items()}
        return Dataset(news, list(impressions), vocab)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(size=(spec.n_topics, spec.topic_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    scale = spec.word_noise / math.sqrt(spec.topic_dim)

    words: dict[str, np.ndarray] = {}
    topic_words = []
    for t in range(spec.n_topics):
        names = [f"t{t}w{j}" for j in range(spec.words_per_topic)]
        for name in names:
            words[name] = centers[t] + rng.normal(scale=scale, size=spec.topic_dim)
        topic_words.append(names)
    generic = [f"g{j}" for j in range(spec.generic_words)]
    for name in generic:
        words[name] = rng.normal(scale=1.0 / math.sqrt(spec.topic_dim), size=spec.topic_dim)
    # round so the on-disk text form reloads to identical values
    words = {k: np.round(v, 6) for k, v in words.items()}

    news: dict[str, NewsRecord] = {}
    news_topic: dict[str, int] = {}
    by_topic: list[list[str]] = [[] for _ in range(spec.n_topics)]
    for i in range(spec.n_news):
        t = int(rng.integers(spec.n_topics))
        n_words = int(rng.integers(spec.title_len[0], spec.title_len[1] + 1))
        title = []
        for _ in range(n_words):
            pool = topic_words[t] if (not generic or rng.random() < spec.topic_word_share) else generic
            title.append(pool[int(rng.integers(len(pool)))])
        nid = f"N{i}"
        news[nid] = NewsRecord(nid, f"topic{t}", f"topic{t}", " ".join(title))
        news_topic[nid] = t
        by_topic[t].append(nid)
    all_ids = list(news)

    user_topics: dict[str, tuple[int, ...]] = {}
    train: list[ImpressionRecord] = []
    test: list[ImpressionRecord] = []
    for u in range(spec.n_users):
        uid = f"U{u}"
        n_pref = int(rng.integers(1, 3))
        prefs = tuple(sorted(int(t) for t in rng.choice(spec.n_topics, size=min(n_pref, spec.n_topics), replace=False)))
        user_topics[uid] = prefs
        liked = [nid for t in prefs for nid in by_topic[t]]
        n_hist = int(rng.integers(spec.history_len[0], spec.history_len[1] + 1))
        history = tuple(liked[int(i)] for i in rng.choice(len(liked), size=min(n_hist, len(liked)), replace=False)) if liked else ()
        pref_vec = np.zeros(spec.n_topics)
        pref_vec[list(prefs)] = 1.0
        n_imp = spec.train_impressions_per_user + spec.test_impressions_per_user
        for j in range(n_imp):
            m = int(rng.integers(spec.list_len[0], spec.list_len[1] + 1))
            cands = [all_ids[int(i)] for i in rng.choice(len(all_ids), size=m, replace=False)]
            logits = spec.click_a * pref_vec[[news_topic[c] for c in cands]] + spec.click_b
            clicks = rng.random(m) < 1.0 / (1.0 + np.exp(-logits))
            rec = ImpressionRecord(f"{uid}-{j}", uid, "0", history, tuple((c, int(k)) for c, k in zip(cands, clicks)))
            (train if j < spec.train_impressions_per_user else test).append(rec)
    return SyntheticData(news, train, test, words, news_topic, user_topics)


def write_embeddings(word_vectors: dict[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for word, vec in word_vectors.items():
            fh.write(word + " " + " ".join(f"{x:.6f}" for x in vec) + "\n")


def write_synthetic(data: SyntheticData, out_dir) -> None:
    """Layout: train/{news,behaviors}.tsv, test/{news,behaviors}.tsv, embeddings.txt, news_topics.tsv."""
    out = Path(out_dir)
    for split, imps in (("train", data.train), ("test", data.test)):
        (out / split).mkdir(parents=True, exist_ok=True)
        write_news(data.news, out / split / "news.tsv")
        write_behaviors(imps, out / split / "behaviors.tsv")
    write_embeddings(data.word_vectors, out / "embeddings.txt")
    with open(out / "news_topics.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for nid, t in data.news_topic.items():
            fh.write(f"{nid}\t{t}\n")
