import numpy as np
import pytest

from divrec import autodiff as ad
from divrec.autodiff import Tensor
from divrec.model import ModelConfig, init_params
from divrec.text import PAD

ACCEPTANCE_LINES: list[str] = []


def tiny_config(**overrides) -> ModelConfig:
    base = dict(embed_dim=6, model_dim=8, heads=2, pool_dim=4, max_title_len=5, max_history_len=4, max_list_len=16)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_params(seed=0, vocab_size=12, **overrides):
    cfg = tiny_config(**overrides)
    words = np.random.default_rng(seed + 100).normal(size=(vocab_size, cfg.embed_dim))
    words[PAD] = 0
    return init_params(cfg, words, seed=seed)


def random_titles(rng, n, cfg, vocab_size=12):
    ids = rng.integers(2, vocab_size, size=(n, cfg.max_title_len))
    lengths = rng.integers(1, cfg.max_title_len + 1, size=n)
    for row, length in zip(ids, lengths):
        row[length:] = PAD
    return ids


def primitive_cases(rng, n, m):
    """(name, builder, shapes) where builder maps leaves to a scalar loss."""
    w = rng.normal(size=(n, m))

    fixed: dict = {}

    def weighted(t):
        if t.shape not in fixed:
            fixed[t.shape] = Tensor(rng.normal(size=t.shape))
        return ad.sum(ad.mul(t, fixed[t.shape]))

    mask = np.where(rng.random((n, m)) < 0.3, -np.inf, 0.0)
    mask[:, 0] = 0.0
    idx = rng.integers(0, n, size=n + 2)
    return [
        ("matmul", lambda a, b: weighted(ad.matmul(a, b)), [(n, m), (m, n)]),
        ("batched_matmul", lambda a, b: weighted(ad.matmul(a, b)), [(2, n, m), (m, 3)]),
        ("add_broadcast", lambda a, b: weighted(ad.add(a, b)), [(n, m), (m,)]),
        ("mul", lambda a, b: weighted(ad.mul(a, b)), [(n, m), (n, m)]),
        ("scale", lambda a: weighted(ad.scale(a, -1.7)), [(n, m)]),
        ("relu", lambda a: weighted(ad.relu(a)), [(n, m)]),
        ("tanh", lambda a: weighted(ad.tanh(a)), [(n, m)]),
        ("exp", lambda a: weighted(ad.exp(a)), [(n, m)]),
        ("log", lambda a: weighted(ad.log(ad.add(ad.mul(a, a), 1.0))), [(n, m)]),
        ("sigmoid", lambda a: weighted(ad.sigmoid(a)), [(n, m)]),
        ("log_sigmoid", lambda a: weighted(ad.log_sigmoid(a)), [(n, m)]),
        ("masked_softmax", lambda a: weighted(ad.masked_softmax(a, mask)), [(n, m)]),
        ("gather_rows", lambda a: weighted(ad.gather_rows(a, idx)), [(n, m)]),
        ("concat", lambda a, b: weighted(ad.concat([a, b], axis=1)), [(n, m), (n, 2)]),
        ("transpose", lambda a: weighted(ad.matmul(ad.transpose(a), Tensor(w))), [(n, m)]),
        ("reshape", lambda a: weighted(ad.reshape(a, (m, n))), [(n, m)]),
        ("sum_axis", lambda a: weighted(ad.sum(a, axis=1)), [(n, m)]),
        ("mean", lambda a: ad.mean(ad.mul(a, a)), [(n, m)]),
    ]


@pytest.fixture
def params():
    return tiny_params()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda ln: int(ln.split()[2])):
            terminalreporter.write_line(line)
