"""Command line: ``divrec {gen-data,train,evaluate,rerank,sweep}``.

Data directories follow the MIND split layout::

    DATA/train/news.tsv  DATA/train/behaviors.tsv
    DATA/test/news.tsv   DATA/test/behaviors.tsv
    DATA/embeddings.txt  (optional word vectors)
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import SyntheticSpec, generate_synthetic, parse_mind, write_synthetic
from .evaluation import SWEEP_KNOBS, evaluate, sweep_tsv, tradeoff_sweep
from .model import load_checkpoint, save_checkpoint
from .rerank import METHODS, rerank_pipeline
from .text import Vocab, load_embeddings, random_embeddings
from .training import build_samples, train

log = logging.getLogger("divrec")


def _split_paths(data: Path, split: str) -> tuple[Path, Path]:
    return data / split / "news.tsv", data / split / "behaviors.tsv"


def _load_split(data: Path, split: str, vocab: Vocab | None, max_title_len: int):
    news, behaviors = _split_paths(data, split)
    return parse_mind(news, behaviors, vocab=vocab, max_title_len=max_title_len)


def _table(args, data: Path, vocab: Vocab, dim: int, seed: int):
    path = Path(args.embeddings) if getattr(args, "embeddings", None) else data / "embeddings.txt"
    if path.is_file():
        table = load_embeddings(path, vocab, dim=dim, seed=seed)
        if table.dim != dim:
            raise cfgmod.ConfigError(f"field 'embed_dim': config says {dim}, {path} has {table.dim}")
        return table
    log.warning("no word vectors at %s; using random ones", path)
    return random_embeddings(vocab, dim, seed=seed)


def _resolved(args):
    raw = cfgmod.read_config_file(args.config) if args.config else {}
    overrides = dict(kv.split("=", 1) for kv in (args.set or []))
    for flag, key in (("seed", "seed"), ("epochs", "epochs"), ("lam", "lam"), ("lr", "lr"), ("mode", "list_encoder_mode")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    model_cfg, train_cfg = cfgmod.resolve(raw, overrides)
    sys.stderr.write("resolved config:\n" + cfgmod.dump(model_cfg, train_cfg))
    sys.stderr.write(f"seed={train_cfg.seed}\n")
    return model_cfg, train_cfg


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--data", required=True, help="data directory")
    p.add_argument("--embeddings", help="word-vector text file (default DATA/embeddings.txt)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--mode", help="list encoder mode")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config field")


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(n_topics=args.topics, topic_dim=args.dim, n_users=args.users, n_news=args.news, seed=args.seed)
    write_synthetic(generate_synthetic(spec), args.out)
    sys.stderr.write(f"seed={args.seed}\nwrote synthetic data to {args.out}\n")
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg = _resolved(args)
    data = Path(args.data)
    ds = _load_split(data, "train", None, model_cfg.max_title_len)
    table = _table(args, data, ds.vocab, model_cfg.embed_dim, train_cfg.seed)
    samples = build_samples(ds, table, model_cfg.max_title_len, model_cfg.max_history_len)
    result = train(samples, train_cfg, model_cfg, table.vectors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, out / "model.ckpt")
    ds.vocab.save(out / "vocab.txt")
    (out / "config.txt").write_text(cfgmod.dump(model_cfg, train_cfg), encoding="utf-8")
    (out / "loss_trace.tsv").write_text("".join(r.line() + "\n" for r in result.trace), encoding="utf-8")
    means = result.epoch_means()
    sys.stderr.write(f"trained {len(result.trace)} steps; epoch mean loss {means}\n")
    return 0


def cmd_evaluate(args) -> int:
    model_dir = Path(args.model)
    model_cfg, train_cfg = cfgmod.resolve(cfgmod.read_config_file(model_dir / "config.txt"))
    seed = train_cfg.seed if args.seed is None else args.seed
    sys.stderr.write("resolved config:\n" + cfgmod.dump(model_cfg, train_cfg) + f"seed={seed}\n")
    params = load_checkpoint(model_dir / "model.ckpt")
    vocab = Vocab.load(model_dir / "vocab.txt")
    data = Path(args.data)
    ds = _load_split(data, args.split, vocab, model_cfg.max_title_len)
    table = _table(args, data, vocab, model_cfg.embed_dim, train_cfg.seed)
    samples = build_samples(ds, table, model_cfg.max_title_len, model_cfg.max_history_len)
    report = evaluate(params, samples, seed, rerank=args.rerank, **_rerank_kwargs(args))
    out = Path(args.out) if args.out else model_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    sys.stdout.write(report.to_table())
    return 0


def _rerank_kwargs(args) -> dict:
    if args.rerank == "dpp":
        return {"theta": args.theta}
    if args.rerank == "mmr":
        return {"beta": args.beta}
    return {}


def cmd_rerank(args) -> int:
    out_lines = []
    with open(args.input, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                imp_id, scores_csv, sim_csv = line.split("\t")
                scores = np.array([float(x) for x in scores_csv.split(",")])
                sim = np.array([float(x) for x in sim_csv.split(",")])
                m = scores.size
                if sim.size != m * m:
                    raise ValueError(f"similarity has {sim.size} values, expected {m * m}")
            except ValueError as exc:
                sys.stderr.write(f"{args.input}:{lineno}: {exc}\n")
                return 2
            k = min(args.k, m) if args.k else None
            kwargs = {"theta": args.theta} if args.method == "dpp" else {"beta": args.beta} if args.method == "mmr" else {}
            ranked = rerank_pipeline(scores, sim.reshape(m, m), args.method, k=k, **kwargs)
            order = ranked.order[:k] if k else ranked.order
            out_lines.append(f"{imp_id}\t{','.join(str(i) for i in order)}\n")
    Path(args.output).write_text("".join(out_lines), encoding="utf-8")
    return 0


def cmd_sweep(args) -> int:
    model_cfg, train_cfg = _resolved(args)
    data = Path(args.data)
    tr = _load_split(data, "train", None, model_cfg.max_title_len)
    te = _load_split(data, "test", tr.vocab, model_cfg.max_title_len)
    table = _table(args, data, tr.vocab, model_cfg.embed_dim, train_cfg.seed)
    tr_s = build_samples(tr, table, model_cfg.max_title_len, model_cfg.max_history_len)
    te_s = build_samples(te, table, model_cfg.max_title_len, model_cfg.max_history_len)
    grid = [float(x) for x in args.grid.split(",") if x.strip()]
    rows = tradeoff_sweep(tr_s, te_s, args.knob, grid, model_cfg, train_cfg, table.vectors, eval_seed=train_cfg.seed,
                          on_row=lambda r: sys.stderr.write("\t".join(r.cells()) + "\n"))
    text = sweep_tsv(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divrec", description="Diversity-aware list-wise news recommendation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic MIND-format dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--news", type=int, default=2000)
    p.add_argument("--topics", type=int, default=5)
    p.add_argument("--dim", type=int, default=32)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_run_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a split and write the metric report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--embeddings")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--rerank", choices=METHODS, default="none")
    p.add_argument("--theta", type=float, default=0.9)
    p.add_argument("--beta", type=float, default=0.5)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rerank", help="rerank scored lists with MMR or DPP")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--method", choices=METHODS, default="dpp")
    p.add_argument("--theta", type=float, default=0.9)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("sweep", help="accuracy/diversity tradeoff over a knob grid")
    _add_run_flags(p)
    p.add_argument("--knob", choices=SWEEP_KNOBS, required=True)
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (cfgmod.ConfigError, FileNotFoundError, ValueError) as exc:
        sys.stderr.write(f"divrec {args.command}: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
