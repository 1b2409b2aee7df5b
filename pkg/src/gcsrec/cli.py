"""Command-line pipeline: synth -> prepare -> build-graph -> train -> eval,
plus the four-variant ablation harness.

Every hyperparameter lives in the plain-text config file; CLI flags
override individual values, and environment variables with the ``GCSREC_``
prefix (e.g. ``GCSREC_SEED``) supply defaults for the common flags. An
output directory is locked for the duration of a command so concurrent
runs cannot interleave writes.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import os
import sys
import time
from dataclasses import replace

from . import checkpoint as ckpt
from . import corpus as corpusmod
from . import evaluation, training
from . import transition_graph as tg
from .config import TrainConfig, config_from_text, config_to_text

ABLATION_ROWS = [("full", "full"), ("no_gcl", "w/o G"),
                 ("no_gcl_no_mmd", "w/o GM"), ("unweighted_edges", "w/o W")]


class CliError(RuntimeError):
    pass


def _env_default(name: str):
    return os.environ.get(f"GCSREC_{name.upper().replace('-', '_')}")


@contextlib.contextmanager
def _locked_dir(path: str):
    os.makedirs(path, exist_ok=True)
    lock = os.path.join(path, ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliError(f"output directory {path} is locked by another run "
                       f"(remove {lock} if stale)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        os.unlink(lock)


def _sha256(path: str) -> str:
    return ckpt.file_sha256(path)


def _write_manifest(out_dir: str, cfg: TrainConfig | None, seed, inputs: dict[str, str],
                    artifacts: list[str], started: float) -> None:
    lines = [f"seed {seed}", f"elapsed_seconds {time.time() - started:.3f}"]
    for name, path in inputs.items():
        lines.append(f"input {name} {path} sha256 {_sha256(path)}")
    for path in artifacts:
        lines.append(f"artifact {path}")
    if cfg is not None:
        lines.append("config:")
        lines.extend("  " + ln for ln in config_to_text(cfg).strip().split("\n"))
    with open(os.path.join(out_dir, "run_manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if args.config:
        with open(args.config) as fh:
            cfg = config_from_text(fh.read())
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=int(args.seed),
                      sampler=replace(cfg.sampler, seed=int(args.seed)))
    return cfg


# --- prepared-dataset serialization ---------------------------------------

def save_prepared(out_dir: str, vocab: corpusmod.Vocabulary,
                  sequences: list[corpusmod.Sequence]) -> list[str]:
    vocab_path = os.path.join(out_dir, "vocab.tsv")
    with open(vocab_path, "w") as fh:
        for idx, item in enumerate(vocab.index_to_item[1:], start=1):
            fh.write(f"item\t{idx}\t{item}\n")
        for idx, user in enumerate(vocab.index_to_user):
            fh.write(f"user\t{idx}\t{user}\n")
    seq_path = os.path.join(out_dir, "sequences.tsv")
    with open(seq_path, "w") as fh:
        for seq in sequences:
            fh.write(f"{seq.user_index}\t{','.join(map(str, seq.items))}\n")
    return [vocab_path, seq_path]


def load_prepared(prepared_dir: str):
    vocab_path = os.path.join(prepared_dir, "vocab.tsv")
    seq_path = os.path.join(prepared_dir, "sequences.tsv")
    if not (os.path.exists(vocab_path) and os.path.exists(seq_path)):
        raise CliError(f"{prepared_dir}: not a prepared dataset "
                       f"(missing vocab.tsv/sequences.tsv)")
    item_to_index, index_to_item = {}, ["<pad>"]
    user_to_index, index_to_user = {}, []
    with open(vocab_path) as fh:
        for line in fh:
            kind, idx, name = line.rstrip("\n").split("\t")
            if kind == "item":
                item_to_index[name] = int(idx)
                index_to_item.append(name)
            else:
                user_to_index[name] = int(idx)
                index_to_user.append(name)
    vocab = corpusmod.Vocabulary(item_to_index, index_to_item, user_to_index, index_to_user)
    sequences = []
    with open(seq_path) as fh:
        for line in fh:
            uidx, items = line.rstrip("\n").split("\t")
            sequences.append(corpusmod.Sequence(int(uidx),
                                                tuple(int(i) for i in items.split(","))))
    split = corpusmod.split_leave_one_out(sequences)
    return vocab, split


# --- subcommands -----------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = corpusmod.SynthConfig(item_count=args.items, user_count=args.users,
                                min_len=args.min_len, max_len=args.max_len,
                                noise=args.noise, transition=args.transition)
    records = corpusmod.generate_synthetic(cfg, args.seed)
    corpusmod.write_log(args.out, records)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_prepare(args) -> int:
    started = time.time()
    records = corpusmod.load_log(args.data, format=args.format)
    vocab, sequences = corpusmod.build_sequences(records, k_core=args.k_core)
    split = corpusmod.split_leave_one_out(sequences)
    with _locked_dir(args.out):
        artifacts = save_prepared(args.out, vocab, sequences)
        manifest_path = os.path.join(args.out, "split.txt")
        corpusmod.write_split_manifest(manifest_path, vocab, split)
        artifacts.append(manifest_path)
        _write_manifest(args.out, None, args.seed, {"log": args.data}, artifacts, started)
    print(f"users {vocab.user_count} items {vocab.item_count} "
          f"train_only {split.train_only_users}")
    return 0


def cmd_build_graph(args) -> int:
    vocab, split = load_prepared(args.data)
    graph = tg.build_witg(split.train, vocab)
    tg.save_graph(args.out, graph)
    stats = tg.graph_stats(graph)
    sys.stdout.write(tg.format_stats(stats))
    stats_path = args.out + ".stats"
    with open(stats_path, "w") as fh:
        fh.write(tg.format_stats(stats))
    return 0


def cmd_train(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    vocab, split = load_prepared(args.data)
    graph = tg.load_graph(args.graph)
    with _locked_dir(args.out):
        result = training.train(split, graph, cfg)
        best_path = os.path.join(args.out, "best.ckpt")
        last_path = os.path.join(args.out, "last.ckpt")
        ckpt.save_params(best_path, result.best)
        ckpt.save_params(last_path, result.last)
        log_path = os.path.join(args.out, "metrics.log")
        result.log.write(log_path)
        eff = cfg.effective()
        reports = {}
        for mode in ("valid", "test"):
            report = evaluation.evaluate(result.best, split, graph, mode, eff)
            report_path = os.path.join(args.out, f"report_{mode}.txt")
            with open(report_path, "w") as fh:
                fh.write(report.as_keyvalues())
            reports[mode] = report
        _write_manifest(args.out, cfg, cfg.seed, {"graph": args.graph},
                        [best_path, last_path, log_path], started)
    print(f"best checkpoint {best_path}")
    sys.stdout.write(reports["test"].as_text())
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    vocab, split = load_prepared(args.data)
    graph = tg.load_graph(args.graph)
    params = ckpt.load_params(args.checkpoint)
    cfg = replace(cfg, model=params.cfg)
    report = evaluation.evaluate(params, split, graph, args.mode, cfg.effective())
    out_text = report.as_text()
    if args.k:
        cutoffs = [int(k) for k in args.k.split(",")]
        results = evaluation.rank_dataset(params, split, graph, args.mode, cfg.effective())
        extra = []
        for k in cutoffs:
            hr, ndcg = evaluation.metrics(results, k)
            extra.append(f"HR@{k}  {hr:.6f}\nN@{k}   {ndcg:.6f}")
        out_text += "\n".join(extra) + "\n"
    sys.stdout.write(out_text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.as_keyvalues())
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    vocab, split = load_prepared(args.data)
    graph = tg.load_graph(args.graph)
    os.makedirs(args.out, exist_ok=True)
    rows, failures = [], []
    for ablation, label in ABLATION_ROWS:
        variant = replace(cfg, ablation=ablation)
        try:
            result = training.train(split, graph, variant)
            report = evaluation.evaluate(result.best, split, graph, "test",
                                         variant.effective())
            rows.append((label, report))
            result.log.write(os.path.join(args.out, f"metrics_{ablation}.log"))
        except Exception as e:  # keep earlier variants' results
            failures.append((label, str(e)))
    grid_path = os.path.join(args.out, "ablation_grid.txt")
    with open(grid_path, "w") as fh:
        fh.write(f"{'variant':<8} {'HR@10':>8} {'HR@20':>8} {'N@10':>8} {'N@20':>8}\n")
        for label, r in rows:
            fh.write(f"{label:<8} {r.hr10:>8.4f} {r.hr20:>8.4f} "
                     f"{r.ndcg10:>8.4f} {r.ndcg20:>8.4f}\n")
        for label, err in failures:
            fh.write(f"{label:<8} FAILED {err}\n")
    with open(grid_path) as fh:
        sys.stdout.write(fh.read())
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcsrec",
        description="graph-contrastive sequential recommendation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *names):
        if "config" in names:
            p.add_argument("--config", default=_env_default("config"),
                           help="plain-text key=value config file")
        if "seed" in names:
            p.add_argument("--seed", type=int,
                           default=_env_default("seed"), help="seed override")
        if "data" in names:
            p.add_argument("--data", required=_env_default("data") is None,
                           default=_env_default("data"))
        if "graph" in names:
            p.add_argument("--graph", required=_env_default("graph") is None,
                           default=_env_default("graph"))
        if "out" in names:
            p.add_argument("--out", required=_env_default("out") is None,
                           default=_env_default("out"))

    p = sub.add_parser("synth", help="generate a planted-structure interaction log")
    p.add_argument("--items", type=int, default=10)
    p.add_argument("--users", type=int, default=20)
    p.add_argument("--min-len", type=int, default=6)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--transition", choices=["cyclic", "blocks"], default="cyclic")
    p.add_argument("--seed", type=int, default=0)
    common(p, "out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="parse, filter, and split an interaction log")
    p.add_argument("--format", choices=["tsv", "csv"], default="tsv")
    p.add_argument("--k-core", type=int, default=5)
    common(p, "data", "out", "seed")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("build-graph", help="build the item-transition graph")
    common(p, "data", "out")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train and checkpoint the model")
    common(p, "config", "seed", "data", "graph", "out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=_env_default("checkpoint") is None,
                   default=_env_default("checkpoint"))
    p.add_argument("--mode", choices=["valid", "test"], default="test")
    p.add_argument("--k", default=None, help="extra metric cutoffs, e.g. 5,50")
    p.add_argument("--out", default=None, help="optional key-value report path")
    common(p, "config", "seed", "data", "graph")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare the four model variants")
    common(p, "config", "seed", "data", "graph", "out")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, corpusmod.CorpusError, training.TrainingError,
            ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
