"""Multi-seed ablation comparison on a noisy planted-structure corpus.

Trains the full model and the requested ablation variants with shared
per-seed streams, evaluates test HR@10 for each, and prints per-seed
values plus means +- std. Used to pin the acceptance configuration.
"""

import argparse
import time

import numpy as np

from gcsrec.config import LossWeights, ModelConfig, TrainConfig
from gcsrec.corpus import SynthConfig, build_sequences, generate_synthetic, split_leave_one_out
from gcsrec.evaluation import evaluate
from gcsrec.training import train
from gcsrec.transition_graph import SamplerConfig, build_witg


def build_corpus(args):
    synth = SynthConfig(item_count=args.items, user_count=args.users,
                        min_len=args.min_len, max_len=args.seq_len,
                        noise=args.noise, transition=args.transition)
    records = generate_synthetic(synth, seed=args.corpus_seed)
    vocab, seqs = build_sequences(records, k_core=2)
    split = split_leave_one_out(seqs)
    graph = build_witg(split.train, vocab)
    return vocab, split, graph


def run_variant(split, graph, args, seed, ablation):
    cfg = TrainConfig(
        model=ModelConfig(dim=args.dim, heads=2, layers=2,
                          max_len=args.window, dropout=args.dropout),
        weights=LossWeights(lambda1=args.lambda1, lambda2=args.lambda2, rho=args.rho),
        sampler=SamplerConfig(depth=2, size=args.sampler_size, seed=seed),
        batch_size=args.batch_size, max_epochs=args.epochs, patience=args.patience,
        seed=seed, learning_rate=args.lr, lr_decay_interval=args.decay,
        ablation=ablation)
    result = train(split, graph, cfg)
    report = evaluate(result.best, split, graph, "test", cfg.effective())
    return report.hr10


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--items", type=int, default=60)
    ap.add_argument("--users", type=int, default=120)
    ap.add_argument("--min-len", type=int, default=5)
    ap.add_argument("--seq-len", type=int, default=10)
    ap.add_argument("--noise", type=float, default=0.3)
    ap.add_argument("--transition", default="sparse")
    ap.add_argument("--corpus-seed", type=int, default=100)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--window", type=int, default=10)
    ap.add_argument("--dropout", type=float, default=0.0)
    ap.add_argument("--lambda1", type=float, default=0.02)
    ap.add_argument("--lambda2", type=float, default=0.2)
    ap.add_argument("--rho", type=float, default=1.0)
    ap.add_argument("--sampler-size", type=int, default=4)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--patience", type=int, default=15)
    ap.add_argument("--lr", type=float, default=0.001)
    ap.add_argument("--decay", type=int, default=40)
    ap.add_argument("--seeds", default="1,2,3,4,5")
    ap.add_argument("--variants", default="full,no_gcl_no_mmd,unweighted_edges")
    args = ap.parse_args()

    vocab, split, graph = build_corpus(args)
    print(f"corpus: users={vocab.user_count} items={vocab.item_count} "
          f"edges={graph.edge_count()} eval={len(split.test_target)}", flush=True)

    seeds = [int(s) for s in args.seeds.split(",")]
    variants = args.variants.split(",")
    scores = {v: [] for v in variants}
    t0 = time.time()
    for seed in seeds:
        line = [f"seed {seed}:"]
        for variant in variants:
            try:
                hr = run_variant(split, graph, args, seed, variant)
            except Exception as e:
                hr = float("nan")
                line.append(f"{variant}=FAILED({e})")
            else:
                line.append(f"{variant}={hr:.4f}")
            scores[variant].append(hr)
        if "full" in scores and "no_gcl_no_mmd" in scores:
            line.append(f"win={scores['full'][-1] > scores['no_gcl_no_mmd'][-1]}")
        print(" ".join(line) + f" [{time.time() - t0:.0f}s]", flush=True)

    print("\nsummary (test HR@10):")
    for variant in variants:
        vals = np.array(scores[variant])
        print(f"  {variant:<18} mean={np.nanmean(vals):.4f} std={np.nanstd(vals):.4f}")
    if "full" in scores and "no_gcl_no_mmd" in scores:
        wins = sum(f > g for f, g in zip(scores["full"], scores["no_gcl_no_mmd"]))
        print(f"  full > no_gcl_no_mmd in {wins}/{len(seeds)} seeds")


if __name__ == "__main__":
    main()
