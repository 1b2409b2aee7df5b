"""Shared desk-scale corpora for training/evaluation tests."""

from gcsrec.corpus import SynthConfig, build_sequences, generate_synthetic, split_leave_one_out
from gcsrec.transition_graph import build_witg


def desk_corpus(users=20, items=10, noise=0.0, seed=1, k_core=2,
                min_len=6, max_len=10, transition="cyclic"):
    """Synthetic corpus -> (vocab, split, graph built on training prefixes)."""
    cfg = SynthConfig(item_count=items, user_count=users, min_len=min_len,
                      max_len=max_len, noise=noise, transition=transition)
    records = generate_synthetic(cfg, seed)
    vocab, seqs = build_sequences(records, k_core)
    split = split_leave_one_out(seqs)
    graph = build_witg(split.train, vocab)
    return vocab, split, graph
