import logging
from dataclasses import dataclass
from typing import Iterable, List

import numpy as np

from timelinegpt.codec import CodecConfig, PatientRecord, TokenSequence, encode_patients


@dataclass
class CorpusSplit:
    train: List[TokenSequence]
    eval: List[TokenSequence]
    n_excluded: int
    n_truncated: int


def split_sequences(sequences: Iterable[TokenSequence], min_seq_tokens: int, context_window: int,
                    eval_fraction: float, seed: int) -> CorpusSplit:
    """
    Drops sequences shorter than min_seq_tokens, truncates the others to the context window and splits them
    with a seeded permutation.

    :param sequences: the encoded sequences
    :param min_seq_tokens: the shortest sequence kept
    :param context_window: the longest sequence the model accepts
    :param eval_fraction: the share of sequences held out for evaluation, in (0, 1)
    :param seed: the split seed
    :return: the CorpusSplit
    """
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError("eval_fraction must be in (0, 1).")
    kept, n_excluded, n_truncated = [], 0, 0
    for seq in sequences:
        if len(seq) < min_seq_tokens:
            n_excluded += 1
            continue
        if len(seq) > context_window:
            seq = seq.truncate(context_window)
            n_truncated += 1
        kept.append(seq)
    if not kept:
        raise ValueError(f"No sequence left after excluding those shorter than {min_seq_tokens} tokens.")

    order = np.random.default_rng(seed).permutation(len(kept))
    n_eval = int(round(eval_fraction * len(kept))) if len(kept) > 1 else 0
    n_eval = min(max(n_eval, 1 if len(kept) > 1 else 0), len(kept) - 1)
    eval_idx = set(order[:n_eval].tolist())
    split = CorpusSplit(
        train=[s for i, s in enumerate(kept) if i not in eval_idx],
        eval=[s for i, s in enumerate(kept) if i in eval_idx],
        n_excluded=n_excluded,
        n_truncated=n_truncated,
    )
    logging.info("Prepared corpus train=%d eval=%d excluded=%d truncated=%d",
                 len(split.train), len(split.eval), n_excluded, n_truncated)
    return split


def prepare_corpus(records: Iterable[PatientRecord], codec_cfg: CodecConfig, min_seq_tokens: int = 20,
                   context_window: int = 4096, eval_fraction: float = 0.1, seed: int = 42) -> CorpusSplit:
    """
    Encodes patient records and splits them into training and evaluation sequences.
    """
    return split_sequences(encode_patients(records, codec_cfg), min_seq_tokens, context_window, eval_fraction, seed)
