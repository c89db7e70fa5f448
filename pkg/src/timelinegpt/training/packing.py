import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch

from timelinegpt.codec import TokenSequence, Vocabulary
from timelinegpt.codec.tokens import INTER_VISIT_CLASSES
from timelinegpt.nn.losses import IGNORE_INDEX, AttSupervision


@dataclass(frozen=True)
class EncodedSequence:
    """
    A sequence in id space. `intervals` holds the day gap at inter-visit time token positions and None elsewhere.
    """
    ids: Tuple[int, ...]
    intervals: Tuple[Optional[int], ...]
    index: int = 0

    def __len__(self):
        return len(self.ids)


def encode_for_training(sequences: Sequence[TokenSequence], vocab: Vocabulary) -> List[EncodedSequence]:
    encoded = []
    for index, seq in enumerate(sequences):
        ids = tuple(vocab.encode(seq.tokens))
        intervals = tuple(interval if vocab.token_class(i) in INTER_VISIT_CLASSES else None
                          for i, interval in zip(ids, seq.intervals))
        encoded.append(EncodedSequence(ids=ids, intervals=intervals, index=index))
    return encoded


@dataclass
class PackedBatch:
    """
    Sequences concatenated into a single row. `segment_ids` tells the model which sequence owns each position,
    so that attention never crosses a sequence boundary.
    """
    batch_id: int
    token_ids: torch.Tensor
    segment_ids: torch.Tensor
    targets: torch.Tensor
    supervision: AttSupervision
    sequence_indices: Tuple[int, ...]
    lengths: Tuple[int, ...]

    @property
    def n_tokens(self) -> int:
        return sum(self.lengths)


def first_fit_decreasing(lengths: Sequence[int], budget: int) -> List[List[int]]:
    """
    Assigns items to bins of capacity `budget`: items are taken longest first (ties by index) and each goes to
    the first bin with room left.

    :param lengths: the item sizes
    :param budget: the bin capacity
    :return: the item indices of every bin, in bin creation order
    """
    bins: List[List[int]] = []
    room: List[int] = []
    for index in sorted(range(len(lengths)), key=lambda i: (-lengths[i], i)):
        length = lengths[index]
        if length > budget:
            raise ValueError(f"Sequence {index} of {length} tokens exceeds the batch budget of {budget} tokens.")
        for b, free in enumerate(room):
            if length <= free:
                bins[b].append(index)
                room[b] -= length
                break
        else:
            bins.append([index])
            room.append(budget - length)
    return bins


def _batch_of(batch_id: int, sequences: Sequence[EncodedSequence]) -> PackedBatch:
    ids, segments, targets, intervals = [], [], [], []
    for segment, seq in enumerate(sequences):
        ids.extend(seq.ids)
        segments.extend([segment] * len(seq))
        targets.extend(list(seq.ids[1:]) + [IGNORE_INDEX])
        intervals.extend(seq.intervals)
    return PackedBatch(
        batch_id=batch_id,
        token_ids=torch.tensor([ids], dtype=torch.long),
        segment_ids=torch.tensor([segments], dtype=torch.long),
        targets=torch.tensor([targets], dtype=torch.long),
        supervision=AttSupervision.from_rows([intervals]),
        sequence_indices=tuple(s.index for s in sequences),
        lengths=tuple(len(s) for s in sequences),
    )


def pack(sequences: Sequence[EncodedSequence], tokens_per_batch: int) -> List[PackedBatch]:
    """
    Packs sequences into batches of at most tokens_per_batch tokens with first-fit-decreasing.
    """
    if not sequences:
        return []
    bins = first_fit_decreasing([len(s) for s in sequences], tokens_per_batch)
    batches = [_batch_of(batch_id, [sequences[i] for i in members]) for batch_id, members in enumerate(bins)]
    logging.debug("Packed sequences count=%d batches=%d budget=%d", len(sequences), len(batches), tokens_per_batch)
    return batches
