from timelinegpt.training.corpus import CorpusSplit, prepare_corpus, split_sequences
from timelinegpt.training.packing import EncodedSequence, PackedBatch, encode_for_training, first_fit_decreasing, pack
from timelinegpt.training.trainer import (TrainConfig, Trainer, TrainingAborted, TrainResult, warmup_factor,
                                          write_curve)
