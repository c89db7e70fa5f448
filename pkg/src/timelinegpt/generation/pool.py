import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from timelinegpt.codec import TokenSequence, Vocabulary
from timelinegpt.generation.sampler import DemographicPromptSampler, SampledSequence, SamplingConfig, sample_sequence
from timelinegpt.util import derive_seed


@dataclass
class ExpertCounts:
    generated: int = 0
    kept: int = 0
    hit_max_tokens: int = 0


@dataclass
class SyntheticCorpus:
    sequences: List[SampledSequence]
    counts: Dict[int, ExpertCounts] = field(default_factory=dict)

    def __len__(self):
        return len(self.sequences)

    def token_sequences(self) -> List[TokenSequence]:
        return [s.sequence for s in self.sequences]

    def provenance(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(s.sequence.person_id, s.expert, s.index, s.seed, s.hit_max_tokens, len(s.sequence))
             for s in self.sequences],
            columns=["person_id", "expert", "index", "seed", "hit_max_tokens", "n_tokens"],
        )

    def counts_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(expert, c.generated, c.kept, c.hit_max_tokens) for expert, c in sorted(self.counts.items())],
            columns=["expert", "generated", "kept", "hit_max_tokens"],
        )


def _model_for(cfg: SamplingConfig, model, models: Optional[Mapping]):
    if not cfg.checkpoint:
        return model
    if models is None or cfg.checkpoint not in models:
        if model is None:
            raise ValueError(f"No model loaded for checkpoint [{cfg.checkpoint}].")
        return model
    return models[cfg.checkpoint]


def generate_pool(model, vocab: Vocabulary, experts: Sequence[Tuple[SamplingConfig, int]],
                  prompts: DemographicPromptSampler, threads: int = None,
                  models: Optional[Mapping] = None) -> SyntheticCorpus:
    """
    Generates sequences from every expert and pools them. Sequence i of expert e draws its prompt and its tokens
    from streams seeded with (expert seed, e, i), so the pool does not depend on the number of threads.

    :param model: the default model, used by experts without a checkpoint
    :param vocab: the model vocabulary
    :param experts: (SamplingConfig, number of sequences) pairs
    :param prompts: the demographic prompt sampler
    :param threads: optional: the number of worker threads
    :param models: optional: models by checkpoint id
    :return: the SyntheticCorpus, sequences shorter than the expert's min_tokens removed
    """
    if not experts:
        raise ValueError("At least one expert is required.")
    tasks = [(e, i, cfg) for e, (cfg, count) in enumerate(experts) for i in range(count)]
    for cfg, _ in experts:
        _model_for(cfg, model, models).eval()

    def run(task):
        expert, index, cfg = task
        seed = derive_seed(cfg.seed, expert, index)
        prompt = prompts.sample(np.random.default_rng(seed))
        generator = torch.Generator().manual_seed(seed)
        tokens, hit_max = sample_sequence(_model_for(cfg, model, models), prompt, cfg, vocab, generator)
        person_id = f"e{expert}-{index}"
        return SampledSequence(TokenSequence.from_tokens(tokens, person_id), expert, index, seed, hit_max)

    with ThreadPoolExecutor(max_workers=threads) as executor:
        generated = list(executor.map(run, tasks))

    counts = {e: ExpertCounts() for e in range(len(experts))}
    kept = []
    for sampled in generated:
        c = counts[sampled.expert]
        c.generated += 1
        c.hit_max_tokens += int(sampled.hit_max_tokens)
        if len(sampled.sequence) >= experts[sampled.expert][0].min_tokens:
            c.kept += 1
            kept.append(sampled)
    for expert, c in counts.items():
        logging.info("Generated sequences expert=%d generated=%d kept=%d hit_max_tokens=%d", expert, c.generated,
                     c.kept, c.hit_max_tokens)
    return SyntheticCorpus(sequences=kept, counts=counts)
