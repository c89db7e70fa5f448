"""
Autoregressive sampling. Decoding controls are applied to the next-token logits in a fixed order:
repetition penalty, temperature, top-k, then top-p.
"""
import logging
from collections import Counter
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch

from timelinegpt.codec import TokenSequence, Vocabulary
from timelinegpt.codec.tokens import END
from timelinegpt.util import config_from_dict


@dataclass
class SamplingConfig:
    """
    One generation expert.

    temperature: logits are divided by it, > 0
    top_k: keep the k most likely tokens, 0 disables the filter
    top_p: keep the smallest set of most likely tokens whose mass reaches top_p, in (0, 1]
    repetition_penalty: >= 1, penalizes every token already present in the context
    max_tokens: the longest sequence, prompt included
    min_tokens: pooled sequences shorter than this are dropped
    checkpoint: optional: the model checkpoint this expert samples from
    seed: the base seed of the expert's random streams
    """
    temperature: float = 1.0
    top_k: int = 0
    top_p: float = 1.0
    repetition_penalty: float = 1.0
    max_tokens: int = 4096
    min_tokens: int = 20
    checkpoint: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("SamplingConfig field [temperature] must be positive.")
        if self.top_k < 0:
            raise ValueError("SamplingConfig field [top_k] cannot be negative.")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("SamplingConfig field [top_p] must be in (0, 1].")
        if self.repetition_penalty < 1.0:
            raise ValueError("SamplingConfig field [repetition_penalty] must be at least 1.")
        if self.max_tokens <= 0 or self.min_tokens < 0:
            raise ValueError("SamplingConfig fields [max_tokens] and [min_tokens] must be positive.")


def next_token_distribution(logits: torch.Tensor, context: Sequence[int], cfg: SamplingConfig) -> torch.Tensor:
    """
    Turns raw next-token logits into the sampling distribution.

    :param logits: [vocab] raw logits
    :param context: the ids already in the sequence, used by the repetition penalty
    :param cfg: the decoding controls
    :return: [vocab] probabilities, float64
    """
    logits = logits.detach().to(torch.float64).clone()
    if cfg.repetition_penalty != 1.0 and len(context) > 0:
        seen = torch.tensor(sorted(set(int(i) for i in context)), dtype=torch.long)
        values = logits[seen]
        logits[seen] = torch.where(values > 0, values / cfg.repetition_penalty, values * cfg.repetition_penalty)
    logits = logits / cfg.temperature
    if 0 < cfg.top_k < logits.numel():
        values, indices = torch.topk(logits, cfg.top_k)
        filtered = torch.full_like(logits, float("-inf"))
        filtered[indices] = values
        logits = filtered
    if cfg.top_p < 1.0:
        sorted_logits, order = torch.sort(logits, descending=True)
        sorted_probs = torch.softmax(sorted_logits, dim=-1)
        mass_before = torch.cumsum(sorted_probs, dim=-1) - sorted_probs
        remove = mass_before >= cfg.top_p
        remove[0] = False
        logits = logits.clone()
        logits[order[remove]] = float("-inf")
    return torch.softmax(logits, dim=-1)


@dataclass
class SampledSequence:
    sequence: TokenSequence
    expert: int
    index: int
    seed: int
    hit_max_tokens: bool


def sample_sequence(model, prompt: Sequence[str], cfg: SamplingConfig, vocab: Vocabulary,
                    generator: torch.Generator) -> Tuple[List[str], bool]:
    """
    Samples a continuation of the prompt until [END] or max_tokens.

    :param model: any object with a next_token_logits(ids) method
    :param prompt: the prompt tokens, usually a demographic prefix
    :param cfg: the decoding controls
    :param vocab: the vocabulary of the model
    :param generator: the random stream of this sequence
    :return: the full token list, prompt included, and whether max_tokens stopped the generation
    """
    ids = vocab.encode(prompt)
    end_id = vocab.token_id(END)
    with torch.no_grad():
        while len(ids) < cfg.max_tokens:
            probs = next_token_distribution(model.next_token_logits(ids), ids, cfg)
            next_id = int(torch.multinomial(probs, 1, generator=generator))
            ids.append(next_id)
            if next_id == end_id:
                return vocab.decode(ids), False
    return vocab.decode(ids), ids[-1] != end_id


class DemographicPromptSampler:
    """
    Draws demographic prefixes (year, age, gender, race) from their empirical joint distribution in a corpus.
    """

    def __init__(self, prefixes: Sequence[Tuple[str, ...]]):
        counts = Counter(tuple(p) for p in prefixes)
        if not counts:
            raise ValueError("Cannot sample prompts from an empty corpus.")
        self.prefixes = sorted(counts)
        total = sum(counts.values())
        self.probabilities = np.array([counts[p] / total for p in self.prefixes])

    @classmethod
    def from_sequences(cls, sequences: Sequence[TokenSequence]) -> "DemographicPromptSampler":
        return cls([tuple(s.tokens[:4]) for s in sequences if len(s) >= 4])

    def sample(self, rng: np.random.Generator) -> List[str]:
        return list(self.prefixes[int(rng.choice(len(self.prefixes), p=self.probabilities))])


def load_experts(values) -> List[Tuple[SamplingConfig, int]]:
    """
    Reads experts from a parsed key-value document: a list of blocks, or a mapping with an "experts" list.
    Each block holds SamplingConfig fields plus "count", the number of sequences to generate.
    """
    if isinstance(values, dict):
        values = values.get("experts")
    if not isinstance(values, list) or not values:
        raise ValueError("The expert list must hold at least one expert block.")
    experts = []
    for position, block in enumerate(values):
        if not isinstance(block, dict) or "count" not in block:
            raise ValueError(f"Expert block {position} must be a mapping with a [count] field.")
        block = dict(block)
        count = int(block.pop("count"))
        if count < 0:
            raise ValueError(f"Expert block {position} has a negative [count].")
        experts.append((config_from_dict(SamplingConfig, block), count))
    logging.debug("Loaded experts count=%d", len(experts))
    return experts

