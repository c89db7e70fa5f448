import dataclasses
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import torch
import torch.nn.functional as F

from timelinegpt.codec.tokens import decompose_interval
from timelinegpt.nn.autodiff import gamma_log_pdf, grad_check
from timelinegpt.nn.model import ModelConfig, TimelineGPT

IGNORE_INDEX = -100

# continuity correction of day-discretized intervals, the Gamma support excludes 0
TTE_OFFSET_DAYS = 0.5


@dataclass
class AttSupervision:
    """
    Per-position targets of the time objectives: the flag of inter-visit time token positions, the
    (years, months, days) decomposition of their interval and the interval itself.
    All tensors share the [batch, positions] shape of the inputs.
    """
    is_att: torch.Tensor
    years: torch.Tensor
    months: torch.Tensor
    days: torch.Tensor
    delta_days: torch.Tensor

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence], dtype=torch.float64) -> "AttSupervision":
        """
        :param rows: one list per batch row holding, for each position, the interval in days of an inter-visit
            time token and None elsewhere
        """
        length = max((len(r) for r in rows), default=0)
        shape = (len(rows), length)
        is_att = torch.zeros(shape, dtype=torch.bool)
        years = torch.zeros(shape, dtype=torch.long)
        months = torch.zeros(shape, dtype=torch.long)
        days = torch.zeros(shape, dtype=torch.long)
        delta = torch.zeros(shape, dtype=dtype)
        for b, row in enumerate(rows):
            for i, interval in enumerate(row):
                if interval is None:
                    continue
                if interval < 0:
                    raise ValueError(f"Negative time token interval [{interval}] at position {i}.")
                triple = decompose_interval(int(interval))
                is_att[b, i] = True
                years[b, i], months[b, i], days[b, i] = triple.years, triple.months, triple.days
                delta[b, i] = float(interval)
        return cls(is_att, years, months, days, delta)


@dataclass
class LossBreakdown:
    total: torch.Tensor
    ntp: float
    td: float
    tte: float
    n_tokens: int
    n_att: int
    n_clamped: int


def clamp_year_targets(years: torch.Tensor, max_year_class: int) -> Tuple[torch.Tensor, int]:
    n_clamped = int((years > max_year_class).sum())
    return years.clamp(max=max_year_class), n_clamped


def td_loss(model: TimelineGPT, hidden_at_att: torch.Tensor, years: torch.Tensor, months: torch.Tensor,
            days: torch.Tensor) -> torch.Tensor:
    """
    Summed cross-entropy of the year, month and day classifiers over the given positions.
    Year targets above the last class must be clamped by the caller.
    """
    year_logits, month_logits, day_logits = model.td_head(hidden_at_att)
    return (F.cross_entropy(year_logits, years, reduction="sum")
            + F.cross_entropy(month_logits, months, reduction="sum")
            + F.cross_entropy(day_logits, days, reduction="sum"))


def tte_loss(model: TimelineGPT, hidden_at_att: torch.Tensor, delta_days: torch.Tensor) -> torch.Tensor:
    """
    Summed negative log-likelihood of the intervals under the Gamma distribution predicted at each position,
    evaluated at delta + 0.5 days.
    """
    alpha, beta = model.tte_head(hidden_at_att)
    return -gamma_log_pdf(alpha, beta, delta_days.to(alpha.dtype) + TTE_OFFSET_DAYS).sum()


def total_loss(model: TimelineGPT, token_ids: torch.Tensor, targets: torch.Tensor, segment_ids: torch.Tensor = None,
               supervision: AttSupervision = None) -> LossBreakdown:
    """
    The training objective: (sum of next-token losses + sum over time token positions of the time decomposition
    and time-to-event losses) divided by the number of non-padding positions. A position whose segment id is -1 is
    padding; every position counts when no segment ids are given.

    :param model: the model
    :param token_ids: [batch, positions] input ids
    :param targets: [batch, positions] next-token targets, IGNORE_INDEX where there is none
    :param segment_ids: optional: [batch, positions] packed segment ids
    :param supervision: optional: the time token targets, ignored when the model has no time heads
    :return: the LossBreakdown, `total` is the differentiable scalar
    """
    if token_ids.dim() == 1:
        token_ids, targets = token_ids[None, :], targets[None, :]
        segment_ids = None if segment_ids is None else segment_ids[None, :]
    n_tokens = int((segment_ids >= 0).sum()) if segment_ids is not None else token_ids.numel()
    if n_tokens == 0:
        raise ValueError("Cannot compute the loss of a batch made of padding only.")

    output = model(token_ids, segment_ids)
    ntp = F.cross_entropy(output.logits.reshape(-1, output.logits.shape[-1]), targets.reshape(-1),
                          ignore_index=IGNORE_INDEX, reduction="sum")
    total = ntp
    td_value = tte_value = 0.0
    n_att = n_clamped = 0
    if supervision is not None and model.config.use_time_objectives and bool(supervision.is_att.any()):
        mask = supervision.is_att
        hidden = output.hidden[mask]
        years, n_clamped = clamp_year_targets(supervision.years[mask], model.config.max_td_year_class)
        td = td_loss(model, hidden, years, supervision.months[mask], supervision.days[mask])
        tte = tte_loss(model, hidden, supervision.delta_days[mask])
        total = total + td + tte
        n_att = int(mask.sum())
        td_value, tte_value = float(td) / n_tokens, float(tte) / n_tokens
        if n_clamped:
            logging.debug("Clamped time decomposition year targets count=%d", n_clamped)

    return LossBreakdown(
        total=total / n_tokens,
        ntp=float(ntp) / n_tokens,
        td=td_value,
        tte=tte_value,
        n_tokens=n_tokens,
        n_att=n_att,
        n_clamped=n_clamped,
    )


@torch.no_grad()
def extract_representation(model: TimelineGPT, token_ids: Sequence[int]) -> torch.Tensor:
    """
    The final-layer hidden state at the last position of a sequence, computed in eval mode.

    :param model: the trained model
    :param token_ids: the sequence ids, truncated to the last context_window tokens
    :return: a vector of embed_dim values
    """
    ids = list(token_ids)
    if not ids:
        raise ValueError("Cannot extract the representation of an empty sequence.")
    ids = ids[-model.config.context_window:]
    was_training = model.training
    model.eval()
    try:
        hidden = model(torch.tensor(ids, dtype=torch.long)).hidden
    finally:
        model.train(was_training)
    return hidden[0, -1].clone()


def loss_gradient_error(cfg: ModelConfig, seed: int = 0, n_rows: int = 2, length: int = 12,
                        max_entries_per_param: int = None) -> float:
    """
    Checks the gradients of total_loss against finite differences on a random batch, with a freshly built
    float64 model and no dropout. Every third position is a time token with a random interval.

    :return: the largest relative error over the checked parameters
    """
    cfg = dataclasses.replace(cfg, dropout_rate=0.0, dtype="float64")
    model = TimelineGPT.from_config(cfg, seed=seed).eval()
    length = min(length, cfg.context_window)
    generator = torch.Generator().manual_seed(seed)
    ids = torch.randint(1, cfg.vocab_size, (n_rows, length), generator=generator)
    targets = torch.full_like(ids, IGNORE_INDEX)
    targets[:, :-1] = ids[:, 1:]
    intervals = torch.randint(1, 1500, (n_rows, length), generator=generator).tolist()
    supervision = AttSupervision.from_rows([[d if i % 3 == 1 else None for i, d in enumerate(row)]
                                            for row in intervals])
    error = grad_check(lambda: total_loss(model, ids, targets, supervision=supervision).total,
                       list(model.parameters()), max_entries_per_param=max_entries_per_param, seed=seed)
    logging.info("Checked loss gradients seed=%d parameters=%d max_error=%.3e", seed, model.n_parameters(), error)
    return error
