import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

DTYPES = {"float64": torch.float64, "float32": torch.float32}

N_MONTH_CLASSES = 13
N_DAY_CLASSES = 30


@dataclass
class ModelConfig:
    """
    Hyperparameters of the decoder. Defaults are the full-scale model; desk runs scale them down.

    vocab_size: number of tokens
    embed_dim: hidden size, divisible by 3 and by n_heads
    n_layers: number of decoder blocks
    n_heads: attention heads per block
    context_window: the longest input the model accepts
    dropout_rate: dropout on embeddings, attention and feed-forward outputs
    max_td_year_class: the last year class of the time decomposition head
    use_time_objectives: build the time decomposition and time-to-event heads
    dtype: "float64" for training and gradient checks, "float32" for inference
    """
    vocab_size: int
    embed_dim: int = 768
    n_layers: int = 16
    n_heads: int = 12
    context_window: int = 4096
    dropout_rate: float = 0.1
    max_td_year_class: int = 10
    use_time_objectives: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "n_layers", "n_heads", "context_window", "max_td_year_class"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"ModelConfig field [{name}] must be positive.")
        if self.embed_dim % 3 != 0:
            raise ValueError("ModelConfig field [embed_dim] must be divisible by 3.")
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("ModelConfig field [embed_dim] must be divisible by n_heads.")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("ModelConfig field [dropout_rate] must be in [0, 1).")
        if self.dtype not in DTYPES:
            raise ValueError(f"ModelConfig field [dtype] must be one of {sorted(DTYPES)}.")

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]


@dataclass
class ModelOutput:
    logits: torch.Tensor
    hidden: torch.Tensor


def attention_mask(segment_ids: torch.Tensor) -> torch.Tensor:
    """
    Builds the block-diagonal causal mask of packed rows: position i attends to j iff j <= i and both belong to
    the same segment. Padding positions carry segment id -1 and only attend to themselves.

    :param segment_ids: [batch, positions] integer segment ids
    :return: [batch, positions, positions] boolean mask, True where attention is allowed
    """
    n = segment_ids.shape[-1]
    causal = torch.ones(n, n, dtype=torch.bool, device=segment_ids.device).tril()
    same = segment_ids[:, :, None] == segment_ids[:, None, :]
    valid = (segment_ids >= 0)[:, :, None]
    eye = torch.eye(n, dtype=torch.bool, device=segment_ids.device)
    return (same & causal & valid) | eye


class CausalSelfAttention(nn.Module):

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.qkv = nn.Linear(cfg.embed_dim, 3 * cfg.embed_dim)
        self.proj = nn.Linear(cfg.embed_dim, cfg.embed_dim)
        self.attn_dropout = nn.Dropout(cfg.dropout_rate)
        self.resid_dropout = nn.Dropout(cfg.dropout_rate)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        batch, length, dim = x.shape
        head_dim = dim // self.n_heads
        q, k, v = self.qkv(x).split(dim, dim=-1)
        q, k, v = (t.view(batch, length, self.n_heads, head_dim).transpose(1, 2) for t in (q, k, v))
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(head_dim)
        scores = scores.masked_fill(~mask[:, None, :, :], float("-inf"))
        weights = self.attn_dropout(torch.softmax(scores, dim=-1))
        out = (weights @ v).transpose(1, 2).reshape(batch, length, dim)
        return self.resid_dropout(self.proj(out))


class DecoderBlock(nn.Module):
    """
    A pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)) with a 4x GELU feed-forward.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln_1 = nn.LayerNorm(cfg.embed_dim)
        self.attn = CausalSelfAttention(cfg)
        self.ln_2 = nn.LayerNorm(cfg.embed_dim)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.embed_dim, 4 * cfg.embed_dim),
            nn.GELU(),
            nn.Linear(4 * cfg.embed_dim, cfg.embed_dim),
            nn.Dropout(cfg.dropout_rate),
        )

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln_1(x), mask)
        return x + self.mlp(self.ln_2(x))


class TimeDecompositionHead(nn.Module):
    """
    Three linear classifiers reading contiguous thirds of a hidden state: years, months and days.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        third = cfg.embed_dim // 3
        self.year = nn.Linear(third, cfg.max_td_year_class + 1)
        self.month = nn.Linear(third, N_MONTH_CLASSES)
        self.day = nn.Linear(third, N_DAY_CLASSES)

    def forward(self, hidden: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        e_year, e_month, e_day = hidden.chunk(3, dim=-1)
        return self.year(e_year), self.month(e_month), self.day(e_day)


class TimeToEventHead(nn.Module):
    """
    A feed-forward layer producing the shape and rate of a Gamma distribution, kept positive with
    softplus(x) + 1e-6.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(cfg.embed_dim, cfg.embed_dim),
            nn.GELU(),
            nn.Linear(cfg.embed_dim, 2),
        )

    def forward(self, hidden: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        params = F.softplus(self.net(hidden)) + 1e-6
        return params[..., 0], params[..., 1]


class TimelineGPT(nn.Module):
    """
    A decoder-only transformer over timeline tokens. There is no positional embedding table: order reaches the
    model only through the causal mask. The next-token head is tied to the token embedding.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.wte = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
        self.drop = nn.Dropout(cfg.dropout_rate)
        self.blocks = nn.ModuleList([DecoderBlock(cfg) for _ in range(cfg.n_layers)])
        self.ln_f = nn.LayerNorm(cfg.embed_dim)
        self.td_head: Optional[TimeDecompositionHead] = None
        self.tte_head: Optional[TimeToEventHead] = None
        if cfg.use_time_objectives:
            self.td_head = TimeDecompositionHead(cfg)
            self.tte_head = TimeToEventHead(cfg)
        self.apply(self._init_weights)
        self.to(cfg.torch_dtype)

    @staticmethod
    def _init_weights(module):
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)

    @classmethod
    def from_config(cls, cfg: ModelConfig, seed: int = 0) -> "TimelineGPT":
        """
        Builds a model with weights drawn from a private random stream, leaving the global torch state untouched.
        """
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            model = cls(cfg)
        logging.info("Built model parameters=%d layers=%d embed_dim=%d", model.n_parameters(), cfg.n_layers,
                     cfg.embed_dim)
        return model

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, token_ids: torch.Tensor, segment_ids: torch.Tensor = None) -> ModelOutput:
        """
        :param token_ids: [batch, positions] or [positions] token ids
        :param segment_ids: optional: same shape, the packed segment of every position, -1 for padding.
            A single segment is assumed when missing
        :return: the next-token logits and the final hidden states
        """
        if token_ids.dim() == 1:
            token_ids = token_ids[None, :]
            if segment_ids is not None:
                segment_ids = segment_ids[None, :]
        if token_ids.shape[-1] > self.config.context_window:
            raise ValueError(f"Input of {token_ids.shape[-1]} positions exceeds the context window "
                             f"of {self.config.context_window}.")
        if segment_ids is None:
            segment_ids = torch.zeros_like(token_ids)
        mask = attention_mask(segment_ids)
        x = self.drop(self.wte(token_ids))
        for block in self.blocks:
            x = block(x, mask)
        hidden = self.ln_f(x)
        logits = hidden @ self.wte.weight.t()
        return ModelOutput(logits=logits, hidden=hidden)

    @torch.no_grad()
    def next_token_logits(self, token_ids: Sequence[int]) -> torch.Tensor:
        """
        Returns the next-token logits after a prompt, keeping only the last context_window tokens.
        The caller is responsible for eval mode.
        """
        ids = list(token_ids)[-self.config.context_window:]
        if not ids:
            raise ValueError("Cannot predict the next token of an empty prompt.")
        output = self.forward(torch.tensor(ids, dtype=torch.long))
        return output.logits[0, -1]
