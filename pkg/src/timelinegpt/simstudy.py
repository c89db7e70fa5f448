"""
A toy study of how time reaches a model. Two binary events x1, x2 happen on days t1 <= t2 and the label is a
logic function of the events that switches with the interval between them.

A handcrafted step-activation network shows that an explicit interval input [x1, dt, x2] is enough to route the
computation through the right gate. Two small transformer encoders are then trained on the same data, one
reading the interval as a token between the events, the other adding day embeddings to the event embeddings.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from torch import nn

from timelinegpt.nn.autodiff import check_finite
from timelinegpt.util import atomic_write, derive_seed

MAX_DAY = 28
GATE_SWITCH_DAYS = 7

VARIANTS = ("timetoken", "sum")

W1 = np.array([
    [1, 0, 0, 1, 0, 0],
    [0, -1, 0, 0, 1, 0],
    [0, 0, 1, 0, 0, 1],
], dtype=float)
BETA1 = np.array([0, 7.5, 0, 0, -7.5, 0])
W2 = np.array([
    [1, 0, 0, 0],
    [1, 1, 0, 0],
    [0, 1, 0, 0],
    [0, 0, 1, 0],
    [0, 0, 1, 1],
    [0, 0, 0, 1],
], dtype=float)
BETA2 = np.array([-1.5, -1.5, -1.5, -1.5])
XOR_SELECTOR = np.array([[1, 0], [0, 1], [0, 0], [0, 0]])
AND_SELECTOR = np.array([[0, 0], [0, 0], [1, 0], [0, 1]])


def step_activation(x) -> np.ndarray:
    """0 where x <= 0, 1 where x > 0."""
    return (np.asarray(x) > 0).astype(int)


def gate_and(a, b) -> int:
    return int(step_activation(a + b - 1.5))


def gate_or(a, b) -> int:
    return int(step_activation(a + b - 0.5))


def gate_xor(a, b) -> int:
    return int(step_activation(gate_or(a, b) - gate_and(a, b) - 0.5))


@dataclass(frozen=True)
class RoutingTrace:
    a1: np.ndarray
    a2: np.ndarray
    y: int


def handcrafted_forward(x1: int, dt: int, x2: int) -> RoutingTrace:
    """
    Evaluates the two-layer routing network on [x1, dt, x2]. The second layer keeps the events on the XOR pair
    when dt <= 7 and on the AND pair otherwise; the output is OR(XOR(pair 1), AND(pair 2)).
    """
    a1 = step_activation(np.array([x1, dt, x2], dtype=float) @ W1 + BETA1)
    a2 = step_activation(a1 @ W2 + BETA2)
    xor_in, and_in = a2 @ XOR_SELECTOR, a2 @ AND_SELECTOR
    y = gate_or(gate_xor(*xor_in), gate_and(*and_in))
    return RoutingTrace(a1, a2, y)


def gated_logic(x1: int, x2: int, dt: int) -> int:
    return (x1 ^ x2) if dt <= GATE_SWITCH_DAYS else (x1 & x2)


def logic_label(x1: int, x2: int, t1: int, t2: int) -> int:
    """
    The label of the encoder comparison; the first matching rule wins:
    dt % 4 == 0 with x1 = 1 gives not x2, dt % 3 == 0 with x1 = 0 gives x2, dt <= 7 gives XOR, dt <= 14 gives AND,
    anything longer gives OR.
    """
    if x1 not in (0, 1) or x2 not in (0, 1):
        raise ValueError(f"Events must be binary, got x1={x1} x2={x2}.")
    if not 0 <= t1 <= t2 <= MAX_DAY:
        raise ValueError(f"Days must satisfy 0 <= t1 <= t2 <= {MAX_DAY}, got t1={t1} t2={t2}.")
    dt = t2 - t1
    if dt % 4 == 0 and x1 == 1:
        return 1 - x2
    if dt % 3 == 0 and x1 == 0:
        return x2
    if dt <= 7:
        return x1 ^ x2
    if dt <= 14:
        return x1 & x2
    return x1 | x2


def sample_dataset(n_samples: int = 1000, seed: int = 0) -> pd.DataFrame:
    """
    Draws events uniformly from {0, 1} and a day pair uniformly from 0..28, ordered so that t1 <= t2.

    :return: a frame with columns x1, x2, t1, t2, y
    """
    if n_samples <= 0:
        raise ValueError("The dataset needs at least one sample.")
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, size=(n_samples, 2))
    days = np.sort(rng.integers(0, MAX_DAY + 1, size=(n_samples, 2)), axis=1)
    frame = pd.DataFrame({"x1": x[:, 0], "x2": x[:, 1], "t1": days[:, 0], "t2": days[:, 1]})
    frame["y"] = [logic_label(*row) for row in frame[["x1", "x2", "t1", "t2"]].itertuples(index=False)]
    return frame


@dataclass
class EncoderConfig:
    """
    The two toy encoders and their training run.

    embed_dim: size of the token, day and position embeddings
    hidden_dim: width of the encoder layers; embeddings are projected when it differs from embed_dim
    intermediate_dim: width of the feed-forward sublayer
    """
    embed_dim: int = 16
    hidden_dim: int = 16
    intermediate_dim: int = 32
    n_layers: int = 2
    n_heads: int = 2
    dropout_rate: float = 0.0
    steps: int = 20000
    batch_size: int = 128
    eval_every: int = 100
    learning_rate: float = 1e-3
    n_samples: int = 1000

    def __post_init__(self):
        for name in ("embed_dim", "hidden_dim", "intermediate_dim", "n_layers", "n_heads", "steps", "batch_size",
                     "eval_every", "n_samples"):
            if getattr(self, name) <= 0:
                raise ValueError(f"EncoderConfig field [{name}] must be positive.")
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError("EncoderConfig field [hidden_dim] must be divisible by n_heads.")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("EncoderConfig field [dropout_rate] must be in [0, 1).")
        if self.learning_rate <= 0:
            raise ValueError("EncoderConfig field [learning_rate] must be positive.")


class LogicEncoder(nn.Module):
    """
    A transformer encoder classifying one sample from the final state of a leading classification position.

    The "timetoken" variant reads [CLS, x1, dt, x2] where x values and intervals share one token table.
    The "sum" variant reads [CLS, x1 + t1, x2 + t2], adding a day embedding to each event embedding.
    """

    def __init__(self, cfg: EncoderConfig, variant: str):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"Unknown encoder variant [{variant}], expected one of {list(VARIANTS)}.")
        self.variant = variant
        if variant == "timetoken":
            # rows 0-1 are event values, 2.. are intervals
            self.tokens = nn.Embedding(2 + MAX_DAY + 1, cfg.embed_dim)
            self.days = None
            n_positions = 4
        else:
            self.tokens = nn.Embedding(2, cfg.embed_dim)
            self.days = nn.Embedding(MAX_DAY + 1, cfg.embed_dim)
            n_positions = 3
        self.cls = nn.Parameter(torch.randn(cfg.embed_dim) * 0.02)
        self.positions = nn.Embedding(n_positions, cfg.embed_dim)
        self.project = nn.Identity() if cfg.embed_dim == cfg.hidden_dim else nn.Linear(cfg.embed_dim, cfg.hidden_dim)
        layer = nn.TransformerEncoderLayer(d_model=cfg.hidden_dim, nhead=cfg.n_heads,
                                           dim_feedforward=cfg.intermediate_dim, dropout=cfg.dropout_rate,
                                           batch_first=True)
        self.encoder = nn.TransformerEncoder(layer, num_layers=cfg.n_layers, enable_nested_tensor=False)
        self.head = nn.Linear(cfg.hidden_dim, 2)

    @classmethod
    def from_config(cls, cfg: EncoderConfig, variant: str, seed: int = 0) -> "LogicEncoder":
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            return cls(cfg, variant)

    def forward(self, x1: torch.Tensor, x2: torch.Tensor, t1: torch.Tensor, t2: torch.Tensor) -> torch.Tensor:
        if self.variant == "timetoken":
            inputs = self.tokens(torch.stack([x1, 2 + (t2 - t1), x2], dim=1))
        else:
            inputs = self.tokens(torch.stack([x1, x2], dim=1)) + self.days(torch.stack([t1, t2], dim=1))
        cls = self.cls.expand(inputs.shape[0], 1, -1)
        x = torch.cat([cls, inputs], dim=1)
        x = x + self.positions(torch.arange(x.shape[1]))
        hidden = self.encoder(self.project(x))
        return self.head(hidden[:, 0])


def _tensors(data: pd.DataFrame):
    return tuple(torch.tensor(data[c].to_numpy(), dtype=torch.long) for c in ("x1", "x2", "t1", "t2", "y"))


@torch.no_grad()
def accuracy(model: LogicEncoder, data: pd.DataFrame) -> float:
    x1, x2, t1, t2, y = _tensors(data)
    model.eval()
    predicted = model(x1, x2, t1, t2).argmax(dim=-1)
    return float((predicted == y).float().mean())


def train_encoder(model: LogicEncoder, data: pd.DataFrame, cfg: EncoderConfig, seed: int = 0) -> pd.DataFrame:
    """
    Trains with Adam on minibatches drawn with replacement and scores the whole training set every eval_every
    steps, step 0 included.

    :return: a frame with columns step, accuracy
    """
    x1, x2, t1, t2, y = _tensors(data)
    rng = np.random.default_rng(seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999))
    curve = [(0, accuracy(model, data))]
    for step in range(1, cfg.steps + 1):
        model.train()
        batch = torch.from_numpy(rng.integers(0, len(data), size=cfg.batch_size))
        optimizer.zero_grad(set_to_none=True)
        loss = F.cross_entropy(model(x1[batch], x2[batch], t1[batch], t2[batch]), y[batch])
        check_finite(loss, f"{model.variant}.loss at step {step}")
        loss.backward()
        optimizer.step()
        if step % cfg.eval_every == 0 or step == cfg.steps:
            curve.append((step, accuracy(model, data)))
            logging.debug("Encoder step variant=%s step=%d loss=%.6f accuracy=%.4f", model.variant, step,
                          float(loss), curve[-1][1])
    return pd.DataFrame(curve, columns=["step", "accuracy"])


@dataclass
class ComparisonResult:
    curve: pd.DataFrame
    data: pd.DataFrame
    seed: int

    def convergence_step(self, threshold: float = 0.99) -> Optional[int]:
        """The first evaluated step at which the time-token encoder reaches the threshold."""
        reached = self.curve[self.curve["acc_timetoken"] >= threshold]
        return None if reached.empty else int(reached["step"].iloc[0])

    def long_format(self) -> pd.DataFrame:
        long = self.curve.melt(id_vars="step", value_vars=["acc_timetoken", "acc_sum"], var_name="model",
                               value_name="accuracy")
        long["model"] = long["model"].str.replace("acc_", "", regex=False)
        long.insert(0, "seed", self.seed)
        return long

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        atomic_write(out_dir / "accuracy_curves.csv", lambda p: self.curve.to_csv(p, index=False))
        atomic_write(out_dir / "accuracy_curves_long.csv", lambda p: self.long_format().to_csv(p, index=False))
        return out_dir


def run_comparison(cfg: EncoderConfig = None, seed: int = 0, threads: int = None) -> ComparisonResult:
    """
    Trains the time-token and the summation encoders on the same sampled dataset.

    :param cfg: optional: the encoder and training settings
    :param seed: the seed of the dataset, the weights and the batch streams
    :param threads: optional: 1 trains the two encoders one after the other, anything else side by side
    :return: the ComparisonResult with columns step, acc_timetoken, acc_sum
    """
    cfg = cfg or EncoderConfig()
    data = sample_dataset(cfg.n_samples, derive_seed(seed, 0))
    logging.info("Starting encoder comparison seed=%d samples=%d positive_rate=%.3f steps=%d", seed, len(data),
                 data["y"].mean(), cfg.steps)
    models = [LogicEncoder.from_config(cfg, variant, derive_seed(seed, 1, i)) for i, variant in enumerate(VARIANTS)]

    def train(index):
        return train_encoder(models[index], data, cfg, derive_seed(seed, 2, index))

    workers = 1 if threads == 1 else len(VARIANTS)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        timetoken, summed = executor.map(train, range(len(VARIANTS)))
    curve = pd.DataFrame({"step": timetoken["step"], "acc_timetoken": timetoken["accuracy"],
                          "acc_sum": summed["accuracy"]})
    result = ComparisonResult(curve, data, seed)
    logging.info("Finished encoder comparison seed=%d final_timetoken=%.4f final_sum=%.4f converged_step=%s", seed,
                 curve["acc_timetoken"].iloc[-1], curve["acc_sum"].iloc[-1], result.convergence_step())
    return result


def sweep(cfg: EncoderConfig = None, seeds: Sequence[int] = range(5), threshold: float = 0.99,
          threads: int = None) -> pd.DataFrame:
    """
    Repeats the comparison over several seeds.

    :return: one row per seed: seed, convergence_step, final_timetoken, final_sum, timetoken_at_convergence,
        sum_at_convergence
    """
    rows = []
    for seed in seeds:
        result = run_comparison(cfg, seed, threads)
        converged = result.convergence_step(threshold)
        curve = result.curve
        at = curve[curve["step"] == converged].iloc[0] if converged is not None else None
        rows.append({
            "seed": seed,
            "convergence_step": converged,
            "final_timetoken": curve["acc_timetoken"].iloc[-1],
            "final_sum": curve["acc_sum"].iloc[-1],
            "timetoken_at_convergence": np.nan if at is None else at["acc_timetoken"],
            "sum_at_convergence": np.nan if at is None else at["acc_sum"],
        })
    return pd.DataFrame(rows)
