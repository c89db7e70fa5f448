import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from timelinegpt.codec import TokenSequence, Vocabulary
from timelinegpt.nn.autodiff import NonFiniteError, analytic_gradients
from timelinegpt.nn.checkpoint import load_checkpoint, save_checkpoint
from timelinegpt.nn.losses import total_loss
from timelinegpt.nn.model import TimelineGPT
from timelinegpt.training.packing import PackedBatch, encode_for_training, pack
from timelinegpt.util import atomic_write, derive_seed

CURVE_COLUMNS = ["step", "train_loss", "eval_loss", "ntp", "td", "tte"]


@dataclass
class TrainConfig:
    """
    Optimization settings. A max_steps of 0 means no step cap, an eval_every_steps of 0 means evaluation only
    at the end of each epoch.
    """
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_steps: int = 500
    max_epochs: int = 10
    tokens_per_batch: int = 16384
    checkpoint_every_steps: int = 20000
    early_stop_patience: int = 1
    eval_fraction: float = 0.1
    min_seq_tokens: int = 20
    seed: int = 42
    max_steps: int = 0
    eval_every_steps: int = 0
    min_relative_improvement: float = 0.001

    def __post_init__(self):
        for name in ("learning_rate", "warmup_steps", "max_epochs", "tokens_per_batch", "checkpoint_every_steps",
                     "early_stop_patience", "min_seq_tokens"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig field [{name}] must be positive.")
        if self.weight_decay < 0 or self.max_steps < 0 or self.eval_every_steps < 0:
            raise ValueError("TrainConfig fields [weight_decay], [max_steps] and [eval_every_steps] "
                             "cannot be negative.")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("TrainConfig fields [beta1] and [beta2] must be in [0, 1).")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValueError("TrainConfig field [eval_fraction] must be in (0, 1).")


class TrainingAborted(RuntimeError):

    def __init__(self, step: int, batch_id: int, node: str):
        self.step = step
        self.batch_id = batch_id
        self.node = node
        super().__init__(f"Training aborted at step {step} on batch {batch_id}: non-finite value from [{node}].")


@dataclass
class TrainResult:
    curve: pd.DataFrame
    steps: int
    best_eval_loss: float
    stopped_early: bool
    checkpoints: List[Path] = field(default_factory=list)


def warmup_factor(step: int, warmup_steps: int) -> float:
    """
    The learning rate multiplier of the 1-based optimizer step: linear warmup, then constant.
    """
    return min(1.0, step / warmup_steps)


def relative_improvement(best: float, value: float) -> float:
    if math.isinf(best):
        return math.inf
    return (best - value) / max(abs(best), 1e-12)


class Trainer:
    """
    Runs AdamW on packed batches. Each epoch visits the batches in an order derived from (seed, epoch); each step
    reseeds dropout from (seed, epoch, position), so a run resumed from a checkpoint follows the uninterrupted
    trajectory exactly.
    """

    def __init__(self, model: TimelineGPT, vocab: Vocabulary, cfg: TrainConfig, out_dir=None):
        self.model = model
        self.vocab = vocab
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2),
                                           weight_decay=cfg.weight_decay)
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, lambda i: warmup_factor(i + 1, cfg.warmup_steps))
        self.state = {
            "epoch": 0,
            "position": 0,
            "step": 0,
            "best_eval_loss": math.inf,
            "bad_epochs": 0,
            "stopped_early": False,
            "curve": [],
        }
        self.checkpoints: List[Path] = []

    @property
    def learning_rate(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def batches(self, sequences: Sequence[TokenSequence]) -> List[PackedBatch]:
        encoded = encode_for_training(sequences, self.vocab)
        too_long = [s for s in encoded if len(s) > self.model.config.context_window]
        if too_long:
            raise ValueError(f"Sequence {too_long[0].index} is longer than the context window, "
                             f"truncate the corpus first.")
        return pack(encoded, self.cfg.tokens_per_batch)

    def _loss(self, batch: PackedBatch):
        return total_loss(self.model, batch.token_ids, batch.targets, batch.segment_ids, batch.supervision)

    def _diagnose(self, batch: PackedBatch, breakdown) -> str:
        for name in ("ntp", "td", "tte"):
            if not math.isfinite(getattr(breakdown, name)):
                return name
        try:
            analytic_gradients(lambda: self._loss(batch).total, list(self.model.parameters()))
        except NonFiniteError as e:
            return e.node
        return "gradient"

    @torch.no_grad()
    def evaluate(self, batches: Sequence[PackedBatch]) -> Dict[str, float]:
        """
        Token-weighted mean of the loss and of its components over the batches, in eval mode.
        """
        was_training = self.model.training
        self.model.eval()
        totals = {"loss": 0.0, "ntp": 0.0, "td": 0.0, "tte": 0.0}
        n_tokens = 0
        try:
            for batch in batches:
                breakdown = self._loss(batch)
                totals["loss"] += float(breakdown.total) * breakdown.n_tokens
                totals["ntp"] += breakdown.ntp * breakdown.n_tokens
                totals["td"] += breakdown.td * breakdown.n_tokens
                totals["tte"] += breakdown.tte * breakdown.n_tokens
                n_tokens += breakdown.n_tokens
        finally:
            self.model.train(was_training)
        if n_tokens == 0:
            raise ValueError("Cannot evaluate on an empty set of batches.")
        return {name: value / n_tokens for name, value in totals.items()}

    def save(self, name: str) -> Optional[Path]:
        if self.out_dir is None:
            return None
        path = self.out_dir / name
        save_checkpoint(path, self.model, self.vocab.sha256(), self.optimizer, self.scheduler, dict(self.state))
        self.checkpoints.append(path)
        return path

    def resume(self, path):
        """
        Restores model, optimizer, scheduler and training position from a checkpoint written by this trainer.
        """
        checkpoint = load_checkpoint(path, expected_vocab_sha256=self.vocab.sha256())
        if checkpoint.trainer_state is None or checkpoint.optimizer_state is None:
            raise ValueError(f"Checkpoint {path} does not hold a training state.")
        self.model.load_state_dict(checkpoint.model.state_dict())
        self.optimizer.load_state_dict(checkpoint.optimizer_state)
        self.scheduler.load_state_dict(checkpoint.scheduler_state)
        self.state = dict(checkpoint.trainer_state)
        self.state["curve"] = [dict(row) for row in self.state["curve"]]
        logging.info("Resumed training path=%s step=%d epoch=%d", path, self.state["step"], self.state["epoch"])

    def _record_eval(self, eval_batches):
        metrics = self.evaluate(eval_batches)
        if self.state["curve"] and self.state["curve"][-1]["step"] == self.state["step"]:
            self.state["curve"][-1]["eval_loss"] = metrics["loss"]
        logging.info("Evaluation step=%d eval_loss=%.6f ntp=%.6f td=%.6f tte=%.6f", self.state["step"],
                     metrics["loss"], metrics["ntp"], metrics["td"], metrics["tte"])
        return metrics

    def _end_of_epoch(self, eval_loss: float) -> bool:
        improvement = relative_improvement(self.state["best_eval_loss"], eval_loss)
        if improvement >= self.cfg.min_relative_improvement:
            self.state["best_eval_loss"] = eval_loss
            self.state["bad_epochs"] = 0
            self.save("best.pt")
        else:
            self.state["bad_epochs"] += 1
        logging.info("Finished epoch epoch=%d eval_loss=%.6f improvement=%.6f bad_epochs=%d", self.state["epoch"],
                     eval_loss, improvement, self.state["bad_epochs"])
        return self.state["bad_epochs"] >= self.cfg.early_stop_patience

    def train(self, train_sequences: Sequence[TokenSequence], eval_sequences: Sequence[TokenSequence]) -> TrainResult:
        """
        Trains until max_epochs, max_steps or early stopping, whichever comes first.

        :param train_sequences: the training corpus
        :param eval_sequences: the held-out corpus used for evaluation and early stopping
        :return: the TrainResult with the loss curve
        """
        train_batches = self.batches(train_sequences)
        eval_batches = self.batches(eval_sequences)
        if not train_batches or not eval_batches:
            raise ValueError("Training needs non-empty training and evaluation corpora.")
        cfg = self.cfg
        logging.info("Starting training batches=%d eval_batches=%d parameters=%d", len(train_batches),
                     len(eval_batches), self.model.n_parameters())

        finished = self.state["stopped_early"]
        while not finished and self.state["epoch"] < cfg.max_epochs:
            epoch = self.state["epoch"]
            order = np.random.default_rng(derive_seed(cfg.seed, epoch)).permutation(len(train_batches))
            n_clamped = 0
            while self.state["position"] < len(order):
                position = self.state["position"]
                batch = train_batches[int(order[position])]
                self.model.train()
                torch.manual_seed(derive_seed(cfg.seed, epoch, position))
                self.optimizer.zero_grad(set_to_none=True)
                breakdown = self._loss(batch)
                step = self.state["step"] + 1
                if not math.isfinite(float(breakdown.total)):
                    raise TrainingAborted(step, batch.batch_id, self._diagnose(batch, breakdown))
                breakdown.total.backward()
                if not all(bool(torch.isfinite(p.grad).all()) for p in self.model.parameters() if p.grad is not None):
                    raise TrainingAborted(step, batch.batch_id, self._diagnose(batch, breakdown))
                lr = self.learning_rate
                self.optimizer.step()
                self.scheduler.step()
                n_clamped += breakdown.n_clamped
                self.state["step"] = step
                self.state["position"] = position + 1
                self.state["curve"].append({
                    "step": step,
                    "train_loss": float(breakdown.total),
                    "eval_loss": math.nan,
                    "ntp": breakdown.ntp,
                    "td": breakdown.td,
                    "tte": breakdown.tte,
                })
                logging.debug("Training step step=%d loss=%.6f lr=%.3e batch=%d", step, float(breakdown.total),
                              lr, batch.batch_id)

                if cfg.eval_every_steps and step % cfg.eval_every_steps == 0:
                    self._record_eval(eval_batches)
                if step % cfg.checkpoint_every_steps == 0:
                    self.save(f"step-{step}.pt")
                if cfg.max_steps and step >= cfg.max_steps:
                    finished = True
                    break

            if n_clamped:
                logging.warning("Clamped time decomposition year targets epoch=%d count=%d", epoch, n_clamped)
            if finished:
                self._record_eval(eval_batches)
                break
            metrics = self._record_eval(eval_batches)
            self.state["epoch"] = epoch + 1
            self.state["position"] = 0
            if self._end_of_epoch(metrics["loss"]):
                self.state["stopped_early"] = True
                finished = True
                logging.info("Early stopping epoch=%d step=%d", epoch, self.state["step"])

        self.save("last.pt")
        curve = pd.DataFrame(self.state["curve"], columns=CURVE_COLUMNS)
        if self.out_dir is not None:
            write_curve(curve, self.out_dir / "loss_curve.csv")
        return TrainResult(
            curve=curve,
            steps=self.state["step"],
            best_eval_loss=self.state["best_eval_loss"],
            stopped_early=self.state["stopped_early"],
            checkpoints=list(self.checkpoints),
        )


def write_curve(curve: pd.DataFrame, path):
    atomic_write(path, lambda p: curve.to_csv(p, index=False))
