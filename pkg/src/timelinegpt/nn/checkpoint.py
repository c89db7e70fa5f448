import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import torch

from timelinegpt.nn.model import ModelConfig, TimelineGPT
from timelinegpt.util import atomic_write

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: TimelineGPT
    vocab_sha256: Optional[str]
    optimizer_state: Optional[Dict[str, Any]] = None
    scheduler_state: Optional[Dict[str, Any]] = None
    trainer_state: Optional[Dict[str, Any]] = None


def save_checkpoint(path, model: TimelineGPT, vocab_sha256: str = None, optimizer=None, scheduler=None,
                    trainer_state: Dict[str, Any] = None):
    """
    Writes a versioned checkpoint through a temporary file renamed into place.

    :param path: the destination file
    :param model: the model, its config and parameters are stored
    :param vocab_sha256: optional: the hash of the vocabulary the model was trained with
    :param optimizer: optional: the optimizer whose state is stored for resuming
    :param scheduler: optional: the learning rate scheduler
    :param trainer_state: optional: a picklable mapping describing the training position
    """
    payload = {
        "format_version": FORMAT_VERSION,
        "model_config": dataclasses.asdict(model.config),
        "vocab_sha256": vocab_sha256,
        "state_dict": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "scheduler": scheduler.state_dict() if scheduler is not None else None,
        "trainer_state": trainer_state,
    }
    atomic_write(path, lambda p: torch.save(payload, p))
    logging.info("Saved checkpoint path=%s", path)


def load_checkpoint(path, expected_vocab_sha256: str = None) -> Checkpoint:
    """
    Restores a checkpoint written by save_checkpoint.

    :param path: the checkpoint file
    :param expected_vocab_sha256: optional: fail when the checkpoint was trained on another vocabulary
    :return: the Checkpoint with the rebuilt model in eval mode
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint file not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"Unsupported checkpoint format version [{version}] in {path}.")
    if expected_vocab_sha256 is not None and payload["vocab_sha256"] != expected_vocab_sha256:
        raise ValueError(f"Checkpoint {path} was trained on another vocabulary.")
    model = TimelineGPT(ModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    logging.debug("Loaded checkpoint path=%s parameters=%d", path, model.n_parameters())
    return Checkpoint(
        model=model,
        vocab_sha256=payload["vocab_sha256"],
        optimizer_state=payload["optimizer"],
        scheduler_state=payload["scheduler"],
        trainer_state=payload["trainer_state"],
    )
