import math

import mock
import numpy as np
import pandas as pd
import pytest
import torch

from timelinegpt.codec import build_vocabulary, encode_patient
from timelinegpt.nn import LossBreakdown, ModelConfig, TimelineGPT
from timelinegpt.training import TrainConfig, Trainer, TrainingAborted, warmup_factor


def _setup(record_factory, n=12, seed=0, dropout_rate=0.1):
    rng = np.random.default_rng(seed)
    sequences = [encode_patient(record_factory(rng, f"p{i}", max_visits=4, n_concepts=10)) for i in range(n)]
    vocab = build_vocabulary(sequences)
    cfg = ModelConfig(vocab_size=len(vocab), embed_dim=12, n_layers=1, n_heads=2, context_window=256,
                      dropout_rate=dropout_rate)
    return sequences[:9], sequences[9:], vocab, TimelineGPT.from_config(cfg, seed=0)


def _config(**overrides):
    values = dict(learning_rate=1e-2, warmup_steps=3, max_epochs=3, tokens_per_batch=256, checkpoint_every_steps=2,
                  early_stop_patience=5, min_seq_tokens=1, seed=1)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.mark.parametrize("overrides", [dict(learning_rate=0), dict(eval_fraction=1.0), dict(warmup_steps=0),
                                       dict(beta1=1.0), dict(max_steps=-1)])
def test_train_config_validation(overrides):
    with pytest.raises(ValueError):
        TrainConfig(**overrides)


def test_warmup_factor():
    assert [warmup_factor(s, 4) for s in (1, 2, 3, 4, 5, 100)] == [0.25, 0.5, 0.75, 1.0, 1.0, 1.0]


def test_learning_rate_warms_up_linearly_then_stays_constant(record_factory):
    train, _, vocab, model = _setup(record_factory)
    trainer = Trainer(model, vocab, _config(learning_rate=0.02, warmup_steps=4))
    for step in range(1, 8):
        assert trainer.learning_rate == pytest.approx(0.02 * min(1.0, step / 4))
        trainer.optimizer.step()
        trainer.scheduler.step()


def test_zero_gradient_step_only_applies_weight_decay(record_factory):
    _, _, vocab, model = _setup(record_factory)
    trainer = Trainer(model, vocab, _config(learning_rate=0.05, warmup_steps=1, weight_decay=0.1))
    before = [p.detach().clone() for p in model.parameters()]
    for p in model.parameters():
        p.grad = torch.zeros_like(p)
    trainer.optimizer.step()
    for old, new in zip(before, model.parameters()):
        assert torch.allclose(new.detach(), old * (1 - 0.05 * 0.1), rtol=1e-14, atol=0)


def test_training_is_deterministic(record_factory):
    train, held_out, vocab, model_a = _setup(record_factory)
    _, _, _, model_b = _setup(record_factory)
    a = Trainer(model_a, vocab, _config()).train(train, held_out)
    b = Trainer(model_b, vocab, _config()).train(train, held_out)
    pd.testing.assert_frame_equal(a.curve, b.curve)
    assert a.steps == 3 * len(Trainer(model_a, vocab, _config()).batches(train))


def test_training_reduces_loss(record_factory):
    train, held_out, vocab, model = _setup(record_factory, dropout_rate=0.0)
    result = Trainer(model, vocab, _config(max_epochs=20, tokens_per_batch=128)).train(train, held_out)
    evals = result.curve["eval_loss"].dropna()
    assert evals.iloc[-1] < evals.iloc[0]


def test_resume_reproduces_uninterrupted_run(record_factory, tmp_path):
    train, held_out, vocab, model_a = _setup(record_factory)
    full = Trainer(model_a, vocab, _config(tokens_per_batch=100), out_dir=tmp_path / "a").train(train, held_out)
    assert (tmp_path / "a" / "step-2.pt").is_file()

    _, _, _, model_b = _setup(record_factory, seed=0)
    trainer = Trainer(model_b, vocab, _config(tokens_per_batch=100), out_dir=tmp_path / "b")
    trainer.resume(tmp_path / "a" / "step-2.pt")
    resumed = trainer.train(train, held_out)
    pd.testing.assert_frame_equal(resumed.curve, full.curve)
    assert torch.equal(model_a.wte.weight, model_b.wte.weight)


def test_training_writes_curve_and_checkpoints(record_factory, tmp_path):
    train, held_out, vocab, model = _setup(record_factory)
    result = Trainer(model, vocab, _config(max_steps=5), out_dir=tmp_path).train(train, held_out)
    assert result.steps == 5
    curve = pd.read_csv(tmp_path / "loss_curve.csv")
    assert list(curve.columns) == ["step", "train_loss", "eval_loss", "ntp", "td", "tte"]
    assert curve["step"].tolist() == [1, 2, 3, 4, 5]
    assert not math.isnan(curve["eval_loss"].iloc[-1])
    assert (tmp_path / "last.pt").is_file()
    assert (tmp_path / "step-4.pt").is_file()


def test_early_stopping_after_patience(record_factory):
    train, held_out, vocab, model = _setup(record_factory)
    trainer = Trainer(model, vocab, _config(max_epochs=10, early_stop_patience=1, min_relative_improvement=10.0))
    result = trainer.train(train, held_out)
    assert result.stopped_early
    assert result.steps == 2 * len(trainer.batches(train))


def test_early_stopping_never_triggers_while_improving(record_factory):
    _, _, vocab, model = _setup(record_factory)
    trainer = Trainer(model, vocab, _config(early_stop_patience=1, min_relative_improvement=0.001))
    assert not trainer._end_of_epoch(10.0)
    assert not trainer._end_of_epoch(9.98)
    assert not trainer._end_of_epoch(9.95)
    assert trainer._end_of_epoch(9.949)


def test_non_finite_loss_aborts_with_diagnostics(record_factory):
    train, held_out, vocab, model = _setup(record_factory)
    nan = LossBreakdown(total=torch.tensor(math.nan, requires_grad=True), ntp=math.nan, td=0.0, tte=0.0,
                        n_tokens=1, n_att=0, n_clamped=0)
    with mock.patch("timelinegpt.training.trainer.total_loss", return_value=nan):
        with pytest.raises(TrainingAborted) as e:
            Trainer(model, vocab, _config()).train(train, held_out)
    assert e.value.step == 1
    assert e.value.node == "ntp"


def test_trainer_rejects_sequences_beyond_context_window(record_factory):
    train, held_out, vocab, _ = _setup(record_factory)
    small = TimelineGPT.from_config(ModelConfig(vocab_size=len(vocab), embed_dim=6, n_layers=1, n_heads=2,
                                                context_window=4), seed=0)
    with pytest.raises(ValueError):
        Trainer(small, vocab, _config()).train(train, held_out)


@pytest.mark.slow
def test_overfits_tiny_corpus(record_factory):
    """Tests a 2-layer model memorizes 32 patients to a next-token loss below 0.1 within 2000 steps"""
    rng = np.random.default_rng(0)
    sequences = [encode_patient(record_factory(rng, f"p{i}", max_visits=3, n_concepts=20)) for i in range(32)]
    vocab = build_vocabulary(sequences)
    model = TimelineGPT.from_config(ModelConfig(vocab_size=len(vocab), embed_dim=96, n_layers=2, n_heads=4,
                                                context_window=128, dropout_rate=0.0), seed=0)
    cfg = TrainConfig(learning_rate=3e-3, weight_decay=0.0, warmup_steps=50, max_epochs=100000,
                      tokens_per_batch=128, checkpoint_every_steps=100000, early_stop_patience=100000,
                      min_seq_tokens=1, max_steps=2000, eval_every_steps=100)
    trainer = Trainer(model, vocab, cfg)
    trainer.train(sequences, sequences)
    assert trainer.evaluate(trainer.batches(sequences))["ntp"] < 0.1
