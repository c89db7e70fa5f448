import numpy as np
import pytest

from timelinegpt.codec import CodecConfig, build_vocabulary, tables_from_records
from timelinegpt.evaluation import prevalence_report
from timelinegpt.generation import (DemographicPromptSampler, SamplingConfig, convert_to_tables, generate_pool,
                                    summary_stats)
from timelinegpt.nn import ModelConfig, TimelineGPT
from timelinegpt.training import TrainConfig, Trainer, prepare_corpus


@pytest.mark.slow
def test_train_generate_convert_and_report(record_factory):
    """Tests the whole workflow on 500 patients: most generated sequences decode and both reports are filled"""
    rng = np.random.default_rng(0)
    records = [record_factory(rng, f"p{i}", max_visits=6, n_concepts=30) for i in range(500)]
    split = prepare_corpus(records, CodecConfig(), min_seq_tokens=5, context_window=256, eval_fraction=0.1, seed=0)
    vocab = build_vocabulary(split.train)
    model = TimelineGPT.from_config(ModelConfig(vocab_size=len(vocab), embed_dim=64, n_layers=2, n_heads=4,
                                                context_window=256, dropout_rate=0.0), seed=0)
    cfg = TrainConfig(learning_rate=3e-3, warmup_steps=50, max_epochs=30, tokens_per_batch=2048,
                      checkpoint_every_steps=100000, early_stop_patience=3, min_seq_tokens=5, seed=0)
    Trainer(model, vocab, cfg).train(split.train, split.eval)

    experts = [(SamplingConfig(top_p=0.95, max_tokens=256, min_tokens=0, seed=1), 50),
               (SamplingConfig(top_k=20, max_tokens=256, min_tokens=0, seed=2), 50)]
    corpus = generate_pool(model, vocab, experts, DemographicPromptSampler.from_sequences(split.train), threads=2)
    assert len(corpus) == 100

    synthetic, report = convert_to_tables(corpus.sequences)
    assert report.attempted == 100
    assert report.succeeded >= 90
    assert sum(report.fractions().values()) == pytest.approx(1.0)

    assert summary_stats(synthetic).n_persons == report.succeeded
    prevalence = prevalence_report(tables_from_records(records), synthetic, populations=("full",))
    assert len(prevalence) > 0
    assert prevalence[["real_prevalence", "synthetic_prevalence"]].to_numpy().max() <= 1.0
