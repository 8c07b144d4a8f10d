"""Shared fixtures: small deterministic corpora and a tiny encoder config."""

from __future__ import annotations

import numpy as np
import pytest

from merl import corpus
from merl.encoders import EncoderConfig


TINY_ENCODER = dict(text_embed_dim=64, shared_dim=32, projector_hidden=48)


@pytest.fixture
def tiny_encoder_config() -> EncoderConfig:
    return EncoderConfig(**TINY_ENCODER)


def tiny_corpus_spec(**overrides) -> corpus.SyntheticCorpusSpec:
    params = dict(
        num_pairs=24,
        num_classes=3,
        num_leads=4,
        num_samples=64,
        sampling_rate_hz=8,
        noise_std=0.2,
        seed=5,
    )
    params.update(overrides)
    return corpus.SyntheticCorpusSpec(**params)


@pytest.fixture
def tiny_corpus():
    manifest, pairs = corpus.generate_synthetic_corpus(tiny_corpus_spec())
    return manifest, pairs


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240911)
