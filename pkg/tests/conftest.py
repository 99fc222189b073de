from pathlib import Path

import numpy as np
import pytest

from pcekit.data import load_dataset_dir, stratified_split
from pcekit.models import ModelConfig
from pcekit.synth import GeneratorConfig, StoreFeatureProvider, generate_features, synthesize

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

# Small corpus used by most model and training tests.
SMALL_GEN = GeneratorConfig(n_participants=12, n_stimuli=20, n_samples=120, seed=3,
                            feature_dim_text=24, feature_dim_image=40)
SMALL_MODEL = ModelConfig(n_heads=2, n_layers=2, ff_dim=16, emb_dim=4, model_dim=8,
                          text_dim=24, image_dim=40, lstm_hidden=6)


@pytest.fixture(scope="session")
def ewcx():
    return load_dataset_dir(FIXTURES / "ewcx")


@pytest.fixture(scope="session")
def small_corpus():
    return synthesize(SMALL_GEN)


@pytest.fixture(scope="session")
def small_ds(small_corpus):
    return small_corpus.dataset


@pytest.fixture(scope="session")
def small_provider(small_corpus):
    return StoreFeatureProvider(generate_features(small_corpus.config, small_corpus.dataset))


@pytest.fixture(scope="session")
def small_splits(small_ds):
    return stratified_split(small_ds, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
