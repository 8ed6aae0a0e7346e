"""
Shared fixtures: the enumerable oracle setting (|V| = 5, max_len = 4),
hand-written scorers with known ratios, and pipeline configs.
"""

from typing import Dict

import pytest

from mctailor.config import load_config, reset_config
from mctailor.core import lm
from mctailor.core.corpus import corpus_from_lines
from mctailor.core.fixtures import oracle_corpora, write_fixture
from mctailor.core.oracle import with_oracle_duals
from mctailor.core.ratio import EstimatorStack, StackLayer
from mctailor.core.tailor import TailoredDistribution
from mctailor.schemas.corpus import Vocab

from .helpers import MAX_LEN, LengthScorer, RuleScorer


@pytest.fixture(autouse=True)
def clean_config():
    reset_config()
    yield
    reset_config()


@pytest.fixture(scope="session")
def oracle_lines() -> Dict[str, list]:
    return oracle_corpora()


@pytest.fixture(scope="session")
def vocab() -> Vocab:
    return Vocab.from_words(["a", "b", "c"])


@pytest.fixture(scope="session")
def general(oracle_lines, vocab):
    return corpus_from_lines(oracle_lines["general"], vocab, MAX_LEN)


@pytest.fixture(scope="session")
def domain(oracle_lines, vocab):
    return corpus_from_lines(oracle_lines["domain"], vocab, MAX_LEN)


@pytest.fixture(scope="session")
def base_model(general, vocab):
    return lm.train(general, vocab, order=2, alpha=0.1)


@pytest.fixture(scope="session")
def model(base_model, domain):
    return lm.finetune(base_model, domain, 0.5)


@pytest.fixture
def rule_stack() -> EstimatorStack:
    return EstimatorStack([StackLayer(RuleScorer())])


@pytest.fixture
def two_layer_stack() -> EstimatorStack:
    return EstimatorStack([StackLayer(RuleScorer()), StackLayer(LengthScorer())])


@pytest.fixture
def tailored(model, rule_stack) -> TailoredDistribution:
    return TailoredDistribution(model, rule_stack, MAX_LEN)


@pytest.fixture
def oracle_tailored(model, two_layer_stack) -> TailoredDistribution:
    """Two-layer target whose prefix ratios are the exact continuation minima."""
    return TailoredDistribution(model, with_oracle_duals(two_layer_stack, model, MAX_LEN), MAX_LEN)


@pytest.fixture
def fixture_dir(tmp_path):
    write_fixture("oracle", str(tmp_path / "fixture"))
    return tmp_path / "fixture"


@pytest.fixture
def small_settings(fixture_dir, tmp_path) -> Dict[str, str]:
    """Fast oracle pipeline settings (one short-trained layer)."""
    return {
        "general_corpus": str(fixture_dir / "general.txt"),
        "domain_corpus": str(fixture_dir / "domain.txt"),
        "out_dir": str(tmp_path / "run"),
        "max_len": "4",
        "order": "2",
        "n_layers": "1",
        "max_epochs": "2",
        "n_samples": "200",
        "n_is": "1000",
        "verify_samples": "20000",
        "verify_tv_threshold": "0.05",
        "verify_p_threshold": "0.000001",
    }


@pytest.fixture
def small_config(small_settings):
    return load_config(overrides=small_settings, environ={})
