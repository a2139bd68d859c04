import pytest

from modabs.config import SEED_ENV, load_config, parse_config
from modabs.model import ConfigError


@pytest.fixture(autouse=True)
def no_seed_override(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


def test_empty_object_gives_defaults():
    cfg = parse_config({})
    assert cfg.thresholds is None and cfg.train.seed == 42
    assert cfg.train_config().weights == cfg.loss


def test_sections_are_built():
    cfg = parse_config({"train": {"learning_rate": 1, "optimizer": "sgd"},
                        "loss": {"lambda2": 0.5, "limit_kind": "tanh"},
                        "eval": {"count_rule": "nonempty"}})
    assert cfg.train.learning_rate == 1.0 and isinstance(cfg.train.learning_rate, float)
    assert cfg.loss.lambda2 == 0.5 and cfg.eval.count_rule == "nonempty"


@pytest.mark.parametrize("raw, path", [
    ({"bogus": 1}, "bogus"),
    ({"corpus": {"num_trian": 3}}, "corpus.num_trian"),
    ({"model": {"layers": 3}}, "model.layers"),
    ({"train": {"batch_size": 2.5}}, "train.batch_size"),
    ({"train": {"batch_size": True}}, "train.batch_size"),
    ({"loss": {"lambda1": "one"}}, "loss.lambda1"),
    ({"model": {"d_model": "big"}}, "model.d_model"),
    ({"data_dir": 3}, "data_dir"),
    ({"eval": []}, "eval"),
])
def test_errors_name_the_offending_key(raw, path):
    with pytest.raises(ConfigError, match=path.replace(".", r"\.")):
        parse_config(raw)


def test_invalid_values_are_rejected_with_section():
    with pytest.raises(ConfigError, match="eval"):
        parse_config({"eval": {"count_rule": "sometimes"}})
    with pytest.raises(ConfigError, match="train"):
        parse_config({"train": {"max_epochs": 2, "early_stop_patience": 2}})


def test_cross_section_checks():
    with pytest.raises(ConfigError, match="corpus.max_aspects"):
        parse_config({"corpus": {"max_aspects": 5}, "model": {"max_aspects": 4}})
    with pytest.raises(ConfigError, match="EOS"):
        parse_config({"thresholds": {"max_article_tokens": 10, "max_summary_tokens": 8,
                                     "max_aspects": 3},
                      "model": {"max_summary_len": 8}})


def test_model_config_vocab_handling():
    cfg = parse_config({"model": {"d_model": 16, "max_aspects": 4, "num_heads": 2}})
    assert cfg.model_config(50).vocab_size == 50
    small = parse_config({"model": {"vocab_size": 10}})
    with pytest.raises(ConfigError, match="smaller than the vocabulary"):
        small.model_config(50)
    with pytest.raises(ConfigError, match="model:"):
        parse_config({"model": {"d_model": 18, "max_aspects": 4}}).model_config(50)


def test_seed_override(monkeypatch):
    monkeypatch.setenv(SEED_ENV, "7")
    assert parse_config({"train": {"seed": 1}}).train.seed == 7
    monkeypatch.setenv(SEED_ENV, "x")
    with pytest.raises(ConfigError, match=SEED_ENV):
        parse_config({})


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
