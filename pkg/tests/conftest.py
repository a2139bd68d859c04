import numpy as np
import pytest
from hypothesis import settings

from modabs.loss import build_targets, summarization_loss
from modabs.model import ModelConfig, forward, init_params, pad_sequences

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def tiny_config(**overrides) -> ModelConfig:
    # D=18 rather than 16 so that D is divisible by N=3
    base = dict(vocab_size=32, d_model=18, max_aspects=3, num_encoder_layers=2,
                num_decoder_layers=2, num_heads=2, d_ff=24, max_source_len=16,
                max_summary_len=8)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture
def tiny_params(tiny):
    return init_params(tiny, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_corpus(seed=3, num_train=12, num_valid=4, num_test=4):
    from modabs.data import CorpusSpec, generate_corpus

    return generate_corpus(CorpusSpec(num_train=num_train, num_valid=num_valid, num_test=num_test,
                                      vocab_size=64, num_topics=6, max_aspects=3, seed=seed))


def small_model(vocab_size, **overrides):
    base = dict(vocab_size=vocab_size, d_model=18, max_aspects=3, num_heads=2, d_ff=32,
                max_source_len=64, max_summary_len=8)
    base.update(overrides)
    return ModelConfig(**base)


def reference_ce_loop(samples, mc, seed, steps, lr, batch_size, kind, clip=1.0):
    """Summarization-only training written without the package's loop or optimizer."""
    params = init_params(mc, seed)
    order = np.random.default_rng(seed).permutation(len(samples))
    m = {k: np.zeros_like(p.data) for k, p in params.items()}
    v = {k: np.zeros_like(p.data) for k, p in params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, steps + 1):
        chunk = [samples[i] for i in order[(t - 1) * batch_size: t * batch_size]]
        labels, inputs = build_targets([s.summaries for s in chunk], mc)
        src = pad_sequences([s.source[: mc.max_source_len] for s in chunk], mc.pad_id)
        for p in params.values():
            p.grad = None
        summarization_loss(forward(src, inputs, params, mc).token_logits, labels, mc.pad_id).backward()
        grads = {k: p.grad if p.grad is not None else np.zeros_like(p.data) for k, p in params.items()}
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        scale = min(1.0, clip / norm) if norm > 0 else 1.0
        for k, p in params.items():
            g = grads[k] * scale
            if kind == "sgd":
                p.data = p.data - lr * g
                continue
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            p.data = p.data - lr * (m[k] / (1 - b1 ** t)) / (np.sqrt(v[k] / (1 - b2 ** t)) + eps)
    return params


# one line per acceptance criterion, echoed at the end of every session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
