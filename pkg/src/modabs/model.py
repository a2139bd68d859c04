"""Miniature encoder-decoder transformer with a multi-aspect decoder head.

The decoder emits one ``B x L x D`` embedding which is viewed as
``B x L x N x D_n``: each of the ``N`` aspect slices is decoded into its own
summary by a single shared LM head, and the first position across all slices
feeds the aspect-count classifier.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import Tensor

PAD, BOS, EOS, UNK = 0, 1, 2, 3
NEG_INF = -1e9


class ConfigError(ValueError):
    """Invalid or mutually inconsistent configuration."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 32
    max_aspects: int = 4
    num_encoder_layers: int = 1
    num_decoder_layers: int = 1
    num_heads: int = 2
    d_ff: int = 64
    max_source_len: int = 128
    max_summary_len: int = 10
    pad_id: int = PAD
    bos_id: int = BOS
    eos_id: int = EOS
    unk_id: int = UNK
    init_scale: float = 1.0

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "max_aspects", "num_encoder_layers",
                     "num_decoder_layers", "num_heads", "d_ff", "max_source_len",
                     "max_summary_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.d_model % self.max_aspects:
            raise ConfigError(
                f"d_model {self.d_model} is not divisible by max_aspects {self.max_aspects}"
            )
        if self.d_model % self.num_heads:
            raise ConfigError(f"num_heads {self.num_heads} does not divide d_model {self.d_model}")
        specials = (self.pad_id, self.bos_id, self.eos_id, self.unk_id)
        if len(set(specials)) != 4 or any(not 0 <= s < self.vocab_size for s in specials):
            raise ConfigError("special token ids must be distinct and below vocab_size")

    @property
    def d_aspect(self) -> int:
        return self.d_model // self.max_aspects

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AspectDecoding:
    embeddings: Tensor  # B x L x D
    aspect_embeddings: Tensor  # B x L x N x D_n
    token_logits: Tensor  # B x N x L x V
    count_logits: Tensor  # B x N; class k means k + 1 aspects


Params = dict[str, Tensor]


def init_params(config: ModelConfig, seed: int = 0) -> Params:
    rng = np.random.default_rng(seed)
    D, V, N, F = config.d_model, config.vocab_size, config.max_aspects, config.d_ff
    s = config.init_scale
    params: Params = {}

    def dense(name, fan_in, fan_out, bias=True):
        params[name + ".w"] = rng.normal(0.0, s / math.sqrt(fan_in), (fan_in, fan_out))
        if bias:
            params[name + ".b"] = np.zeros(fan_out)

    def norm(name):
        params[name + ".g"] = np.ones(D)
        params[name + ".b"] = np.zeros(D)

    def attn(name):
        # a key bias shifts every score of a query row equally, so it has no effect
        for part in ("q", "k", "v", "o"):
            dense(f"{name}.{part}", D, D, bias=part != "k")

    def ffn(name):
        dense(name + ".in", D, F)
        dense(name + ".out", F, D)

    params["tok_emb"] = rng.normal(0.0, s * 0.5, (V, D))
    for i in range(config.num_encoder_layers):
        norm(f"enc.{i}.ln1")
        attn(f"enc.{i}.attn")
        norm(f"enc.{i}.ln2")
        ffn(f"enc.{i}.ff")
    norm("enc.ln")
    for i in range(config.num_decoder_layers):
        norm(f"dec.{i}.ln1")
        attn(f"dec.{i}.self")
        norm(f"dec.{i}.ln2")
        attn(f"dec.{i}.cross")
        norm(f"dec.{i}.ln3")
        ffn(f"dec.{i}.ff")
    norm("dec.ln")
    params["lm_head"] = rng.normal(0.0, s / math.sqrt(config.d_aspect), (config.d_aspect, V))
    params["count_head"] = rng.normal(0.0, s / math.sqrt(D), (D, N))
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def sinusoidal_table(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rates = np.exp(-math.log(10000.0) * (2 * (np.arange(dim) // 2)) / dim)
    angles = pos * rates[None, :]
    table = np.where(np.arange(dim) % 2 == 0, np.sin(angles), np.cos(angles))
    return table


# -- building blocks -------------------------------------------------------


def _linear(x: Tensor, params: Params, name: str) -> Tensor:
    y = x @ params[name + ".w"]
    bias = params.get(name + ".b")
    return y if bias is None else y + bias


def _norm(x: Tensor, params: Params, name: str) -> Tensor:
    return nx.layer_norm(x, params[name + ".g"], params[name + ".b"])


def attention(query: Tensor, memory: Tensor, params: Params, name: str,
              num_heads: int, mask: np.ndarray | None) -> Tensor:
    """Multi-head scaled dot-product attention; ``mask`` is True where blocked."""
    B, T, D = query.shape
    S = memory.shape[1]
    dh = D // num_heads

    def heads(x, n):
        return x.reshape(B, n, num_heads, dh).transpose(0, 2, 1, 3)

    q = heads(_linear(query, params, name + ".q"), T)
    k = heads(_linear(memory, params, name + ".k"), S)
    v = heads(_linear(memory, params, name + ".v"), S)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    if mask is not None:
        scores = nx.masked_fill(scores, mask, NEG_INF)
    weights = nx.softmax(scores, axis=-1)
    out = (weights @ v).transpose(0, 2, 1, 3).reshape(B, T, D)
    return _linear(out, params, name + ".o")


def _feed_forward(x: Tensor, params: Params, name: str) -> Tensor:
    return _linear(nx.gelu(_linear(x, params, name + ".in")), params, name + ".out")


def _as_batch(tokens) -> tuple[np.ndarray, bool]:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


# -- encoder / decoder -----------------------------------------------------


def encode(source_tokens, params: Params, config: ModelConfig) -> Tensor:
    """Encode ``(B, S)`` (or ``(S,)``) token ids into ``(B, S, D)`` states."""
    src, single = _as_batch(source_tokens)
    _check_ids(src, config)
    if src.shape[1] > config.max_source_len:
        raise ValueError(
            f"source length {src.shape[1]} exceeds max_source_len {config.max_source_len}"
        )
    key_mask = (src == config.pad_id)[:, None, None, :]
    x = params["tok_emb"][src] + sinusoidal_table(src.shape[1], config.d_model)
    for i in range(config.num_encoder_layers):
        h = _norm(x, params, f"enc.{i}.ln1")
        x = x + attention(h, h, params, f"enc.{i}.attn", config.num_heads, key_mask)
        x = x + _feed_forward(_norm(x, params, f"enc.{i}.ln2"), params, f"enc.{i}.ff")
        nx.check_finite(x, f"encoder layer {i}")
    out = _norm(x, params, "enc.ln")
    return out[0] if single else out


def aspect_input_embeddings(decoder_inputs: np.ndarray, params: Params,
                            config: ModelConfig) -> Tensor:
    """Embed per-aspect decoder inputs ``(B, N, L)`` into ``(B, L, D)``.

    Slice ``n`` of the model dimension at position ``l`` is taken from the
    embedding of aspect ``n``'s token at ``l``, mirroring the output reshape.
    """
    B, N, L = decoder_inputs.shape
    table = params["tok_emb"].reshape(config.vocab_size, N, config.d_aspect)
    index = (decoder_inputs.transpose(0, 2, 1), np.arange(N)[None, None, :])
    return table[index].reshape(B, L, config.d_model)


def count_logits_from(aspect_embeddings: Tensor, params: Params) -> Tensor:
    """Count-classifier logits from the first position of every aspect slice."""
    B, _, N, Dn = aspect_embeddings.shape
    first = aspect_embeddings[:, 0, :, :].reshape(B, N * Dn)
    return first @ params["count_head"]


def decode(decoder_inputs, encoder_states: Tensor, source_tokens, params: Params,
           config: ModelConfig) -> AspectDecoding:
    """Teacher-forced decoding of all aspect slices.

    ``decoder_inputs`` has shape ``(B, N, L)``: position ``l`` holds the input
    token of every aspect at step ``l`` (BOS at step 0).
    """
    dec = np.asarray(decoder_inputs, dtype=np.int64)
    if dec.ndim == 2:
        dec = dec[None]
    src, _ = _as_batch(source_tokens)
    if encoder_states.ndim == 2:
        encoder_states = encoder_states.reshape(1, *encoder_states.shape)
    B, N, L = dec.shape
    if N != config.max_aspects:
        raise ValueError(f"decoder inputs carry {N} aspects, config expects {config.max_aspects}")
    if L > config.max_summary_len:
        raise ValueError(f"decoder length {L} exceeds max_summary_len {config.max_summary_len}")
    _check_ids(dec, config)
    causal = np.triu(np.ones((L, L), dtype=bool), k=1)[None, None]
    memory_mask = (src == config.pad_id)[:, None, None, :]
    x = aspect_input_embeddings(dec, params, config) + sinusoidal_table(L, config.d_model)
    for i in range(config.num_decoder_layers):
        h = _norm(x, params, f"dec.{i}.ln1")
        x = x + attention(h, h, params, f"dec.{i}.self", config.num_heads, causal)
        h = _norm(x, params, f"dec.{i}.ln2")
        x = x + attention(h, encoder_states, params, f"dec.{i}.cross", config.num_heads,
                          memory_mask)
        x = x + _feed_forward(_norm(x, params, f"dec.{i}.ln3"), params, f"dec.{i}.ff")
        nx.check_finite(x, f"decoder layer {i}")
    E = _norm(x, params, "dec.ln")
    E4 = E.reshape(B, L, N, config.d_aspect)
    token_logits = (E4 @ params["lm_head"]).transpose(0, 2, 1, 3)
    nx.check_finite(token_logits, "lm head")
    return AspectDecoding(E, E4, token_logits, count_logits_from(E4, params))


def forward(source_tokens, decoder_inputs, params: Params, config: ModelConfig) -> AspectDecoding:
    src, _ = _as_batch(source_tokens)
    return decode(decoder_inputs, encode(src, params, config), src, params, config)


def predict_aspect_count(aspect_embeddings: Tensor, params: Params) -> np.ndarray:
    """Probability over ``{1..N}`` aspects, shape ``(B, N)``."""
    return nx.softmax(count_logits_from(aspect_embeddings, params), axis=-1).data


def _check_ids(ids: np.ndarray, config: ModelConfig) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ValueError("token id outside vocabulary")


# -- inference -------------------------------------------------------------

COUNT_RULES = ("head", "nonempty")


@dataclass
class Generation:
    summaries: list[list[int]]  # reported aspects, in slice order
    slices: list[list[int]]  # every slice's decoded tokens (empty when EOS-first)
    predicted_count: int
    count_probs: list[float] = field(default_factory=list)


def _inference_params(params: Params) -> Params:
    return {k: Tensor(v.data) for k, v in params.items()}


def generate(source_tokens, params: Params, config: ModelConfig, max_len: int | None = None,
             count_rule: str = "head") -> list[Generation] | Generation:
    """Greedy lockstep decoding of all aspect slices from a shared BOS.

    ``count_rule="head"`` reports the first ``predicted_count`` non-empty
    slices; ``"nonempty"`` reports every non-empty slice and ignores the head.
    Accepts one sequence or a list/array of sequences (padded internally).
    """
    if count_rule not in COUNT_RULES:
        raise ValueError(f"count_rule must be one of {COUNT_RULES}")
    single = _is_single(source_tokens)
    sources = [list(source_tokens)] if single else [list(s) for s in source_tokens]
    max_len = config.max_summary_len if max_len is None else max_len
    if not 1 <= max_len <= config.max_summary_len:
        raise ValueError(f"max_len must lie in [1, {config.max_summary_len}]")
    src = pad_sequences(sources, config.pad_id)
    frozen = _inference_params(params)
    B, N = len(sources), config.max_aspects
    enc = encode(src, frozen, config)
    dec_in = np.full((B, N, max_len), config.pad_id, dtype=np.int64)
    dec_in[:, :, 0] = config.bos_id
    out = np.full((B, N, max_len), config.pad_id, dtype=np.int64)
    done = np.zeros((B, N), dtype=bool)
    count_probs = None
    for t in range(max_len):
        step = decode(dec_in[:, :, : t + 1], enc, src, frozen, config)
        if count_probs is None:
            count_probs = nx.softmax(step.count_logits, axis=-1).data
        tok = step.token_logits.data[:, :, t, :].argmax(axis=-1)
        tok = np.where(done, config.pad_id, tok)
        out[:, :, t] = tok
        if t + 1 < max_len:
            dec_in[:, :, t + 1] = tok
        done |= tok == config.eos_id
        if done.all():
            break
    results = []
    for b in range(B):
        slices = [_until_eos(out[b, n], config) for n in range(N)]
        count = int(count_probs[b].argmax()) + 1
        nonempty = [s for s in slices if s]
        reported = nonempty[:count] if count_rule == "head" else nonempty
        results.append(Generation(reported, slices, count, count_probs[b].tolist()))
    return results[0] if single else results


def _until_eos(tokens: np.ndarray, config: ModelConfig) -> list[int]:
    seq = []
    for t in tokens.tolist():
        if t == config.eos_id or t == config.pad_id:
            break
        seq.append(t)
    return seq


def _is_single(tokens) -> bool:
    if isinstance(tokens, np.ndarray):
        return tokens.ndim == 1
    return len(tokens) == 0 or not hasattr(tokens[0], "__len__")


def pad_sequences(seqs: list[list[int]], pad_id: int, length: int | None = None) -> np.ndarray:
    length = max(1, max((len(s) for s in seqs), default=1)) if length is None else length
    out = np.full((len(seqs), length), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s[:length]
    return out
