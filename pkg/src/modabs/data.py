"""Corpus handling: vocabulary and tokenizer, a synthetic disordered
multi-aspect corpus generator, JSONL ingestion, and length/aspect filtering."""

from __future__ import annotations

import json
import logging
import math
import re
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import UNK

log = logging.getLogger(__name__)

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")
SENTENCE_END = {".", "!", "?"}
FUNCTION_WORDS = ("the", "a", "of", "and", "in", "to", "with", "is")

_TOKEN_RE = re.compile(r"<\w+>|\w+|[^\w\s]")

DATASET_THRESHOLDS = {
    "d-cnndm": (11264, 76, 12),
    "d-wikihow": (2040, 20, 16),
    "oasum": (8192, 128, 8),
}


class IngestionError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


# -- tokenization ----------------------------------------------------------


def segment(text: str) -> list[str]:
    """Lowercase and split on whitespace, keeping punctuation as tokens."""
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    return " ".join(segment(text))


class Vocabulary:
    def __init__(self, tokens: Iterable[str]):
        self.tokens: list[str] = list(tokens)
        if tuple(self.tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary must start with {SPECIAL_TOKENS}")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        seen: dict[str, None] = {}
        for text in texts:
            for tok in segment(text):
                if tok not in SPECIAL_TOKENS:
                    seen.setdefault(tok)
        return cls(list(SPECIAL_TOKENS) + sorted(seen))

    def encode(self, text: str) -> list[int]:
        return [self.index.get(t, UNK) for t in segment(text)]

    def decode(self, ids: Iterable[int]) -> str:
        # a model may be sized above the vocabulary; ids past the end read as unknown
        n = len(self.tokens)
        return " ".join(self.tokens[i] if 0 <= i < n else self.tokens[UNK] for i in ids)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return vocab.encode(text)


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    return vocab.decode(ids)


# -- samples ---------------------------------------------------------------


@dataclass
class Aspect:
    name: str
    summary: list[int]


@dataclass
class Sample:
    id: str
    source_sentences: list[list[int]]
    aspects: list[Aspect]

    @property
    def aspect_count(self) -> int:
        return len(self.aspects)

    @property
    def source(self) -> list[int]:
        return [t for s in self.source_sentences for t in s]

    @property
    def summaries(self) -> list[list[int]]:
        return [a.summary for a in self.aspects]

    def to_record(self, vocab: Vocabulary) -> dict:
        return {
            "id": self.id,
            "article": vocab.decode(self.source),
            "aspects": [{"name": a.name, "summary": vocab.decode(a.summary)} for a in self.aspects],
        }


def split_sentences(ids: list[int], vocab: Vocabulary) -> list[list[int]]:
    ends = {vocab.index[t] for t in SENTENCE_END if t in vocab.index}
    sentences, current = [], []
    for t in ids:
        current.append(t)
        if t in ends:
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


def sample_from_record(record, vocab: Vocabulary) -> Sample:
    if not isinstance(record, dict):
        raise ValueError("record is not a JSON object")
    for key in ("id", "article", "aspects"):
        if key not in record:
            raise ValueError(f'missing field "{key}"')
    if not isinstance(record["aspects"], list):
        raise ValueError('"aspects" must be a list')
    aspects = []
    for i, a in enumerate(record["aspects"]):
        if not isinstance(a, dict) or "summary" not in a:
            raise ValueError(f'aspect {i} lacks a "summary"')
        summary = vocab.encode(str(a["summary"]))
        if not summary:
            raise ValueError(f"aspect {i} has an empty summary")
        aspects.append(Aspect(str(a.get("name", f"aspect-{i}")), summary))
    sentences = split_sentences(vocab.encode(str(record["article"])), vocab)
    return Sample(str(record["id"]), sentences, aspects)


def load_corpus(path, vocab: Vocabulary) -> list[Sample]:
    """Read a JSONL split: one ``{id, article, aspects: [{name, summary}]}`` per line."""
    path = Path(path)
    samples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                samples.append(sample_from_record(json.loads(line), vocab))
            except (json.JSONDecodeError, ValueError) as exc:
                raise IngestionError(path, lineno, str(exc)) from exc
    if not samples:
        warnings.warn(f"{path} contains no samples")
    return samples


def save_corpus(samples: Iterable[Sample], path, vocab: Vocabulary) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record(vocab), ensure_ascii=False, sort_keys=True) + "\n")


# -- synthetic corpus ------------------------------------------------------


@dataclass
class CorpusSpec:
    num_train: int = 500
    num_valid: int = 100
    num_test: int = 100
    vocab_size: int = 120
    num_topics: int = 8
    max_aspects: int = 4
    aspect_count_distribution: list[float] | None = None  # over 2..max_aspects
    sentences_per_aspect: tuple[int, int] = (2, 3)
    summary_sentences: int = 1
    aspect_vocabulary_overlap: float = 0.0
    shared_words: int = 6
    shuffle_sentences: bool = True
    seed: int = 0

    def __post_init__(self):
        self.sentences_per_aspect = tuple(self.sentences_per_aspect)
        if self.aspect_count_distribution is None:
            k = self.max_aspects - 1
            self.aspect_count_distribution = [1.0 / k] * k
        dist = self.aspect_count_distribution
        if self.max_aspects < 2:
            raise ValueError("max_aspects must be at least 2")
        if len(dist) != self.max_aspects - 1:
            raise ValueError("aspect_count_distribution must cover counts 2..max_aspects")
        if any(x < 0 for x in dist) or abs(sum(dist) - 1.0) > 1e-9:
            raise ValueError("aspect_count_distribution must be a probability vector")
        lo, hi = self.sentences_per_aspect
        if not 1 <= lo <= hi:
            raise ValueError("sentences_per_aspect must be a non-empty range starting at 1 or more")
        if not 1 <= self.summary_sentences <= lo:
            raise ValueError("summary_sentences must lie in [1, min sentences_per_aspect]")
        if not 0.0 <= self.aspect_vocabulary_overlap < 1.0:
            raise ValueError("aspect_vocabulary_overlap must lie in [0, 1)")
        if self.num_topics < self.max_aspects:
            raise ValueError("num_topics must be at least max_aspects")
        if min(self.num_train, self.num_valid, self.num_test) < 0:
            raise ValueError("split sizes must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sentences_per_aspect"] = list(self.sentences_per_aspect)
        return d


_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


def _pseudo_words(count: int, taken: set[str]) -> list[str]:
    words = []
    for a in _ONSETS:
        for v in _VOWELS:
            for b in _ONSETS:
                for w in _VOWELS:
                    word = a + v + b + w
                    if word not in taken:
                        words.append(word)
                        if len(words) == count:
                            return words
    raise ValueError("cannot generate that many pseudo-words")


@dataclass
class _Lexicon:
    vocab: Vocabulary
    heads: list[str]
    topic_words: list[list[str]]
    shared: list[str]


def _lexicon(spec: CorpusSpec) -> _Lexicon:
    fixed = len(SPECIAL_TOKENS) + 1 + len(FUNCTION_WORDS)
    budget = spec.vocab_size - fixed - spec.num_topics
    shared = spec.shared_words if spec.aspect_vocabulary_overlap > 0 else 0
    per_topic = (budget - shared) // spec.num_topics
    if per_topic < 3:
        raise ValueError(
            f"vocab_size {spec.vocab_size} leaves {per_topic} words per topic; need at least 3"
        )
    words = _pseudo_words(spec.num_topics * (per_topic + 1) + shared, set(FUNCTION_WORDS))
    heads = words[: spec.num_topics]
    rest = words[spec.num_topics:]
    topic_words = [rest[i * per_topic:(i + 1) * per_topic] for i in range(spec.num_topics)]
    shared_block = rest[spec.num_topics * per_topic:][:shared]
    tokens = list(SPECIAL_TOKENS) + ["."] + list(FUNCTION_WORDS) + heads
    tokens += [w for block in topic_words for w in block] + shared_block
    return _Lexicon(Vocabulary(tokens), heads, topic_words, shared_block)


_BODY_TEMPLATES = (
    ("the", "W", "W", "of", "W", "."),
    ("a", "W", "is", "W", "with", "W", "."),
    ("W", "and", "W", "in", "the", "W", "."),
    ("the", "W", "to", "W", "W", "."),
)
_LEAD_TEMPLATES = (
    ("H", "W", "of", "W", "."),
    ("H", "is", "W", "W", "."),
    ("H", "W", "and", "W", "."),
)


def _sentence(template, head, block, shared, overlap, rng) -> list[str]:
    out = []
    for slot in template:
        if slot == "H":
            out.append(head)
        elif slot == "W":
            pool = shared if shared and rng.random() < overlap else block
            out.append(pool[int(rng.integers(len(pool)))])
        else:
            out.append(slot)
    return out


@dataclass
class Corpus:
    train: list[Sample]
    valid: list[Sample]
    test: list[Sample]
    vocab: Vocabulary
    spec: CorpusSpec | None = None

    def splits(self) -> dict[str, list[Sample]]:
        return {"train": self.train, "valid": self.valid, "test": self.test}


def generate_corpus(spec: CorpusSpec) -> Corpus:
    """Build train/valid/test splits of disordered multi-aspect samples.

    Each sample draws ``k`` distinct topics; every topic contributes a lead
    sentence (opening with the topic's head word) plus body sentences from its
    own word block. The lead sentence(s) form that aspect's reference summary.
    Aspects are listed in topic order and, when ``shuffle_sentences`` is set,
    the article's sentences are globally shuffled.
    """
    lex = _lexicon(spec)
    rng = np.random.default_rng(spec.seed)
    # a separate stream, so toggling the shuffle leaves sample content unchanged
    shuffle_rng = np.random.default_rng([spec.seed, 1])
    counts = np.arange(2, spec.max_aspects + 1)
    lo, hi = spec.sentences_per_aspect
    ids = lex.vocab.index

    def make(split: str, i: int) -> Sample:
        k = int(rng.choice(counts, p=spec.aspect_count_distribution))
        topics = sorted(rng.choice(spec.num_topics, size=k, replace=False).tolist())
        sentences, aspects = [], []
        for t in topics:
            n_sent = int(rng.integers(lo, hi + 1))
            block = [
                _sentence(
                    _LEAD_TEMPLATES[int(rng.integers(len(_LEAD_TEMPLATES)))]
                    if j < spec.summary_sentences
                    else _BODY_TEMPLATES[int(rng.integers(len(_BODY_TEMPLATES)))],
                    lex.heads[t], lex.topic_words[t], lex.shared,
                    spec.aspect_vocabulary_overlap, rng,
                )
                for j in range(n_sent)
            ]
            block_ids = [[ids[w] for w in s] for s in block]
            summary = [t for s in block_ids[: spec.summary_sentences] for t in s]
            aspects.append(Aspect(lex.heads[t], summary))
            sentences.extend(block_ids)
        if spec.shuffle_sentences:
            order = shuffle_rng.permutation(len(sentences))
            sentences = [sentences[j] for j in order]
        return Sample(f"{split}-{i:05d}", sentences, aspects)

    splits = {
        name: [make(name, i) for i in range(n)]
        for name, n in (("train", spec.num_train), ("valid", spec.num_valid), ("test", spec.num_test))
    }
    return Corpus(splits["train"], splits["valid"], splits["test"], lex.vocab, spec)


# -- preprocessing ---------------------------------------------------------


@dataclass(frozen=True)
class Thresholds:
    max_article_tokens: int
    max_summary_tokens: int
    max_aspects: int

    def __post_init__(self):
        if min(self.max_article_tokens, self.max_summary_tokens, self.max_aspects) < 1:
            raise ValueError("thresholds must be positive")

    @classmethod
    def preset(cls, dataset: str) -> "Thresholds":
        return cls(*DATASET_THRESHOLDS[dataset.lower()])


@dataclass(frozen=True)
class Rejection:
    sample_id: str
    reason: str


def preprocess(sample: Sample, thresholds: Thresholds) -> Sample | Rejection:
    """Truncate article and summaries; reject out-of-range aspect counts."""
    if sample.aspect_count < 2:
        return Rejection(sample.id, "single-aspect")
    if sample.aspect_count > thresholds.max_aspects:
        return Rejection(sample.id, "too-many-aspects")
    aspects = [Aspect(a.name, list(a.summary[: thresholds.max_summary_tokens]))
               for a in sample.aspects]
    return Sample(sample.id, truncate_article(sample.source_sentences, thresholds.max_article_tokens),
                  aspects)


def truncate_article(sentences: list[list[int]], max_tokens: int) -> list[list[int]]:
    budget, out = max_tokens, []
    for s in sentences:
        if budget <= 0:
            break
        out.append(list(s[:budget]))
        budget -= len(out[-1])
    return out


def preprocess_split(samples: Iterable[Sample], thresholds: Thresholds
                     ) -> tuple[list[Sample], list[Rejection]]:
    kept, rejected = [], []
    for s in samples:
        r = preprocess(s, thresholds)
        (rejected if isinstance(r, Rejection) else kept).append(r)
    if rejected:
        log.info("rejected %d of %d samples", len(rejected), len(kept) + len(rejected))
    return kept, rejected


def _mean_plus_two_std(values: list[int]) -> int:
    arr = np.asarray(values, dtype=np.float64)
    # population std; the guard keeps exact integers like 25.0 from rounding up
    return int(math.ceil(arr.mean() + 2.0 * arr.std() - 1e-9))


def derive_thresholds(samples: list[Sample], max_aspects_cap: int) -> Thresholds:
    """``ceil(mean + 2 * std)`` for article length, summary length and aspect count."""
    if not samples:
        raise ValueError("cannot derive thresholds from an empty corpus")
    article = _mean_plus_two_std([len(s.source) for s in samples])
    summary = _mean_plus_two_std([len(a.summary) for s in samples for a in s.aspects])
    aspects = _mean_plus_two_std([s.aspect_count for s in samples])
    return Thresholds(max(article, 1), max(summary, 1), max(1, min(max_aspects_cap, aspects)))
