"""Corpus ingestion, vocabulary, pretrained embeddings, batching.

Corpus formats:
  jsonl - one JSON object per line with keys sentence1 / sentence2 /
          gold_label and an optional "annotations" list of tag strings.
  tsv   - premise <tab> hypothesis <tab> label, with an optional fourth
          column of comma-separated annotation tags.

Rows whose gold label is "-" (annotators reached no consensus) are
skipped and counted. Tokenization is lowercasing plus whitespace
splitting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .recurrent import SentenceBatch

THREE_WAY = ("entailment", "contradiction", "neutral")
TWO_WAY = ("entails", "neutral")

LABEL_SETS = {"three": THREE_WAY, "two": TWO_WAY}


class CorpusError(ValueError):
    """Raised for unreadable or malformed corpus files."""


@dataclass
class NliExample:
    premise: list
    hypothesis: list
    label: str
    tags: tuple = ()


@dataclass
class NliDataset:
    examples: list
    label_set: tuple
    skipped: int = 0

    def __len__(self):
        return len(self.examples)

    def label_index(self, label: str) -> int:
        return self.label_set.index(label)


def tokenize(text: str) -> list:
    return text.lower().split()


def _parse_jsonl_row(line, lineno):
    try:
        row = json.loads(line)
    except json.JSONDecodeError as e:
        raise CorpusError(f"line {lineno}: invalid JSON ({e})") from None
    for key in ("sentence1", "sentence2", "gold_label"):
        if key not in row:
            raise CorpusError(f"line {lineno}: missing key {key!r}")
    tags = row.get("annotations", ())
    if isinstance(tags, str):
        tags = tags.split()
    return row["sentence1"], row["sentence2"], row["gold_label"], tuple(tags)


def _parse_tsv_row(line, lineno):
    fields = line.rstrip("\n").split("\t")
    if len(fields) < 3:
        raise CorpusError(f"line {lineno}: expected >= 3 tab-separated fields, got {len(fields)}")
    tags = tuple(t for t in fields[3].split(",") if t) if len(fields) > 3 else ()
    return fields[0], fields[1], fields[2], tags


def load_corpus(
    path,
    fmt: str = "jsonl",
    label_set=THREE_WAY,
    max_bad_fraction: float = 0.0,
) -> NliDataset:
    """Load an NLI corpus; aborts when bad rows exceed max_bad_fraction."""
    if fmt not in ("jsonl", "tsv"):
        raise CorpusError(f"unknown corpus format {fmt!r}")
    parse = _parse_jsonl_row if fmt == "jsonl" else _parse_tsv_row

    examples, errors, skipped, total = [], [], 0, 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            total += 1
            try:
                s1, s2, label, tags = parse(line, lineno)
                if label == "-":
                    skipped += 1
                    continue
                if label not in label_set:
                    raise CorpusError(
                        f"line {lineno}: label {label!r} not in label set {label_set}"
                    )
                premise, hypothesis = tokenize(s1), tokenize(s2)
                if not premise or not hypothesis:
                    raise CorpusError(f"line {lineno}: empty sentence after tokenization")
                examples.append(NliExample(premise, hypothesis, label, tags))
            except CorpusError as e:
                errors.append(e)

    if errors and len(errors) > max_bad_fraction * max(total, 1):
        raise CorpusError(
            f"{path}: {len(errors)}/{total} bad rows exceeds allowed fraction "
            f"{max_bad_fraction}; first error: {errors[0]}"
        )
    if not examples:
        raise CorpusError(f"{path}: no usable examples")
    return NliDataset(examples, tuple(label_set), skipped)


PAD_ID = 0
UNK_ID = 1


class Vocabulary:
    """Dense token-to-id map; id 0 is pad, id 1 is unknown."""

    def __init__(self, tokens):
        self.id_to_token = ["<pad>", "<unk>"] + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, tokens) -> list:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list:
        return [self.id_to_token[i] for i in ids]


def build_vocab(*datasets) -> Vocabulary:
    """Insertion-ordered union of tokens over all provided splits."""
    if not datasets:
        raise ValueError("build_vocab needs at least one dataset")
    seen = {}
    for ds in datasets:
        for ex in ds.examples:
            for tok in ex.premise:
                seen.setdefault(tok, None)
            for tok in ex.hypothesis:
                seen.setdefault(tok, None)
    return Vocabulary(seen.keys())


@dataclass
class EmbeddingTable:
    vectors: np.ndarray  # [V, dim]; row 0 (pad) stays zero
    coverage: float
    malformed: int = 0


class EmbeddingError(ValueError):
    pass


def load_embeddings(path, vocab: Vocabulary, dim: int = 300) -> EmbeddingTable:
    """Read text-format word vectors (token + dim floats per line).

    Unmatched vocabulary rows (including unk) stay zero. Lines with the
    wrong number of fields are skipped and counted. Keys containing
    spaces are supported: all but the last `dim` fields form the token.
    """
    vectors = np.zeros((len(vocab), dim))
    matched, malformed = 0, 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            fields = line.rstrip("\n").split(" ")
            if len(fields) < dim + 1:
                malformed += 1
                continue
            token = " ".join(fields[: len(fields) - dim])
            idx = vocab.token_to_id.get(token)
            if idx is None or idx in (PAD_ID, UNK_ID):
                continue
            try:
                vectors[idx] = [float(v) for v in fields[-dim:]]
            except ValueError:
                malformed += 1
                continue
            matched += 1
    if matched == 0:
        raise EmbeddingError(f"{path}: no vocabulary tokens matched")
    coverage = matched / max(1, len(vocab) - 2)
    return EmbeddingTable(vectors, coverage, malformed)


def random_embeddings(rng: np.random.Generator, vocab: Vocabulary, dim: int) -> EmbeddingTable:
    """Gaussian-initialized table for runs without pretrained vectors."""
    vectors = rng.normal(0.0, 0.1, size=(len(vocab), dim))
    vectors[PAD_ID] = 0.0
    return EmbeddingTable(vectors, 0.0)


def make_batch(examples, vocab: Vocabulary, label_set):
    prem = SentenceBatch.from_id_lists([vocab.encode(ex.premise) for ex in examples])
    hyp = SentenceBatch.from_id_lists([vocab.encode(ex.hypothesis) for ex in examples])
    labels = np.array([label_set.index(ex.label) for ex in examples], dtype=np.int64)
    return prem, hyp, labels


def batch_iter(
    dataset: NliDataset,
    vocab: Vocabulary,
    batch_size: int,
    shuffle: bool = False,
    rng: np.random.Generator | None = None,
):
    """Yield (premise SentenceBatch, hypothesis SentenceBatch, labels).

    Premise and hypothesis are padded independently to their own batch
    maxima; the last partial batch is kept.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not dataset.examples:
        raise ValueError("empty dataset")
    order = np.arange(len(dataset.examples))
    if shuffle:
        if rng is None:
            raise ValueError("shuffle=True requires an rng")
        rng.shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [dataset.examples[i] for i in order[start : start + batch_size]]
        yield make_batch(chunk, vocab, dataset.label_set)
