"""Seeded synthetic NLI corpus generator.

Produces a separable-by-construction corpus: the hypothesis contains a
label-specific signal token among random filler tokens, so any working
encoder can reach perfect training accuracy. Used by the smoke and
learning-capability tests and by the `synth` CLI command; no external
downloads are involved.
"""

from __future__ import annotations

import json

import numpy as np

from .data import THREE_WAY, NliDataset, NliExample

FILLERS = [f"w{i:02d}" for i in range(30)]


def generate_corpus(n: int = 200, seed: int = 0, label_set=THREE_WAY) -> NliDataset:
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n):
        label = label_set[i % len(label_set)]
        premise = list(rng.choice(FILLERS, size=rng.integers(3, 7)))
        hypothesis = list(rng.choice(FILLERS, size=rng.integers(2, 5)))
        hypothesis.insert(int(rng.integers(0, len(hypothesis) + 1)), f"sig_{label}")
        tags = ("long sentence",) if len(premise) >= 5 else ("short sentence",)
        examples.append(NliExample(premise, hypothesis, label, tags))
    return NliDataset(examples, tuple(label_set))


def write_jsonl(dataset: NliDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            fh.write(
                json.dumps(
                    {
                        "sentence1": " ".join(ex.premise),
                        "sentence2": " ".join(ex.hypothesis),
                        "gold_label": ex.label,
                        "annotations": list(ex.tags),
                    }
                )
                + "\n"
            )
