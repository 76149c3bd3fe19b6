"""Labeled token datasets: TSV serialization and a planted synthetic corpus.

Dataset file format: one example per line, ``label<TAB>tok1 tok2 ...``,
UTF-8. Token strings must exist in the accompanying embedding vocabulary.
"""

from dataclasses import dataclass

import numpy as np

from .candidates import Lexicon
from .embeddings import EmbeddingTable
from .errors import IoFailure


@dataclass
class Dataset:
    """Examples as (label id, token-id sequence) plus label names."""

    examples: list
    label_names: list

    def __post_init__(self):
        if not self.examples:
            raise ValueError("dataset must be nonempty")
        for label, tokens in self.examples:
            if not 0 <= label < len(self.label_names):
                raise ValueError(f"label {label} out of range")
            if not tokens:
                raise ValueError("token sequences must be nonempty")

    def __len__(self):
        return len(self.examples)


def load_dataset(path, table, label_names=None):
    """Read a TSV dataset, mapping tokens to embedding-table ids.

    Label names default to the sorted set of labels seen in the file.
    """
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                if "\t" not in line:
                    raise IoFailure(f"{path}:{lineno}: expected 'label<TAB>tokens'")
                label, text = line.split("\t", 1)
                tokens = text.split()
                if not tokens:
                    raise IoFailure(f"{path}:{lineno}: empty token sequence")
                rows.append((label, tokens))
    except OSError as exc:
        raise IoFailure(f"cannot read dataset from {path}: {exc}") from exc
    if label_names is None:
        label_names = sorted({label for label, _ in rows})
    label_ids = {name: i for i, name in enumerate(label_names)}
    examples = []
    for label, tokens in rows:
        if label not in label_ids:
            raise IoFailure(f"{path}: unknown label {label!r}")
        examples.append((label_ids[label], [table.id_of(t) for t in tokens]))
    return Dataset(examples=examples, label_names=list(label_names))


def save_dataset(dataset, table, path):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for label, tokens in dataset.examples:
                text = " ".join(table.token_of(t) for t in tokens)
                fh.write(f"{dataset.label_names[label]}\t{text}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {path}: {exc}") from exc


@dataclass
class SyntheticCorpus:
    table: EmbeddingTable
    train: Dataset
    test: Dataset
    lexicon: Lexicon


def generate_corpus(
    vocab_size=50,
    n_classes=2,
    n_train=200,
    n_test=100,
    min_length=8,
    max_length=12,
    n_class_tokens=2,
    seed=0,
    dim=4,
    separation=1.0,
):
    """Planted classification corpus where substitution attacks can succeed.

    The vocabulary splits into class-indicative token clusters placed at
    mirrored centroids, with each indicative token paired across the class
    boundary to a nearby "crossing synonym" (its mirror image), plus filler
    tokens near the origin and one distant radius anchor that widens every
    token's candidate ball. Examples mix a few indicative tokens of their
    class with filler, so flipping the indicative tokens to their mirrors
    crosses a linear decision boundary within a small budget.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if vocab_size < 2 * n_classes + 2:
        raise ValueError("vocabulary too small for the planted structure")
    rng = np.random.default_rng(seed)

    per_class = max(2, (vocab_size - 1) // (2 * n_classes))
    n_filler = vocab_size - n_classes * per_class - 1
    if n_filler < 1:
        per_class = (vocab_size - 2) // n_classes
        n_filler = vocab_size - n_classes * per_class - 1

    centroids = np.zeros((n_classes, dim))
    if n_classes == 2:
        centroids[0, 0] = separation
        centroids[1, 0] = -separation
    else:
        for c in range(n_classes):
            angle = 2 * np.pi * c / n_classes
            centroids[c, 0] = separation * np.cos(angle)
            centroids[c, 1] = separation * np.sin(angle)

    tokens = []
    vectors = []
    class_token_ids = [[] for _ in range(n_classes)]
    spread = 0.35 * separation
    for c in range(n_classes):
        for i in range(per_class):
            offset = np.zeros(dim)
            offset[-1] = spread * (i - (per_class - 1) / 2.0)
            offset[:-1] += 0.05 * separation * rng.standard_normal(dim - 1)
            tokens.append(f"c{c}w{i}")
            vectors.append(centroids[c] + offset)
            class_token_ids[c].append(len(tokens) - 1)

    filler_ids = []
    for i in range(n_filler):
        tokens.append(f"f{i}")
        vec = 0.08 * separation * rng.standard_normal(dim)
        vectors.append(vec)
        filler_ids.append(len(tokens) - 1)

    # Distant anchor inflates every token's furthest-token radius so the
    # epsilon ball admits the cross-class mirrors at moderate eta.
    tokens.append("anchor")
    anchor = np.zeros(dim)
    anchor[0] = 10.0 * separation
    vectors.append(anchor)

    table = EmbeddingTable(tokens, np.array(vectors))

    # Mirror pairs: token i of class c <-> token i of the opposite class.
    synonyms = []
    for c in range(n_classes):
        partner_class = (c + n_classes // 2) % n_classes if n_classes > 2 else 1 - c
        if partner_class == c:
            continue
        for a, b in zip(class_token_ids[c], class_token_ids[partner_class]):
            if a < b:
                synonyms.append((a, b))
    lexicon = Lexicon(synonyms=synonyms)

    def sample_split(n_examples):
        examples = []
        for i in range(n_examples):
            label = i % n_classes
            length = int(rng.integers(min_length, max_length + 1))
            n_ind = min(n_class_tokens, length)
            ind = rng.choice(class_token_ids[label], size=n_ind, replace=True)
            fill = rng.choice(filler_ids, size=length - n_ind, replace=True)
            seq = np.concatenate([ind, fill])
            rng.shuffle(seq)
            examples.append((label, [int(t) for t in seq]))
        return Dataset(examples=examples, label_names=[f"class{c}" for c in range(n_classes)])

    return SyntheticCorpus(
        table=table,
        train=sample_split(n_train),
        test=sample_split(n_test),
        lexicon=lexicon,
    )
