"""Token embedding table and its flat-text file format.

File format: one token per line, ``token v1 v2 ... vd``, whitespace
separated, UTF-8. Token ids are row indices in file order.
"""

import numpy as np

from .errors import DimensionMismatch, IoFailure, UnknownToken


class EmbeddingTable:
    """Vocabulary of tokens with dense vectors of a fixed dimension."""

    def __init__(self, tokens, vectors):
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] != len(tokens):
            raise DimensionMismatch("one vector per token required")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding entries must be finite")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.vectors = vectors
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    @property
    def size(self):
        return len(self.tokens)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __contains__(self, token):
        return token in self._index

    def __len__(self):
        return len(self.tokens)

    def id_of(self, token):
        try:
            return self._index[token]
        except KeyError:
            raise UnknownToken(f"token {token!r} not in vocabulary") from None

    def token_of(self, token_id):
        if not 0 <= token_id < len(self.tokens):
            raise UnknownToken(f"token id {token_id} out of range")
        return self.tokens[token_id]

    def vector(self, token_or_id):
        if isinstance(token_or_id, str):
            return self.vectors[self.id_of(token_or_id)]
        return self.vectors[int(token_or_id)]

    def with_vectors(self, vectors):
        """Same vocabulary, replaced vectors (e.g. after retrofitting)."""
        return EmbeddingTable(self.tokens, vectors)


def load_embeddings(path):
    try:
        tokens = []
        rows = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) < 2:
                    raise IoFailure(f"{path}:{lineno}: token without vector")
                tokens.append(parts[0])
                rows.append([float(x) for x in parts[1:]])
    except OSError as exc:
        raise IoFailure(f"cannot read embeddings from {path}: {exc}") from exc
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise DimensionMismatch(f"{path}: inconsistent vector dimensions {sorted(widths)}")
    return EmbeddingTable(tokens, np.array(rows, dtype=float))


def save_embeddings(table, path):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for token, row in zip(table.tokens, table.vectors):
                fh.write(token + " " + " ".join(repr(float(x)) for x in row) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write embeddings to {path}: {exc}") from exc
