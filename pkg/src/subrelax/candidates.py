"""Candidate generation: counter-fitting of an embedding space under
synonym/antonym/topology constraints, and epsilon-ball nearest-neighbor
retrieval of replacement candidates.

All distances are Euclidean. The three retrofitting terms are hinge
penalties: antonym pairs are pushed beyond ``delta``, synonym pairs pulled
within ``gamma``, and each token's distances to its original-space
neighborhood are kept from growing.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, IoFailure, NonFiniteObjective, UnknownToken
from .relax import GroupLayout


class Lexicon:
    """Unordered synonym and antonym token-id pairs; the two sets must be
    disjoint and contain no self-pairs."""

    def __init__(self, synonyms=(), antonyms=()):
        self.synonyms = {self._norm(p) for p in synonyms}
        self.antonyms = {self._norm(p) for p in antonyms}
        overlap = self.synonyms & self.antonyms
        if overlap:
            raise ValueError(f"pairs marked both synonym and antonym: {sorted(overlap)}")

    @staticmethod
    def _norm(pair):
        a, b = pair
        if a == b:
            raise ValueError(f"self-pair ({a}, {b}) not allowed")
        return (min(a, b), max(a, b))

    def __bool__(self):
        return bool(self.synonyms or self.antonyms)


def load_lexicon(path, table):
    """Read lines ``syn tokenA tokenB`` / ``ant tokenA tokenB`` into id pairs."""
    synonyms = []
    antonyms = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 3 or parts[0] not in ("syn", "ant"):
                    raise IoFailure(f"{path}:{lineno}: expected 'syn|ant tokenA tokenB'")
                pair = (table.id_of(parts[1]), table.id_of(parts[2]))
                (synonyms if parts[0] == "syn" else antonyms).append(pair)
    except OSError as exc:
        raise IoFailure(f"cannot read lexicon from {path}: {exc}") from exc
    return Lexicon(synonyms=synonyms, antonyms=antonyms)


def save_lexicon(lexicon, table, path):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for a, b in sorted(lexicon.synonyms):
                fh.write(f"syn {table.token_of(a)} {table.token_of(b)}\n")
            for a, b in sorted(lexicon.antonyms):
                fh.write(f"ant {table.token_of(a)} {table.token_of(b)}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write lexicon to {path}: {exc}") from exc


@dataclass
class CounterFitConfig:
    delta: float = 1.0  # antonym margin
    gamma: float = 0.2  # synonym margin
    k1: float = 1.0
    k2: float = 1.0
    k3: float = 1.0
    neighborhood_size: int = 10
    step_size: float = 0.1
    iterations: int = 200

    def __post_init__(self):
        if not self.delta > self.gamma >= 0:
            raise ValueError("margins must satisfy delta > gamma >= 0")
        if min(self.k1, self.k2, self.k3) < 0:
            raise ValueError("term weights must be nonnegative")


def original_neighborhoods(vectors, size):
    """Index array of each token's ``size`` nearest neighbors in the original
    space (self excluded); fixed throughout retrofitting."""
    vectors = np.asarray(vectors, dtype=float)
    n = vectors.shape[0]
    size = min(size, n - 1)
    if size <= 0:
        return np.zeros((n, 0), dtype=int)
    dists = _pairwise_distances(vectors)
    np.fill_diagonal(dists, np.inf)
    order = np.argsort(dists, axis=1, kind="stable")
    return order[:, :size]


def _pairwise_distances(vectors):
    sq = np.sum(vectors**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * vectors @ vectors.T
    return np.sqrt(np.maximum(d2, 0.0))


def counterfit_objective(original, current, lexicon, config, neighborhoods=None):
    """Evaluate the retrofitting cost.

    Returns (total, antonym_term, synonym_term, topology_term) where
    total = k1*A + k2*S + k3*VS and each term is a sum of hinges
    tau(x) = max(0, x) over the relevant pairs.
    """
    original = np.asarray(original, dtype=float)
    current = np.asarray(current, dtype=float)
    if original.shape != current.shape:
        raise DimensionMismatch("original and current spaces must match in shape")
    if neighborhoods is None:
        neighborhoods = original_neighborhoods(original, config.neighborhood_size)

    a_term = 0.0
    for u, w in lexicon.antonyms:
        a_term += max(0.0, config.delta - _dist(current[u], current[w]))
    s_term = 0.0
    for u, w in lexicon.synonyms:
        s_term += max(0.0, _dist(current[u], current[w]) - config.gamma)
    vs_term = 0.0
    for i in range(original.shape[0]):
        for j in neighborhoods[i]:
            vs_term += max(
                0.0, _dist(current[i], current[j]) - _dist(original[i], original[j])
            )
    total = config.k1 * a_term + config.k2 * s_term + config.k3 * vs_term
    return total, a_term, s_term, vs_term


def _dist(u, v):
    return float(np.linalg.norm(u - v))


def _counterfit_gradient(original, current, lexicon, config, neighborhoods):
    """Subgradient of the cost; 0 at hinge kinks and at coincident points."""
    grad = np.zeros_like(current)
    for u, w in lexicon.antonyms:
        diff = current[u] - current[w]
        dist = np.linalg.norm(diff)
        if dist > 0 and config.delta - dist > 0:
            g = -config.k1 * diff / dist
            grad[u] += g
            grad[w] -= g
    for u, w in lexicon.synonyms:
        diff = current[u] - current[w]
        dist = np.linalg.norm(diff)
        if dist > 0 and dist - config.gamma > 0:
            g = config.k2 * diff / dist
            grad[u] += g
            grad[w] -= g
    n = original.shape[0]
    for i in range(n):
        for j in neighborhoods[i]:
            diff = current[i] - current[j]
            dist = np.linalg.norm(diff)
            if dist > 0 and dist - _dist(original[i], original[j]) > 0:
                g = config.k3 * diff / dist
                grad[i] += g
                grad[j] -= g
    return grad


@dataclass
class CounterFitResult:
    vectors: np.ndarray
    objective_trace: list = field(default_factory=list)
    terms: tuple = (0.0, 0.0, 0.0)

    @property
    def final_objective(self):
        return self.objective_trace[-1]


def counterfit_optimize(original, lexicon, config, neighborhoods=None):
    """Retrofit the space by subgradient descent with backtracking.

    Starts from the original vectors; each accepted step does not increase
    the cost, so the returned objective trace is non-increasing.
    """
    original = np.asarray(original, dtype=float)
    if neighborhoods is None:
        neighborhoods = original_neighborhoods(original, config.neighborhood_size)
    current = original.copy()
    obj, a, s, vs = counterfit_objective(original, current, lexicon, config, neighborhoods)
    trace = [obj]
    step = config.step_size
    for _ in range(config.iterations):
        if obj == 0.0:
            break
        grad = _counterfit_gradient(original, current, lexicon, config, neighborhoods)
        grad_norm = np.linalg.norm(grad)
        if grad_norm == 0.0:
            break
        accepted = False
        trial_step = step
        for _ in range(40):
            trial = current - trial_step * grad
            trial_obj, a, s, vs = counterfit_objective(
                original, trial, lexicon, config, neighborhoods
            )
            if not np.isfinite(trial_obj):
                raise NonFiniteObjective("retrofitting objective became non-finite")
            if trial_obj <= obj:
                current, obj = trial, trial_obj
                accepted = True
                break
            trial_step *= 0.5
        if not accepted:
            break
        trace.append(obj)
        step = min(trial_step * 2.0, config.step_size)
    _, a, s, vs = counterfit_objective(original, current, lexicon, config, neighborhoods)
    return CounterFitResult(vectors=current, objective_trace=trace, terms=(a, s, vs))


def max_radius(table, anchor):
    """Euclidean distance from the anchor token to the furthest token."""
    anchor_vec = table.vector(anchor)
    return float(np.max(np.linalg.norm(table.vectors - anchor_vec, axis=1)))


class CandidateSet:
    """Per-position replacement candidates: token ids and their vectors,
    slot 0 always the original token."""

    def __init__(self, token_ids, vectors):
        if len(token_ids) != len(vectors):
            raise DimensionMismatch("token ids and vectors must align per position")
        self.token_ids = [list(ids) for ids in token_ids]
        self.vectors = [np.asarray(v, dtype=float) for v in vectors]
        for i, (ids, vecs) in enumerate(zip(self.token_ids, self.vectors)):
            if len(ids) != vecs.shape[0]:
                raise DimensionMismatch(f"position {i}: ids and vectors disagree")
            if len(ids) < 1:
                raise ValueError(f"position {i}: slot 0 (original) is required")
            if len(set(ids)) != len(ids):
                raise ValueError(f"position {i}: duplicate candidate ids")

    @property
    def n_positions(self):
        return len(self.token_ids)

    @property
    def group_sizes(self):
        return [len(ids) for ids in self.token_ids]

    def layout(self):
        return GroupLayout(self.group_sizes)

    def vectors_at(self, position):
        return self.vectors[position]

    def apply(self, index):
        """Embedded input selected by a per-position slot index vector."""
        return np.stack([self.vectors[i][index[i]] for i in range(self.n_positions)])

    def tokens_for(self, index):
        return [self.token_ids[i][index[i]] for i in range(self.n_positions)]


def knn_candidates(table, token, k, eta_ball):
    """Candidates for one token: up to ``k`` nearest tokens within the ball
    of radius eta_ball * R, R the distance to the furthest token.

    Returns (ids, vectors) with slot 0 the original token; neighbors sorted
    by (distance, token id).
    """
    if not 0.0 <= eta_ball <= 1.0:
        raise ValueError("eta_ball must lie in [0, 1]")
    anchor_id = table.id_of(token) if isinstance(token, str) else int(token)
    if not 0 <= anchor_id < table.size:
        raise UnknownToken(f"token id {anchor_id} out of range")
    anchor = table.vectors[anchor_id]
    dists = np.linalg.norm(table.vectors - anchor, axis=1)
    radius = float(np.max(dists))
    epsilon = eta_ball * radius
    order = sorted(
        (float(dists[i]), i) for i in range(table.size) if i != anchor_id
    )
    ids = [anchor_id]
    for dist, i in order:
        if dist > epsilon or len(ids) > k:
            break
        ids.append(i)
    return ids, table.vectors[ids]


def build_candidate_set(table, token_ids, k, eta_ball):
    """Candidate set for a token-id sequence via per-position ball queries."""
    per_position_ids = []
    per_position_vecs = []
    for tid in token_ids:
        ids, vecs = knn_candidates(table, int(tid), k, eta_ball)
        per_position_ids.append(ids)
        per_position_vecs.append(vecs)
    return CandidateSet(per_position_ids, per_position_vecs)
