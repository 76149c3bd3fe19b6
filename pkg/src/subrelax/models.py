"""Differentiable score models and their set-function views.

Every model exposes ``value_and_grad(xs)`` for an (n, d) array of
per-position input vectors, returning the scalar score an attacker wants to
maximize and its gradient with respect to ``xs``. The same models back the
discrete search through ``as_set_oracle``, which evaluates them at one-hot
blends and normalizes so the empty transformation scores zero.
"""

import itertools
import warnings

import numpy as np

from .candidates import CandidateSet
from .embeddings import EmbeddingTable
from .errors import (
    DegenerateDataset,
    DimensionMismatch,
    IoFailure,
    ShapeError,
    UnembeddedToken,
)
from .setfn import SetOracle

# Activations with derivatives. The submodularity results need specific
# shapes: any non-decreasing activation for the pooled convolution model,
# and a non-decreasing concave one (concave-exp) for the recurrent model.
ACTIVATIONS = {
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float)),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "sigmoid": (
        lambda x: 1.0 / (1.0 + np.exp(-x)),
        lambda x: np.exp(-x) / (1.0 + np.exp(-x)) ** 2,
    ),
    "concave-exp": (lambda x: 1.0 - np.exp(-x), lambda x: np.exp(-x)),
}


def _activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


class MeanEmbeddingModel:
    """Squared distance between the aggregated input and a target vector.

    ``reduce`` selects mean or plain sum aggregation; ``direction``
    maximize-distance keeps the raw squared distance as the score,
    minimize-distance negates value and gradient.
    """

    def __init__(self, target, direction="maximize-distance", reduce="mean"):
        if direction not in ("maximize-distance", "minimize-distance"):
            raise ValueError(f"unknown direction {direction!r}")
        if reduce not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {reduce!r}")
        self.target = np.asarray(target, dtype=float)
        self.direction = direction
        self.reduce = reduce

    def value_and_grad(self, xs):
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 2 or xs.shape[1] != self.target.shape[0]:
            raise DimensionMismatch(
                f"inputs {xs.shape} incompatible with target dim {self.target.shape[0]}"
            )
        n = xs.shape[0]
        agg = xs.mean(axis=0) if self.reduce == "mean" else xs.sum(axis=0)
        diff = agg - self.target
        value = float(diff @ diff)
        scale = 2.0 / n if self.reduce == "mean" else 2.0
        grad = np.tile(scale * diff, (n, 1))
        if self.direction == "minimize-distance":
            return -value, -grad
        return value, grad

    def value(self, xs):
        return self.value_and_grad(xs)[0]


class WcnnModel:
    """Convolution over token windows, per-filter max pooling, linear readout.

    Windows of ``window`` positions are taken every ``stride`` positions and
    must tile the input exactly. Pooling ties route the gradient to the
    lowest window index.
    """

    def __init__(self, filters, biases, out_weights, out_bias, window, stride, activation="identity"):
        self.filters = np.asarray(filters, dtype=float)
        self.biases = np.asarray(biases, dtype=float)
        self.out_weights = np.asarray(out_weights, dtype=float)
        self.out_bias = float(out_bias)
        self.window = int(window)
        self.stride = int(stride)
        self.activation = activation
        if self.filters.ndim != 2:
            raise ShapeError("filters must be (n_filters, window*dim)")
        if self.biases.shape != (self.filters.shape[0],):
            raise ShapeError("one bias per filter required")
        if self.out_weights.shape != (self.filters.shape[0],):
            raise ShapeError("one readout weight per filter required")
        if self.window < 1 or self.stride < 1:
            raise ShapeError("window and stride must be positive")

    @property
    def non_overlapping(self):
        return self.stride == self.window

    def _window_matrix(self, xs):
        n, d = xs.shape
        if self.filters.shape[1] % d != 0 or self.filters.shape[1] // d != self.window:
            raise ShapeError(
                f"filter width {self.filters.shape[1]} != window {self.window} * dim {d}"
            )
        if n < self.window or (n - self.window) % self.stride != 0:
            raise ShapeError(
                f"{n} positions cannot be tiled by window {self.window}, stride {self.stride}"
            )
        n_windows = (n - self.window) // self.stride + 1
        rows = [xs[w * self.stride : w * self.stride + self.window].ravel() for w in range(n_windows)]
        return np.stack(rows)

    def value_and_grad(self, xs):
        xs = np.asarray(xs, dtype=float)
        act, act_deriv = _activation(self.activation)
        windows = self._window_matrix(xs)
        pre = windows @ self.filters.T + self.biases  # (n_windows, n_filters)
        activated = act(pre)
        winners = np.argmax(activated, axis=0)  # ties -> lowest window
        pooled = activated[winners, np.arange(self.filters.shape[0])]
        value = float(self.out_weights @ pooled + self.out_bias)

        grad = np.zeros_like(xs)
        d = xs.shape[1]
        for j in range(self.filters.shape[0]):
            w = int(winners[j])
            coeff = self.out_weights[j] * act_deriv(pre[w, j])
            start = w * self.stride
            grad[start : start + self.window] += coeff * self.filters[j].reshape(self.window, d)
        return value, grad

    def value(self, xs):
        xs = np.asarray(xs, dtype=float)
        act, _ = _activation(self.activation)
        windows = self._window_matrix(xs)
        activated = act(windows @ self.filters.T + self.biases)
        return float(self.out_weights @ activated.max(axis=0) + self.out_bias)


class RnnModel:
    """Scalar-hidden recurrence h_t = act(w*h_{t-1} + m.x_{t-1} + b), output
    y * h_T, with an analytic backward pass through time."""

    def __init__(self, w, m, b, y, activation="concave-exp"):
        self.w = float(w)
        self.m = np.asarray(m, dtype=float)
        self.b = float(b)
        self.y = float(y)
        self.activation = activation
        if self.m.ndim != 1:
            raise ShapeError("input weights must be a vector")

    def value_and_grad(self, xs):
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 2 or xs.shape[1] != self.m.shape[0]:
            raise DimensionMismatch(
                f"inputs {xs.shape} incompatible with weight dim {self.m.shape[0]}"
            )
        act, act_deriv = _activation(self.activation)
        steps = xs.shape[0]
        pre = np.empty(steps)
        hidden = np.empty(steps + 1)
        hidden[0] = 0.0
        for t in range(steps):
            pre[t] = self.w * hidden[t] + self.m @ xs[t] + self.b
            hidden[t + 1] = act(pre[t])
        value = float(self.y * hidden[steps])

        grad = np.zeros_like(xs)
        upstream = self.y  # d value / d hidden[t+1]
        for t in range(steps - 1, -1, -1):
            dz = upstream * act_deriv(pre[t])
            grad[t] = dz * self.m
            upstream = dz * self.w
        return value, grad

    def value(self, xs):
        return self.value_and_grad(xs)[0]


def mean_embedding_score(model, blended):
    return model.value_and_grad(np.asarray(blended, dtype=float))


def wcnn_forward(model, blended):
    return model.value_and_grad(np.asarray(blended, dtype=float))


def rnn_forward(model, blended):
    return model.value_and_grad(np.asarray(blended, dtype=float))


class TransformationSetOracle(SetOracle):
    """Set-function view of a model over transformation supports.

    Ground elements are positions; evaluate(X) is the best model score over
    assignments that keep every position outside X at its original slot,
    minus the score of the untransformed input. When every position offers
    a single alternate, the inner search is skipped and the alternates in X
    are applied directly.
    """

    def __init__(self, model, candidates, inner_max="auto"):
        self.model = model
        self.candidates = candidates
        sizes = candidates.group_sizes
        if inner_max == "auto":
            inner_max = any(k > 2 for k in sizes)
        self.inner_max = bool(inner_max)
        self._score_cache = {}
        self.base_score = self._score(tuple([0] * candidates.n_positions))

    def _score(self, index):
        if index not in self._score_cache:
            self._score_cache[index] = float(
                self.model.value(self.candidates.apply(index))
            )
        return self._score_cache[index]

    def evaluate(self, subset):
        positions = sorted(subset)
        if not positions:
            return 0.0
        if not self.inner_max:
            index = [0] * self.candidates.n_positions
            for i in positions:
                if len(self.candidates.token_ids[i]) > 1:
                    index[i] = 1
            return self._score(tuple(index)) - self.base_score
        best = None
        slot_ranges = [range(len(self.candidates.token_ids[i])) for i in positions]
        for combo in itertools.product(*slot_ranges):
            index = [0] * self.candidates.n_positions
            for pos, slot in zip(positions, combo):
                index[pos] = slot
            score = self._score(tuple(index))
            if best is None or score > best:
                best = score
        return best - self.base_score


def as_set_oracle(model, candidates, inner_max="auto"):
    """Wrap a differentiable model as a normalized set oracle over positions."""
    return TransformationSetOracle(model, candidates, inner_max=inner_max)


def filter_output_increasing(model, candidates):
    """Drop candidates whose solo substitution does not strictly increase the
    model output; slot 0 survives everywhere. Warns when nothing remains."""
    base_index = [0] * candidates.n_positions
    base = float(model.value(candidates.apply(base_index)))
    kept_ids = []
    kept_vecs = []
    any_kept = False
    for i in range(candidates.n_positions):
        ids = [candidates.token_ids[i][0]]
        rows = [0]
        for j in range(1, len(candidates.token_ids[i])):
            index = list(base_index)
            index[i] = j
            if float(model.value(candidates.apply(index))) > base:
                ids.append(candidates.token_ids[i][j])
                rows.append(j)
                any_kept = True
        kept_ids.append(ids)
        kept_vecs.append(candidates.vectors[i][rows])
    if not any_kept:
        warnings.warn("no candidate increases the model output", stacklevel=2)
    return CandidateSet(kept_ids, kept_vecs)


def make_subset_sum_instance(values, target, dim=2):
    """Hardness-reduction instance: position i's original vector carries the
    integer values[i] in its first coordinate, its single alternate is the
    zero vector, and the target vector carries ``target``.

    With sum aggregation and the minimize-distance direction, the optimal
    transformation reaches distance 0 exactly when some subset of ``values``
    sums to ``target``.
    """
    values = [int(v) for v in values]
    if dim < 1 or not values:
        raise ValueError("need dim >= 1 and at least one value")
    n = len(values)
    tokens = [f"v{i}" for i in range(n)] + ["zero"]
    vectors = np.zeros((n + 1, dim))
    for i, v in enumerate(values):
        vectors[i, 0] = float(v)
    table = EmbeddingTable(tokens, vectors)
    target_vec = np.zeros(dim)
    target_vec[0] = float(target)
    model = MeanEmbeddingModel(target_vec, direction="minimize-distance", reduce="sum")
    candidates = CandidateSet(
        token_ids=[[i, n] for i in range(n)],
        vectors=[np.stack([vectors[i], vectors[n]]) for i in range(n)],
    )
    return table, model, candidates


class LinearVictim:
    """Multinomial logistic classifier over mean-embedding features."""

    def __init__(self, weights, biases, trained=False, train_accuracy=None):
        self.weights = np.asarray(weights, dtype=float)
        self.biases = np.asarray(biases, dtype=float)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError("weights must be (classes, dim) with one bias per class")
        self.trained = trained
        self.train_accuracy = train_accuracy

    @property
    def n_classes(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1]

    def logits(self, feature):
        return self.weights @ feature + self.biases

    def predict_feature(self, feature):
        return int(np.argmax(self.logits(feature)))

    def feature(self, xs):
        return np.asarray(xs, dtype=float).mean(axis=0)

    def predict(self, xs):
        return self.predict_feature(self.feature(xs))

    def nll(self, xs, label):
        z = self.logits(self.feature(xs))
        return float(_logsumexp(z) - z[label])

    def loss_oracle(self, label):
        """Differentiable oracle whose score is the true-label NLL, the
        quantity an attack maximizes."""
        return VictimLossOracle(self, label)


class VictimLossOracle:
    def __init__(self, victim, label):
        self.victim = victim
        self.label = int(label)

    def value_and_grad(self, xs):
        xs = np.asarray(xs, dtype=float)
        n = xs.shape[0]
        feature = xs.mean(axis=0)
        z = self.victim.logits(feature)
        value = float(_logsumexp(z) - z[self.label])
        probs = np.exp(z - _logsumexp(z))
        dfeature = self.victim.weights.T @ (probs - _onehot(self.label, z.shape[0]))
        grad = np.tile(dfeature / n, (n, 1))
        return value, grad

    def value(self, xs):
        return self.value_and_grad(xs)[0]


def _logsumexp(z):
    m = np.max(z)
    return float(m + np.log(np.sum(np.exp(z - m))))


def _onehot(i, n):
    out = np.zeros(n)
    out[i] = 1.0
    return out


def train_linear_victim(dataset, table, epochs=300, rate=0.5, seed=0):
    """Full-batch gradient descent on the softmax cross-entropy.

    Features are mean embeddings of each example's tokens. Deterministic
    given the seed (which only draws the small random initialization).
    """
    labels = sorted({label for label, _ in dataset.examples})
    if len(labels) < 2:
        raise DegenerateDataset("training needs at least two classes")
    n_classes = len(dataset.label_names)
    features = np.stack([_mean_feature(tokens, table) for _, tokens in dataset.examples])
    targets = np.array([label for label, _ in dataset.examples])

    rng = np.random.default_rng(seed)
    weights = 0.01 * rng.standard_normal((n_classes, table.dim))
    biases = np.zeros(n_classes)
    onehots = np.zeros((len(targets), n_classes))
    onehots[np.arange(len(targets)), targets] = 1.0

    for _ in range(epochs):
        z = features @ weights.T + biases
        z -= z.max(axis=1, keepdims=True)
        probs = np.exp(z)
        probs /= probs.sum(axis=1, keepdims=True)
        delta = (probs - onehots) / len(targets)
        weights -= rate * delta.T @ features
        biases -= rate * delta.sum(axis=0)

    victim = LinearVictim(weights, biases, trained=epochs > 0)
    predictions = np.argmax(features @ weights.T + biases, axis=1)
    victim.train_accuracy = float(np.mean(predictions == targets))
    return victim


def _mean_feature(tokens, table):
    for tid in tokens:
        if not 0 <= tid < table.size:
            raise UnembeddedToken(f"token id {tid} has no embedding")
    return table.vectors[list(tokens)].mean(axis=0)


VICTIM_FORMAT_TAG = "subrelax-victim"
VICTIM_FORMAT_VERSION = 1


def save_victim(victim, path):
    """Versioned flat text: tag line, dimension header, one weight row plus
    bias per class."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(render_victim(victim))
    except OSError as exc:
        raise IoFailure(f"cannot write victim to {path}: {exc}") from exc


def load_victim(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read victim from {path}: {exc}") from exc
    return parse_victim(text)


def parse_victim(text):
    lines = [line for line in text.splitlines() if line.strip()]
    if len(lines) < 2:
        raise IoFailure("victim file too short")
    tag = lines[0].split()
    if len(tag) != 2 or tag[0] != VICTIM_FORMAT_TAG or int(tag[1]) != VICTIM_FORMAT_VERSION:
        raise IoFailure(f"unsupported victim format header {lines[0]!r}")
    header = lines[1].split()
    if len(header) != 4 or header[0] != "classes" or header[2] != "dim":
        raise IoFailure(f"bad victim dimension header {lines[1]!r}")
    n_classes, dim = int(header[1]), int(header[3])
    if len(lines) != 2 + n_classes:
        raise IoFailure(f"expected {n_classes} weight rows, found {len(lines) - 2}")
    weights = np.empty((n_classes, dim))
    biases = np.empty(n_classes)
    for c in range(n_classes):
        parts = [float(x) for x in lines[2 + c].split()]
        if len(parts) != dim + 1:
            raise IoFailure(f"weight row {c} has {len(parts)} values, expected {dim + 1}")
        weights[c] = parts[:dim]
        biases[c] = parts[dim]
    return LinearVictim(weights, biases, trained=True)


def render_victim(victim):
    lines = [
        f"{VICTIM_FORMAT_TAG} {VICTIM_FORMAT_VERSION}",
        f"classes {victim.n_classes} dim {victim.dim}",
    ]
    for c in range(victim.n_classes):
        row = [repr(float(x)) for x in victim.weights[c]] + [repr(float(victim.biases[c]))]
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"
