"""End-to-end substitution attacks and their evaluation.

Pipeline per sampled example: build the candidate set from the embedding
space, search for the loss-maximizing transformation with the configured
method (greedy over marginal gains, position-sequential greedy, or the
continuous relaxation), enforce the perturbation budget, and re-score the
victim. Metrics and reports follow the original-vs-adversarial accuracy
plus perturbation-percentage layout.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .candidates import build_candidate_set
from .errors import EmptyResults, IoFailure, SubrelaxError
from .relax import (
    BetaVector,
    RelaxationParams,
    default_l1_weight,
    disco_optimize,
    enforce_budget,
    init_beta,
    round_to_onehot,
)
from .setfn import CustomConstraint, GroundSet, SetOracle, greedy_maximize

METHODS = ("greedy-marginal", "greedy-sequential", "disco")


@dataclass
class AttackConfig:
    method: str = "greedy-marginal"
    budget: int | None = 3
    neighbors: int = 10
    eta_ball: float = 0.4
    relax: RelaxationParams = field(default_factory=lambda: RelaxationParams(mode="practical"))
    samples: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.budget is not None and self.budget < 0:
            raise ValueError("budget must be nonnegative")
        if self.samples < 1:
            raise ValueError("need at least one sample")

    @property
    def budget_label(self):
        return "unbudgeted" if self.budget is None else f"m={self.budget}"


@dataclass
class AttackResult:
    example_id: int
    label: int
    tokens: list
    original_index: list
    adversarial_index: list
    original_prediction: int
    adversarial_prediction: int
    loss_before: float
    loss_after: float
    tokens_changed: int
    token_count: int
    adversarial_tokens: list
    trace: object = None
    error: str | None = None

    @property
    def flipped(self):
        return self.adversarial_prediction != self.original_prediction


@dataclass
class AttackBatch:
    results: list
    runtime_seconds: float
    config: AttackConfig


@dataclass
class MetricsReport:
    initial_accuracy: float
    adversarial_accuracy: float
    perturbation_percent: float
    runtime_seconds: float | None = None
    n_examples: int = 0


class PairSubstitutionOracle(SetOracle):
    """Set oracle whose ground elements are (position, candidate-slot) pairs.

    Evaluating a subset applies each selected substitution and returns the
    victim loss gain over the unperturbed input. Conflicting pairs on one
    position (never feasible under the search constraint) resolve to the
    lowest element id.
    """

    def __init__(self, loss_oracle, candidates):
        self.loss_oracle = loss_oracle
        self.candidates = candidates
        self.pairs = []  # element id -> (position, slot)
        for i in range(candidates.n_positions):
            for j in range(1, len(candidates.token_ids[i])):
                self.pairs.append((i, j))
        self.base_score = float(loss_oracle.value(candidates.apply([0] * candidates.n_positions)))
        self._cache = {}

    def ground(self):
        return GroundSet(len(self.pairs)) if self.pairs else None

    def position_groups(self):
        groups = [[] for _ in range(self.candidates.n_positions)]
        for e, (i, _) in enumerate(self.pairs):
            groups[i].append(e)
        return groups

    def index_of(self, subset):
        index = [0] * self.candidates.n_positions
        for e in sorted(subset):
            i, j = self.pairs[e]
            if index[i] == 0:
                index[i] = j
        return index

    def evaluate(self, subset):
        key = tuple(sorted(subset))
        if key not in self._cache:
            index = self.index_of(subset)
            score = float(self.loss_oracle.value(self.candidates.apply(index)))
            self._cache[key] = score - self.base_score
        return self._cache[key]


def _pair_constraint(oracle, budget):
    """One substitution per position, at most ``budget`` positions changed."""

    def feasible(subset):
        seen = set()
        for e in subset:
            i, _ = oracle.pairs[e]
            if i in seen:
                return False
            seen.add(i)
        return budget is None or len(subset) <= budget

    return CustomConstraint(feasible)


def sample_examples(dataset, n, seed):
    """Stratified sample without replacement, proportional per class."""
    rng = np.random.default_rng(seed)
    n = min(n, len(dataset))
    by_label = {}
    for idx, (label, _) in enumerate(dataset.examples):
        by_label.setdefault(label, []).append(idx)
    labels = sorted(by_label)
    quotas = {}
    remainders = []
    assigned = 0
    for label in labels:
        exact = n * len(by_label[label]) / len(dataset)
        quotas[label] = min(int(exact), len(by_label[label]))
        assigned += quotas[label]
        remainders.append((-(exact - int(exact)), label))
    remainders.sort()
    i = 0
    while assigned < n and i < len(remainders) * 2:
        label = remainders[i % len(remainders)][1]
        if quotas[label] < len(by_label[label]):
            quotas[label] += 1
            assigned += 1
        i += 1
    chosen = []
    for label in labels:
        pool = by_label[label]
        take = quotas[label]
        if take:
            chosen.extend(rng.choice(pool, size=take, replace=False))
    return sorted(int(c) for c in chosen)


def run_attack(victim, table, dataset, config):
    """Attack a stratified sample of the dataset; returns an AttackBatch.

    Per-example optimizer failures are recorded on the result (marked
    unflipped) without aborting the batch.
    """
    start = time.perf_counter()
    selected = sample_examples(dataset, config.samples, config.seed)
    results = []
    for example_id in selected:
        label, tokens = dataset.examples[example_id]
        results.append(_attack_example(victim, table, example_id, label, tokens, config))
    return AttackBatch(
        results=results,
        runtime_seconds=time.perf_counter() - start,
        config=config,
    )


def _attack_example(victim, table, example_id, label, tokens, config):
    candidates = build_candidate_set(table, tokens, config.neighbors, config.eta_ball)
    loss_oracle = victim.loss_oracle(label)
    original_input = candidates.apply([0] * candidates.n_positions)
    loss_before = float(loss_oracle.value(original_input))
    original_prediction = victim.predict(original_input)

    index = [0] * candidates.n_positions
    trace = None
    error = None
    try:
        if config.method == "disco":
            index, trace = _disco_index(loss_oracle, candidates, config)
        else:
            index = _greedy_index(loss_oracle, candidates, config)
    except SubrelaxError as exc:
        error = f"{type(exc).__name__}: {exc}"
        index = [0] * candidates.n_positions

    adversarial_input = candidates.apply(index)
    adversarial_tokens = candidates.tokens_for(index)
    changed = int(sum(1 for j in index if j != 0))
    return AttackResult(
        example_id=example_id,
        label=label,
        tokens=list(tokens),
        original_index=[0] * candidates.n_positions,
        adversarial_index=[int(j) for j in index],
        original_prediction=original_prediction,
        adversarial_prediction=victim.predict(adversarial_input),
        loss_before=loss_before,
        loss_after=float(loss_oracle.value(adversarial_input)),
        tokens_changed=changed,
        token_count=len(tokens),
        adversarial_tokens=adversarial_tokens,
        trace=trace,
        error=error,
    )


def _greedy_index(loss_oracle, candidates, config):
    oracle = PairSubstitutionOracle(loss_oracle, candidates)
    ground = oracle.ground()
    if ground is None or (config.budget is not None and config.budget == 0):
        return [0] * candidates.n_positions
    constraint = _pair_constraint(oracle, config.budget)
    if config.method == "greedy-sequential":
        trace = greedy_maximize(
            oracle,
            ground,
            constraint,
            strategy="position-sequential",
            positions=oracle.position_groups(),
        )
    else:
        trace = greedy_maximize(oracle, ground, constraint, stop_when_no_gain=True)
    return oracle.index_of(trace.final_set)


def _disco_index(loss_oracle, candidates, config):
    layout = candidates.layout()
    params = config.relax
    if params.lam is None:
        base_loss = float(loss_oracle.value(candidates.apply([0] * candidates.n_positions)))
        params = RelaxationParams(
            p=params.p,
            lam=default_l1_weight(base_loss, layout.group_sizes),
            eta=params.eta,
            max_iters=params.max_iters,
            mode=params.mode,
            lipschitz=params.lipschitz,
        )
    init = init_beta(layout, params.p, params.mode, project=params.mode == "theorem")
    trace = disco_optimize(loss_oracle, layout, candidates.vectors, params, init=init)
    beta = trace.final_beta
    index = round_to_onehot(beta)
    if config.budget is not None:
        index = enforce_budget(index, beta, config.budget)
    return [int(j) for j in index]


def compute_metrics(results, runtime_seconds=None):
    """Accuracy before/after the attack and the mean perturbation share."""
    if not results:
        raise EmptyResults("no attack results to aggregate")
    initial = np.mean([r.original_prediction == r.label for r in results])
    adversarial = np.mean([r.adversarial_prediction == r.label for r in results])
    perturbation = 100.0 * np.mean([r.tokens_changed / r.token_count for r in results])
    return MetricsReport(
        initial_accuracy=float(initial),
        adversarial_accuracy=float(adversarial),
        perturbation_percent=float(perturbation),
        runtime_seconds=runtime_seconds,
        n_examples=len(results),
    )


def _method_block(method):
    return "Continuous Relaxation Approach" if method == "disco" else "Greedy Approach"


def render_report_json(batches, dataset_name="synthetic"):
    """Canonical machine-readable report for a set of attack batches.

    Fully determined by configuration, seed, and data: wall-clock runtimes
    are deliberately excluded (they live in the text table), so identical
    runs serialize to identical bytes.
    """
    payload = {"dataset": dataset_name, "methods": {}}
    for batch in batches:
        metrics = compute_metrics(batch.results)
        cfg = batch.config
        payload["methods"][f"{cfg.method} ({cfg.budget_label})"] = {
            "config": {
                "method": cfg.method,
                "budget": cfg.budget,
                "neighbors": cfg.neighbors,
                "eta_ball": cfg.eta_ball,
                "samples": cfg.samples,
                "seed": cfg.seed,
                "relax": {
                    "p": cfg.relax.p,
                    "lambda": cfg.relax.lam,
                    "eta": cfg.relax.eta,
                    "max_iters": cfg.relax.max_iters,
                    "mode": cfg.relax.mode,
                },
            },
            "summary": {
                "initial_accuracy": metrics.initial_accuracy,
                "adversarial_accuracy": metrics.adversarial_accuracy,
                "perturbation_percent": metrics.perturbation_percent,
                "n_examples": metrics.n_examples,
            },
            "examples": [
                {
                    "id": r.example_id,
                    "label": r.label,
                    "original_prediction": r.original_prediction,
                    "adversarial_prediction": r.adversarial_prediction,
                    "loss_before": r.loss_before,
                    "loss_after": r.loss_after,
                    "tokens_changed": r.tokens_changed,
                    "token_count": r.token_count,
                    "adversarial_index": r.adversarial_index,
                    "error": r.error,
                }
                for r in batch.results
            ],
        }
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def parse_report(text):
    return json.loads(text)


def render_report_table(batches, dataset_name="synthetic"):
    """Text table with one block per approach and the three standard columns."""
    header = f"{'Dataset':<18}{'Original Acc.(%)':>18}{'Adversarial Acc.(%)':>21}{'Perturbation (%)':>18}"
    rule = "-" * len(header)
    blocks = {}
    for batch in batches:
        blocks.setdefault(_method_block(batch.config.method), []).append(batch)
    lines = []
    for block in ("Continuous Relaxation Approach", "Greedy Approach"):
        if block not in blocks:
            continue
        lines.append("=" * len(header))
        lines.append(block.center(len(header)))
        lines.append(rule)
        lines.append(header)
        lines.append(rule)
        for batch in blocks[block]:
            metrics = compute_metrics(batch.results, batch.runtime_seconds)
            name = f"{dataset_name} [{batch.config.method}, {batch.config.budget_label}]"
            lines.append(
                f"{name:<18}"
                f"{100 * metrics.initial_accuracy:>18.2f}"
                f"{100 * metrics.adversarial_accuracy:>21.2f}"
                f"{metrics.perturbation_percent:>18.2f}"
            )
        for batch in blocks[block]:
            if batch.runtime_seconds is not None:
                lines.append(
                    f"# runtime {batch.config.method} ({batch.config.budget_label}): "
                    f"{batch.runtime_seconds:.2f} s"
                )
    return "\n".join(lines) + "\n"


def write_report(batches, path, dataset_name="synthetic", table_path=None):
    """Write the canonical JSON report (and optionally the text table)."""
    if not batches:
        raise EmptyResults("no batches to report")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(render_report_json(batches, dataset_name))
        if table_path is not None:
            with open(table_path, "w", encoding="utf-8") as fh:
                fh.write(render_report_table(batches, dataset_name))
    except OSError as exc:
        raise IoFailure(f"cannot write report: {exc}") from exc
