"""Continuous relaxation of the discrete substitution search.

A discrete choice of one candidate per position is relaxed to per-group
weights alpha obtained from free parameters beta through

    alpha_i[j] = beta_i[j]**(2p) / Z_i,   Z_i = sum_j beta_i[j]**(2p),

so each group's weights are nonnegative and sum to one. The smooth part of
the objective is the model loss at the alpha-blended embedding input
(negated, since the optimizer minimizes), the nonsmooth part is an L1
penalty on beta, and the solver interleaves a gradient step, elementwise
soft-thresholding, and projection of each group onto its 2p-norm sphere.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGroup, DimensionMismatch, IoFailure, NonFiniteObjective


class GroupLayout:
    """Sizes (k_1,...,k_n) of the per-position candidate groups of a stacked
    beta vector, with prefix-sum offsets for slicing."""

    def __init__(self, group_sizes):
        sizes = [int(k) for k in group_sizes]
        if not sizes or any(k < 1 for k in sizes):
            raise ValueError("group sizes must be positive")
        self.group_sizes = sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.total = int(self.offsets[-1])

    @property
    def n_groups(self):
        return len(self.group_sizes)

    def slice(self, i):
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def split(self, values):
        return [values[self.slice(i)] for i in range(self.n_groups)]

    def __eq__(self, other):
        return isinstance(other, GroupLayout) and self.group_sizes == other.group_sizes

    def __repr__(self):
        return f"GroupLayout({self.group_sizes})"


class BetaVector:
    """Stacked relaxation parameters with their group layout."""

    def __init__(self, values, layout):
        values = np.asarray(values, dtype=float)
        if values.shape != (layout.total,):
            raise DimensionMismatch(
                f"beta has length {values.shape}, layout expects ({layout.total},)"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("beta entries must be finite")
        self.values = values
        self.layout = layout

    def group(self, i):
        return self.values[self.layout.slice(i)]

    def copy(self):
        return BetaVector(self.values.copy(), self.layout)

    def __repr__(self):
        return f"BetaVector({self.values!r}, {self.layout!r})"


@dataclass
class RelaxationParams:
    """Hyperparameters of the relaxation solver.

    ``theorem`` mode runs the sphere-constrained fixed-step solver;
    ``practical`` mode runs unconstrained adaptive-moment updates on the
    penalized objective (initial rate 1, 100-step budget by default).
    ``eta=None`` in theorem mode asks for step-size estimation from a
    Lipschitz probe; ``lipschitz`` may be supplied to skip the probe.
    ``lam=None`` means no penalty for direct solver calls; the attack
    harness replaces it with the loss-scaled default.
    """

    p: int = 1
    lam: float | None = None
    eta: float | None = None
    max_iters: int = 100
    mode: str = "theorem"
    lipschitz: float | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("exponent p must be >= 1")
        if self.lam is not None and self.lam < 0:
            raise ValueError("l1 weight must be nonnegative")
        if self.eta is not None and self.eta <= 0:
            raise ValueError("step size must be positive")
        if self.max_iters < 1:
            raise ValueError("need at least one iteration")
        if self.mode not in ("theorem", "practical"):
            raise ValueError(f"unknown mode: {self.mode}")

    @property
    def effective_lam(self):
        return 0.0 if self.lam is None else self.lam


@dataclass
class OptimizerTrace:
    """Per-iteration record of a solver run (index 0 is the initial point)."""

    phi_values: list = field(default_factory=list)
    f_values: list = field(default_factory=list)
    h_values: list = field(default_factory=list)
    feasibility_residuals: list = field(default_factory=list)
    final_beta: BetaVector | None = None
    degenerate_groups: list = field(default_factory=list)
    eta: float | None = None
    aborted: bool = False

    def record(self, phi, f, h, residual):
        self.phi_values.append(float(phi))
        self.f_values.append(float(f))
        self.h_values.append(float(h))
        self.feasibility_residuals.append(float(residual))

    def export(self, path):
        """Write one line per iteration: iter, f, h, phi, max residual."""
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(format_trace(self))
        except OSError as exc:
            raise IoFailure(f"cannot write trace to {path}: {exc}") from exc


def format_trace(trace):
    lines = ["iter\tf\th\tphi\tmax_residual"]
    rows = zip(
        trace.f_values, trace.h_values, trace.phi_values, trace.feasibility_residuals
    )
    for it, (f, h, phi, res) in enumerate(rows):
        lines.append(f"{it}\t{f!r}\t{h!r}\t{phi!r}\t{res!r}")
    return "\n".join(lines) + "\n"


def alpha_from_beta(beta, p):
    """Per-group weights alpha[j] = beta[j]**(2p)/Z, each group summing to 1."""
    powered = np.power(beta.values, 2 * int(p))
    alpha = np.empty_like(powered)
    for i in range(beta.layout.n_groups):
        sl = beta.layout.slice(i)
        z = powered[sl].sum()
        if z == 0.0:
            raise DegenerateGroup(f"group {i} has zero mass")
        alpha[sl] = powered[sl] / z
    return alpha


def blend_inputs(alpha, candidates, layout):
    """Convex combination of candidate vectors per position.

    ``candidates`` holds one (k_i, d) array per position; returns an (n, d)
    array. A one-hot alpha reproduces the selected candidate exactly.
    """
    if len(candidates) != layout.n_groups:
        raise DimensionMismatch("one candidate block per group required")
    dims = {np.asarray(c).shape[1] for c in candidates}
    if len(dims) != 1:
        raise DimensionMismatch(f"candidate vectors disagree on dimension: {dims}")
    d = dims.pop()
    out = np.empty((layout.n_groups, d))
    for i, block in enumerate(candidates):
        block = np.asarray(block, dtype=float)
        k = layout.group_sizes[i]
        if block.shape[0] != k:
            raise DimensionMismatch(
                f"group {i}: {block.shape[0]} candidates, layout expects {k}"
            )
        out[i] = alpha[layout.slice(i)] @ block
    return out


def group_normalizers(beta, p):
    """Z_i = sum_j beta_i[j]**(2p) for each group."""
    powered = np.power(beta.values, 2 * int(p))
    return np.array([powered[beta.layout.slice(i)].sum() for i in range(beta.layout.n_groups)])


def feasibility_residual(beta, p):
    """max_i |Z_i - 1|, the distance from the per-group sphere constraints."""
    return float(np.max(np.abs(group_normalizers(beta, p) - 1.0)))


class SmoothObjective:
    """Smooth part of the relaxed objective: value and gradient in beta."""

    def value(self, beta_values):
        raise NotImplementedError

    def gradient(self, beta_values):
        return self.value_and_grad(beta_values)[1]

    def value_and_grad(self, beta_values):
        raise NotImplementedError


class BlendedModelObjective(SmoothObjective):
    """Model loss at the blended input, as a function of beta.

    ``oracle`` must expose ``value_and_grad(xs) -> (score, dscore/dxs)`` for
    an (n, d) blended input; the score is what the search *maximizes*, so
    this objective returns its negation for minimization.
    """

    def __init__(self, oracle, candidates, layout, p):
        self.oracle = oracle
        self.candidates = [np.asarray(c, dtype=float) for c in candidates]
        self.layout = layout
        self.p = int(p)

    def value(self, beta_values):
        beta = BetaVector(beta_values, self.layout)
        alpha = alpha_from_beta(beta, self.p)
        blended = blend_inputs(alpha, self.candidates, self.layout)
        score, _ = self.oracle.value_and_grad(blended)
        return -float(score)

    def value_and_grad(self, beta_values):
        beta = BetaVector(beta_values, self.layout)
        grad, score = _chain_gradient(self.oracle, beta, self.candidates, self.p)
        return -float(score), -grad


class QuadraticObjective(SmoothObjective):
    """f(beta) = 0.5 (beta-t)' A (beta-t); identity A gives 0.5||beta-t||^2.

    Convex for positive semidefinite A, with Lipschitz constant the largest
    eigenvalue. Used by the convergence checks, where a closed-form smooth
    objective with a known curvature is needed.
    """

    def __init__(self, target, matrix=None):
        self.target = np.asarray(target, dtype=float)
        self.matrix = None if matrix is None else np.asarray(matrix, dtype=float)

    def value_and_grad(self, beta_values):
        delta = beta_values - self.target
        if self.matrix is None:
            return 0.5 * float(delta @ delta), delta
        a_delta = self.matrix @ delta
        return 0.5 * float(delta @ a_delta), a_delta

    def value(self, beta_values):
        return self.value_and_grad(beta_values)[0]

    @property
    def lipschitz(self):
        if self.matrix is None:
            return 1.0
        return float(np.linalg.eigvalsh(self.matrix)[-1])


def _chain_gradient(oracle, beta, candidates, p):
    """Gradient of the oracle score w.r.t. beta via the weight chain rule.

    For one group with entries b, weights alpha and per-candidate input
    sensitivities u_j = g . w_j (g the oracle gradient at that position),

        d score / d b_l = (2p b_l^(2p-1) / Z) * (u_l - sum_j alpha_j u_j).
    """
    p = int(p)
    alpha = alpha_from_beta(beta, p)
    blended = blend_inputs(alpha, candidates, beta.layout)
    score, g_x = oracle.value_and_grad(blended)
    g_x = np.asarray(g_x, dtype=float)
    grad = np.empty_like(beta.values)
    for i in range(beta.layout.n_groups):
        sl = beta.layout.slice(i)
        b = beta.values[sl]
        a = alpha[sl]
        u = candidates[i] @ g_x[i]
        z = np.power(b, 2 * p).sum()
        grad[sl] = (2 * p * np.power(b, 2 * p - 1) / z) * (u - a @ u)
    return grad, score


def objective_phi(oracle, beta, params, candidates):
    """Penalized objective phi = f + h at beta.

    f is the negated oracle score at the blended input, h = lam * ||beta||_1.
    Returns (phi, f, h).
    """
    obj = BlendedModelObjective(oracle, candidates, beta.layout, params.p)
    f = obj.value(beta.values)
    h = params.effective_lam * float(np.abs(beta.values).sum())
    return f + h, f, h


def grad_phi_smooth(oracle, beta, params, candidates):
    """Gradient of the smooth part f (not the L1 term) w.r.t. beta."""
    grad, _ = _chain_gradient(oracle, beta, candidates, params.p)
    return -grad


def prox_l1(values, eta_lambda):
    """Elementwise soft threshold, the closed-form prox of eta*lam*||.||_1."""
    if eta_lambda < 0:
        raise ValueError("threshold must be nonnegative")
    values = np.asarray(values, dtype=float)
    return np.sign(values) * np.maximum(np.abs(values) - eta_lambda, 0.0)


def project_group_sphere(beta, p):
    """Scale each group by its 2p-norm so that Z_i = 1.

    A group with zero norm has no defined projection; it is mapped to the
    uniform feasible point of its sphere and reported in the second return
    value so callers can flag it.
    """
    p = int(p)
    values = beta.values.copy()
    degenerate = []
    for i in range(beta.layout.n_groups):
        sl = beta.layout.slice(i)
        group = values[sl]
        norm = np.power(np.power(np.abs(group), 2 * p).sum(), 1.0 / (2 * p))
        if norm == 0.0:
            k = beta.layout.group_sizes[i]
            values[sl] = k ** (-1.0 / (2 * p))
            degenerate.append(i)
        else:
            values[sl] = group / norm
    return BetaVector(values, beta.layout), degenerate


def init_beta(layout, p=1, mode="theorem", project=False):
    """Starting point for the solver.

    ``theorem``: uniform 1/k^(1/2p) per group, exactly on the sphere.
    ``practical``: 10 on the identity slot (index 0), 0.05 elsewhere; pass
    ``project=True`` to renormalize each group onto the sphere.
    """
    p = int(p)
    values = np.empty(layout.total)
    if mode == "theorem":
        for i, k in enumerate(layout.group_sizes):
            values[layout.slice(i)] = k ** (-1.0 / (2 * p))
    elif mode == "practical":
        for i in range(layout.n_groups):
            sl = layout.slice(i)
            values[sl] = 0.05
            values[sl.start] = 10.0
    else:
        raise ValueError(f"unknown init mode: {mode}")
    beta = BetaVector(values, layout)
    if project:
        beta, _ = project_group_sphere(beta, p)
    return beta


def estimate_lipschitz(objective, layout, p, n_pairs=100, safety=2.0, seed=0):
    """Probe max ||grad f(x) - grad f(y)|| / ||x - y|| over random feasible
    pairs, inflated by a safety factor. Used when no constant is supplied."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_pairs):
        x = _random_feasible(layout, p, rng)
        y = _random_feasible(layout, p, rng)
        dist = np.linalg.norm(x - y)
        if dist < 1e-12:
            continue
        gx = objective.value_and_grad(x)[1]
        gy = objective.value_and_grad(y)[1]
        best = max(best, float(np.linalg.norm(gx - gy)) / dist)
    if best == 0.0:
        best = 1.0
    return safety * best


def _random_feasible(layout, p, rng):
    beta = BetaVector(rng.standard_normal(layout.total), layout)
    projected, _ = project_group_sphere(beta, p)
    return projected.values


def disco_optimize(oracle, layout, candidates, params, init=None):
    """Run the relaxation solver against a differentiable model oracle.

    Builds the blended-input objective from the oracle and candidate vectors
    and dispatches on ``params.mode``. Returns the full OptimizerTrace.
    """
    objective = BlendedModelObjective(oracle, candidates, layout, params.p)
    return optimize_smooth(objective, layout, params, init=init)


def optimize_smooth(objective, layout, params, init=None):
    """Solver core on an explicit SmoothObjective.

    theorem mode iterates
        beta <- project(prox_l1(beta - eta * grad f(beta), eta*lam))
    with a fixed step eta < 1/L; practical mode runs adaptive-moment updates
    on f + lam*||.||_1 without the sphere constraint.
    """
    if params.mode == "practical":
        return _optimize_adam(objective, layout, params, init)
    return _optimize_projected_prox(objective, layout, params, init)


def _optimize_projected_prox(objective, layout, params, init):
    p = params.p
    eta = params.eta
    if eta is None:
        lipschitz = params.lipschitz
        if lipschitz is None:
            lipschitz = estimate_lipschitz(objective, layout, p)
        eta = 0.9 / lipschitz

    beta = init.copy() if init is not None else init_beta(layout, p, "theorem")
    trace = OptimizerTrace(eta=eta)
    _record_point(trace, objective, beta, params)

    for _ in range(params.max_iters):
        f_val, grad = objective.value_and_grad(beta.values)
        if not (np.isfinite(f_val) and np.all(np.isfinite(grad))):
            trace.aborted = True
            trace.final_beta = beta
            raise NonFiniteObjective("gradient step produced non-finite values", trace)
        stepped = beta.values - eta * grad
        shrunk = prox_l1(stepped, eta * params.effective_lam)
        # a group fully zeroed by the prox has no projection; keep its
        # pre-prox values for this iteration so feasibility stays defined
        for i in range(layout.n_groups):
            sl = layout.slice(i)
            if np.all(shrunk[sl] == 0.0):
                shrunk[sl] = stepped[sl]
        beta, degenerate = project_group_sphere(BetaVector(shrunk, layout), p)
        if degenerate:
            trace.degenerate_groups.append((len(trace.phi_values), degenerate))
        _record_point(trace, objective, beta, params)

    trace.final_beta = beta
    return trace


def _optimize_adam(objective, layout, params, init):
    eta = params.eta if params.eta is not None else 1.0
    beta = init.copy() if init is not None else init_beta(layout, params.p, "practical")
    trace = OptimizerTrace(eta=eta)
    _record_point(trace, objective, beta, params)

    values = beta.values.copy()
    m = np.zeros_like(values)
    v = np.zeros_like(values)
    for step in range(1, params.max_iters + 1):
        f_val, grad = objective.value_and_grad(values)
        grad = grad + params.effective_lam * np.sign(values)
        if not (np.isfinite(f_val) and np.all(np.isfinite(grad))):
            trace.aborted = True
            trace.final_beta = BetaVector(values, layout)
            raise NonFiniteObjective("adam step produced non-finite values", trace)
        m = params.adam_beta1 * m + (1 - params.adam_beta1) * grad
        v = params.adam_beta2 * v + (1 - params.adam_beta2) * grad * grad
        m_hat = m / (1 - params.adam_beta1**step)
        v_hat = v / (1 - params.adam_beta2**step)
        values = values - eta * m_hat / (np.sqrt(v_hat) + params.adam_eps)
        beta = BetaVector(values, layout)
        _record_point(trace, objective, beta, params)

    trace.final_beta = beta
    return trace


def _record_point(trace, objective, beta, params):
    f = objective.value(beta.values)
    h = params.effective_lam * float(np.abs(beta.values).sum())
    trace.record(f + h, f, h, feasibility_residual(beta, params.p))


def round_to_onehot(beta):
    """Discrete index per group: argmax of |beta|, ties to the lowest slot.

    Slot 0 is the original token, so an all-ties group rounds to "keep".
    """
    index = np.empty(beta.layout.n_groups, dtype=int)
    for i in range(beta.layout.n_groups):
        index[i] = int(np.argmax(np.abs(beta.group(i))))
    return index


def enforce_budget(index, beta, m):
    """Keep at most ``m`` changed positions, preferring large rounding margins.

    The margin of a changed position is |beta[chosen]| - |beta[slot 0]|;
    positions beyond the budget revert to slot 0.
    """
    if m < 0:
        raise ValueError("budget must be nonnegative")
    index = np.asarray(index, dtype=int).copy()
    changed = [i for i in range(len(index)) if index[i] != 0]
    if len(changed) <= m:
        return index
    margins = []
    for i in changed:
        group = np.abs(beta.group(i))
        margins.append((-(group[index[i]] - group[0]), i))
    margins.sort()
    for _, i in margins[m:]:
        index[i] = 0
    return index


def default_l1_weight(loss_at_original, group_sizes):
    """Penalty weight 3*C(s) / (10n + 0.05*sum(k_i - 1)).

    The denominator is the L1 mass of the practical-mode starting point, so
    the penalty starts at three times the unperturbed loss C(s).
    """
    n = len(group_sizes)
    denom = 10.0 * n + 0.05 * sum(k - 1 for k in group_sizes)
    return 3.0 * float(loss_at_original) / denom


def warn_unused_shaping_params(config):
    """Warn about accepted-but-inert keys (gamma, kappa) from config files.

    These shaping constants have published default values (6*C(s)/sqrt(n)
    and 0.2) but enter no term of the objective implemented here; they are
    parsed for config compatibility and ignored.
    """
    present = [key for key in ("gamma", "kappa") if key in config]
    for key in present:
        warnings.warn(
            f"config key '{key}' is accepted but unused by the relaxation objective",
            stacklevel=2,
        )
    return present
