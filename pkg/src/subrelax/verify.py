"""Property suites: empirical checks of the solver guarantees and the
submodularity facts, runnable from the CLI and reused by the test suite.

Each suite draws its own seeded instances, so repeated runs are
deterministic. A suite returns a SuiteResult whose ``detail`` summarizes the
worst case observed; ``passed`` is the verdict against the suite's fixed
tolerances.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import models, relax, setfn
from .candidates import CandidateSet


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    runtime_seconds: float
    checks: int


def _finish(name, passed, detail, start, checks):
    return SuiteResult(
        name=name,
        passed=bool(passed),
        detail=detail,
        runtime_seconds=time.perf_counter() - start,
        checks=checks,
    )


def fd_gradient(fn, x, step=1e-5):
    """Central-difference gradient of a scalar function of a flat array."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump[i] = step
        grad[i] = (fn(x + bump) - fn(x - bump)) / (2 * step)
    return grad


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=float).ravel()
    numeric = np.asarray(numeric, dtype=float).ravel()
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-6)
    return float(np.linalg.norm(analytic - numeric) / scale)


# ---------------------------------------------------------------------------
# soft-threshold prox


def prox_suite(seed=0, n_scalars=10_000, n_grid=200):
    """Exactness of the soft threshold against its piecewise definition and a
    dense one-dimensional grid argmin of the proximal objective."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-3.0, 3.0, size=n_scalars)
    thresholds = rng.uniform(0.0, 1.5, size=n_scalars)

    worst_piecewise = 0.0
    for x, t in zip(xs, thresholds):
        got = float(relax.prox_l1(np.array([x]), t)[0])
        if x > t:
            want = x - t
        elif x < -t:
            want = x + t
        else:
            want = 0.0
        worst_piecewise = max(worst_piecewise, abs(got - want))

    resolution = 1e-4
    worst_grid = 0.0
    for x, t in zip(xs[:n_grid], thresholds[:n_grid]):
        eta = 1.0  # threshold already folded into t = eta*lambda
        grid = np.arange(-abs(x) - 1.0, abs(x) + 1.0, resolution)
        objective = t * np.abs(grid) + (grid - x) ** 2 / (2 * eta)
        best = grid[int(np.argmin(objective))]
        got = float(relax.prox_l1(np.array([x]), t)[0])
        worst_grid = max(worst_grid, abs(got - best))

    passed = worst_piecewise <= 1e-12 and worst_grid <= resolution
    detail = f"max piecewise gap {worst_piecewise:.2e}, max grid gap {worst_grid:.2e}"
    return _finish("prox", passed, detail, start, n_scalars + n_grid)


# ---------------------------------------------------------------------------
# sphere projection


def _random_layout(rng, max_groups=4, max_size=5):
    sizes = [int(rng.integers(1, max_size + 1)) for _ in range(int(rng.integers(1, max_groups + 1)))]
    return relax.GroupLayout(sizes)


def projection_suite(seed=0, n_vectors=1000):
    """Feasibility and idempotence of the per-group sphere projection."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_residual = 0.0
    worst_idempotence = 0.0
    checks = 0
    for _ in range(n_vectors):
        layout = _random_layout(rng)
        p = int(rng.integers(1, 4))
        beta = relax.BetaVector(3.0 * rng.standard_normal(layout.total), layout)
        projected, _ = relax.project_group_sphere(beta, p)
        worst_residual = max(worst_residual, relax.feasibility_residual(projected, p))
        again, _ = relax.project_group_sphere(projected, p)
        worst_idempotence = max(
            worst_idempotence, float(np.max(np.abs(again.values - projected.values)))
        )
        checks += 1
    passed = worst_residual <= 1e-9 and worst_idempotence <= 1e-12
    detail = f"max |Z-1| {worst_residual:.2e}, max reprojection move {worst_idempotence:.2e}"
    return _finish("projection", passed, detail, start, checks)


# ---------------------------------------------------------------------------
# fixed-step solver: descent and rate bound


def _quadratic_instance(rng, max_groups=4, max_size=5, lam_choices=(0.0,)):
    layout = _random_layout(rng, max_groups=max_groups, max_size=max_size)
    # positive targets outside the unit ball keep the gradient step from
    # collapsing a group toward the origin, where the sphere projection
    # would break the descent argument
    target = rng.uniform(0.5, 2.0, size=layout.total)
    for i in range(layout.n_groups):
        sl = layout.slice(i)
        norm = np.linalg.norm(target[sl])
        if norm < 1.2:
            target[sl] *= 1.2 / norm
    diag = rng.uniform(0.5, 2.0, size=layout.total)
    objective = relax.QuadraticObjective(target, np.diag(diag))
    lam = float(rng.choice(lam_choices))
    return layout, objective, lam


def descent_suite(seed=0, n_instances=10, iters=500):
    """Monotone decrease of the penalized objective under the fixed step."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_increase = -np.inf
    checks = 0
    for _ in range(n_instances):
        layout, objective, lam = _quadratic_instance(rng, lam_choices=(0.0, 1e-3, 1e-2))
        eta = 0.9 / objective.lipschitz
        params = relax.RelaxationParams(lam=lam, eta=eta, max_iters=iters, mode="theorem")
        trace = relax.optimize_smooth(objective, layout, params)
        phis = np.asarray(trace.phi_values)
        worst_increase = max(worst_increase, float(np.max(np.diff(phis))))
        checks += len(phis) - 1
    passed = worst_increase <= 1e-12
    detail = f"max per-step increase {worst_increase:.2e}"
    return _finish("descent", passed, detail, start, checks)


def rate_bound_rhs(layout, p, eta, t):
    """(1 / 2*eta*t) * sum_i k_i * (1 + k_i^(-1/2p))^2."""
    total = sum(k * (1.0 + k ** (-1.0 / (2 * p))) ** 2 for k in layout.group_sizes)
    return total / (2.0 * eta * t)


def _locate_optimum(objective, layout, params, seed, starts=12, iters=4000):
    """Best feasible penalized value found by an independent projected
    subgradient method with diminishing steps, from many starts."""
    rng = np.random.default_rng(seed)
    p = params.p
    lam = params.effective_lam

    def phi(values):
        return objective.value(values) + lam * float(np.abs(values).sum())

    best = np.inf
    start_points = [relax.init_beta(layout, p, "theorem").values]
    for _ in range(starts):
        raw = relax.BetaVector(rng.standard_normal(layout.total), layout)
        start_points.append(relax.project_group_sphere(raw, p)[0].values)
    base_step = 0.5 / max(objective.lipschitz, 1.0)
    for x0 in start_points:
        x = x0.copy()
        best = min(best, phi(x))
        for t in range(1, iters + 1):
            g = objective.value_and_grad(x)[1] + lam * np.sign(x)
            stepped = x - (base_step / np.sqrt(t)) * g
            x = relax.project_group_sphere(relax.BetaVector(stepped, layout), p)[0].values
            value = phi(x)
            if value < best:
                best = value
    return best


def rate_suite(seed=0, n_instances=5, iters=500):
    """Convergence-rate bound at every prefix length of the solver run."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    violations = 0
    worst_margin = -np.inf
    checks = 0
    for idx in range(n_instances):
        layout, objective, lam = _quadratic_instance(rng, lam_choices=(0.0, 1e-3))
        eta = 0.9 / objective.lipschitz
        params = relax.RelaxationParams(lam=lam, eta=eta, max_iters=iters, mode="theorem")
        trace = relax.optimize_smooth(objective, layout, params)
        phi_star = _locate_optimum(objective, layout, params, seed=1000 + idx)
        for t in range(1, iters + 1):
            lhs = trace.phi_values[t] - phi_star  # phi after t iterations
            rhs = rate_bound_rhs(layout, params.p, eta, t)
            margin = lhs - rhs
            worst_margin = max(worst_margin, margin)
            if margin > 0:
                violations += 1
            checks += 1
    passed = violations == 0
    detail = f"{violations} violations, worst lhs-rhs margin {worst_margin:.2e}"
    return _finish("rate", passed, detail, start, checks)


# ---------------------------------------------------------------------------
# greedy guarantee on coverage instances


def random_coverage_instance(rng, max_elements=10, universe=12):
    n_sets = int(rng.integers(4, max_elements + 1))
    sets = []
    for _ in range(n_sets):
        mask = rng.random(universe) < rng.uniform(0.2, 0.5)
        sets.append({int(u) for u in np.flatnonzero(mask)})
    oracle = setfn.CoverageOracle(sets)
    k = int(rng.integers(1, 5))
    return oracle, setfn.GroundSet(n_sets), k


def greedy_suite(seed=0, n_instances=50):
    """Classic approximation guarantee of greedy on random coverage
    instances, including the per-iteration bound."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    tolerance = 1e-9
    violations = 0
    worst_gap = -np.inf
    checks = 0
    for _ in range(n_instances):
        oracle, ground, k = random_coverage_instance(rng)
        constraint = setfn.CardinalityConstraint(k)
        _, opt = setfn.brute_force_maximize(oracle, ground, constraint)
        trace = setfn.greedy_maximize(oracle, ground, constraint)
        for t, value in enumerate(trace.values, start=1):
            bound = (1.0 - np.exp(-t / k)) * opt
            gap = bound - value
            worst_gap = max(worst_gap, gap)
            if gap > tolerance:
                violations += 1
            checks += 1
        if trace.values:
            final_bound = (1.0 - 1.0 / np.e) * opt
            if final_bound - trace.values[-1] > tolerance and len(trace.values) >= k:
                violations += 1
            checks += 1
    passed = violations == 0
    detail = f"{violations} bound violations, worst bound-value gap {worst_gap:.2e}"
    return _finish("greedy", passed, detail, start, checks)


# ---------------------------------------------------------------------------
# submodularity of the pooled-convolution and recurrent oracles


def _random_candidates(rng, n_positions, dim, max_alternates=2, scale=1.0):
    ids = []
    vecs = []
    next_id = 0
    for i in range(n_positions):
        k = 1 + int(rng.integers(1, max_alternates + 1))
        ids.append(list(range(next_id, next_id + k)))
        next_id += k
        vecs.append(scale * rng.standard_normal((k, dim)))
    return CandidateSet(ids, vecs)


def random_wcnn_instance(rng, max_positions=4, max_alternates=2):
    """Pooled-convolution oracle in its submodular configuration:
    non-overlapping single-position windows, nonnegative readout, and a
    non-decreasing activation."""
    n = int(rng.integers(2, max_positions + 1))
    dim = int(rng.integers(2, 4))
    n_filters = int(rng.integers(1, 4))
    model = models.WcnnModel(
        filters=rng.standard_normal((n_filters, dim)),
        biases=rng.standard_normal(n_filters),
        out_weights=np.abs(rng.standard_normal(n_filters)),
        out_bias=float(rng.standard_normal()),
        window=1,
        stride=1,
        activation="identity",
    )
    candidates = _random_candidates(rng, n, dim, max_alternates=max_alternates)
    return model, candidates


def random_rnn_instance(rng, max_positions=4, max_alternates=2):
    """Recurrent oracle in its submodular configuration: positive recurrence
    and readout weights, non-decreasing concave activation."""
    n = int(rng.integers(2, max_positions + 1))
    dim = int(rng.integers(2, 4))
    model = models.RnnModel(
        w=float(rng.uniform(0.2, 1.2)),
        m=rng.standard_normal(dim),
        b=float(rng.standard_normal()),
        y=float(rng.uniform(0.2, 2.0)),
        activation="concave-exp",
    )
    candidates = _random_candidates(rng, n, dim, max_alternates=max_alternates, scale=0.8)
    return model, candidates


def _submodularity_run(make_instance, rng, n_instances, tolerance=1e-9):
    violations = 0
    worst = 0.0
    checked = 0
    instances = 0
    while instances < n_instances:
        model, candidates = make_instance(rng)
        filtered = _quiet_filter(model, candidates)
        if all(len(ids) == 1 for ids in filtered.token_ids):
            continue  # vacuous ground set; draw another instance
        oracle = models.as_set_oracle(model, filtered)
        ground = setfn.GroundSet(filtered.n_positions)
        report = setfn.check_submodular(oracle, ground, tolerance=tolerance)
        violations += len(report.violations)
        if report.violations:
            worst = max(worst, max(v.gap for v in report.violations))
        checked += report.cases_checked
        instances += 1
    return violations, worst, checked


def _quiet_filter(model, candidates):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return models.filter_output_increasing(model, candidates)


def submodularity_suite(seed=0, n_instances=50):
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    w_viol, w_worst, w_checked = _submodularity_run(random_wcnn_instance, rng, n_instances)
    r_viol, r_worst, r_checked = _submodularity_run(random_rnn_instance, rng, n_instances)
    passed = w_viol == 0 and r_viol == 0
    detail = (
        f"conv: {w_viol} violations (worst {w_worst:.2e}); "
        f"rnn: {r_viol} violations (worst {r_worst:.2e})"
    )
    return _finish("submodularity", passed, detail, start, w_checked + r_checked)


# ---------------------------------------------------------------------------
# gradient fidelity


def _check_model_gradients(make_point, n_points, tol):
    worst = 0.0
    for _ in range(n_points):
        fn, xs, analytic = make_point()
        numeric = fd_gradient(fn, xs.ravel()).reshape(xs.shape)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def gradient_suite(seed=0, n_points=100, tol=1e-5):
    """Analytic gradients of the three oracles and of the relaxation chain
    rule against central finite differences."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = {}

    def mean_point():
        n, d = int(rng.integers(1, 5)), int(rng.integers(2, 5))
        model = models.MeanEmbeddingModel(
            rng.standard_normal(d),
            direction=rng.choice(["maximize-distance", "minimize-distance"]),
            reduce=rng.choice(["mean", "sum"]),
        )
        xs = rng.standard_normal((n, d))
        value, grad = model.value_and_grad(xs)
        fn = lambda flat: model.value_and_grad(flat.reshape(n, d))[0]  # noqa: E731
        return fn, xs, grad

    def wcnn_point():
        while True:
            h = int(rng.integers(1, 3))
            windows = int(rng.integers(1, 4))
            n = h * windows
            d = int(rng.integers(2, 4))
            n_filters = int(rng.integers(1, 4))
            model = models.WcnnModel(
                filters=rng.standard_normal((n_filters, h * d)),
                biases=rng.standard_normal(n_filters),
                out_weights=rng.standard_normal(n_filters),
                out_bias=float(rng.standard_normal()),
                window=h,
                stride=h,
                activation=rng.choice(["identity", "tanh", "sigmoid"]),
            )
            xs = rng.standard_normal((n, d))
            if _near_pooling_tie(model, xs):
                continue
            value, grad = model.value_and_grad(xs)
            fn = lambda flat: model.value_and_grad(flat.reshape(n, d))[0]  # noqa: E731
            return fn, xs, grad

    def rnn_point():
        n, d = int(rng.integers(1, 5)), int(rng.integers(2, 4))
        model = models.RnnModel(
            w=float(rng.uniform(0.2, 1.2)),
            m=rng.standard_normal(d),
            b=float(rng.standard_normal()),
            y=float(rng.uniform(0.2, 2.0)),
            activation=rng.choice(["concave-exp", "tanh", "identity"]),
        )
        xs = rng.standard_normal((n, d))
        value, grad = model.value_and_grad(xs)
        fn = lambda flat: model.value_and_grad(flat.reshape(n, d))[0]  # noqa: E731
        return fn, xs, grad

    worst["mean"] = _check_model_gradients(mean_point, n_points, tol)
    worst["wcnn"] = _check_model_gradients(wcnn_point, n_points, tol)
    worst["rnn"] = _check_model_gradients(rnn_point, n_points, tol)

    worst_chain = 0.0
    for _ in range(n_points):
        n = int(rng.integers(1, 4))
        d = int(rng.integers(2, 4))
        candidates = [rng.standard_normal((int(rng.integers(1, 4)), d)) for _ in range(n)]
        layout = relax.GroupLayout([c.shape[0] for c in candidates])
        p = int(rng.integers(1, 3))
        model = models.MeanEmbeddingModel(rng.standard_normal(d))
        objective = relax.BlendedModelObjective(model, candidates, layout, p)
        raw = relax.BetaVector(rng.uniform(0.3, 1.5, size=layout.total) * rng.choice([-1, 1], size=layout.total), layout)
        beta = relax.project_group_sphere(raw, p)[0]
        analytic = objective.value_and_grad(beta.values)[1]
        numeric = fd_gradient(objective.value, beta.values)
        worst_chain = max(worst_chain, relative_error(analytic, numeric))
    worst["chain"] = worst_chain

    passed = all(v <= tol for v in worst.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    return _finish("gradients", passed, detail, start, 4 * n_points)


def _near_pooling_tie(model, xs, margin=1e-4):
    windows = model._window_matrix(xs)
    pre = windows @ model.filters.T + model.biases
    if pre.shape[0] < 2:
        return False
    part = np.sort(pre, axis=0)
    return bool(np.any(part[-1] - part[-2] < margin))


# ---------------------------------------------------------------------------
# orchestration

SUITES = {
    "prox": prox_suite,
    "projection": projection_suite,
    "descent": descent_suite,
    "rate": rate_suite,
    "greedy": greedy_suite,
    "submodularity": submodularity_suite,
    "gradients": gradient_suite,
}


def run_suites(names=None, seed=0):
    if names is None:
        names = list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suites: {unknown}; available: {sorted(SUITES)}")
    return [SUITES[name](seed=seed) for name in names]
