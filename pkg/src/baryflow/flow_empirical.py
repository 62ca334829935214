"""Mini-batch particle gradient flow for (labeled) empirical barycenters.

Each step solves one transport plan per input batch at the current particles
(block-coordinate descent: plans at fixed particles, then a gradient step on
particles and label logits). The exposed step size is the fixed-point
interpolation coefficient alpha' in (0, 1]; the raw Euclidean step is derived
internally as alpha' * n / 2, so that with zero energies and full batches one
step reproduces the classical update
z <- (1 - alpha') z + alpha' sum_k lambda_k T_k(z) exactly.

Trace entries record the objective of the measure they index: entry 0 is the
initialization evaluated on the first batches, entry t the post-step measure
evaluated on the batches used in step t.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import ot
from .functionals import FunctionalSpec, entropy_potential, hinge_repulsion, target_potential
from .gaussian import LabeledGMM, sample_reparam
from .measures import (
    BarycentricCoordinates,
    EmpiricalMeasure,
    LabeledEmpiricalMeasure,
    MiniBatch,
    logits_from_probs,
    one_hot,
    softmax,
)

__all__ = [
    "EmpiricalFlowConfig",
    "FlowState",
    "TraceRecord",
    "flow_step",
    "run_flow",
    "fixed_point_baseline",
    "EmpiricalSampler",
    "FullBatchSampler",
    "GaussianSampler",
    "GmmSampler",
]

INIT_MODES = ("gaussian", "subsample", "explicit")
LABEL_INIT_MODES = ("uniform", "random")
SOLVERS = ("exact", "entropic")


@dataclass(frozen=True)
class TraceRecord:
    """Objective decomposition at one iterate.

    ``b_hat`` is the mini-batch barycenter objective, ``v``/``u``/``g`` the
    weighted potential, interaction, and internal energies, ``f`` their sum.
    """

    iter: int
    b_hat: float
    v: float
    u: float
    g: float
    f: float
    param_norm: float


@dataclass(frozen=True)
class EmpiricalFlowConfig:
    n_particles: int
    batch_size: int
    n_iter: int
    coordinates: BarycentricCoordinates
    step_size: float = 0.5
    label_weight: float = 0.0
    functional: FunctionalSpec = field(default_factory=FunctionalSpec)
    init: str = "gaussian"
    init_measure: object = None
    label_init: str = "uniform"
    seed: int = 0
    solver: str = "exact"
    entropic_eps: float | None = None

    def __post_init__(self):
        if self.n_particles < 1 or self.batch_size < 1 or self.n_iter < 0:
            raise ValueError("n_particles, batch_size >= 1 and n_iter >= 0 required")
        if not 0.0 < self.step_size <= 1.0:
            raise ValueError("step_size is the interpolation coefficient in (0, 1]")
        if self.label_weight < 0:
            raise ValueError("label_weight must be >= 0")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")
        if self.init == "explicit" and self.init_measure is None:
            raise ValueError("init='explicit' requires init_measure")
        if self.label_init not in LABEL_INIT_MODES:
            raise ValueError(f"label_init must be one of {LABEL_INIT_MODES}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")


@dataclass(frozen=True)
class FlowState:
    """Current barycenter measure plus the objective trace up to it."""

    measure: object
    iter: int
    trace: tuple

    def __post_init__(self):
        if len(self.trace) != self.iter + 1:
            raise ValueError("trace must hold one record per iterate (iter + 1)")


# ---------------------------------------------------------------------------
# samplers: anything with .sample(m, rng) -> MiniBatch drives run_flow

class EmpiricalSampler:
    """I.i.d. draws (with replacement) from a fixed empirical measure."""

    def __init__(self, measure, source_index: int = 0):
        self.measure = measure
        self.source_index = source_index

    def sample(self, m: int, rng: np.random.Generator) -> MiniBatch:
        meas = self.measure
        idx = rng.choice(meas.n, size=m, p=meas.weights)
        labels = None
        if isinstance(meas, LabeledEmpiricalMeasure):
            labels = one_hot(meas.hard_labels()[idx], meas.n_classes)
        return MiniBatch(meas.points[idx], labels, self.source_index)


class FullBatchSampler:
    """Returns the complete dataset on every call (ignores m)."""

    def __init__(self, measure, source_index: int = 0):
        self.measure = measure
        self.source_index = source_index

    def sample(self, m: int, rng: np.random.Generator) -> MiniBatch:
        meas = self.measure
        labels = None
        if isinstance(meas, LabeledEmpiricalMeasure):
            labels = one_hot(meas.hard_labels(), meas.n_classes)
        return MiniBatch(meas.points, labels, self.source_index)


class GaussianSampler:
    """Unlabeled Gaussian generator N(mean, diag(std)^2 or chol chol^T)."""

    def __init__(self, mean, std=None, chol=None, source_index: int = 0):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        if (std is None) == (chol is None):
            raise ValueError("give exactly one of std or chol")
        self.std = None if std is None else np.broadcast_to(
            np.asarray(std, dtype=float), self.mean.shape).copy()
        self.chol = None if chol is None else np.asarray(chol, dtype=float)
        self.source_index = source_index

    def sample(self, m: int, rng: np.random.Generator) -> MiniBatch:
        eps = rng.standard_normal((m, self.mean.shape[0]))
        if self.std is not None:
            pts = self.mean + eps * self.std
        else:
            pts = self.mean + eps @ self.chol.T
        return MiniBatch(pts, None, self.source_index)


class GmmSampler:
    """Reparametrized draws from a mixture; labels from component nu rows."""

    def __init__(self, gmm: LabeledGMM, source_index: int = 0):
        self.gmm = gmm
        self.source_index = source_index

    def sample(self, m: int, rng: np.random.Generator) -> MiniBatch:
        pts, idx, _ = sample_reparam(self.gmm, m, rng)
        labels = None
        if self.gmm.nu is not None:
            hard = np.argmax(self.gmm.nu, axis=1)[idx]
            labels = one_hot(hard, self.gmm.nu.shape[1])
        return MiniBatch(pts, labels, self.source_index)


# ---------------------------------------------------------------------------

def _solve_plan(points, soft_labels, batch: MiniBatch, cfg: EmpiricalFlowConfig):
    beta = cfg.label_weight
    if beta > 0:
        cost = ot.joint_cost(points, batch.points, soft_labels, batch.labels, beta)
    else:
        cost = ot.joint_cost(points, batch.points)
    n, m = cost.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    if cfg.solver == "exact":
        return ot.solve_exact(a, b, cost)
    eps = cfg.entropic_eps
    if eps is None:
        med = float(np.median(cost.values))
        eps = 0.05 * med if med > 0 else 1e-6
    return ot.solve_entropic(a, b, cost, epsilon=eps, max_iter=2000, tol=1e-9)


def _check_batches(measure, batches, cfg):
    if len(batches) != len(cfg.coordinates):
        raise ValueError("need exactly one batch per barycentric coordinate")
    if cfg.label_weight > 0:
        if not isinstance(measure, LabeledEmpiricalMeasure):
            raise ValueError("label_weight > 0 requires a labeled flow state")
        if any(b.labels is None for b in batches):
            raise ValueError("label_weight > 0 requires labeled batches")


def _energy_value_and_grads(points, logits, spec: FunctionalSpec):
    """Weighted (V, U) energy values and their gradients for particles.

    Also returns the target-potential plan so callers can re-cost it at
    updated particles without a second solve.
    """
    v = u = 0.0
    g_pts = np.zeros_like(points)
    g_log = None if logits is None else np.zeros_like(logits)
    target_plan = None
    if spec.entropy_weight > 0:
        if logits is None:
            raise ValueError("entropy energy requires a labeled measure")
        ev, eg = entropy_potential(logits)
        v += spec.entropy_weight * ev
        g_log = g_log + spec.entropy_weight * eg
    if spec.target_weight > 0:
        tv, tg, target_plan = _target_with_plan(points, spec)
        v += spec.target_weight * tv
        g_pts = g_pts + spec.target_weight * tg
    if spec.repulsion_weight > 0:
        if logits is None:
            raise ValueError("repulsion energy requires a labeled measure")
        hard = np.argmax(softmax(logits), axis=1)
        rv, rg = hinge_repulsion(points, hard, spec.repulsion_margin,
                                 spec.repulsion_metric)
        u += spec.repulsion_weight * rv
        g_pts = g_pts + spec.repulsion_weight * rg
    return v, u, g_pts, g_log, target_plan


def _target_with_plan(points, spec):
    measure = EmpiricalMeasure(points)
    cost = ot.joint_cost(points, spec.target_measure.points)
    plan, value = ot.solve_auto(measure.weights, spec.target_measure.weights, cost)
    mapped = ot.barycentric_map(plan, spec.target_measure.points)
    grad = 2.0 * measure.weights[:, None] * (points - mapped)
    return float(value), grad, plan


def _energy_values_at(points, logits, spec: FunctionalSpec, target_plan):
    """Energy values only, reusing a previously solved target plan."""
    v = u = 0.0
    if spec.entropy_weight > 0:
        v += spec.entropy_weight * entropy_potential(logits)[0]
    if spec.target_weight > 0 and target_plan is not None:
        cost = ot.joint_cost(points, spec.target_measure.points)
        v += spec.target_weight * float((target_plan.coupling * cost.values).sum())
    if spec.repulsion_weight > 0:
        hard = np.argmax(softmax(logits), axis=1)
        u += spec.repulsion_weight * hinge_repulsion(
            points, hard, spec.repulsion_margin, spec.repulsion_metric)[0]
    return v, u


def _evaluate(measure, batches, cfg, it: int) -> TraceRecord:
    """Objective at a measure with freshly solved plans (used for entry 0
    of the trace and for standalone diagnostics)."""
    labeled = isinstance(measure, LabeledEmpiricalMeasure)
    soft = measure.soft_labels() if labeled else None
    lam = cfg.coordinates.lam
    results = ot.parallel_map(
        lambda b: _solve_plan(measure.points, soft, b, cfg), batches)
    b_hat = float(sum(l * c for l, (_, c) in zip(lam, results)))
    logits = measure.label_logits if labeled else None
    v, u, _, _, _ = _energy_value_and_grads(measure.points, logits, cfg.functional)
    f = b_hat + v + u
    return TraceRecord(it, b_hat, v, u, 0.0, f,
                       float(np.linalg.norm(measure.points)))


def flow_step(state: FlowState, batches, cfg: EmpiricalFlowConfig) -> FlowState:
    """One block-coordinate step: plans at fixed particles, then a descent
    step on particles (and label logits).

    The appended trace record holds the objective of the updated particles
    under the plans just solved, i.e. the mid-sweep value of the
    block-coordinate scheme; the next step's plan solve then improves on it.
    This keeps one plan solve per input per step.
    """
    measure = state.measure
    _check_batches(measure, batches, cfg)
    labeled = isinstance(measure, LabeledEmpiricalMeasure)
    x = measure.points
    n = x.shape[0]
    logits = measure.label_logits if labeled else None
    soft = softmax(logits) if labeled else None
    lam = cfg.coordinates.lam
    beta = cfg.label_weight

    results = ot.parallel_map(lambda b: _solve_plan(x, soft, b, cfg), batches)

    mapped = np.zeros_like(x)
    for l, (plan, _), batch in zip(lam, results, batches):
        mapped += l * ot.barycentric_map(plan, batch.points)
    grad_x = (2.0 / n) * (x - mapped)

    grad_logits = None
    if labeled:
        grad_logits = np.zeros_like(logits)
        if beta > 0:
            mapped_y = np.zeros_like(soft)
            for l, (plan, _), batch in zip(lam, results, batches):
                mapped_y += l * ot.barycentric_map(plan, batch.labels)
            resid = soft - mapped_y
            # softmax chain rule J v = y * v - y (y . v), row-wise
            grad_logits = (2.0 * beta / n) * (
                soft * resid - soft * (soft * resid).sum(axis=1, keepdims=True))

    _, _, e_gx, e_glog, target_plan = _energy_value_and_grads(
        x, logits, cfg.functional)
    raw_step = cfg.step_size * n / 2.0
    x_new = x - raw_step * (grad_x + e_gx)
    if labeled:
        logits_new = logits - raw_step * (grad_logits + e_glog)
        new_measure = LabeledEmpiricalMeasure(
            EmpiricalMeasure(x_new, measure.weights), logits_new,
            measure.n_classes, class_names=measure.class_names)
    else:
        new_measure = EmpiricalMeasure(x_new, measure.weights)

    # objective at the new particles under the plans of this step
    soft_new = softmax(logits_new) if labeled else None
    b_hat = 0.0
    for l, (plan, _), batch in zip(lam, results, batches):
        if beta > 0:
            cost = ot.joint_cost(x_new, batch.points, soft_new, batch.labels, beta)
        else:
            cost = ot.joint_cost(x_new, batch.points)
        b_hat += l * float((plan.coupling * cost.values).sum())
    v, u = _energy_values_at(
        x_new, logits_new if labeled else None, cfg.functional, target_plan)
    record = TraceRecord(state.iter + 1, b_hat, v, u, 0.0, b_hat + v + u,
                         float(np.linalg.norm(x_new)))
    return FlowState(new_measure, state.iter + 1, state.trace + (record,))


def _initial_measure(init_batches, cfg, rng):
    pts = init_batches[0].points
    labeled = any(b.labels is not None for b in init_batches)
    n_classes = init_batches[0].labels.shape[1] if init_batches[0].labels is not None else None
    n, d = cfg.n_particles, pts.shape[1]

    if cfg.init == "explicit":
        return cfg.init_measure
    if cfg.init == "gaussian":
        std = pts.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        x0 = rng.standard_normal((n, d)) * std
        if not labeled:
            return EmpiricalMeasure(x0)
        logits0 = _init_logits(n, n_classes, cfg, rng)
        return LabeledEmpiricalMeasure(EmpiricalMeasure(x0), logits0, n_classes)
    # subsample: pool the first batches pro rata the coordinates
    pool_pts = np.vstack([b.points for b in init_batches])
    if not labeled:
        idx = rng.choice(pool_pts.shape[0], size=n, replace=pool_pts.shape[0] < n)
        return EmpiricalMeasure(pool_pts[idx])
    pool_lab = np.vstack([b.labels for b in init_batches])
    idx = _stratified_choice(pool_lab.argmax(axis=1), n, rng)
    # moderately sharp logits: decisive in the joint cost, but with enough
    # softmax slope left that the flow can still relabel particles
    return LabeledEmpiricalMeasure(
        EmpiricalMeasure(pool_pts[idx]),
        logits_from_probs(pool_lab[idx], eps=0.02), n_classes)


def _stratified_choice(hard_labels, n, rng):
    """Subsample indices with class counts proportional to the pool's
    (largest-remainder rounding), so initial label masses track the data."""
    classes, counts = np.unique(hard_labels, return_counts=True)
    quota = counts * n / counts.sum()
    take = np.floor(quota).astype(int)
    rem = n - take.sum()
    if rem > 0:
        order = np.argsort(-(quota - take))
        take[order[:rem]] += 1
    picked = []
    for cls, k in zip(classes, take):
        pool = np.flatnonzero(hard_labels == cls)
        if k > 0:
            picked.append(rng.choice(pool, size=k, replace=pool.shape[0] < k))
    idx = np.concatenate(picked) if picked else np.arange(n)
    return np.sort(idx)


def _init_logits(n, n_classes, cfg, rng):
    if cfg.label_init == "uniform":
        return np.zeros((n, n_classes))
    return 0.01 * rng.standard_normal((n, n_classes))


def run_flow(inputs, cfg: EmpiricalFlowConfig):
    """Run the full mini-batch flow; returns (final measure, trace).

    ``inputs`` are samplers exposing sample(m, rng) -> MiniBatch (datasets
    wrapped in EmpiricalSampler, generators, or GmmSampler). Deterministic
    for a fixed config seed.
    """
    if len(inputs) != len(cfg.coordinates):
        raise ValueError("need one input per barycentric coordinate")
    rng = np.random.default_rng(cfg.seed)
    init_batches = [inp.sample(cfg.batch_size, rng) for inp in inputs]
    if cfg.label_weight > 0 and any(b.labels is None for b in init_batches):
        raise ValueError("label_weight > 0 requires labeled inputs")
    measure = _initial_measure(init_batches, cfg, rng)
    state = FlowState(measure, 0, (_evaluate(measure, init_batches, cfg, 0),))
    for _ in range(cfg.n_iter):
        batches = [inp.sample(cfg.batch_size, rng) for inp in inputs]
        state = flow_step(state, batches, cfg)
    return state.measure, list(state.trace)


def fixed_point_baseline(datasets, cfg: EmpiricalFlowConfig, alpha: float | None = None):
    """Full-batch fixed-point iterations (the classical discrete updates).

    Particles interpolate toward the coordinate-weighted barycentric maps and
    label probability vectors are propagated through the same plans. ``alpha``
    defaults to cfg.step_size; alpha = 0 returns the initialization.
    """
    if len(datasets) != len(cfg.coordinates):
        raise ValueError("need one dataset per barycentric coordinate")
    a = cfg.step_size if alpha is None else float(alpha)
    if not 0.0 <= a <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    rng = np.random.default_rng(cfg.seed)
    full_batches = [FullBatchSampler(ds, k).sample(0, rng)
                    for k, ds in enumerate(datasets)]
    measure = _initial_measure(full_batches, cfg, rng)

    labeled = isinstance(measure, LabeledEmpiricalMeasure)
    x = np.array(measure.points)
    y = softmax(measure.label_logits) if labeled else None
    lam = cfg.coordinates.lam
    beta = cfg.label_weight

    for _ in range(cfg.n_iter):
        soft = y if (labeled and beta > 0) else None
        results = ot.parallel_map(
            lambda b: _solve_plan(x, soft, b, cfg), full_batches)
        mapped = np.zeros_like(x)
        mapped_y = np.zeros_like(y) if labeled else None
        for l, (plan, _), batch in zip(lam, results, full_batches):
            mapped += l * ot.barycentric_map(plan, batch.points)
            if labeled:
                mapped_y += l * ot.barycentric_map(plan, batch.labels)
        x = (1.0 - a) * x + a * mapped
        if labeled:
            y = (1.0 - a) * y + a * mapped_y

    if labeled:
        return LabeledEmpiricalMeasure(
            EmpiricalMeasure(x, measure.weights), logits_from_probs(y),
            measure.n_classes, class_names=measure.class_names)
    return EmpiricalMeasure(x, measure.weights)
