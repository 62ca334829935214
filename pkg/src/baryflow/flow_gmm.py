"""Gradient flow on Gaussian-mixture parameters under MW2 plus energies.

Each step solves the component coupling of the mixture distance for every
input at the current parameters, holds those couplings fixed (envelope
treatment of the inner argmin), and takes one descent step on the means,
Cholesky factors, component label logits, and optionally the weight logits.
Energies that lack a closed form on mixtures (target potential, internal
energy) are estimated by Monte-Carlo through the reparametrization trick, so
their gradients reach mu and L along the sampling path.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import ot
from .flow_empirical import TraceRecord
from .functionals import (
    FunctionalSpec,
    entropy_potential,
    hinge_repulsion,
    internal_energy_mc,
    target_potential,
)
from .gaussian import (
    GaussianComponent,
    LabeledGMM,
    bures_w2_grad,
    bures_w2_sq,
    bures_w2_sq_cov,
    em_fit,
    matrix_sqrt_psd,
    mw2_cost_matrix,
    sample_reparam,
)
from .measures import BarycentricCoordinates, EmpiricalMeasure, softmax

__all__ = [
    "GmmFlowConfig",
    "gmm_flow_step",
    "run_gmm_flow",
    "fixed_point_gaussian_barycenter",
    "mw2_fixed_plan_value_grad",
]

CHOL_DIAG_FLOOR = 1e-6
GMM_INIT_MODES = ("em", "random")


@dataclass(frozen=True)
class GmmFlowConfig:
    n_components: int
    n_iter: int
    coordinates: BarycentricCoordinates
    step_size: float = 0.1
    label_weight: float = 0.0
    mc_samples: int = 128
    functional: FunctionalSpec = field(default_factory=FunctionalSpec)
    diag_only: bool = False
    flow_weights: bool = False
    init_mode: str = "em"
    init_samples: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.n_components < 1 or self.n_iter < 0:
            raise ValueError("n_components >= 1 and n_iter >= 0 required")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.label_weight < 0 or self.mc_samples < 1 or self.init_samples < 1:
            raise ValueError("label_weight >= 0 and sample counts >= 1 required")
        if self.init_mode not in GMM_INIT_MODES:
            raise ValueError(f"init_mode must be one of {GMM_INIT_MODES}")


def mw2_fixed_plan_value_grad(state: LabeledGMM, other: LabeledGMM,
                              omega: np.ndarray, beta: float = 0.0):
    """Value and gradients of the coupling objective at a fixed plan.

    Objective: sum_ij omega_ij (W2(P_i, Q_j)^2 + beta ||nu_i - nu_j||^2),
    differentiated w.r.t. the state's means, Cholesky factors, and component
    label vectors (returned w.r.t. nu directly, before any logit chain rule).
    """
    omega = np.asarray(omega, dtype=float)
    n, m = state.n_components, other.n_components
    if omega.shape != (n, m):
        raise ValueError("omega shape does not match the component counts")
    d = state.dim
    grad_mu = np.zeros((n, d))
    grad_l = np.zeros((n, d, d))
    value = 0.0
    for i, ci in enumerate(state.components):
        for j, cj in enumerate(other.components):
            w = omega[i, j]
            if w == 0.0:
                value += 0.0
                continue
            value += w * bures_w2_sq(ci, cj)
            dmu, dl = bures_w2_grad(ci, cj)
            grad_mu[i] += w * dmu
            grad_l[i] += w * dl
    grad_nu = None
    if beta > 0 and state.nu is not None and other.nu is not None:
        diff_sq = ot.squared_distances(state.nu, other.nu)
        value += beta * float((omega * diff_sq).sum())
        grad_nu = 2.0 * beta * (
            omega.sum(axis=1)[:, None] * state.nu - omega @ other.nu)
    return value, grad_mu, grad_l, grad_nu


def _nu_logits(nu: np.ndarray) -> np.ndarray:
    # softmax(log nu) == nu on the simplex, so this round-trips exactly
    return np.log(np.maximum(nu, 1e-12))


def _energy_grads(mus, chols, nu_logits, weights, cfg, rng):
    """Weighted energies for a mixture state: entropy on component labels,
    repulsion on means, target potential and internal energy by Monte-Carlo.

    Returns (v, u, g, grads) where grads update (mu, L, nu_logits, w_logits).
    """
    spec = cfg.functional
    k, d = mus.shape
    v = u = g = 0.0
    g_mu = np.zeros((k, d))
    g_l = np.zeros((k, d, d))
    g_nu = None if nu_logits is None else np.zeros_like(nu_logits)
    g_w = np.zeros(k)
    if not spec.any_active:
        return v, u, g, g_mu, g_l, g_nu, g_w

    gmm = LabeledGMM(weights, tuple(
        GaussianComponent(mus[i], chols[i]) for i in range(k)))
    if spec.entropy_weight > 0:
        if nu_logits is None:
            raise ValueError("entropy energy requires component labels")
        ev, eg = entropy_potential(nu_logits)
        v += spec.entropy_weight * ev
        g_nu = g_nu + spec.entropy_weight * eg
    if spec.repulsion_weight > 0:
        if nu_logits is None:
            raise ValueError("repulsion energy requires component labels")
        hard = np.argmax(nu_logits, axis=1)
        rv, rg = hinge_repulsion(mus, hard, spec.repulsion_margin,
                                 spec.repulsion_metric)
        u += spec.repulsion_weight * rv
        g_mu = g_mu + spec.repulsion_weight * rg
    if spec.target_weight > 0:
        z, idx, eps = sample_reparam(gmm, cfg.mc_samples, rng)
        tv, tg, _ = target_potential(EmpiricalMeasure(z), spec.target_measure)
        v += spec.target_weight * tv
        for j in range(k):
            sel = idx == j
            g_mu[j] += spec.target_weight * tg[sel].sum(axis=0)
            g_l[j] += spec.target_weight * np.tril(tg[sel].T @ eps[sel])
    if spec.internal_weight > 0:
        iv, im, il, iw = internal_energy_mc(gmm, cfg.mc_samples, rng)
        g += spec.internal_weight * iv
        g_mu = g_mu + spec.internal_weight * im
        g_l = g_l + spec.internal_weight * il
        g_w = g_w + spec.internal_weight * iw
    return v, u, g, g_mu, g_l, g_nu, g_w


def _step(state: LabeledGMM, inputs, cfg: GmmFlowConfig, rng, it: int):
    """One descent step; returns (new state, trace record at the old state)."""
    lam = cfg.coordinates.lam
    beta = cfg.label_weight
    k, d = state.n_components, state.dim
    mus = state.means()
    chols = state.chols()
    nu_logits = None if state.nu is None else _nu_logits(state.nu)
    nu = state.nu

    b_hat = 0.0
    grad_mu = np.zeros((k, d))
    grad_l = np.zeros((k, d, d))
    grad_nu_total = np.zeros_like(nu) if nu is not None else None
    grad_pi = np.zeros(k)

    def solve_one(q):
        cost = mw2_cost_matrix(state, q, beta=beta)
        plan, value = ot.solve_exact(state.weights, q.weights, cost)
        return cost, plan, value

    results = ot.parallel_map(solve_one, inputs)
    for l, q, (cost, plan, value) in zip(lam, inputs, results):
        b_hat += l * value
        _, gm, gl, gn = mw2_fixed_plan_value_grad(state, q, plan.coupling, beta)
        grad_mu += l * gm
        grad_l += l * gl
        if gn is not None:
            grad_nu_total += l * gn
        if cfg.flow_weights:
            # envelope by row scaling: d cost / d pi_i at fixed conditionals
            grad_pi += l * (plan.coupling * cost).sum(axis=1) / state.weights

    v, u, g, e_mu, e_l, e_nu, e_w = _energy_grads(
        mus, chols, nu_logits, state.weights, cfg, rng)

    grad_mu += e_mu
    grad_l += e_l

    # chain the nu gradient through the softmax logits
    grad_nu_logits = None
    if nu_logits is not None:
        grad_nu_logits = np.zeros_like(nu_logits)
        if grad_nu_total is not None:
            jn = nu * grad_nu_total - nu * (nu * grad_nu_total).sum(
                axis=1, keepdims=True)
            grad_nu_logits += jn
        if e_nu is not None:
            grad_nu_logits += e_nu

    a = cfg.step_size
    mus_new = mus - a * grad_mu
    chols_new = np.tril(chols - a * grad_l)
    if cfg.diag_only:
        chols_new = chols_new * np.eye(d)[None, :, :]
    diag_idx = np.arange(d)
    diags = chols_new[:, diag_idx, diag_idx]
    if np.any(diags < CHOL_DIAG_FLOOR):
        warnings.warn("Cholesky diagonal clamped to keep covariances PD",
                      RuntimeWarning, stacklevel=2)
        chols_new[:, diag_idx, diag_idx] = np.maximum(diags, CHOL_DIAG_FLOOR)

    nu_new = nu
    if grad_nu_logits is not None:
        nu_new = softmax(nu_logits - a * grad_nu_logits)

    weights_new = state.weights
    if cfg.flow_weights:
        w_logits = np.log(np.maximum(state.weights, 1e-12))
        chain = state.weights * (grad_pi - float(state.weights @ grad_pi)) + e_w
        weights_new = softmax(w_logits - a * chain)

    record = TraceRecord(
        it, float(b_hat), float(v), float(u), float(g),
        float(b_hat + v + u + g),
        float(np.sqrt((mus ** 2).sum() + (chols ** 2).sum())))
    new_state = LabeledGMM(
        weights_new,
        tuple(GaussianComponent(mus_new[i], chols_new[i]) for i in range(k)),
        nu=nu_new)
    return new_state, record


def gmm_flow_step(state: LabeledGMM, inputs, cfg: GmmFlowConfig,
                  rng=None) -> LabeledGMM:
    """One flow step on the mixture parameters (couplings held fixed)."""
    _check_inputs(state, inputs, cfg)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(
        cfg.seed if rng is None else rng)
    new_state, _ = _step(state, inputs, cfg, rng, 0)
    return new_state


def _check_inputs(state, inputs, cfg):
    if len(inputs) != len(cfg.coordinates):
        raise ValueError("need one input mixture per barycentric coordinate")
    d = state.dim
    if any(q.dim != d for q in inputs):
        raise ValueError("all mixtures must share one dimension")
    if cfg.label_weight > 0:
        if state.nu is None or any(q.nu is None for q in inputs):
            raise ValueError("label_weight > 0 requires labeled mixtures")


def _evaluate_state(state, inputs, cfg, rng, it):
    lam = cfg.coordinates.lam
    b_hat = 0.0
    for l, q in zip(lam, inputs):
        cost = mw2_cost_matrix(state, q, beta=cfg.label_weight)
        _, value = ot.solve_exact(state.weights, q.weights, cost)
        b_hat += l * value
    nu_logits = None if state.nu is None else _nu_logits(state.nu)
    v, u, g, *_ = _energy_grads(
        state.means(), state.chols(), nu_logits, state.weights, cfg, rng)
    mus, chols = state.means(), state.chols()
    return TraceRecord(it, float(b_hat), float(v), float(u), float(g),
                       float(b_hat + v + u + g),
                       float(np.sqrt((mus ** 2).sum() + (chols ** 2).sum())))


def _init_state(inputs, cfg: GmmFlowConfig, rng) -> LabeledGMM:
    labeled = all(q.nu is not None for q in inputs)
    pts_all, lab_all = [], []
    for q in inputs:
        pts, idx, _ = sample_reparam(q, cfg.init_samples, rng)
        pts_all.append(pts)
        if labeled:
            lab_all.append(np.argmax(q.nu, axis=1)[idx])
    pool = np.vstack(pts_all)
    labels = np.concatenate(lab_all) if labeled else None

    if cfg.init_mode == "em":
        if labeled:
            n_classes = int(labels.max()) + 1
            per_class = max(1, cfg.n_components // n_classes)
            state = em_fit(pool, labels, components_per_class=per_class,
                           seed=rng, diag=cfg.diag_only)
        else:
            state = em_fit(pool, components_per_class=cfg.n_components,
                           seed=rng, diag=cfg.diag_only)
    else:
        k = cfg.n_components
        idx = rng.choice(pool.shape[0], size=k, replace=pool.shape[0] < k)
        std = pool.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        chol = np.diag(std)
        comps = tuple(GaussianComponent(pool[i], chol) for i in idx)
        nu = None
        if labeled:
            n_classes = int(labels.max()) + 1
            nu = np.full((k, n_classes), 1.0 / n_classes)
        state = LabeledGMM(np.full(k, 1.0 / k), comps, nu=nu)
    return state


def run_gmm_flow(inputs, cfg: GmmFlowConfig, init: LabeledGMM | None = None):
    """Run the mixture-parameter flow; returns (final mixture, trace).

    Inputs are LabeledGMMs sharing one dimension. The default initialization
    fits a mixture by EM on a pooled reparametrized sample of all inputs;
    ``init`` overrides it. Deterministic for a fixed config seed.
    """
    rng = np.random.default_rng(cfg.seed)
    state = init if init is not None else _init_state(inputs, cfg, rng)
    _check_inputs(state, inputs, cfg)
    trace = []
    for it in range(cfg.n_iter):
        state, record = _step(state, inputs, cfg, rng, it)
        trace.append(record)
    trace.append(_evaluate_state(state, inputs, cfg, rng, cfg.n_iter))
    return state, trace


def fixed_point_gaussian_barycenter(gaussians, lam=None, tol: float = 1e-10,
                                    max_iter: int = 500) -> GaussianComponent:
    """Gaussian barycenter via the classical covariance fixed-point map.

    Iterates S <- S^{-1/2} (sum_k lam_k (S^{1/2} Sigma_k S^{1/2})^{1/2})^2
    S^{-1/2} until the W2 change between iterates drops below tol; the mean
    is the coordinate-weighted average of means.
    """
    comps = list(gaussians)
    if lam is None:
        lam = np.full(len(comps), 1.0 / len(comps))
    elif isinstance(lam, BarycentricCoordinates):
        lam = lam.lam
    else:
        lam = np.asarray(lam, dtype=float)
    if lam.shape != (len(comps),):
        raise ValueError("need one coordinate per Gaussian")
    mean = sum(l * c.mu for l, c in zip(lam, comps))
    covs = [c.cov for c in comps]
    s = sum(l * cv for l, cv in zip(lam, covs))
    for _ in range(max_iter):
        sh = matrix_sqrt_psd(s)
        vals, vecs = np.linalg.eigh(sh)
        if vals.min() <= 1e-14 * max(1.0, float(vals.max())):
            raise ot.ConvergenceError("fixed-point iterate became singular")
        sih = (vecs / vals) @ vecs.T
        t = sum(l * matrix_sqrt_psd(sh @ cv @ sh) for l, cv in zip(lam, covs))
        s_new = sih @ t @ t @ sih
        s_new = (s_new + s_new.T) / 2.0
        change = np.sqrt(bures_w2_sq_cov(mean, s, mean, s_new))
        s = s_new
        if change < tol:
            return GaussianComponent(mean, np.linalg.cholesky(s))
    raise ot.ConvergenceError(
        f"Gaussian barycenter fixed point did not converge in {max_iter} iterations")
