"""Gaussian and Gaussian-mixture machinery.

Covariances are parametrized by lower-triangular Cholesky factors L with
positive diagonal (Sigma = L L^T), which is what the mixture flow optimizes
and what the reparametrized sampler consumes directly.

Provides the closed-form squared 2-Wasserstein distance between Gaussians
(Bures metric) with its analytic gradient, the component-level mixture
distance MW2 (with an optional label term on component label vectors),
EM fitting, reparametrized sampling, and JSON (de)serialization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from . import ot
from .measures import one_hot, validate_simplex

__all__ = [
    "GaussianComponent",
    "LabeledGMM",
    "matrix_sqrt_psd",
    "bures_w2_sq",
    "bures_w2_sq_cov",
    "bures_w2_grad",
    "mw2_sq",
    "mw2_cost_matrix",
    "em_fit",
    "sample_reparam",
    "gmm_log_density",
    "component_log_probs",
    "gmm_to_json",
    "gmm_from_json",
    "save_gmm",
    "load_gmm",
]

GMM_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class GaussianComponent:
    """One Gaussian N(mu, L L^T) with lower-triangular Cholesky factor L."""

    mu: np.ndarray
    chol: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        L = np.atleast_2d(np.asarray(self.chol, dtype=float))
        d = mu.shape[0]
        if L.shape != (d, d):
            raise ValueError(f"chol must be ({d}, {d}), got {L.shape}")
        if not np.allclose(L, np.tril(L)):
            raise ValueError("chol must be lower-triangular")
        if np.any(np.diag(L) <= 0):
            raise ValueError("chol must have strictly positive diagonal")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(L))):
            raise ValueError("component parameters contain non-finite entries")
        mu = np.array(mu, copy=True)
        L = np.array(np.tril(L), copy=True)
        mu.flags.writeable = False
        L.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "chol", L)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def cov(self) -> np.ndarray:
        return self.chol @ self.chol.T

    @staticmethod
    def from_cov(mu, cov) -> "GaussianComponent":
        return GaussianComponent(mu, np.linalg.cholesky(np.asarray(cov, dtype=float)))


@dataclass(frozen=True)
class LabeledGMM:
    """Gaussian mixture with optional per-component label vectors.

    ``nu`` rows, when present, lie on the class simplex.
    """

    weights: np.ndarray
    components: tuple
    nu: np.ndarray | None = None

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        comps = tuple(self.components)
        if len(comps) != w.shape[0] or len(comps) == 0:
            raise ValueError("need one weight per component")
        if not validate_simplex(w, tol=1e-9):
            raise ValueError("mixture weights must lie on the simplex")
        d = comps[0].dim
        if any(c.dim != d for c in comps):
            raise ValueError("components must share one dimension")
        w = np.array(w, copy=True)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)
        if self.nu is not None:
            nu = np.atleast_2d(np.asarray(self.nu, dtype=float))
            if nu.shape[0] != len(comps):
                raise ValueError("nu must have one row per component")
            for row in nu:
                if not validate_simplex(row, tol=1e-6):
                    raise ValueError("nu rows must lie on the class simplex")
            nu = np.array(nu, copy=True)
            nu.flags.writeable = False
            object.__setattr__(self, "nu", nu)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def means(self) -> np.ndarray:
        return np.stack([c.mu for c in self.components])

    def chols(self) -> np.ndarray:
        return np.stack([c.chol for c in self.components])


def matrix_sqrt_psd(s: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues within -tol (relative to the largest) are clamped to zero;
    asymmetry or indefiniteness beyond tolerance raises ValueError.
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    scale = max(1.0, float(np.max(np.abs(s))) if s.size else 1.0)
    if np.max(np.abs(s - s.T)) > tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    vals, vecs = np.linalg.eigh((s + s.T) / 2.0)
    if vals.min() < -tol * max(1.0, float(vals.max())):
        raise ValueError(f"matrix is not PSD (min eigenvalue {vals.min():.3g})")
    root = (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T
    return (root + root.T) / 2.0


def _inv_sqrt_pd(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    vals, vecs = np.linalg.eigh((s + s.T) / 2.0)
    if vals.min() <= 1e-12 * max(1.0, float(vals.max())):
        raise ValueError("matrix is singular; inverse square root undefined")
    return (vecs / np.sqrt(vals)) @ vecs.T


def bures_w2_sq_cov(mu1, cov1, mu2, cov2) -> float:
    """Squared Gaussian W2 from means and covariances (PSD allowed):
    ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=float))
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape:
        raise ValueError("Gaussian parameters must share one dimension")
    s1h = matrix_sqrt_psd(cov1)
    cross = matrix_sqrt_psd(s1h @ cov2 @ s1h)
    val = float(
        ((mu1 - mu2) ** 2).sum()
        + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross)
    )
    return max(val, 0.0)


def bures_w2_sq(g1: GaussianComponent, g2: GaussianComponent) -> float:
    """Squared Bures-Wasserstein distance between two Gaussian components."""
    if g1.dim != g2.dim:
        raise ValueError("components must share one dimension")
    return bures_w2_sq_cov(g1.mu, g1.cov, g2.mu, g2.cov)


def bures_w2_grad(g1: GaussianComponent, g2: GaussianComponent
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of bures_w2_sq(g1, g2) w.r.t. g1's mean and Cholesky factor.

    dmu = 2 (mu1 - mu2); the covariance gradient is I - T with T the optimal
    linear transport map, chained onto L as dL = (dS + dS^T) L, restricted to
    the lower triangle. Requires Sigma1 strictly positive definite.
    """
    if g1.dim != g2.dim:
        raise ValueError("components must share one dimension")
    s1 = g1.cov
    s1h = matrix_sqrt_psd(s1)
    s1ih = _inv_sqrt_pd(s1)
    cross = matrix_sqrt_psd(s1h @ g2.cov @ s1h)
    tmap = s1ih @ cross @ s1ih
    dsigma = np.eye(g1.dim) - tmap
    dmu = 2.0 * (g1.mu - g2.mu)
    dl = np.tril((dsigma + dsigma.T) @ g1.chol)
    return dmu, dl


def mw2_cost_matrix(p: LabeledGMM, q: LabeledGMM, beta: float = 0.0,
                    rho=None) -> np.ndarray:
    """Component-pair cost matrix: Bures W2^2 plus the squared label metric.

    C_ij = W2(P_i, Q_j)^2 + beta * rho(nu_i, nu_j)^2, with rho defaulting to
    the Euclidean distance on the simplex. The label term is dropped when
    either mixture has no labels or beta = 0.
    """
    n, m = p.n_components, q.n_components
    cost = np.empty((n, m))
    for i, ci in enumerate(p.components):
        for j, cj in enumerate(q.components):
            cost[i, j] = bures_w2_sq(ci, cj)
    if beta > 0 and p.nu is not None and q.nu is not None:
        if rho is None:
            label_sq = ot.squared_distances(p.nu, q.nu)
        else:
            label_sq = np.asarray(rho(p.nu, q.nu), dtype=float) ** 2
        cost = cost + beta * label_sq
    return cost


def mw2_sq(p: LabeledGMM, q: LabeledGMM, beta: float = 0.0, rho=None
           ) -> tuple[float, ot.TransportPlan]:
    """Squared mixture-Wasserstein distance and its component coupling.

    Solves the exact component LP over Gamma(pi_P, pi_Q) on the decomposed
    feature + label cost.
    """
    cost = mw2_cost_matrix(p, q, beta=beta, rho=rho)
    plan, value = ot.solve_exact(p.weights, q.weights, cost)
    return value, plan


def component_log_probs(gmm: LabeledGMM, z: np.ndarray) -> np.ndarray:
    """Per-component Gaussian log densities, shape (n_samples, n_components)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    out = np.empty((z.shape[0], gmm.n_components))
    d = gmm.dim
    const = -0.5 * d * np.log(2.0 * np.pi)
    for k, comp in enumerate(gmm.components):
        u = solve_triangular(comp.chol, (z - comp.mu).T, lower=True)
        logdet = np.log(np.diag(comp.chol)).sum()
        out[:, k] = const - logdet - 0.5 * (u * u).sum(axis=0)
    return out


def gmm_log_density(gmm: LabeledGMM, z: np.ndarray
                    ) -> tuple[float, np.ndarray]:
    """Mixture log density at a point, plus component responsibilities."""
    z = np.asarray(z, dtype=float)
    lp = component_log_probs(gmm, z[None, :]) + np.log(gmm.weights)[None, :]
    total = logsumexp(lp, axis=1)
    resp = np.exp(lp - total[:, None])
    return float(total[0]), resp[0]


def sample_reparam(gmm: LabeledGMM, n: int, seed=None
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw n reparametrized samples z = mu_i + L_i eps, i ~ pi.

    Returns (points, component_index, eps); eps is retained so gradients can
    be propagated through the means and Cholesky factors.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d = gmm.dim
    if n == 0:
        return np.zeros((0, d)), np.zeros(0, dtype=int), np.zeros((0, d))
    idx = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    eps = rng.standard_normal((n, d))
    mus = gmm.means()
    chols = gmm.chols()
    pts = mus[idx] + np.einsum("nij,nj->ni", chols[idx], eps)
    return pts, idx, eps


def _em_single(data: np.ndarray, k: int, max_iter: int, tol: float,
               rng: np.random.Generator, diag: bool
               ) -> tuple[np.ndarray, list[GaussianComponent], list[float]]:
    """Fit one GMM with EM; returns (weights, components, loglik trace)."""
    n, d = data.shape
    if n < k:
        raise ValueError(f"need at least {k} points to fit {k} components")
    # init: k distinct data points as means, shared data covariance
    idx = rng.choice(n, size=k, replace=False)
    mus = data[idx].copy()
    base_cov = np.cov(data.T, ddof=0).reshape(d, d) if n > 1 else np.eye(d)
    base_cov = base_cov + _ridge(base_cov, d)
    if diag:
        base_cov = np.diag(np.diag(base_cov))
    covs = np.repeat(base_cov[None], k, axis=0)
    pis = np.full(k, 1.0 / k)

    logliks: list[float] = []
    for _ in range(max_iter):
        gmm = LabeledGMM(pis, tuple(
            GaussianComponent.from_cov(mus[j], covs[j]) for j in range(k)))
        lp = component_log_probs(gmm, data) + np.log(pis)[None, :]
        total = logsumexp(lp, axis=1)
        loglik = float(total.sum())
        resp = np.exp(lp - total[:, None])

        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        pis = nk / n
        mus = (resp.T @ data) / nk[:, None]
        for j in range(k):
            diff = data - mus[j]
            cov = (resp[:, j][:, None] * diff).T @ diff / nk[j]
            cov = (cov + cov.T) / 2.0 + _ridge(cov, d)
            if diag:
                cov = np.diag(np.diag(cov))
            covs[j] = cov

        logliks.append(loglik)
        if len(logliks) > 1 and abs(logliks[-1] - logliks[-2]) < tol:
            break

    comps = [GaussianComponent.from_cov(mus[j], covs[j]) for j in range(k)]
    return pis, comps, logliks


def _ridge(cov: np.ndarray, d: int) -> np.ndarray:
    # prevents covariance collapse on degenerate clusters
    lift = 1e-6 * max(np.trace(cov) / d, 1e-6)
    return lift * np.eye(d)


def em_fit(data, labels=None, components_per_class: int = 1,
           max_iter: int = 200, tol: float = 1e-8, seed=None,
           diag: bool = False) -> LabeledGMM:
    """Fit a GMM by EM; with labels, one GMM per class and one-hot nu rows.

    Global weights are class frequencies times the within-class mixture
    weights. The log-likelihood trace of the last fitted (sub-)model is
    attached as ``em_fit.last_logliks`` for diagnostics.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if labels is None:
        pis, comps, _ = _em_single(
            data, components_per_class, max_iter, tol, rng, diag)
        return LabeledGMM(pis, tuple(comps))

    labels = np.asarray(labels)
    classes = np.arange(int(labels.max()) + 1)
    weights: list[float] = []
    comps: list[GaussianComponent] = []
    nus: list[np.ndarray] = []
    for c in classes:
        rows = data[labels == c]
        if rows.shape[0] == 0:
            raise ValueError(f"class {c} has no samples")
        pis_c, comps_c, _ = _em_single(
            rows, components_per_class, max_iter, tol, rng, diag)
        freq = rows.shape[0] / data.shape[0]
        weights.extend(freq * pis_c)
        comps.extend(comps_c)
        nus.extend(one_hot(np.full(len(comps_c), c), len(classes)))
    w = np.asarray(weights)
    return LabeledGMM(w / w.sum(), tuple(comps), nu=np.asarray(nus))


def gmm_to_json(gmm: LabeledGMM) -> dict:
    """JSON-serializable dict: {weights, means, cholesky_rows, labels}."""
    return {
        "schema_version": GMM_SCHEMA_VERSION,
        "weights": gmm.weights.tolist(),
        "means": gmm.means().tolist(),
        "cholesky_rows": gmm.chols().tolist(),
        "labels": gmm.nu.tolist() if gmm.nu is not None else None,
    }


def gmm_from_json(doc: dict) -> LabeledGMM:
    version = doc.get("schema_version", GMM_SCHEMA_VERSION)
    if version != GMM_SCHEMA_VERSION:
        raise ValueError(f"unsupported GMM schema version {version}")
    comps = tuple(
        GaussianComponent(np.asarray(mu), np.asarray(rows))
        for mu, rows in zip(doc["means"], doc["cholesky_rows"])
    )
    nu = None if doc.get("labels") is None else np.asarray(doc["labels"])
    return LabeledGMM(np.asarray(doc["weights"]), comps, nu=nu)


def save_gmm(gmm: LabeledGMM, path) -> None:
    with open(path, "w") as fh:
        json.dump(gmm_to_json(gmm), fh, indent=1)
        fh.write("\n")


def load_gmm(path) -> LabeledGMM:
    with open(path) as fh:
        return gmm_from_json(json.load(fh))
