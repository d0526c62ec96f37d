"""Dual objective of the Sinkhorn-ball robust problem and its relatives.

For the empirical nominal P-hat with n centers, smoothing kernels Q_i and
adjusted radius rho_bar, the dual objective at multiplier lam > 0 is

    v(lam, theta) = lam*rho_bar + (lam*eps/n) * sum_i log E_{Q_i} exp(f_theta / (lam*eps))

and the Monte Carlo version replaces each E_{Q_i} by the mean over m frozen
draws (a SamplePool). Everything here is evaluated through stabilized
log-mean-exp, so small lam*eps does not overflow. Gradients:

    d/d theta = (1/n) sum_i sum_j w_ij * subgrad f(z_ij),  w_ij = softmax_j(f/(lam*eps))
    d/d lam   = rho_bar + (eps/n) sum_i lme_i - (1/(lam*n)) sum_i sum_j w_ij f(z_ij)

Also here: the closed-form dual for linear losses under mahalanobis cost, the
KL-divergence-ball dual, the pooled-KDE upper bound, and the small-eps sweep
toward the Wasserstein dual.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import CostSpec, EmpiricalDistribution, LossModel, SeedSpec


class SamplePool:
    """Frozen n x m array of kernel draws z_ij ~ Q_{x_i, eps}.

    The Monte Carlo dual is deterministic given a pool; solvers never redraw.
    """

    def __init__(self, draws: np.ndarray, data: EmpiricalDistribution,
                 cost: CostSpec, seed: SeedSpec):
        draws = np.asarray(draws, dtype=np.float64)
        if draws.ndim != 3:
            raise ValueError("draws must have shape (n, m, d)")
        self.draws = draws
        self.n, self.m, self.d = draws.shape
        self.flat = np.ascontiguousarray(draws.reshape(self.n * self.m, self.d))
        self.data = data
        self.cost = cost
        self.seed = seed

    @property
    def eps(self) -> float:
        return self.cost.eps

    @classmethod
    def build(cls, data: EmpiricalDistribution, cost: CostSpec, m: int,
              seed: SeedSpec) -> "SamplePool":
        if m < 1:
            raise ValueError("m must be >= 1")
        rng = seed.generator()
        n, d = data.n, data.d
        centers = data.points[:, None, :]
        if cost.kind == "feature_label":
            xi = rng.standard_normal((n, m, d - 1))
            draws = np.empty((n, m, d))
            draws[..., :-1] = centers[..., :-1] + cost.kernel_shift(xi)
            draws[..., -1] = centers[..., -1]
        else:
            xi = rng.standard_normal((n, m, d))
            draws = centers + cost.kernel_shift(xi)
        return cls(draws, data, cost, seed)

    def loss_matrix(self, theta, loss: LossModel) -> np.ndarray:
        """f_theta over all draws, shape (n, m), C-contiguous."""
        return np.ascontiguousarray(
            loss.value(theta, self.flat).reshape(self.n, self.m))


@dataclass
class DualEvaluation:
    value: float
    grad_theta: np.ndarray
    grad_lambda: float
    per_center_logmeanexp: np.ndarray  # lme_i = log (1/m) sum_j e^{f_ij/(lam eps)}


def mc_dual_value(lam: float, theta, pool: SamplePool, rho_bar: float,
                  loss: LossModel) -> DualEvaluation:
    """Monte Carlo dual objective and gradients at (lam, theta) on a pool."""
    if lam <= 0:
        raise ValueError(
            "lam must be > 0; the lam=0 (essential-supremum) boundary is "
            "handled by the worstcase diagnostics, not the MC objective")
    eps = pool.eps
    beta = 1.0 / (lam * eps)
    F = pool.loss_matrix(theta, loss)
    lme, tmean, W = _kernels.tilted_rows(F, beta)
    lme_mean = lme.mean()
    value = lam * rho_bar + lam * eps * lme_mean
    G = loss.theta_subgrad(theta, pool.flat).reshape(pool.n, pool.m, -1)
    grad_theta = np.einsum("ij,ijp->p", W, G) / pool.n
    grad_lambda = rho_bar + eps * lme_mean - tmean.mean() / lam
    return DualEvaluation(float(value), grad_theta, float(grad_lambda), lme)


def analytic_dual_value(lam: float, a, data: EmpiricalDistribution,
                        cost: CostSpec, rho_bar: float) -> float:
    """Exact dual for the linear loss f(z) = a^T z under (mahalanobis) cost:

        lam*rho_bar + a^T xbar + a^T Omega^{-1} a / (2*lam)

    The quadratic cost is the Omega = I special case. Minimizing over lam
    gives a^T xbar + sqrt(2*rho_bar)*||a||_{Omega^{-1}} at
    lam* = ||a||_{Omega^{-1}} / sqrt(2*rho_bar).
    """
    if lam <= 0:
        raise ValueError("lam must be > 0")
    a = np.asarray(a, dtype=np.float64).ravel()
    quad = cost.omega_inv_quad(a)
    return float(lam * rho_bar + a @ data.mean + quad / (2.0 * lam))


def analytic_dual_grad(lam: float, a, data: EmpiricalDistribution,
                       cost: CostSpec, rho_bar: float) -> float:
    """d/dlam of analytic_dual_value: rho_bar - a^T Omega^{-1} a / (2 lam^2)."""
    if lam <= 0:
        raise ValueError("lam must be > 0")
    a = np.asarray(a, dtype=np.float64).ravel()
    return float(rho_bar - cost.omega_inv_quad(a) / (2.0 * lam * lam))


def kl_dual_eval(lam: float, theta, data: EmpiricalDistribution, eta: float,
                 loss: LossModel) -> DualEvaluation:
    """KL-ball dual lam*eta + lam*log((1/n) sum_i e^{f(x_i)/lam}) with
    gradients; structurally the Sinkhorn dual with a single pooled center."""
    if lam <= 0:
        raise ValueError("lam must be > 0")
    F = np.ascontiguousarray(
        loss.value(theta, data.points).reshape(1, data.n))
    lme, tmean, W = _kernels.tilted_rows(F, 1.0 / lam)
    value = lam * eta + lam * lme[0]
    G = loss.theta_subgrad(theta, data.points)
    grad_theta = W[0] @ G
    grad_lambda = eta + lme[0] - tmean[0] / lam
    return DualEvaluation(float(value), grad_theta, float(grad_lambda), lme)


def kl_dual_value(lam: float, theta, data: EmpiricalDistribution, eta: float,
                  loss: LossModel) -> float:
    return kl_dual_eval(lam, theta, data, eta, loss).value


def jensen_kl_upper_bound(lam: float, theta, pool: SamplePool, rho_bar: float,
                          loss: LossModel):
    """(sinkhorn, kl_kde): the per-center dual against the pooled-KDE KL dual

        kl_kde = lam*rho_bar + lam*eps*log((1/(n m)) sum_ij e^{f_ij/(lam eps)}).

    sinkhorn <= kl_kde always (log of the center-average vs average of logs).
    """
    if lam <= 0:
        raise ValueError("lam must be > 0")
    eps = pool.eps
    beta = 1.0 / (lam * eps)
    F = pool.loss_matrix(theta, loss)
    lme, _, _ = _kernels.tilted_rows(F, beta)
    sinkhorn = lam * rho_bar + lam * eps * lme.mean()
    kl_kde = lam * rho_bar + lam * eps * _kernels.pooled_logmeanexp(F, beta)
    return float(sinkhorn), float(kl_kde)


def wasserstein_limit_value(lam: float, theta, data: EmpiricalDistribution,
                            loss: LossModel, cost: CostSpec, eps_sequence,
                            rho: float = 0.0, grid_points: int = 2001):
    """Entropic dual values along eps_sequence against the Wasserstein dual.

    1-D only. Returns (values, w_value) where

        values[k] = lam*rho + (lam*eps_k/n) sum_i log E_{Q_{x_i, eps_k}} e^{f/(lam*eps_k)}
        w_value   = lam*rho + (1/n) sum_i sup_z { f(z) - lam*c(x_i, z) }

    with the normalized kernel expectation by trapezoid quadrature and the sup
    by maximum, both on a shared grid of grid_points spanning the data range
    +- 5 std. As eps goes to 0 the entropic value approaches the Wasserstein
    one (the eps*log normalizer of the kernel vanishes); for constant losses
    the two agree for every eps.
    """
    if lam <= 0:
        raise ValueError("lam must be > 0")
    if data.d != 1:
        raise ValueError("wasserstein_limit_value supports 1-D data only")
    x = data.points[:, 0]
    scale = x.std()
    if scale == 0.0:
        scale = max(1.0, abs(x[0]))
    grid = np.linspace(x.min() - 5.0 * scale, x.max() + 5.0 * scale, grid_points)
    # sup over grid + centers (z = x_i is the exact argmax for flat losses);
    # quadrature stays on the uniform grid where trapezoid error is tiny
    sup_pts = np.union1d(grid, x)
    phi_sup = loss.value(theta, sup_pts[:, None])[None, :] \
        - lam * cost.pairwise(data.points, sup_pts[:, None])
    argmax = phi_sup.argmax(axis=1)
    if np.any(argmax == 0) or np.any(argmax == sup_pts.size - 1):
        warnings.warn(
            "inner supremum attained on the grid boundary; the loss may "
            "violate the growth condition for this lam", RuntimeWarning)
    M = phi_sup[np.arange(data.n), argmax]
    w_value = lam * rho + M.mean()
    phi = loss.value(theta, grid[:, None])[None, :] \
        - lam * cost.pairwise(data.points, grid[:, None])
    values = []
    for eps in eps_sequence:
        le = lam * eps
        integ = np.trapezoid(np.exp((phi - M[:, None]) / le), grid, axis=1)
        log_norm = CostSpec(cost.kind, eps, cost.omega).log_normalizer(1)
        values.append(lam * rho + (M + le * (np.log(integ) - log_norm)).mean())
    return np.array(values), float(w_value)
