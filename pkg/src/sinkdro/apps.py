"""Application losses, their data generators, and problem-specific baselines.

Three problems exercise the solver end to end: a newsvendor with exponential
demand (closed-form true optimum available), mean-CVaR portfolio selection on
a one-factor return model, and semi-supervised logistic classification where
unlabeled points enter with both candidate labels and a label-preserving
cost. The Wasserstein baselines here are the classical (unsmoothed) DRO
counterparts used for benchmark comparisons.
"""

import csv
import math
import warnings

import numpy as np

from .core import (
    QUADRATIC,
    Ball,
    Box,
    CostSpec,
    EmpiricalDistribution,
    LossModel,
    SeedSpec,
    SimplexTimesReal,
)
from .optimizer import (
    SQRT,
    InnerSolverConfig,
    _subgradient_descent,
    golden_section,
)


class NewsvendorLoss(LossModel):
    """f_theta(z) = k*theta - u*min(theta, z): overage k against underage u,
    theta restricted to [0, theta_max]."""

    name = "newsvendor"

    def __init__(self, theta_max: float, k: float = 5.0, u: float = 7.0):
        if not 0.0 < k < u:
            raise ValueError("need underage > overage > 0")
        super().__init__(1, Box(np.zeros(1), np.array([float(theta_max)])))
        self.k = float(k)
        self.u = float(u)

    def value(self, theta, Z):
        th = float(np.asarray(theta).ravel()[0])
        return self.k * th - self.u * np.minimum(th, Z[:, 0])

    def theta_subgrad(self, theta, Z):
        th = float(np.asarray(theta).ravel()[0])
        return (self.k - self.u * (Z[:, 0] >= th))[:, None]


class PortfolioLoss(LossModel):
    """Mean-CVaR objective in the joint decision (theta, tau):

        -theta'z + varrho*tau + (varrho/alpha) * max(-theta'z - tau, 0)

    with theta on the simplex. Minimizing over tau recovers mean plus
    varrho times the alpha-tail CVaR of the portfolio loss -theta'z.
    """

    name = "portfolio"

    def __init__(self, dim: int, alpha: float = 0.2, varrho: float = 10.0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if varrho < 0:
            raise ValueError("varrho must be >= 0")
        super().__init__(dim + 1, SimplexTimesReal())
        self.dim = int(dim)
        self.alpha = float(alpha)
        self.varrho = float(varrho)

    def _split(self, theta):
        th = np.asarray(theta, dtype=np.float64).ravel()
        return th[:-1], th[-1]

    def value(self, theta, Z):
        w, tau = self._split(theta)
        port = Z @ w
        return (-port + self.varrho * tau
                + (self.varrho / self.alpha) * np.maximum(-port - tau, 0.0))

    def theta_subgrad(self, theta, Z):
        w, tau = self._split(theta)
        port = Z @ w
        active = (-port - tau) > 0.0
        g = np.empty((len(Z), self.dim + 1))
        g[:, :-1] = -Z * (1.0 + (self.varrho / self.alpha) * active)[:, None]
        g[:, -1] = self.varrho - (self.varrho / self.alpha) * active
        return g

    def pieces(self):
        """(a, b) with f_(theta,tau)(z) = max_j (a_j * theta'z + b_j * tau)."""
        r = self.varrho / self.alpha
        a = np.array([-1.0, -1.0 - r])
        b = np.array([self.varrho, self.varrho * (1.0 - 1.0 / self.alpha)])
        return a, b


class LogisticLoss(LossModel):
    """log(1 + e^{-y * theta'x}) on scenario rows (x, y); theta in a ball."""

    name = "logistic"

    def __init__(self, dim: int, radius: float = 10.0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        super().__init__(dim, Ball(float(radius)))
        self.dim = int(dim)

    def _margins(self, theta, Z):
        X = Z[:, :-1]
        y = Z[:, -1]
        return X, y, y * (X @ np.asarray(theta, dtype=np.float64).ravel())

    def value(self, theta, Z):
        _, _, m = self._margins(theta, Z)
        return np.logaddexp(0.0, -m)

    def theta_subgrad(self, theta, Z):
        X, y, m = self._margins(theta, Z)
        sig = np.empty_like(m)  # sigmoid(-m) without overflow
        pos = m >= 0
        sig[pos] = np.exp(-m[pos]) / (1.0 + np.exp(-m[pos]))
        sig[~pos] = 1.0 / (1.0 + np.exp(m[~pos]))
        return -(y * sig)[:, None] * X


# ---------------------------------------------------------------------------
# data generators and references
# ---------------------------------------------------------------------------

def exp_demand_sample(scale: float, count: int, seed: SeedSpec) -> np.ndarray:
    """(count,) i.i.d. exponential demands with mean scale, inverse-CDF."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    u = seed.generator().random(count)
    return -scale * np.log1p(-u)


def factor_returns_sample(dim: int, count: int, seed: SeedSpec) -> np.ndarray:
    """(count, dim) one-factor returns z_i = psi + eps_i with the common
    factor psi ~ N(0, 0.02) and eps_i ~ N(0.03*i, 0.025*i), i = 1..dim
    (second parameters are variances)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = seed.generator()
    idx = np.arange(1, dim + 1, dtype=np.float64)
    psi = rng.normal(0.0, math.sqrt(0.02), size=(count, 1))
    eps = rng.normal(0.03 * idx, np.sqrt(0.025 * idx), size=(count, dim))
    return psi + eps


def newsvendor_true_optimum(scale: float, k: float = 5.0, u: float = 7.0):
    """(theta*, J*) under exponential demand with mean scale:
    theta* = scale*ln(u/k), J* = scale*(k*ln(u/k) - (u - k))."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    if not 0.0 < k <= u:
        raise ValueError("need u >= k > 0")
    lnr = math.log(u / k)
    return scale * lnr, scale * (k * lnr - (u - k))


# ---------------------------------------------------------------------------
# Wasserstein baselines
# ---------------------------------------------------------------------------

def _newsvendor_zgrid(demands, grid_points):
    # data points joined in so the lam -> inf regime lands exactly on them
    hi = demands.max() + 5.0 * demands.mean()
    return np.union1d(np.linspace(0.0, hi, grid_points), demands)


def wasserstein_newsvendor_objective(theta, lam, data: EmpiricalDistribution,
                                     rho: float, loss: NewsvendorLoss,
                                     cost: CostSpec = None,
                                     grid_points: int = 2001) -> float:
    """lam*rho + (1/n) sum_i sup_z {f_theta(z) - lam*c(zhat_i, z)} with the
    sup taken over a dense grid on [0, max demand + 5*mean]. The z = 0 end
    is the demand domain's boundary; only a sup at the right end signals a
    truncated grid and warns."""
    demands = data.points[:, 0]
    if (demands < 0).any():
        raise ValueError("demands must be nonnegative")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    cost = cost or CostSpec(QUADRATIC, 1.0)
    z = _newsvendor_zgrid(demands, grid_points)
    phi = loss.value(theta, z[:, None])[None, :] \
        - lam * cost.pairwise(data.points, z[:, None])
    if (phi.argmax(axis=1) == z.size - 1).any():
        warnings.warn(
            "inner supremum attained at the grid's right end; the transport "
            "penalty may be too weak for this lam", RuntimeWarning)
    return float(lam * rho + phi.max(axis=1).mean())


def _min_over_lambda(fn, hi=8.0):
    # convex in lam; expand the range until the argmin is interior
    while True:
        lam, val = golden_section(fn, 0.0, hi, tol=1e-9)
        if lam < 0.98 * hi or hi > 2 ** 20:
            return lam, val
        hi *= 4.0


def wasserstein_newsvendor_solve(data: EmpiricalDistribution, rho: float,
                                 k: float = 5.0, u: float = 7.0,
                                 theta_grid=None, cost: CostSpec = None,
                                 grid_points: int = 2001):
    """Classical Wasserstein-DRO newsvendor: scalar search over theta of
    min_lam {lam*rho + mean_i sup_z (f_theta - lam*c)}. Returns (theta, value).
    rho = 0 collapses to the plain SAA."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    demands = data.points[:, 0]
    theta_max = 3.0 * demands.max()
    loss = NewsvendorLoss(theta_max, k, u)

    if rho == 0:
        def w_value(th):
            return float(loss.value(np.array([th]), data.points).mean())
    else:
        def w_value(th):
            return _min_over_lambda(
                lambda lam: wasserstein_newsvendor_objective(
                    np.array([th]), lam, data, rho, loss, cost, grid_points))[1]

    if theta_grid is None:
        theta, value = golden_section(w_value, 0.0, theta_max, tol=1e-6)
    else:
        values = [w_value(float(th)) for th in theta_grid]
        best = int(np.argmin(values))
        theta, value = float(theta_grid[best]), values[best]
    return theta, value


def wasserstein_portfolio_solve(data: EmpiricalDistribution, rho: float,
                                alpha: float = 0.2, varrho: float = 10.0,
                                cfg: InnerSolverConfig = None, theta0=None):
    """Classical Wasserstein-DRO mean-CVaR portfolio via the max-of-affine
    form: minimize rho*max_j|a_j|*||theta||_2 + mean_i max_j (b_j*tau +
    a_j*theta'z_i) over the simplex, with the multiplier eliminated at its
    lower bound. Returns (theta, tau, value)."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    loss = PortfolioLoss(data.d, alpha, varrho)
    a, b = loss.pieces()
    amax = np.abs(a).max()
    if cfg is None:
        cfg = InnerSolverConfig(step_schedule=SQRT, rel_tol=1e-10,
                                max_steps=2000, step_scale=0.02)
    if theta0 is None:
        theta0 = np.append(np.full(data.d, 1.0 / data.d), 0.0)
    Z = data.points

    def vg(theta):
        w, tau = theta[:-1], theta[-1]
        port = Z @ w
        vals = a[None, :] * port[:, None] + b[None, :] * tau
        j = vals.argmax(axis=1)
        nrm = np.linalg.norm(w)
        g = np.empty(data.d + 1)
        g[:-1] = rho * amax * (w / nrm) + (a[j, None] * Z).mean(axis=0)
        g[-1] = b[j].mean()
        return rho * amax * nrm + vals.max(axis=1).mean(), g

    theta, value, _ = _subgradient_descent(vg, loss.project, np.asarray(
        theta0, dtype=np.float64), cfg)
    return theta[:-1], float(theta[-1]), value


# ---------------------------------------------------------------------------
# semi-supervised classification pieces
# ---------------------------------------------------------------------------

def semisup_dataset_build(labeled, unlabeled=None) -> EmpiricalDistribution:
    """Uniform empirical law over the labeled rows plus each unlabeled point
    replicated once with label +1 and once with label -1."""
    lab = np.atleast_2d(np.asarray(labeled, dtype=np.float64))
    if not np.isin(lab[:, -1], (-1.0, 1.0)).all():
        raise ValueError("labels must be -1 or +1")
    rows = [lab]
    if unlabeled is not None and len(unlabeled) > 0:
        X = np.atleast_2d(np.asarray(unlabeled, dtype=np.float64))
        if X.shape[1] != lab.shape[1] - 1:
            raise ValueError("unlabeled features must match the labeled width")
        rows.append(np.hstack([X, np.ones((len(X), 1))]))
        rows.append(np.hstack([X, -np.ones((len(X), 1))]))
    return EmpiricalDistribution(np.vstack(rows))


def classification_error(theta, data) -> float:
    """Fraction of rows with sign(theta'x) != y; a zero score counts as an
    error, so theta = 0 scores 1.0."""
    pts = data.points if isinstance(data, EmpiricalDistribution) \
        else np.atleast_2d(np.asarray(data, dtype=np.float64))
    margins = pts[:, -1] * (pts[:, :-1] @ np.asarray(theta).ravel())
    return float((margins <= 0).mean())


def read_labeled_csv(path, label):
    """(X, y) from a comma-separated file with a header row. `label` picks
    the label column by name or integer position; labels must be -1/+1."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(tok) for tok in row] for row in reader if row]
    if isinstance(label, str):
        if label not in header:
            raise ValueError(f"no column named {label!r}")
        idx = header.index(label)
    else:
        idx = int(label)
        if not -len(header) <= idx < len(header):
            raise ValueError("label index out of range")
    arr = np.asarray(rows, dtype=np.float64)
    y = arr[:, idx]
    X = np.delete(arr, idx % len(header), axis=1)
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ValueError("labels must be -1 or +1")
    return X, y


def standardize_train_test(train_X, test_X):
    """Center and scale both splits by the training split's statistics only;
    constant training columns pass through unscaled."""
    mu = train_X.mean(axis=0)
    sd = train_X.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    return (train_X - mu) / sd, (test_X - mu) / sd
