"""Domain primitives shared by the whole stack: empirical distributions,
transport costs with their Gaussian smoothing kernels, loss models over convex
feasible sets, and splittable random streams.

Conventions used everywhere downstream:

* points are float64 arrays of shape (n, d); 1-D inputs are treated as a
  single column;
* the smoothing kernel attached to a cost c and regularization eps > 0 is the
  Gibbs law with density proportional to exp(-c(x, z)/eps) against the
  reference measure (Lebesgue on the continuous block, counting on labels);
  for the costs here that law is Gaussian and can be sampled exactly;
* rho_bar = rho + eps * log int exp(-c(x,z)/eps) dz is the adjusted radius;
  the solver APIs take rho_bar directly and compute_rho_bar converts from rho.
"""

import math
from dataclasses import dataclass

import numpy as np

QUADRATIC = "quadratic"
MAHALANOBIS = "mahalanobis"
FEATURE_LABEL = "feature_label"


@dataclass(frozen=True)
class SeedSpec:
    """Counter-based stream derivation: (master_seed, path) -> independent RNG.

    Identical (master_seed, path) always yields identical draws; sibling paths
    give statistically independent streams. Paths are small integer tuples,
    by convention (trial, fold, center, ...).
    """

    master_seed: int
    path: tuple = ()

    def child(self, *steps) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.path + tuple(int(s) for s in steps))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError("points must be a nonempty (n, d) array")
    return np.ascontiguousarray(pts)


class EmpiricalDistribution:
    """Uniform-weight empirical distribution over n points in R^d."""

    def __init__(self, points):
        self.points = _as_points(points)
        self.n, self.d = self.points.shape

    @property
    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def __repr__(self):
        return f"EmpiricalDistribution(n={self.n}, d={self.d})"


class CostSpec:
    """Transport cost c(x, z) together with its smoothing strength eps.

    kind:
      quadratic      c(x,z) = 0.5 * ||x - z||^2, kernel N(x, eps I)
      mahalanobis    c(x,z) = 0.5 * (x-z)^T Omega (x-z), Omega SPD,
                     kernel N(x, eps Omega^{-1})
      feature_label  points are (features..., label); c = 0.5 * ||dx||^2 when
                     labels match, kappa otherwise; only kappa = inf is
                     supported, so the kernel perturbs features and copies the
                     label unchanged.
    """

    def __init__(self, kind=QUADRATIC, eps=1.0, omega=None, kappa=math.inf):
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        if kind not in (QUADRATIC, MAHALANOBIS, FEATURE_LABEL):
            raise ValueError(f"unknown cost kind {kind!r}")
        self.kind = kind
        self.eps = float(eps)
        self.omega = None
        self._chol = None  # lower Cholesky factor of Omega
        self._logdet_omega = 0.0
        if kind == MAHALANOBIS:
            if omega is None:
                raise ValueError("mahalanobis cost requires omega")
            omega = np.atleast_2d(np.asarray(omega, dtype=np.float64))
            if not np.allclose(omega, omega.T, atol=1e-12):
                raise ValueError("omega must be symmetric")
            try:
                self._chol = np.linalg.cholesky(omega)
            except np.linalg.LinAlgError:
                raise ValueError("omega must be positive definite") from None
            self.omega = omega
            self._logdet_omega = 2.0 * np.log(np.diag(self._chol)).sum()
        elif omega is not None:
            raise ValueError("omega is only meaningful for mahalanobis cost")
        if kind == FEATURE_LABEL and not math.isinf(kappa):
            raise ValueError("feature_label cost supports kappa = inf only")
        self.kappa = kappa

    def log_normalizer(self, d: int) -> float:
        """log int exp(-c(x,z)/eps) dnu(z); independent of the center x.

        d is the dimension of the continuous block: the point dimension for
        quadratic/mahalanobis, the feature dimension for feature_label (the
        matched label contributes a factor 1 under counting measure).
        """
        if self.kind == MAHALANOBIS:
            if d != self.omega.shape[0]:
                raise ValueError("d does not match omega")
            return 0.5 * (d * math.log(2.0 * math.pi * self.eps) - self._logdet_omega)
        return 0.5 * d * math.log(2.0 * math.pi * self.eps)

    def omega_inv_quad(self, a: np.ndarray) -> float:
        """a^T Omega^{-1} a (a^T a for the quadratic cost)."""
        a = np.asarray(a, dtype=np.float64).ravel()
        if self.kind == QUADRATIC:
            return float(a @ a)
        if self.kind == MAHALANOBIS:
            y = np.linalg.solve(self._chol, a)
            return float(y @ y)
        raise ValueError("omega_inv_quad undefined for feature_label cost")

    def pairwise(self, X, Z) -> np.ndarray:
        """Cost matrix C[i, j] = c(X[i], Z[j]); shape (n, L)."""
        X = _as_points(X)
        Z = _as_points(Z)
        if self.kind == FEATURE_LABEL:
            dx = X[:, None, :-1] - Z[None, :, :-1]
            C = 0.5 * np.einsum("ijk,ijk->ij", dx, dx)
            mismatch = X[:, None, -1] != Z[None, :, -1]
            C[mismatch] = self.kappa
            return C
        diff = X[:, None, :] - Z[None, :, :]
        if self.kind == MAHALANOBIS:
            return 0.5 * np.einsum("ijk,kl,ijl->ij", diff, self.omega, diff)
        return 0.5 * np.einsum("ijk,ijk->ij", diff, diff)

    def kernel_shift(self, xi: np.ndarray) -> np.ndarray:
        """Map standard normals xi (..., d or d_x) to kernel deviations from
        the center so that center + shift ~ Q_{center, eps}."""
        if self.kind == MAHALANOBIS:
            # covariance eps * Omega^{-1} = (sqrt(eps) L^{-T})(sqrt(eps) L^{-T})^T
            return math.sqrt(self.eps) * np.linalg.solve(self._chol.T, xi[..., None])[..., 0]
        return math.sqrt(self.eps) * xi


class KernelSampler:
    """Sampler for the smoothing kernel Q_{x, eps} attached to a cost."""

    def __init__(self, cost: CostSpec, center):
        self.cost = cost
        self.center = np.asarray(center, dtype=np.float64).ravel()

    def draw(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if count < 1:
            raise ValueError("count must be >= 1")
        d = self.center.size
        if self.cost.kind == FEATURE_LABEL:
            xi = rng.standard_normal((count, d - 1))
            out = np.empty((count, d))
            out[:, :-1] = self.center[:-1] + self.cost.kernel_shift(xi)
            out[:, -1] = self.center[-1]
            return out
        xi = rng.standard_normal((count, d))
        return self.center + self.cost.kernel_shift(xi)


def kernel_sample(sampler: KernelSampler, count: int, seed: SeedSpec) -> np.ndarray:
    """i.i.d. draws from Q_{x, eps}; deterministic for a fixed seed."""
    return sampler.draw(count, seed.generator())


def compute_rho_bar(rho: float, cost: CostSpec, d: int) -> float:
    """Adjusted radius rho_bar = rho + eps * log-normalizer of the kernel.

    For the quadratic cost this is rho + eps*(d/2)*log(2*pi*eps); for the
    mahalanobis cost rho + eps*0.5*log((2*pi*eps)^d * det(Omega^{-1})); for
    feature_label (kappa = inf) pass d = feature dimension.
    """
    if rho < 0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    return rho + cost.eps * cost.log_normalizer(d)


# ---------------------------------------------------------------------------
# feasible sets and loss models
# ---------------------------------------------------------------------------

class FeasibleSet:
    kind = "abstract"

    def project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x, tol=1e-9) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.linalg.norm(self.project(x) - x) <= tol * (1.0 + np.linalg.norm(x)))


class Unconstrained(FeasibleSet):
    kind = "unconstrained"

    def project(self, x):
        return np.asarray(x, dtype=np.float64)


class Box(FeasibleSet):
    kind = "box"

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if np.any(self.lo > self.hi):
            raise ValueError("box lower bound exceeds upper bound")

    def project(self, x):
        return np.clip(np.asarray(x, dtype=np.float64), self.lo, self.hi)


class Simplex(FeasibleSet):
    kind = "simplex"

    def project(self, x):
        from . import _kernels

        return _kernels.simplex_project(np.ascontiguousarray(x, dtype=np.float64))


class SimplexTimesReal(FeasibleSet):
    """Product set: leading block on the unit simplex, last coordinate free."""

    kind = "simplex_x_real"

    def project(self, x):
        from . import _kernels

        x = np.asarray(x, dtype=np.float64)
        out = x.copy()
        out[:-1] = _kernels.simplex_project(np.ascontiguousarray(x[:-1]))
        return out


class Ball(FeasibleSet):
    kind = "ball"

    def __init__(self, radius=10.0):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)

    def project(self, x):
        x = np.asarray(x, dtype=np.float64)
        nrm = np.linalg.norm(x)
        if nrm <= self.radius:
            return x
        return x * (self.radius / nrm)


class LossModel:
    """A loss f_theta(z), convex in theta, with a vectorized value and
    theta-subgradient over batches of scenarios z.

    Subclasses implement value(theta, Z) -> (N,) and theta_subgrad(theta, Z)
    -> (N, p) for Z of shape (N, d). growth_order is metadata documenting the
    polynomial growth of f in z (light-tail bookkeeping, not machine-checked).
    """

    name = "loss"
    growth_order = 1

    def __init__(self, dim_theta: int, feasible_set: FeasibleSet):
        self.dim_theta = int(dim_theta)
        self.feasible_set = feasible_set

    def value(self, theta, Z) -> np.ndarray:
        raise NotImplementedError

    def theta_subgrad(self, theta, Z) -> np.ndarray:
        raise NotImplementedError

    def project(self, theta) -> np.ndarray:
        return self.feasible_set.project(theta)


class CallableLoss(LossModel):
    """LossModel built from plain callables; handy for tests and ad-hoc uses."""

    def __init__(self, dim_theta, feasible_set, value_fn, subgrad_fn,
                 name="custom", growth_order=1):
        super().__init__(dim_theta, feasible_set)
        self._value_fn = value_fn
        self._subgrad_fn = subgrad_fn
        self.name = name
        self.growth_order = growth_order

    def value(self, theta, Z):
        return np.asarray(self._value_fn(theta, Z), dtype=np.float64)

    def theta_subgrad(self, theta, Z):
        return np.asarray(self._subgrad_fn(theta, Z), dtype=np.float64)
