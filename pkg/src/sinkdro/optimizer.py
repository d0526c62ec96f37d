"""Outer bisection over the dual multiplier wrapping a projected-subgradient
inner solver, plus the scalar search utilities the baselines reuse.

The outer loop is plain midpoint bisection on the sign of the lam-derivative:
the dual objective min_theta v(lam, theta) is convex in lam, so the
derivative at the inner minimizer points toward the optimal lam, and the
bracket halves exactly once per iteration. The inner solver is projected
subgradient descent with a diminishing step (1/(l+1) or 1/sqrt(l+1)),
rel-change termination at 1e-3 by default, and best-iterate tracking.

lam is kept strictly positive: a floor of 1e-6 stands in for the lam*=0
(essential supremum) boundary, and solvers flag when the floor binds so the
caller can fall back on the finite-space diagnostics.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import EmpiricalDistribution, LossModel
from .dual import DualEvaluation, SamplePool, kl_dual_eval, mc_dual_value

LAMBDA_FLOOR = 1e-6
KL_LAMBDA_CAP = 1e6
_GRAD_ZERO_TOL = 1e-10

HARMONIC = "harmonic"  # step l -> 1/(l+1)
SQRT = "sqrt"          # step l -> 1/sqrt(l+1)


@dataclass
class InnerSolverConfig:
    step_schedule: str = HARMONIC
    rel_tol: float = 1e-3
    max_steps: int = 400
    step_scale: float = 1.0

    def __post_init__(self):
        if self.step_schedule not in (HARMONIC, SQRT):
            raise ValueError(f"unknown step schedule {self.step_schedule!r}")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")

    def step(self, l: int) -> float:
        if self.step_schedule == SQRT:
            return self.step_scale / math.sqrt(l + 1.0)
        return self.step_scale / (l + 1.0)


@dataclass
class BisectionConfig:
    lam_lo: float = None
    lam_hi: float = None
    delta: float = 1e-4
    max_outer: int = 60
    inner: InnerSolverConfig = field(default_factory=InnerSolverConfig)

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.lam_lo is not None and self.lam_hi is not None:
            if not (0.0 < self.lam_lo <= self.lam_hi):
                raise ValueError("need 0 < lam_lo <= lam_hi")


@dataclass
class BisectionStep:
    """One outer iteration: midpoint probe and the bracket after the update."""

    iteration: int
    lam: float
    value: float
    grad: float
    lam_lo: float
    lam_hi: float

    @property
    def width(self) -> float:
        return self.lam_hi - self.lam_lo


@dataclass
class BisectionResult:
    lam: float
    theta: np.ndarray
    value: float
    trace: list
    converged: bool
    lambda_floor: bool = False


@dataclass
class Bracket:
    lo: float
    hi: float
    floor_hit: bool

    def __iter__(self):  # allow lo, hi = bracket
        return iter((self.lo, self.hi))


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    return _kernels.simplex_project(v)


# ---------------------------------------------------------------------------
# inner solver
# ---------------------------------------------------------------------------

def _subgradient_descent(val_grad, project, theta0, cfg: InnerSolverConfig):
    """Projected subgradient descent with best-iterate tracking.

    val_grad(theta) -> (value, subgradient). Terminates once the relative
    objective change stays <= cfg.rel_tol on two consecutive iterates (a
    single small change can be a symmetric subgradient bounce, not
    stationarity), or at cfg.max_steps. Returns (best_theta, best_value,
    steps_taken).
    """
    theta = project(np.asarray(theta0, dtype=np.float64))
    best_theta, best_val = theta, math.inf
    prev = None
    calm = 0
    steps = 0
    for l in range(cfg.max_steps):
        val, grad = val_grad(theta)
        if val < best_val:
            best_val, best_theta = val, theta
        if prev is not None and abs(val - prev) <= cfg.rel_tol * (1.0 + abs(prev)):
            calm += 1
            if calm >= 2:
                break
        else:
            calm = 0
        prev = val
        theta = project(theta - cfg.step(l) * grad)
        steps = l + 1
    return best_theta, best_val, steps


def inner_solve(lam: float, pool: SamplePool, rho_bar: float, loss: LossModel,
                cfg: InnerSolverConfig, theta0):
    """min over theta of the MC dual at fixed lam; returns (theta, value)."""

    def vg(theta):
        ev = mc_dual_value(lam, theta, pool, rho_bar, loss)
        if not math.isfinite(ev.value):
            raise FloatingPointError(
                f"non-finite dual objective at lam={lam}; loss values "
                "overflow before stabilization")
        return ev.value, ev.grad_theta

    theta, val, _ = _subgradient_descent(vg, loss.project, theta0, cfg)
    return theta, val


# ---------------------------------------------------------------------------
# scalar bisection core
# ---------------------------------------------------------------------------

def bisect_scalar_min(value_and_grad, lo: float, hi: float, delta: float,
                      max_iters: int = 200, validate: bool = True):
    """Minimize a convex scalar function by derivative-sign bisection.

    value_and_grad(x) -> (value, derivative). The bracket [lo, hi] must
    contain the minimizer; with validate=True the derivative signs at the
    endpoints are checked. Returns (x_best, value_best, trace) where trace is
    a list of BisectionStep and the bracket width halves exactly once per
    recorded step.
    """
    if not (0.0 < delta):
        raise ValueError("delta must be positive")
    if lo > hi:
        raise ValueError("need lo <= hi")
    if validate and hi - lo >= delta:  # a pre-converged bracket never bisects
        _, glo = value_and_grad(lo)
        _, ghi = value_and_grad(hi)
        if glo > 0 and ghi > 0 or glo < 0 and ghi < 0:
            raise ValueError(
                f"invalid bracket: derivative has the same sign at both "
                f"endpoints ({glo:+.3e}, {ghi:+.3e})")
    trace = []
    best_x, best_val = lo, math.inf
    for t in range(1, max_iters + 1):
        if hi - lo < delta:
            break
        mid = 0.5 * (lo + hi)
        val, grad = value_and_grad(mid)
        if val < best_val:
            best_val, best_x = val, mid
        if grad > 0:
            hi = mid
        else:
            lo = mid
        trace.append(BisectionStep(t, mid, val, grad, lo, hi))
        if abs(grad) <= _GRAD_ZERO_TOL:
            break
    if not trace:
        mid = 0.5 * (lo + hi)
        val, grad = value_and_grad(mid)
        best_val, best_x = val, mid
        trace.append(BisectionStep(1, mid, val, grad, lo, hi))
    return best_x, best_val, trace


def golden_section(fn, lo: float, hi: float, tol: float = 1e-8,
                   max_iters: int = 200):
    """Derivative-free scalar minimization of a unimodal function."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iters):
        if b - a <= tol * (1.0 + abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    x = 0.5 * (a + b)
    return x, fn(x)


# ---------------------------------------------------------------------------
# outer solvers
# ---------------------------------------------------------------------------

def _outer_bisect(lam_eval, inner_fn, lo, hi, delta, max_outer, theta0,
                  validate=True):
    """Shared outer loop: inner-solve at the midpoint, update the bracket by
    the sign of the lam-derivative at the solved theta, warm-start theta.

    lam_eval(lam, theta) -> DualEvaluation; inner_fn(lam, theta0) -> (theta, value).
    """
    if validate and hi - lo >= delta:  # a pre-converged bracket never bisects
        glo = lam_eval(lo, theta0).grad_lambda
        ghi = lam_eval(hi, theta0).grad_lambda
        if glo > 0 and ghi > 0 or glo < 0 and ghi < 0:
            raise ValueError(
                f"invalid bracket [{lo:g}, {hi:g}]: lam-derivative at theta0 "
                f"has the same sign at both endpoints ({glo:+.3e}, {ghi:+.3e})")
    theta = np.asarray(theta0, dtype=np.float64)
    trace = []
    best = (math.inf, 0.5 * (lo + hi), theta)
    converged = False
    for t in range(1, max_outer + 1):
        if hi - lo < delta:
            converged = True
            break
        mid = 0.5 * (lo + hi)
        theta, _ = inner_fn(mid, theta)
        ev = lam_eval(mid, theta)
        if ev.value < best[0]:
            best = (ev.value, mid, theta)
        if ev.grad_lambda > 0:
            hi = mid
        else:
            lo = mid
        trace.append(BisectionStep(t, mid, ev.value, ev.grad_lambda, lo, hi))
        if abs(ev.grad_lambda) <= _GRAD_ZERO_TOL:
            converged = True
            break
    else:
        converged = hi - lo < delta
    if not trace:  # bracket already tighter than delta: single midpoint solve
        mid = 0.5 * (lo + hi)
        theta, _ = inner_fn(mid, theta)
        ev = lam_eval(mid, theta)
        best = (ev.value, mid, theta)
        trace.append(BisectionStep(1, mid, ev.value, ev.grad_lambda, lo, hi))
        converged = True
    value, lam, theta = best
    return lam, theta, value, trace, converged


def bisection_solve(pool: SamplePool, rho_bar: float, loss: LossModel,
                    cfg: BisectionConfig, theta0) -> BisectionResult:
    """Minimize the MC dual jointly in (lam, theta) over cfg's bracket.

    The caller supplies a bracket containing lam* (see bracket_lambda).
    Returns the best-by-value iterate; the trace records each midpoint probe
    and the exactly-halving bracket.
    """
    if cfg.lam_lo is None or cfg.lam_hi is None:
        raise ValueError("cfg must carry an explicit bracket; see bracket_lambda")

    def lam_eval(lam, theta):
        return mc_dual_value(lam, theta, pool, rho_bar, loss)

    def inner_fn(lam, th):
        return inner_solve(lam, pool, rho_bar, loss, cfg.inner, th)

    lam, theta, value, trace, converged = _outer_bisect(
        lam_eval, inner_fn, cfg.lam_lo, cfg.lam_hi, cfg.delta, cfg.max_outer,
        theta0)
    return BisectionResult(lam, theta, value, trace, converged)


def bracket_lambda(pool: SamplePool, rho_bar: float, loss: LossModel,
                   theta0) -> Bracket:
    """Geometric bracket for lam*: expand the upper end from 1 by doubling
    until the lam-derivative (at theta0) is positive, shrink the lower end by
    halving until it is negative or the 1e-6 floor is hit (the lam* ~ 0
    regime, reported via floor_hit)."""
    if rho_bar <= 0:
        raise ValueError("bracket_lambda requires rho_bar > 0")
    theta0 = np.asarray(theta0, dtype=np.float64)

    def g(lam):
        return mc_dual_value(lam, theta0, pool, rho_bar, loss).grad_lambda

    hi = 1.0
    while g(hi) <= 0:
        hi *= 2.0
        if hi > 2.0 ** 60:  # derivative tends to rho_bar > 0, so unreachable
            raise RuntimeError("lam bracket expansion failed")
    lo = 1.0
    floor_hit = False
    while g(lo) >= 0:
        lo /= 2.0
        if lo < LAMBDA_FLOOR:
            lo = LAMBDA_FLOOR
            floor_hit = True
            break
    if lo >= hi:
        lo = hi / 2.0
    return Bracket(lo, hi, floor_hit)


def sinkhorn_solve(pool: SamplePool, rho_bar: float, loss: LossModel, theta0,
                   cfg: BisectionConfig = None) -> BisectionResult:
    """End-to-end solve: degenerate rho_bar=0 path, bracketing, bisection.

    rho_bar = 0 collapses the ball to the kernel-smoothed nominal, so the
    problem is plain SAA over the pooled draws (lam reported as inf). When
    the bracket's lower floor binds (lam* ~ 0), the solve runs at the floor
    and is flagged via lambda_floor.
    """
    if rho_bar < 0:
        raise ValueError("rho_bar must be >= 0")
    cfg = cfg or BisectionConfig()
    theta0 = np.asarray(theta0, dtype=np.float64)
    if rho_bar == 0.0:

        def vg(theta):
            F = loss.value(theta, pool.flat)
            G = loss.theta_subgrad(theta, pool.flat)
            return F.mean(), G.mean(axis=0)

        theta, val, _ = _subgradient_descent(vg, loss.project, theta0, cfg.inner)
        return BisectionResult(math.inf, theta, val, [], True)
    bracket = bracket_lambda(pool, rho_bar, loss, theta0)
    if bracket.floor_hit:
        theta, val = inner_solve(LAMBDA_FLOOR, pool, rho_bar, loss, cfg.inner,
                                 theta0)
        return BisectionResult(LAMBDA_FLOOR, theta, val, [], True,
                               lambda_floor=True)
    run_cfg = BisectionConfig(bracket.lo, bracket.hi, cfg.delta, cfg.max_outer,
                              cfg.inner)
    return bisection_solve(pool, rho_bar, loss, run_cfg, theta0)


def saa_solve(data: EmpiricalDistribution, loss: LossModel,
              cfg: InnerSolverConfig, theta0):
    """Projected subgradient on the plain sample average (1/n) sum_i f(x_i)."""

    def vg(theta):
        F = loss.value(theta, data.points)
        G = loss.theta_subgrad(theta, data.points)
        return F.mean(), G.mean(axis=0)

    theta, val, _ = _subgradient_descent(vg, loss.project, theta0, cfg)
    return theta, val


@dataclass
class KLSolveResult:
    lam: float
    theta: np.ndarray
    value: float
    lambda_floor: bool = False


def kl_dro_solve(data: EmpiricalDistribution, eta: float, loss: LossModel,
                 cfg: BisectionConfig, theta0=None) -> KLSolveResult:
    """KL-divergence-ball DRO via the same bisection machinery.

    eta = 0 degenerates to SAA (the dual infimum is approached as lam grows,
    reported as lam = inf). The lam-derivative tends to eta > 0 for large lam
    but the expansion is capped at 1e6, where the objective is within O(1/lam)
    of SAA for bounded losses.
    """
    if eta < 0:
        raise ValueError("eta must be >= 0")
    cfg = cfg or BisectionConfig()
    if theta0 is None:
        theta0 = loss.project(np.zeros(loss.dim_theta))
    theta0 = np.asarray(theta0, dtype=np.float64)
    if eta == 0.0:
        theta, val = saa_solve(data, loss, cfg.inner, theta0)
        return KLSolveResult(math.inf, theta, val)

    def lam_eval(lam, theta):
        return kl_dual_eval(lam, theta, data, eta, loss)

    def inner_fn(lam, th):
        def vg(theta):
            ev = kl_dual_eval(lam, theta, data, eta, loss)
            return ev.value, ev.grad_theta

        theta, val, _ = _subgradient_descent(vg, loss.project, th, cfg.inner)
        return theta, val

    hi = 1.0
    capped = False
    while lam_eval(hi, theta0).grad_lambda <= 0:
        hi *= 2.0
        if hi >= KL_LAMBDA_CAP:
            hi = KL_LAMBDA_CAP
            capped = True
            break
    lo = 1.0
    floor_hit = False
    while lam_eval(lo, theta0).grad_lambda >= 0:
        lo /= 2.0
        if lo < LAMBDA_FLOOR:
            lo = LAMBDA_FLOOR
            floor_hit = True
            break
    if floor_hit:
        theta, val = inner_fn(LAMBDA_FLOOR, theta0)
        return KLSolveResult(LAMBDA_FLOOR, theta, val, lambda_floor=True)
    if lo >= hi:
        lo = hi / 2.0
    lam, theta, value, _, _ = _outer_bisect(
        lam_eval, inner_fn, lo, hi, cfg.delta, cfg.max_outer, theta0,
        validate=not capped)
    return KLSolveResult(lam, theta, value)
