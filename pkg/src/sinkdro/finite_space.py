"""Exact solvers for losses on a finite sample space.

When nu is the counting measure on L atoms the dual objective

    g(lam) = lam*rho_bar + (lam*eps/n) sum_i log sum_l q_il e^{f_l/(lam*eps)}

and its lam-derivative are available in closed form, so the outer problem
reduces to scalar bisection with no Monte Carlo error. The primal can be
brute-forced through the one-parameter exponential-tilt family (optimal by
the Lagrangian structure), which makes small finite instances the strongest
correctness oracle in the package: dual and primal must agree to fp noise.
The conic export writes the equivalent exponential-cone program so external
solvers can audit the same instances.
"""

import math
from dataclasses import dataclass

import numpy as np

from .worstcase import lambda_zero_diagnostic

_LAM_HUGE = 2.0 ** 80
_LAM_TINY = 2.0 ** -80


@dataclass
class FiniteInstance:
    """f values and per-center kernel weights q on a finite support."""

    f: np.ndarray        # (L,)
    q: np.ndarray        # (n, L), rows sum to 1
    rho_bar: float
    eps: float
    atoms: np.ndarray = None  # (L, d), carried for reporting only

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=np.float64).ravel()
        self.q = np.atleast_2d(np.asarray(self.q, dtype=np.float64))
        if self.f.size == 0 or not np.isfinite(self.f).all():
            raise ValueError("f must be nonempty and finite")
        if self.q.shape[1] != self.f.size:
            raise ValueError("q columns must match len(f)")
        if (self.q < 0).any():
            raise ValueError("q must be nonnegative")
        if np.abs(self.q.sum(axis=1) - 1.0).max() > 1e-8:
            raise ValueError("q rows must sum to 1")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.atoms is not None:
            self.atoms = np.atleast_2d(np.asarray(self.atoms, dtype=np.float64))
            if self.atoms.shape[0] != self.f.size:
                raise ValueError("atoms must match len(f)")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def L(self) -> int:
        return self.f.size

    def saa_value(self) -> float:
        """(1/n) sum_il q_il f_l, the zero-budget (KDE-SAA) value."""
        return float((self.q @ self.f).mean())


def _tilted_rows_finite(f, logq, beta):
    """Row-wise log sum_l q_l e^{beta f_l} and tilted means, max-stabilized."""
    a = logq + beta * f
    m = a.max(axis=1)
    w = np.exp(a - m[:, None])
    s = w.sum(axis=1)
    return m + np.log(s), (w @ f) / s


def dual_objective_discrete(inst: FiniteInstance, lam: float):
    """(g(lam), g'(lam)) for the exact finite-support dual."""
    if lam <= 0:
        raise ValueError("lam must be > 0")
    with np.errstate(divide="ignore"):
        logq = np.log(inst.q)
    lme, tmean = _tilted_rows_finite(inst.f, logq, 1.0 / (lam * inst.eps))
    value = lam * inst.rho_bar + lam * inst.eps * lme.mean()
    grad = inst.rho_bar + inst.eps * lme.mean() - tmean.mean() / lam
    return float(value), float(grad)


def exact_dual_discrete(inst: FiniteInstance):
    """Solve the finite-support dual exactly. Returns (lam_star, value).

    rho_bar < 0 is an infeasible ball: value -inf. The lam* = 0 regime
    (essential-supremum solution) is detected by lambda_zero_diagnostic; a
    zero budget with lam* > 0 has its infimum at lam -> inf, the KDE-SAA.
    """
    if inst.rho_bar < 0:
        return 0.0, float("-inf")
    diag = lambda_zero_diagnostic(inst.f, inst.q, inst.rho_bar, inst.eps)
    if diag.lambda_star_zero:
        return 0.0, float(inst.f.max())
    if inst.rho_bar == 0:
        return float("inf"), inst.saa_value()

    lo = hi = 1.0
    while dual_objective_discrete(inst, hi)[1] < 0 and hi < _LAM_HUGE:
        hi *= 2.0
    while dual_objective_discrete(inst, lo)[1] > 0 and lo > _LAM_TINY:
        lo /= 2.0
    for _ in range(200):
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        if dual_objective_discrete(inst, mid)[1] < 0:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    return float(lam), dual_objective_discrete(inst, lam)[0]


def _tilt_stats(inst, logq, t):
    """(objective, budget) of the tilt family gamma_i(t) ~ q_i e^{f/t}."""
    lme, tmean = _tilted_rows_finite(inst.f, logq, 1.0 / t)
    return float(tmean.mean()), float(inst.eps * (tmean / t - lme).mean())


def brute_force_primal(inst: FiniteInstance, grid_points: int = 10_000,
                       zoom_iters: int = 60) -> float:
    """Maximize the primal by sweeping the exponential-tilt parameter.

    The optimal conditionals form the one-parameter family
    gamma_i(t) ~ q_i e^{f/t}; objective and KL budget both fall as t grows,
    so the optimum is the smallest feasible t. A log-grid sweep locates the
    budget crossing and geometric bisection refines it. Endpoint candidates:
    t = inf (gamma = q, the SAA) and t -> 0+ (each row piled onto its
    supported argmax atoms, when the budget permits).
    """
    if inst.rho_bar < 0:
        return float("-inf")
    with np.errstate(divide="ignore"):
        logq = np.log(inst.q)
    candidates = [inst.saa_value()]

    supported = inst.q > 0
    row_max = np.where(supported, inst.f[None, :], -np.inf).max(axis=1)
    tie = supported & (inst.f[None, :]
                       >= row_max[:, None] - 1e-12 * (1.0 + np.abs(row_max[:, None])))
    argmax_mass = np.where(tie, inst.q, 0.0).sum(axis=1)
    if -inst.eps * np.log(argmax_mass).mean() <= inst.rho_bar:
        candidates.append(float(row_max.mean()))

    t_feas = None
    t_infeas = None
    for t in np.logspace(-8.0, 8.0, grid_points):
        if _tilt_stats(inst, logq, t)[1] <= inst.rho_bar:
            t_feas = t
            break
        t_infeas = t
    if t_feas is not None:
        if t_infeas is not None:
            for _ in range(zoom_iters):
                mid = math.sqrt(t_infeas * t_feas)
                if _tilt_stats(inst, logq, mid)[1] <= inst.rho_bar:
                    t_feas = mid
                else:
                    t_infeas = mid
        candidates.append(_tilt_stats(inst, logq, t_feas)[0])
    return float(max(candidates))


# ---------------------------------------------------------------------------
# exponential-cone export (CBF v2)
# ---------------------------------------------------------------------------

_CBF_HEADER = """\
# Exponential-cone program for the finite-support dual:
#   minimize  rho_bar*lam + (1/n) sum_i s_i
#   s.t.      eps*lam - sum_l q_il a_il >= 0            (rows 0..n-1, L+)
#             (a_il, eps*lam, f_l - s_i) in EXP         (one cone per (i,l))
# Variables (column order): x0 = lam (L+), x_{1+i} = s_i, x_{1+n+i*L+l} = a_il.
# EXP rows follow the CBF convention x1 >= x2*exp(x3/x2), x2 > 0. The source
# cone {(v, w, d): exp(d/v) <= w/v} maps with the permutation
#   (x1, x2, x3) = (w, v, d) = (a_il, eps*lam, f_l - s_i),
# written as consecutive rows n+3k, n+3k+1, n+3k+2 for k = i*L + l.
"""


def export_conic(inst: FiniteInstance, path) -> None:
    """Write the instance's exponential-cone program as a CBF v2 text file."""
    n, L = inst.n, inst.L
    obj = [(0, inst.rho_bar)] + [(1 + i, 1.0 / n) for i in range(n)]
    acoord = []
    bcoord = []
    for i in range(n):
        acoord.append((i, 0, inst.eps))
        for ell in range(L):
            if inst.q[i, ell] != 0.0:
                acoord.append((i, 1 + n + i * L + ell, -inst.q[i, ell]))
    for i in range(n):
        for ell in range(L):
            k = i * L + ell
            row = n + 3 * k
            acoord.append((row, 1 + n + k, 1.0))
            acoord.append((row + 1, 0, inst.eps))
            acoord.append((row + 2, 1 + i, -1.0))
            bcoord.append((row + 2, inst.f[ell]))

    lines = [_CBF_HEADER, "VER", "2", "", "OBJSENSE", "MIN", ""]
    lines += ["VAR", f"{1 + n + n * L} 2", "L+ 1", f"F {n + n * L}", ""]
    lines += ["CON", f"{n + 3 * n * L} {1 + n * L}", f"L+ {n}"]
    lines += ["EXP 3"] * (n * L)
    lines.append("")
    lines += ["OBJACOORD", str(len(obj))]
    lines += [f"{j} {repr(float(v))}" for j, v in obj]
    lines.append("")
    lines += ["ACOORD", str(len(acoord))]
    lines += [f"{r} {j} {repr(float(v))}" for r, j, v in acoord]
    lines.append("")
    lines += ["BCOORD", str(len(bcoord))]
    lines += [f"{r} {repr(float(v))}" for r, v in bcoord]
    lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


def read_conic(path) -> FiniteInstance:
    """Parse a file written by export_conic back into a FiniteInstance."""
    with open(path) as fh:
        raw = [ln.strip() for ln in fh]
    lines = [ln for ln in raw if ln and not ln.startswith("#")]
    pos = 0

    def take():
        nonlocal pos
        pos += 1
        return lines[pos - 1]

    def expect(keyword):
        tok = take()
        if tok != keyword:
            raise ValueError(f"expected {keyword!r}, found {tok!r}")

    expect("VER")
    if take() != "2":
        raise ValueError("unsupported CBF version")
    expect("OBJSENSE")
    if take() != "MIN":
        raise ValueError("expected a minimization objective")

    expect("VAR")
    take()  # variable count and block count, implied by CON below
    var_blocks = [take().split() for _ in range(2)]
    if var_blocks[0][0] != "L+" or var_blocks[1][0] != "F":
        raise ValueError("unexpected variable block layout")

    expect("CON")
    nrows, nblocks = (int(tok) for tok in take().split())
    con_blocks = [take().split() for _ in range(nblocks)]
    if con_blocks[0][0] != "L+":
        raise ValueError("expected the linear block first")
    n = int(con_blocks[0][1])
    if any(blk[0] != "EXP" for blk in con_blocks[1:]):
        raise ValueError("expected EXP cones after the linear block")
    L = (nblocks - 1) // n
    if nrows != n + 3 * n * L or (nblocks - 1) % n != 0:
        raise ValueError("row count does not match an exported instance")

    expect("OBJACOORD")
    rho_bar = None
    for _ in range(int(take())):
        j, v = take().split()
        if int(j) == 0:
            rho_bar = float(v)
    if rho_bar is None:
        raise ValueError("objective has no lam coefficient")

    expect("ACOORD")
    eps = None
    q = np.zeros((n, L))
    for _ in range(int(take())):
        r, j, v = take().split()
        r, j, v = int(r), int(j), float(v)
        if r < n:
            if j == 0:
                eps = v
            else:
                k = j - 1 - n
                q[k // L, k % L] = -v
    if eps is None:
        raise ValueError("linear rows have no lam coefficient")

    expect("BCOORD")
    f = np.zeros(L)
    for _ in range(int(take())):
        r, v = take().split()
        r = int(r)
        if r >= n and (r - n) % 3 == 2:
            f[((r - n) // 3) % L] = float(v)
    return FiniteInstance(f, q, rho_bar, eps)
