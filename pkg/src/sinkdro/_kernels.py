"""Numeric hot kernels: tilted log-mean-exp rows, log-domain matrix scaling,
simplex projection.

Every kernel exists twice: a plain numpy implementation and a numba @njit
version compiled from the same scalar recipe. The public names at the bottom
of this module point at one of the two, chosen by the environment variable
SINKDRO_BACKEND:

    SINKDRO_BACKEND=numba   require numba (ImportError if absent)
    SINKDRO_BACKEND=numpy   force the pure-numpy fallback
    unset                   numba when importable, numpy otherwise

Both implementations are kept importable (``*_numpy`` / ``*_numba``) so the
equivalence tests and benchmarks/bench_backends.py can compare them directly.
All kernels take float64 C-contiguous arrays and are pure functions.
"""

import os

import numpy as np

_env = os.environ.get("SINKDRO_BACKEND", "").strip().lower()
if _env not in ("", "numpy", "numba"):
    raise RuntimeError(f"SINKDRO_BACKEND must be 'numpy' or 'numba', got {_env!r}")

HAVE_NUMBA = False
if _env != "numpy":
    try:
        import numba

        HAVE_NUMBA = True
    except ImportError:
        if _env == "numba":
            raise

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def tilted_rows_numpy(fvals, beta):
    """Per-row stabilized log-mean-exp and exponential-tilt weights.

    For each row i of fvals (shape n x m) and inverse temperature beta > 0:

        lme[i]     = log( (1/m) * sum_j exp(beta * f_ij) )
        weights[i] = softmax_j(beta * f_i.)          (sums to 1 per row)
        tmean[i]   = sum_j weights[i,j] * f_ij       (tilted mean of f)

    Stabilization is the usual row-max shift, so any finite beta*f is safe.
    """
    fvals = np.asarray(fvals, dtype=np.float64)
    n, m = fvals.shape
    z = beta * fvals
    zmax = z.max(axis=1)
    w = np.exp(z - zmax[:, None])
    s = w.sum(axis=1)
    lme = zmax + np.log(s / m)
    w /= s[:, None]
    tmean = (w * fvals).sum(axis=1)
    return lme, tmean, w


def pooled_logmeanexp_numpy(fvals, beta):
    """log( (1/(n*m)) * sum_ij exp(beta * f_ij) ), stabilized by the global max."""
    fvals = np.asarray(fvals, dtype=np.float64)
    zmax = beta * fvals.max()
    return zmax + np.log(np.exp(beta * fvals - zmax).sum() / fvals.size)


def sinkhorn_logscale_numpy(logkern, logp, logq, tol, max_iters):
    """Alternating log-domain scaling for entropic transport.

    logkern[i,j] already folds in the reference product measure:
    logkern = log p_i + log nu_j - C_ij / eps. The scaled coupling is
    gamma_ij = exp(phi_i + psi_j + logkern_ij). A sweep updates phi (rows
    exact), then psi (columns exact); the reported violation is the max
    absolute row-marginal error after the psi half-step, so at convergence
    both marginals hold to tol.

    Returns (phi, psi, iters, violation).
    """
    n, m = logkern.shape
    phi = np.zeros(n)
    psi = np.zeros(m)
    violation = np.inf
    iters = 0
    for iters in range(1, max_iters + 1):
        phi = logp - _lse_rows_numpy(logkern + psi[None, :])
        psi = logq - _lse_rows_numpy((logkern + phi[:, None]).T)
        rows = np.exp(logkern + phi[:, None] + psi[None, :]).sum(axis=1)
        violation = np.abs(rows - np.exp(logp)).max()
        if violation <= tol:
            break
    return phi, psi, iters, violation


def _lse_rows_numpy(a):
    amax = a.max(axis=1)
    # rows that are entirely -inf stay -inf instead of producing nan
    safe = np.where(np.isfinite(amax), amax, 0.0)
    out = safe + np.log(np.exp(a - safe[:, None]).sum(axis=1))
    return np.where(np.isfinite(amax), out, -np.inf)


def simplex_project_numpy(v):
    """Euclidean projection onto {w : w >= 0, sum w = 1} (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u > css / idx)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True, nogil=True)
    def tilted_rows_numba(fvals, beta):
        n, m = fvals.shape
        lme = np.empty(n)
        tmean = np.empty(n)
        w = np.empty((n, m))
        for i in range(n):
            zmax = beta * fvals[i, 0]
            for j in range(1, m):
                z = beta * fvals[i, j]
                if z > zmax:
                    zmax = z
            s = 0.0
            for j in range(m):
                e = np.exp(beta * fvals[i, j] - zmax)
                w[i, j] = e
                s += e
            lme[i] = zmax + np.log(s / m)
            t = 0.0
            for j in range(m):
                w[i, j] /= s
                t += w[i, j] * fvals[i, j]
            tmean[i] = t
        return lme, tmean, w

    @njit(cache=True, nogil=True)
    def pooled_logmeanexp_numba(fvals, beta):
        n, m = fvals.shape
        zmax = beta * fvals[0, 0]
        for i in range(n):
            for j in range(m):
                z = beta * fvals[i, j]
                if z > zmax:
                    zmax = z
        s = 0.0
        for i in range(n):
            for j in range(m):
                s += np.exp(beta * fvals[i, j] - zmax)
        return zmax + np.log(s / (n * m))

    @njit(cache=True, nogil=True)
    def sinkhorn_logscale_numba(logkern, logp, logq, tol, max_iters):
        n, m = logkern.shape
        phi = np.zeros(n)
        psi = np.zeros(m)
        violation = np.inf
        iters = 0
        for it in range(1, max_iters + 1):
            iters = it
            for i in range(n):
                amax = -np.inf
                for j in range(m):
                    a = logkern[i, j] + psi[j]
                    if a > amax:
                        amax = a
                if amax == -np.inf:
                    phi[i] = -np.inf
                    continue
                s = 0.0
                for j in range(m):
                    s += np.exp(logkern[i, j] + psi[j] - amax)
                phi[i] = logp[i] - amax - np.log(s)
            for j in range(m):
                amax = -np.inf
                for i in range(n):
                    a = logkern[i, j] + phi[i]
                    if a > amax:
                        amax = a
                if amax == -np.inf:
                    psi[j] = -np.inf
                    continue
                s = 0.0
                for i in range(n):
                    s += np.exp(logkern[i, j] + phi[i] - amax)
                psi[j] = logq[j] - amax - np.log(s)
            violation = 0.0
            for i in range(n):
                r = 0.0
                for j in range(m):
                    r += np.exp(logkern[i, j] + phi[i] + psi[j])
                err = abs(r - np.exp(logp[i]))
                if err > violation:
                    violation = err
            if violation <= tol:
                break
        return phi, psi, iters, violation

    @njit(cache=True, nogil=True)
    def simplex_project_numba(v):
        d = v.size
        u = np.sort(v)[::-1]
        css = 0.0
        rho = 0
        theta = 0.0
        for k in range(d):
            css += u[k]
            t = (css - 1.0) / (k + 1.0)
            if u[k] > t:
                rho = k
                theta = t
        out = np.empty(d)
        for k in range(d):
            x = v[k] - theta
            out[k] = x if x > 0.0 else 0.0
        return out

else:  # pragma: no cover - exercised only when numba is absent/disabled
    tilted_rows_numba = None
    pooled_logmeanexp_numba = None
    sinkhorn_logscale_numba = None
    simplex_project_numba = None


# ---------------------------------------------------------------------------
# backend binding
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    tilted_rows = tilted_rows_numba
    pooled_logmeanexp = pooled_logmeanexp_numba
    sinkhorn_logscale = sinkhorn_logscale_numba
    simplex_project = simplex_project_numba
else:
    tilted_rows = tilted_rows_numpy
    pooled_logmeanexp = pooled_logmeanexp_numpy
    sinkhorn_logscale = sinkhorn_logscale_numpy
    simplex_project = simplex_project_numpy


def warmup():
    """Trigger JIT compilation of the numba kernels (no-op on numpy backend)."""
    if BACKEND != "numba":
        return
    f = np.array([[0.0, 1.0], [2.0, 3.0]])
    tilted_rows(f, 0.5)
    pooled_logmeanexp(f, 0.5)
    sinkhorn_logscale(-f, np.log(np.array([0.5, 0.5])),
                      np.log(np.array([0.5, 0.5])), 1e-9, 50)
    simplex_project(np.array([0.2, 0.9, -0.1]))
