"""Restarted Nelder-Mead with deterministic multi-start, shared by the optimizers."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

RESTART_TOL = 1e-10
DEFAULT_MAXFEV = 20000
DEFAULT_MAX_RESTARTS = 8


@dataclass(frozen=True)
class SimplexResult:
    x: np.ndarray
    fun: float
    nfev: int
    converged: bool


def _nm(fun, x0, maxfev):
    return minimize(
        fun,
        x0,
        method="Nelder-Mead",
        options={"maxfev": maxfev, "adaptive": len(x0) > 4, "xatol": 1e-10, "fatol": 1e-14},
    )


def restarted_nelder_mead(fun, x0, maxfev=DEFAULT_MAXFEV, max_restarts=DEFAULT_MAX_RESTARTS, tol=RESTART_TOL):
    """Nelder-Mead restarted from its own optimum until a full restart improves by < ``tol``.

    Args:
        fun: Scalar objective.
        x0: Starting point.
        maxfev: Evaluation budget per simplex run.
        max_restarts: Restarts allowed after the first run.
        tol: Convergence threshold on the improvement over a full restart.

    Returns:
        SimplexResult; ``converged`` is False when ``max_restarts`` ran out.
    """
    r = _nm(fun, np.asarray(x0, dtype=float), maxfev)
    x, f, nfev = r.x, float(r.fun), int(r.nfev)
    for _ in range(max_restarts):
        r = _nm(fun, x, maxfev)
        nfev += int(r.nfev)
        gain = f - float(r.fun)
        if r.fun < f:
            x, f = r.x, float(r.fun)
        if gain < tol:
            return SimplexResult(x, f, nfev, True)
    return SimplexResult(x, f, nfev, False)


@dataclass(frozen=True)
class MultistartResult:
    x: np.ndarray
    fun: float
    nfev: int
    converged: bool
    start_values: np.ndarray


def multistart(fun, starts, screen_fev=3000, n_polish=4, polish_fev=DEFAULT_MAXFEV,
               max_restarts=DEFAULT_MAX_RESTARTS, floor=1e-14):
    """Screen every start with a short simplex run, then fully polish the best few.

    Ranking uses objective values only (ties broken by the screened point
    itself), so the result does not depend on the order of ``starts``.
    If some start already scores below ``floor`` it is returned unchanged.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    values = np.array([fun(s) for s in starts])
    nfev = len(starts)
    k = int(np.argmin(values))
    if values[k] <= floor:
        return MultistartResult(starts[k], float(values[k]), nfev, True, values)
    screened = []
    for s in starts:
        r = _nm(fun, s, screen_fev)
        nfev += int(r.nfev)
        screened.append((float(r.fun), tuple(r.x)))
    screened.sort()
    best = None
    for f0, x0 in screened[:n_polish]:
        r = restarted_nelder_mead(fun, np.array(x0), polish_fev, max_restarts)
        nfev += r.nfev
        if best is None or (r.fun, tuple(r.x)) < (best.fun, tuple(best.x)):
            best = r
    return MultistartResult(best.x, best.fun, nfev, best.converged, values)
