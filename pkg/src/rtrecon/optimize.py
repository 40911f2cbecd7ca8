"""Dense BFGS quasi-Newton minimizer with backtracking line search.

The inverse Hessian approximation starts from the identity and is
updated with the standard BFGS formula, skipping updates whose curvature
``s.y`` is not safely positive.  The line search backtracks from unit
step until the sufficient-decrease (Armijo) condition holds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalError

logger = logging.getLogger(__name__)

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERATIONS = "max_iterations"
STATUS_LINE_SEARCH_FAILED = "line_search_failed"
STATUS_EARLY_STOP = "early_stop"

CURVATURE_GUARD = 1e-12


@dataclass
class BfgsResult:
    x: np.ndarray
    objective: float
    gradient_norm: float
    iterations: int
    history: np.ndarray
    status: str


def _check_finite(value: float, grad: np.ndarray, x: np.ndarray) -> None:
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        raise NumericalError(
            "objective or gradient became non-finite",
            diagnostics={"x": x.copy(), "objective": value},
        )


def bfgs_minimize(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    gradient_tolerance: float = 1e-8,
    max_iterations: int = 50,
    sufficient_decrease: float = 1e-4,
    backtracking_factor: float = 0.5,
    max_backtracks: int = 60,
    early_stop_window: int | None = None,
    early_stop_rtol: float = 1e-4,
) -> BfgsResult:
    """Minimize a smooth function; returns the best iterate found.

    Stops when the gradient norm falls below ``gradient_tolerance``, the
    iteration cap is reached, or (when ``early_stop_window`` is set) the
    relative objective decrease over that many iterations drops below
    ``early_stop_rtol``.  A failed line search returns the current
    iterate with a warning status instead of raising.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    n = x.size
    f = float(objective(x))
    g = np.asarray(gradient(x), dtype=np.float64)
    _check_finite(f, g, x)
    history = [f]

    if np.linalg.norm(g) <= gradient_tolerance:
        return BfgsResult(x, f, float(np.linalg.norm(g)), 0, np.asarray(history), STATUS_CONVERGED)

    h_inv = np.eye(n)
    status = STATUS_MAX_ITERATIONS
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        p = -(h_inv @ g)
        slope = float(g @ p)
        if slope >= 0.0:
            # approximation lost descent; restart from steepest descent
            h_inv = np.eye(n)
            p = -g
            slope = float(g @ p)

        step = 1.0
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + step * p
            f_new = float(objective(x_new))
            moved = bool(np.any(x_new != x))
            if moved and np.isfinite(f_new) and f_new <= f + sufficient_decrease * step * slope:
                accepted = True
                break
            step *= backtracking_factor
        if not accepted:
            logger.warning("line search failed at iteration %d; returning best iterate", iterations)
            status = STATUS_LINE_SEARCH_FAILED
            iterations -= 1
            break

        g_new = np.asarray(gradient(x_new), dtype=np.float64)
        _check_finite(f_new, g_new, x_new)
        s = x_new - x
        y = g_new - g
        x, f, g = x_new, f_new, g_new
        history.append(f)

        if np.linalg.norm(g) <= gradient_tolerance:
            status = STATUS_CONVERGED
            break
        if (
            early_stop_window is not None
            and len(history) > early_stop_window
            and history[-1 - early_stop_window] - history[-1]
            <= early_stop_rtol * max(abs(history[-1 - early_stop_window]), 1e-300)
        ):
            status = STATUS_EARLY_STOP
            break

        sy = float(s @ y)
        if sy > CURVATURE_GUARD * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            hy = h_inv @ y
            # (I - rho s y^t) H (I - rho y s^t) + rho s s^t
            h_inv -= rho * (np.outer(s, hy) + np.outer(hy, s))
            h_inv += rho * rho * (y @ hy + sy) * np.outer(s, s)

    return BfgsResult(
        x=x,
        objective=f,
        gradient_norm=float(np.linalg.norm(g)),
        iterations=iterations,
        history=np.asarray(history),
        status=status,
    )
