"""Classical second-order baselines on ||h(x) - y||^2.

Full Newton uses the exact chain-rule Hessian
``2 (J^T J + sum_i r_i d2h_i)`` whenever the map supplies second
derivatives, falling back to central differences of the Jacobian or of
the gradient. Gauss-Newton drops the curvature term. Neither does any
line search or damping scheduling; `damping` is a fixed shift of the
system matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import Array, NlsProblem, SmoothMap, as_vector

RESIDUAL_TOL = 1e-12
STEP_REL_TOL = 1e-10
STALL_STEP_TOL = 1e-14
GRAD_TOL = 1e-12
DIVERGENCE_THRESHOLD = 1e8


class RunStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"
    SINGULAR_HESSIAN = "singular_hessian"
    SADDLE_STALL = "saddle_stall"


@dataclass(frozen=True)
class DescentRun:
    """Iterates and per-iterate residual norms of one solver run."""

    iterates: tuple[Array, ...]
    residuals: tuple[float, ...]
    status: RunStatus

    def __post_init__(self):
        if not self.iterates:
            raise ValueError("a run records at least its starting point")
        if len(self.iterates) != len(self.residuals):
            raise ValueError("iterates and residuals must be aligned")

    @property
    def final(self) -> Array:
        return self.iterates[-1]

    def csv_rows(self, x_star=None) -> list[tuple]:
        """(iteration, residual, normalized parameter error) rows.

        The normalized error column is empty unless the true optimum is
        supplied.
        """
        rows = []
        for k, (x, r) in enumerate(zip(self.iterates, self.residuals)):
            if x_star is None:
                rows.append((k, r, ""))
            else:
                x_star_v = np.asarray(x_star, dtype=float).reshape(-1)
                err = np.linalg.norm(x - x_star_v) / np.linalg.norm(x_star_v)
                rows.append((k, r, err))
        return rows


def _component_hessians(map: SmoothMap, x: Array) -> Array:
    """(m, p, p) second derivatives, analytic or FD on the Jacobian."""
    if map.hess is not None:
        H = np.asarray(map.hess(x), dtype=float)
        return H.reshape(map.feature_dim, map.param_dim, map.param_dim)
    p = map.param_dim
    out = np.empty((map.feature_dim, p, p))
    for j in range(p):
        h = map.jacobian_fd_step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        out[:, :, j] = (map.jacobian(xp) - map.jacobian(xm)) / (2.0 * h)
    # symmetrize across the two parameter axes
    return (out + out.transpose(0, 2, 1)) / 2.0


def nls_gradient(problem: NlsProblem, x: Array) -> Array:
    r = problem.map.evaluate(x) - problem.target
    return 2.0 * problem.map.jacobian(x).T @ r


def nls_hessian(problem: NlsProblem, x: Array) -> Array:
    r = problem.map.evaluate(x) - problem.target
    J = problem.map.jacobian(x)
    curvature = np.einsum("i,ijk->jk", r, _component_hessians(problem.map, x))
    return 2.0 * (J.T @ J + curvature)


def _classify_end(residuals: list[float]) -> RunStatus:
    # A run that used up its budget while moving away from the data is a
    # divergence even when the residual stays bounded (e.g. a parameter
    # escaping to infinity on a saturating map).
    if residuals[-1] > residuals[0] and residuals[-1] > RESIDUAL_TOL:
        return RunStatus.DIVERGED
    return RunStatus.MAX_ITERS


def _descent_loop(
    problem: NlsProblem, x0, max_iters: int, step_fn, stall_on_singular_stationary: bool
) -> DescentRun:
    x = as_vector(x0, "x0", dim=problem.map.param_dim)
    iterates = [np.array(x)]
    residuals = [problem.residual_norm(x)]
    status = None

    for _ in range(max_iters):
        r = residuals[-1]
        if not np.isfinite(r) or r > DIVERGENCE_THRESHOLD:
            status = RunStatus.DIVERGED
            break
        if r <= RESIDUAL_TOL:
            status = RunStatus.CONVERGED
            break
        x = iterates[-1]
        step, singular = step_fn(x)
        if singular:
            # a singular system at a stationary point is a saddle the
            # full-Newton model cannot leave; Gauss-Newton has no such
            # notion and just reports the singularity
            status = RunStatus.SINGULAR_HESSIAN
            if stall_on_singular_stationary:
                grad = nls_gradient(problem, x)
                if np.linalg.norm(grad) <= GRAD_TOL:
                    status = RunStatus.SADDLE_STALL
            break
        if not np.all(np.isfinite(step)):
            status = RunStatus.DIVERGED
            break
        if np.linalg.norm(step) < STALL_STEP_TOL:
            status = RunStatus.SADDLE_STALL
            break
        x_next = x - step
        iterates.append(x_next)
        residuals.append(problem.residual_norm(x_next))
        if np.linalg.norm(x_next - x) <= STEP_REL_TOL * max(1.0, np.linalg.norm(x_next)):
            status = RunStatus.CONVERGED
            break

    if status is None:
        status = _classify_end(residuals)
    return DescentRun(iterates=tuple(iterates), residuals=tuple(residuals), status=status)


def newton_minimize(
    problem: NlsProblem, x0, max_iters: int = 50, damping: float = 0.0
) -> DescentRun:
    """Full Newton iteration ``x - (H + damping I)^{-1} grad``.

    An exactly singular system yields status `singular_hessian` (or
    `saddle_stall` when the gradient also vanishes), never an
    exception.
    """
    if damping < 0:
        raise ValueError("damping must be >= 0")
    p = problem.map.param_dim
    shift = damping * np.eye(p)

    def step_fn(x):
        H = nls_hessian(problem, x) + shift
        g = nls_gradient(problem, x)
        try:
            return np.linalg.solve(H, g), False
        except np.linalg.LinAlgError:
            return None, True

    return _descent_loop(problem, x0, max_iters, step_fn, stall_on_singular_stationary=True)


def gauss_newton_minimize(
    problem: NlsProblem, x0, max_iters: int = 50, damping: float = 0.0
) -> DescentRun:
    """Gauss-Newton iteration ``x + (J^T J + damping I)^{-1} J^T (y - h)``."""
    if damping < 0:
        raise ValueError("damping must be >= 0")
    p = problem.map.param_dim
    shift = damping * np.eye(p)

    def step_fn(x):
        J = problem.map.jacobian(x)
        r = problem.map.evaluate(x) - problem.target
        try:
            # minus sign: the shared loop applies x - step
            return np.linalg.solve(J.T @ J + shift, J.T @ r), False
        except np.linalg.LinAlgError:
            return None, True

    return _descent_loop(problem, x0, max_iters, step_fn, stall_on_singular_stationary=False)
