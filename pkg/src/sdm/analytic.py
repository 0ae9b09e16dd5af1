"""Scalar-function benchmark: reversed-cascade training vs full Newton.

Each registered function carries analytic first and second derivatives
and an exact inverse on its declared target range, so training data and
ground truth come from an oracle rather than from the method under
test. Targets never include a point with optimum zero (the convergence
metric divides by ||x*||).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .baselines import RunStatus, newton_minimize
from .core import DescentSequence, NlsProblem, SmoothMap, apply_sequence
from .trainer import TrainerConfig, TrainingSet, train

RESIDUAL_CAP = 1e8

# below this, both methods sit in float rounding dust and accuracy
# comparisons between them are meaningless
ACCURACY_FLOOR = 1e-14


def _bisect_inverse(f, y: float, lo: float, hi: float, tol: float = 1e-12) -> float:
    """Inverse of a strictly increasing scalar f by bracketed bisection."""
    flo, fhi = f(lo), f(hi)
    if not (flo <= y <= fhi):
        raise ValueError(f"target {y} outside bracket [{flo}, {fhi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class AnalyticFunction:
    """A scalar benchmark function with oracle derivatives and inverse."""

    name: str
    h: callable
    h_prime: callable
    h_double_prime: callable
    h_inverse: callable
    y_lo: float
    y_hi: float
    train_step: float
    test_step: float
    x0: float

    def __post_init__(self):
        if not self.test_step < self.train_step:
            raise ValueError("test targets must be generated at a finer step than training")

    def smooth_map(self) -> SmoothMap:
        return SmoothMap(
            1,
            1,
            lambda x: np.array([self.h(x[0])]),
            jac=lambda x: np.array([[self.h_prime(x[0])]]),
            hess=lambda x: np.array([[[self.h_double_prime(x[0])]]]),
            name=self.name,
        )

    def _targets(self, step: float) -> np.ndarray:
        n = int(round((self.y_hi - self.y_lo) / step)) + 1
        return np.linspace(self.y_lo, self.y_lo + step * (n - 1), n)

    def train_targets(self) -> np.ndarray:
        return self._targets(self.train_step)

    def test_targets(self) -> np.ndarray:
        return self._targets(self.test_step)

    def constants_header(self) -> str:
        return (
            f"function={self.name} y_range=[{self.y_lo}:{self.train_step}:{self.y_hi}] "
            f"test_step={self.test_step} x0={self.x0}"
        )


def registry() -> dict[str, AnalyticFunction]:
    """The four benchmark functions.

    The linear entry is a control slot: one-step convergence on it
    separates cascade behavior from genuine nonlinearity. The exp start
    sits where the full-Newton curvature is negative for every target,
    so that baseline walks away from the data.
    """
    return {
        "linear": AnalyticFunction(
            name="linear",
            h=lambda t: 2.0 * t,
            h_prime=lambda t: 2.0,
            h_double_prime=lambda t: 0.0,
            h_inverse=lambda y: y / 2.0,
            y_lo=0.2, y_hi=2.0, train_step=0.1, test_step=0.05, x0=0.4,
        ),
        "cube": AnalyticFunction(
            name="cube",
            h=lambda t: t**3,
            h_prime=lambda t: 3.0 * t**2,
            h_double_prime=lambda t: 6.0 * t,
            h_inverse=lambda y: float(np.cbrt(y)),
            y_lo=0.3, y_hi=3.0, train_step=0.05, test_step=0.025, x0=0.0,
        ),
        "exp": AnalyticFunction(
            name="exp",
            h=math.exp,
            h_prime=math.exp,
            h_double_prime=math.exp,
            h_inverse=math.log,
            y_lo=1.1, y_hi=4.0, train_step=0.05, test_step=0.025, x0=-2.0,
        ),
        "erf": AnalyticFunction(
            name="erf",
            h=math.erf,
            h_prime=lambda t: 2.0 / math.sqrt(math.pi) * math.exp(-t * t),
            h_double_prime=lambda t: -4.0 * t / math.sqrt(math.pi) * math.exp(-t * t),
            h_inverse=lambda y: _bisect_inverse(math.erf, y, -6.0, 6.0),
            y_lo=-0.89, y_hi=0.89, train_step=0.02, test_step=0.004, x0=0.0,
        ),
    }


def build_training_set(fn: AnalyticFunction) -> TrainingSet:
    """Targets sampled on the training range, optima via the inverse oracle."""
    ys = fn.train_targets()
    optima = [np.array([fn.h_inverse(y)]) for y in ys]
    targets = [np.array([y]) for y in ys]
    return TrainingSet.reversed_targets(fn.smooth_map(), np.array([fn.x0]), optima, targets)


@dataclass(frozen=True)
class ComparisonResult:
    """Mean normalized residual per iteration for both methods."""

    function: str
    iterations: tuple[int, ...]
    sdm_mean: tuple[float, ...]
    newton_mean: tuple[float, ...]
    n_test: int
    newton_statuses: tuple[str, ...]
    sdm_final_mean: float
    newton_final_mean: float
    sequence: DescentSequence
    constants_header: str

    def rows(self) -> list[tuple]:
        out = []
        for method, series in (("sdm", self.sdm_mean), ("newton", self.newton_mean)):
            for k, v in zip(self.iterations, series):
                out.append((method, k, v, self.n_test))
        return out


def _padded_errors(iterates, x_star: float, length: int) -> np.ndarray:
    """Normalized |x_k - x*| / |x*|, last value repeated out to `length`."""
    errs = [abs(float(x[0]) - x_star) / abs(x_star) for x in iterates]
    while len(errs) < length:
        errs.append(errs[-1])
    errs = np.array(errs[:length])
    errs[~np.isfinite(errs)] = RESIDUAL_CAP
    return np.minimum(errs, RESIDUAL_CAP)


def run_comparison(fn: AnalyticFunction, stages: int = 10) -> ComparisonResult:
    """Train a reversed cascade, then race it against Newton on test targets."""
    seq = train(build_training_set(fn), TrainerConfig(stages=stages, ridge=0.0))
    smap = fn.smooth_map()
    x0 = np.array([fn.x0])

    ys = fn.test_targets()
    sdm_errs = np.empty((len(ys), stages + 1))
    newton_errs = np.empty((len(ys), stages + 1))
    statuses = []
    for i, y in enumerate(ys):
        x_star = fn.h_inverse(y)
        traj = apply_sequence(seq, x0, smap, y=np.array([y]))
        sdm_errs[i] = _padded_errors(traj, x_star, stages + 1)
        problem = NlsProblem(map=smap, target=np.array([y]))
        run = newton_minimize(problem, x0, max_iters=stages)
        newton_errs[i] = _padded_errors(run.iterates, x_star, stages + 1)
        statuses.append(run.status.value)

    sdm_mean = sdm_errs.mean(axis=0)
    newton_mean = newton_errs.mean(axis=0)
    return ComparisonResult(
        function=fn.name,
        iterations=tuple(range(stages + 1)),
        sdm_mean=tuple(sdm_mean),
        newton_mean=tuple(np.minimum(newton_mean, RESIDUAL_CAP)),
        n_test=len(ys),
        newton_statuses=tuple(statuses),
        sdm_final_mean=float(sdm_mean[-1]),
        newton_final_mean=float(newton_mean[-1]),
        sequence=seq,
        constants_header=fn.constants_header(),
    )


def check_registry_invariants(fn: AnalyticFunction, result: ComparisonResult) -> list[str]:
    """Violated-property names for one function's comparison (empty = ok)."""
    problems = []
    for y in fn.train_targets():
        if abs(fn.h(fn.h_inverse(y)) - y) > 1e-10:
            problems.append("inverse-roundtrip")
            break
    if result.sdm_final_mean >= 1e-2:
        problems.append("sdm-final-error")
    if result.sdm_mean[-1] > result.sdm_mean[1]:
        problems.append("sdm-iteration-decrease")
    sdm = np.array(result.sdm_mean)
    if np.any(np.diff(sdm) > 1e-9):
        problems.append("sdm-monotone-mean")
    if all(s == RunStatus.CONVERGED.value for s in result.newton_statuses):
        newton_wins = result.newton_final_mean < result.sdm_final_mean
        both_at_floor = (
            result.newton_final_mean < ACCURACY_FLOOR
            and result.sdm_final_mean < ACCURACY_FLOOR
        )
        if not (newton_wins or both_at_floor):
            problems.append("newton-accuracy-when-converged")
    return problems
