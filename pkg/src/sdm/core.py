"""Core types and update kernels for learned-descent-map optimization.

Parameter and feature vectors are plain 1-D float64 numpy arrays. The
helpers here validate shape and finiteness at API boundaries; hot loops
operate on the validated arrays directly. A DescentStep is one learned
linear update (gain matrix plus optional bias), and a DescentSequence
is the trained cascade that gets applied at test time.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import DimensionMismatchError, DivergedError

Array = np.ndarray


def as_vector(values, name: str = "vector", dim: int | None = None) -> Array:
    """Coerce to a finite, read-only 1-D float64 array."""
    arr = np.array(values, dtype=float, copy=True).reshape(-1)
    if arr.size < 1:
        raise ValueError(f"{name} must have length >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if dim is not None and arr.size != dim:
        raise DimensionMismatchError(name, expected=dim, got=arr.size)
    arr.setflags(write=False)
    return arr


def as_matrix(values, name: str = "matrix", shape: tuple[int, int] | None = None) -> Array:
    """Coerce to a finite, read-only 2-D float64 array."""
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


class Mode(str, Enum):
    """Training/test-time convention for how targets enter the update."""

    TEMPLATE = "template"        # one fixed target shared by all samples
    REVERSED = "reversed"        # fixed start, per-sample targets
    GENERALIZED = "generalized"  # target absorbed into a learned bias


@dataclass(frozen=True)
class SmoothMap:
    """An evaluatable map h: R^p -> R^m with optional analytic derivatives.

    `fn` must be a pure function of its input. `jac` (m x p) and `hess`
    (m x p x p component second derivatives) are optional; when `jac` is
    absent, `jacobian` falls back to central finite differences with a
    per-coordinate step of ``jacobian_fd_step * max(1, |x_i|)``.
    """

    param_dim: int
    feature_dim: int
    fn: Callable[[Array], Array]
    jac: Callable[[Array], Array] | None = None
    hess: Callable[[Array], Array] | None = None
    jacobian_fd_step: float = 1e-6
    name: str = ""

    def __post_init__(self):
        if self.param_dim < 1 or self.feature_dim < 1:
            raise ValueError("param_dim and feature_dim must be >= 1")
        if not self.jacobian_fd_step > 0:
            raise ValueError("jacobian_fd_step must be > 0")

    def evaluate(self, x: Array) -> Array:
        """Evaluate the map; the result is a length-m float64 array."""
        out = np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float).reshape(-1)
        if out.size != self.feature_dim:
            raise DimensionMismatchError("feature", expected=self.feature_dim, got=out.size)
        return out

    __call__ = evaluate

    @property
    def has_jacobian(self) -> bool:
        return self.jac is not None

    def jacobian(self, x: Array) -> Array:
        """Analytic Jacobian when supplied, otherwise central differences."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.param_dim:
            raise DimensionMismatchError("param", expected=self.param_dim, got=x.size)
        if self.jac is not None:
            J = np.asarray(self.jac(x), dtype=float).reshape(self.feature_dim, self.param_dim)
            return J
        return self.fd_jacobian(x)

    def fd_jacobian(self, x: Array) -> Array:
        """Central finite-difference Jacobian, regardless of `jac`."""
        x = np.asarray(x, dtype=float).reshape(-1)
        J = np.empty((self.feature_dim, self.param_dim))
        for i in range(self.param_dim):
            h = self.jacobian_fd_step * max(1.0, abs(x[i]))
            xp = x.copy()
            xm = x.copy()
            xp[i] += h
            xm[i] -= h
            J[:, i] = (self.evaluate(xp) - self.evaluate(xm)) / (2.0 * h)
        return J


@dataclass(frozen=True)
class DescentStep:
    """One learned update: a gain matrix (p x m) and a bias (length p).

    The bias is all zeros except in generalized mode, where it absorbs
    the unknown target.
    """

    gain: Array
    bias: Array

    def __post_init__(self):
        gain = as_matrix(self.gain, "gain")
        object.__setattr__(self, "gain", gain)
        bias = as_vector(self.bias, "bias", dim=gain.shape[0])
        object.__setattr__(self, "bias", bias)

    @classmethod
    def from_gain(cls, gain) -> "DescentStep":
        gain = as_matrix(gain, "gain")
        return cls(gain=gain, bias=np.zeros(gain.shape[0]))

    @property
    def param_dim(self) -> int:
        return self.gain.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.gain.shape[1]


@dataclass(frozen=True)
class DescentSequence:
    """An ordered cascade of descent steps plus training metadata.

    `training_report` holds the mean squared parameter residual on the
    training set before any update and after each stage.
    """

    steps: tuple[DescentStep, ...]
    param_dim: int
    feature_dim: int
    mode: Mode
    training_report: tuple[float, ...] = ()

    def __post_init__(self):
        steps = tuple(self.steps)
        if len(steps) < 1:
            raise ValueError("a descent sequence needs at least one step")
        for k, s in enumerate(steps):
            if s.param_dim != self.param_dim:
                raise DimensionMismatchError(f"step[{k}].param", self.param_dim, s.param_dim)
            if s.feature_dim != self.feature_dim:
                raise DimensionMismatchError(f"step[{k}].feature", self.feature_dim, s.feature_dim)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "training_report", tuple(float(v) for v in self.training_report))

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class NlsProblem:
    """A nonlinear least-squares instance: minimize ||h(x) - target||^2."""

    map: SmoothMap
    target: Array
    optimum: Array | None = None
    optimum_tol: float = 1e-8

    def __post_init__(self):
        target = as_vector(self.target, "target", dim=self.map.feature_dim)
        object.__setattr__(self, "target", target)
        if self.optimum is not None:
            opt = as_vector(self.optimum, "optimum", dim=self.map.param_dim)
            object.__setattr__(self, "optimum", opt)
            resid = float(np.linalg.norm(self.map.evaluate(opt) - target))
            if resid > self.optimum_tol * max(1.0, float(np.linalg.norm(target))):
                raise ValueError(
                    f"declared optimum has residual {resid:.3e}, above tolerance"
                )

    def residual_norm(self, x: Array) -> float:
        return float(np.linalg.norm(self.map.evaluate(x) - self.target))


def _check_update_dims(x_prev: Array, step: DescentStep, h_val: Array, y: Array | None):
    if x_prev.size != step.param_dim:
        raise DimensionMismatchError("param", expected=step.param_dim, got=x_prev.size)
    if h_val.size != step.feature_dim:
        raise DimensionMismatchError("feature", expected=step.feature_dim, got=h_val.size)
    if y is not None and y.size != step.feature_dim:
        raise DimensionMismatchError("target", expected=step.feature_dim, got=y.size)


def dm_update(x_prev, step: DescentStep, h_val, y) -> Array:
    """One descent-map update: ``x_prev - gain @ (h_val - y)``.

    Pure function; the step's bias is ignored (it is zero outside
    generalized mode by construction).
    """
    x_prev = np.asarray(x_prev, dtype=float).reshape(-1)
    h_val = np.asarray(h_val, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    _check_update_dims(x_prev, step, h_val, y)
    return x_prev - step.gain @ (h_val - y)


def dm_update_biased(x_prev, step: DescentStep, h_val) -> Array:
    """Target-free update: ``x_prev - gain @ h_val + bias``.

    Equals `dm_update` whenever ``bias == gain @ y``.
    """
    x_prev = np.asarray(x_prev, dtype=float).reshape(-1)
    h_val = np.asarray(h_val, dtype=float).reshape(-1)
    _check_update_dims(x_prev, step, h_val, None)
    return x_prev - step.gain @ h_val + step.bias


def apply_sequence(
    seq: DescentSequence,
    x0,
    map: SmoothMap,
    y=None,
) -> list[Array]:
    """Run the cascade from `x0`, re-evaluating the map at every step.

    Returns the full trajectory, ``len(seq) + 1`` iterates starting at
    `x0`. In generalized mode `y` must be omitted; otherwise it is the
    target for the residual. A non-finite evaluation raises
    DivergedError carrying the partial trajectory.
    """
    x = as_vector(x0, "x0", dim=seq.param_dim)
    if seq.mode is Mode.GENERALIZED:
        if y is not None:
            raise ValueError("generalized-mode sequences take no target")
    else:
        if y is None:
            raise ValueError(f"{seq.mode.value}-mode sequences require a target y")
        y = as_vector(y, "y", dim=seq.feature_dim)

    trajectory = [np.array(x)]
    for step in seq.steps:
        h = map.evaluate(trajectory[-1])
        if not np.all(np.isfinite(h)):
            raise DivergedError("map produced a non-finite value mid-trajectory", trajectory)
        if seq.mode is Mode.GENERALIZED:
            x_next = dm_update_biased(trajectory[-1], step, h)
        else:
            x_next = dm_update(trajectory[-1], step, h, y)
        trajectory.append(x_next)
    return trajectory
