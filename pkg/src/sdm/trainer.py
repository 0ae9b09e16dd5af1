"""Batch training of descent-map cascades.

Each stage solves one linear least-squares problem (parameter residuals
against feature residuals), then advances every sample with the freshly
learned step before the next stage. Three data conventions are
supported: a fixed shared target (template), a fixed start with
per-sample targets (reversed), and target-free regression with a
learned bias (generalized).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Array,
    DescentSequence,
    DescentStep,
    Mode,
    SmoothMap,
    as_vector,
    dm_update,
    dm_update_biased,
)
from .errors import DimensionMismatchError, RankDeficiencyError, TrainingDivergedError


@dataclass(frozen=True)
class SamplingSpec:
    """How to draw initial parameter vectors (or target optima).

    Three kinds: seeded Gaussian draws around a center, a full Cartesian
    grid of per-dimension offsets, or an explicit list. `count` only
    applies to the Gaussian kind.
    """

    kind: str
    mean: Array | None = None
    stddev: Array | None = None
    count: int = 1
    seed: int = 0
    lo: Array | None = None
    hi: Array | None = None
    step: Array | None = None
    points: tuple[Array, ...] | None = None

    @classmethod
    def gaussian(cls, stddev, count: int, seed: int = 0, mean=None) -> "SamplingSpec":
        stddev = as_vector(stddev, "stddev")
        if np.any(stddev < 0):
            raise ValueError("stddev entries must be >= 0")
        if count < 1:
            raise ValueError("count must be >= 1")
        if mean is None:
            mean = np.zeros(stddev.size)
        return cls(kind="gaussian", mean=as_vector(mean, "mean", dim=stddev.size),
                   stddev=stddev, count=count, seed=seed)

    @classmethod
    def grid(cls, lo, hi, step) -> "SamplingSpec":
        lo = as_vector(lo, "lo")
        hi = as_vector(hi, "hi", dim=lo.size)
        step = as_vector(step, "step", dim=lo.size)
        if np.any(step <= 0):
            raise ValueError("grid step entries must be > 0")
        if np.any(lo > hi):
            raise ValueError("grid needs lo <= hi per dimension")
        return cls(kind="grid", lo=lo, hi=hi, step=step)

    @classmethod
    def explicit(cls, points) -> "SamplingSpec":
        pts = tuple(as_vector(p, "point") for p in points)
        if not pts:
            raise ValueError("explicit sampling needs at least one point")
        return cls(kind="explicit", points=pts)


def _grid_axis(lo: float, hi: float, step: float) -> Array:
    # arange semantics: last value is the largest lo + k*step <= hi
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.linspace(lo, lo + step * (n - 1), n)


def sample_initials(spec: SamplingSpec, around) -> list[Array]:
    """Materialize a SamplingSpec. Deterministic given the spec's seed.

    Gaussian draws are centered at ``around + spec.mean``; grid offsets
    are added to `around`; explicit points are returned verbatim.
    """
    around = as_vector(around, "around")
    if spec.kind == "gaussian":
        rng = np.random.default_rng(spec.seed)
        center = around + spec.mean
        draws = center + rng.standard_normal((spec.count, around.size)) * spec.stddev
        return [draws[i] for i in range(spec.count)]
    if spec.kind == "grid":
        axes = [_grid_axis(lo, hi, st) for lo, hi, st in zip(spec.lo, spec.hi, spec.step)]
        pts = [around + np.array(combo) for combo in itertools.product(*axes)]
        return pts
    if spec.kind == "explicit":
        return [np.array(p) for p in spec.points]
    raise ValueError(f"unknown sampling kind {spec.kind!r}")


@dataclass(frozen=True)
class TrainingProblem:
    """One training instance: its optimum, its target, and its map."""

    x_opt: Array
    target: Array
    map: SmoothMap

    def __post_init__(self):
        object.__setattr__(self, "x_opt", as_vector(self.x_opt, "x_opt", dim=self.map.param_dim))
        object.__setattr__(self, "target", as_vector(self.target, "target", dim=self.map.feature_dim))


@dataclass(frozen=True)
class TrainingSet:
    """Aligned problems and initial states for one training run."""

    mode: Mode
    problems: tuple[TrainingProblem, ...]
    initial_states: tuple[Array, ...]

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        problems = tuple(self.problems)
        states = tuple(as_vector(x, "initial state") for x in self.initial_states)
        if not problems:
            raise ValueError("training set must be nonempty")
        if len(problems) != len(states):
            raise ValueError("problems and initial_states must be aligned")
        p = problems[0].map.param_dim
        m = problems[0].map.feature_dim
        for prob, x0 in zip(problems, states):
            if prob.map.param_dim != p or prob.map.feature_dim != m:
                raise DimensionMismatchError("map", expected=p, got=prob.map.param_dim)
            if x0.size != p:
                raise DimensionMismatchError("initial state", expected=p, got=x0.size)
        if self.mode is Mode.REVERSED:
            x0 = states[0]
            if any(not np.array_equal(x, x0) for x in states):
                raise ValueError("reversed mode requires one shared initial state")
        object.__setattr__(self, "problems", problems)
        object.__setattr__(self, "initial_states", states)

    @property
    def param_dim(self) -> int:
        return self.problems[0].map.param_dim

    @property
    def feature_dim(self) -> int:
        return self.problems[0].map.feature_dim

    def __len__(self) -> int:
        return len(self.problems)

    @classmethod
    def template(cls, map: SmoothMap, x_opt, initial_states, target=None) -> "TrainingSet":
        """One shared problem, many starts sampled around the optimum."""
        x_opt = as_vector(x_opt, "x_opt", dim=map.param_dim)
        if target is None:
            target = map.evaluate(x_opt)
        prob = TrainingProblem(x_opt=x_opt, target=target, map=map)
        states = tuple(as_vector(x, "x0") for x in initial_states)
        return cls(mode=Mode.TEMPLATE, problems=(prob,) * len(states), initial_states=states)

    @classmethod
    def reversed_targets(cls, map: SmoothMap, x0, optima, targets=None) -> "TrainingSet":
        """One shared start, many optima; targets default to map(x_opt)."""
        x0 = as_vector(x0, "x0", dim=map.param_dim)
        optima = [as_vector(x, "x_opt", dim=map.param_dim) for x in optima]
        if targets is None:
            targets = [map.evaluate(x) for x in optima]
        if len(targets) != len(optima):
            raise ValueError("optima and targets must be aligned")
        probs = tuple(
            TrainingProblem(x_opt=x, target=t, map=map) for x, t in zip(optima, targets)
        )
        return cls(mode=Mode.REVERSED, problems=probs, initial_states=(x0,) * len(probs))

    @classmethod
    def generalized(cls, problems, initial_states) -> "TrainingSet":
        """Per-problem data; targets stay in the set but never enter the
        regression (the learned bias absorbs them)."""
        return cls(mode=Mode.GENERALIZED, problems=tuple(problems),
                   initial_states=tuple(initial_states))


@dataclass(frozen=True)
class TrainerConfig:
    """Stage count, ridge strength, and loss recording.

    ``ridge=None`` scales automatically per stage as
    ``1e-6 * sum(phi^2) / feature_dim``; pass 0.0 for the exact
    unregularized solve.
    """

    stages: int = 4
    ridge: float | None = None
    record_loss: bool = True

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be >= 0")


def solve_stage(residuals, features, with_bias: bool = False, ridge: float = 0.0) -> DescentStep:
    """Least-squares fit of parameter residuals against features.

    Minimizes ``sum_i ||dx_i - R phi_i - b||^2 + ridge * ||R||_F^2``
    (b fixed at zero unless `with_bias`; the bias is never penalized).
    With ridge 0 the minimum-norm solution is returned; fewer samples
    than feature dimensions then raises RankDeficiencyError.
    """
    D = np.atleast_2d(np.asarray(residuals, dtype=float))
    Phi = np.atleast_2d(np.asarray(features, dtype=float))
    if D.shape[0] != Phi.shape[0] or D.shape[0] == 0:
        raise ValueError("residuals and features must be equal-length and nonempty")
    n, m = Phi.shape
    p = D.shape[1]
    if ridge < 0:
        raise ValueError("ridge must be >= 0")

    cols = m + 1 if with_bias else m
    if with_bias:
        Phi = np.hstack([Phi, np.ones((n, 1))])
    if ridge == 0.0:
        if n < cols:
            raise RankDeficiencyError(
                f"{n} samples cannot determine {cols} coefficients at ridge 0; "
                "pass a nonzero ridge"
            )
        W, *_ = np.linalg.lstsq(Phi, D, rcond=None)
    else:
        gram = Phi.T @ Phi
        diag = np.full(cols, ridge)
        if with_bias:
            diag[-1] = 0.0
        try:
            W = np.linalg.solve(gram + np.diag(diag), Phi.T @ D)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError(
                "normal equations are singular; increase ridge"
            ) from exc
    W = W.T  # (p, cols)
    if with_bias:
        return DescentStep(gain=W[:, :m], bias=W[:, m])
    return DescentStep.from_gain(W)


def _stage_ridge(config: TrainerConfig, Phi: Array) -> float:
    if config.ridge is not None:
        return config.ridge
    return 1e-6 * float(np.sum(Phi * Phi)) / Phi.shape[1]


def train(tset: TrainingSet, config: TrainerConfig = TrainerConfig()) -> DescentSequence:
    """Learn a cascade of descent steps by alternating solve and update.

    After each stage every sample is advanced with the new step using a
    fresh map evaluation; the mean squared parameter residual before
    training and after each stage is recorded in the sequence's
    training_report (non-increasing on the training set).
    """
    p, m = tset.param_dim, tset.feature_dim
    states = [np.array(x) for x in tset.initial_states]
    optima = [prob.x_opt for prob in tset.problems]

    def mean_sq_residual():
        errs = np.array([x_opt - x for x_opt, x in zip(optima, states)])
        return float(np.mean(np.sum(errs * errs, axis=1)))

    report = [mean_sq_residual()] if config.record_loss else []
    steps: list[DescentStep] = []
    for k in range(config.stages):
        hvals = []
        for i, (prob, x) in enumerate(zip(tset.problems, states)):
            h = prob.map.evaluate(x)
            if not np.all(np.isfinite(h)):
                raise TrainingDivergedError(stage=k, sample=i)
            hvals.append(h)
        D = np.array([x_opt - x for x_opt, x in zip(optima, states)])
        if tset.mode is Mode.GENERALIZED:
            Phi = -np.array(hvals)
        else:
            Phi = np.array([prob.target - h for prob, h in zip(tset.problems, hvals)])
        step = solve_stage(
            D, Phi, with_bias=(tset.mode is Mode.GENERALIZED), ridge=_stage_ridge(config, Phi)
        )
        steps.append(step)
        for i, (prob, h) in enumerate(zip(tset.problems, hvals)):
            if tset.mode is Mode.GENERALIZED:
                states[i] = dm_update_biased(states[i], step, h)
            else:
                states[i] = dm_update(states[i], step, h, prob.target)
        if config.record_loss:
            report.append(mean_sq_residual())

    return DescentSequence(
        steps=tuple(steps),
        param_dim=p,
        feature_dim=m,
        mode=tset.mode,
        training_report=tuple(report),
    )
