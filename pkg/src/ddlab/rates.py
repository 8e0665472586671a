"""Noise schedules, token-level generators and the matrix-free sequence generator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import integrate

from .errors import DomainError, ModeError
from .space import SequenceSpace

SCHEDULE_KINDS = ("constant", "linear", "geometric")
RATE_KINDS = ("masked", "uniform")
QUAD_TOL = 1e-10
_TIME_SLACK = 1e-12


@dataclass(frozen=True)
class Schedule:
    """Time-inhomogeneous rate multiplier beta(t) on ``[0, horizon]``.

    * ``constant``: ``beta(t) = beta``
    * ``linear``: ``beta(t) = a + b t``
    * ``geometric``: ``beta(t) = a r**t``
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    horizon: float = 1.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")
        object.__setattr__(self, "params", dict(self.params))
        needed = {"constant": ("beta",), "linear": ("a", "b"), "geometric": ("a", "r")}[self.kind]
        missing = [k for k in needed if k not in self.params]
        if missing:
            raise DomainError(f"{self.kind} schedule needs parameters {missing}")
        if self.kind == "geometric" and self.params["r"] <= 0:
            raise DomainError("geometric ratio r must be positive")
        if min(self.beta(0.0), self.beta(self.horizon)) < 0:
            raise DomainError("schedule must be nonnegative on [0, T]")

    @classmethod
    def constant(cls, beta: float, horizon: float):
        return cls("constant", {"beta": beta}, horizon)

    @classmethod
    def linear(cls, a: float, b: float, horizon: float):
        return cls("linear", {"a": a, "b": b}, horizon)

    @classmethod
    def geometric(cls, a: float, r: float, horizon: float):
        return cls("geometric", {"a": a, "r": r}, horizon)

    @classmethod
    def with_total(cls, kind: str, total: float, horizon: float = 1.0, shape: float = 2.0):
        """Schedule of the given kind whose integral over ``[0, horizon]`` is ``total``.

        ``shape`` is the ratio ``beta(T) / beta(0)`` for linear and geometric kinds
        (linear kinds with ``shape == inf`` start at zero).
        """
        T = horizon
        if kind == "constant":
            return cls.constant(total / T, T)
        if kind == "linear":
            if math.isinf(shape):
                return cls.linear(0.0, 2 * total / T**2, T)
            a = 2 * total / (T * (1 + shape))
            return cls.linear(a, a * (shape - 1) / T, T)
        if kind == "geometric":
            r = shape ** (1 / T)
            if r == 1.0:
                return cls.geometric(total / T, 1.0, T)
            return cls.geometric(total * math.log(r) / (r**T - 1), r, T)
        raise DomainError(f"unknown schedule kind {kind!r}")

    def beta(self, t):
        p = self.params
        if self.kind == "constant":
            return p["beta"] + 0.0 * np.asarray(t, dtype=float)
        if self.kind == "linear":
            return p["a"] + p["b"] * np.asarray(t, dtype=float)
        return p["a"] * np.power(p["r"], np.asarray(t, dtype=float))

    def cumulative(self, t):
        """Closed-form integral of beta over ``[0, t]``."""
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            return p["beta"] * t
        if self.kind == "linear":
            return p["a"] * t + 0.5 * p["b"] * t * t
        r = p["r"]
        if r == 1.0:
            return p["a"] * t
        return p["a"] * np.expm1(t * math.log(r)) / math.log(r)

    def inverse_cumulative(self, b):
        """Smallest ``t >= 0`` with ``cumulative(t) == b`` (valid for ``b <= total``)."""
        b = np.asarray(b, dtype=float)
        p = self.params
        if self.kind == "constant":
            return b / p["beta"]
        if self.kind == "linear":
            a, c = p["a"], p["b"]
            den = a + np.sqrt(a * a + 2 * c * b)
            return np.where(b > 0, 2 * b / np.where(den > 0, den, 1.0), 0.0)
        r = p["r"]
        if r == 1.0:
            return b / p["a"]
        lr = math.log(r)
        return np.log1p(b * lr / p["a"]) / lr

    @property
    def total(self) -> float:
        """L1 norm of beta on the horizon."""
        return float(self.cumulative(self.horizon))

    @property
    def max_beta(self) -> float:
        return float(max(self.beta(0.0), self.beta(self.horizon)))

    def cumulative_quad(self, t: float) -> float:
        val, _ = integrate.quad(lambda s: float(self.beta(s)), 0.0, t, epsabs=QUAD_TOL, epsrel=QUAD_TOL)
        return val

    def check_time(self, t: float) -> float:
        if not -_TIME_SLACK <= t <= self.horizon + _TIME_SLACK:
            raise DomainError(f"time {t} outside [0, {self.horizon}]")
        return min(max(float(t), 0.0), self.horizon)


def cumulative_beta(schedule: Schedule, t: float) -> float:
    return float(schedule.cumulative(schedule.check_time(t)))


@dataclass(frozen=True)
class RateSpec:
    kind: str
    schedule: Schedule
    space: SequenceSpace

    def __post_init__(self):
        if self.kind not in RATE_KINDS:
            raise DomainError(f"unknown rate kind {self.kind!r}")
        if self.kind == "masked" and not self.space.is_masked:
            raise ModeError("masked rate requires a space with a mask token")

    @property
    def masked(self) -> bool:
        return self.kind == "masked"

    @property
    def unit_token_matrix(self) -> np.ndarray:
        """Token generator at beta = 1."""
        S = self.space.vocab_size
        if self.masked:
            m = self.space.mask_token - 1
            U = -np.eye(S)
            U[:, m] += 1.0
            U[m, :] = 0.0
            return U
        return np.full((S, S), 1.0 / S) - np.eye(S)

    def token_rate(self, t: float) -> np.ndarray:
        t = self.schedule.check_time(t)
        return float(self.schedule.beta(t)) * self.unit_token_matrix

    def base_distribution(self) -> np.ndarray:
        """Tractable prior: delta at the all-mask state or the uniform product."""
        n = self.space.state_count
        if self.masked:
            out = np.zeros(n)
            out[self.space.all_mask] = 1.0
            return out
        return np.full(n, 1.0 / n)


def token_rate(spec: RateSpec, t: float) -> np.ndarray:
    return spec.token_rate(t)


def apply_along_axis(mat: np.ndarray, tensor: np.ndarray, axis: int) -> np.ndarray:
    """Contract ``mat`` (``S x S``) with one axis of ``tensor``."""
    return np.moveaxis(np.tensordot(mat, tensor, axes=([1], [axis])), 0, axis)


def apply_generator(spec: RateSpec, t: float, v: np.ndarray, transpose: bool = False) -> np.ndarray:
    """``Q_t v`` (or ``Q_t^T v``) as a Kronecker sum of per-position token generators."""
    space = spec.space
    v = np.asarray(v, dtype=float)
    if v.shape != (space.state_count,):
        raise DomainError(f"vector length {v.shape} does not match {space.state_count} states")
    t = spec.schedule.check_time(t)
    U = spec.unit_token_matrix
    if transpose:
        U = U.T
    tensor = v.reshape(space.shape)
    out = np.zeros_like(tensor)
    for axis in range(space.seq_len):
        out += apply_along_axis(U, tensor, axis)
    return float(spec.schedule.beta(t)) * out.reshape(-1)
