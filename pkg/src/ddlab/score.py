"""Exact discrete scores, controlled perturbations and the loss functionals.

Score arrays are indexed ``[i, v, x]``: 0-based position ``i``, 0-based
replacement token ``v`` and source state ``x``; the entry is
``p_t(x_{i->v}) / p_t(x)``.  Entries outside the support of ``p_t Q_t`` are NaN
in a :class:`ScoreField` and zero in rate arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import DomainError, ModeError, SupportError
from .evolve import Distribution, Trajectory
from .rates import RateSpec

PERTURBATION_MODES = ("multiplicative_uniform", "multiplicative_fixed")


def edge_mask(spec: RateSpec) -> np.ndarray:
    """Edges ``(i, v, x)`` with a nonzero forward rate from ``x_{i->v}`` to ``x``."""
    space = spec.space
    dig = space.digits.T[:, None, :]  # (d, 1, N)
    tokens = np.arange(space.vocab_size)[None, :, None]
    if spec.masked:
        m = space.mask_token - 1
        return (dig == m) & (tokens != m)
    return np.broadcast_to(dig != tokens, (space.seq_len, space.vocab_size, space.state_count))


def unit_reverse_weight(spec: RateSpec) -> np.ndarray:
    """``W[i, v, x] = U(v, x^i)``: unit-beta forward rate from ``x_{i->v}`` into ``x``."""
    U = spec.unit_token_matrix
    dig = spec.space.digits.T  # (d, N)
    W = U[:, dig]  # (S, d, N)
    return np.where(edge_mask(spec), np.moveaxis(W, 1, 0), 0.0)


@dataclass
class ScoreField:
    """Score ratios at one time; NaN off the support of ``p_t Q_t``."""

    spec: RateSpec
    time: float
    values: np.ndarray
    support: np.ndarray

    def ratio(self, state: int, position: int, token: int) -> float:
        space = self.spec.space
        if not (1 <= position <= space.seq_len and 1 <= token <= space.vocab_size):
            raise DomainError("position or token out of range")
        if not 0 <= state < space.state_count:
            raise DomainError("state index out of range")
        i, v = position - 1, token - 1
        if not self.support[i, v, state]:
            raise SupportError(
                f"score at state {space.decode(state)}, position {position}, token {token} is off-support"
            )
        return float(self.values[i, v, state])

    def entries(self):
        """``{(x, position, token): ratio}`` over the support."""
        i, v, x = np.nonzero(self.support)
        return {(int(a), int(b) + 1, int(c) + 1): float(self.values[b, c, a]) for b, c, a in zip(i, v, x)}


def _score_arrays(weights: np.ndarray, spec: RateSpec, edges: np.ndarray):
    table = spec.space.neighbor_table
    support = edges & (weights > 0)[None, None, :]
    safe = np.where(weights > 0, weights, 1.0)
    values = np.where(support, weights[table] / safe[None, None, :], np.nan)
    return values, support


def exact_score(p: Distribution, spec: RateSpec) -> ScoreField:
    weights = np.asarray(p.weights, dtype=float)
    if weights.size != spec.space.state_count:
        raise DomainError("distribution does not match the space")
    values, support = _score_arrays(weights, spec, edge_mask(spec))
    return ScoreField(spec, p.time, values, support)


class ExactScore:
    """Exact score along a forward trajectory, evaluated at refined-grid indices."""

    is_exact = True

    def __init__(self, trajectory: Trajectory):
        self.trajectory = trajectory
        self.spec = trajectory.spec

    @cached_property
    def _edges(self):
        return edge_mask(self.spec)

    @cached_property
    def _weight(self):
        return unit_reverse_weight(self.spec)

    def time(self, j: int) -> float:
        return float(self.trajectory.times[j])

    def field(self, j: int) -> ScoreField:
        values, support = _score_arrays(self.trajectory.at_refined(j), self.spec, self._edges)
        return ScoreField(self.spec, self.time(j), values, support)

    def exact_rates(self, j: int) -> np.ndarray:
        """Exact reverse rates ``s_t(x)_{i->v} Q_t(x_{i->v}, x)`` at refined index ``j``."""
        values, support = _score_arrays(self.trajectory.at_refined(j), self.spec, self._edges)
        beta = float(self.spec.schedule.beta(self.time(j)))
        return np.where(support, values * (beta * self._weight), 0.0)

    def multiplier(self, bucket: int):
        return 1.0

    def reverse_rates(self, j: int, bucket: int) -> np.ndarray:
        return self.exact_rates(j)


class PerturbedScore:
    """``s~ = c * s`` with ``c`` a deterministic function of (bucket, i, v, x, seed).

    Buckets are the intervals of the trajectory grid, so ``s~`` is piecewise
    constant in time.  ``multiplicative_fixed`` uses ``c = 1 + epsilon``.
    """

    is_exact = False

    def __init__(self, base: ExactScore, epsilon: float, seed: int = 0, mode: str = "multiplicative_uniform"):
        if mode not in PERTURBATION_MODES:
            raise DomainError(f"unknown perturbation mode {mode!r}")
        if not 0.0 <= epsilon < 1.0:
            raise DomainError("epsilon must lie in [0, 1)")
        self.base = base
        self.epsilon = float(epsilon)
        self.seed = int(seed)
        self.mode = mode
        self._cache = {}

    @property
    def trajectory(self) -> Trajectory:
        return self.base.trajectory

    @property
    def spec(self) -> RateSpec:
        return self.base.spec

    @property
    def band_certified(self) -> bool:
        """``s~`` lies in ``[s/2, 3s/2]`` everywhere."""
        return self.epsilon <= 0.5

    def multiplier(self, bucket: int) -> np.ndarray:
        if bucket not in self._cache:
            space = self.spec.space
            shape = (space.seq_len, space.vocab_size, space.state_count)
            if self.mode == "multiplicative_fixed" or self.epsilon == 0.0:
                c = np.full(shape, 1.0 + self.epsilon)
            else:
                rng = np.random.default_rng(np.random.SeedSequence([self.seed, int(bucket)]))
                c = rng.uniform(1.0 - self.epsilon, 1.0 + self.epsilon, size=shape)
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[bucket] = c
        return self._cache[bucket]

    def field(self, j: int, bucket: int) -> ScoreField:
        f = self.base.field(j)
        return ScoreField(f.spec, f.time, f.values * self.multiplier(bucket), f.support)

    def exact_rates(self, j: int) -> np.ndarray:
        return self.base.exact_rates(j)

    def reverse_rates(self, j: int, bucket: int) -> np.ndarray:
        return self.base.exact_rates(j) * self.multiplier(bucket)


def as_perturbed(score) -> PerturbedScore:
    if isinstance(score, PerturbedScore):
        return score
    return PerturbedScore(score, 0.0)


# --- pointwise functionals ---------------------------------------------------


def bregman(s: float, s_tilde: float) -> float:
    """Bregman divergence of ``a log a - a`` between ``s`` and ``s_tilde``."""
    if not (s > 0 and s_tilde > 0):
        raise DomainError("bregman divergence needs positive arguments")
    return s * math.log(s / s_tilde) + s_tilde - s


def _bregman(s, st):
    return s * np.log(s / st) + st - s


def elementary_inequality_check(u: float) -> tuple:
    """``(u^2/2 + u + log(1-u), 2|u|^3/3)`` for ``|u| <= 1/2``."""
    if abs(u) > 0.5:
        raise DomainError("|u| must not exceed 1/2")
    return 0.5 * u * u + u + math.log1p(-u), 2.0 * abs(u) ** 3 / 3.0


def bregman_cubic_check(s: float, s_tilde: float) -> tuple:
    """``((s/2)(1 - s~/s)^2, D(s, s~) + 2|s - s~|^3 / (3 s^2))`` on the band."""
    if not s > 0:
        raise DomainError("s must be positive")
    if not 0.5 * s <= s_tilde <= 1.5 * s:
        raise DomainError("s_tilde outside [s/2, 3s/2]")
    lhs = 0.5 * s * (1.0 - s_tilde / s) ** 2
    rhs = bregman(s, s_tilde) + 2.0 * abs(s - s_tilde) ** 3 / (3.0 * s * s)
    return lhs, rhs


# --- time quadrature ---------------------------------------------------------


def time_integral(trajectory: Trajectory, integrand, singular_value: Optional[str] = None) -> float:
    """Simpson quadrature of ``integrand(j, bucket)`` over the regular grid intervals.

    On a singular first interval the integrand is bounded in every loss except
    the weighted score-matching one; it is approximated by its value at ``t_1``
    times the interval length.
    """
    grid = trajectory.grid
    pts = grid.points
    total = 0.0
    for k in range(grid.first_regular, grid.n_intervals):
        h = pts[k + 1] - pts[k]
        total += h / 6.0 * (integrand(2 * k, k) + 4.0 * integrand(2 * k + 1, k) + integrand(2 * k + 2, k))
    if grid.singular_start:
        total += pts[1] * integrand(2, 0)
    return float(total)


def _edge_terms(score: ExactScore, j: int):
    """``p_t(x) * Q_t(x_{i->v}, x)`` and ``s`` on the support at refined index ``j``."""
    traj = score.trajectory
    p = traj.at_refined(j)
    f = score.field(j)
    beta = float(score.spec.schedule.beta(score.time(j)))
    weight = np.where(f.support, p[None, None, :] * beta * score._weight, 0.0)
    s = np.where(f.support, f.values, 0.0)
    return weight, s, f.support


def _diverges_at_start(score: ExactScore, perturbed: PerturbedScore) -> bool:
    """Weighted score matching diverges when a perturbed edge leaves a zero-mass data state."""
    traj = score.trajectory
    if not traj.grid.singular_start or perturbed.epsilon == 0.0:
        return False
    zero = traj.initial == 0
    support = score.field(2).support & zero[None, None, :]
    return bool(np.any(support & (perturbed.multiplier(0) != 1.0)))


def _resolve(score, perturbed, spec, trajectory):
    if spec is not None and score.spec != spec:
        raise DomainError("score built for a different rate specification")
    if trajectory is not None and trajectory is not score.trajectory:
        raise DomainError("trajectory differs from the one the score was built on")
    return as_perturbed(perturbed)


def loss_wsm(score: ExactScore, perturbed, spec: Optional[RateSpec] = None, trajectory=None) -> float:
    """Weighted score-matching loss with weights ``Q_t(y, x)``."""
    perturbed = _resolve(score, perturbed, spec, trajectory)
    if _diverges_at_start(score, perturbed):
        return math.inf

    def f(j, bucket):
        w, s, _ = _edge_terms(score, j)
        c = perturbed.multiplier(bucket)
        return 0.5 * float((w * (s - c * s) ** 2).sum())

    return time_integral(score.trajectory, f)


def loss_se(score: ExactScore, perturbed, spec: Optional[RateSpec] = None, trajectory=None) -> float:
    """Score-entropy loss, i.e. the weighted Bregman divergence of ``a log a - a``."""
    perturbed = _resolve(score, perturbed, spec, trajectory)

    def f(j, bucket):
        w, s, support = _edge_terms(score, j)
        c = perturbed.multiplier(bucket)
        if np.any(support & (c <= 0)):
            raise DomainError("perturbed score must be positive on the support")
        live = support & (s > 0)
        st = np.where(live, c * s, 1.0)
        d = np.where(live, _bregman(np.where(live, s, 1.0), st), 0.0)
        # s == 0 on the support gives D(0, s~) = s~
        d = np.where(support & (s == 0), c * s, d)
        return float((w * d).sum())

    return time_integral(score.trajectory, f)


def _require_masked(spec: RateSpec):
    if not spec.masked:
        raise ModeError("loss defined for the masked rate only")


def _cubic_inner(score: ExactScore, perturbed: PerturbedScore, j: int, bucket: int) -> np.ndarray:
    """``inner[y] = sum_{x in successors(y)} |s - s~|^3 / s^3`` (zero where ``p_t(y) = 0``)."""
    space = score.spec.space
    m = space.mask_token - 1
    table = space.neighbor_table
    f = score.field(j)
    c = perturbed.multiplier(bucket)
    n = space.state_count
    ys = np.arange(n)
    inner = np.zeros(n)
    for i in range(space.seq_len):
        yi = space.digits[:, i]
        live = yi != m
        x = table[i, m, ys]
        v = yi
        s = f.values[i, v, x]
        ok = live & f.support[i, v, x] & (np.nan_to_num(s) > 0)
        ratio = np.abs(1.0 - c[i, v, x]) ** 3  # |s - c s|^3 / s^3
        inner += np.where(ok, ratio, 0.0)
    return inner


def loss_l3(score: ExactScore, perturbed, spec: Optional[RateSpec] = None, trajectory=None) -> float:
    """Cubic correction: beta (1 - p_t(m)) times a conditional expectation over non-mask ``y``."""
    perturbed = _resolve(score, perturbed, spec, trajectory)
    _require_masked(score.spec)
    space = score.spec.space
    mask = space.all_mask

    def f(j, bucket):
        p = score.trajectory.at_refined(j)
        rest = 1.0 - p[mask]
        if rest <= 0:
            return 0.0
        cond = p.copy()
        cond[mask] = 0.0
        cond /= rest
        beta = float(score.spec.schedule.beta(score.time(j)))
        return beta * rest * float(cond @ _cubic_inner(score, perturbed, j, bucket))

    return time_integral(score.trajectory, f)


def loss_l3_double_sum(score: ExactScore, perturbed, spec: Optional[RateSpec] = None) -> float:
    """Unconditioned form ``sum_{y != m} p_t(y) sum_{x in successors(y)} beta |s - s~|^3 / s^3``."""
    perturbed = _resolve(score, perturbed, spec, None)
    _require_masked(score.spec)
    mask = score.spec.space.all_mask

    def f(j, bucket):
        p = score.trajectory.at_refined(j).copy()
        p[mask] = 0.0
        beta = float(score.spec.schedule.beta(score.time(j)))
        return float((beta * p) @ _cubic_inner(score, perturbed, j, bucket))

    return time_integral(score.trajectory, f)


def loss_wrsm(score: ExactScore, perturbed, spec: Optional[RateSpec] = None, trajectory=None) -> float:
    """Weighted relative score-matching loss."""
    perturbed = _resolve(score, perturbed, spec, trajectory)
    _require_masked(score.spec)

    def f(j, bucket):
        w, s, support = _edge_terms(score, j)
        c = perturbed.multiplier(bucket)
        return float(np.where(support, w * s * (1.0 - c) ** 2, 0.0).sum())

    return time_integral(score.trajectory, f)


@dataclass
class LossReport:
    wsm: float
    se: float
    l3: Optional[float] = None
    wrsm: Optional[float] = None

    def as_dict(self):
        return {"wsm": self.wsm, "se": self.se, "l3": self.l3, "wrsm": self.wrsm}


def compute_losses(score: ExactScore, perturbed) -> LossReport:
    perturbed = as_perturbed(perturbed)
    report = LossReport(wsm=loss_wsm(score, perturbed), se=loss_se(score, perturbed))
    if score.spec.masked:
        report.l3 = loss_l3(score, perturbed)
        report.wrsm = loss_wrsm(score, perturbed)
    return report
