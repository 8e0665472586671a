"""Path-level simulation: uniformization, Gillespie sampling and the synchronous coupling.

Ring times of the rate-``beta(t)`` Poisson clocks are obtained by inverting
``cumulative_beta`` at partial sums of unit exponentials, which is exact for
every schedule kind.  Batched samplers draw from one stream per chunk of
trials, so results do not depend on how chunks are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, ModeError
from .evolve import Distribution
from .rates import RateSpec

CHUNK = 8192


def _require_uniform(spec: RateSpec):
    if spec.masked:
        raise ModeError("uniformized construction is defined for the uniform rate")


def _end_time(spec: RateSpec, T: Optional[float]) -> float:
    return spec.schedule.horizon if T is None else spec.schedule.check_time(T)


def _digits(spec: RateSpec, x0) -> np.ndarray:
    """0-based tokens of a state given as a token vector (1-based) or an index."""
    space = spec.space
    if np.isscalar(x0):
        return space.digits[int(x0)].copy()
    space.encode(x0)  # validates
    return np.asarray(x0, dtype=np.int64) - 1


def ring_times(schedule, T: float, rng: np.random.Generator) -> np.ndarray:
    """Ring times in ``[0, T]`` of a Poisson clock with intensity ``beta(t)``."""
    total = float(schedule.cumulative(T))
    levels = []
    u = rng.exponential()
    while u <= total:
        levels.append(u)
        u += rng.exponential()
    return np.asarray(schedule.inverse_cumulative(np.asarray(levels)), dtype=float)


def uniformized_path(spec: RateSpec, x0, T: Optional[float] = None, seed: int = 0, return_rings: bool = False):
    """Terminal state of one uniformized path started at ``x0``.

    Each coordinate carries its own clock; at every ring the token is reset
    to a fresh uniform sample.  Returns 1-based tokens (and the ring times
    per coordinate when ``return_rings``).
    """
    _require_uniform(spec)
    T = _end_time(spec, T)
    S = spec.space.vocab_size
    x = _digits(spec, x0)
    rng = np.random.default_rng(seed)
    rings = []
    for i in range(x.size):
        times = ring_times(spec.schedule, T, rng)
        resets = rng.integers(0, S, size=times.size)
        if times.size:
            x[i] = resets[-1]
        rings.append(times)
    out = tuple(int(v) + 1 for v in x)
    return (out, rings) if return_rings else out


def _chunks(n: int):
    for k, start in enumerate(range(0, n, CHUNK)):
        yield k, start, min(n, start + CHUNK)


def uniformized_terminals(spec: RateSpec, x0, n: int, T: Optional[float] = None, seed: int = 0):
    """Batch of ``n`` uniformized terminal states as state indices, plus ring indicators.

    The ring count of each coordinate is Poisson with mean ``cumulative_beta(T)``;
    only whether it rang and the last reset sample matter for the terminal token.
    """
    _require_uniform(spec)
    T = _end_time(spec, T)
    space = spec.space
    x = _digits(spec, x0)
    lam = float(spec.schedule.cumulative(T))
    states = np.empty(n, dtype=np.int64)
    rang = np.empty((n, space.seq_len), dtype=bool)
    for k, a, b in _chunks(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        counts = rng.poisson(lam, size=(b - a, space.seq_len))
        resets = rng.integers(0, space.vocab_size, size=(b - a, space.seq_len))
        tokens = np.where(counts > 0, resets, x[None, :])
        states[a:b] = tokens @ space.strides
        rang[a:b] = counts > 0
    return states, rang


def _unit_exit_rates(spec: RateSpec, x: np.ndarray) -> np.ndarray:
    S = spec.space.vocab_size
    if spec.masked:
        return (x != spec.space.mask_token - 1).astype(float)
    return np.full(x.size, (S - 1) / S)


def gillespie_path(spec: RateSpec, x0, T: Optional[float] = None, seed=0, return_events: bool = False):
    """Exact event-driven simulation of the sequence chain from ``x0`` to ``T``.

    Competing per-position exponential clocks run in the ``cumulative_beta``
    time scale; event times are mapped back through its inverse.
    """
    T = _end_time(spec, T)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = _digits(spec, x0)
    S = spec.space.vocab_size
    m = spec.space.mask_token - 1 if spec.masked else None
    total = float(spec.schedule.cumulative(T))
    level = 0.0
    events = []
    while True:
        rates = _unit_exit_rates(spec, x)
        lam = rates.sum()
        if lam <= 0:
            break
        level += rng.exponential(1.0 / lam)
        if level > total:
            break
        i = min(int(np.searchsorted(np.cumsum(rates), rng.random() * lam, side="right")), x.size - 1)
        if spec.masked:
            x[i] = m
        else:
            v = int(rng.integers(0, S - 1))
            x[i] = v if v < x[i] else v + 1
        events.append((level, i + 1, int(x[i]) + 1))
    out = tuple(int(v) + 1 for v in x)
    if not return_events:
        return out
    return out, [(float(spec.schedule.inverse_cumulative(b)), i, v) for b, i, v in events]


def gillespie_terminals(spec: RateSpec, x0, n: int, T: Optional[float] = None, seed: int = 0) -> np.ndarray:
    """State indices of ``n`` independent Gillespie paths."""
    out = np.empty(n, dtype=np.int64)
    strides = spec.space.strides
    for k, a, b in _chunks(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        for j in range(a, b):
            out[j] = int((np.asarray(gillespie_path(spec, x0, T, rng)) - 1) @ strides)
    return out


@dataclass
class CouplingEstimate:
    trials: int
    disagreements: int
    oracle: Optional[float] = None
    merged_when_rang: bool = True

    @property
    def p_hat(self) -> float:
        return self.disagreements / self.trials

    @property
    def std_err(self) -> float:
        p = self.p_hat
        return math.sqrt(p * (1 - p) / self.trials)


def disagreement_oracle(p_data: Distribution, spec: RateSpec, T: Optional[float] = None) -> float:
    """``P(X_T != Y_T)`` under the synchronous coupling, by enumeration over ``(X_0, Y_0)``."""
    _require_uniform(spec)
    T = _end_time(spec, T)
    space = spec.space
    rho = math.exp(-float(spec.schedule.cumulative(T)))
    p = np.asarray(p_data.weights, dtype=float)
    pi = spec.base_distribution()
    dig = space.digits
    support = np.flatnonzero(p > 0)
    agree = 0.0
    for x in support:
        same = dig[x][None, :] == dig
        prod = np.prod((1 - rho) + rho * same, axis=1)
        agree += p[x] * float(pi @ prod)
    return 1.0 - agree


def synchronous_coupling(
    p_data: Distribution, spec: RateSpec, T: Optional[float] = None, trials: int = 100_000, seed: int = 0
) -> CouplingEstimate:
    """Monte Carlo estimate of ``P(X_T != Y_T)`` with shared clocks and reset samples.

    ``X_0 ~ p_data`` and ``Y_0 ~ uniform`` independently.
    """
    _require_uniform(spec)
    if trials <= 0:
        raise DomainError("trials must be positive")
    T = _end_time(spec, T)
    space = spec.space
    lam = float(spec.schedule.cumulative(T))
    p = np.asarray(p_data.weights, dtype=float)
    d, S = space.seq_len, space.vocab_size
    disagree = 0
    merged = True
    for k, a, b in _chunks(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        n = b - a
        x0 = space.digits[rng.choice(p.size, size=n, p=p)]
        y0 = rng.integers(0, S, size=(n, d))
        rang = rng.poisson(lam, size=(n, d)) > 0
        shared = rng.integers(0, S, size=(n, d))
        xT = np.where(rang, shared, x0)
        yT = np.where(rang, shared, y0)
        merged &= bool(np.all(xT[rang] == yT[rang]))
        disagree += int(np.any(xT != yT, axis=1).sum())
    return CouplingEstimate(trials, disagree, disagreement_oracle(p_data, spec, T), merged)
