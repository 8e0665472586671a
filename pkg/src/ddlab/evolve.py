"""Forward, reverse and backward Kolmogorov dynamics on a shared time grid.

All trajectories are integrated with fixed-step classical RK4.  The forward
marginal is stored on the *refined* grid (grid points plus interval
midpoints) so that reverse-time and backward-equation steps on the coarse
grid can evaluate exact scores at every RK4 stage.

When the data distribution has zero-mass states the exact reverse rates
diverge like ``1/t`` as ``t -> 0``.  The grid is then graded geometrically in
``cumulative_beta`` near zero, and the first interval ``[0, t_1]`` is closed by
running the embedded jump chain of the reverse generator to absorption.
For masked rates all reverse rates share one time profile on that interval,
so the completion is exact; for uniform rates it is accurate to
``O(cumulative_beta(t_1))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, LabError, NumericError, SupportError
from .rates import RateSpec, Schedule, apply_along_axis, apply_generator

WEIGHT_SLACK = 1e-12
MASS_TOL = 1e-10
DEFAULT_STEPS_PER_UNIT_BETA = 20
GRADED_FLOOR = 1e-11
GRADED_LOG_STEP = 0.1
RICHARDSON_TOL = 1e-7
_COMPLETION_ITERS = 500


@dataclass
class Distribution:
    """Probability vector over the states of a space at a given time."""

    weights: np.ndarray
    time: float = 0.0
    max_clip: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise DomainError("distribution weights must be finite")
        low = float(w.min(initial=0.0))
        if low < -WEIGHT_SLACK:
            raise NumericError(
                f"weight {low:.3e} below the clipping slack", {"min_weight": low}
            )
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise DomainError(f"weights sum to {w.sum():.15g}, not 1")
        if low < 0:
            w = np.clip(w, 0.0, None)
            w /= w.sum()
        self.weights = w
        self.max_clip = max(self.max_clip, -low)

    @classmethod
    def dirac(cls, n: int, index: int, time: float = 0.0):
        w = np.zeros(n)
        w[index] = 1.0
        return cls(w, time)

    @classmethod
    def uniform(cls, n: int, time: float = 0.0):
        return cls(np.full(n, 1.0 / n), time)

    def __len__(self):
        return self.weights.size


@dataclass(frozen=True)
class TimeGrid:
    """Increasing time points ``0 = t_0 < ... < t_n``.

    ``singular_start`` marks a first interval that is closed by completion
    rather than by an RK4 step.
    """

    points: np.ndarray
    singular_start: bool = False

    @property
    def n_intervals(self) -> int:
        return self.points.size - 1

    @property
    def end(self) -> float:
        return float(self.points[-1])

    @property
    def refined(self) -> np.ndarray:
        out = np.empty(2 * self.points.size - 1)
        out[0::2] = self.points
        out[1::2] = 0.5 * (self.points[:-1] + self.points[1:])
        return out

    @property
    def first_regular(self) -> int:
        """Index of the first interval integrated by RK4."""
        return 1 if self.singular_start else 0


def build_grid(
    schedule: Schedule,
    end: Optional[float] = None,
    steps_per_unit_beta: float = DEFAULT_STEPS_PER_UNIT_BETA,
    graded: bool = True,
    singular: bool = False,
    rate_scale: float = 1.0,
    floor: float = GRADED_FLOOR,
    log_step: float = GRADED_LOG_STEP,
) -> TimeGrid:
    """Time grid with ``rate_scale * max(beta) * dt <= 1 / steps_per_unit_beta``.

    ``rate_scale`` is the largest sequence-level exit rate at unit beta (see
    :func:`exit_rate_scale`).

    With ``graded`` the grid is geometric in ``cumulative_beta`` (ratio
    ``exp(log_step)``, starting at ``floor``) until the geometric increment
    reaches the uniform one.  Reverse rates near small-mass states scale like
    ``1 / cumulative_beta``, so this keeps ``dt * rate`` bounded.  ``singular``
    marks ``[0, t_1]`` for completion instead of an RK4 step.
    """
    end = schedule.horizon if end is None else schedule.check_time(end)
    if end <= 0:
        return TimeGrid(np.zeros(1))
    bmax = rate_scale * max(float(schedule.beta(0.0)), float(schedule.beta(end)))
    total = float(schedule.cumulative(end))
    if not graded or total <= floor:
        n = max(1, math.ceil(steps_per_unit_beta * end * bmax - 1e-9))
        return TimeGrid(np.linspace(0.0, end, n + 1))
    switch = min(total, 1.0 / (steps_per_unit_beta * rate_scale * math.expm1(log_step)))
    k = max(1, math.ceil(math.log(switch / floor) / log_step))
    levels = floor * (switch / floor) ** (np.arange(k + 1) / k)
    inner = np.asarray(schedule.inverse_cumulative(levels), dtype=float)
    inner[-1] = min(inner[-1], end)
    t_switch = float(inner[-1])
    rest = end - t_switch
    if rest > 0:
        n = max(1, math.ceil(steps_per_unit_beta * rest * bmax - 1e-9))
        tail = np.linspace(t_switch, end, n + 1)[1:]
    else:
        tail = np.empty(0)
    return TimeGrid(np.concatenate([[0.0], inner, tail]), singular_start=singular)


def exit_rate_scale(spec: RateSpec) -> float:
    """Largest total exit rate of the sequence generator at ``beta = 1``.

    Floored at one: per-token kernels relax like ``exp(-cumulative_beta)``
    whatever the exit rate, and the loss integrands inherit that scale.
    """
    S, d = spec.space.vocab_size, spec.space.seq_len
    return float(d) if spec.masked else max(1.0, d * (S - 1) / S)


def spec_grid(spec: RateSpec, end: Optional[float] = None, **kw) -> TimeGrid:
    kw.setdefault("rate_scale", exit_rate_scale(spec))
    return build_grid(spec.schedule, end=end, **kw)


def rk4_step(rhs, y, t0, h, stage_args):
    """One classical RK4 step; ``stage_args`` gives the (start, mid, end) arguments."""
    a0, am, a1 = stage_args
    k1 = rhs(a0, y)
    k2 = rhs(am, y + 0.5 * h * k1)
    k3 = rhs(am, y + 0.5 * h * k2)
    k4 = rhs(a1, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class Trajectory:
    """Forward marginals on the refined grid of ``grid``."""

    spec: RateSpec
    grid: TimeGrid
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.grid.refined

    def at_grid(self, k: int) -> np.ndarray:
        return self.values[2 * k]

    def at_refined(self, j: int) -> np.ndarray:
        return self.values[j]

    def final(self) -> Distribution:
        return Distribution(self.values[-1], self.grid.end)

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]


def _integrate_forward(p0, spec, times):
    def rhs(t, p):
        return apply_generator(spec, t, p, transpose=True)

    out = np.empty((times.size, p0.size))
    out[0] = p0
    p = p0
    for j in range(times.size - 1):
        t0, t1 = times[j], times[j + 1]
        p = rk4_step(rhs, p, t0, t1 - t0, (t0, 0.5 * (t0 + t1), t1))
        out[j + 1] = p
    return out


def forward_trajectory(
    p0: Distribution,
    spec: RateSpec,
    grid: Optional[TimeGrid] = None,
    richardson_tol: float = RICHARDSON_TOL,
    **grid_kw,
) -> Trajectory:
    """Integrate the forward equation on the refined grid.

    The coarse-grid solution is integrated as well; the difference at the end
    time, divided by 15, is the Richardson error estimate of the coarse result
    and bounds the refined one.
    """
    w0 = np.asarray(p0.weights, dtype=float)
    if w0.size != spec.space.state_count:
        raise DomainError("distribution does not match the space")
    if grid is None:
        grid_kw.setdefault("singular", bool(np.any(w0 == 0)))
        grid = spec_grid(spec, **grid_kw)
    fine = _integrate_forward(w0, spec, grid.refined)
    diag = {"grid_points": int(grid.points.size)}
    if grid.n_intervals > 0:
        coarse = _integrate_forward(w0, spec, grid.points)
        est = float(np.abs(fine[-1] - coarse[-1]).max()) / 15.0
        diag["richardson_error"] = est
        if est > richardson_tol:
            raise NumericError(f"Richardson estimate {est:.3e} exceeds {richardson_tol:.1e}", diag)
    mass = np.abs(fine.sum(axis=1) - 1.0).max()
    diag["mass_drift"] = float(mass)
    diag["min_weight"] = float(fine.min())
    if mass > MASS_TOL:
        raise NumericError(f"forward mass drift {mass:.3e}", diag)
    return Trajectory(spec, grid, fine, diag)


def forward_marginal(p0: Distribution, spec: RateSpec, t: float, **grid_kw) -> Distribution:
    """Marginal at time ``t`` of the forward chain started from ``p0``."""
    t = spec.schedule.check_time(t)
    if t == 0:
        return Distribution(p0.weights.copy(), 0.0)
    w0 = np.asarray(p0.weights)
    grid_kw.setdefault("singular", bool(np.any(w0 == 0)))
    traj = forward_trajectory(p0, spec, spec_grid(spec, end=t, **grid_kw))
    out = traj.final()
    out.time = t
    return out


def closed_form_kernel(spec: RateSpec, t: float) -> np.ndarray:
    """Per-token transition matrix of the forward chain over ``[0, t]``."""
    cum = float(spec.schedule.cumulative(spec.schedule.check_time(t)))
    S = spec.space.vocab_size
    keep = math.exp(-cum)
    if spec.masked:
        m = spec.space.mask_token - 1
        K = keep * np.eye(S)
        K[:, m] = -math.expm1(-cum)
        K[m, m] = 1.0
        return K
    return keep * np.eye(S) + (1.0 - keep) / S


def closed_form_marginal(p0: Distribution, spec: RateSpec, t: float) -> np.ndarray:
    """Apply the product of per-token kernels to ``p0``."""
    K = closed_form_kernel(spec, t)
    tensor = np.asarray(p0.weights, dtype=float).reshape(spec.space.shape)
    for axis in range(spec.space.seq_len):
        tensor = apply_along_axis(K.T, tensor, axis)
    return tensor.reshape(-1)


# --- reverse-time generators -------------------------------------------------


def reverse_apply(rates: np.ndarray, table: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """``(R phi)(x) = sum_{i,v} R[i, v, x] (phi(x_{i->v}) - phi(x))``."""
    return (rates * (phi[table] - phi[None, None, :])).sum(axis=(0, 1))


def reverse_apply_transpose(rates: np.ndarray, table: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``R^T p`` for the reverse generator with off-diagonal rates ``rates``."""
    flow = rates * p[None, None, :]
    inflow = np.bincount(table.ravel(), weights=flow.ravel(), minlength=p.size)
    return inflow - flow.sum(axis=(0, 1))


def _singular_states(score) -> np.ndarray:
    return score.trajectory.initial == 0


def _complete_mass(p, rates, table, singular):
    """Push mass on ``singular`` states through the embedded jump chain to absorption."""
    out = np.where(singular, 0.0, p)
    mass = np.where(singular, p, 0.0)
    total = rates.sum(axis=(0, 1))
    stuck = singular & (total <= 0) & (mass > 0)
    if stuck.any() and mass[stuck].max() > MASS_TOL:
        raise SupportError("reverse completion reached states without reverse rates")
    safe = np.where(total > 0, total, 1.0)
    for _ in range(_COMPLETION_ITERS):
        if mass.sum() <= 1e-300:
            break
        flow = rates * (np.where(total > 0, mass, 0.0) / safe)[None, None, :]
        moved = np.bincount(table.ravel(), weights=flow.ravel(), minlength=p.size)
        out += np.where(singular, 0.0, moved)
        mass = np.where(singular, moved, 0.0)
    else:
        raise NumericError("reverse completion did not converge", {"residual_mass": float(mass.sum())})
    return out


def _complete_observable(psi, rates, table, singular):
    """Absorption expectation of ``psi`` under the embedded jump chain."""
    total = rates.sum(axis=(0, 1))
    active = singular & (total > 0)
    probs = rates / np.where(total > 0, total, 1.0)[None, None, :]
    phi = np.where(active, 0.0, psi)
    for _ in range(_COMPLETION_ITERS):
        new = np.where(active, (probs * phi[table]).sum(axis=(0, 1)), psi)
        if np.array_equal(new, phi) or np.abs(new - phi).max() <= 1e-16 * max(1.0, np.abs(psi).max()):
            return new
        phi = new
    raise NumericError("observable completion did not converge")


def _check_score(score, spec):
    traj = getattr(score, "trajectory", None)
    if traj is None:
        raise LabError("score object carries no forward trajectory")
    if traj.spec != spec:
        raise LabError("score was built for a different rate specification")
    return traj


def _integrate_reverse(start: np.ndarray, spec: RateSpec, score) -> tuple:
    traj = _check_score(score, spec)
    grid = traj.grid
    table = spec.space.neighbor_table
    pts = grid.points
    p = np.array(start, dtype=float)
    min_weight = float(p.min())

    def rhs(args, q):
        j, bucket = args
        return reverse_apply_transpose(score.reverse_rates(j, bucket), table, q)

    for k in range(grid.n_intervals - 1, grid.first_regular - 1, -1):
        h = pts[k + 1] - pts[k]
        p = rk4_step(rhs, p, None, h, ((2 * k + 2, k), (2 * k + 1, k), (2 * k, k)))
        min_weight = min(min_weight, float(p.min()))
    if grid.singular_start:
        p = _complete_mass(p, score.reverse_rates(2, 0), table, _singular_states(score))
    stray = np.where(traj.initial == 0, np.clip(p, 0, None), 0.0).sum()
    diag = {"min_weight": min_weight, "mass_drift": float(abs(p.sum() - 1.0)), "stray_mass": float(stray)}
    if diag["mass_drift"] > MASS_TOL:
        raise NumericError(f"reverse mass drift {diag['mass_drift']:.3e}", diag)
    return p, diag


def exact_reverse(pT: Distribution, spec: RateSpec, score) -> Distribution:
    """Integrate the exact reverse equation from ``T`` back to ``0``."""
    if not getattr(score, "is_exact", False):
        raise DomainError("exact_reverse needs an unperturbed score")
    p, diag = _integrate_reverse(pT.weights, spec, score)
    return Distribution(p, 0.0, max(0.0, -diag["min_weight"]))


def approx_reverse(p_base: Distribution, spec: RateSpec, score) -> Distribution:
    """Integrate the reverse equation driven by a (possibly perturbed) score."""
    p, diag = _integrate_reverse(p_base.weights, spec, score)
    return Distribution(p, 0.0, max(0.0, -diag["min_weight"]))


@dataclass
class ObservableTrajectory:
    """Solution of the backward equation at every grid point."""

    grid: TimeGrid
    values: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def sup_norms(self) -> np.ndarray:
        return np.abs(self.values).max(axis=1)


@dataclass
class ErrorTrajectory:
    """``p_t - p~_t`` on the shared grid."""

    grid: TimeGrid
    values: np.ndarray


def _kbe(psi, spec, score, integrand=None):
    traj = _check_score(score, spec)
    grid = traj.grid
    table = spec.space.neighbor_table
    pts = grid.points
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (spec.space.state_count,) or not np.all(np.isfinite(psi)):
        raise DomainError("psi must be a finite vector over the states")
    n = psi.size
    values = np.empty((pts.size, n))
    values[0] = psi
    phi = psi.copy()
    if grid.singular_start:
        phi = _complete_observable(psi, score.reverse_rates(2, 0), table, _singular_states(score))
        values[1] = phi
    y = np.concatenate([phi, [0.0]])

    def rhs(args, state):
        j, bucket = args
        ph = state[:n]
        d_phi = reverse_apply(score.reverse_rates(j, bucket), table, ph)
        extra = integrand(j, bucket, ph) if integrand is not None else 0.0
        return np.concatenate([d_phi, [extra]])

    for k in range(grid.first_regular, grid.n_intervals):
        h = pts[k + 1] - pts[k]
        y = rk4_step(rhs, y, None, h, ((2 * k, k), (2 * k + 1, k), (2 * k + 2, k)))
        values[k + 1] = y[:n]
    return ObservableTrajectory(grid, values), float(y[n])


def solve_kbe(psi: np.ndarray, spec: RateSpec, score) -> ObservableTrajectory:
    """Solve ``d phi/dt = Q~_t phi`` forward from ``phi_0 = psi``."""
    return _kbe(psi, spec, score)[0]


def error_trajectory(p_base: Distribution, spec: RateSpec, score) -> ErrorTrajectory:
    """``lambda_t = p_t - p~_t`` at every grid point of the reverse run."""
    traj = _check_score(score, spec)
    grid = traj.grid
    table = spec.space.neighbor_table
    pts = grid.points
    values = np.empty((pts.size, spec.space.state_count))
    p = np.array(p_base.weights, dtype=float)
    values[-1] = traj.at_grid(grid.n_intervals) - p

    def rhs(args, q):
        j, bucket = args
        return reverse_apply_transpose(score.reverse_rates(j, bucket), table, q)

    for k in range(grid.n_intervals - 1, grid.first_regular - 1, -1):
        p = rk4_step(rhs, p, None, pts[k + 1] - pts[k], ((2 * k + 2, k), (2 * k + 1, k), (2 * k, k)))
        values[k] = traj.at_grid(k) - p
    if grid.singular_start:
        p = _complete_mass(p, score.reverse_rates(2, 0), table, _singular_states(score))
        values[0] = traj.at_grid(0) - p
    return ErrorTrajectory(grid, values)


def duality_terms(p_base: Distribution, spec: RateSpec, score, psi: np.ndarray) -> dict:
    """The three terms of the error/adjoint identity, computed independently.

    ``lhs = <lambda_0, psi>``; ``boundary = <lambda_T, phi_T>``; ``flux`` is the
    time integral of ``sum p_t(x) (phi_t(y) - phi_t(x)) Q_t(y, x) (s - s~)(x)_y``.
    """
    traj = _check_score(score, spec)
    table = spec.space.neighbor_table
    p0_tilde, _ = _integrate_reverse(p_base.weights, spec, score)
    lam0 = traj.initial - p0_tilde
    lamT = traj.at_grid(traj.grid.n_intervals) - np.asarray(p_base.weights, dtype=float)

    def integrand(j, bucket, phi):
        exact = score.exact_rates(j)
        c = score.multiplier(bucket)
        weight = traj.at_refined(j)[None, None, :] * exact * (1.0 - c)
        return float((weight * (phi[table] - phi[None, None, :])).sum())

    kbe, flux = _kbe(psi, spec, score, integrand)
    lhs = float(lam0 @ np.asarray(psi, dtype=float))
    boundary = float(lamT @ kbe.final)
    return {"lhs": lhs, "boundary": boundary, "flux": flux, "residual": abs(lhs - boundary - flux)}


def duality_residual(p_data: Distribution, spec: RateSpec, score, psi: np.ndarray, p_base=None) -> float:
    """Absolute residual of the error/adjoint identity.

    ``p_data`` must be the initial law of the score's forward trajectory;
    ``p_base`` defaults to the tractable prior of ``spec``.
    """
    traj = _check_score(score, spec)
    if not np.allclose(traj.initial, p_data.weights, rtol=0, atol=1e-15):
        raise LabError("score trajectory was not started from p_data")
    if p_base is None:
        p_base = Distribution(spec.base_distribution(), spec.schedule.horizon)
    return duality_terms(p_base, spec, score, psi)["residual"]
