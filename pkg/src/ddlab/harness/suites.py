"""Verification suites, one per bound, identity or lemma."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .. import bounds, coupling, metrics, score
from ..bounds import BoundReport
from ..errors import UsageError
from ..evolve import Distribution, duality_terms, forward_trajectory, solve_kbe
from ..rates import Schedule
from .config import build_data, build_rate, metric_spec

DUALITY_TOL = 1e-6
A1_TOL = 1e-10
A2_TOL = 1e-8
A3_TOL = 1e-10
A7_TOL = 1e-8
GRID_POINTS = 10_000


@dataclass
class SuiteResult:
    checks: list
    losses: Optional[dict] = None
    coupling: Optional[dict] = None
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Suite:
    name: str
    result: str
    func: Callable
    mode: Optional[str]
    defaults: dict


REGISTRY: dict = {}


def suite(name: str, result: str, mode: Optional[str] = None, **defaults):
    def wrap(func):
        base = {"vocab_size": 3, "seq_len": 2, "rate_kind": mode or "masked"}
        base.update(defaults)
        REGISTRY[name] = Suite(name, result, func, mode, base)
        return func

    return wrap


def get_suite(name: str) -> Suite:
    if name not in REGISTRY:
        raise UsageError(f"unknown suite {name!r}; known: {', '.join(sorted(REGISTRY))}")
    return REGISTRY[name]


def check_mode(s: Suite, cfg: dict):
    if s.mode is not None and cfg["rate_kind"] != s.mode:
        raise UsageError(f"suite {s.name} needs rate_kind={s.mode}")


# --- helpers -----------------------------------------------------------------


def _grid_kw(cfg):
    return {"steps_per_unit_beta": cfg["integrator"]["steps_per_unit_beta"]}


def _pipeline(cfg, **over):
    spec = build_rate(cfg)
    pert = dict(cfg["perturbation"])
    pert.update(over)
    return bounds.run_pipeline(
        spec,
        build_data(cfg),
        epsilon=float(pert["epsilon"]),
        seed=int(pert["seed"]),
        mode=pert["mode"],
        start=cfg["start"],
        **_grid_kw(cfg),
    )


def _psis(cfg, n_states: int, count: Optional[int] = None):
    count = cfg["psi"]["count"] if count is None else count
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg["psi"]["seed"]), 0x951]))
    return [rng.uniform(-1.0, 1.0, n_states) for _ in range(count)]


def _losses(run) -> dict:
    return run.losses.as_dict()


def _theorem(cfg) -> SuiteResult:
    run = _pipeline(cfg)
    diff = np.asarray(run.p_data.weights) - np.asarray(run.p_tilde0.weights)
    psis = [np.sign(diff)] + _psis(cfg, diff.size)
    checks = [bounds.theorem_ipm_check(run, psi) for psi in psis]
    return SuiteResult(checks, _losses(run))


# --- suites ------------------------------------------------------------------


@suite("thm1_case1", "IPM bound, masked rate", mode="masked")
def thm1_case1(cfg):
    return _theorem(cfg)


@suite("thm1_case2", "IPM bound, uniform rate", mode="uniform")
def thm1_case2(cfg):
    return _theorem(cfg)


@suite("cor_tv", "TV bound")
def cor_tv(cfg):
    run = _pipeline(cfg)
    checks = [bounds.corollary_tv_check(run)]
    if run.perturbed.epsilon == 0 and run.start == "prior":
        # exact scores: only the prior mismatch remains
        prior = checks[0].components["prior_term"]
        checks.append(BoundReport("cor_tv_prior_only", checks[0].lhs, prior, {"prior_term": prior}))
    return SuiteResult(checks, _losses(run))


@suite("cor_spec", "unified IPM bounds with C_psi constants")
def cor_spec(cfg):
    run = _pipeline(cfg)
    space = run.spec.space
    ipms = [metric_spec(m) for m in cfg["metrics"]]
    checks = [bounds.corollary_spec_check(run, ipm) for ipm in ipms if ipm.applicable(space)]
    return SuiteResult(checks, _losses(run))


@suite("lemma_a1", "sup-norm contraction of the backward equation", rate_kind="uniform", psi={"count": 20})
def lemma_a1(cfg):
    run = _pipeline(cfg)
    checks = []
    for k, psi in enumerate(_psis(cfg, run.spec.space.state_count)):
        kbe = solve_kbe(psi, run.spec, run.perturbed)
        sup = float(np.abs(psi).max())
        worst = float(kbe.sup_norms().max())
        checks.append(BoundReport(f"lemma_a1[{k}]", worst, sup, {"psi_sup": sup}, tolerance=A1_TOL))
    return SuiteResult(checks)


@suite("lemma_a2", "neighbor-count identity for the uniform rate", mode="uniform")
def lemma_a2(cfg):
    spec = build_rate(cfg)
    traj = forward_trajectory(build_data(cfg), spec, **_grid_kw(cfg))
    computed, bound = bounds.lemma_a2_sum(traj, spec)
    closed = bounds.lemma_a2_closed_form(spec)
    return SuiteResult(
        [
            BoundReport("lemma_a2_bound", computed, bound, {"closed_form": closed}),
            BoundReport("lemma_a2_identity", abs(computed - closed), A2_TOL, {"closed_form": closed}, tolerance=0.0),
        ]
    )


@suite("lemma_a3", "conditional and unconditioned cubic terms agree", mode="masked")
def lemma_a3(cfg):
    run = _pipeline(cfg)
    cond = run.losses.l3
    double = score.loss_l3_double_sum(run.score, run.perturbed)
    return SuiteResult(
        [BoundReport("lemma_a3_identity", abs(cond - double), A3_TOL, {"l3_term": cond, "double_sum": double}, tolerance=0.0)],
        _losses(run),
    )


@suite("lemma_a4", "elementary logarithmic inequality on |u| <= 1/2")
def lemma_a4(cfg):
    us = np.linspace(-0.5, 0.5, GRID_POINTS)
    worst = None
    for u in us:
        lhs, rhs = score.elementary_inequality_check(float(u))
        if worst is None or rhs - lhs < worst[1] - worst[0]:
            worst = (lhs, rhs, float(u))
    lhs, rhs, u = worst
    return SuiteResult([BoundReport("lemma_a4", lhs, rhs, {"worst_u": u, "grid_points": us.size}, tolerance=0.0)])


@suite("lemma_a5", "Bregman divergence with cubic remainder on the band")
def lemma_a5(cfg):
    n = int(math.isqrt(GRID_POINTS))
    worst = None
    for s in np.logspace(-1, 1, n):
        for st in np.linspace(0.5 * s, 1.5 * s, n):
            lhs, rhs = score.bregman_cubic_check(float(s), float(min(max(st, 0.5 * s), 1.5 * s)))
            if worst is None or rhs - lhs < worst[1] - worst[0]:
                worst = (lhs, rhs, float(s), float(st))
    lhs, rhs, s, st = worst
    return SuiteResult([BoundReport("lemma_a5", lhs, rhs, {"worst_s": s, "worst_s_tilde": st, "grid_points": n * n}, tolerance=0.0)])


@suite("lemma_a6", "relative score matching bounded by score entropy and cubic term", mode="masked")
def lemma_a6(cfg):
    spec = build_rate(cfg)
    traj = forward_trajectory(build_data(cfg), spec, **_grid_kw(cfg))
    exact = score.ExactScore(traj)
    checks = []
    base_seed = int(cfg["perturbation"]["seed"])
    for k in range(int(cfg["instances"])):
        eps = (0.1, 0.25, 0.5)[k % 3]
        pert = score.PerturbedScore(exact, eps, base_seed + k, cfg["perturbation"]["mode"])
        se, l3, wrsm = score.loss_se(exact, pert), score.loss_l3(exact, pert), score.loss_wrsm(exact, pert)
        checks.append(
            BoundReport(f"lemma_a6[{k}]", wrsm, 2 * se + 4.0 / 3.0 * l3, {"epsilon": eps, "se_term": se, "l3_term": l3})
        )
    return SuiteResult(checks)


@suite("lemma_a7", "prior mismatch under masked diffusion", mode="masked")
def lemma_a7(cfg):
    spec = build_rate(cfg)
    traj = forward_trajectory(build_data(cfg), spec, **_grid_kw(cfg))
    exact, bound = bounds.prior_mismatch_masked(spec.schedule, spec.space.seq_len)
    numeric = metrics.tv(traj.final(), spec.base_distribution())
    return SuiteResult(
        [
            BoundReport("lemma_a7_bound", exact, bound, {"prior_term": bound}),
            BoundReport("lemma_a7_exact", abs(exact - numeric), A7_TOL, {"numeric_tv": numeric}, tolerance=0.0),
        ]
    )


@suite("thm_c1", "S-free prior mismatch under the uniform rate via coupling", mode="uniform")
def thm_c1(cfg):
    spec = build_rate(cfg)
    data = build_data(cfg)
    traj = forward_trajectory(data, spec, **_grid_kw(cfg))
    d = spec.space.seq_len
    bound = bounds.prior_mismatch_uniform(spec.schedule, d)
    exact_tv = metrics.tv(traj.final(), spec.base_distribution())
    est = coupling.synchronous_coupling(data, spec, None, int(cfg["trials"]), int(cfg["coupling_seed"]))
    four = 4.0 * est.std_err
    closure = Schedule.constant(math.log(d / 0.01), 1.0) if d / 0.01 > 1 else None
    checks = [
        BoundReport("thm_c1_bound", exact_tv, bound, {"prior_term": bound}),
        BoundReport("thm_c1_oracle", est.oracle, bound, {}),
        BoundReport("thm_c1_coupling_tv", exact_tv, est.p_hat + four, {"p_hat": est.p_hat, "std_err": est.std_err}),
        BoundReport("thm_c1_mc_vs_oracle", abs(est.p_hat - est.oracle), four, {"oracle": est.oracle}, tolerance=0.0),
        BoundReport("thm_c1_merging", 0.0 if est.merged_when_rang else 1.0, 0.0, {}, tolerance=0.0),
    ]
    if closure is not None:
        checks.append(BoundReport("thm_c1_closure", bounds.prior_mismatch_uniform(closure, d), 0.01, {}))
    info = {"trials": est.trials, "disagreements": est.disagreements, "p_hat": est.p_hat, "std_err": est.std_err, "oracle": est.oracle}
    return SuiteResult(checks, coupling=info)


@suite("duality", "error/adjoint identity", psi={"count": 3})
def duality(cfg):
    run = _pipeline(cfg)
    spec = run.spec
    p_base = Distribution(spec.base_distribution(), spec.schedule.horizon)
    checks = []
    for k, psi in enumerate(_psis(cfg, spec.space.state_count)):
        terms = duality_terms(p_base, spec, run.perturbed, psi)
        sup = float(np.abs(psi).max())
        comp = {"lhs_term": terms["lhs"], "boundary_term": terms["boundary"], "flux_term": terms["flux"]}
        checks.append(BoundReport(f"duality[{k}]", terms["residual"], DUALITY_TOL * sup, comp, tolerance=0.0))
    return SuiteResult(checks, _losses(run))


REQUIRED_SUITES = (
    "thm1_case1",
    "thm1_case2",
    "cor_tv",
    "cor_spec",
    "lemma_a1",
    "lemma_a2",
    "lemma_a3",
    "lemma_a4",
    "lemma_a5",
    "lemma_a6",
    "lemma_a7",
    "thm_c1",
    "duality",
)
