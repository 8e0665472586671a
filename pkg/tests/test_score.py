import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from ddlab import Distribution, Schedule, bregman, exact_score, forward_trajectory
from ddlab.errors import DomainError, ModeError, SupportError
from ddlab.score import (
    ExactScore,
    PerturbedScore,
    bregman_cubic_check,
    compute_losses,
    elementary_inequality_check,
    loss_l3,
    loss_l3_double_sum,
    loss_se,
    loss_wrsm,
    loss_wsm,
)
from oracles import make_spec, off_mask_support, random_simplex


def _run(kind, S, d, total=2.0, seed=0, skind="constant", weights=None, **grid_kw):
    spec = make_spec(kind, S, d, Schedule.with_total(skind, total, 1.0))
    if weights is None:
        rng = np.random.default_rng(seed)
        support = off_mask_support(spec.space) if spec.masked else None
        weights = random_simplex(rng, spec.space.state_count, support)
    traj = forward_trajectory(Distribution(weights), spec, **grid_kw)
    return spec, ExactScore(traj)


def test_exact_score_examples():
    spec = make_spec("uniform", 2, 1, Schedule.constant(1.0, 1.0))
    f = exact_score(Distribution([0.8, 0.2]), spec)
    assert f.ratio(0, 1, 2) == pytest.approx(0.25, abs=1e-15)
    assert f.ratio(1, 1, 1) == pytest.approx(4.0, abs=1e-15)
    flat = exact_score(Distribution.uniform(9), make_spec("uniform", 3, 2, Schedule.constant(1.0, 1.0)))
    assert all(v == 1.0 for v in flat.entries().values())


def test_score_cancellation_and_support():
    spec = make_spec("masked", 3, 2, Schedule.constant(1.0, 1.0))
    w = np.zeros(9)
    ok = off_mask_support(spec.space)
    w[ok] = 0.1
    w[spec.space.all_mask] = 0.6
    f = exact_score(Distribution(w), spec)
    for (x, pos, tok), s in f.entries().items():
        y = spec.space.neighbor_table[pos - 1, tok - 1, x]
        assert w[x] * s == pytest.approx(w[y], abs=1e-15)
    # unmasked states have no reverse edges in masked mode
    with pytest.raises(SupportError):
        f.ratio(spec.space.encode([1, 1]), 1, 2)
    with pytest.raises(DomainError):
        f.ratio(0, 3, 1)


@pytest.mark.parametrize("kind", ["uniform", "masked"])
def test_losses_vanish_without_perturbation(kind):
    spec, score = _run(kind, 3, 2)
    rep = compute_losses(score, PerturbedScore(score, 0.0))
    assert rep.wsm == 0.0 and rep.se == 0.0
    if kind == "masked":
        assert rep.l3 == 0.0 and rep.wrsm == 0.0


def test_wsm_fixed_mode_scales_quadratically():
    spec, score = _run("uniform", 3, 2, seed=3)
    vals = [loss_wsm(score, PerturbedScore(score, e, mode="multiplicative_fixed")) for e in (0.1, 0.2, 0.4)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[1] / vals[0] == pytest.approx(4.0, rel=1e-12)
    assert vals[2] / vals[0] == pytest.approx(16.0, rel=1e-12)


def _two_state_marginals(p1_0, t):
    rho = math.exp(-t)
    p1 = rho * p1_0 + (1 - rho) / 2
    return p1, 1 - p1


def test_wsm_two_state_quadrature_oracle():
    # Simpson error is about 1e-8 at the default resolution; halve the step
    spec, score = _run("uniform", 2, 1, total=1.0, weights=np.array([0.9, 0.1]), steps_per_unit_beta=40)
    eps = 0.5

    def integrand(t):
        p1, p2 = _two_state_marginals(0.9, t)
        # both directed edges have forward rate beta / S = 1/2
        return 0.5 * 0.5 * (p1 * (eps * p2 / p1) ** 2 + p2 * (eps * p1 / p2) ** 2)

    oracle, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)
    got = loss_wsm(score, PerturbedScore(score, eps, mode="multiplicative_fixed"))
    assert got == pytest.approx(oracle, abs=1e-8)


def test_se_two_state_quadrature_oracle():
    spec, score = _run("uniform", 2, 1, total=1.0, weights=np.array([0.9, 0.1]))
    c = 1.5

    def D(s):
        return s * math.log(1 / c) + c * s - s

    def integrand(t):
        p1, p2 = _two_state_marginals(0.9, t)
        return 0.5 * (p1 * D(p2 / p1) + p2 * D(p1 / p2))

    oracle, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)
    assert loss_se(score, PerturbedScore(score, 0.5, mode="multiplicative_fixed")) == pytest.approx(oracle, abs=1e-8)


def test_wsm_diverges_for_point_mass_start():
    # with p0 = (1, 0) the weighted score error p_t(2) (s - s~)^2 ~ 1/t near 0
    spec, score = _run("uniform", 2, 1, total=1.0, weights=np.array([1.0, 0.0]))
    assert loss_wsm(score, PerturbedScore(score, 0.5, mode="multiplicative_fixed")) == math.inf
    assert loss_wsm(score, PerturbedScore(score, 0.0)) == 0.0
    assert math.isfinite(loss_se(score, PerturbedScore(score, 0.5, mode="multiplicative_fixed")))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_fixed_multiplier_closed_forms(d):
    # expected number of unmasked positions is d e^{-B(t)}, so each loss collapses
    spec, score = _run("masked", 3, d, total=2.5, seed=d, skind="linear")
    eps = 0.3
    pert = PerturbedScore(score, eps, mode="multiplicative_fixed")
    mass = d * -math.expm1(-2.5)
    assert loss_l3(score, pert) == pytest.approx(eps**3 * mass, rel=1e-7)
    assert loss_wrsm(score, pert) == pytest.approx(eps**2 * mass, rel=1e-7)
    assert loss_se(score, pert) == pytest.approx((eps - math.log1p(eps)) * mass, rel=1e-7)


@pytest.mark.parametrize("seed", range(4))
def test_l3_conditional_equals_double_sum(seed):
    spec, score = _run("masked", 3, 3, seed=seed)
    pert = PerturbedScore(score, 0.4, seed=seed)
    assert abs(loss_l3(score, pert) - loss_l3_double_sum(score, pert)) <= 1e-10


@pytest.mark.parametrize("seed", range(6))
def test_wrsm_bounded_by_se_and_cubic(seed):
    spec, score = _run("masked", 3, 2, seed=seed)
    pert = PerturbedScore(score, (0.1, 0.25, 0.5)[seed % 3], seed=seed)
    assert loss_wrsm(score, pert) <= 2 * loss_se(score, pert) + 4.0 / 3.0 * loss_l3(score, pert)


def test_masked_only_losses_reject_uniform():
    spec, score = _run("uniform", 3, 1)
    pert = PerturbedScore(score, 0.2)
    for fn in (loss_l3, loss_wrsm, loss_l3_double_sum):
        with pytest.raises(ModeError):
            fn(score, pert)


def test_loss_argument_checks():
    spec, score = _run("uniform", 3, 1)
    other, _ = _run("uniform", 2, 1)
    with pytest.raises(DomainError):
        loss_se(score, PerturbedScore(score, 0.2), spec=other)
    with pytest.raises(DomainError):
        PerturbedScore(score, 1.0)
    with pytest.raises(DomainError):
        PerturbedScore(score, 0.2, mode="additive")


def test_perturbation_is_deterministic_and_banded():
    spec, score = _run("uniform", 3, 2)
    a = PerturbedScore(score, 0.5, seed=9).multiplier(3)
    b = PerturbedScore(score, 0.5, seed=9).multiplier(3)
    c = PerturbedScore(score, 0.5, seed=10).multiplier(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.min() >= 0.5 and a.max() <= 1.5
    assert PerturbedScore(score, 0.5).band_certified
    assert not PerturbedScore(score, 0.6).band_certified


def test_bregman_examples():
    assert bregman(1.0, 1.0) == 0.0
    assert bregman(1.0, 0.5) == pytest.approx(math.log(2) - 0.5, abs=1e-15)
    assert bregman(1.0, 0.5) == pytest.approx(0.193147, abs=1e-6)
    assert bregman(2.0, 3.0) == pytest.approx(2 * math.log(2 / 3) + 1, abs=1e-15)
    assert bregman(2.0, 3.0) == pytest.approx(0.189070, abs=1e-6)
    with pytest.raises(DomainError):
        bregman(0.0, 1.0)


def test_elementary_inequality_examples():
    assert elementary_inequality_check(0.0) == (0.0, 0.0)
    lhs, rhs = elementary_inequality_check(0.5)
    assert lhs == pytest.approx(0.125 + 0.5 + math.log(0.5), abs=1e-15)
    assert lhs == pytest.approx(-0.068147, abs=1e-6) and rhs == pytest.approx(1 / 12, abs=1e-15)
    lhs, rhs = elementary_inequality_check(-0.5)
    assert lhs == pytest.approx(0.125 - 0.5 + math.log(1.5), abs=1e-15)
    assert lhs == pytest.approx(0.030465, abs=1e-6) and lhs <= rhs
    with pytest.raises(DomainError):
        elementary_inequality_check(0.6)


def test_bregman_cubic_examples():
    assert bregman_cubic_check(2.0, 2.0) == (0.0, 0.0)
    lhs, rhs = bregman_cubic_check(1.0, 1.5)
    assert lhs == pytest.approx(0.125, abs=1e-15)
    assert rhs == pytest.approx(1.5 - 1 - math.log(1.5) + 0.25 / 3, abs=1e-15)
    assert rhs == pytest.approx(0.177868, abs=1e-6)
    with pytest.raises(DomainError):
        bregman_cubic_check(1.0, 1.6)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_bregman_nonnegative(s, t):
    assert bregman(s, t) >= -1e-12 * max(s, t)


@given(st.floats(-0.5, 0.5))
def test_elementary_inequality_property(u):
    lhs, rhs = elementary_inequality_check(u)
    assert lhs <= rhs + 1e-16


@given(st.floats(0.01, 100.0), st.floats(0.0, 1.0))
def test_bregman_cubic_property(s, frac):
    st_ = min(max(s * (0.5 + frac), 0.5 * s), 1.5 * s)
    lhs, rhs = bregman_cubic_check(s, st_)
    assert lhs <= rhs + 1e-12 * s
