import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddlab import SequenceSpace
from ddlab.errors import CapacityError, DomainError, KernelError
from ddlab.metrics import (
    IPMSpec,
    KernelDescriptor,
    c_psi,
    check_psd,
    default_ipms,
    kgram_tv,
    mmd,
    per_position_tv,
    tv,
    w1_hamming,
)
from oracles import all_states, w1_bruteforce

pairs = st.tuples(st.integers(2, 4), st.integers(1, 3), st.integers(0, 2**31)).filter(lambda t: t[0] ** t[1] <= 27)


def _two(S, d, seed, sparse=False):
    rng = np.random.default_rng(seed)
    n = S**d
    p, q = rng.dirichlet(np.ones(n), size=2)
    if sparse:
        drop = rng.random(n) < 0.5
        drop[rng.integers(n)] = False
        p[drop] = 0
        p /= p.sum()
    return p, q


def _projection(S, d, position):
    """Dense marginalization matrix built from the token tuples."""
    M = np.zeros((S, S**d))
    for k, s in enumerate(all_states(S, d)):
        M[s[position - 1] - 1, k] = 1.0
    return M


def test_tv_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert tv(p, p) == 0.0
    assert tv(np.eye(3)[0], np.eye(3)[2]) == 1.0
    # uniform kernel with rho = 0.1 on two tokens started from a point mass
    pT = 0.1 * np.array([1.0, 0.0]) + 0.9 * np.array([0.5, 0.5])
    assert tv(pT, [0.5, 0.5]) == pytest.approx(0.05, abs=1e-15)
    with pytest.raises(DomainError):
        tv([1.0], [0.5, 0.5])


def test_per_position_examples():
    sp = SequenceSpace(3, 2)
    a, b, c = np.array([0.2, 0.3, 0.5]), np.array([0.6, 0.1, 0.3]), np.array([0.1, 0.1, 0.8])
    # products differing only at position 1 (first factor is position 1, least significant)
    p = np.kron(c, a)
    q = np.kron(c, b)
    assert per_position_tv(p, q, 2, sp) == pytest.approx(0.0, abs=1e-15)
    assert per_position_tv(p, q, 1, sp) == pytest.approx(tv(a, b), abs=1e-15)


@given(pairs)
def test_marginal_tv_two_ways(args):
    S, d, seed = args
    sp = SequenceSpace(S, d)
    p, q = _two(S, d, seed)
    for i in range(1, d + 1):
        M = _projection(S, d, i)
        assert np.abs(sp.marginal(p, [i]) - M @ p).max() <= 1e-14
        val = per_position_tv(p, q, i, sp)
        assert val == pytest.approx(0.5 * np.abs(M @ (p - q)).sum(), abs=1e-14)
        assert val <= tv(p, q) + 1e-15
    if d >= 2:
        assert per_position_tv(p, q, 1, sp) <= kgram_tv(p, q, (1, 2), sp) + 1e-15
        assert kgram_tv(p, q, (1, 2), sp) <= tv(p, q) + 1e-15
    assert kgram_tv(p, q, tuple(range(1, d + 1)), sp) == pytest.approx(tv(p, q), abs=1e-14)


def test_w1_examples():
    sp = SequenceSpace(3, 2)
    p = np.zeros(9)
    p[sp.encode([1, 1])] = 1.0
    q = np.zeros(9)
    q[sp.encode([1, 2])] = 0.5
    q[sp.encode([2, 2])] = 0.5
    assert w1_hamming(p, q, sp) == pytest.approx(1.5, abs=1e-9)
    assert w1_bruteforce(p, q, 3, 2) == pytest.approx(1.5, abs=1e-9)
    assert w1_hamming(p, p, sp) == 0.0
    for x in range(9):
        for y in range(9):
            assert w1_hamming(np.eye(9)[x], np.eye(9)[y], sp) == pytest.approx(sp.hamming(x, y), abs=1e-9)


@settings(max_examples=25)
@given(pairs, st.booleans())
def test_w1_matches_dense_lp(args, sparse):
    S, d, seed = args
    sp = SequenceSpace(S, d)
    p, q = _two(S, d, seed, sparse)
    got = w1_hamming(p, q, sp)
    assert got == pytest.approx(w1_bruteforce(p, q, S, d), abs=1e-9)
    assert tv(p, q) - 1e-12 <= got <= d * tv(p, q) + 1e-12


def test_w1_tiny_difference_and_cap():
    sp = SequenceSpace(3, 2)
    p = np.full(9, 1 / 9)
    q = p.copy()
    q[0] += 1e-13
    q[8] -= 1e-13
    assert w1_hamming(p, q, sp) == pytest.approx(2e-13, rel=1e-6)
    with pytest.raises(CapacityError):
        w1_hamming(np.full(9, 1 / 9), np.full(9, 1 / 9), sp, cap=8)


@given(pairs)
def test_mmd_properties(args):
    S, d, seed = args
    sp = SequenceSpace(S, d)
    p, q = _two(S, d, seed)
    delta = KernelDescriptor("delta")
    ham = KernelDescriptor("hamming_exponential", 0.7)
    assert mmd(p, p, ham, sp) == 0.0
    assert mmd(p, q, delta, sp) == pytest.approx(np.linalg.norm(p - q), abs=1e-14)
    for k in (delta, ham):
        assert mmd(p, q, k, sp) <= 2 * math.sqrt(k.sup_diagonal()) * tv(p, q) + 1e-14


def test_hamming_kernel_gram_oracle():
    sp = SequenceSpace(2, 3)
    states = all_states(2, 3)
    K = KernelDescriptor("hamming_exponential", 2.0).gram(sp)
    for a, x in enumerate(states):
        for b, y in enumerate(states):
            assert K[a, b] == pytest.approx(math.exp(-sum(u != v for u, v in zip(x, y)) / 2.0))
    assert check_psd(K) > 0


def test_psd_check_rejects_indefinite():
    with pytest.raises(KernelError):
        check_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(DomainError):
        KernelDescriptor("gaussian")
    with pytest.raises(DomainError):
        KernelDescriptor("hamming_exponential", 0.0)


def test_c_psi_constants():
    assert c_psi("tv") == 0.5
    assert c_psi("per_position_tv") == 0.5
    assert c_psi("w1_hamming", d=4) == 2.0
    assert c_psi("mmd", kernel=KernelDescriptor("delta")) == 1.0
    assert c_psi("mmd", kernel=KernelDescriptor()) == 1.0
    assert c_psi("bounded_lipschitz") == 1.0
    assert c_psi("w1_embed", diameter=3.0) == 1.5
    with pytest.raises(DomainError):
        c_psi("w1_hamming")
    with pytest.raises(DomainError):
        c_psi("energy")


def test_ipm_specs():
    sp = SequenceSpace(3, 2)
    p, q = _two(3, 2, 5)
    labels = [s.label for s in default_ipms()]
    assert labels == [
        "tv",
        "per_position_tv[1]",
        "kgram_tv[1,2]",
        "w1_hamming",
        "mmd[delta]",
        "mmd[hamming_exponential,1]",
    ]
    for spec in default_ipms():
        assert spec.evaluate(p, q, sp) >= 0
    assert IPMSpec("tv").evaluate(p, q, sp) == tv(p, q)
    assert not IPMSpec("kgram_tv", {"positions": (1, 3)}).applicable(sp)
    with pytest.raises(DomainError):
        IPMSpec("bounded_lipschitz")
