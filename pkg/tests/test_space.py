import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddlab import SequenceSpace
from ddlab.errors import CapacityError, DomainError, ModeError
from oracles import all_states

spaces = st.tuples(st.integers(1, 5), st.integers(1, 4)).filter(lambda t: t[0] ** t[1] <= 625)


def test_encode_examples():
    sp = SequenceSpace(3, 2)
    assert sp.encode([1, 1]) == 0
    assert sp.encode([2, 1]) == 1
    assert sp.encode([1, 2]) == 3


def test_encode_rejects_bad_tokens():
    sp = SequenceSpace(3, 2)
    with pytest.raises(DomainError):
        sp.encode([0, 1])
    with pytest.raises(DomainError):
        sp.encode([1, 4])
    with pytest.raises(DomainError):
        sp.encode([1, 1, 1])
    with pytest.raises(DomainError):
        sp.decode(9)


def test_cap_and_mask_validation():
    with pytest.raises(CapacityError):
        SequenceSpace(10, 7)
    SequenceSpace(10, 7, state_cap=10**7)
    with pytest.raises(DomainError):
        SequenceSpace(3, 2, mask_token=4)
    assert SequenceSpace.masked(4, 2).mask_token == 4
    assert SequenceSpace.masked(4, 2, 1).mask_token == 1


def test_hamming_neighbors_examples():
    sp = SequenceSpace(2, 1)
    assert sp.hamming_neighbors(sp.encode([1])) == [(1, 2, sp.encode([2]))]
    sp = SequenceSpace(3, 2)
    for x in range(sp.state_count):
        nb = sp.hamming_neighbors(x)
        assert len(nb) == 4
        assert all(sp.hamming(x, y) == 1 for _, _, y in nb)


def test_successor_set_examples():
    sp = SequenceSpace.masked(3, 2)
    assert sp.successor_set(sp.all_mask) == []
    got = {sp.decode(i) for i in sp.successor_set(sp.encode([1, 2]))}
    assert got == {(3, 2), (1, 3)}
    with pytest.raises(ModeError):
        SequenceSpace(3, 2).successor_set(0)


@given(spaces)
def test_decode_matches_enumeration(sd):
    S, d = sd
    sp = SequenceSpace(S, d)
    states = all_states(S, d)
    assert [sp.decode(k) for k in range(sp.state_count)] == states
    assert all(sp.encode(s) == k for k, s in enumerate(states))


@given(spaces)
def test_neighbourhood_size_and_symmetry(sd):
    S, d = sd
    sp = SequenceSpace(S, d)
    rel = set()
    for x in range(sp.state_count):
        nb = sp.hamming_neighbors(x)
        assert len(nb) == d * (S - 1)
        for pos, tok, y in nb:
            assert sp.decode(y)[pos - 1] == tok
            rel.add((x, y))
    assert all((y, x) in rel for x, y in rel)


@given(st.tuples(st.integers(2, 5), st.integers(1, 3), st.data()))
def test_successor_set_bruteforce(args):
    S, d, data = args
    m = data.draw(st.integers(1, S))
    sp = SequenceSpace.masked(S, d, m)
    states = all_states(S, d)
    for k, y in enumerate(states):
        # scan every state at Hamming distance one
        expected = set()
        for j, x in enumerate(states):
            diff = [i for i in range(d) if x[i] != y[i]]
            if len(diff) == 1 and x[diff[0]] == m and y[diff[0]] != m:
                expected.add(j)
        got = sp.successor_set(k)
        assert set(got) == expected
        assert len(got) == sum(t != m for t in y)


def test_marginal_and_hamming_matrix():
    sp = SequenceSpace(3, 2)
    rng = np.random.default_rng(0)
    w = rng.dirichlet(np.ones(9))
    states = all_states(3, 2)
    m1 = np.zeros(3)
    m2 = np.zeros(3)
    for k, s in enumerate(states):
        m1[s[0] - 1] += w[k]
        m2[s[1] - 1] += w[k]
    assert np.allclose(sp.marginal(w, [1]), m1, atol=1e-15)
    assert np.allclose(sp.marginal(w, [2]), m2, atol=1e-15)
    joint = sp.marginal(w, [2, 1])
    for y1 in range(1, 4):
        for y2 in range(1, 4):
            # first listed position is the least significant digit
            assert joint[(y2 - 1) + 3 * (y1 - 1)] == pytest.approx(w[sp.encode([y1, y2])], abs=1e-15)
    H = np.array([[sum(a != b for a, b in zip(x, y)) for y in states] for x in states])
    assert np.array_equal(sp.hamming_matrix, H)
