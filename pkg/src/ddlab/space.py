"""Enumerated sequence spaces ``[S]^d``.

Tokens and positions are 1-based at the public surface (token ``S`` is the
mask in masked mode).  States are stored as mixed-radix integers with
position 1 as the least-significant digit, so a probability vector reshaped
to ``(S,) * d`` in C order has position ``i`` on axis ``d - i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CapacityError, DomainError, ModeError

DEFAULT_STATE_CAP = 10**6


@dataclass(frozen=True)
class SequenceSpace:
    vocab_size: int
    seq_len: int
    mask_token: Optional[int] = None
    state_cap: int = field(default=DEFAULT_STATE_CAP, compare=False)

    def __post_init__(self):
        if self.vocab_size < 1 or self.seq_len < 1:
            raise DomainError("vocab_size and seq_len must be positive")
        if self.vocab_size**self.seq_len > self.state_cap:
            raise CapacityError(
                f"S^d = {self.vocab_size}^{self.seq_len} exceeds the enumeration cap {self.state_cap}"
            )
        if self.mask_token is not None and not 1 <= self.mask_token <= self.vocab_size:
            raise DomainError(f"mask token {self.mask_token} is not in [1, {self.vocab_size}]")

    @classmethod
    def masked(cls, vocab_size: int, seq_len: int, mask_token: Optional[int] = None, **kw):
        """Space whose mask token defaults to the last token ``S``."""
        return cls(vocab_size, seq_len, vocab_size if mask_token is None else mask_token, **kw)

    @property
    def state_count(self) -> int:
        return self.vocab_size**self.seq_len

    @property
    def is_masked(self) -> bool:
        return self.mask_token is not None

    @property
    def shape(self) -> tuple:
        return (self.vocab_size,) * self.seq_len

    def axis(self, position: int) -> int:
        """Tensor axis holding 1-based ``position``."""
        return self.seq_len - position

    @cached_property
    def strides(self) -> np.ndarray:
        return self.vocab_size ** np.arange(self.seq_len, dtype=np.int64)

    @cached_property
    def digits(self) -> np.ndarray:
        """``(N, d)`` array of 0-based tokens; column ``i`` is position ``i + 1``."""
        idx = np.arange(self.state_count, dtype=np.int64)
        return (idx[:, None] // self.strides[None, :]) % self.vocab_size

    def encode(self, state: Sequence[int]) -> int:
        tokens = np.asarray(state, dtype=np.int64)
        if tokens.shape != (self.seq_len,):
            raise DomainError(f"state must have length {self.seq_len}")
        if tokens.min() < 1 or tokens.max() > self.vocab_size:
            raise DomainError(f"token out of range [1, {self.vocab_size}]: {list(state)}")
        return int(((tokens - 1) * self.strides).sum())

    def decode(self, index: int) -> tuple:
        self._check_index(index)
        return tuple(int(v) + 1 for v in self.digits[index])

    def _check_index(self, index):
        if not 0 <= int(index) < self.state_count:
            raise DomainError(f"state index {index} outside [0, {self.state_count})")

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``table[i, v, x]``: index of ``x`` with 0-based position ``i`` set to token ``v``."""
        S, d = self.vocab_size, self.seq_len
        idx = np.arange(self.state_count, dtype=np.int64)
        out = np.empty((d, S, self.state_count), dtype=np.int64)
        for i in range(d):
            base = idx - self.digits[:, i] * self.strides[i]
            out[i] = base[None, :] + np.arange(S, dtype=np.int64)[:, None] * self.strides[i]
        return out

    def hamming_neighbors(self, index: int) -> list:
        """All ``(position, token, index)`` triples at Hamming distance one."""
        self._check_index(index)
        x = self.digits[index]
        out = []
        for i in range(self.seq_len):
            for v in range(self.vocab_size):
                if v != x[i]:
                    out.append((i + 1, v + 1, int(self.neighbor_table[i, v, index])))
        return out

    def hamming(self, a: int, b: int) -> int:
        return int(np.count_nonzero(self.digits[a] != self.digits[b]))

    @cached_property
    def hamming_matrix(self) -> np.ndarray:
        dig = self.digits
        return (dig[:, None, :] != dig[None, :, :]).sum(axis=2)

    def _require_mask(self):
        if self.mask_token is None:
            raise ModeError("operation requires a masked space")
        return self.mask_token - 1

    @property
    def all_mask(self) -> int:
        """Index of the all-mask sequence."""
        m = self._require_mask()
        return int(m * self.strides.sum())

    @cached_property
    def mask_counts(self) -> np.ndarray:
        m = self._require_mask()
        return (self.digits == m).sum(axis=1)

    def successor_set(self, index: int) -> list:
        """States reachable from ``index`` by masking one non-mask position."""
        m = self._require_mask()
        self._check_index(index)
        y = self.digits[index]
        return [int(self.neighbor_table[i, m, index]) for i in range(self.seq_len) if y[i] != m]

    def states(self) -> Iterable[tuple]:
        for k in range(self.state_count):
            yield self.decode(k)

    def marginal(self, weights: np.ndarray, positions: Sequence[int]) -> np.ndarray:
        """Joint marginal of a probability vector over 1-based ``positions``.

        The result is flattened with the first listed position least significant.
        """
        positions = list(positions)
        for i in positions:
            if not 1 <= i <= self.seq_len:
                raise DomainError(f"position {i} outside [1, {self.seq_len}]")
        if len(set(positions)) != len(positions):
            raise DomainError("positions must be distinct")
        tensor = np.asarray(weights).reshape(self.shape)
        keep = [self.axis(i) for i in positions]
        drop = tuple(a for a in range(self.seq_len) if a not in keep)
        reduced = tensor.sum(axis=drop)
        # remaining axes are in increasing order; reorder so the first position is last (least significant)
        remaining = sorted(keep)
        order = [remaining.index(a) for a in reversed(keep)]
        return np.transpose(reduced, order).reshape(-1)
