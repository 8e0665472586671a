"""Integral probability metrics on enumerated distributions and their C_psi constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, sparse

from .errors import CapacityError, DomainError, KernelError
from .space import SequenceSpace

IPM_KINDS = ("tv", "per_position_tv", "kgram_tv", "w1_hamming", "mmd")
KERNEL_KINDS = ("delta", "hamming_exponential")
TRANSPORT_CAP = 4096
PSD_FLOOR = -1e-10
PSD_CHECK_CAP = 2048


def _weights(p) -> np.ndarray:
    return np.asarray(getattr(p, "weights", p), dtype=float)


def _pair(p, q, space: Optional[SequenceSpace] = None):
    a, b = _weights(p), _weights(q)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("distributions live on different spaces")
    if space is not None and a.size != space.state_count:
        raise DomainError("distribution length does not match the space")
    return a, b


def tv(p, q) -> float:
    """Total variation ``(1/2) sum |p - q|``."""
    a, b = _pair(p, q)
    return 0.5 * float(np.abs(a - b).sum())


def per_position_tv(p, q, position: int, space: SequenceSpace) -> float:
    """TV between the marginals at one 1-based position."""
    a, b = _pair(p, q, space)
    return 0.5 * float(np.abs(space.marginal(a, [position]) - space.marginal(b, [position])).sum())


def kgram_tv(p, q, positions: Sequence[int], space: SequenceSpace) -> float:
    """TV between joint marginals over a subset of positions."""
    a, b = _pair(p, q, space)
    return 0.5 * float(np.abs(space.marginal(a, positions) - space.marginal(b, positions)).sum())


def w1_hamming(p, q, space: SequenceSpace, cap: int = TRANSPORT_CAP) -> float:
    """Exact Wasserstein-1 distance under the Hamming metric.

    Mass common to both laws stays put (optimal for any metric cost); the
    remaining excess is moved by a transportation LP solved with HiGHS.
    """
    a, b = _pair(p, q, space)
    if space.state_count > cap:
        raise CapacityError(f"{space.state_count} states exceed the transport cap {cap}")
    diff = a - b
    src = np.flatnonzero(diff > 0)
    dst = np.flatnonzero(diff < 0)
    if src.size == 0 or dst.size == 0:
        return 0.0
    # solve for unit mass so solver tolerances do not depend on the scale of p - q
    mass = 0.5 * float(np.abs(diff).sum())
    supply, demand = diff[src] / diff[src].sum(), -diff[dst] / -diff[dst].sum()
    ns, nd = src.size, dst.size
    dig = space.digits
    cost = (dig[src][:, None, :] != dig[dst][None, :, :]).sum(axis=2).astype(float)
    rows = sparse.kron(sparse.eye(ns), np.ones((1, nd)))
    cols = sparse.kron(np.ones((1, ns)), sparse.eye(nd))
    A = sparse.vstack([rows, cols]).tocsr()
    rhs = np.concatenate([supply, demand])
    res = optimize.linprog(cost.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs")
    if res.status != 0:
        raise DomainError(f"transport problem failed: {res.message}")
    return mass * float(res.fun)


@dataclass(frozen=True)
class KernelDescriptor:
    kind: str = "hamming_exponential"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise DomainError(f"unknown kernel {self.kind!r}")
        if self.kind == "hamming_exponential" and not self.bandwidth > 0:
            raise DomainError("bandwidth must be positive")

    def gram(self, space: SequenceSpace) -> np.ndarray:
        if self.kind == "delta":
            return np.eye(space.state_count)
        return np.exp(-space.hamming_matrix / self.bandwidth)

    def sup_diagonal(self) -> float:
        """``sup_x K(x, x)``."""
        return 1.0


def check_psd(gram: np.ndarray, floor: float = PSD_FLOOR) -> float:
    """Smallest eigenvalue of a Gram matrix; raises when it is below ``floor``."""
    low = float(np.linalg.eigvalsh(gram).min())
    if low < floor:
        raise KernelError(f"Gram matrix has eigenvalue {low:.3e} < {floor:.0e}")
    return low


def mmd(p, q, kernel: KernelDescriptor, space: SequenceSpace) -> float:
    """Maximum mean discrepancy ``sqrt((p - q)^T K (p - q))``."""
    a, b = _pair(p, q, space)
    K = kernel.gram(space)
    if K.shape[0] <= PSD_CHECK_CAP:
        check_psd(K)
    diff = a - b
    return math.sqrt(max(0.0, float(diff @ K @ diff)))


def c_psi(kind: str, d: Optional[int] = None, kernel: Optional[KernelDescriptor] = None, diameter=None) -> float:
    """Constant linking an IPM to the sup-norm of its witness functions."""
    if kind in ("tv", "per_position_tv", "kgram_tv"):
        return 0.5
    if kind == "bounded_lipschitz":
        return 1.0
    if kind == "w1_hamming":
        if d is None or d < 1:
            raise DomainError("w1_hamming constant needs the sequence length d")
        return d / 2.0
    if kind == "w1_embed":
        if diameter is None:
            raise DomainError("w1_embed constant needs the embedding diameter")
        return diameter / 2.0
    if kind == "mmd":
        return math.sqrt(kernel.sup_diagonal()) if kernel is not None else 1.0
    raise DomainError(f"no constant for IPM kind {kind!r}")


@dataclass(frozen=True)
class IPMSpec:
    """One computable IPM with its parameters."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in IPM_KINDS:
            raise DomainError(f"IPM kind {self.kind!r} is not computable here")

    @property
    def label(self) -> str:
        p = self.params
        if self.kind == "per_position_tv":
            return f"per_position_tv[{p.get('position', 1)}]"
        if self.kind == "kgram_tv":
            return "kgram_tv[" + ",".join(str(i) for i in p.get("positions", (1, 2))) + "]"
        if self.kind == "mmd":
            k = self.kernel
            return f"mmd[{k.kind}]" if k.kind == "delta" else f"mmd[{k.kind},{k.bandwidth:g}]"
        return self.kind

    @property
    def kernel(self) -> KernelDescriptor:
        k = self.params.get("kernel", KernelDescriptor())
        if isinstance(k, dict):
            k = KernelDescriptor(**k)
        return k

    def applicable(self, space: SequenceSpace) -> bool:
        if self.kind == "per_position_tv":
            return self.params.get("position", 1) <= space.seq_len
        if self.kind == "kgram_tv":
            return max(self.params.get("positions", (1, 2))) <= space.seq_len
        return True

    def constant(self, space: SequenceSpace) -> float:
        return c_psi(self.kind, d=space.seq_len, kernel=self.kernel if self.kind == "mmd" else None)

    def evaluate(self, p, q, space: SequenceSpace) -> float:
        if self.kind == "tv":
            return tv(p, q)
        if self.kind == "per_position_tv":
            return per_position_tv(p, q, self.params.get("position", 1), space)
        if self.kind == "kgram_tv":
            return kgram_tv(p, q, self.params.get("positions", (1, 2)), space)
        if self.kind == "w1_hamming":
            return w1_hamming(p, q, space)
        return mmd(p, q, self.kernel, space)


def default_ipms() -> list:
    """Every computable IPM with its default parameters."""
    return [
        IPMSpec("tv"),
        IPMSpec("per_position_tv", {"position": 1}),
        IPMSpec("kgram_tv", {"positions": (1, 2)}),
        IPMSpec("w1_hamming"),
        IPMSpec("mmd", {"kernel": KernelDescriptor("delta")}),
        IPMSpec("mmd", {"kernel": KernelDescriptor("hamming_exponential", 1.0)}),
    ]
