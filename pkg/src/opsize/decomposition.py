"""Pauli-string coefficients of dense operators and the derived size statistics.

Coefficient tables are flat arrays of length ``d^(2N)``; the letter on site
``n`` is base-``d^2`` digit ``n`` of the index (site 0 least significant).
Region distributions are indexed by support bit mask.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algebra import (
    CapExceededError,
    ChainSpec,
    DenseOperator,
    PauliString,
    as_mask,
    doubled_trace,
    site_basis,
    string_to_matrix,
    w_operator,
)

IMAG_TOL = 1e-10
DIST_TOL = 1e-9
ORACLE_MAX_SITES = 5

_fault_flip_sign = False


class InconsistencyError(ValueError):
    """Numerical residue too large to be round-off."""


@contextlib.contextmanager
def inject_transform_fault():
    """Flip the sign of one basis letter inside :func:`decompose`.

    Negative-control hook for the self-test; never use it otherwise.
    """
    global _fault_flip_sign
    _fault_flip_sign = True
    try:
        yield
    finally:
        _fault_flip_sign = False


@dataclass(frozen=True, eq=False)
class CoefficientTable:
    chain: ChainSpec
    values: np.ndarray = field(repr=False)
    norm2: float = field(init=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != self.chain.operator_dim:
            raise ValueError(
                f"expected {self.chain.operator_dim} coefficients, got {v.size}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "norm2", float(np.dot(v, v)))

    def __getitem__(self, s: PauliString) -> float:
        return float(self.values[s.index])

    def as_tensor(self) -> np.ndarray:
        """View with one axis per site, ordered site N-1 first."""
        base = self.chain.local_dim**2
        return self.values.reshape((base,) * self.chain.n_sites)


@dataclass(frozen=True, eq=False)
class RegionDistribution:
    chain: ChainSpec
    p: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(-1)
        if p.size != 1 << self.chain.n_sites:
            raise ValueError(f"expected {1 << self.chain.n_sites} regions, got {p.size}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def __getitem__(self, region) -> float:
        return float(self.p[as_mask(region)])


@dataclass(frozen=True, eq=False)
class SizeDistribution:
    chain: ChainSpec
    p: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(-1)
        if p.size != self.chain.n_sites + 1:
            raise ValueError(f"expected {self.chain.n_sites + 1} sizes, got {p.size}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def __getitem__(self, l: int) -> float:
        return float(self.p[l])

    def mean_size(self) -> float:
        return float(np.dot(np.arange(self.p.size), self.p) / self.p.sum())

    def conditioned(self, min_size: int = 1) -> "SizeDistribution":
        """Renormalized distribution restricted to ``l >= min_size``."""
        q = self.p.copy()
        q[:min_size] = 0.0
        total = q.sum()
        if total <= 0:
            raise ValueError(f"no weight at sizes >= {min_size}")
        return SizeDistribution(self.chain, q / total)

    def total_variation(self, other: "SizeDistribution") -> float:
        if other.p.size != self.p.size:
            raise ValueError("size distributions of different chain lengths")
        return 0.5 * float(np.abs(self.p - other.p).sum())


def _transfer_matrix(d: int) -> np.ndarray:
    # row a, column (i, j): (s_a)_{ji} / d, so that row . vec(block) = tr(block s_a)/d
    full = site_basis(d).with_identity()
    t = full.transpose(0, 2, 1).reshape(d * d, d * d) / d
    if _fault_flip_sign:
        t = t.copy()
        t[2] *= -1
    return t


def decompose(op: DenseOperator) -> CoefficientTable:
    """Coefficients ``d^-N tr(O s)`` for every basis string ``s``.

    The operator is viewed as a tensor with one (row, column) index pair per
    site, and each pair is replaced by its ``d^2`` basis coefficients in turn.
    For qubits the per-site step maps a 2x2 block ``[[A, B], [C, D]]`` to
    ``((A+D), (B+C), i(B-C), (A-D)) / 2``. Cost is ``O(N d^(2N+2))``.
    """
    chain = op.chain
    chain.check_operator_cap()
    op.require_hermitian()
    N, d = chain.n_sites, chain.local_dim
    t = _transfer_matrix(d)

    arr = op.matrix.reshape((d,) * (2 * N))
    interleave = [ax for n in range(N) for ax in (n, N + n)]
    arr = arr.transpose(interleave).reshape((d * d,) * N)
    for n in range(N):
        arr = np.moveaxis(np.tensordot(t, arr, axes=(1, n)), 0, n)
    # site N-1 on the leading axis -> site 0 is the fastest-varying digit
    arr = arr.transpose(tuple(range(N - 1, -1, -1))).reshape(-1)

    scale = max(1.0, float(np.max(np.abs(arr))))
    if np.max(np.abs(arr.imag)) > IMAG_TOL * scale:
        raise InconsistencyError("complex Pauli coefficients for a Hermitian operator")
    return CoefficientTable(chain, arr.real)


def decompose_oracle(op: DenseOperator) -> CoefficientTable:
    """Brute-force coefficients, one full trace per string. Test oracle only."""
    chain = op.chain
    if chain.n_sites > ORACLE_MAX_SITES:
        raise CapExceededError(f"oracle limited to N <= {ORACLE_MAX_SITES}")
    basis = site_basis(chain.local_dim)
    values = np.empty(chain.operator_dim)
    for idx in range(chain.operator_dim):
        s = string_to_matrix(PauliString.from_index(chain, idx), basis)
        values[idx] = np.einsum("ij,ji->", op.matrix, s.matrix).real / chain.dim
    return CoefficientTable(chain, values)


def popcounts(n_sites: int) -> np.ndarray:
    masks = np.arange(1 << n_sites)
    counts = np.zeros_like(masks)
    for n in range(n_sites):
        counts += (masks >> n) & 1
    return counts


def region_distribution(c: CoefficientTable) -> RegionDistribution:
    """Weight of strings supported exactly on each region."""
    if c.norm2 <= 0.0:
        raise ValueError("zero operator has no size distribution")
    N = c.chain.n_sites
    w = c.as_tensor() ** 2
    for axis in range(N):
        ident = np.take(w, [0], axis=axis)
        rest = np.take(w, range(1, w.shape[axis]), axis=axis).sum(axis=axis, keepdims=True)
        w = np.concatenate([ident, rest], axis=axis)
    # axes run site N-1 .. 0, so C order gives bit n for site n
    return RegionDistribution(c.chain, w.reshape(-1) / c.norm2)


def size_distribution(r: RegionDistribution) -> SizeDistribution:
    N = r.chain.n_sites
    p = np.bincount(popcounts(N), weights=r.p, minlength=N + 1)
    return SizeDistribution(r.chain, p)


def operator_size_distribution(op: DenseOperator) -> SizeDistribution:
    """Shortcut: decompose, aggregate by region, then by size."""
    return size_distribution(region_distribution(decompose(op)))


def generating_function(p: SizeDistribution, z: complex) -> complex:
    """``F(z) = sum_l p_l z^l``."""
    return complex(np.polynomial.polynomial.polyval(z, p.p))


def root_of_unity_points(n_sites: int) -> np.ndarray:
    k = np.arange(n_sites + 1)
    return np.exp(2j * np.pi * k / (n_sites + 1))


def size_from_samples(f_values: Sequence[complex], local_dim: int = 2) -> SizeDistribution:
    """Invert ``F`` sampled at the ``N+1`` roots of unity ``exp(2 pi i k/(N+1))``."""
    f = np.asarray(f_values, dtype=complex)
    N = f.size - 1
    if N < 1:
        raise ValueError("need at least two samples of F")
    p = np.fft.fft(f) / (N + 1)
    if np.max(np.abs(p.imag)) > DIST_TOL:
        raise InconsistencyError("imaginary residue in recovered size distribution")
    p = p.real
    if np.min(p) < -DIST_TOL:
        raise InconsistencyError("negative probability in recovered size distribution")
    p[p < 0] = 0.0
    return SizeDistribution(ChainSpec(N, local_dim), p)


def random_baseline(chain: ChainSpec) -> SizeDistribution:
    """Size distribution of a uniformly random string, l = 0 term included."""
    N, d2 = chain.n_sites, chain.local_dim**2
    q = (d2 - 1) / d2
    p = [math.comb(N, l) * q**l * (1 - q) ** (N - l) for l in range(N + 1)]
    return SizeDistribution(chain, p)


def region_probability_doubled(op: DenseOperator, region) -> float:
    """p_R from ``d^(|R|-2N) tr[O (x) O (x)_{n in R} W_n]``, rescaled by tr(O^2)/d^N.

    Independent doubled-space oracle for :func:`region_distribution`.
    """
    chain = op.chain
    N, d = chain.n_sites, chain.local_dim
    mask = as_mask(region)
    eye = np.eye(d * d)
    w = w_operator(d)
    factors = [w if mask >> n & 1 else eye for n in range(N)]
    size = bin(mask).count("1")
    raw = doubled_trace(op, factors).real * float(d) ** (size - 2 * N)
    return raw * chain.dim / op.hs_norm2()


def generating_function_doubled(op: DenseOperator, z: complex) -> complex:
    """``F(z) = tr[O (x) O (x)_n (I/d + z W_n)] / tr(O^2)``, evaluated literally."""
    d = op.chain.local_dim
    factor = np.eye(d * d) / d + z * w_operator(d)
    return doubled_trace(op, [factor] * op.chain.n_sites) / op.hs_norm2()
