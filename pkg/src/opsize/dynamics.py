"""Qubit-chain Hamiltonians and exact evolution through a cached eigendecomposition."""

from __future__ import annotations

import hashlib
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .algebra import (
    ChainSpec,
    DenseOperator,
    DimensionError,
    StateVector,
    site_basis,
)

UNITARITY_TOL = 1e-10


@dataclass(frozen=True)
class SpinChainParams:
    """Couplings of ``sum_n sum_a J_a s_an s_a,n+1 + sum_n sum_a h_a s_an`` (open chain)."""

    chain: ChainSpec
    jx: float = 0.0
    jy: float = 0.0
    jz: float = 0.0
    hx: float = 0.0
    hy: float = 0.0
    hz: float = 0.0

    def __post_init__(self):
        if self.chain.local_dim != 2:
            raise DimensionError("spin-chain builders support d = 2 only")
        for name in ("jx", "jy", "jz", "hx", "hy", "hz"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def ising(cls, n_sites: int, j: float = 1.0, hx: float = 1.05, hz: float = 0.5):
        """``J sum s_z s_z + h_x sum s_x + h_z sum s_z``."""
        return cls(ChainSpec(n_sites, 2), jz=j, hx=hx, hz=hz)


# Toolkit-chosen parameters; the figures they are named after do not print theirs.
PRESETS = {
    "fig2-chaotic": dict(jz=1.0, hx=1.05, hz=0.5),
    "fig2-integrable": dict(jz=1.0, hx=1.0, hz=0.0),
    "fig5-xxz": dict(jx=1.0, jy=1.0, jz=0.5, hz=0.3),
    "fig5-xxz-chaotic": dict(jx=1.0, jy=1.0, jz=0.5, hx=0.6, hy=0.4, hz=0.3),
    "fig6-ising": dict(jz=1.0, hx=1.0),
    "fig6-ising-chaotic": dict(jz=1.0, hx=1.05, hz=0.5),
}


def preset(name: str, n_sites: int) -> SpinChainParams:
    try:
        couplings = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return SpinChainParams(ChainSpec(n_sites, 2), **couplings)


def build_xyz(p: SpinChainParams) -> DenseOperator:
    chain = p.chain
    chain.check_operator_cap()
    N = chain.n_sites
    sx, sy, sz = site_basis(2).matrices
    couplings = ((p.jx, sx), (p.jy, sy), (p.jz, sz))
    fields = ((p.hx, sx), (p.hy, sy), (p.hz, sz))
    D = chain.dim
    h = np.zeros((D, D), dtype=complex)

    def embed(ops: dict[int, np.ndarray]) -> np.ndarray:
        m = np.ones((1, 1), dtype=complex)
        for n in range(N):
            m = np.kron(m, ops.get(n, np.eye(2)))
        return m

    for n in range(N - 1):
        for j, s in couplings:
            if j:
                h += j * embed({n: s, n + 1: s})
    for n in range(N):
        for hv, s in fields:
            if hv:
                h += hv * embed({n: s})
    return DenseOperator(chain, h)


def random_hamiltonian(chain: ChainSpec, rng: np.random.Generator) -> DenseOperator:
    """GUE matrix scaled so that ``tr(H^2) = D``."""
    D = chain.dim
    g = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    return DenseOperator(chain, (g + g.conj().T) / 2).normalized()


@dataclass(frozen=True, eq=False)
class SpectralData:
    chain: ChainSpec
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    source_hash: str

    def phases(self, t: float, sign: int = -1) -> np.ndarray:
        return np.exp(sign * 1j * self.eigenvalues * t)

    def to_eigenbasis(self, op: DenseOperator) -> np.ndarray:
        u = self.eigenvectors
        return u.conj().T @ op.matrix @ u

    def reconstruction_residual(self, h: DenseOperator) -> float:
        u, e = self.eigenvectors, self.eigenvalues
        return float(np.max(np.abs(h.matrix - (u * e) @ u.conj().T)))


def _fingerprint(m: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(m).tobytes()).hexdigest()


class _SpectralCache:
    """Small LRU cache of eigendecompositions keyed by matrix fingerprint."""

    def __init__(self, maxsize: int = 8):
        self.maxsize = maxsize
        self._data: OrderedDict[str, SpectralData] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: str) -> SpectralData | None:
        with self._lock:
            hit = self._data.get(key)
            if hit is not None:
                self._data.move_to_end(key)
            return hit

    def put(self, key: str, value: SpectralData) -> None:
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)

    def clear(self) -> None:
        with self._lock:
            self._data.clear()


spectral_cache = _SpectralCache()


def eigendecompose(h: DenseOperator) -> SpectralData:
    h.require_hermitian()
    key = _fingerprint(h.matrix)
    hit = spectral_cache.get(key)
    if hit is not None and hit.chain == h.chain:
        return hit
    e, u = np.linalg.eigh(h.matrix)
    e.setflags(write=False)
    u.setflags(write=False)
    spec = SpectralData(h.chain, e, u, key)
    spectral_cache.put(key, spec)
    return spec


def _check_shapes(chain: ChainSpec, s: SpectralData) -> None:
    if chain != s.chain:
        raise DimensionError(f"chain mismatch: {chain} vs {s.chain}")


def evolve_operator(op: DenseOperator, s: SpectralData, t: float) -> DenseOperator:
    """Heisenberg picture ``e^{iHt} O e^{-iHt}`` of a Hermitian ``O``."""
    _check_shapes(op.chain, s)
    op.require_hermitian()
    return evolve_from_eigenbasis(s.to_eigenbasis(op), s, t)


def evolve_from_eigenbasis(op_eig: np.ndarray, s: SpectralData, t: float) -> DenseOperator:
    """Same as :func:`evolve_operator` for an operator already rotated by ``U^dagger . U``.

    Lets a time series reuse the rotation of ``O`` into the eigenbasis.
    """
    ph = s.phases(t, sign=+1)
    rotated = ph[:, None] * op_eig * ph.conj()[None, :]
    u = s.eigenvectors
    m = u @ rotated @ u.conj().T
    return DenseOperator(s.chain, (m + m.conj().T) / 2)


def evolve_state(psi: StateVector, s: SpectralData, t: float) -> StateVector:
    """Schrodinger picture ``e^{-iHt} psi``."""
    _check_shapes(psi.chain, s)
    return StateVector(psi.chain, evolve_states(psi.amplitudes[None, :], s, t)[0])


def evolve_states(batch: np.ndarray, s: SpectralData, t: float) -> np.ndarray:
    """Rows of ``batch`` evolved by ``e^{-iHt}``."""
    u = s.eigenvectors
    coeffs = batch @ u.conj()  # row form of U^dagger psi
    return (coeffs * s.phases(t, sign=-1)[None, :]) @ u.T
