"""Retarded response statistics over global Haar states and the squared-commutator identity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import ChainSpec, DenseOperator, DimensionError, HermiticityError, StateVector
from .dynamics import SpectralData, evolve_operator
from .quench import (
    DEFAULT_BOOTSTRAP,
    IMAG_TOL,
    QuenchSamples,
    _run_chunks,
    sample_haar_state,
    site_stream,
    summarize,
)

# reserved site index so global draws never share a stream with product ensembles
_GLOBAL_SITE = -1 & 0xFFFFFFFF


def step(dt: float) -> float:
    """Heaviside step with ``step(0) = 1``."""
    return 1.0 if dt >= 0 else 0.0


@dataclass(frozen=True, eq=False)
class ResponsePair:
    W: DenseOperator
    V: DenseOperator
    spectral: SpectralData
    t1: float
    t2: float

    def __post_init__(self):
        if not (self.W.chain == self.V.chain == self.spectral.chain):
            raise DimensionError("W, V and the Hamiltonian must share a chain")
        if not (self.W.hermitian and self.V.hermitian):
            raise HermiticityError("W and V must be Hermitian")

    @property
    def chain(self) -> ChainSpec:
        return self.W.chain

    @property
    def retarded(self) -> bool:
        return step(self.t2 - self.t1) > 0

    def at(self, t1: float, t2: float) -> "ResponsePair":
        return ResponsePair(self.W, self.V, self.spectral, t1, t2)

    def commutator(self) -> np.ndarray:
        """``[W(t2), V(t1)]`` as a dense (anti-Hermitian) matrix."""
        w = evolve_operator(self.W, self.spectral, self.t2).matrix
        v = evolve_operator(self.V, self.spectral, self.t1).matrix
        return w @ v - v @ w


def _responses(k: np.ndarray, states: np.ndarray) -> np.ndarray:
    vals = -1j * np.einsum("mi,ij,mj->m", states.conj(), k, states, optimize=True)
    scale = max(1.0, float(np.max(np.abs(vals.real))))
    if np.max(np.abs(vals.imag)) > IMAG_TOL * scale:
        raise HermiticityError("response has an imaginary part beyond round-off")
    return vals.real


def response(rp: ResponsePair, psi: StateVector) -> float:
    """``C = -i <psi|[W(t2), V(t1)]|psi> theta(t2 - t1)``."""
    if psi.chain != rp.chain:
        raise DimensionError("state and operators live on different chains")
    if not rp.retarded:
        return 0.0
    return float(_responses(rp.commutator(), psi.amplitudes[None, :])[0])


def sample_global_haar(chain: ChainSpec, rng: np.random.Generator) -> StateVector:
    chain.check_state_cap()
    return StateVector(chain, sample_haar_state(chain.dim, rng))


def global_haar_states(chain: ChainSpec, M: int, master_seed: int, threads: int = 1) -> np.ndarray:
    def work(idx):
        return np.array([
            sample_haar_state(chain.dim, site_stream(master_seed, i, _GLOBAL_SITE)) for i in idx
        ])

    chain.check_state_cap()
    return _run_chunks(work, M, threads)


def mc_otoc_variance(rp: ResponsePair, M: int, master_seed: int = 0, *,
                     n_boot: int = DEFAULT_BOOTSTRAP, threads: int = 1,
                     states: np.ndarray | None = None) -> QuenchSamples:
    """Variance of the response over ``M`` global Haar states.

    Pass ``states`` to reuse one set of draws across several time pairs.
    """
    if M < 2:
        raise ValueError("mc_otoc_variance needs M >= 2")
    if not rp.retarded:
        values = np.zeros(M)
    else:
        if states is None:
            states = global_haar_states(rp.chain, M, master_seed, threads)
        values = _responses(rp.commutator(), states[:M])
    return summarize(values, t=rp.t2, seed=master_seed, n_boot=n_boot)


def exact_otoc(rp: ResponsePair) -> float:
    """``-<[W(t2), V(t1)]^2>_(beta=0) / (D+1)``, zero when ``t2 < t1``."""
    if not rp.retarded:
        return 0.0
    k = rp.commutator()
    D = rp.chain.dim
    # tr(K^2) for anti-Hermitian K equals -||K||_F^2
    tr_k2 = np.einsum("ij,ji->", k, k).real
    return float(-tr_k2 / D / (D + 1))
