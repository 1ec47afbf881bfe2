"""Random product-state quenches: sampling, variance statistics and exact predictions.

Every random draw comes from a stream derived from
``SeedSequence(master_seed, spawn_key=(sample_index, site_index))`` (blocks use
their first site), so a sample can be regenerated in isolation and results do
not depend on how samples are split between workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .algebra import (
    ChainSpec,
    DenseOperator,
    DimensionError,
    HermiticityError,
    StateVector,
    as_mask,
    doubled_trace,
    mask_sites,
    partial_trace,
    swap_operator,
)
from .decomposition import (
    RegionDistribution,
    SizeDistribution,
    generating_function,
    popcounts,
)

IMAG_TOL = 1e-9
DESIGN_TOL = 1e-10
DEFAULT_BOOTSTRAP = 1000
DEFAULT_PREP_DRAWS = 1000

# spawn-key prefix reserved for bootstrap resampling streams
_BOOTSTRAP_KEY = 0xB007


def site_stream(master_seed: int, sample_index: int, site_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(sample_index), int(site_index)))
    return np.random.Generator(np.random.PCG64(seq))


def bootstrap_stream(master_seed: int, tag: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(_BOOTSTRAP_KEY, int(tag)))
    return np.random.Generator(np.random.PCG64(seq))


def sample_haar_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random unit vector in C^dim (normalized complex Gaussian)."""
    if dim < 1:
        raise ValueError(f"dim must be positive, got {dim}")
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def pauli_six_design() -> list[tuple[float, np.ndarray]]:
    """Eigenstates of sigma_x, sigma_y, sigma_z with weight 1/6: a qubit 2-design."""
    r = 1 / np.sqrt(2)
    states = [
        np.array([r, r]),
        np.array([r, -r]),
        np.array([r, 1j * r]),
        np.array([r, -1j * r]),
        np.array([1, 0]),
        np.array([0, 1]),
    ]
    return [(1 / 6, s.astype(complex)) for s in states]


HAAR_PRODUCT = "haar_product"
FINITE_PRODUCT = "finite_product"
CLUSTERED_HAAR = "clustered_haar"


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    """Random initial-state ensemble on a chain.

    ``site_ensembles`` (finite kind) holds one ``(probabilities, states)`` pair
    per site; ``blocks`` (clustered kind) lists contiguous site blocks in order.
    """

    kind: str
    chain: ChainSpec
    master_seed: int = 0
    site_ensembles: tuple | None = field(default=None, repr=False)
    blocks: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        N, d = self.chain.n_sites, self.chain.local_dim
        if self.kind == HAAR_PRODUCT:
            pass
        elif self.kind == FINITE_PRODUCT:
            if self.site_ensembles is None or len(self.site_ensembles) != N:
                raise ValueError("finite_product needs one state ensemble per site")
            for probs, states in self.site_ensembles:
                if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
                    raise ValueError("site probabilities must be nonnegative and sum to 1")
                if states.shape != (probs.size, d):
                    raise DimensionError(f"site states must have shape ({probs.size}, {d})")
        elif self.kind == CLUSTERED_HAAR:
            if not self.blocks:
                raise ValueError("clustered_haar needs a block partition")
            flat = [n for b in self.blocks for n in b]
            if flat != list(range(N)):
                raise ValueError(
                    f"blocks {self.blocks} must partition sites 0..{N - 1} contiguously in order"
                )
        else:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")

    @classmethod
    def haar_product(cls, chain: ChainSpec, master_seed: int = 0) -> "EnsembleSpec":
        return cls(HAAR_PRODUCT, chain, master_seed)

    @classmethod
    def finite_product(cls, chain: ChainSpec, site_ensemble, master_seed: int = 0) -> "EnsembleSpec":
        """``site_ensemble`` is a list of ``(p_i, state)`` shared by all sites,
        or a list of such lists, one per site."""
        if site_ensemble and isinstance(site_ensemble[0], tuple):
            per_site = [site_ensemble] * chain.n_sites
        else:
            per_site = list(site_ensemble)
        packed = []
        for ens in per_site:
            probs = np.array([p for p, _ in ens], dtype=float)
            states = np.array([np.asarray(s, dtype=complex) for _, s in ens])
            states = states / np.linalg.norm(states, axis=1, keepdims=True)
            packed.append((probs, states))
        return cls(FINITE_PRODUCT, chain, master_seed, site_ensembles=tuple(packed))

    @classmethod
    def clustered_haar(cls, chain: ChainSpec, blocks, master_seed: int = 0) -> "EnsembleSpec":
        return cls(CLUSTERED_HAAR, chain, master_seed, blocks=tuple(tuple(b) for b in blocks))

    @classmethod
    def paired_blocks(cls, chain: ChainSpec, master_seed: int = 0) -> "EnsembleSpec":
        """Blocks (0,1), (2,3), ...; a trailing odd site forms its own block."""
        N = chain.n_sites
        blocks = [tuple(range(n, min(n + 2, N))) for n in range(0, N, 2)]
        return cls.clustered_haar(chain, blocks, master_seed)

    def units(self) -> list[tuple[int, ...]]:
        """Independently drawn units: single sites, or blocks."""
        if self.kind == CLUSTERED_HAAR:
            return list(self.blocks)
        return [(n,) for n in range(self.chain.n_sites)]

    def with_seed(self, master_seed: int) -> "EnsembleSpec":
        return EnsembleSpec(self.kind, self.chain, master_seed, self.site_ensembles, self.blocks)


def _draw_unit(e: EnsembleSpec, unit: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    d = e.chain.local_dim
    if e.kind == FINITE_PRODUCT:
        probs, states = e.site_ensembles[unit[0]]
        return states[rng.choice(probs.size, p=probs)]
    return sample_haar_state(d ** len(unit), rng)


def sample_local_states(e: EnsembleSpec, sample_index: int, sites: int | None = None) -> list[np.ndarray]:
    """Per-unit local vectors of one sample; ``sites`` (mask) restricts to those units."""
    out = []
    for unit in e.units():
        if sites is not None and not any(sites >> n & 1 for n in unit):
            continue
        out.append(_draw_unit(e, unit, site_stream(e.master_seed, sample_index, unit[0])))
    return out


def sample_initial_state(e: EnsembleSpec, sample_index: int) -> StateVector:
    locals_ = sample_local_states(e, sample_index)
    v = np.ones(1, dtype=complex)
    for s in locals_:
        v = np.kron(v, s)
    return StateVector(e.chain, v / np.linalg.norm(v))


def _batched_kron(local_batches: Sequence[np.ndarray]) -> np.ndarray:
    v = local_batches[0]
    for b in local_batches[1:]:
        v = (v[:, :, None] * b[:, None, :]).reshape(v.shape[0], -1)
    return v


def _run_chunks(fn: Callable[[range], np.ndarray], M: int, threads: int, start: int = 0) -> np.ndarray:
    threads = max(1, int(threads))
    step = max(1, math.ceil(M / (4 * threads)))
    chunks = [range(i, min(i + step, start + M)) for i in range(start, start + M, step)]
    if threads == 1 or len(chunks) == 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    return np.concatenate(parts, axis=0)


def sample_states(
    e: EnsembleSpec,
    M: int,
    *,
    start: int = 0,
    sites: int | None = None,
    threads: int = 1,
) -> np.ndarray:
    """Rows are the product states of samples ``start .. start+M-1``.

    With ``sites`` given (product kinds only) the rows live on those sites only.
    """
    if sites is not None and e.kind == CLUSTERED_HAAR:
        raise ValueError("site-restricted sampling needs a product ensemble")

    def work(idx: range) -> np.ndarray:
        per_sample = [sample_local_states(e, i, sites) for i in idx]
        if not per_sample[0]:
            return np.ones((len(idx), 1), dtype=complex)
        n_units = len(per_sample[0])
        batches = [np.array([s[u] for s in per_sample]) for u in range(n_units)]
        return _batched_kron(batches)

    return _run_chunks(work, M, threads, start)


def expectation(op: DenseOperator, psi: StateVector) -> float:
    if op.chain != psi.chain:
        raise DimensionError(f"chain mismatch: {op.chain} vs {psi.chain}")
    return float(expectations(op.matrix, psi.amplitudes[None, :])[0])


def expectations(matrix: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Real ``<psi|O|psi>`` for every row of ``states``."""
    vals = np.einsum("mi,ij,mj->m", states.conj(), matrix, states, optimize=True)
    scale = max(1.0, float(np.max(np.abs(vals.real))) if vals.size else 1.0)
    if vals.size and np.max(np.abs(vals.imag)) > IMAG_TOL * scale:
        raise HermiticityError("complex expectation value; operator is not Hermitian")
    return vals.real


@dataclass(frozen=True, eq=False)
class QuenchSamples:
    values: np.ndarray = field(repr=False)
    t: float = 0.0
    seed: int = 0
    boot_variances: np.ndarray = field(default=None, repr=False)

    @property
    def sample_count(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def mean_stderr(self) -> float:
        return float(np.std(self.values, ddof=1) / np.sqrt(self.values.size))

    @property
    def variance(self) -> float:
        return float(np.var(self.values, ddof=1))

    @property
    def stderr_of_variance(self) -> float:
        """Bootstrap standard deviation of the variance estimator."""
        if self.boot_variances is None or self.boot_variances.size < 2:
            return self.moment_stderr
        return float(np.std(self.boot_variances, ddof=1))

    @property
    def moment_stderr(self) -> float:
        x = self.values - self.values.mean()
        M = x.size
        s2 = np.dot(x, x) / (M - 1)
        m4 = np.mean(x**4)
        return float(np.sqrt(max(m4 - (M - 3) / (M - 1) * s2**2, 0.0) / M))

    def band(self, level: float = 0.99) -> tuple[float, float]:
        """Percentile bootstrap interval for the variance."""
        if self.boot_variances is None:
            raise ValueError("no bootstrap replicates stored")
        a = (1 - level) / 2
        lo, hi = np.quantile(self.boot_variances, [a, 1 - a])
        return float(lo), float(hi)

    def summary(self) -> dict:
        return {
            "mean": self.mean,
            "variance": self.variance,
            "stderr": self.stderr_of_variance,
            "M": self.sample_count,
            "t": self.t,
            "seed": self.seed,
        }


def summarize(values: np.ndarray, *, t: float = 0.0, seed: int = 0,
              n_boot: int = DEFAULT_BOOTSTRAP, tag: int = 0) -> QuenchSamples:
    """Wrap samples with bootstrap replicates of the unbiased variance."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("need at least two samples")
    boots = np.empty(n_boot)
    rng = bootstrap_stream(seed, tag)
    M = values.size
    for lo in range(0, n_boot, 100):
        hi = min(lo + 100, n_boot)
        idx = rng.integers(0, M, size=(hi - lo, M))
        boots[lo:hi] = np.var(values[idx], axis=1, ddof=1)
    values = values.copy()
    values.setflags(write=False)
    boots.setflags(write=False)
    return QuenchSamples(values, float(t), int(seed), boots)


@dataclass(frozen=True)
class PrepErrorModel:
    """Each prepared copy is ``sqrt(1-eps) psi + sqrt(eps) phi`` with Haar ``phi``, renormalized.

    ``weighting="norm"`` accepts a draw with probability proportional to its
    squared norm before renormalizing, which keeps the shot-averaged state at
    ``(1-eps)|psi><psi| + eps I/d``. ``weighting="plain"`` renormalizes every
    draw, which damps slightly more than that.
    """

    epsilon: float = 0.0
    weighting: str = "norm"

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.weighting not in ("norm", "plain"):
            raise ValueError(f"weighting must be 'norm' or 'plain', got {self.weighting!r}")

    @property
    def damping(self) -> float:
        return (1.0 - self.epsilon) ** 2


def _perturbed_batch(target: np.ndarray, err: PrepErrorModel, rng: np.random.Generator, k: int) -> np.ndarray:
    eps = err.epsilon
    d = target.size
    if eps == 0.0:
        return np.repeat(target[None, :], k, axis=0)
    a, b = np.sqrt(1 - eps), np.sqrt(eps)
    w_max = (a + b) ** 2
    out, have = [], 0
    while have < k:
        # mean acceptance is 1/w_max
        n = k - have if err.weighting == "plain" else int(1.1 * w_max * (k - have)) + 16
        g = rng.standard_normal((n, 2 * d))
        phi = g[:, :d] + 1j * g[:, d:]
        phi /= np.sqrt(np.einsum("ij,ij->i", g, g))[:, None]
        chi = a * target[None, :] + b * phi
        w = (chi.real**2 + chi.imag**2).sum(axis=1)
        if err.weighting == "norm":
            keep = rng.random(n) * w_max < w
            chi, w = chi[keep], w[keep]
        chi = chi / np.sqrt(w)[:, None]
        out.append(chi[: k - have])
        have += min(chi.shape[0], k - have)
    return np.concatenate(out, axis=0)


def perturbed_state(target: np.ndarray, err: PrepErrorModel, rng: np.random.Generator) -> np.ndarray:
    """One erroneous preparation of ``target`` (normalized)."""
    target = np.asarray(target, dtype=complex)
    if err.epsilon == 0.0:
        return target.copy()
    return _perturbed_batch(target, err, rng, 1)[0]


def product_expectation(matrix: np.ndarray, rhos: Sequence[np.ndarray]) -> float:
    """``tr(O (x)_u rho_u)`` contracting one unit at a time, never forming the product."""
    m = matrix
    for rho in rhos:
        k = rho.shape[0]
        r = m.shape[0] // k
        m = np.einsum("iajb,ji->ab", m.reshape(k, r, k, r), rho)
    val = complex(m[0, 0])
    if abs(val.imag) > IMAG_TOL * max(1.0, abs(val.real)):
        raise HermiticityError("complex expectation value; operator is not Hermitian")
    return val.real


def prep_error_local_states(e: EnsembleSpec, err: PrepErrorModel, sample_index: int,
                            draws: int = DEFAULT_PREP_DRAWS) -> list[np.ndarray]:
    """Per-site shot-averaged density matrices of one sample.

    Each site's target comes from the same stream as the error-free draw, so
    ``epsilon = 0`` reproduces the pure product state of that sample.
    """
    rhos = []
    for unit in e.units():
        rng = site_stream(e.master_seed, sample_index, unit[0])
        target = _draw_unit(e, unit, rng)
        chi = _perturbed_batch(target, err, rng, draws)
        rhos.append(chi.T @ chi.conj() / draws)
    return rhos


def _prep_error_values(O: np.ndarray, e: EnsembleSpec, err: PrepErrorModel,
                       idx: range, draws: int) -> np.ndarray:
    return np.array([
        product_expectation(O, prep_error_local_states(e, err, i, draws)) for i in idx
    ])


def mc_variance(
    O_t: DenseOperator,
    e: EnsembleSpec,
    M: int,
    *,
    t: float = 0.0,
    err: PrepErrorModel | None = None,
    prep_draws: int = DEFAULT_PREP_DRAWS,
    n_boot: int = DEFAULT_BOOTSTRAP,
    threads: int = 1,
) -> QuenchSamples:
    """Monte-Carlo statistics of ``<Psi|O(t)|Psi>`` over ``M`` initial states.

    With a preparation-error model each sample uses the shot-averaged state of
    ``prep_draws`` perturbed copies per site.
    """
    if M < 2:
        raise ValueError("mc_variance needs M >= 2")
    if O_t.chain != e.chain:
        raise DimensionError(f"chain mismatch: {O_t.chain} vs {e.chain}")
    O_t.require_hermitian()
    if err is not None and err.epsilon > 0:
        if e.kind == CLUSTERED_HAAR:
            raise ValueError("preparation errors are modelled for product ensembles only")
        values = _run_chunks(
            lambda idx: _prep_error_values(O_t.matrix, e, err, idx, prep_draws), M, threads
        )
    else:
        states = sample_states(e, M, threads=threads)
        values = expectations(O_t.matrix, states)
    return summarize(values, t=t, seed=e.master_seed, n_boot=n_boot)


def exact_variance(p: SizeDistribution, d: int, err: PrepErrorModel | None = None) -> float:
    """``F(z*)`` with ``z* = (1-eps)^2/(d+1)`` for an operator normalized to tr(O^2) = d^N."""
    damping = 1.0 if err is None else err.damping
    return generating_function(p, damping / (d + 1)).real


def exact_variance_doubled(op: DenseOperator) -> float:
    """``tr[O (x) O (x)_n (X_n + I_n)] / (d^N (d+1)^N)`` built on the doubled space."""
    if not op.traceless:
        raise ValueError("exact_variance_doubled requires a traceless operator")
    N, d = op.chain.n_sites, op.chain.local_dim
    factor = swap_operator(d) + np.eye(d * d)
    return doubled_trace(op, [factor] * N).real / float(d * (d + 1)) ** N


@dataclass(frozen=True)
class TwoDesignReport:
    first_residual: float
    second_residual: float
    tolerance: float = DESIGN_TOL

    @property
    def first_passed(self) -> bool:
        return self.first_residual < self.tolerance

    @property
    def second_passed(self) -> bool:
        return self.second_residual < self.tolerance

    @property
    def passed(self) -> bool:
        return self.first_passed and self.second_passed


def verify_2design(site_ensemble, d: int) -> TwoDesignReport:
    """Max-abs residuals of the first- and second-moment Haar conditions."""
    first = np.zeros((d, d), dtype=complex)
    second = np.zeros((d * d, d * d), dtype=complex)
    for p, state in site_ensemble:
        v = np.asarray(state, dtype=complex)
        v = v / np.linalg.norm(v)
        proj = np.outer(v, v.conj())
        first += p * proj
        second += p * np.kron(proj, proj)
    r1 = np.max(np.abs(first - np.eye(d) / d))
    r2 = np.max(np.abs(second - (swap_operator(d) + np.eye(d * d)) / (d * (d + 1))))
    return TwoDesignReport(float(r1), float(r2))


def region_variance_exact(r: RegionDistribution, region, d: int) -> float:
    """``sum_{S subset of R} p_S (d+1)^-|S|``."""
    R = as_mask(region)
    if R & ~r.chain.full_mask:
        raise ValueError("region outside the chain")
    total, S = 0.0, R
    while True:
        total += r.p[S] * (d + 1.0) ** -bin(S).count("1")
        if S == 0:
            break
        S = (S - 1) & R
    return float(total)


def region_variances_all(r: RegionDistribution, d: int) -> np.ndarray:
    """Region variance for every mask at once (subset-sum transform)."""
    N = r.chain.n_sites
    g = r.p * (d + 1.0) ** -popcounts(N)
    g = g.reshape((2,) * N)
    for axis in range(N):
        g = np.cumsum(g, axis=axis)
    return g.reshape(-1)


def mc_region_variance(
    O_t: DenseOperator,
    region,
    e: EnsembleSpec,
    M: int,
    *,
    t: float = 0.0,
    n_boot: int = DEFAULT_BOOTSTRAP,
    threads: int = 1,
) -> QuenchSamples:
    """Statistics of ``O^R_Psi`` where sites outside R are averaged out exactly."""
    if e.kind == CLUSTERED_HAAR:
        raise ValueError("region variances need a product ensemble")
    if M < 2:
        raise ValueError("need M >= 2")
    R = as_mask(region)
    N = O_t.chain.n_sites
    k = bin(R).count("1")
    reduced = partial_trace(O_t, R)
    if k == 0:
        values = np.full(M, (reduced[0, 0] / O_t.chain.dim).real)
    else:
        o_r = reduced.matrix / float(O_t.chain.local_dim) ** (N - k)
        states = sample_states(e, M, sites=R, threads=threads)
        values = expectations(o_r, states)
    return summarize(values, t=t, seed=e.master_seed, n_boot=n_boot, tag=R)


def recover_region_distribution(variances: Mapping[int, float], region, d: int) -> float:
    """``p_R = (d+1)^|R| sum_{Q subset of R} (-1)^(|R|-|Q|) var(Q)``, with var(empty) = 0."""
    R = as_mask(region)
    size = bin(R).count("1")
    total, Q = 0.0, R
    while True:
        if Q == 0:
            v = variances.get(0, 0.0)
        else:
            try:
                v = variances[Q]
            except KeyError:
                raise KeyError(f"missing variance for subset {mask_sites(Q)}") from None
        sign = -1.0 if (size - bin(Q).count("1")) % 2 else 1.0
        total += sign * v
        if Q == 0:
            break
        Q = (Q - 1) & R
    return float((d + 1.0) ** size * total)


def clustered_variance_exact(r: RegionDistribution, blocks, d: int) -> float:
    """Variance under block-Haar states: each touched block contributes ``1/(d^|b|+1)``."""
    block_masks = [as_mask(b) for b in blocks]
    total = 0.0
    for R in range(r.p.size):
        if r.p[R] == 0.0:
            continue
        factor = 1.0
        for b in block_masks:
            if R & b:
                factor /= d ** bin(b).count("1") + 1.0
        total += r.p[R] * factor
    return float(total)


@dataclass(frozen=True)
class ShotPlan:
    shots: int
    seed: int = 0

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError(f"shots must be >= 1, got {self.shots}")


@dataclass(frozen=True)
class ShotEstimate:
    mean: float
    stderr: float
    shots: int


_EIG_CACHE: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}


def _observable_spectrum(op: DenseOperator) -> tuple[np.ndarray, np.ndarray]:
    key = op.matrix.tobytes()
    hit = _EIG_CACHE.get(key)
    if hit is None:
        op.require_hermitian()
        hit = np.linalg.eigh(op.matrix)
        if len(_EIG_CACHE) > 16:
            _EIG_CACHE.clear()
        _EIG_CACHE[key] = hit
    return hit


def shot_noise_expectation(op: DenseOperator, psi: StateVector, plan: ShotPlan,
                           rng: np.random.Generator | None = None) -> ShotEstimate:
    """Sample mean of ``plan.shots`` projective measurements of ``op`` in ``psi``."""
    if op.chain != psi.chain:
        raise DimensionError(f"chain mismatch: {op.chain} vs {psi.chain}")
    if rng is None:
        rng = np.random.default_rng(plan.seed)
    evals, evecs = _observable_spectrum(op)
    probs = np.abs(evecs.conj().T @ psi.amplitudes) ** 2
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum()
    k = plan.shots
    counts = rng.multinomial(k, probs)
    mean = float(np.dot(counts, evals) / k)
    if k == 1:
        return ShotEstimate(mean, math.inf, k)
    var = float(np.dot(counts, (evals - mean) ** 2) / (k - 1))
    return ShotEstimate(mean, math.sqrt(var / k), k)
