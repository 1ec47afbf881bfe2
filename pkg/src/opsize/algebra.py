"""Site-local operator basis, Pauli strings and dense operators on qudit chains.

Conventions used throughout the package:

* Sites are numbered ``0 .. N-1``. In Kronecker products site 0 is the
  leftmost factor, i.e. the most significant digit of a state index.
* A region (set of sites) is an integer bit mask with bit ``n`` for site ``n``.
* Basis letter 0 is the identity; letters ``1 .. d^2-1`` index the traceless
  basis returned by :func:`site_basis`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

# d^(2N) entries; 4**12 keeps a d=2, N=12 operator at ~270 MB.
OPERATOR_CAP_ENTRIES = 4**12
STATE_CAP_ENTRIES = 2**22

HERMITIAN_RTOL = 1e-10
STATE_NORM_TOL = 1e-12

PAULI_LETTERS = "IXYZ"


class DimensionError(ValueError):
    """Raised for invalid local dimensions or mismatched operator shapes."""


class CapExceededError(ValueError):
    """Raised when a chain is too large for a dense pathway."""


class HermiticityError(ValueError):
    """Raised when an operator expected to be Hermitian is not."""


@dataclass(frozen=True)
class ChainSpec:
    n_sites: int
    local_dim: int = 2

    def __post_init__(self):
        if self.n_sites < 1:
            raise DimensionError(f"n_sites must be positive, got {self.n_sites}")
        if self.local_dim < 2:
            raise DimensionError(f"local_dim must be >= 2, got {self.local_dim}")

    @property
    def dim(self) -> int:
        """Hilbert space dimension d^N."""
        return self.local_dim**self.n_sites

    @property
    def operator_dim(self) -> int:
        """Number of operator basis strings d^(2N)."""
        return self.local_dim ** (2 * self.n_sites)

    @property
    def full_mask(self) -> int:
        return (1 << self.n_sites) - 1

    def check_operator_cap(self, cap: int = OPERATOR_CAP_ENTRIES) -> None:
        if self.operator_dim > cap:
            raise CapExceededError(
                f"chain N={self.n_sites}, d={self.local_dim} needs {self.operator_dim} "
                f"operator entries, above the cap of {cap}"
            )

    def check_state_cap(self, cap: int = STATE_CAP_ENTRIES) -> None:
        if self.dim > cap:
            raise CapExceededError(
                f"chain N={self.n_sites}, d={self.local_dim} has state dimension "
                f"{self.dim}, above the cap of {cap}"
            )


def as_mask(sites: int | Iterable[int]) -> int:
    """Convert an iterable of site indices to a bit mask (ints pass through)."""
    if isinstance(sites, (int, np.integer)):
        return int(sites)
    mask = 0
    for s in sites:
        if s < 0:
            raise ValueError(f"negative site index {s}")
        mask |= 1 << int(s)
    return mask


def mask_sites(mask: int) -> tuple[int, ...]:
    """Sorted site indices contained in ``mask``."""
    out = []
    n = 0
    while mask:
        if mask & 1:
            out.append(n)
        mask >>= 1
        n += 1
    return tuple(out)


@dataclass(frozen=True)
class SiteBasis:
    local_dim: int
    matrices: tuple[np.ndarray, ...] = field(repr=False)

    def __len__(self):
        return len(self.matrices)

    def with_identity(self) -> np.ndarray:
        """Stack of ``d^2`` matrices, identity first."""
        eye = np.eye(self.local_dim, dtype=complex)
        return np.stack((eye,) + self.matrices)


@lru_cache(maxsize=None)
def _site_basis(d: int) -> SiteBasis:
    # generalized Gell-Mann, rescaled from tr(l_a l_b) = 2 delta to d delta
    scale = np.sqrt(d / 2.0)
    sym, asym, diag = [], [], []
    for j in range(d):
        for k in range(j + 1, d):
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = m[k, j] = 1.0
            sym.append(m)
            m = np.zeros((d, d), dtype=complex)
            m[j, k] = -1j
            m[k, j] = 1j
            asym.append(m)
    for l in range(1, d):
        entries = np.zeros(d, dtype=complex)
        entries[:l] = 1.0
        entries[l] = -l
        diag.append(np.sqrt(2.0 / (l * (l + 1))) * np.diag(entries))
    mats = []
    for m in sym + asym + diag:
        m = scale * m
        m.setflags(write=False)
        mats.append(m)
    return SiteBasis(d, tuple(mats))


def site_basis(d: int) -> SiteBasis:
    """Traceless Hermitian basis with ``tr(s_a s_b) = d delta_ab``.

    For ``d = 2`` this is (sigma_x, sigma_y, sigma_z). For larger ``d`` the
    rescaled generalized Gell-Mann matrices are returned in the order
    symmetric, antisymmetric, diagonal, each group ordered by (j, k).
    """
    if int(d) != d or d < 2:
        raise DimensionError(f"local dimension must be an integer >= 2, got {d}")
    return _site_basis(int(d))


def swap_operator(d: int) -> np.ndarray:
    """Swap X on C^d (x) C^d with ``X[(a, c), (b, e)] = delta_ae delta_bc``."""
    if int(d) != d or d < 2:
        raise DimensionError(f"local dimension must be an integer >= 2, got {d}")
    d = int(d)
    x = np.zeros((d * d, d * d), dtype=complex)
    for a in range(d):
        for b in range(d):
            x[a * d + b, b * d + a] = 1.0
    return x


@dataclass(frozen=True)
class PauliString:
    chain: ChainSpec
    letters: tuple[int, ...]

    def __post_init__(self):
        letters = tuple(int(a) for a in self.letters)
        object.__setattr__(self, "letters", letters)
        if len(letters) != self.chain.n_sites:
            raise DimensionError(
                f"{len(letters)} letters for a chain of {self.chain.n_sites} sites"
            )
        top = self.chain.local_dim**2
        if any(a < 0 or a >= top for a in letters):
            raise ValueError(f"letters must lie in [0, {top}), got {letters}")

    @property
    def support(self) -> int:
        return sum(1 << n for n, a in enumerate(self.letters) if a)

    @property
    def size(self) -> int:
        return sum(1 for a in self.letters if a)

    @property
    def index(self) -> int:
        """Position in a coefficient table (site 0 = least significant digit)."""
        base = self.chain.local_dim**2
        return sum(a * base**n for n, a in enumerate(self.letters))

    @classmethod
    def from_index(cls, chain: ChainSpec, index: int) -> "PauliString":
        base = chain.local_dim**2
        letters = []
        for _ in range(chain.n_sites):
            index, a = divmod(index, base)
            letters.append(a)
        return cls(chain, tuple(letters))

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        """Qubit string from a label such as ``"XIZ"`` (site 0 first)."""
        try:
            letters = tuple(PAULI_LETTERS.index(c) for c in label.upper())
        except ValueError:
            raise ValueError(f"bad Pauli label {label!r}") from None
        return cls(ChainSpec(len(letters), 2), letters)

    @classmethod
    def single(cls, chain: ChainSpec, site: int, letter: int) -> "PauliString":
        if not 0 <= site < chain.n_sites:
            raise ValueError(f"site {site} outside chain of {chain.n_sites} sites")
        letters = [0] * chain.n_sites
        letters[site] = letter
        return cls(chain, tuple(letters))

    def label(self) -> str:
        if self.chain.local_dim == 2:
            return "".join(PAULI_LETTERS[a] for a in self.letters)
        return ".".join(str(a) for a in self.letters)


def _max_abs(m: np.ndarray) -> float:
    return float(np.max(np.abs(m))) if m.size else 0.0


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Dense ``D x D`` matrix on a chain, with tracked Hermitian/traceless flags."""

    chain: ChainSpec
    matrix: np.ndarray = field(repr=False)
    hermitian: bool = field(init=False)
    traceless: bool = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        D = self.chain.dim
        if m.shape != (D, D):
            raise DimensionError(f"expected a {D}x{D} matrix, got shape {m.shape}")
        if m is self.matrix and m.flags.writeable:
            m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        herm, tl = self.check_flags()
        object.__setattr__(self, "hermitian", herm)
        object.__setattr__(self, "traceless", tl)

    def check_flags(self, rtol: float = HERMITIAN_RTOL) -> tuple[bool, bool]:
        """Recompute (hermitian, traceless) relative to the max-abs entry."""
        m = self.matrix
        scale = max(_max_abs(m), 1.0e-300)
        herm = _max_abs(m - m.conj().T) <= rtol * scale
        tl = abs(np.trace(m)) <= rtol * scale * self.chain.dim
        return herm, tl

    @classmethod
    def identity(cls, chain: ChainSpec) -> "DenseOperator":
        return cls(chain, np.eye(chain.dim, dtype=complex))

    def require_hermitian(self) -> None:
        if not self.hermitian:
            raise HermiticityError("operator is not Hermitian within tolerance")

    def hs_norm2(self) -> float:
        """tr(O^dagger O)."""
        return float(np.vdot(self.matrix, self.matrix).real)

    def normalized(self) -> "DenseOperator":
        """Rescaled so that ``tr(O^2) = d^N``."""
        n2 = self.hs_norm2()
        if n2 == 0.0:
            raise ValueError("cannot normalize the zero operator")
        return DenseOperator(self.chain, self.matrix * np.sqrt(self.chain.dim / n2))

    def __add__(self, other: "DenseOperator") -> "DenseOperator":
        _same_chain(self, other)
        return DenseOperator(self.chain, self.matrix + other.matrix)

    def __mul__(self, c: complex) -> "DenseOperator":
        return DenseOperator(self.chain, self.matrix * c)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class StateVector:
    chain: ChainSpec
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if v.shape != (self.chain.dim,):
            raise DimensionError(
                f"expected {self.chain.dim} amplitudes, got {v.shape[0]}"
            )
        norm = np.linalg.norm(v)
        if abs(norm - 1.0) > STATE_NORM_TOL * max(1.0, np.sqrt(v.size)):
            raise ValueError(f"state is not normalized (norm {norm!r})")
        v.setflags(write=False)
        object.__setattr__(self, "amplitudes", v)

    @classmethod
    def basis(cls, chain: ChainSpec, index: int = 0) -> "StateVector":
        v = np.zeros(chain.dim, dtype=complex)
        v[index] = 1.0
        return cls(chain, v)

    @classmethod
    def product(cls, locals_: Sequence[np.ndarray], local_dim: int = 2) -> "StateVector":
        """Tensor product of per-site (or per-block) states, site 0 leftmost."""
        v = np.ones(1, dtype=complex)
        for s in locals_:
            v = np.kron(v, np.asarray(s, dtype=complex))
        n, size = 0, 1
        while size < v.size:
            size *= local_dim
            n += 1
        if size != v.size:
            raise DimensionError(f"{v.size} amplitudes is not a power of {local_dim}")
        return cls(ChainSpec(n, local_dim), v)


def _same_chain(a, b) -> None:
    if a.chain != b.chain:
        raise DimensionError(f"chain mismatch: {a.chain} vs {b.chain}")


def string_to_matrix(s: PauliString, basis: SiteBasis | None = None) -> DenseOperator:
    """Dense matrix of a basis string (identity on letter 0)."""
    d = s.chain.local_dim
    if basis is None:
        basis = site_basis(d)
    if basis.local_dim != d:
        raise DimensionError(f"basis has d={basis.local_dim}, string has d={d}")
    s.chain.check_state_cap()
    full = basis.with_identity()
    m = np.ones((1, 1), dtype=complex)
    for a in s.letters:
        m = np.kron(m, full[a])
    return DenseOperator(s.chain, m)


def local_operator(chain: ChainSpec, site: int, op: np.ndarray) -> DenseOperator:
    """Embed a single-site ``d x d`` matrix at ``site``."""
    d = chain.local_dim
    op = np.asarray(op, dtype=complex)
    if op.shape != (d, d):
        raise DimensionError(f"expected a {d}x{d} local operator, got {op.shape}")
    left = np.eye(d**site, dtype=complex)
    right = np.eye(d ** (chain.n_sites - site - 1), dtype=complex)
    return DenseOperator(chain, np.kron(np.kron(left, op), right))


def hs_trace_inner(a: DenseOperator, b: DenseOperator) -> complex:
    """Hilbert-Schmidt pairing tr(A^dagger B)."""
    _same_chain(a, b)
    return complex(np.vdot(a.matrix, b.matrix))


def partial_trace(op: DenseOperator, keep: int | Iterable[int]) -> DenseOperator:
    """Raw partial trace over the complement of ``keep``.

    The result lives on a chain of ``|keep|`` sites (kept sites in increasing
    order). An empty ``keep`` gives a 1x1 matrix holding tr(O); it is
    returned as a bare numpy array since a zero-site chain does not exist.
    """
    chain = op.chain
    keep_mask = as_mask(keep)
    if keep_mask & ~chain.full_mask:
        raise ValueError(f"keep set {mask_sites(keep_mask)} outside the chain")
    N, d = chain.n_sites, chain.local_dim
    kept = mask_sites(keep_mask)
    if len(kept) == N:
        return op
    t = op.matrix.reshape((d,) * (2 * N))
    traced = [n for n in range(N) if not keep_mask >> n & 1]
    # trace highest site first so lower axis numbers stay valid
    n_left = N
    for n in reversed(traced):
        t = np.trace(t, axis1=n, axis2=n + n_left)
        n_left -= 1
    k = len(kept)
    if k == 0:
        return np.asarray(t, dtype=complex).reshape(1, 1)
    return DenseOperator(ChainSpec(k, d), t.reshape(d**k, d**k))


def w_operator(d: int) -> np.ndarray:
    """``W = X - I/d``, so that ``sum_a s_a (x) s_a = d W``."""
    return swap_operator(d) - np.eye(d * d) / d


DOUBLED_CAP_ENTRIES = 4**5


def doubled_trace(op: DenseOperator, factors: Sequence[np.ndarray]) -> complex:
    """Literal ``tr[(O (x) O) . (x)_n K_n]`` on the doubled Hilbert space.

    ``factors[n]`` is a ``d^2 x d^2`` matrix acting on the two copies of site
    ``n`` (copy-1 index most significant). Only for tiny chains; it builds the
    ``D^2 x D^2`` matrices explicitly.
    """
    chain = op.chain
    N, d = chain.n_sites, chain.local_dim
    if chain.operator_dim > DOUBLED_CAP_ENTRIES:
        raise CapExceededError(
            f"doubled-space trace limited to d^(2N) <= {DOUBLED_CAP_ENTRIES}"
        )
    if len(factors) != N:
        raise DimensionError(f"need {N} site factors, got {len(factors)}")
    m = np.ones((1, 1), dtype=complex)
    for k in factors:
        m = np.kron(m, np.asarray(k, dtype=complex))
    # interleaved (site, copy) axes -> (copy-1 sites, copy-2 sites)
    perm = [2 * n for n in range(N)] + [2 * n + 1 for n in range(N)]
    m = m.reshape((d,) * (4 * N))
    m = m.transpose(perm + [2 * N + p for p in perm])
    m = m.reshape(d ** (2 * N), d ** (2 * N))
    oo = np.kron(op.matrix, op.matrix)
    return complex(np.einsum("ij,ji->", oo, m))
