"""Small-N identity checks run by ``opsize selftest``."""

from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass

import numpy as np

from .algebra import (
    ChainSpec,
    DenseOperator,
    PauliString,
    site_basis,
    string_to_matrix,
    swap_operator,
)
from .decomposition import (
    decompose,
    decompose_oracle,
    generating_function,
    inject_transform_fault,
    random_baseline,
    region_distribution,
    region_probability_doubled,
    root_of_unity_points,
    size_distribution,
    size_from_samples,
)
from .dynamics import eigendecompose, random_hamiltonian
from .experiments import single_qubit_otoc_sanity
from .otoc import ResponsePair, exact_otoc
from .quench import (
    exact_variance,
    exact_variance_doubled,
    pauli_six_design,
    recover_region_distribution,
    region_variances_all,
    verify_2design,
)


@dataclass
class Check:
    name: str
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual < self.threshold)

    def as_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def random_traceless(chain: ChainSpec, rng: np.random.Generator) -> DenseOperator:
    """Random Hermitian, traceless, normalized to ``tr(O^2) = d^N``."""
    D = chain.dim
    g = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    h = (g + g.conj().T) / 2
    h -= np.trace(h) / D * np.eye(D)
    return DenseOperator(chain, h).normalized()


def _completeness(d: int) -> float:
    b = site_basis(d)
    total = sum(np.kron(s, s) for s in b.matrices)
    return float(np.max(np.abs(total - (d * swap_operator(d) - np.eye(d * d)))))


def _orthonormality(d: int) -> float:
    b = site_basis(d).matrices
    gram = np.array([[np.trace(x @ y).real / d for y in b] for x in b])
    return float(np.max(np.abs(gram - np.eye(len(b)))))


def run_checks(seed: int = 20190801) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = [
        Check("basis_completeness", max(_completeness(d) for d in (2, 3, 4)), 1e-12),
        Check("basis_orthonormality", max(_orthonormality(d) for d in (2, 3, 4)), 1e-12),
    ]

    worst = 0.0
    for chain in (ChainSpec(1), ChainSpec(2), ChainSpec(3), ChainSpec(2, 3)):
        op = random_traceless(chain, rng)
        worst = max(worst, np.max(np.abs(decompose(op).values - decompose_oracle(op).values)))
    checks.append(Check("transform_vs_oracle", worst, 1e-10))

    op = random_traceless(ChainSpec(2), rng)
    r = region_distribution(decompose(op))
    worst = max(abs(r.p[m] - region_probability_doubled(op, m)) for m in range(4))
    checks.append(Check("region_doubled_space", worst, 1e-9))

    op = random_traceless(ChainSpec(4), rng)
    p = size_distribution(region_distribution(decompose(op)))
    f = [generating_function(p, z) for z in root_of_unity_points(4)]
    checks.append(Check("generating_function_roundtrip",
                        float(np.max(np.abs(size_from_samples(f).p - p.p))), 1e-9))

    base = random_baseline(ChainSpec(6))
    checks.append(Check("random_baseline_variance",
                        abs(exact_variance(base, 2) - 2.0**-6), 1e-12))

    op = random_traceless(ChainSpec(3), rng)
    p = size_distribution(region_distribution(decompose(op)))
    checks.append(Check("variance_two_path",
                        abs(exact_variance(p, 2) - exact_variance_doubled(op)), 1e-10))

    report = verify_2design(pauli_six_design(), 2)
    checks.append(Check("six_state_2design",
                        max(report.first_residual, report.second_residual), 1e-10))

    op = random_traceless(ChainSpec(4), rng)
    r = region_distribution(decompose(op))
    var = region_variances_all(r, 2)
    worst = max(
        abs(recover_region_distribution({q: var[q] for q in range(16)}, R, 2) - r.p[R])
        for R in range(16)
    )
    checks.append(Check("inclusion_exclusion_roundtrip", worst, 1e-8))

    checks.append(Check("otoc_single_qubit", abs(single_qubit_otoc_sanity() - 4 / 3), 1e-12))

    chain = ChainSpec(2)
    spec = eigendecompose(random_hamiltonian(chain, rng))
    w = string_to_matrix(PauliString(chain, (1, 0)))
    v = string_to_matrix(PauliString(chain, (0, 3)))
    a = exact_otoc(ResponsePair(w, v, spec, 0.3, 1.1))
    b = exact_otoc(ResponsePair(w, v, spec, 0.8, 1.6))
    checks.append(Check("otoc_time_translation", abs(a - b), 1e-9))
    return checks


def selftest(inject_fault: bool = False) -> dict:
    ctx = inject_transform_fault() if inject_fault else contextlib.nullcontext()
    with ctx:
        checks = run_checks()
    return {
        "passed": all(c.passed for c in checks),
        "fault_injected": inject_fault,
        "checks": [c.as_dict() for c in checks],
    }
