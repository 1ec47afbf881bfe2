import numpy as np
import pytest

from opsize.algebra import (
    ChainSpec,
    DenseOperator,
    DimensionError,
    HermiticityError,
    PauliString,
    StateVector,
    local_operator,
    string_to_matrix,
)
from opsize.dynamics import (
    PRESETS,
    SpinChainParams,
    build_xyz,
    eigendecompose,
    evolve_from_eigenbasis,
    evolve_operator,
    evolve_state,
    evolve_states,
    preset,
    random_hamiltonian,
    spectral_cache,
)
from opsize.quench import expectation, sample_haar_state
from conftest import random_hermitian

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def _random_state(chain, rng):
    return StateVector(chain, sample_haar_state(chain.dim, rng))


def test_two_site_zz_spectrum():
    h = build_xyz(SpinChainParams(ChainSpec(2), jz=0.7))
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(h.matrix)), [-0.7, -0.7, 0.7, 0.7], atol=1e-14)
    np.testing.assert_allclose(h.matrix, 0.7 * np.kron(SZ, SZ))


def test_single_site_field_spectrum():
    h = build_xyz(SpinChainParams(ChainSpec(1), hz=0.4, jx=3.0))
    np.testing.assert_allclose(np.linalg.eigvalsh(h.matrix), [-0.4, 0.4], atol=1e-14)


def test_open_chain_terms():
    p = SpinChainParams(ChainSpec(3), jx=1.0, hy=0.5)
    h = build_xyz(p).matrix
    want = np.kron(np.kron(SX, SX), np.eye(2)) + np.kron(np.eye(2), np.kron(SX, SX))
    for n in range(3):
        want = want + 0.5 * local_operator(ChainSpec(3), n, SY).matrix
    np.testing.assert_allclose(h, want, atol=1e-14)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_xxz_conserves_total_sz(n):
    h = build_xyz(SpinChainParams(ChainSpec(n), jx=0.8, jy=0.8, jz=0.3, hz=0.7)).matrix
    sz = sum(local_operator(ChainSpec(n), k, SZ).matrix for k in range(n))
    assert np.max(np.abs(h @ sz - sz @ h)) < 1e-10


def test_params_validation():
    with pytest.raises(DimensionError):
        SpinChainParams(ChainSpec(2, 3), jz=1.0)
    with pytest.raises(ValueError):
        SpinChainParams(ChainSpec(2), jz=float("nan"))
    with pytest.raises(KeyError):
        preset("fig9", 4)


def test_presets_documented_values():
    assert PRESETS["fig2-chaotic"] == dict(jz=1.0, hx=1.05, hz=0.5)
    assert PRESETS["fig2-integrable"] == dict(jz=1.0, hx=1.0, hz=0.0)
    ising = SpinChainParams.ising(4)
    assert (ising.jz, ising.hx, ising.hz, ising.jx) == (1.0, 1.05, 0.5, 0.0)
    assert preset("fig2-chaotic", 4) == ising


def test_eigendecompose_examples():
    s = eigendecompose(DenseOperator(ChainSpec(1), SZ))
    np.testing.assert_allclose(s.eigenvalues, [-1, 1])
    zero = eigendecompose(DenseOperator(ChainSpec(2), np.zeros((4, 4))))
    np.testing.assert_allclose(zero.eigenvalues, 0)
    u = zero.eigenvectors
    np.testing.assert_allclose(u.conj().T @ u, np.eye(4), atol=1e-12)


def test_eigendecompose_random_reconstruction(rng):
    h = random_hermitian(ChainSpec(3), rng)
    s = eigendecompose(h)
    assert s.reconstruction_residual(h) < 1e-9 * np.max(np.abs(h.matrix))
    u = s.eigenvectors
    assert np.max(np.abs(u.conj().T @ u - np.eye(8))) < 1e-10


def test_eigendecompose_errors_and_cache(rng):
    m = rng.standard_normal((4, 4))
    with pytest.raises(HermiticityError):
        eigendecompose(DenseOperator(ChainSpec(2), m))
    spectral_cache.clear()
    h = random_hermitian(ChainSpec(2), rng)
    a = eigendecompose(h)
    b = eigendecompose(DenseOperator(ChainSpec(2), h.matrix.copy()))
    assert a is b and a.source_hash == b.source_hash


def test_random_hamiltonian_seeded():
    a = random_hamiltonian(ChainSpec(2), np.random.default_rng(5))
    b = random_hamiltonian(ChainSpec(2), np.random.default_rng(5))
    np.testing.assert_array_equal(a.matrix, b.matrix)
    assert a.hermitian
    assert np.trace(a.matrix @ a.matrix).real == pytest.approx(4)


def test_evolve_operator_trivial_cases(rng):
    chain = ChainSpec(3)
    s = eigendecompose(build_xyz(preset("fig2-chaotic", 3)))
    op = random_hermitian(chain, rng)
    np.testing.assert_allclose(evolve_operator(op, s, 0.0).matrix, op.matrix, atol=1e-12)
    hz = eigendecompose(DenseOperator(ChainSpec(1), 0.8 * SZ))
    z = DenseOperator(ChainSpec(1), SZ)
    for t in (0.3, 2.0, -5.0):
        np.testing.assert_allclose(evolve_operator(z, hz, t).matrix, SZ, atol=1e-12)


@pytest.mark.parametrize("h,t", [(0.8, 0.3), (0.8, 2.1), (-1.3, 0.7), (0.25, -4.0)])
def test_single_qubit_precession(h, t):
    s = eigendecompose(DenseOperator(ChainSpec(1), h * SZ))
    got = evolve_operator(DenseOperator(ChainSpec(1), SX), s, t).matrix
    want = np.cos(2 * h * t) * SX - np.sin(2 * h * t) * SY
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_evolve_state_trivial_cases():
    s = eigendecompose(DenseOperator(ChainSpec(1), 0.9 * SZ))
    psi = StateVector.basis(ChainSpec(1), 0)
    np.testing.assert_allclose(evolve_state(psi, s, 0.0).amplitudes, psi.amplitudes)
    out = evolve_state(psi, s, 1.7)
    assert abs(np.vdot(out.amplitudes, psi.amplitudes)) == pytest.approx(1.0, abs=1e-12)
    # e^{-iHt}|0> with H = h sigma_z picks up exp(-i h t)
    assert out.amplitudes[0] == pytest.approx(np.exp(-0.9j * 1.7))


@pytest.mark.parametrize("n", [3, 5, 6])
def test_heisenberg_schrodinger_duality(n, rng):
    chain = ChainSpec(n)
    s = eigendecompose(build_xyz(preset("fig5-xxz-chaotic", n)))
    op = random_hermitian(chain, rng)
    psi = _random_state(chain, rng)
    for t in (0.4, 1.9):
        a = expectation(evolve_operator(op, s, t), psi)
        b = expectation(op, evolve_state(psi, s, t))
        assert a == pytest.approx(b, abs=1e-9)


def test_unitarity_energy_and_batch(rng):
    chain = ChainSpec(4)
    h = build_xyz(preset("fig2-chaotic", 4))
    s = eigendecompose(h)
    psi = _random_state(chain, rng)
    e0 = expectation(h, psi)
    batch = np.array([_random_state(chain, rng).amplitudes for _ in range(3)])
    for t in (0.0, 0.5, 3.0, 11.0):
        out = evolve_state(psi, s, t)
        assert abs(np.linalg.norm(out.amplitudes) - 1) < 1e-10
        assert expectation(h, out) == pytest.approx(e0, abs=1e-9)
        rows = evolve_states(batch, s, t)
        for row, b in zip(rows, batch):
            np.testing.assert_allclose(row, evolve_state(StateVector(chain, b), s, t).amplitudes, atol=1e-12)


@pytest.mark.parametrize("n", [2, 4])
def test_spectrum_invariance(n, rng):
    chain = ChainSpec(n)
    s = eigendecompose(random_hamiltonian(chain, rng))
    op = random_hermitian(chain, rng)
    ev = np.linalg.eigvalsh(op.matrix)
    for t in (0.7, 5.0):
        np.testing.assert_allclose(np.linalg.eigvalsh(evolve_operator(op, s, t).matrix), ev, atol=1e-8)


def test_eigenbasis_shortcut_matches(rng):
    chain = ChainSpec(3)
    s = eigendecompose(build_xyz(preset("fig6-ising", 3)))
    x = string_to_matrix(PauliString.single(chain, 1, 1))
    op_eig = s.to_eigenbasis(x)
    for t in (0.2, 1.5):
        np.testing.assert_allclose(evolve_from_eigenbasis(op_eig, s, t).matrix,
                                   evolve_operator(x, s, t).matrix, atol=1e-12)


def test_chain_mismatch(rng):
    s = eigendecompose(build_xyz(preset("fig2-chaotic", 2)))
    with pytest.raises(DimensionError):
        evolve_operator(DenseOperator.identity(ChainSpec(3)), s, 1.0)
    with pytest.raises(DimensionError):
        evolve_state(StateVector.basis(ChainSpec(3)), s, 1.0)
