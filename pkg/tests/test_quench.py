import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opsize.algebra import (
    ChainSpec,
    DenseOperator,
    DimensionError,
    HermiticityError,
    PauliString,
    StateVector,
    partial_trace,
    string_to_matrix,
    swap_operator,
)
from opsize.decomposition import (
    RegionDistribution,
    SizeDistribution,
    decompose,
    operator_size_distribution,
    random_baseline,
    region_distribution,
)
from opsize.quench import (
    EnsembleSpec,
    PrepErrorModel,
    QuenchSamples,
    ShotPlan,
    clustered_variance_exact,
    exact_variance,
    exact_variance_doubled,
    expectation,
    mc_region_variance,
    mc_variance,
    pauli_six_design,
    perturbed_state,
    prep_error_local_states,
    product_expectation,
    recover_region_distribution,
    region_variance_exact,
    region_variances_all,
    sample_haar_state,
    sample_initial_state,
    sample_local_states,
    sample_states,
    shot_noise_expectation,
    summarize,
    verify_2design,
)
from opsize.selftest import random_traceless


def _pauli(label):
    return string_to_matrix(PauliString.from_label(label))


def _within(estimate, target, stderr, k=4.0):
    return abs(estimate - target) <= k * stderr


def _reduced(vec, keep, n):
    """Reduced density matrix of a pure state on the sites in ``keep``."""
    rho = np.outer(vec, vec.conj())
    op = DenseOperator(ChainSpec(n), rho)
    out = partial_trace(op, keep)
    return out.matrix


# ---- sampling -------------------------------------------------------------


def test_haar_state_dim_one_is_a_phase(rng):
    v = sample_haar_state(1, rng)
    assert v.shape == (1,) and abs(abs(v[0]) - 1) < 1e-15


def test_haar_state_moments():
    rng = np.random.default_rng(31)
    n = 100_000
    vs = np.array([sample_haar_state(2, rng) for _ in range(n)])
    proj = np.einsum("mi,mj->mij", vs, vs.conj()).reshape(n, 4)
    mean, err = proj.mean(0), proj.std(0) / math.sqrt(n)
    target = (np.eye(2) / 2).reshape(-1)
    assert np.all(np.abs(mean - target) <= 4 * np.maximum(np.abs(err), 1e-12))
    second = np.einsum("mi,mj,mk,ml->mikjl", vs, vs.conj(), vs, vs.conj()).reshape(n, 16)
    mean, err = second.mean(0), second.std(0) / math.sqrt(n)
    target = ((swap_operator(2) + np.eye(4)) / 6).reshape(-1)
    assert np.all(np.abs(mean - target) <= 4 * np.maximum(np.abs(err), 1e-12))


def test_single_state_finite_ensemble():
    e = EnsembleSpec.finite_product(ChainSpec(1), [(1.0, np.array([1, 0]))], 3)
    for i in range(20):
        np.testing.assert_array_equal(sample_initial_state(e, i).amplitudes, [1, 0])


def test_haar_product_states_are_product():
    e = EnsembleSpec.haar_product(ChainSpec(4), 11)
    psi = sample_initial_state(e, 7).amplitudes
    assert abs(np.linalg.norm(psi) - 1) < 1e-12
    for n in range(4):
        rho = _reduced(psi, [n], 4)
        assert np.trace(rho @ rho).real == pytest.approx(1.0, abs=1e-12)


def test_clustered_states_pure_per_block_and_entangled_inside():
    e = EnsembleSpec.clustered_haar(ChainSpec(4), [(0, 1), (2, 3)], 12)
    psi = sample_initial_state(e, 0).amplitudes
    rho = _reduced(psi, [0, 1], 4)
    assert np.trace(rho @ rho).real == pytest.approx(1.0, abs=1e-12)
    single = _reduced(psi, [0], 4)
    assert np.trace(single @ single).real < 1 - 1e-3


def test_ensemble_validation():
    chain = ChainSpec(4)
    with pytest.raises(ValueError):
        EnsembleSpec.clustered_haar(chain, [(0, 1), (3,)])
    with pytest.raises(ValueError):
        EnsembleSpec.clustered_haar(chain, [(0, 2), (1, 3)])
    with pytest.raises(ValueError):
        EnsembleSpec.finite_product(chain, [(0.5, np.array([1, 0])), (0.4, np.array([0, 1]))])
    with pytest.raises(ValueError):
        EnsembleSpec("gaussian", chain)
    assert EnsembleSpec.paired_blocks(ChainSpec(5)).blocks == ((0, 1), (2, 3), (4,))


def test_sampling_is_deterministic_and_subset_reproducible():
    e = EnsembleSpec.haar_product(ChainSpec(3), 2024)
    full = sample_states(e, 40)
    np.testing.assert_array_equal(full, sample_states(e, 40, threads=3))
    np.testing.assert_array_equal(full[17:23], sample_states(e, 6, start=17))
    np.testing.assert_array_equal(full[5], sample_initial_state(e, 5).amplitudes)
    other = sample_states(e.with_seed(2025), 40)
    assert not np.allclose(full, other)


def test_site_restricted_sampling_reuses_site_streams():
    e = EnsembleSpec.haar_product(ChainSpec(3), 9)
    locals_ = sample_local_states(e, 4)
    restricted = sample_states(e, 1, start=4, sites=0b101)[0]
    np.testing.assert_allclose(restricted, np.kron(locals_[0], locals_[2]))


# ---- expectations and variance --------------------------------------------


def test_expectation_examples():
    c = ChainSpec(1)
    zero = StateVector.basis(c, 0)
    plus = StateVector(c, np.array([1, 1]) / np.sqrt(2))
    assert expectation(_pauli("Z"), zero) == pytest.approx(1)
    assert expectation(_pauli("X"), zero) == pytest.approx(0)
    assert expectation(_pauli("X"), plus) == pytest.approx(1)
    phase = StateVector(c, np.array([1, 1j]) / np.sqrt(2))
    with pytest.raises(HermiticityError):
        expectation(DenseOperator(c, np.array([[0, 1], [0, 0]])), phase)
    with pytest.raises(DimensionError):
        expectation(_pauli("XX"), plus)


def test_single_site_variance_is_one_third():
    s = mc_variance(_pauli("XI"), EnsembleSpec.haar_product(ChainSpec(2), 5), 100_000, n_boot=200)
    assert _within(s.variance, 1 / 3, s.stderr_of_variance)
    assert _within(s.mean, 0.0, s.mean_stderr)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_central_identity_random_operators(seed):
    rng = np.random.default_rng(seed)
    chain = ChainSpec(3)
    op = random_traceless(chain, rng)
    exact = exact_variance(operator_size_distribution(op), 2)
    s = mc_variance(op, EnsembleSpec.haar_product(chain, seed), 10_000, n_boot=200)
    assert _within(s.variance, exact, s.stderr_of_variance)
    assert _within(s.mean, 0.0, s.mean_stderr)
    assert exact == pytest.approx(exact_variance_doubled(op), abs=1e-10)


def test_random_operator_variance_near_inverse_dimension():
    chain = ChainSpec(6)
    rng = np.random.default_rng(66)
    op = random_traceless(chain, rng)
    exact = exact_variance(operator_size_distribution(op), 2)
    s = mc_variance(op, EnsembleSpec.haar_product(chain, 66), 10_000, n_boot=200)
    assert _within(s.variance, exact, s.stderr_of_variance)
    # a single draw scatters by a few percent around 2^-N; the operator average does not
    assert abs(exact - 2.0**-6) < 0.15 * 2.0**-6
    avg = np.mean([exact_variance(operator_size_distribution(random_traceless(chain, rng)), 2)
                   for _ in range(20)])
    assert avg == pytest.approx(2.0**-6, rel=0.04)


def test_mc_variance_contract():
    e = EnsembleSpec.haar_product(ChainSpec(2), 0)
    with pytest.raises(ValueError):
        mc_variance(_pauli("XI"), e, 1)
    with pytest.raises(DimensionError):
        mc_variance(_pauli("XII"), e, 10)
    s = mc_variance(_pauli("XI"), e, 50, t=1.5, n_boot=100)
    assert s.sample_count == 50 and s.t == 1.5 and s.seed == 0
    assert s.variance >= 0 and math.isfinite(s.stderr_of_variance)
    lo, hi = s.band(0.99)
    assert lo <= s.variance <= hi
    assert set(s.summary()) == {"mean", "variance", "stderr", "M", "t", "seed"}


def test_summarize_is_deterministic():
    values = np.random.default_rng(0).standard_normal(64)
    a = summarize(values, seed=3, n_boot=250, tag=1)
    b = summarize(values, seed=3, n_boot=250, tag=1)
    np.testing.assert_array_equal(a.boot_variances, b.boot_variances)
    no_boot = QuenchSamples(a.values)
    assert no_boot.stderr_of_variance == pytest.approx(no_boot.moment_stderr)
    # moment-based and bootstrap errors agree roughly for Gaussian data
    assert a.stderr_of_variance == pytest.approx(a.moment_stderr, rel=0.3)


def test_exact_variance_examples():
    chain = ChainSpec(4)
    e1 = SizeDistribution(chain, [0, 1, 0, 0, 0])
    assert exact_variance(e1, 2) == pytest.approx(1 / 3)
    for n in (1, 4, 9):
        assert exact_variance(random_baseline(ChainSpec(n)), 2) == pytest.approx(2.0**-n, rel=1e-12)
    assert exact_variance(e1, 2, PrepErrorModel(1.0)) == 0.0
    assert exact_variance(e1, 2, PrepErrorModel(0.3)) == pytest.approx(0.49 / 3)
    assert exact_variance_doubled(_pauli("X")) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        exact_variance_doubled(DenseOperator.identity(ChainSpec(1)))


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 0.999), st.floats(0, 0.999), st.integers(0, 2**32 - 1))
def test_damping_is_monotone(e1, e2, seed):
    lo, hi = sorted((e1, e2))
    if hi - lo < 1e-9:
        return
    p = operator_size_distribution(random_traceless(ChainSpec(2), np.random.default_rng(seed)))
    assert exact_variance(p, 2, PrepErrorModel(lo)) > exact_variance(p, 2, PrepErrorModel(hi))


# ---- 2-designs ------------------------------------------------------------


def test_two_design_checker_examples():
    report = verify_2design(pauli_six_design(), 2)
    assert report.passed and max(report.first_residual, report.second_residual) < 1e-10
    basis = [(0.5, np.array([1, 0])), (0.5, np.array([0, 1]))]
    report = verify_2design(basis, 2)
    assert report.first_passed and not report.second_passed
    report = verify_2design([(1.0, np.array([1, 0]))], 2)
    assert not report.first_passed and not report.passed


def test_two_design_variance_matches_haar():
    chain = ChainSpec(4)
    op = random_traceless(chain, np.random.default_rng(44))
    six = mc_variance(op, EnsembleSpec.finite_product(chain, pauli_six_design(), 1), 10_000, n_boot=200)
    haar = mc_variance(op, EnsembleSpec.haar_product(chain, 2), 10_000, n_boot=200)
    combined = math.hypot(six.stderr_of_variance, haar.stderr_of_variance)
    assert _within(six.variance, haar.variance, combined)


# ---- preparation error ----------------------------------------------------


def test_perturbed_state_limits(rng):
    target = sample_haar_state(2, rng)
    np.testing.assert_array_equal(perturbed_state(target, PrepErrorModel(0.0), rng), target)
    v = perturbed_state(target, PrepErrorModel(1.0), rng)
    assert abs(np.linalg.norm(v) - 1) < 1e-12
    assert abs(np.linalg.norm(perturbed_state(target, PrepErrorModel(0.4), rng)) - 1) < 1e-12
    with pytest.raises(ValueError):
        PrepErrorModel(1.5)
    with pytest.raises(ValueError):
        PrepErrorModel(0.1, "squared")


def test_full_error_draws_are_haar():
    rng = np.random.default_rng(8)
    target = np.array([1, 0], dtype=complex)
    vs = np.array([perturbed_state(target, PrepErrorModel(1.0), rng) for _ in range(20_000)])
    rho = np.einsum("mi,mj->ij", vs, vs.conj()) / len(vs)
    assert np.max(np.abs(rho - np.eye(2) / 2)) < 4 * 0.5 / math.sqrt(len(vs)) * 2


@pytest.mark.parametrize("eps", [0.1, 0.3])
def test_norm_weighting_gives_depolarized_average(eps):
    rng = np.random.default_rng(21)
    target = np.array([1, 0], dtype=complex)
    err = PrepErrorModel(eps)
    vs = np.array([perturbed_state(target, err, rng) for _ in range(40_000)])
    rho = np.einsum("mi,mj->ij", vs, vs.conj()) / len(vs)
    want = (1 - eps) * np.diag([1, 0]) + eps * np.eye(2) / 2
    assert np.max(np.abs(rho - want)) < 0.01


def test_plain_renormalization_damps_more():
    rng = np.random.default_rng(22)
    target = np.array([1, 0], dtype=complex)
    vs = np.array([perturbed_state(target, PrepErrorModel(0.3, "plain"), rng) for _ in range(40_000)])
    bloch_z = np.mean(np.abs(vs[:, 0]) ** 2 - np.abs(vs[:, 1]) ** 2)
    assert bloch_z < 0.7 - 0.03


def test_prep_error_single_site_variance():
    eps = 0.1
    s = mc_variance(_pauli("X"), EnsembleSpec.haar_product(ChainSpec(1), 3), 10_000,
                    err=PrepErrorModel(eps), prep_draws=400, n_boot=200)
    assert _within(s.variance, (1 - eps) ** 2 / 3, s.stderr_of_variance)


def test_prep_error_zero_reproduces_pure_samples():
    e = EnsembleSpec.haar_product(ChainSpec(2), 17)
    rhos = prep_error_local_states(e, PrepErrorModel(0.0), 3, draws=5)
    psi = sample_initial_state(e, 3)
    op = random_traceless(ChainSpec(2), np.random.default_rng(0))
    assert product_expectation(op.matrix, rhos) == pytest.approx(expectation(op, psi), abs=1e-12)


def test_prep_error_deterministic_across_threads():
    chain = ChainSpec(2)
    e = EnsembleSpec.haar_product(chain, 99)
    err = PrepErrorModel(0.2)
    a = mc_variance(_pauli("XZ"), e, 40, err=err, prep_draws=50, n_boot=50)
    b = mc_variance(_pauli("XZ"), e, 40, err=err, prep_draws=50, n_boot=50, threads=3)
    np.testing.assert_array_equal(a.values, b.values)


def test_product_expectation_matches_dense(rng):
    chain = ChainSpec(3)
    op = random_traceless(chain, rng)
    rhos = []
    for _ in range(3):
        g = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        r = g @ g.conj().T
        rhos.append(r / np.trace(r))
    dense = np.kron(np.kron(rhos[0], rhos[1]), rhos[2])
    assert product_expectation(op.matrix, rhos) == pytest.approx(np.trace(op.matrix @ dense).real)


# ---- regions --------------------------------------------------------------


def test_region_variance_examples():
    r = region_distribution(decompose(_pauli("XX")))
    assert region_variance_exact(r, [0], 2) == 0.0
    assert region_variance_exact(r, [0, 1], 2) == pytest.approx(1 / 9)
    op = random_traceless(ChainSpec(3), np.random.default_rng(3))
    r = region_distribution(decompose(op))
    assert region_variance_exact(r, [0, 1, 2], 2) == pytest.approx(
        exact_variance(operator_size_distribution(op), 2), abs=1e-14)
    allv = region_variances_all(r, 2)
    for R in range(8):
        assert allv[R] == pytest.approx(region_variance_exact(r, R, 2), abs=1e-15)
    with pytest.raises(ValueError):
        region_variance_exact(r, [3], 2)


def test_mc_region_variance_examples():
    chain = ChainSpec(2)
    e = EnsembleSpec.haar_product(chain, 6)
    s = mc_region_variance(_pauli("XI"), [0], e, 100_000, n_boot=200)
    assert _within(s.variance, 1 / 3, s.stderr_of_variance)
    s = mc_region_variance(_pauli("XX"), [0], e, 1000, n_boot=50)
    assert np.max(np.abs(s.values)) < 1e-15 and s.variance == 0.0
    s = mc_region_variance(_pauli("XX"), [], e, 10, n_boot=10)
    assert s.variance == 0.0
    with pytest.raises(ValueError):
        mc_region_variance(_pauli("XX"), [0], EnsembleSpec.paired_blocks(chain), 10)


def test_mc_region_variance_random_operator():
    chain = ChainSpec(3)
    op = random_traceless(chain, np.random.default_rng(12))
    r = region_distribution(decompose(op))
    s = mc_region_variance(op, [0, 1], EnsembleSpec.haar_product(chain, 12), 10_000, n_boot=200)
    assert _within(s.variance, region_variance_exact(r, [0, 1], 2), s.stderr_of_variance)


def test_recovery_examples():
    r = region_distribution(decompose(_pauli("XI")))
    var = {Q: region_variance_exact(r, Q, 2) for Q in range(4)}
    assert recover_region_distribution({1: var[1]}, [0], 2) == pytest.approx(1.0)
    assert recover_region_distribution(var, [0, 1], 2) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(KeyError):
        recover_region_distribution({1: var[1]}, [0, 1], 2)


@pytest.mark.parametrize("d,n", [(2, 4), (3, 2)])
def test_recovery_roundtrip(d, n, rng):
    chain = ChainSpec(n, d)
    op = random_traceless(chain, rng)
    r = region_distribution(decompose(op))
    var = region_variances_all(r, d)
    table = dict(enumerate(var))
    for R in range(1 << n):
        assert recover_region_distribution(table, R, d) == pytest.approx(r.p[R], abs=1e-8)


# ---- clustered ensembles --------------------------------------------------


def test_clustered_variance_inside_one_block():
    chain = ChainSpec(4)
    rng = np.random.default_rng(40)
    local = random_traceless(ChainSpec(2), rng)
    op = DenseOperator(chain, np.kron(local.matrix, np.eye(4)))
    r = region_distribution(decompose(op))
    blocks = [(0, 1), (2, 3)]
    assert clustered_variance_exact(r, blocks, 2) == pytest.approx(1 / 5)
    s = mc_variance(op, EnsembleSpec.clustered_haar(chain, blocks, 41), 10_000, n_boot=200)
    assert _within(s.variance, 1 / 5, s.stderr_of_variance)


def test_clustered_variance_general_operator():
    chain = ChainSpec(4)
    op = random_traceless(chain, np.random.default_rng(42))
    r = region_distribution(decompose(op))
    e = EnsembleSpec.paired_blocks(chain, 43)
    s = mc_variance(op, e, 10_000, n_boot=200)
    assert _within(s.variance, clustered_variance_exact(r, e.blocks, 2), s.stderr_of_variance)
    # single-site blocks reduce to the product formula
    singles = [(n,) for n in range(4)]
    assert clustered_variance_exact(r, singles, 2) == pytest.approx(
        exact_variance(operator_size_distribution(op), 2), abs=1e-14)


def test_prep_error_rejects_clustered():
    chain = ChainSpec(2)
    with pytest.raises(ValueError):
        mc_variance(_pauli("XI"), EnsembleSpec.paired_blocks(chain), 10, err=PrepErrorModel(0.1))


# ---- shot noise -----------------------------------------------------------


def test_shot_noise_examples():
    c = ChainSpec(1)
    zero = StateVector.basis(c, 0)
    for k in (1, 7, 1000):
        est = shot_noise_expectation(_pauli("Z"), zero, ShotPlan(k, seed=k))
        assert est.mean == 1.0 and est.shots == k
        if k > 1:
            assert est.stderr == 0.0
    est = shot_noise_expectation(_pauli("X"), zero, ShotPlan(10_000, seed=4))
    assert abs(est.mean) <= 4 / 100
    assert est.stderr == pytest.approx(0.01, rel=0.01)
    assert math.isinf(shot_noise_expectation(_pauli("X"), zero, ShotPlan(1)).stderr)
    with pytest.raises(ValueError):
        ShotPlan(0)


def test_shot_noise_seeded_and_general_observable(rng):
    chain = ChainSpec(2)
    op = random_traceless(chain, rng)
    psi = StateVector(chain, sample_haar_state(4, rng))
    a = shot_noise_expectation(op, psi, ShotPlan(500, seed=1))
    b = shot_noise_expectation(op, psi, ShotPlan(500, seed=1))
    assert a == b
    big = shot_noise_expectation(op, psi, ShotPlan(200_000, seed=2))
    assert _within(big.mean, expectation(op, psi), big.stderr)


def test_shot_noise_stderr_scaling():
    c = ChainSpec(1)
    zero = StateVector.basis(c, 0)
    rng = np.random.default_rng(3)
    ks = np.array([100, 1000, 10_000])
    spread = [np.std([shot_noise_expectation(_pauli("X"), zero, ShotPlan(int(k)), rng).mean
                      for _ in range(100)], ddof=1) for k in ks]
    slope = np.polyfit(np.log(ks), np.log(spread), 1)[0]
    assert abs(slope + 0.5) <= 0.05


def test_region_distribution_value_type():
    r = RegionDistribution(ChainSpec(2), [0, 0.25, 0.25, 0.5])
    assert r[[0, 1]] == 0.5 and r[0b01] == 0.25
