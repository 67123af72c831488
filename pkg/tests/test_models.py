import numpy as np
import pytest

from domain.errors import DimensionCapError
from domain.flow_runner_service import compute_flow
from domain.fock_space import FrequencyLadder, OperatorMatrix, build_basis
from domain.models import (
    SpinBosonParams,
    build_spin_boson,
    exact_diag_oracle,
    initial_reduction,
    mode_coupling_weights,
)
from domain.run_config import RunConfig
from domain.uniqueness import Verdict, degeneracy_probe

TOL = 1e-12
RHO = 0.5
PROBE_TOL = 1e-8


def assert_allclose(arr1, arr2, atol=TOL):
    np.testing.assert_allclose(arr1, arr2, rtol=0., atol=atol)


@pytest.fixture
def ladder(flow_basis):
    return flow_basis.ladder


def model(g, ladder, basis):
    return build_spin_boson(SpinBosonParams(g, ladder), basis)


def reference_config(**model):
    settings = dict(g=0.05, rho=RHO, modes=8, max_total=3, max_per_mode=2)
    settings.update(model)
    n_max = min(6, settings["modes"] - 2)
    return RunConfig.from_dict({"model": settings, "flow": {"n_max": n_max}, "ledger": {"enabled": False}})


def test_unit_ball_weights(ladder):
    weights = mode_coupling_weights(SpinBosonParams(0.05, ladder))
    assert weights[0] == pytest.approx(np.sqrt(2.0 * np.pi * 0.75))
    assert weights[0] == pytest.approx(2.1708, abs=1e-4)
    assert_allclose(weights[:-1] / weights[1:], np.full(ladder.modes - 1, 1.0 / RHO))


def test_quadrature_matches_closed_form(ladder):
    closed = mode_coupling_weights(SpinBosonParams(0.05, ladder))
    numeric = mode_coupling_weights(SpinBosonParams(0.05, ladder, form_factor=lambda r: 1.0))
    assert_allclose(numeric, closed, atol=1e-10)


def test_vanishing_form_factor(ladder, flow_basis):
    params = SpinBosonParams(0.05, ladder, form_factor=lambda r: 0.0)
    assert not mode_coupling_weights(params).any()
    free = build_spin_boson(params, flow_basis).entries
    assert_allclose(free, model(0.0, ladder, flow_basis).entries)


def test_exponential_form_factor_is_weaker(ladder):
    unit = mode_coupling_weights(SpinBosonParams(0.05, ladder))
    damped = mode_coupling_weights(SpinBosonParams(0.05, ladder, form_factor="exponential"))
    assert np.all(damped < unit)
    assert np.all(damped > 0.0)


def test_params_validation(ladder):
    with pytest.raises(ValueError):
        SpinBosonParams(0.05, ladder, form_factor="gaussian")
    with pytest.raises(ValueError):
        SpinBosonParams(0.25, ladder).check_flow_coupling()
    SpinBosonParams(0.19, ladder).check_flow_coupling()


def test_decoupled_spectrum(ladder, flow_basis):
    h = model(0.0, ladder, flow_basis)
    expected = np.sort(np.concatenate([flow_basis.hf_eigs, flow_basis.hf_eigs + 2.0]))
    assert_allclose(np.linalg.eigvalsh(h.entries), expected)
    oracle = exact_diag_oracle(h)
    assert oracle.ground_energy == pytest.approx(0.0, abs=1e-14)
    assert oracle.multiplicity == 1
    assert oracle.gap == pytest.approx(min(2.0, ladder.frequencies[-1]))


def test_hamiltonian_is_symmetric_and_even_in_g(ladder, flow_basis):
    plus = model(0.05, ladder, flow_basis).entries
    minus = model(-0.05, ladder, flow_basis).entries
    assert np.abs(plus - plus.T).max() == 0.0
    assert_allclose(np.linalg.eigvalsh(plus), np.linalg.eigvalsh(minus), atol=1e-13)


def test_ground_energy_monotone_in_coupling(ladder, flow_basis):
    energies = [exact_diag_oracle(model(g, ladder, flow_basis)).ground_energy for g in (0.0, 0.01, 0.02, 0.05)]
    assert energies[-1] < 0.0
    assert all(a >= b for a, b in zip(energies, energies[1:]))


def test_dimension_caps(ladder, flow_basis):
    with pytest.raises(DimensionCapError):
        build_spin_boson(SpinBosonParams(0.05, ladder), flow_basis, dimension_cap=10)
    with pytest.raises(DimensionCapError):
        exact_diag_oracle(model(0.05, ladder, flow_basis), dense_cap=10)


def test_foreign_ladder_rejected(flow_basis):
    with pytest.raises(ValueError):
        build_spin_boson(SpinBosonParams(0.05, FrequencyLadder(0.4, flow_basis.modes)), flow_basis)


def test_initial_reduction_decoupled(ladder, flow_basis):
    red = flow_basis.red_indices()
    state = initial_reduction(model(0.0, ladder, flow_basis), 0.03, flow_basis)
    assert_allclose(state.H.entries, np.diag(flow_basis.hf_eigs[red] - 0.03))
    assert_allclose(state.W.entries, 0.0)
    assert state.level == 1
    assert state.z == 0.03


def test_initial_reduction_is_isospectral(ladder, flow_basis):
    h = model(0.05, ladder, flow_basis)
    oracle = exact_diag_oracle(h)
    at_ground = initial_reduction(h, oracle.ground_energy, flow_basis)
    kernel_dim, gap = degeneracy_probe(at_ground.H, PROBE_TOL)
    assert kernel_dim == oracle.multiplicity == 1
    assert gap > 1e-3
    below = initial_reduction(h, oracle.ground_energy - 0.1, flow_basis)
    assert degeneracy_probe(below.H, PROBE_TOL)[0] == 0


def test_oracle_probe_on_model(ladder, flow_basis):
    h = model(0.05, ladder, flow_basis)
    oracle = exact_diag_oracle(h, k=4)
    assert len(oracle.eigenvalues) == 4
    shifted = OperatorMatrix(h.entries - oracle.ground_energy * np.eye(h.dim))
    kernel_dim, gap = degeneracy_probe(shifted)
    assert kernel_dim == 1
    assert gap > 0.0
    document = oracle.to_json()
    assert document["multiplicity"] == 1
    assert document["ground_energy"] == oracle.ground_energy


def test_decoupled_flow_run():
    outcome = compute_flow(reference_config(g=0.0, modes=6))
    assert abs(outcome.limit.z_physical) <= 1e-12
    assert all(state.observables.w_norm <= TOL for state in outcome.states)
    assert outcome.certificate.verdict is Verdict.CERTIFIED
    assert outcome.property_failures() == []


@pytest.mark.slow
def test_reference_flow_matches_oracle_and_certifies():
    outcome = compute_flow(reference_config())
    assert outcome.limit.converged
    assert outcome.oracle_difference <= 1e-8
    assert outcome.hypothesis.delta0 >= 0.9
    certificate = outcome.certificate
    assert certificate.verdict is Verdict.CERTIFIED
    assert certificate.n_star is not None and certificate.n_star <= 8
    assert certificate.d_seq[certificate.n_star - 1] < (0.75 * RHO) ** 2
    assert outcome.oracle.multiplicity == 1
    assert outcome.existence_probe[0] == 1
    assert outcome.property_failures() == []


@pytest.mark.slow
def test_reference_flow_contracts_and_converges_geometrically():
    outcome = compute_flow(reference_config())
    norms = [state.observables.w_norm for state in outcome.states]
    # W_1 comes straight from the initial reduction; contraction starts at level 2
    for n in range(1, len(norms) - 1):
        if norms[n] > 1e-13:
            assert norms[n + 1] <= 0.75 * norms[n]
    assert outcome.certificate.fit_ratio <= 0.75
    for row in outcome.limit.trace:
        assert row.level_evaluations
        assert max(row.level_evaluations.values()) <= 60
    assert outcome.limit.decay_ratio is not None
    assert outcome.limit.decay_ratio <= RHO
    diffs = [row.diffs[1] for row in outcome.limit.trace if 1 in row.diffs]
    assert all(later <= earlier for earlier, later in zip(diffs, diffs[1:]))


@pytest.mark.slow
def test_truncation_study():
    z0 = [compute_flow(reference_config(modes=modes)).limit.z_physical for modes in (6, 8, 10)]
    assert abs(z0[2] - z0[1]) < abs(z0[1] - z0[0])


@pytest.mark.slow
def test_flow_energy_monotone_in_coupling():
    z0 = [compute_flow(reference_config(g=g, modes=6)).limit.z_physical for g in (0.0, 0.01, 0.02, 0.05)]
    assert all(a >= b - 1e-9 for a, b in zip(z0, z0[1:]))


def test_basis_for_reference_config():
    basis = reference_config().basis()
    assert basis.dimension == build_basis(FrequencyLadder(RHO, 8), 3, 2).dimension
    assert 2 * basis.dimension <= reference_config().fock.dense_cap
