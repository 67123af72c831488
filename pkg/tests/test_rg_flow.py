import numpy as np
import pytest

from domain.errors import FlowTruncatedError, NonMonotoneMapError, OutOfPolydiscError
from domain.feshbach import smooth_feshbach
from domain.fock_space import Domain, OperatorMatrix, dilation
from domain.rg_flow import (
    FlowConfig,
    SpectralTower,
    TProfile,
    contraction_report,
    e_limit,
    free_level_one,
    leak_norm,
    make_state,
    rg_step,
    split_t_w,
    unsaturated_mask,
)

TOL = 1e-12
RHO = 0.5


def assert_allclose(arr1, arr2, atol=TOL):
    np.testing.assert_allclose(arr1, arr2, rtol=0., atol=atol)


def red_operator(basis, matrix):
    red = basis.red_indices()
    return OperatorMatrix(matrix, Domain.H_RED, basis, red)


def interacting_state(basis, rng, z=0.02, strength=0.02):
    red = basis.red_indices()
    raw = rng.normal(size=(len(red), len(red)))
    w = raw + raw.T
    w *= strength / np.linalg.norm(w, 2)
    return make_state(1, red_operator(basis, np.diag(basis.hf_eigs[red] - z) + w), basis, z)


def free_tower(basis, pair, **overrides):
    cfg = FlowConfig(rho=RHO, n_max=basis.modes - 2, **overrides)
    return SpectralTower(free_level_one(basis), basis, pair, cfg)


def test_split_function_of_hf(flow_basis):
    red = flow_basis.red_indices()
    energies = flow_basis.hf_eigs[red]
    profile, t_states, w = split_t_w(red_operator(flow_basis, np.diag(np.sqrt(energies) - 0.1)), flow_basis)
    assert_allclose(t_states, np.sqrt(energies) - 0.1)
    assert_allclose(w.entries, 0.0)
    assert_allclose(profile(profile.energies), profile.values)


def test_split_traceless_offdiagonal(flow_basis, rng):
    red = flow_basis.red_indices()
    energies = flow_basis.hf_eigs[red]
    same_level = flow_basis.level_of_state[red][:, None] == flow_basis.level_of_state[red][None, :]
    raw = rng.normal(size=(len(red), len(red)))
    v = np.where(same_level, 0.0, raw + raw.T)
    _, t_states, w = split_t_w(red_operator(flow_basis, np.diag(energies) + v), flow_basis)
    assert_allclose(t_states, energies)
    assert_allclose(w.entries, v)


def test_split_degenerate_blocks_factor_two(flow_basis, rng):
    red = flow_basis.red_indices()
    levels = flow_basis.level_of_state[red]
    energies = flow_basis.hf_eigs[red]
    same_level = levels[:, None] == levels[None, :]
    assert np.bincount(levels).max() >= 2
    raw = rng.normal(size=(len(red), len(red)))
    block = np.where(same_level, raw + raw.T, 0.0)
    h = np.diag(energies) + 0.1 * block
    _, _, w = split_t_w(red_operator(flow_basis, h), flow_basis)
    for _ in range(20):
        competing = rng.normal(size=levels.max() + 1)
        exact = h - np.diag(energies + 0.1 * competing[levels])
        assert w.op_norm() <= 2.0 * np.linalg.norm(exact, 2) + TOL


def test_reconstruction_is_exact(flow_basis, rng):
    state = interacting_state(flow_basis, rng)
    rebuilt = np.diag(state.t_values) + state.W.entries
    assert np.abs(rebuilt - state.H.entries).max() <= 1e-13 * state.H.op_norm()


def test_profile_needs_two_levels():
    with pytest.raises(ValueError):
        TProfile.from_levels(np.array([0.0]), np.array([0.0]))


def test_number_split_keeps_sector_offsets_in_t(flow_basis):
    red = flow_basis.red_indices()
    energies = flow_basis.hf_eigs[red]
    saturated = ~unsaturated_mask(flow_basis, red)
    assert saturated.any() and not saturated.all()
    shifted = energies + 0.003 * saturated
    h = red_operator(flow_basis, np.diag(shifted))
    profile, t_states, w = split_t_w(h, flow_basis, by_number=True)
    assert_allclose(t_states, shifted)
    assert_allclose(w.entries, 0.0)
    assert_allclose(profile(energies[~saturated]), energies[~saturated])
    _, _, mixed = split_t_w(h, flow_basis)
    assert mixed.op_norm() >= 1e-3


def test_fixed_positions_leave_the_averages(flow_basis):
    red = flow_basis.red_indices()
    energies = flow_basis.hf_eigs[red]
    fixed = np.flatnonzero(dilation(flow_basis).lowering[red] < 0)
    diagonal = energies.copy()
    diagonal[fixed] = 5.0
    _, t_states, w = split_t_w(red_operator(flow_basis, np.diag(diagonal)), flow_basis, by_number=True, fixed=fixed)
    assert_allclose(t_states, energies)
    assert_allclose(w.entries, 0.0)


def test_leaked_rows_carry_no_interaction(flow_basis, pair, rng):
    state = interacting_state(flow_basis, rng)
    dil = dilation(flow_basis)
    nxt = rg_step(state, pair, FlowConfig(rho=RHO, n_max=4), dil)
    leaked = dil.lowering[nxt.W.indices] < 0
    assert leaked.any()
    assert not nxt.W.entries[leaked].any()
    assert not nxt.W.entries[:, leaked].any()
    assert_allclose(np.diag(nxt.H.entries)[leaked], nxt.t_values[leaked])
    assert nxt.observables.leak == 0.0


def test_free_fixed_point(flow_basis, pair):
    state = free_level_one(flow_basis)(0.0)
    cfg = FlowConfig(rho=RHO, n_max=4)
    dil = dilation(flow_basis)
    for _ in range(cfg.n_max):
        nxt = rg_step(state, pair, cfg, dil)
        assert_allclose(nxt.t_values, state.t_values)
        assert_allclose(nxt.W.entries, 0.0)
        assert nxt.z == 0.0
        assert nxt.observables.leak == 0.0
        state = nxt
    r = np.linspace(0.0, 1.0, 11)
    assert_allclose(state.t_of(r), r)


def test_step_matches_rescaled_feshbach_off_the_leak(flow_basis, pair, rng):
    state = interacting_state(flow_basis, rng)
    cfg = FlowConfig(rho=RHO, n_max=4)
    dil = dilation(flow_basis)
    nxt = rg_step(state, pair, cfg, dil)
    f = smooth_feshbach(state.t_operator(), state.W, pair, RHO, flow_basis).F.entries
    red = flow_basis.red_indices()
    embedded = np.zeros((flow_basis.dimension, flow_basis.dimension))
    embedded[np.ix_(red, red)] = f
    gamma = dil.gamma.entries
    rescaled = (gamma @ embedded @ gamma.T / RHO)[np.ix_(red, red)]
    kept = dil.lowering[red] >= 0
    rebuilt = np.diag(nxt.t_values) + nxt.W.entries
    residual = np.abs((rebuilt - rescaled)[np.ix_(kept, kept)]).max()
    assert residual <= TOL * nxt.H.op_norm()
    assert nxt.z == pytest.approx(-float(state.T(0.0)) / RHO)


def test_leak_norm_counts_deepest_mode_columns(flow_basis, rng):
    assert free_level_one(flow_basis)(0.0).observables.leak == 0.0
    state = interacting_state(flow_basis, rng)
    deep = dilation(flow_basis).lowering[state.W.indices] < 0
    assert state.observables.leak == pytest.approx(np.sum(state.W.entries[:, deep] ** 2))
    assert leak_norm(state.W, flow_basis) > 0.0


def test_leak_budget(flow_basis, pair, rng):
    state = interacting_state(flow_basis, rng)
    cfg = FlowConfig(rho=RHO, n_max=4, leak_budget=1e-12)
    with pytest.raises(FlowTruncatedError):
        rg_step(state, pair, cfg, dilation(flow_basis))


def test_flow_config_depth_guard(flow_basis):
    with pytest.raises(ValueError):
        FlowConfig(rho=RHO, n_max=flow_basis.modes - 1).validate(flow_basis)
    with pytest.raises(ValueError):
        FlowConfig(rho=0.4, n_max=2).validate(flow_basis)


def test_free_e_map_and_inverse(flow_basis, pair):
    tower = free_tower(flow_basis, pair)
    assert tower.e_map(1, 0.04) == pytest.approx(0.04 / RHO)
    result = tower.j_inverse(1, 0.1)
    assert result.value == pytest.approx(RHO * 0.1, abs=1e-11)
    assert tower.e_map(1, result.z) == pytest.approx(0.1, abs=10 * 1e-12 / RHO)
    deeper = tower.j_inverse(2, 0.1)
    assert deeper.value == pytest.approx(RHO * 0.1, abs=1e-11)
    assert deeper.z == pytest.approx(RHO ** 2 * 0.1, abs=1e-12)


def test_plus_convention(flow_basis, pair):
    tower = free_tower(flow_basis, pair, sign_convention="plus")
    assert tower.e_map(1, 0.04) == pytest.approx(-0.04 / RHO)
    assert tower.j_inverse(1, 0.1).value == pytest.approx(-RHO * 0.1, abs=1e-11)


def test_e_map_domain_violation(flow_basis, pair):
    tower = free_tower(flow_basis, pair)
    with pytest.raises(OutOfPolydiscError):
        tower.e_map(1, -0.3)


def test_free_tower_limit(flow_basis, pair):
    cfg = FlowConfig(rho=RHO, n_max=4, tower_levels=(1, 2))
    result = e_limit(free_level_one(flow_basis), flow_basis, pair, cfg)
    assert result.converged
    assert result.z_physical == 0.0
    assert all(value == 0.0 for value in result.tower.values())
    assert result.convention == "minus"
    for state in result.states:
        assert state.observables.w_norm <= TOL


def test_interacting_tower_composes_to_zero(flow_basis, pair, rng):
    red = flow_basis.red_indices()
    raw = rng.normal(size=(len(red), len(red)))
    w = raw + raw.T
    w *= 0.01 / np.linalg.norm(w, 2)
    hf = np.diag(flow_basis.hf_eigs[red])

    def level_one(z):
        return make_state(1, red_operator(flow_basis, hf - z * np.eye(len(red)) + w), flow_basis, z)

    cfg = FlowConfig(rho=RHO, n_max=4)
    tower = SpectralTower(level_one, flow_basis, pair, cfg)
    chain, spent = tower.e_chain(3)
    assert set(chain) == {1, 2, 3}
    assert set(spent) == {1, 2, 3}
    assert tower.e_map(3, chain[1]) == pytest.approx(0.0, abs=1e-9)
    for level in (1, 2):
        assert tower.chart(level + 1, chain[1]) == pytest.approx(chain[level + 1], abs=1e-9)


def test_contraction_report_rows(flow_basis, pair, rng):
    state = interacting_state(flow_basis, rng, z=0.0, strength=0.005)
    cfg = FlowConfig(rho=RHO, n_max=4)
    dil = dilation(flow_basis)
    states = [state]
    for _ in range(3):
        states.append(rg_step(states[-1], pair, cfg, dil))
    rows = contraction_report(states)
    assert [row["level"] for row in rows] == [1, 2, 3]
    assert all(np.isfinite(row["delta_next"]) for row in rows)


def test_monotonicity_check_reports_failed_samples(flow_basis, pair):
    tower = free_tower(flow_basis, pair)

    def residual(z):
        if z > 0.05:
            raise OutOfPolydiscError(f"z={z} outside")
        return z

    with pytest.raises(NonMonotoneMapError, match="not evaluable"):
        tower._check_monotone(residual, 0.0, 0.1, 1)
