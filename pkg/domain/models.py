"""
Spin-boson Hamiltonian on C^2 x truncated Fock space, its sharp Feshbach
reduction to H_red and the dense-diagonalization oracle.

Spin index 0 is spin down (sigma_z + 1 = 0), index 1 is spin up (= 2).
States are ordered spin-major: s * dim(F) + i.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.integrate
import scipy.linalg

from domain.errors import DimensionCapError
from domain.feshbach import sharp_feshbach
from domain.fock_space import (
    DEFAULT_DIMENSION_CAP,
    Domain,
    FockBasis,
    FrequencyLadder,
    OperatorMatrix,
    annihilation_op,
    creation_op,
    free_field,
)
from domain.rg_flow import FlowState, make_state
from utils.logger_config import get_logger

logger = get_logger(__name__)

DEFAULT_DENSE_CAP = 4096
DEFAULT_G_MAX = 0.2
CLUSTER_TOL = 1e-10
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
ATOMIC = np.diag([0.0, 2.0])


def _unit_ball(r, scale):
    return np.where(np.asarray(r) <= 1.0, 1.0, 0.0)


def _exponential(r, scale):
    return np.exp(-np.asarray(r) / scale)


FORM_FACTORS = {
    "unit_ball": _unit_ball,
    "exponential": _exponential,
}


@dataclass(frozen=True)
class SpinBosonParams:
    g: float
    ladder: FrequencyLadder
    max_total: int = 3
    max_per_mode: int = 2
    form_factor: str | Callable = "unit_ball"
    form_factor_scale: float = 1.0
    g_max: float = DEFAULT_G_MAX

    def __post_init__(self):
        if isinstance(self.form_factor, str) and self.form_factor not in FORM_FACTORS:
            raise ValueError(f"unknown form factor {self.form_factor!r}; expected one of {sorted(FORM_FACTORS)}")
        if self.form_factor_scale <= 0.0:
            raise ValueError("form factor scale must be positive")

    def check_flow_coupling(self) -> None:
        if abs(self.g) >= self.g_max:
            raise ValueError(f"|g| = {abs(self.g)} is not below g_max = {self.g_max} required for flow runs")

    def profile(self, r):
        if callable(self.form_factor):
            return self.form_factor(r)
        return FORM_FACTORS[self.form_factor](r, self.form_factor_scale)


def mode_coupling_weights(params: SpinBosonParams) -> np.ndarray:
    """g_j = (integral over shell j of |f(k)|^2 / |k| d^3k)^(1/2)."""
    inner, outer = params.ladder.shell_edges()
    if params.form_factor == "unit_ball":
        return np.sqrt(2.0 * np.pi * (np.minimum(outer, 1.0) ** 2 - np.minimum(inner, 1.0) ** 2))
    weights = np.empty(params.ladder.modes)
    for j, (lo, hi) in enumerate(zip(inner, outer)):
        value, _ = scipy.integrate.quad(lambda r: 4.0 * np.pi * r * float(params.profile(r)) ** 2, lo, hi)
        weights[j] = np.sqrt(max(value, 0.0))
    return weights


def field_operator(params: SpinBosonParams, basis: FockBasis) -> np.ndarray:
    """phi = sum_j g_j (a_j + a_j^dagger) on the truncated Fock space."""
    weights = mode_coupling_weights(params)
    phi = np.zeros((basis.dimension, basis.dimension))
    for j, weight in enumerate(weights):
        if weight:
            phi += weight * (creation_op(basis, j).entries + annihilation_op(basis, j).entries)
    return phi


def build_spin_boson(
    params: SpinBosonParams, basis: FockBasis, dimension_cap: int = DEFAULT_DIMENSION_CAP
) -> OperatorMatrix:
    """(sigma_z + 1) x 1 + 1 x H_f + g sigma_x x phi."""
    if basis.ladder != params.ladder:
        raise ValueError("basis was built on a different ladder")
    dimension = 2 * basis.dimension
    if dimension > dimension_cap:
        raise DimensionCapError(f"spin-boson dimension {dimension} exceeds cap {dimension_cap}")
    identity = np.eye(basis.dimension)
    h = np.kron(ATOMIC, identity) + np.kron(np.eye(2), free_field(basis).entries)
    if params.g:
        h = h + params.g * np.kron(SIGMA_X, field_operator(params, basis))
    logger.debug("Spin-boson H built: dimension %d, g=%.4f", dimension, params.g)
    return OperatorMatrix(h)


def reduction_projection(basis: FockBasis) -> OperatorMatrix:
    """P = P_down x 1_[0,1](H_f) on C^2 x F."""
    diagonal = np.zeros(2 * basis.dimension)
    diagonal[basis.red_indices()] = 1.0
    return OperatorMatrix(np.diag(diagonal))


def initial_reduction(h: OperatorMatrix, z: float, basis: FockBasis) -> FlowState:
    """
    H_1(z) = F_P(H - z) identified with an operator on H_red by dropping the
    spin factor. z is an eigenvalue of H iff 0 is an eigenvalue of H_1(z).
    """
    result = sharp_feshbach(h, reduction_projection(basis), z)
    red = basis.red_indices()
    reduced = OperatorMatrix(result.F.entries, Domain.H_RED, basis, red)
    return make_state(1, reduced, basis, z, result.hbar_condition)


def level_one_builder(params: SpinBosonParams, basis: FockBasis) -> Callable[[float], FlowState]:
    h = build_spin_boson(params, basis)

    def build(z: float) -> FlowState:
        return initial_reduction(h, z, basis)

    return build


@dataclass(frozen=True)
class OracleResult:
    eigenvalues: np.ndarray
    multiplicity: int
    gap: float

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])

    def to_json(self) -> dict:
        return {
            "eigenvalues": [float(e) for e in self.eigenvalues],
            "ground_energy": self.ground_energy,
            "multiplicity": self.multiplicity,
            "gap": self.gap,
        }


def exact_diag_oracle(h: OperatorMatrix, k: int = 6, dense_cap: int = DEFAULT_DENSE_CAP) -> OracleResult:
    """Lowest k eigenvalues, ground multiplicity (cluster 1e-10 ||H||) and gap above the ground cluster."""
    if h.dim > dense_cap:
        raise DimensionCapError(f"dense oracle dimension {h.dim} exceeds cap {dense_cap}")
    eigenvalues = scipy.linalg.eigvalsh(h.entries)
    scale = max(float(np.abs(eigenvalues).max()), 1.0)
    cluster = eigenvalues <= eigenvalues[0] + CLUSTER_TOL * scale
    multiplicity = int(np.count_nonzero(cluster))
    gap = float(eigenvalues[multiplicity] - eigenvalues[0]) if multiplicity < len(eigenvalues) else 0.0
    logger.info("Oracle: E_gs = %.15e, multiplicity %d, gap %.6e", eigenvalues[0], multiplicity, gap)
    return OracleResult(eigenvalues[: max(k, 1)], multiplicity, gap)
