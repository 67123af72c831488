"""
Truncated bosonic Fock space over a geometric frequency ladder.

Mode j carries frequency omega_j = omega0 * rho**j and stands for the momentum
shell (omega0 * rho**(j+1), omega0 * rho**j]. Because the ladder is geometric,
the dilation is an exact shift of mode indices.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse

from domain.errors import BoundaryTieError, DilationScaleError, DimensionCapError
from utils.logger_config import get_logger

logger = get_logger(__name__)

TIE_TOL = 1e-12
LEVEL_TOL = 1e-12
DEFAULT_DIMENSION_CAP = 20000
PLATEAU_EDGE = 0.75

# truncations whose boundary ties were already reported at WARNING
_reported_ties: set = set()


class Domain(Enum):
    FULL = "full"
    H_RED = "h_red"
    RAN_CHIBAR = "ran_chibar"


@dataclass(frozen=True)
class FrequencyLadder:
    rho: float
    modes: int
    omega0: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rho < PLATEAU_EDGE:
            raise ValueError(f"rho must lie in (0, 3/4), got {self.rho}")
        if self.modes < 1:
            raise ValueError(f"ladder needs at least one mode, got {self.modes}")
        if not 0.0 < self.omega0 <= 1.0:
            raise ValueError(f"omega0 must lie in (0, 1], got {self.omega0}")

    @property
    def frequencies(self) -> np.ndarray:
        return self.omega0 * self.rho ** np.arange(self.modes)

    def shell_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Inner and outer radius of every shell."""
        outer = self.frequencies
        return outer * self.rho, outer

    def node_radii(self) -> np.ndarray:
        """Geometric midpoint of every shell, where shell-averaged kernels are sampled."""
        return self.omega0 * self.rho ** (np.arange(self.modes) + 0.5)


@dataclass(frozen=True, eq=False)
class FockBasis:
    ladder: FrequencyLadder
    max_total: int
    max_per_mode: int
    states: np.ndarray
    hf_eigs: np.ndarray
    levels: np.ndarray
    level_of_state: np.ndarray
    _index: dict = field(repr=False)

    @property
    def dimension(self) -> int:
        return len(self.states)

    @property
    def modes(self) -> int:
        return self.ladder.modes

    def index_of(self, occupation) -> int:
        """Index of an occupation vector, or -1 when it lies outside the truncation."""
        return self._index.get(tuple(int(n) for n in occupation), -1)

    def red_indices(self, allow_ties: bool = True) -> np.ndarray:
        """Basis indices spanning H_red = 1_[0,1](H_f)."""
        return np.flatnonzero(spectral_mask(self, 0.0, 1.0, allow_ties=allow_ties))


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """
    Square matrix tagged with the subspace it acts on. `indices` lists the basis
    states spanning that subspace; `factor` is the dimension of a finite factor
    tensored in front of the Fock space (2 for the spin-boson model).
    """
    entries: np.ndarray
    domain: Domain = Domain.FULL
    basis: FockBasis | None = None
    indices: np.ndarray | None = None
    factor: int = 1

    def __post_init__(self):
        shape = np.shape(self.entries)
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ValueError(f"operator matrix must be square, got shape {shape}")
        if self.basis is not None:
            span = self.basis.dimension if self.indices is None else len(self.indices)
            if shape[0] != self.factor * span:
                raise ValueError(
                    f"{self.domain.value} operator of size {shape[0]} does not match "
                    f"subspace dimension {self.factor * span}"
                )

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def op_norm(self) -> float:
        if self.dim == 0:
            return 0.0
        return float(np.linalg.norm(self.entries, 2))

    def restricted(self, indices: np.ndarray, domain: Domain) -> "OperatorMatrix":
        """Compress a full-space operator to the span of the given basis states."""
        if self.domain is not Domain.FULL or self.factor != 1:
            raise ValueError("only full Fock-space operators can be restricted")
        sub = self.entries[np.ix_(indices, indices)]
        return OperatorMatrix(sub, domain, self.basis, np.asarray(indices))


@dataclass(frozen=True)
class CutoffPair:
    """
    Smooth partition (chi, chibar) with chi = 1 on [0, a], chi = 0 on [1, inf)
    and chi**2 + chibar**2 = 1 by construction (cos/sin of one phase).
    """
    a: float = PLATEAU_EDGE

    def _phase(self, x: np.ndarray) -> np.ndarray:
        t = (x - self.a) / (1.0 - self.a)
        return 0.5 * np.pi * smooth_step(t)

    def chi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inner = np.cos(self._phase(x))
        return np.where(x <= self.a, 1.0, np.where(x >= 1.0, 0.0, inner))

    def chibar(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inner = np.sin(self._phase(x))
        return np.where(x <= self.a, 0.0, np.where(x >= 1.0, 1.0, inner))

    def chi_t(self, x, t: float) -> np.ndarray:
        return self.chi(np.asarray(x, dtype=float) / t)

    def chibar_t(self, x, t: float) -> np.ndarray:
        return self.chibar(np.asarray(x, dtype=float) / t)


@dataclass(frozen=True, eq=False)
class Dilation:
    """Gamma_{rho^steps} on a basis; gamma raises energies, gamma.T lowers them."""
    gamma: OperatorMatrix
    leak_projector: OperatorMatrix
    lowering: np.ndarray
    steps: int


def smooth_step(t) -> np.ndarray:
    """C-infinity step s(t) = sigma(t) / (sigma(t) + sigma(1 - t)), sigma(t) = exp(-1/t)."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        left = np.where(t > 0.0, np.exp(-1.0 / np.where(t > 0.0, t, 1.0)), 0.0)
        right = np.where(t < 1.0, np.exp(-1.0 / np.where(t < 1.0, 1.0 - t, 1.0)), 0.0)
    return left / (left + right)


def _occupations(modes: int, max_total: int, max_per_mode: int):
    if modes == 0:
        yield ()
        return
    for n in range(min(max_total, max_per_mode) + 1):
        for rest in _occupations(modes - 1, max_total - n, max_per_mode):
            yield (n,) + rest


def _cluster_levels(energies: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(energies, kind="stable")
    levels = []
    level_of_state = np.empty(len(energies), dtype=int)
    for idx in order:
        if not levels or energies[idx] - levels[-1] > LEVEL_TOL:
            levels.append(float(energies[idx]))
        level_of_state[idx] = len(levels) - 1
    return np.array(levels), level_of_state


def build_basis(
    ladder: FrequencyLadder,
    max_total: int,
    max_per_mode: int,
    dimension_cap: int = DEFAULT_DIMENSION_CAP,
) -> FockBasis:
    """
    Enumerates occupation vectors with total <= max_total and per-mode
    occupancy <= max_per_mode in graded lexicographic order (vacuum first).
    """
    if max_total < 1 or max_per_mode < 1:
        raise ValueError("max_total and max_per_mode must be at least 1")
    states = []
    for occupation in _occupations(ladder.modes, max_total, max_per_mode):
        states.append(occupation)
        if len(states) > dimension_cap:
            raise DimensionCapError(
                f"Fock basis exceeds the dimension cap of {dimension_cap} "
                f"(J={ladder.modes}, max_total={max_total}, max_per_mode={max_per_mode})"
            )
    states.sort(key=lambda s: (sum(s), tuple(-n for n in s)))
    occupations = np.array(states, dtype=int).reshape(len(states), ladder.modes)
    hf_eigs = occupations @ ladder.frequencies
    levels, level_of_state = _cluster_levels(hf_eigs)
    logger.debug("Built Fock basis of dimension %d over %d modes", len(states), ladder.modes)
    return FockBasis(
        ladder=ladder,
        max_total=max_total,
        max_per_mode=max_per_mode,
        states=occupations,
        hf_eigs=hf_eigs,
        levels=levels,
        level_of_state=level_of_state,
        _index={s: i for i, s in enumerate(states)},
    )


def creation_op(basis: FockBasis, j: int) -> OperatorMatrix:
    """a_j^dagger with transitions beyond the truncation caps dropped."""
    if not 0 <= j < basis.modes:
        raise IndexError(f"mode index {j} outside ladder of {basis.modes} modes")
    rows, cols, data = [], [], []
    for col, occupation in enumerate(basis.states):
        raised = occupation.copy()
        raised[j] += 1
        row = basis.index_of(raised)
        if row >= 0:
            rows.append(row)
            cols.append(col)
            data.append(np.sqrt(occupation[j] + 1.0))
    matrix = scipy.sparse.coo_matrix(
        (data, (rows, cols)), shape=(basis.dimension, basis.dimension), dtype=np.float64
    )
    return OperatorMatrix(matrix.toarray(), Domain.FULL, basis)


def annihilation_op(basis: FockBasis, j: int) -> OperatorMatrix:
    return OperatorMatrix(creation_op(basis, j).entries.T.copy(), Domain.FULL, basis)


def free_field(basis: FockBasis) -> OperatorMatrix:
    return OperatorMatrix(np.diag(basis.hf_eigs), Domain.FULL, basis)


def boundary_ties(basis: FockBasis, lo: float, hi: float, tol: float = TIE_TOL) -> np.ndarray:
    """Indices of states whose free energy is within tol of either boundary."""
    e = basis.hf_eigs
    return np.flatnonzero((np.abs(e - lo) <= tol) | (np.abs(e - hi) <= tol))


def spectral_mask(
    basis: FockBasis, lo: float, hi: float, allow_ties: bool = True, tol: float = TIE_TOL
) -> np.ndarray:
    if lo > hi:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    ties = boundary_ties(basis, lo, hi, tol)
    # the vacuum sits exactly on lo = 0 by definition and is not a tie
    ties = ties[basis.hf_eigs[ties] != 0.0] if lo == 0.0 else ties
    if len(ties):
        if not allow_ties:
            raise BoundaryTieError(
                f"{len(ties)} states lie within {tol:g} of the boundary of [{lo}, {hi}]"
            )
        key = (basis.ladder, basis.max_total, basis.max_per_mode, lo, hi)
        if key in _reported_ties:
            logger.debug("%d boundary ties on [%g, %g] resolved inclusively", len(ties), lo, hi)
        else:
            _reported_ties.add(key)
            logger.warning("%d boundary ties on [%g, %g] resolved inclusively", len(ties), lo, hi)
    e = basis.hf_eigs
    return (e >= lo - tol) & (e <= hi + tol)


def spectral_projection(
    basis: FockBasis, lo: float, hi: float, allow_ties: bool = True
) -> OperatorMatrix:
    mask = spectral_mask(basis, lo, hi, allow_ties=allow_ties)
    return OperatorMatrix(np.diag(mask.astype(float)), Domain.FULL, basis)


def cutoff_op(
    basis: FockBasis, pair: CutoffPair, t: float, indices: np.ndarray | None = None
) -> tuple[OperatorMatrix, OperatorMatrix]:
    """chi_t(H_f) and chibar_t(H_f), on the full space or on the span of `indices`."""
    if t <= 0.0:
        raise ValueError(f"cutoff scale must be positive, got {t}")
    energies = basis.hf_eigs if indices is None else basis.hf_eigs[indices]
    domain = Domain.FULL if indices is None else Domain.H_RED
    return (
        OperatorMatrix(np.diag(pair.chi_t(energies, t)), domain, basis, indices),
        OperatorMatrix(np.diag(pair.chibar_t(energies, t)), domain, basis, indices),
    )


def lowering_map(basis: FockBasis, steps: int = 1) -> np.ndarray:
    """
    For every state, the index of the state with each boson moved `steps`
    modes deeper, or -1 when a boson would fall off the ladder.
    """
    target = np.full(basis.dimension, -1, dtype=int)
    for idx, occupation in enumerate(basis.states):
        if steps < basis.modes and occupation[basis.modes - steps:].any():
            continue
        if steps >= basis.modes and occupation.any():
            continue
        shifted = np.zeros_like(occupation)
        shifted[steps:] = occupation[: basis.modes - steps]
        target[idx] = basis.index_of(shifted)
    return target


def dilation(basis: FockBasis, scale: float | None = None) -> Dilation:
    """
    Gamma_scale for scale = rho**k. Gamma moves every boson k modes up the
    ladder (energies times rho**-k); its adjoint moves them down and
    annihilates states occupying the k deepest modes (the leak).
    """
    rho = basis.ladder.rho
    scale = rho if scale is None else scale
    steps = int(round(np.log(scale) / np.log(rho)))
    if steps < 1 or abs(rho ** steps - scale) > 1e-12 * scale:
        raise DilationScaleError(f"scale {scale} is not a positive integer power of rho={rho}")
    target = lowering_map(basis, steps)
    lowered = np.zeros((basis.dimension, basis.dimension))
    kept = np.flatnonzero(target >= 0)
    lowered[target[kept], kept] = 1.0
    leak = np.diag((target < 0).astype(float))
    return Dilation(
        gamma=OperatorMatrix(lowered.T.copy(), Domain.FULL, basis),
        leak_projector=OperatorMatrix(leak, Domain.FULL, basis),
        lowering=target,
        steps=steps,
    )
