"""
Matrix-level renormalization flow H_{n+1} = rho^-1 Gamma F_n Gamma^dagger on H_red.

Every level is built from the physical spectral parameter z through the
initial reduction, so the level-n parameter is a chart zeta_n(z). The tower
e_(n,m) = J_n^-1 o ... o J_m^-1 [0] is evaluated with 1-D root finding in z.
"""
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize
from scipy.interpolate import PchipInterpolator

from domain.errors import (
    BracketError,
    FlowTruncatedError,
    NonMonotoneMapError,
    OutOfPolydiscError,
    RGError,
)
from domain.feshbach import smooth_feshbach
from domain.fock_space import (
    CutoffPair,
    Dilation,
    Domain,
    FockBasis,
    OperatorMatrix,
    dilation,
    free_field,
    lowering_map,
)
from utils.logger_config import get_logger

logger = get_logger(__name__)

SLOPE_GRID = 513
MONOTONE_SAMPLES = 5
CACHE_SIZE = 64
CONVENTIONS = ("minus", "plus")


@dataclass(frozen=True)
class FlowConfig:
    rho: float = 0.5
    n_max: int = 6
    root_tol: float = 1e-12
    cauchy_tol: float = 1e-9
    z_interval: tuple = (-0.5, 0.5)
    leak_budget: float = 1.0
    sign_convention: str = "minus"
    tower_levels: tuple = (1,)
    max_expansions: int = 12

    def validate(self, basis: FockBasis) -> None:
        if abs(self.rho - basis.ladder.rho) > 1e-15:
            raise ValueError(f"flow rho={self.rho} differs from ladder rho={basis.ladder.rho}")
        if self.n_max > basis.modes - 2:
            raise ValueError(f"n_max={self.n_max} exceeds J - 2 = {basis.modes - 2}")
        if self.sign_convention not in CONVENTIONS:
            raise ValueError(f"unknown sign convention {self.sign_convention!r}")


@dataclass(frozen=True, eq=False)
class TProfile:
    """T as a function of H_f: values on the distinct H_f eigenvalues plus a monotone cubic interpolant."""
    energies: np.ndarray
    values: np.ndarray
    interp: PchipInterpolator
    derivative: PchipInterpolator

    @classmethod
    def from_levels(cls, energies: np.ndarray, values: np.ndarray) -> "TProfile":
        if len(energies) < 2:
            raise ValueError("T needs at least two distinct H_f eigenvalues")
        interp = PchipInterpolator(energies, values, extrapolate=True)
        return cls(energies, values, interp, interp.derivative())

    def __call__(self, r):
        return self.interp(r)

    def slope(self, r):
        return self.derivative(r)

    def slope_deviation(self) -> float:
        r = np.linspace(0.0, 1.0, SLOPE_GRID)
        return float(np.abs(self.derivative(r) - 1.0).max())


@dataclass(frozen=True)
class FlowObservables:
    w_norm: float
    t0_plus_z: float
    slope_dev: float
    leak: float
    hbar_condition: float


@dataclass(frozen=True, eq=False)
class FlowState:
    level: int
    H: OperatorMatrix
    T: TProfile
    t_values: np.ndarray
    W: OperatorMatrix
    z: float
    observables: FlowObservables

    def t_of(self, r):
        return self.T(r)

    def t_slope(self, r):
        return self.T.slope(r)

    def t_operator(self) -> OperatorMatrix:
        return OperatorMatrix(np.diag(self.t_values), Domain.H_RED, self.H.basis, self.H.indices)


def unsaturated_mask(basis: FockBasis, indices: np.ndarray) -> np.ndarray:
    """States that can still take one more boson in every mode without hitting a cap."""
    occupations = basis.states[indices]
    return (occupations.sum(axis=1) < basis.max_total) & (occupations.max(axis=1) < basis.max_per_mode)


def _level_profile(diagonal: np.ndarray, basis: FockBasis, levels: np.ndarray, nodes: np.ndarray) -> TProfile:
    node_levels, inverse = np.unique(levels[nodes], return_inverse=True)
    values = np.bincount(inverse, weights=diagonal[nodes]) / np.bincount(inverse)
    return TProfile.from_levels(basis.levels[node_levels], values)


def split_t_w(
    h: OperatorMatrix,
    basis: FockBasis,
    by_number: bool = False,
    fixed: np.ndarray | None = None,
) -> tuple[TProfile, np.ndarray, OperatorMatrix]:
    """
    Conditional-expectation split: T(E) is the normalized trace of H on the
    E-eigenspace of H_f, W = H - T keeps the traceless remainder.

    With by_number the profile is read off the unsaturated states only and
    every (H_f level, boson number) block keeps its own constant offset in T,
    so truncation shifts of capped sectors stay diagonal. Positions in fixed
    are left out of all averages and get zero W on the diagonal.
    Returns the profile, T on every state of the subspace, and W.
    """
    indices = h.indices if h.indices is not None else basis.red_indices()
    levels = basis.level_of_state[indices]
    diagonal = np.real(np.diag(h.entries))
    active = np.ones(len(indices), dtype=bool)
    if fixed is not None:
        active[fixed] = False
    nodes = active
    if by_number:
        nodes = active & unsaturated_mask(basis, indices)
        if len(np.unique(levels[nodes])) < 2:
            nodes = active
    profile = _level_profile(diagonal, basis, levels, nodes)
    base = profile(basis.hf_eigs[indices])
    blocks = levels
    if by_number:
        blocks = levels * (basis.max_total + 1) + basis.states[indices].sum(axis=1)
    keys, inverse = np.unique(blocks, return_inverse=True)
    sums = np.bincount(inverse[active], weights=(diagonal - base)[active], minlength=len(keys))
    counts = np.bincount(inverse[active], minlength=len(keys))
    offsets = np.divide(sums, counts, out=np.zeros(len(keys)), where=counts > 0)
    t_states = base + offsets[inverse]
    w_entries = h.entries - np.diag(t_states)
    if fixed is not None:
        w_entries[fixed, fixed] = 0.0
    return profile, t_states, OperatorMatrix(w_entries, Domain.H_RED, basis, indices)


def leak_norm(w: OperatorMatrix, basis: FockBasis) -> float:
    """Squared weight of W on H_red states that occupy the deepest mode."""
    deep = lowering_map(basis, 1)[w.indices] < 0
    return float(np.sum(np.abs(w.entries[:, deep]) ** 2))


def make_state(
    level: int,
    h: OperatorMatrix,
    basis: FockBasis,
    z: float,
    hbar_condition: float = 1.0,
    fixed: np.ndarray | None = None,
) -> FlowState:
    """Flow state with the number-resolved split; fixed diagonal entries are replaced by T."""
    profile, t_states, w = split_t_w(h, basis, by_number=True, fixed=fixed)
    if fixed is not None and len(fixed):
        h = OperatorMatrix(w.entries + np.diag(t_states), Domain.H_RED, basis, w.indices)
    observables = FlowObservables(
        w_norm=w.op_norm(),
        t0_plus_z=float(profile(0.0)) + z,
        slope_dev=profile.slope_deviation(),
        leak=leak_norm(w, basis),
        hbar_condition=hbar_condition,
    )
    return FlowState(level, h, profile, t_states, w, z, observables)


def convention_value(t0: float, rho: float, convention: str) -> float:
    """Level-(n+1) spectral parameter from T_n(0)."""
    return -t0 / rho if convention == "minus" else t0 / rho


def rg_step(state: FlowState, pair: CutoffPair, cfg: FlowConfig, dil: Dilation) -> FlowState:
    """
    One renormalization step. Rows and columns that the lowering map drops
    (deepest mode occupied) are zero off the diagonal; their diagonal is
    taken from T_{n+1} of the remaining states, so W_{n+1} vanishes there.
    """
    basis = state.H.basis
    if state.observables.leak > cfg.leak_budget:
        raise FlowTruncatedError(
            f"leak {state.observables.leak:.3e} at level {state.level} exceeds budget {cfg.leak_budget:.3e}"
        )
    result = smooth_feshbach(state.t_operator(), state.W, pair, cfg.rho, basis)
    f = result.F.entries
    indices = state.H.indices
    position = np.full(basis.dimension, -1)
    position[indices] = np.arange(len(indices))
    lowered = dil.lowering[indices]
    kept = np.flatnonzero(lowered >= 0)
    leaked = np.flatnonzero(lowered < 0)
    source = position[lowered[kept]]
    if np.any(source < 0):
        raise FlowTruncatedError("lowered states fall outside H_red")
    rescaled = np.zeros_like(f)
    rescaled[np.ix_(kept, kept)] = f[np.ix_(source, source)] / cfg.rho
    z_next = convention_value(float(state.T(0.0)), cfg.rho, cfg.sign_convention)
    h_next = OperatorMatrix(rescaled, Domain.H_RED, basis, indices)
    return make_state(state.level + 1, h_next, basis, z_next, result.hbar_condition, fixed=leaked)


def free_level_one(basis: FockBasis) -> Callable[[float], FlowState]:
    """Level-one builder of the free model: H_1(z) = H_f - z on H_red."""
    red = basis.red_indices()
    hf = free_field(basis).restricted(red, Domain.H_RED)

    def build(z: float) -> FlowState:
        h = OperatorMatrix(hf.entries - z * np.eye(len(red)), Domain.H_RED, basis, red)
        return make_state(1, h, basis, z)

    return build


@dataclass(frozen=True)
class JInverse:
    z: float
    value: float
    evaluations: int


@dataclass(frozen=True)
class TraceRow:
    depth: int
    chain: dict
    diffs: dict
    evaluations: int
    level_evaluations: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ELimitResult:
    z_physical: float
    tower: dict
    trace: list
    converged: bool
    evaluations: int
    convention: str
    decay_ratio: float | None = None
    states: list = field(default_factory=list)


class SpectralTower:
    """
    Per-run evaluator of the flow as a function of the physical spectral
    parameter. Flows are memoized by z rounded to root_tol / 10.
    """

    def __init__(self, level_one: Callable[[float], FlowState], basis: FockBasis, pair: CutoffPair, cfg: FlowConfig):
        cfg.validate(basis)
        self.level_one = level_one
        self.basis = basis
        self.pair = pair
        self.cfg = cfg
        self.dil = dilation(basis)
        self.evaluations = 0
        self._flows: OrderedDict = OrderedDict()
        self._inverses: dict = {}

    def _key(self, z: float) -> int:
        return int(round(z / (self.cfg.root_tol / 10.0)))

    def flow(self, z: float, depth: int) -> list:
        key = self._key(z)
        states = self._flows.pop(key, None)
        if states is None:
            states = [self.level_one(z)]
        while len(states) < depth:
            states.append(rg_step(states[-1], self.pair, self.cfg, self.dil))
        self._flows[key] = states
        while len(self._flows) > CACHE_SIZE:
            self._flows.popitem(last=False)
        return states[:depth]

    def state(self, level: int, z: float) -> FlowState:
        return self.flow(z, level)[level - 1]

    def e_map(self, level: int, z: float, check_domain: bool = True) -> float:
        """E-map of level n at physical parameter z, with the |T_n(0)| <= rho/2 domain check."""
        t0 = float(self.state(level, z).T(0.0))
        if check_domain and abs(t0) > self.cfg.rho / 2.0:
            raise OutOfPolydiscError(
                f"|T_{level}(0)| = {abs(t0):.3e} exceeds rho/2 = {self.cfg.rho / 2.0:.3e} at z={z:.6e}"
            )
        return convention_value(t0, self.cfg.rho, self.cfg.sign_convention)

    def chart(self, level: int, z: float) -> float:
        return z if level == 1 else self.e_map(level - 1, z, check_domain=False)

    def _safe(self, func, z: float):
        try:
            return func(z)
        except RGError as exc:
            logger.debug("Evaluation at z=%.6e failed: %s", z, exc)
            return None

    def _bracket(self, func, center: float, half: float) -> tuple[float, float]:
        lo_lim, hi_lim = self.cfg.z_interval
        f_center = self._safe(func, center)
        if f_center is None:
            raise BracketError(f"flow not evaluable at bracket center z={center:.6e}")
        if f_center == 0.0:
            return center, center
        for _ in range(self.cfg.max_expansions):
            for end in (center - half, center + half):
                end = min(max(end, lo_lim), hi_lim)
                f_end = self._safe(func, end)
                if f_end is not None and f_end * f_center <= 0.0:
                    logger.debug("Bracket [%.6e, %.6e] around %.6e", min(center, end), max(center, end), center)
                    return min(center, end), max(center, end)
            half *= 2.0
        raise BracketError(f"no sign change found around z={center:.6e} within {self.cfg.max_expansions} expansions")

    def _check_monotone(self, func, lo: float, hi: float, level: int) -> None:
        samples = np.linspace(lo, hi, MONOTONE_SAMPLES + 2)
        values = [self._safe(func, z) for z in samples]
        if any(value is None for value in values):
            failed = [float(z) for z, value in zip(samples, values) if value is None]
            raise NonMonotoneMapError(f"level-{level} map is not evaluable on [{lo:.6e}, {hi:.6e}] at z={failed}")
        values = np.array(values)
        steps = np.diff(values)
        if not (np.all(steps > 0.0) or np.all(steps < 0.0)):
            raise NonMonotoneMapError(
                f"level-{level} map is not monotone on [{lo:.6e}, {hi:.6e}]: samples {values.tolist()}"
            )

    def j_inverse(self, level: int, zeta: float, hint: float | None = None) -> JInverse:
        """
        Solves J_level(zeta_level) = zeta. The unknown is searched as a physical
        parameter z and returned in the level chart.
        """
        memo_key = (level, self._key(zeta))
        if memo_key in self._inverses:
            return self._inverses[memo_key]
        before = self.evaluations

        def residual(z):
            self.evaluations += 1
            return self.e_map(level, z, check_domain=False) - zeta

        center = sum(self.cfg.z_interval) / 2.0 if hint is None else hint
        half = self.cfg.rho ** level * self.cfg.rho / 4.0
        lo, hi = self._bracket(residual, center, half)
        if lo == hi:
            root = lo
        else:
            self._check_monotone(residual, lo, hi, level)
            root, info = scipy.optimize.brentq(
                residual, lo, hi, xtol=self.cfg.root_tol, rtol=4 * np.finfo(float).eps,
                maxiter=200, full_output=True,
            )
            if not info.converged:
                raise BracketError(f"root finding at level {level} did not converge: {info.flag}")
        self.e_map(level, root, check_domain=True)
        result = JInverse(z=float(root), value=float(self.chart(level, root)), evaluations=self.evaluations - before)
        logger.debug("J_%d^-1(%.6e) = %.12e (physical z=%.12e, %d evaluations)", level, zeta, result.value, root, result.evaluations)
        self._inverses[memo_key] = result
        return result

    def e_chain(self, depth: int, hint: float | None = None) -> tuple[dict, dict]:
        """{n: e_(n,depth)} for n = 1..depth, plus the E-map evaluations spent per level."""
        zeta, chain, spent = 0.0, {}, {}
        for level in range(depth, 0, -1):
            result = self.j_inverse(level, zeta, hint)
            zeta, hint = result.value, result.z
            chain[level] = zeta
            spent[level] = result.evaluations
        return dict(sorted(chain.items())), dict(sorted(spent.items()))

    def e_limit(self) -> ELimitResult:
        trace, previous, converged = [], None, False
        requested = tuple(self.cfg.tower_levels)
        for depth in range(1, self.cfg.n_max + 2):
            chain, spent = self.e_chain(depth, hint=None if previous is None else previous[1])
            diffs = {} if previous is None else {n: abs(chain[n] - previous[n]) for n in previous}
            trace.append(TraceRow(depth, chain, diffs, self.evaluations, spent))
            logger.info(
                "Tower depth %d: e_(1,%d) = %.15e, Cauchy diff %s",
                depth, depth, chain[1], "-" if not diffs else f"{diffs.get(1, float('nan')):.3e}",
            )
            if diffs and all(n in diffs and diffs[n] < self.cfg.cauchy_tol for n in requested):
                converged = True
                break
            previous = chain
        final = trace[-1].chain
        if not converged:
            logger.warning("Spectral tower did not meet the Cauchy tolerance %.1e within n_max=%d", self.cfg.cauchy_tol, self.cfg.n_max)
        z_physical = final[1]
        states = self.flow(z_physical, max(final))
        return ELimitResult(
            z_physical=z_physical,
            tower=final,
            trace=trace,
            converged=converged,
            evaluations=self.evaluations,
            convention=self.cfg.sign_convention,
            decay_ratio=cauchy_ratio(trace),
            states=states,
        )


def cauchy_ratio(trace: list, level: int = 1) -> float | None:
    """Fitted geometric ratio of successive Cauchy differences of e_(level, m)."""
    diffs = [row.diffs[level] for row in trace if level in row.diffs and row.diffs[level] > 0.0]
    if len(diffs) < 2:
        return None
    slope = np.polyfit(np.arange(len(diffs)), np.log(diffs), 1)[0]
    return float(np.exp(slope))


def e_limit(level_one, basis: FockBasis, pair: CutoffPair, cfg: FlowConfig) -> ELimitResult:
    """Convenience entry point: builds a tower for this run and evaluates its limit."""
    return SpectralTower(level_one, basis, pair, cfg).e_limit()


def contraction_report(states: list, slack: float = 0.25, tol: float = 1e-12) -> list:
    """
    Measured analog of D(eps, delta) -> D(eps + delta/2, delta/2) for every
    step: eps_n = slope deviation, delta_n = max(|T_n(0) + z_n|, ||W_n||).
    """
    rows = []
    for prev, nxt in zip(states, states[1:]):
        eps, delta = prev.observables.slope_dev, max(abs(prev.observables.t0_plus_z), prev.observables.w_norm)
        eps_next = nxt.observables.slope_dev
        delta_next = max(abs(nxt.observables.t0_plus_z), nxt.observables.w_norm)
        rows.append({
            "level": prev.level,
            "eps": eps,
            "delta": delta,
            "eps_next": eps_next,
            "delta_next": delta_next,
            "eps_holds": eps_next <= eps + delta / 2.0 + tol,
            "delta_holds": delta_next <= (delta / 2.0) * (1.0 + slack) + tol,
        })
    return rows
