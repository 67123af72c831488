"""
Kernel-dimension certificate: hypothesis extraction from a flow, the
telescoping cutoff inequality, the d_n sequence and its verdict.

The certificate is conditional on measured constants of a truncated model.
"""
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg

from domain.fock_space import PLATEAU_EDGE, CutoffPair, FockBasis, OperatorMatrix
from utils.logger_config import get_logger

logger = get_logger(__name__)

TAIL_RATIO_LIMIT = 0.95
DECAY_FLOOR = 1e-13
GRID_FLOOR = 1e-8
SCALAR_TOL = 1e-13
PROBE_TOL = 1e-10


class Verdict(str, Enum):
    CERTIFIED = "CERTIFIED"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class TelescopingReport:
    rho: float
    a: float
    n: int
    terms: int
    points: int
    min_margin: float
    violations: int
    worst_x: float
    monotone_violations: int

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.monotone_violations == 0


@dataclass(frozen=True)
class HypothesisA:
    delta0: float
    eps_seq: list
    beta_seq: list
    r_seq: list
    a_t_seq: list
    beta_sufficient: bool
    scalar_check: bool

    @property
    def usable(self) -> bool:
        return self.delta0 > 0.0


@dataclass(frozen=True)
class UniquenessCertificate:
    delta0: float
    a_seq: list
    d_seq: list
    threshold: float
    n_star: int | None
    verdict: Verdict
    fit_ratio: float | None
    multiplicity_bound: int = 1
    reason: str = ""
    provenance: dict = field(default_factory=dict)
    step_ratios: list = field(default_factory=list)

    def to_json(self) -> dict:
        document = asdict(self)
        document["verdict"] = self.verdict.value
        document["d_seq"] = [None if not np.isfinite(d) else d for d in self.d_seq]
        document["step_ratios"] = [None if not np.isfinite(r) else r for r in self.step_ratios]
        return document


def telescoping_check(
    rho: float,
    a: float = PLATEAU_EDGE,
    n: int = 0,
    n_terms: int | None = None,
    grid: int = 100_000,
    pair: CutoffPair | None = None,
) -> TelescopingReport:
    """
    Scalar form of
        1_{0}(x) + sum_{j>=n} (1_{[a rho^(j+1), inf)}(x) chi_{rho^j}(x))^2 >= chi_{rho^n}(x)^2
    on {0} and a log-uniform grid of [1e-8, 1]. Terms with a rho^(j+1) below
    the grid floor never contribute, which fixes the truncation.
    """
    if not 0.0 < rho < a <= 1.0:
        raise ValueError(f"need 0 < rho < a <= 1, got rho={rho}, a={a}")
    pair = pair or CutoffPair()
    if n_terms is None:
        n_terms = int(np.ceil(np.log(GRID_FLOOR / a) / np.log(rho))) - n + 2
        n_terms = max(n_terms, 1)
    x = np.concatenate([[0.0], np.logspace(np.log10(GRID_FLOOR), 0.0, grid)])
    lhs = (x == 0.0).astype(float)
    rhs = pair.chi_t(x, rho ** n) ** 2
    monotone_violations = 0
    reference = pair.chi_t(x, rho ** n)
    for j in range(n, n + n_terms):
        chi_j = pair.chi_t(x, rho ** j)
        lhs = lhs + np.where(x >= a * rho ** (j + 1), chi_j, 0.0) ** 2
        monotone_violations += int(np.count_nonzero(chi_j > reference + SCALAR_TOL))
    margin = lhs - rhs
    worst = int(np.argmin(margin))
    violations = int(np.count_nonzero(margin < 0.0))
    report = TelescopingReport(
        rho=rho, a=a, n=n, terms=n_terms, points=len(x),
        min_margin=float(margin[worst]), violations=violations, worst_x=float(x[worst]),
        monotone_violations=monotone_violations,
    )
    logger.debug("Telescoping rho=%.3f n=%d: min margin %.3e at x=%.3e, %d violations", rho, n, report.min_margin, report.worst_x, violations)
    return report


def hypothesis_a(states: list) -> HypothesisA:
    """
    Per level: eps_n = sup|T_n' - 1|, beta_n = |T_n(0) + z_n| and
    r_n = max((1 - eps_n) E - |t|) over the diagonal of T_n, so that
    |t| >= (1 - eps_n) E - max(2 beta_n, r_n) holds exactly on every state.
    """
    eps_seq, beta_seq, r_seq, a_t_seq = [], [], [], []
    for state in states:
        eps = state.observables.slope_dev
        beta = abs(state.observables.t0_plus_z)
        energies, values = _diagonal_of_t(state)
        r = float(np.max((1.0 - eps) * energies - np.abs(values)))
        eps_seq.append(eps)
        beta_seq.append(beta)
        r_seq.append(r)
        a_t_seq.append(max(2.0 * beta, r))
    delta0 = 1.0 - max(eps_seq) if eps_seq else 1.0
    scalar_check = True
    for state, a_t in zip(states, a_t_seq):
        energies, values = _diagonal_of_t(state)
        scalar_check &= bool(np.all(np.abs(values) >= delta0 * energies - a_t - SCALAR_TOL))
    beta_sufficient = all(r <= 2.0 * beta for r, beta in zip(r_seq, beta_seq))
    if delta0 <= 0.0:
        logger.warning("Slope bound delta0 = %.3e is not positive; hypothesis (a) fails for this run", delta0)
    return HypothesisA(delta0, eps_seq, beta_seq, r_seq, a_t_seq, beta_sufficient, scalar_check)


def _diagonal_of_t(state) -> tuple[np.ndarray, np.ndarray]:
    return state.W.basis.hf_eigs[state.W.indices], np.asarray(state.t_values)



def geometric_ratio(values) -> float | None:
    """Least-squares ratio q of values ~ c q^k over the positive entries."""
    values = np.asarray(values, dtype=float)
    positive = values[values > 0.0]
    if len(positive) < 2:
        return None
    slope = np.polyfit(np.arange(len(positive)), np.log(positive), 1)[0]
    return float(np.exp(slope))


def decay_steps(values) -> list:
    """
    Successive ratios a_{k+1} / a_k. A step that ends at or below DECAY_FLOOR
    counts as 0 and a step that leaves the floor counts as inf.
    """
    ratios = []
    for prev, nxt in zip(values, values[1:]):
        if nxt <= DECAY_FLOOR:
            ratios.append(0.0)
        elif prev <= DECAY_FLOOR:
            ratios.append(float("inf"))
        else:
            ratios.append(float(nxt / prev))
    return ratios


def build_certificate(
    delta0: float,
    a_seq,
    rho: float,
    a: float = PLATEAU_EDGE,
    multiplicity_bound: int = 1,
    provenance: dict | None = None,
) -> UniquenessCertificate:
    """
    d_n = (2 / delta0)^2 sum_{j>=n} a_{j+1}^2 for n = 1..N, with a_seq[k] = a_{k+1}
    and the tail beyond a_N extrapolated from the ratio fitted to a_2..a_N.
    a_1 never enters d_n and is left out of the decay checks. Any single
    step a_{n+1} / a_n at or above TAIL_RATIO_LIMIT makes the run INCONCLUSIVE.
    """
    a_seq = [float(v) for v in a_seq]
    threshold = (a * rho) ** 2
    provenance = provenance or {}
    tail = np.asarray(a_seq[1:] or a_seq)
    steps = decay_steps(tail)

    def inconclusive(reason, d_seq, ratio):
        logger.info("Certificate INCONCLUSIVE: %s", reason)
        return UniquenessCertificate(
            delta0, a_seq, d_seq, threshold, None, Verdict.INCONCLUSIVE, ratio, multiplicity_bound, reason, provenance,
            step_ratios=steps,
        )

    above = tail[tail > DECAY_FLOOR]
    if not len(above):
        ratio = 0.0
    else:
        ratio = geometric_ratio(above)
        if ratio is None:
            ratio = 0.0 if tail[-1] <= DECAY_FLOOR else 1.0
    unknown = [float("inf")] * len(a_seq)
    if delta0 <= 0.0:
        return inconclusive(f"slope bound delta0 = {delta0:.3e} is not positive", unknown, ratio)
    if steps and max(steps) >= TAIL_RATIO_LIMIT:
        worst = int(np.argmax(steps))
        # steps[k] compares a_{k+2} with a_{k+3}
        return inconclusive(
            f"a_n is not decaying: step ratio {steps[worst]:.3f} >= {TAIL_RATIO_LIMIT} at n={worst + 2}", unknown, ratio
        )
    if ratio >= TAIL_RATIO_LIMIT:
        return inconclusive(f"tail fit unreliable (ratio {ratio:.3f} >= {TAIL_RATIO_LIMIT})", unknown, ratio)
    squares = np.asarray(a_seq) ** 2
    remainder = squares[-1] * ratio ** 2 / (1.0 - ratio ** 2) if len(squares) else 0.0
    # d_n needs a_{n+1}, ..., i.e. squares[n:] for n = 1..N
    suffix = np.concatenate([np.cumsum(squares[::-1])[::-1], [0.0]])
    prefactor = (2.0 / delta0) ** 2
    d_seq = [float(prefactor * (suffix[n] + remainder)) for n in range(1, len(a_seq) + 1)]
    n_star = next((n for n, d in enumerate(d_seq, start=1) if d < threshold), None)
    if n_star is None:
        return inconclusive(f"no d_n below (a rho)^2 = {threshold:.6f}", d_seq, ratio)
    logger.info("Certificate CERTIFIED at n*=%d: d=%.3e < %.6f", n_star, d_seq[n_star - 1], threshold)
    return UniquenessCertificate(
        delta0, a_seq, d_seq, threshold, n_star, Verdict.CERTIFIED, ratio, multiplicity_bound, "", provenance,
        step_ratios=steps,
    )



def ground_multiplicity(basis: FockBasis) -> int:
    """Dimension of ker H_f on H_red, the m of the kernel bound."""
    red = basis.red_indices()
    return int(np.count_nonzero(basis.hf_eigs[red] == 0.0))


def certify_flow(states: list, rho: float, basis: FockBasis, provenance: dict | None = None):
    """a_n = max(||W_n||, a_n^T) along the flow, then the certificate."""
    hypothesis = hypothesis_a(states)
    a_seq = [max(state.observables.w_norm, a_t) for state, a_t in zip(states, hypothesis.a_t_seq)]
    certificate = build_certificate(
        hypothesis.delta0, a_seq, rho, multiplicity_bound=ground_multiplicity(basis), provenance=provenance
    )
    return hypothesis, certificate


def degeneracy_probe(h: OperatorMatrix, tol: float = PROBE_TOL) -> tuple[int, float]:
    """Number of singular values below tol * ||H|| and the next singular value."""
    if h.dim == 0:
        return 0, 0.0
    singular = np.sort(np.abs(scipy.linalg.eigvalsh(h.entries)))
    threshold = tol * max(singular[-1], np.finfo(float).tiny)
    kernel_dim = int(np.count_nonzero(singular < threshold))
    gap = float(singular[kernel_dim]) if kernel_dim < len(singular) else 0.0
    return kernel_dim, gap
