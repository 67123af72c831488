"""
Randomized and deterministic property suites driven by the run configuration.
"""
from dataclasses import dataclass, field

import numpy as np

from domain.feshbach import kernel_correspondence, smooth_feshbach
from domain.fock_space import (
    CutoffPair,
    Domain,
    FrequencyLadder,
    OperatorMatrix,
    build_basis,
    cutoff_op,
    dilation,
    free_field,
)
from domain.kernels import assemble, family_norm, random_family
from domain.uniqueness import telescoping_check
from utils.logger_config import get_logger

logger = get_logger(__name__)

SUITES = ("feshbach", "telescoping", "norms", "dilation")
NORM_SLACK = 1e-12
SCALING_TOL = 1e-14
POWER_TOL = 1e-13


@dataclass
class SuiteReport:
    name: str
    passed: int = 0
    failed: int = 0
    worst_margin: float = float("inf")
    details: list = field(default_factory=list)

    def record(self, ok: bool, margin: float, detail: dict | None = None) -> None:
        if ok:
            self.passed += 1
        else:
            self.failed += 1
            if detail is not None:
                self.details.append(detail)
        self.worst_margin = min(self.worst_margin, margin)

    @property
    def ok(self) -> bool:
        return self.failed == 0

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "failed": self.failed,
            "worst_margin": self.worst_margin,
            "details": self.details,
        }


def feshbach_suite(instances: int, rng: np.random.Generator, svd_tol: float = 1e-10, rho: float = 0.5) -> SuiteReport:
    """
    Random H = T(H_f) + W on H_red of small bases; half of the instances are
    shifted onto an eigenvalue so that ker H is nontrivial.
    """
    report = SuiteReport("feshbach")
    pair = CutoffPair()
    for instance in range(instances):
        modes = int(rng.integers(3, 6))
        basis = build_basis(FrequencyLadder(rho, modes), 2, 2)
        red = basis.red_indices()
        energies = basis.hf_eigs[red]
        raw = rng.normal(size=(len(red), len(red)))
        w = raw + raw.T
        w *= rng.uniform(0.01, 0.1) / np.linalg.norm(w, 2)
        h = np.diag(energies) + w
        shift = float(np.linalg.eigvalsh(h)[0])
        if instance % 2:
            shift -= rng.uniform(0.005, 0.05)
        t = OperatorMatrix(np.diag(energies - shift), Domain.H_RED, basis, red)
        w_op = OperatorMatrix(w, Domain.H_RED, basis, red)
        full = OperatorMatrix(t.entries + w, Domain.H_RED, basis, red)
        f = smooth_feshbach(t, w_op, pair, rho, basis).F
        chi_rho, _ = cutoff_op(basis, pair, rho, red)
        kernels = kernel_correspondence(full, f, chi_rho, svd_tol)
        margin = kernels.injectivity_margin if kernels.dim_ker_h else 1.0
        report.record(
            kernels.consistent,
            margin,
            {"instance": instance, "dim_ker_h": kernels.dim_ker_h, "dim_ker_f": kernels.dim_ker_f},
        )
    logger.info("Feshbach suite: %d/%d kernel-dimension matches", report.passed, instances)
    return report


def telescoping_suite(rhos, max_n: int, points: int, a: float = 0.75) -> SuiteReport:
    report = SuiteReport("telescoping")
    for rho in rhos:
        for n in range(max_n + 1):
            result = telescoping_check(rho, a, n, grid=points)
            report.record(result.passed, result.min_margin, {"rho": rho, "n": n, "violations": result.violations})
    logger.info("Telescoping suite: %d/%d configurations without violations", report.passed, report.passed + report.failed)
    return report


def norms_suite(families: int, rng: np.random.Generator, rho: float = 0.5, modes: int = 5) -> SuiteReport:
    """||H(w)|| <= family_norm + sup|w00| for seeded random families (degree 2, mu = xi = 1/2)."""
    report = SuiteReport("norms")
    ladder = FrequencyLadder(rho, modes)
    basis = build_basis(ladder, 3, 2)
    for index in range(families):
        z = float(rng.uniform(-0.1, 0.1))
        family = random_family(rng, ladder, max_degree=2, mu=0.5, xi=0.5, scale=float(rng.uniform(0.01, 0.2)), z=z)
        dense = assemble(family, z, basis).op_norm()
        bound = family_norm(family) + float(np.abs(family.w00_val).max())
        report.record(dense <= bound * (1.0 + NORM_SLACK), bound - dense, {"family": index, "dense": dense, "bound": bound})
    logger.info("Norms suite: %d/%d families within the kernel bound", report.passed, families)
    return report


def dilation_suite(rho: float, modes: int, max_total: int = 3, max_per_mode: int = 2) -> SuiteReport:
    """Gamma H_f Gamma^dagger = rho H_f off the leak, and (Gamma chi_rho)^n = Gamma_{rho^n} chi_{rho^n}."""
    report = SuiteReport("dilation")
    basis = build_basis(FrequencyLadder(rho, modes), max_total, max_per_mode)
    pair = CutoffPair()
    hf = free_field(basis).entries
    scale = float(np.abs(hf).max())
    dil = dilation(basis)
    gamma = dil.gamma.entries
    keep = np.flatnonzero(dil.lowering >= 0)
    scaled = (gamma @ hf @ gamma.T - rho * hf)[np.ix_(keep, keep)]
    error = float(np.abs(scaled).max(initial=0.0))
    report.record(error <= SCALING_TOL * scale, SCALING_TOL * scale - error, {"check": "scaling", "error": error})
    step = gamma @ cutoff_op(basis, pair, rho)[0].entries
    power = np.eye(basis.dimension)
    for n in range(1, modes - 1):
        power = step @ power
        target = dilation(basis, rho ** n).gamma.entries @ cutoff_op(basis, pair, rho ** n)[0].entries
        error = float(np.abs(power - target).max())
        report.record(error <= POWER_TOL, POWER_TOL - error, {"check": "power", "n": n, "error": error})
    logger.info("Dilation suite: %d/%d checks passed", report.passed, report.passed + report.failed)
    return report


def run_suites(config, which: str = "all") -> list:
    names = SUITES if which == "all" else (which,)
    if any(name not in SUITES for name in names):
        raise ValueError(f"unknown suite {which!r}; expected one of {SUITES + ('all',)}")
    rng = np.random.default_rng(config.seed)
    reports = []
    for name in names:
        if name == "feshbach":
            reports.append(feshbach_suite(config.verify.feshbach_instances, rng, config.verify.svd_tol, config.model.rho))
        elif name == "telescoping":
            reports.append(telescoping_suite(config.verify.telescoping_rhos, config.verify.telescoping_max_n, config.verify.telescoping_points))
        elif name == "norms":
            reports.append(norms_suite(config.verify.norm_families, rng, config.model.rho))
        else:
            reports.append(dilation_suite(config.model.rho, config.model.modes, config.model.max_total, config.model.max_per_mode))
    return reports
