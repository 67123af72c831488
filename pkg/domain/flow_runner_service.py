"""
Orchestration of the run commands: flow, verify, sweep and oracle.
Library errors propagate; the commands translate them into rows, files and exit codes.
"""
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from domain import __version__
from domain.artifacts import flow_frame, plain, run_directory, write_json, write_table
from domain.errors import ConfigError, RGError
from domain.fock_space import OperatorMatrix
from domain.kernels import family_from_flow_state, polydisc_check
from domain.models import build_spin_boson, exact_diag_oracle, level_one_builder
from domain.rg_flow import SpectralTower, contraction_report
from domain.run_config import RunConfig
from domain.uniqueness import Verdict, certify_flow, degeneracy_probe
from domain.verification import run_suites
from utils.logger_config import get_logger, setup_logging

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_PROPERTY = 1
ORACLE_EIGENVALUES = 6
SWEEP_COLUMNS = [
    "axis", "value", "z0", "oracle_energy", "abs_diff", "verdict", "n_star",
    "fit_ratio", "decay_ratio", "converged", "error",
]


@dataclass(frozen=True, eq=False)
class FlowOutcome:
    config: RunConfig
    limit: object
    states: list
    hypothesis: object
    certificate: object
    oracle: object
    oracle_probe: tuple | None
    existence_probe: tuple
    contraction: list
    kernel_view: list

    @property
    def oracle_difference(self) -> float | None:
        if self.oracle is None:
            return None
        return abs(self.limit.z_physical - self.oracle.ground_energy)

    def property_failures(self) -> list:
        failures = []
        if self.existence_probe[0] < 1:
            failures.append("H_1(z_0) has no numerical kernel at verify.kernel_tol")
        if self.certificate.verdict is Verdict.CERTIFIED and self.oracle is not None and self.oracle.multiplicity != 1:
            failures.append(f"certified run but oracle ground multiplicity is {self.oracle.multiplicity}")
        return failures

    def summary(self) -> dict:
        limit = self.limit
        return {
            "z_physical": limit.z_physical,
            "tower": {str(n): z for n, z in limit.tower.items()},
            "converged": limit.converged,
            "evaluations": limit.evaluations,
            "sign_convention": limit.convention,
            "decay_ratio": limit.decay_ratio,
            "trace": [
                {
                    "depth": row.depth, "chain": row.chain, "diffs": row.diffs,
                    "evaluations": row.evaluations, "level_evaluations": row.level_evaluations,
                }
                for row in limit.trace
            ],
            "oracle": None if self.oracle is None else self.oracle.to_json(),
            "oracle_difference": self.oracle_difference,
            "oracle_probe": None if self.oracle_probe is None else {"kernel_dim": self.oracle_probe[0], "gap": self.oracle_probe[1]},
            "existence_probe": {"kernel_dim": self.existence_probe[0], "gap": self.existence_probe[1]},
            "hypothesis_a": {
                "delta0": self.hypothesis.delta0,
                "eps": self.hypothesis.eps_seq,
                "beta": self.hypothesis.beta_seq,
                "r": self.hypothesis.r_seq,
                "a_t": self.hypothesis.a_t_seq,
                "beta_sufficient": self.hypothesis.beta_sufficient,
                "scalar_check": self.hypothesis.scalar_check,
            },
            "contraction": self.contraction,
            "kernel_view": self.kernel_view,
            "verdict": self.certificate.verdict.value,
            "provenance": self.config.provenance("flow"),
        }


def compute_flow(config: RunConfig) -> FlowOutcome:
    """Initial reduction, tower limit, flow at z_0, certificate and oracle comparison."""
    params = config.params()
    try:
        params.check_flow_coupling()
    except ValueError as exc:
        raise ConfigError("model.g", str(exc)) from None
    basis = config.basis()
    basis.red_indices(allow_ties=config.fock.allow_boundary_ties)
    flow_cfg = config.flow_config()
    logger.info(
        "Flow run %s: g=%.4f rho=%.3f J=%d max_total=%d, basis dimension %d",
        config.run_id, params.g, flow_cfg.rho, basis.modes, basis.max_total, basis.dimension,
    )
    tower = SpectralTower(level_one_builder(params, basis), basis, config.pair(), flow_cfg)
    limit = tower.e_limit()
    states = tower.flow(limit.z_physical, flow_cfg.n_max + 1)
    hypothesis, certificate = certify_flow(states, flow_cfg.rho, basis, config.provenance("flow"))
    existence = degeneracy_probe(states[0].H, config.verify.kernel_tol)
    h = build_spin_boson(params, basis, config.fock.dimension_cap)
    oracle, oracle_probe = None, None
    if h.dim <= config.fock.dense_cap:
        oracle = exact_diag_oracle(h, ORACLE_EIGENVALUES, config.fock.dense_cap)
        shifted = OperatorMatrix(h.entries - oracle.ground_energy * np.eye(h.dim))
        oracle_probe = degeneracy_probe(shifted)
        logger.info("Tower limit z_0 = %.15e, oracle E_gs = %.15e, |diff| = %.3e",
                    limit.z_physical, oracle.ground_energy, abs(limit.z_physical - oracle.ground_energy))
    else:
        logger.warning("Oracle skipped: dimension %d exceeds dense cap %d", h.dim, config.fock.dense_cap)
    contraction = contraction_report(states)
    kernel_view = []
    for row, state in zip(contraction + [None], states):
        eps = row["eps"] if row else state.observables.slope_dev
        delta = row["delta"] if row else max(abs(state.observables.t0_plus_z), state.observables.w_norm)
        verdict = polydisc_check([(state.z, family_from_flow_state(state))], eps, delta)
        kernel_view.append({"level": state.level, "slope_sup": verdict.slope_sup, "offset_sup": verdict.offset_sup, "inside": verdict.inside})
    return FlowOutcome(config, limit, states, hypothesis, certificate, oracle, oracle_probe, existence, contraction, kernel_view)


class FlowRunner:
    """
    Runs the commands for one configuration and owns their outputs
    (run directory, optional ledger).
    """

    def __init__(self, config: RunConfig, repository=None):
        self.config = config
        self.repository = repository
        self.formats = set(config.output.formats)

    def _record(self, command: str, exit_code: int, z0=None, oracle_energy=None, verdict=None, config=None):
        if self.repository is None:
            return
        config = config or self.config
        self.repository.add_or_update({
            "run_id": config.run_id,
            "command": command,
            "config_hash": config.config_hash,
            "version": __version__,
            "g": config.model.g,
            "rho": config.model.rho,
            "modes": config.model.modes,
            "max_total": config.model.max_total,
            "z0": z0,
            "oracle_energy": oracle_energy,
            "verdict": verdict,
            "exit_code": exit_code,
        })

    def run_flow(self) -> int:
        try:
            outcome = compute_flow(self.config)
        except RGError as exc:
            self._record("flow", exc.exit_code)
            raise
        directory = run_directory(self.config.output.directory, self.config.run_id, "flow")
        digest = self.config.config_hash
        if "csv" in self.formats:
            write_table(os.path.join(directory, "flow.csv"), flow_frame(outcome.states), digest)
        if "json" in self.formats:
            write_json(os.path.join(directory, "summary.json"), outcome.summary(), digest)
            write_json(os.path.join(directory, "certificate.json"), outcome.certificate.to_json(), digest)
        failures = outcome.property_failures()
        for failure in failures:
            logger.error("Property failure: %s", failure)
        exit_code = EXIT_PROPERTY if failures else EXIT_OK
        self._record(
            "flow", exit_code, outcome.limit.z_physical,
            None if outcome.oracle is None else outcome.oracle.ground_energy,
            outcome.certificate.verdict.value,
        )
        return exit_code

    def run_verify(self, which: str = "all") -> int:
        reports = run_suites(self.config, which)
        directory = run_directory(self.config.output.directory, self.config.run_id, "verify")
        document = {"suites": [report.to_json() for report in reports], "provenance": self.config.provenance("verify")}
        write_json(os.path.join(directory, f"verify-{which}.json"), document, self.config.config_hash)
        failed = [report.name for report in reports if not report.ok]
        if failed:
            logger.error("Failed suites: %s", ", ".join(failed))
            return EXIT_PROPERTY
        return EXIT_OK

    def run_oracle(self, k: int = ORACLE_EIGENVALUES) -> int:
        basis = self.config.basis()
        h = build_spin_boson(self.config.params(), basis, self.config.fock.dimension_cap)
        oracle = exact_diag_oracle(h, k, self.config.fock.dense_cap)
        shifted = OperatorMatrix(h.entries - oracle.ground_energy * np.eye(h.dim))
        kernel_dim, gap = degeneracy_probe(shifted)
        document = dict(oracle.to_json(), probe={"kernel_dim": kernel_dim, "gap": gap}, provenance=self.config.provenance("oracle"))
        directory = run_directory(self.config.output.directory, self.config.run_id, "oracle")
        write_json(os.path.join(directory, "oracle.json"), document, self.config.config_hash)
        return EXIT_OK

    def run_sweep(self, axis: str, values: list) -> int:
        configs = [self.config.with_axis(axis, value) for value in values]
        jobs = [(config.to_dict(), axis, value) for config, value in zip(configs, values)]
        workers = min(self.config.output.workers, len(jobs))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as executor:
                rows = list(executor.map(sweep_row, jobs))
        else:
            rows = [sweep_row(job) for job in jobs]
        for config, row in zip(configs, rows):
            self._record("sweep", 0 if not row["error"] else 3, row["z0"], row["oracle_energy"], row["verdict"], config)
        frame = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
        directory = run_directory(self.config.output.directory, self.config.run_id, "sweep")
        write_table(os.path.join(directory, "sweep.csv"), frame, self.config.config_hash)
        logger.info("Sweep over %s finished: %d runs, %d failed", axis, len(rows), sum(bool(r["error"]) for r in rows))
        return EXIT_OK


def sweep_row(job: tuple) -> dict:
    """One independent sweep run; numerical failures become the row's error column."""
    document, axis, value = job
    config = RunConfig.from_dict(document)
    setup_logging(config.log_level)
    row = dict.fromkeys(SWEEP_COLUMNS, None)
    row.update(axis=axis, value=value, error="")
    try:
        outcome = compute_flow(config)
    except RGError as exc:
        logger.error("Sweep run %s=%s failed: %s", axis, value, exc)
        row["error"] = type(exc).__name__
        return row
    certificate = outcome.certificate
    row.update(
        z0=outcome.limit.z_physical,
        oracle_energy=None if outcome.oracle is None else outcome.oracle.ground_energy,
        abs_diff=outcome.oracle_difference,
        verdict=certificate.verdict.value,
        n_star=certificate.n_star,
        fit_ratio=certificate.fit_ratio,
        decay_ratio=outcome.limit.decay_ratio,
        converged=outcome.limit.converged,
    )
    return plain(row)


def cmd_flow(config: RunConfig, repository=None) -> int:
    return FlowRunner(config, repository).run_flow()


def cmd_verify(config: RunConfig, which: str = "all", repository=None) -> int:
    return FlowRunner(config, repository).run_verify(which)


def cmd_sweep(config: RunConfig, axis: str, values: list, repository=None) -> int:
    return FlowRunner(config, repository).run_sweep(axis, values)


def cmd_oracle(config: RunConfig, k: int = ORACLE_EIGENVALUES, repository=None) -> int:
    return FlowRunner(config, repository).run_oracle(k)
