"""
Sharp and smooth Feshbach-Schur maps on finite matrices.

Complement blocks are factorized once (LU) and every Schur correction is
obtained from linear solves with one step of iterative refinement; no
explicit inverse is formed.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from domain.errors import NotInvertibleError
from domain.fock_space import CutoffPair, Domain, FockBasis, OperatorMatrix
from utils.logger_config import get_logger

logger = get_logger(__name__)

MAX_CONDITION = 1e12
RESIDUAL_FACTOR = 1e-10
KERNEL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FeshbachResult:
    F: OperatorMatrix
    hbar_condition: float
    solve_residual: float
    reliable: bool


@dataclass(frozen=True, eq=False)
class KernelReport:
    dim_ker_h: int
    dim_ker_f: int
    injectivity_margin: float | None
    principal_angles: np.ndarray
    tolerance_band: tuple
    threshold_h: float
    threshold_f: float

    @property
    def consistent(self) -> bool:
        if self.dim_ker_h != self.dim_ker_f:
            return False
        return self.dim_ker_h == 0 or (self.injectivity_margin or 0.0) > 0.0


def _solve_refined(matrix: np.ndarray, rhs: np.ndarray, what: str, max_condition: float):
    condition = float(np.linalg.cond(matrix)) if matrix.size else 1.0
    if not np.isfinite(condition) or condition > max_condition:
        raise NotInvertibleError(
            f"{what} is numerically singular (condition {condition:.3e}); "
            "the spectral parameter sits on a resonance of the complement sector",
            condition=condition,
        )
    factors = scipy.linalg.lu_factor(matrix)
    solution = scipy.linalg.lu_solve(factors, rhs)
    solution = solution + scipy.linalg.lu_solve(factors, rhs - matrix @ solution)
    residual = float(np.abs(rhs - matrix @ solution).max(initial=0.0))
    return solution, condition, residual


def smooth_feshbach(
    t_of_hf: OperatorMatrix,
    w: OperatorMatrix,
    pair: CutoffPair,
    rho: float,
    basis: FockBasis,
    max_condition: float = MAX_CONDITION,
) -> FeshbachResult:
    """
    F = T + chi W chi - chi W chibar Hbar^-1 chibar W chi with
    Hbar = T + chibar W chibar restricted to Ran chibar_rho(H_f) on H_red.
    """
    t_matrix = t_of_hf.entries
    t = np.diag(t_matrix)
    if np.abs(t_matrix - np.diag(t)).max(initial=0.0) > 0.0:
        raise ValueError("T must be diagonal in the occupation basis (a function of H_f)")
    indices = w.indices if w.indices is not None else basis.red_indices()
    energies = basis.hf_eigs[indices]
    chi = pair.chi_t(energies, rho)
    chibar = pair.chibar_t(energies, rho)
    wm = w.entries
    f_matrix = np.diag(t).astype(np.result_type(t, wm)) + chi[:, None] * wm * chi[None, :]
    complement = np.flatnonzero(chibar > 0.0)
    condition, residual = 1.0, 0.0
    if len(complement):
        cb = chibar[complement]
        hbar = np.diag(t[complement]) + cb[:, None] * wm[np.ix_(complement, complement)] * cb[None, :]
        rhs = cb[:, None] * wm[complement, :] * chi[None, :]
        solution, condition, residual = _solve_refined(hbar, rhs, "Hbar", max_condition)
        f_matrix = f_matrix - (chi[:, None] * wm[:, complement] * cb[None, :]) @ solution
    w_norm = w.op_norm()
    reliable = residual <= RESIDUAL_FACTOR * w_norm
    if not reliable:
        logger.warning("Feshbach solve residual %.3e exceeds 1e-10 * ||W|| = %.3e", residual, RESIDUAL_FACTOR * w_norm)
    logger.debug("Smooth Feshbach: complement dim %d, condition %.3e", len(complement), condition)
    return FeshbachResult(
        F=OperatorMatrix(f_matrix, Domain.H_RED, basis, indices),
        hbar_condition=condition,
        solve_residual=residual,
        reliable=reliable,
    )


def sharp_feshbach(
    h: OperatorMatrix, p: OperatorMatrix, z: float, max_condition: float = MAX_CONDITION
) -> FeshbachResult:
    """F_P(H - z) = P(H-z)P - PHPbar (Pbar(H-z)Pbar)^-1 PbarHP on Ran P."""
    hm = h.entries
    selected = np.diag(p.entries).real > 0.5
    keep, comp = np.flatnonzero(selected), np.flatnonzero(~selected)
    f_matrix = hm[np.ix_(keep, keep)] - z * np.eye(len(keep))
    condition, residual = 1.0, 0.0
    if len(comp):
        block = hm[np.ix_(comp, comp)] - z * np.eye(len(comp))
        solution, condition, residual = _solve_refined(
            block, hm[np.ix_(comp, keep)], "Pbar(H - z)Pbar", max_condition
        )
        f_matrix = f_matrix - hm[np.ix_(keep, comp)] @ solution
    scale = max(h.op_norm(), 1.0)
    return FeshbachResult(
        F=OperatorMatrix(f_matrix, Domain.H_RED),
        hbar_condition=condition,
        solve_residual=residual,
        reliable=residual <= RESIDUAL_FACTOR * scale,
    )


def numerical_kernel(matrix: np.ndarray, tol: float = KERNEL_TOL):
    """
    Orthonormal basis (columns) of the near-kernel: right singular vectors with
    singular value below tol * ||matrix||. Also returns singular values and threshold.
    """
    if matrix.size == 0:
        return np.zeros((0, 0)), np.zeros(0), 0.0
    _, sv, vh = np.linalg.svd(matrix)
    threshold = tol * (sv[0] if sv[0] > 0.0 else 1.0)
    mask = sv < threshold
    return vh[mask].conj().T, sv, threshold


def kernel_correspondence(
    h: OperatorMatrix, f: OperatorMatrix, chi_rho: OperatorMatrix, tol: float = KERNEL_TOL
) -> KernelReport:
    """
    Compares ker H and ker F: dimensions, how injective chi_rho is on ker H, and
    principal angles between chi_rho(ker H) and ker F.
    """
    ker_h, sv_h, thr_h = numerical_kernel(h.entries, tol)
    ker_f, sv_f, thr_f = numerical_kernel(f.entries, tol)
    band = tuple(
        float(s) for sv, thr in ((sv_h, thr_h), (sv_f, thr_f)) for s in sv if thr / 100.0 <= s <= thr * 100.0 and s >= thr
    )
    margin = None
    angles = np.zeros(0)
    if ker_h.shape[1]:
        image = chi_rho.entries @ ker_h
        margin = float(np.linalg.svd(image, compute_uv=False).min())
        if ker_f.shape[1]:
            angles = scipy.linalg.subspace_angles(image, ker_f)
    if band:
        logger.info("Singular values inside the tolerance band: %s", band)
    return KernelReport(ker_h.shape[1], ker_f.shape[1], margin, angles, band, thr_h, thr_f)
