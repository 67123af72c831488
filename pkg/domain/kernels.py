"""
Kernel calculus for Wick-ordered operators on H_red.

Kernels w_{m,n}[r; k_1..k_m, k~_1..k~_n] are sampled on a uniform r-grid over
[0, 1] and on one radial node per ladder shell. Norms use closed-form shell
weights, so an r-independent kernel sampled at the shell midpoints is
integrated exactly whenever |w|^2 |k|^(-3-2mu) is a pure power.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np

from domain.errors import ShellAlignmentError
from domain.fock_space import (
    Domain,
    FockBasis,
    FrequencyLadder,
    OperatorMatrix,
    creation_op,
)
from utils.json_parser import tolerant_json_decode
from utils.logger_config import get_logger

logger = get_logger(__name__)

R_NODES = 33
FD_STEP = 1.0 / 64.0
DEFAULT_MAX_DEGREE = 2
SYMMETRY_TOL = 1e-12


def r_grid(nodes: int = R_NODES) -> np.ndarray:
    return np.linspace(0.0, 1.0, nodes)


def shell_weights(ladder: FrequencyLadder, mu: float) -> np.ndarray:
    """Integral of 4 pi r^2 dr / r^(3+2mu) over every shell."""
    if mu <= 0.0:
        raise ValueError(f"mu must be positive, got {mu}")
    inner, outer = ladder.shell_edges()
    return (2.0 * np.pi / mu) * (inner ** (-2.0 * mu) - outer ** (-2.0 * mu))


def shell_factors(ladder: FrequencyLadder) -> np.ndarray:
    """Per-leg quadrature factor (integral of |k|^-1 d^3k over the shell)^(1/2)."""
    inner, outer = ladder.shell_edges()
    return np.sqrt(2.0 * np.pi * (outer ** 2 - inner ** 2))


def symmetrize(grid: np.ndarray, m: int, n: int) -> np.ndarray:
    """Average over permutations of the creation axes and, separately, the annihilation axes."""
    creation_axes = list(range(1, 1 + m))
    annihilation_axes = list(range(1 + m, 1 + m + n))
    perms = [
        [0] + list(pc) + list(pa)
        for pc in itertools.permutations(creation_axes)
        for pa in itertools.permutations(annihilation_axes)
    ]
    return sum(np.transpose(grid, p) for p in perms) / len(perms)


@dataclass(frozen=True, eq=False)
class Kernel:
    m: int
    n: int
    ladder: FrequencyLadder
    r: np.ndarray
    grid: np.ndarray
    dgrid: np.ndarray
    mu: float

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        expected = (len(self.r),) + (self.ladder.modes,) * (self.m + self.n)
        for name in ("grid", "dgrid"):
            shape = np.shape(getattr(self, name))
            if shape != expected:
                raise ValueError(f"kernel {name} has shape {shape}, expected {expected}")
        scale = max(np.abs(self.grid).max(initial=0.0), 1.0)
        if np.abs(symmetrize(self.grid, self.m, self.n) - self.grid).max(initial=0.0) > SYMMETRY_TOL * scale:
            raise ValueError(f"kernel w_{self.m},{self.n} is not symmetric in its momentum arguments")
        if not np.isfinite(sharp_norm(self)):
            raise ValueError(f"kernel w_{self.m},{self.n} has infinite sharp norm")

    @property
    def degree(self) -> int:
        return self.m + self.n

    @classmethod
    def from_function(cls, m, n, ladder, func, mu, dfunc=None, r=None) -> "Kernel":
        """
        Samples func(r, k_1, ..., k_{m+n}) on the r-grid and the shell nodes.
        Without dfunc the r-derivative is taken by central differences.
        """
        r = r_grid() if r is None else np.asarray(r, dtype=float)
        nodes = ladder.node_radii()
        mesh = np.meshgrid(r, *([nodes] * (m + n)), indexing="ij")
        values = np.asarray(func(*mesh))
        grid = np.array(np.broadcast_to(values, mesh[0].shape), dtype=np.result_type(float, values))
        if dfunc is not None:
            dgrid = np.array(np.broadcast_to(dfunc(*mesh), mesh[0].shape), dtype=grid.dtype)
        else:
            ahead = func(mesh[0] + FD_STEP, *mesh[1:])
            behind = func(mesh[0] - FD_STEP, *mesh[1:])
            dgrid = np.array(np.broadcast_to((ahead - behind) / (2.0 * FD_STEP), mesh[0].shape), dtype=grid.dtype)
        return cls(m, n, ladder, r, grid, dgrid, mu)

    def scaled(self, factor) -> "Kernel":
        return Kernel(self.m, self.n, self.ladder, self.r, factor * self.grid, factor * self.dgrid, self.mu)

    def __add__(self, other: "Kernel") -> "Kernel":
        if (self.m, self.n) != (other.m, other.n) or self.ladder != other.ladder:
            raise ValueError("kernels of different shape cannot be added")
        return Kernel(self.m, self.n, self.ladder, self.r, self.grid + other.grid, self.dgrid + other.dgrid, self.mu)

    def adjoint(self) -> "Kernel":
        """Kernel of W_{m,n}[w]^dagger, i.e. w_{n,m} with conjugated values and swapped argument groups."""
        axes = [0] + list(range(1 + self.m, 1 + self.m + self.n)) + list(range(1, 1 + self.m))
        return Kernel(
            self.n, self.m, self.ladder, self.r,
            np.conj(np.transpose(self.grid, axes)), np.conj(np.transpose(self.dgrid, axes)), self.mu,
        )


@dataclass(frozen=True, eq=False)
class KernelFamily:
    entries: dict
    w00_r: np.ndarray
    w00_val: np.ndarray
    w00_dval: np.ndarray
    xi: float
    mu: float
    z: float | None = None
    max_degree: int = DEFAULT_MAX_DEGREE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.xi < 1.0:
            raise ValueError(f"xi must lie in (0, 1), got {self.xi}")
        for (m, n), kernel in self.entries.items():
            if m + n < 1 or m + n > self.max_degree:
                raise ValueError(f"entry ({m},{n}) outside 1 <= m+n <= {self.max_degree}")
            if (kernel.m, kernel.n) != (m, n):
                raise ValueError(f"entry ({m},{n}) holds kernel w_{kernel.m},{kernel.n}")

    def w00_at(self, energies) -> np.ndarray:
        return np.interp(energies, self.w00_r, self.w00_val)


@dataclass(frozen=True)
class PolydiscVerdict:
    eps: float
    delta: float
    slope_sup: float
    offset_sup: float
    family_sup: float

    @property
    def slope_margin(self) -> float:
        return self.eps - self.slope_sup

    @property
    def offset_margin(self) -> float:
        return self.delta - self.offset_sup

    @property
    def family_margin(self) -> float:
        return self.delta - self.family_sup

    @property
    def inside(self) -> bool:
        return min(self.slope_margin, self.offset_margin, self.family_margin) >= 0.0


def norm_mu(kernel: Kernel, values: np.ndarray | None = None) -> float:
    values = kernel.grid if values is None else values
    sup = np.abs(values).max(axis=0)
    if kernel.degree == 0:
        return float(sup)
    weights = shell_weights(kernel.ladder, kernel.mu)
    measure = np.ones(())
    for _ in range(kernel.degree):
        measure = np.multiply.outer(measure, weights)
    return float(np.sqrt(np.sum(sup ** 2 * measure)))


def sharp_norm(kernel: Kernel) -> float:
    return norm_mu(kernel) + norm_mu(kernel, kernel.dgrid)


def family_norm(family: KernelFamily) -> float:
    return float(sum(family.xi ** (-(m + n)) * sharp_norm(k) for (m, n), k in family.entries.items()))


def polydisc_check(samples, eps: float, delta: float) -> PolydiscVerdict:
    """
    Measures the three polydisc conditions over real sample points
    [(z, family), ...]: slope deviation of w00, offset |w00[z;0] + z| and the
    graded family norm.
    """
    slope, offset, fam = 0.0, 0.0, 0.0
    for z, family in samples:
        slope = max(slope, float(np.abs(family.w00_dval - 1.0).max()))
        offset = max(offset, abs(float(family.w00_at(0.0)) + z))
        fam = max(fam, family_norm(family))
    verdict = PolydiscVerdict(eps, delta, slope, offset, fam)
    logger.debug(
        "Polydisc D(%g, %g): slope %.3e, offset %.3e, family %.3e, inside=%s",
        eps, delta, slope, offset, fam, verdict.inside,
    )
    return verdict


def _check_alignment(kernel: Kernel, basis: FockBasis) -> None:
    if kernel.ladder != basis.ladder:
        raise ShellAlignmentError(
            f"kernel nodes on ladder {kernel.ladder} do not match basis ladder {basis.ladder}"
        )


def wick_quantize(kernel: Kernel, basis: FockBasis) -> OperatorMatrix:
    """
    1_I(H_f) sum over shells a^dag..a^dag w[H_f; shells] a..a 1_I(H_f), one
    quadrature factor per leg; H_f inside w is read on the intermediate state.
    """
    _check_alignment(kernel, basis)
    red = basis.red_indices()
    creators = [creation_op(basis, j).entries for j in range(basis.modes)]
    legs = shell_factors(basis.ladder)
    total = np.zeros((basis.dimension, basis.dimension), dtype=np.result_type(float, kernel.grid))
    for shells in itertools.product(range(basis.modes), repeat=kernel.degree):
        values = np.interp(basis.hf_eigs, kernel.r, kernel.grid[(slice(None),) + shells])
        if not np.any(values):
            continue
        term = np.diag(values)
        for j in shells[kernel.m:]:
            term = term @ creators[j].T
        for i in shells[: kernel.m]:
            term = creators[i] @ term
        total += np.prod(legs[list(shells)]) * term
    return OperatorMatrix(total[np.ix_(red, red)], Domain.H_RED, basis, red)


def assemble(family: KernelFamily, z: float, basis: FockBasis) -> OperatorMatrix:
    """H(w) = W_00[w00[z]] + sum of the Wick quantizations of the stored entries."""
    if family.z is not None and abs(family.z - z) > 1e-14:
        raise ValueError(f"family was evaluated at z={family.z}, not z={z}")
    red = basis.red_indices()
    total = np.diag(family.w00_at(basis.hf_eigs[red])).astype(complex)
    for kernel in family.entries.values():
        total = total + wick_quantize(kernel, basis).entries
    if not np.iscomplexobj(family.w00_val) and all(
        not np.iscomplexobj(k.grid) for k in family.entries.values()
    ):
        total = total.real
    return OperatorMatrix(total, Domain.H_RED, basis, red)


def free_family(ladder: FrequencyLadder, z: float, mu: float = 0.5, xi: float = 0.5) -> KernelFamily:
    r = r_grid()
    return KernelFamily({}, r, r - z, np.ones_like(r), xi, mu, z=z)


def random_family(
    rng: np.random.Generator,
    ladder: FrequencyLadder,
    max_degree: int = DEFAULT_MAX_DEGREE,
    mu: float = 0.5,
    xi: float = 0.5,
    scale: float = 0.05,
    z: float = 0.0,
) -> KernelFamily:
    """
    Seeded random family whose assembled operator is Hermitian: w_{n,m} is the
    adjoint kernel of w_{m,n}, w_{m,m} is self-adjoint and w00 is real.
    """
    r = r_grid()
    entries = {}
    for degree in range(1, max_degree + 1):
        for m in range(degree, -1, -1):
            n = degree - m
            if m < n:
                continue
            shape = (ladder.modes,) * degree
            base = rng.uniform(-1.0, 1.0, shape) + 1j * rng.uniform(-1.0, 1.0, shape)
            slope = rng.uniform(-1.0, 1.0, shape)
            grid = scale * (base[None] + np.multiply.outer(r, slope))
            dgrid = scale * np.broadcast_to(slope, grid.shape[1:])[None].repeat(len(r), axis=0)
            grid, dgrid = symmetrize(grid, m, n), symmetrize(dgrid.astype(complex), m, n)
            if m == n:
                axes = [0] + list(range(1 + m, 1 + 2 * m)) + list(range(1, 1 + m))
                grid = 0.5 * (grid + np.conj(np.transpose(grid, axes)))
                dgrid = 0.5 * (dgrid + np.conj(np.transpose(dgrid, axes)))
            kernel = Kernel(m, n, ladder, r, grid, dgrid, mu)
            entries[(m, n)] = kernel
            if m != n:
                entries[(n, m)] = kernel.adjoint()
    offset = rng.uniform(-0.1, 0.1)
    return KernelFamily(entries, r, r - z + offset, np.ones_like(r), xi, mu, z=z, max_degree=max_degree)


def family_from_flow_state(state) -> KernelFamily:
    """(0,0) part of a flow level as a kernel family: w00[z;r] = T_n(r)."""
    r = r_grid()
    return KernelFamily(
        {}, r, state.t_of(r), state.t_slope(r), xi=0.5, mu=0.5, z=state.z,
        meta={"level": state.level},
    )


def family_to_json(family: KernelFamily) -> dict:
    def _plain(values):
        return np.real(values).tolist()

    doc = {
        "mu": family.mu,
        "xi": family.xi,
        "w00": {"r": _plain(family.w00_r), "val": _plain(family.w00_val), "dval": _plain(family.w00_dval)},
        "entries": [],
    }
    for (m, n), kernel in sorted(family.entries.items()):
        item = {
            "m": m,
            "n": n,
            "shells": kernel.ladder.node_radii().tolist(),
            "values": _plain(kernel.grid),
            "dvalues": _plain(kernel.dgrid),
        }
        if np.iscomplexobj(kernel.grid) and np.any(np.imag(kernel.grid)):
            item["imag"] = np.imag(kernel.grid).tolist()
            item["dimag"] = np.imag(kernel.dgrid).tolist()
        doc["entries"].append(item)
    return doc


def family_from_json(document, ladder: FrequencyLadder, z: float | None = None) -> KernelFamily:
    """Reads the documented kernel-family schema from a dict or JSON text."""
    doc = tolerant_json_decode(document) if isinstance(document, str) else document
    if doc is None:
        raise ValueError("kernel family document could not be decoded")
    mu, xi = float(doc["mu"]), float(doc["xi"])
    r = np.asarray(doc["w00"]["r"], dtype=float)
    val = np.asarray(doc["w00"]["val"], dtype=float)
    dval = doc["w00"].get("dval")
    dval = np.gradient(val, r) if dval is None else np.asarray(dval, dtype=float)
    entries = {}
    nodes = ladder.node_radii()
    for item in doc.get("entries", []):
        m, n = int(item["m"]), int(item["n"])
        shells = np.asarray(item["shells"], dtype=float)
        if shells.shape != nodes.shape or not np.allclose(shells, nodes, rtol=1e-12, atol=0.0):
            raise ShellAlignmentError(f"entry ({m},{n}) shells do not match the ladder nodes")
        grid = np.asarray(item["values"], dtype=float)
        if "imag" in item:
            grid = grid + 1j * np.asarray(item["imag"], dtype=float)
        if "dvalues" in item:
            dgrid = np.asarray(item["dvalues"], dtype=float)
            if "dimag" in item:
                dgrid = dgrid + 1j * np.asarray(item["dimag"], dtype=float)
        else:
            dgrid = np.gradient(grid, r, axis=0)
        entries[(m, n)] = Kernel(m, n, ladder, r, grid, dgrid, mu)
    max_degree = max([DEFAULT_MAX_DEGREE] + [m + n for m, n in entries])
    logger.info("Loaded kernel family with %d entries (mu=%g, xi=%g)", len(entries), mu, xi)
    return KernelFamily(entries, r, val, dval, xi, mu, z=z, max_degree=max_degree)
