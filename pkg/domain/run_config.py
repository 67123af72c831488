"""
Validated, immutable view of the run settings plus the factories that turn it
into engine objects.
"""
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from domain import __version__
from domain.errors import ConfigError
from domain.fock_space import CutoffPair, FockBasis, FrequencyLadder, build_basis
from domain.models import FORM_FACTORS, SpinBosonParams
from domain.rg_flow import CONVENTIONS, FlowConfig
from utils.json_parser import canonical_dumps

OUTPUT_DIR_ENV = "RGFLOW_OUTPUT_DIR"
SWEEP_AXES = {"g": ("model", "g"), "rho": ("model", "rho"), "J": ("model", "modes"), "max_total": ("model", "max_total")}
HASHED_SECTIONS = ("seed", "model", "fock", "flow", "verify")


@dataclass(frozen=True)
class ModelSection:
    g: float = 0.05
    rho: float = 0.5
    omega0: float = 1.0
    modes: int = 8
    max_total: int = 3
    max_per_mode: int = 2
    form_factor: str = "unit_ball"
    form_factor_scale: float = 1.0
    g_max: float = 0.2


@dataclass(frozen=True)
class FockSection:
    dimension_cap: int = 20000
    dense_cap: int = 4096
    allow_boundary_ties: bool = True


@dataclass(frozen=True)
class FlowSection:
    n_max: int = 6
    root_tol: float = 1e-12
    cauchy_tol: float = 1e-9
    leak_budget: float = 1.0
    sign_convention: str = "minus"
    tower_levels: tuple = (1,)
    max_expansions: int = 12


@dataclass(frozen=True)
class VerifySection:
    telescoping_points: int = 100_000
    telescoping_max_n: int = 6
    telescoping_rhos: tuple = (0.4, 0.5)
    feshbach_instances: int = 50
    norm_families: int = 100
    kernel_tol: float = 1e-7
    svd_tol: float = 1e-10


@dataclass(frozen=True)
class OutputSection:
    directory: str = "runs"
    formats: tuple = ("csv", "json")
    workers: int = 4


@dataclass(frozen=True)
class LedgerSection:
    enabled: bool = True
    path: str = "runs.sqlite3"


SECTIONS = {
    "model": ModelSection,
    "fock": FockSection,
    "flow": FlowSection,
    "verify": VerifySection,
    "output": OutputSection,
    "ledger": LedgerSection,
}


def _positive(value):
    return value > 0


def _non_negative(value):
    return value >= 0


CHECKS = {
    "model.rho": (lambda v: 0.0 < v < 0.75, "must lie in (0, 3/4)"),
    "model.omega0": (lambda v: 0.0 < v <= 1.0, "must lie in (0, 1]"),
    "model.modes": (_positive, "must be positive"),
    "model.max_total": (_positive, "must be at least 1"),
    "model.max_per_mode": (_positive, "must be at least 1"),
    "model.form_factor": (lambda v: v in FORM_FACTORS, f"must be one of {sorted(FORM_FACTORS)}"),
    "model.form_factor_scale": (_positive, "must be positive"),
    "model.g_max": (_positive, "must be positive"),
    "fock.dimension_cap": (_positive, "must be positive"),
    "fock.dense_cap": (_positive, "must be positive"),
    "flow.n_max": (_positive, "must be positive"),
    "flow.root_tol": (_positive, "must be positive"),
    "flow.cauchy_tol": (_positive, "must be positive"),
    "flow.leak_budget": (_positive, "must be positive"),
    "flow.sign_convention": (lambda v: v in CONVENTIONS, f"must be one of {list(CONVENTIONS)}"),
    "flow.tower_levels": (lambda v: len(v) > 0 and all(n >= 1 for n in v), "must list levels >= 1"),
    "flow.max_expansions": (_positive, "must be positive"),
    "verify.telescoping_points": (_positive, "must be positive"),
    "verify.telescoping_max_n": (_non_negative, "must be non-negative"),
    "verify.telescoping_rhos": (lambda v: len(v) > 0 and all(0.0 < r < 0.75 for r in v), "must lie in (0, 3/4)"),
    "verify.feshbach_instances": (_positive, "must be positive"),
    "verify.norm_families": (_positive, "must be positive"),
    "verify.kernel_tol": (_positive, "must be positive"),
    "verify.svd_tol": (_positive, "must be positive"),
    "output.formats": (lambda v: set(v) <= {"csv", "json"}, "must be a subset of [csv, json]"),
    "output.workers": (_positive, "must be positive"),
}


def _coerce(name: str, value, default):
    """Coerces a raw settings value to the type of the section default."""
    kind = type(default)
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered not in ("true", "false"):
                    raise ValueError(value)
                return lowered == "true"
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if isinstance(default, tuple):
            if isinstance(value, (str, bytes)) or not hasattr(value, "__iter__"):
                raise ValueError(value)
            item = type(default[0]) if default else str
            return tuple(item(v) for v in value)
        if kind is int:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError(value)
            return int(float(value))
        if kind is float:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected {kind.__name__}, got {value!r}") from None


def _lower_keys(mapping) -> dict:
    return {str(k).lower(): v for k, v in dict(mapping or {}).items()}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 20240601
    model: ModelSection = field(default_factory=ModelSection)
    fock: FockSection = field(default_factory=FockSection)
    flow: FlowSection = field(default_factory=FlowSection)
    verify: VerifySection = field(default_factory=VerifySection)
    output: OutputSection = field(default_factory=OutputSection)
    ledger: LedgerSection = field(default_factory=LedgerSection)
    log_level: str = "INFO"

    @classmethod
    def from_dict(cls, document: dict) -> "RunConfig":
        document = _lower_keys(document)
        known = set(SECTIONS) | {"seed", "logging"}
        for key in document:
            if key not in known:
                raise ConfigError(key, "unknown section")
        sections = {}
        for name, section_cls in SECTIONS.items():
            raw = _lower_keys(document.get(name))
            defaults = section_cls()
            names = {f.name for f in fields(section_cls)}
            for key in raw:
                if key not in names:
                    raise ConfigError(f"{name}.{key}", "unknown field")
            values = {}
            for f in fields(section_cls):
                dotted = f"{name}.{f.name}"
                default = getattr(defaults, f.name)
                value = _coerce(dotted, raw[f.name], default) if f.name in raw else default
                check = CHECKS.get(dotted)
                if check and not check[0](value):
                    raise ConfigError(dotted, f"{check[1]}, got {value!r}")
                values[f.name] = value
            sections[name] = section_cls(**values)
        seed = _coerce("seed", document.get("seed", cls.seed), cls.seed)
        level = str(_lower_keys(document.get("logging")).get("level", "INFO")).upper()
        config = cls(seed=seed, log_level=level, **sections)
        config.validate()
        return config

    @classmethod
    def from_settings(cls, settings) -> "RunConfig":
        document = {name: settings.get(name, {}) for name in (*SECTIONS, "logging")}
        if settings.get("seed") is not None:
            document["seed"] = settings.get("seed")
        config = cls.from_dict(document)
        override = os.environ.get(OUTPUT_DIR_ENV)
        if override:
            config = replace(config, output=replace(config.output, directory=override))
        return config

    def validate(self) -> None:
        if self.flow.n_max > self.model.modes - 2:
            raise ConfigError("flow.n_max", f"must not exceed model.modes - 2 = {self.model.modes - 2}, got {self.flow.n_max}")
        if any(n > self.flow.n_max + 1 for n in self.flow.tower_levels):
            raise ConfigError("flow.tower_levels", f"levels must not exceed n_max + 1 = {self.flow.n_max + 1}")

    def to_dict(self) -> dict:
        document = {name: _plain(asdict(getattr(self, name))) for name in SECTIONS}
        document["seed"] = self.seed
        document["logging"] = {"level": self.log_level}
        return document

    @property
    def config_hash(self) -> str:
        document = self.to_dict()
        hashed = {name: document[name] for name in HASHED_SECTIONS}
        return hashlib.sha256(canonical_dumps(hashed).encode()).hexdigest()

    @property
    def run_id(self) -> str:
        return self.config_hash[:16]

    def provenance(self, command: str) -> dict:
        return {"run_id": self.run_id, "config_hash": self.config_hash, "version": __version__, "command": command}

    def with_axis(self, axis: str, value) -> "RunConfig":
        """Copy with one sweep axis replaced, validated like a fresh config."""
        if axis not in SWEEP_AXES:
            raise ConfigError("sweep.axis", f"must be one of {sorted(SWEEP_AXES)}, got {axis!r}")
        section, key = SWEEP_AXES[axis]
        document = self.to_dict()
        document[section][key] = value
        if axis == "J":
            document["flow"]["n_max"] = min(document["flow"]["n_max"], int(value) - 2)
        return RunConfig.from_dict(document)

    def ladder(self) -> FrequencyLadder:
        return FrequencyLadder(self.model.rho, self.model.modes, self.model.omega0)

    def basis(self) -> FockBasis:
        return build_basis(self.ladder(), self.model.max_total, self.model.max_per_mode, self.fock.dimension_cap)

    def params(self, ladder: FrequencyLadder | None = None) -> SpinBosonParams:
        return SpinBosonParams(
            g=self.model.g,
            ladder=ladder or self.ladder(),
            max_total=self.model.max_total,
            max_per_mode=self.model.max_per_mode,
            form_factor=self.model.form_factor,
            form_factor_scale=self.model.form_factor_scale,
            g_max=self.model.g_max,
        )

    def flow_config(self) -> FlowConfig:
        return FlowConfig(
            rho=self.model.rho,
            n_max=self.flow.n_max,
            root_tol=self.flow.root_tol,
            cauchy_tol=self.flow.cauchy_tol,
            leak_budget=self.flow.leak_budget,
            sign_convention=self.flow.sign_convention,
            tower_levels=self.flow.tower_levels,
            max_expansions=self.flow.max_expansions,
        )

    def pair(self) -> CutoffPair:
        return CutoffPair()


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


def parse_overrides(pairs) -> dict:
    """["flow.n_max=5", 'model.form_factor="exponential"'] -> {"flow.n_max": 5, ...}."""
    overrides = {}
    for pair in pairs or []:
        key, sep, raw = pair.partition("=")
        key = key.strip()
        if not sep or "." not in key and key != "seed":
            raise ConfigError("--set", f"expected section.key=value, got {pair!r}")
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    return overrides
