"""Scenario configuration: strict JSON schema, full-report validation.

Configs are plain JSON objects. Unknown keys are rejected, and validation
collects every violated invariant before reporting so a bad file is fixed
in one pass. Values stay as plain Python types here; the scenario runner
converts to numpy/domain objects when it builds the run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "ScenarioConfig",
    "ConfigError",
    "load_config",
    "write_config",
    "config_from_dict",
    "config_to_dict",
    "bundled_config_path",
]

SCENARIOS = ("arbitrary_set", "online_synthesis", "noisy_state", "custom")
POLICIES = ("hover", "waypoint", "boundary_push", "route")
EVAL_MODES = ("deterministic", "noisy")
BARRIER_SOURCES = ("gp", "disk_cbf")
GENERATOR_KINDS = ("uniform", "disk_cbf")
MAX_TICKS = 10 ** 6


class ConfigError(ValueError):
    """Parse or validation failure; message lists every violation found."""


@dataclass
class GcbfSection:
    mean_weight: float = 1.0
    variance_weight: float = 1.0
    tau: float = 0.0
    capacity: int = 300


@dataclass
class GainsSection:
    # either poles or explicit (k0, k1); poles win when both appear
    poles: list | None = None
    k0: float | None = None
    k1: float | None = None
    alpha_gain: float = 1.0


@dataclass
class DynamicsSection:
    mass: float = 0.033
    gravity: float = 9.81


@dataclass
class WorldSection:
    obstacles: list = field(default_factory=list)  # [{"center": [x, y], "radius": r}]
    sample_noise_std: float = 0.0


@dataclass
class NoiseSection:
    position_cov: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    seed: int = 0


@dataclass
class HyperSection:
    length_scales: list = field(default_factory=lambda: [0.1, 0.1])
    signal_variance: float = 1.0
    noise_variance: float = 1e-4


@dataclass
class DatasetSourceSection:
    kind: str = "generator"  # inline | file | generator
    inputs: list | None = None
    targets: list | None = None
    path: str | None = None
    generator: str = "uniform"  # uniform | disk_cbf
    n: int = 200
    low: float = -1.0
    high: float = 2.0
    noise_std: float = 0.03


@dataclass
class NominalSection:
    policy: str = "hover"
    params: dict = field(default_factory=dict)


@dataclass
class FitSection:
    enabled: bool = False
    iterations: int = 60
    restarts: int = 3
    refit_every: int = 0  # refit after this many accepted samples; 0 = never


@dataclass
class ScenarioConfig:
    scenario: str = "custom"
    dt: float = 0.01
    horizon: float = 10.0
    seed: int = 0
    gcbf: GcbfSection = field(default_factory=GcbfSection)
    gains: GainsSection = field(default_factory=GainsSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    world: WorldSection | None = None
    noise: NoiseSection | None = None
    dataset_source: DatasetSourceSection | None = None
    nominal: NominalSection = field(default_factory=NominalSection)
    hyperparameters: HyperSection = field(default_factory=HyperSection)
    fit: FitSection = field(default_factory=FitSection)
    eval_mode: str = "deterministic"
    barrier_source: str = "gp"
    domain: list = field(default_factory=lambda: [[-0.35, 0.35], [-0.35, 0.35]])
    start: list | None = None  # [x, y, z]; None = scenario picks (argmax h / origin)
    disk_radius: float = 0.35
    ingest: bool = False
    grid_resolution: int = 100
    input_limit: float | None = None  # per-axis actuator saturation [m/s^2]
    output_dir: str | None = None


_SECTION_TYPES = {
    "gcbf": GcbfSection,
    "gains": GainsSection,
    "dynamics": DynamicsSection,
    "world": WorldSection,
    "noise": NoiseSection,
    "dataset_source": DatasetSourceSection,
    "nominal": NominalSection,
    "hyperparameters": HyperSection,
    "fit": FitSection,
}
_OPTIONAL_SECTIONS = {"world", "noise", "dataset_source"}


def _build_section(cls, data, errors, prefix):
    if not isinstance(data, dict):
        errors.append(f"{prefix}: expected an object")
        return cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    for key in sorted(unknown):
        errors.append(f"{prefix}.{key}: unknown key")
    kwargs = {k: v for k, v in data.items() if k in names}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"{prefix}: {exc}")
        return cls()


def config_from_dict(data: dict) -> ScenarioConfig:
    """Build and validate a ScenarioConfig; raises ConfigError listing issues."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object")
    top_names = {f.name for f in dataclasses.fields(ScenarioConfig)}
    for key in sorted(set(data) - top_names):
        errors.append(f"{key}: unknown key")

    kwargs = {}
    for key, value in data.items():
        if key not in top_names:
            continue
        if key in _SECTION_TYPES:
            if value is None and key in _OPTIONAL_SECTIONS:
                kwargs[key] = None
            else:
                kwargs[key] = _build_section(_SECTION_TYPES[key], value, errors, key)
        else:
            kwargs[key] = value
    try:
        cfg = ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc

    errors.extend(_validate(cfg))
    if errors:
        raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(errors))
    return cfg


def _validate(cfg: ScenarioConfig) -> list[str]:
    errs = []
    if cfg.scenario not in SCENARIOS:
        errs.append(f"scenario: must be one of {SCENARIOS}, got {cfg.scenario!r}")
    if not isinstance(cfg.dt, (int, float)) or not 0.0 < cfg.dt <= 0.1:
        errs.append(f"dt: must lie in (0, 0.1], got {cfg.dt!r}")
    if not isinstance(cfg.horizon, (int, float)) or cfg.horizon <= 0.0:
        errs.append(f"horizon: must be positive, got {cfg.horizon!r}")
    if isinstance(cfg.dt, (int, float)) and isinstance(cfg.horizon, (int, float)):
        if cfg.dt > 0 and cfg.horizon / cfg.dt > MAX_TICKS:
            errs.append(f"horizon/dt: exceeds {MAX_TICKS} ticks")
    if not isinstance(cfg.seed, int):
        errs.append("seed: must be an integer")

    g = cfg.gcbf
    if g.variance_weight < 0:
        errs.append("gcbf.variance_weight: must be non-negative")
    if g.tau < 0:
        errs.append("gcbf.tau: must be non-negative")
    if g.capacity <= 0:
        errs.append("gcbf.capacity: must be positive")

    gains = cfg.gains
    if gains.poles is not None:
        if len(gains.poles) != 2 or any(p >= 0 for p in gains.poles):
            errs.append("gains.poles: need two strictly negative poles")
    elif gains.k0 is None or gains.k1 is None:
        errs.append("gains: provide either poles or both k0 and k1")
    elif gains.k0 <= 0 or gains.k1 <= 0:
        errs.append("gains.k0/k1: must be positive (Hurwitz)")
    if gains.alpha_gain <= 0:
        errs.append("gains.alpha_gain: must be positive")

    if cfg.dynamics.mass <= 0 or cfg.dynamics.gravity <= 0:
        errs.append("dynamics: mass and gravity must be positive")

    if cfg.world is not None:
        for i, obs in enumerate(cfg.world.obstacles):
            if not isinstance(obs, dict) or set(obs) != {"center", "radius"}:
                errs.append(f"world.obstacles[{i}]: need exactly 'center' and 'radius'")
            elif len(obs["center"]) != 2 or obs["radius"] <= 0:
                errs.append(f"world.obstacles[{i}]: 2D center and positive radius")
        if cfg.world.sample_noise_std < 0:
            errs.append("world.sample_noise_std: must be non-negative")

    if cfg.noise is not None:
        pc = cfg.noise.position_cov
        if not (isinstance(pc, list) and len(pc) in (3,) or _is_3x3(pc)):
            errs.append("noise.position_cov: give 3 diagonal variances or a 3x3 matrix")
        elif len(pc) == 3 and not _is_3x3(pc) and any(v < 0 for v in pc):
            errs.append("noise.position_cov: variances must be non-negative")

    ds = cfg.dataset_source
    if ds is not None:
        if ds.kind not in ("inline", "file", "generator"):
            errs.append(f"dataset_source.kind: unknown kind {ds.kind!r}")
        elif ds.kind == "inline":
            if ds.inputs is None or ds.targets is None:
                errs.append("dataset_source: inline needs inputs and targets")
            elif len(ds.inputs) != len(ds.targets):
                errs.append("dataset_source: inputs and targets lengths differ")
        elif ds.kind == "file":
            if not ds.path:
                errs.append("dataset_source: file kind needs a path")
            elif not Path(ds.path).exists():
                errs.append(f"dataset_source.path: {ds.path} does not exist")
        elif ds.kind == "generator":
            if ds.generator not in GENERATOR_KINDS:
                errs.append(f"dataset_source.generator: unknown {ds.generator!r}")
            if ds.n <= 0:
                errs.append("dataset_source.n: must be positive")
            if ds.generator == "uniform" and not ds.low < ds.high:
                errs.append("dataset_source: low must be below high")
            if ds.generator == "disk_cbf" and ds.noise_std < 0:
                errs.append("dataset_source.noise_std: must be non-negative")

    if cfg.nominal.policy not in POLICIES:
        errs.append(f"nominal.policy: must be one of {POLICIES}")
    if cfg.eval_mode not in EVAL_MODES:
        errs.append(f"eval_mode: must be one of {EVAL_MODES}")
    if cfg.barrier_source not in BARRIER_SOURCES:
        errs.append(f"barrier_source: must be one of {BARRIER_SOURCES}")

    hp = cfg.hyperparameters
    if not hp.length_scales or any(v <= 0 for v in hp.length_scales):
        errs.append("hyperparameters.length_scales: all entries must be positive")
    if hp.signal_variance <= 0:
        errs.append("hyperparameters.signal_variance: must be positive")
    if hp.noise_variance < 0:
        errs.append("hyperparameters.noise_variance: must be non-negative")

    if cfg.fit.iterations <= 0:
        errs.append("fit.iterations: must be positive")
    if cfg.fit.refit_every < 0:
        errs.append("fit.refit_every: must be non-negative")

    if len(cfg.domain) != 2 or any(len(ax) != 2 or ax[0] >= ax[1] for ax in cfg.domain):
        errs.append("domain: expected [[x_lo, x_hi], [y_lo, y_hi]] with lo < hi")
    if cfg.start is not None and len(cfg.start) != 3:
        errs.append("start: must be [x, y, z]")
    if cfg.disk_radius <= 0:
        errs.append("disk_radius: must be positive")
    if cfg.grid_resolution < 2:
        errs.append("grid_resolution: must be at least 2")
    if cfg.input_limit is not None and cfg.input_limit <= 0:
        errs.append("input_limit: must be positive when set")
    return errs


def _is_3x3(pc) -> bool:
    return (
        isinstance(pc, list)
        and len(pc) == 3
        and all(isinstance(r, list) and len(r) == 3 for r in pc)
    )


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> ScenarioConfig:
    """Parse and validate a JSON config file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text()
    if not text.strip():
        raise ConfigError(f"{path}: empty config file")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(data)


def write_config(cfg: ScenarioConfig, path) -> None:
    """Write a config as JSON, atomically; load_config(write_config(c)) == c."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def bundled_config_path(name: str) -> Path:
    """Path of a config shipped with the package (e.g. 'scenario_a')."""
    p = Path(__file__).parent / "configs" / f"{name}.json"
    if not p.exists():
        names = sorted(q.stem for q in p.parent.glob("*.json"))
        raise FileNotFoundError(f"no bundled config {name!r}; available: {names}")
    return p
